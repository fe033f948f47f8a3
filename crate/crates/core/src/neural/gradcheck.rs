//! Central finite-difference gradient checking in double precision.

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use super::NeuralError;

/// Worst relative error found across every checked element.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_input: usize,
    pub worst_element: usize,
    pub checked: usize,
}

pub const GRAD_CHECK_H: f64 = 1e-5;

/// Compare analytic gradients of `build` against central finite differences.
///
/// `build` must construct the same computation on every call (any stochastic
/// op must derive its masks deterministically inside the closure); it maps
/// leaf nodes created from `inputs` to a scalar loss node.
pub fn grad_check<F>(inputs: &[Tensor<f64>], build: F) -> Result<GradCheckReport, NeuralError>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId, NeuralError>,
{
    let run = |values: &[Tensor<f64>]| -> Result<(f64, Vec<Vec<f64>>), NeuralError> {
        let mut g = Graph::train();
        let ids: Vec<NodeId> = values
            .iter()
            .map(|v| g.leaf(v.clone()))
            .collect::<Result<_, _>>()?;
        let loss = build(&mut g, &ids)?;
        let loss_val = g.value(loss).item();
        g.backward(loss)?;
        let grads = ids.iter().map(|&id| g.grad(id).data().to_vec()).collect();
        Ok((loss_val, grads))
    };

    let (_, analytic) = run(inputs)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_element: 0,
        checked: 0,
    };
    let mut perturbed: Vec<Tensor<f64>> = inputs.to_vec();
    for (pi, input) in inputs.iter().enumerate() {
        for e in 0..input.len() {
            let original = input.data()[e];

            perturbed[pi].data_mut()[e] = original + GRAD_CHECK_H;
            let (loss_plus, _) = run(&perturbed)?;
            perturbed[pi].data_mut()[e] = original - GRAD_CHECK_H;
            let (loss_minus, _) = run(&perturbed)?;
            perturbed[pi].data_mut()[e] = original;

            let numeric = (loss_plus - loss_minus) / (2.0 * GRAD_CHECK_H);
            let a = analytic[pi][e];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst_input = pi;
                report.worst_element = e;
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn linear_layer_gradients_check_out() {
        let mut rng = stream(11, "gc-linear", 0);
        let w = Tensor::uniform(&mut rng, &[4, 3], -1.0, 1.0);
        let b = Tensor::uniform(&mut rng, &[3], -1.0, 1.0);
        let x = Tensor::uniform(&mut rng, &[2, 4], -1.0, 1.0);
        let report = grad_check(&[w, b, x], |g, ids| {
            let y = g.matmul(ids[2], ids[0])?;
            let y = g.add_row(y, ids[1])?;
            let y = g.tanh(y)?;
            g.sum_all(y)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }

    #[test]
    fn dropout_with_fixed_mask_checks_out() {
        let mut rng = stream(12, "gc-drop", 0);
        let x = Tensor::uniform(&mut rng, &[3, 5], -1.0, 1.0);
        let mask: Vec<f64> = (0..15).map(|i| if i % 3 == 0 { 0.0 } else { 1.5 }).collect();
        let report = grad_check(&[x], move |g, ids| {
            let y = g.dropout_with_mask(ids[0], mask.clone())?;
            let y = g.sigmoid(y)?;
            g.sum_all(y)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");
    }
}
