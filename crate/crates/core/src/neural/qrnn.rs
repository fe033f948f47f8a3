//! Quasi-recurrent layer: convolutional gates over a short window of
//! timesteps followed by elementwise fo-pooling.
//!
//! For window `w`, the gate input at step `t` is the concatenation of
//! `x_{t-w+1} .. x_t` (zero-padded past the sequence start):
//! `z = tanh(W_z·x̃ + b_z)`, `f = σ(W_f·x̃ + b_f)`, `o = σ(W_o·x̃ + b_o)`,
//! then `c_t = f_t⊙c_{t-1} + (1−f_t)⊙z_t` and `h_t = o_t⊙c_t`.

use rand_chacha::ChaCha8Rng;

use super::graph::{Graph, NodeId};
use super::tensor::Tensor;
use super::NeuralError;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct QrnnLayerConfig {
    pub input_size: usize,
    pub hidden_size: usize,
    pub window: usize,
    pub zoneout: f64,
}

impl QrnnLayerConfig {
    pub fn new(input_size: usize, hidden_size: usize, window: usize) -> Self {
        Self {
            input_size,
            hidden_size,
            window,
            zoneout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.input_size == 0 || self.hidden_size == 0 {
            return Err(NeuralError::InvalidConfig(
                "qrnn sizes must be positive".into(),
            ));
        }
        if !(self.window == 1 || self.window == 2) {
            return Err(NeuralError::InvalidConfig(format!(
                "qrnn window must be 1 or 2, got {}",
                self.window
            )));
        }
        if !(0.0..1.0).contains(&self.zoneout) {
            return Err(NeuralError::InvalidConfig(format!(
                "zoneout must be in [0,1), got {}",
                self.zoneout
            )));
        }
        Ok(())
    }

    /// Gate weight shape: `[window·input, hidden]`.
    pub fn weight_shape(&self) -> [usize; 2] {
        [self.window * self.input_size, self.hidden_size]
    }
}

/// Gate parameters already inserted into a graph.
#[derive(Debug, Clone, Copy)]
pub struct QrnnGateNodes {
    pub wz: NodeId,
    pub wf: NodeId,
    pub wo: NodeId,
    pub bz: NodeId,
    pub bf: NodeId,
    pub bo: NodeId,
}

/// Per-layer training knobs threaded through the graph build.
pub struct QrnnRuntime<'a, T> {
    /// DropConnect rate applied to the gate weight matrices.
    pub weight_drop: f64,
    pub rng: Option<&'a mut ChaCha8Rng>,
    /// Row mask (`steps*batch`) — zero rows are padding.
    pub mask: Option<&'a [T]>,
}

impl<T> Default for QrnnRuntime<'_, T> {
    fn default() -> Self {
        Self {
            weight_drop: 0.0,
            rng: None,
            mask: None,
        }
    }
}

/// Build one QRNN layer over a time-major `[steps*batch, input]` node.
/// Returns `(h, c)` sequence nodes, both `[steps*batch, hidden]`.
pub fn qrnn_layer<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &QrnnLayerConfig,
    gates: &QrnnGateNodes,
    x: NodeId,
    c0: NodeId,
    steps: usize,
    batch: usize,
    rt: &mut QrnnRuntime<'_, T>,
) -> Result<(NodeId, NodeId), NeuralError> {
    cfg.validate()?;
    let gate_in = if cfg.window == 2 {
        let lagged = g.shift_rows(x, batch)?;
        g.concat_cols(lagged, x)?
    } else {
        x
    };

    let mut weight = |g: &mut Graph<T>, w: NodeId| -> Result<NodeId, NeuralError> {
        if g.is_train() && rt.weight_drop > 0.0 {
            let rng = rt
                .rng
                .as_deref_mut()
                .ok_or_else(|| NeuralError::InvalidConfig("weight drop needs an rng".into()))?;
            g.dropout(w, rt.weight_drop, rng)
        } else {
            Ok(w)
        }
    };

    let wz = weight(g, gates.wz)?;
    let wf = weight(g, gates.wf)?;
    let wo = weight(g, gates.wo)?;

    let z_lin = g.matmul(gate_in, wz)?;
    let z_lin = g.add_row(z_lin, gates.bz)?;
    let z = g.tanh(z_lin)?;

    let f_lin = g.matmul(gate_in, wf)?;
    let f_lin = g.add_row(f_lin, gates.bf)?;
    let mut f = g.sigmoid(f_lin)?;

    if g.is_train() && cfg.zoneout > 0.0 {
        // Zoneout drops state updates: f ← 1 − dropout(1 − f).
        let rng = rt
            .rng
            .as_deref_mut()
            .ok_or_else(|| NeuralError::InvalidConfig("zoneout needs an rng".into()))?;
        let inv = g.one_minus(f)?;
        let dropped = g.dropout(inv, cfg.zoneout, rng)?;
        f = g.one_minus(dropped)?;
    }

    let o_lin = g.matmul(gate_in, wo)?;
    let o_lin = g.add_row(o_lin, gates.bo)?;
    let o = g.sigmoid(o_lin)?;

    let c = g.fo_pool(f, z, c0, steps, batch, rt.mask)?;
    let h = g.mul(o, c)?;
    Ok((h, c))
}

/// Plain gate weight tensors for the functional entry point.
#[derive(Debug, Clone)]
pub struct QrnnWeightSet<T> {
    pub wz: Tensor<T>,
    pub wf: Tensor<T>,
    pub wo: Tensor<T>,
    pub bz: Tensor<T>,
    pub bf: Tensor<T>,
    pub bo: Tensor<T>,
}

/// Run one QRNN layer over a single sequence of input vectors, returning the
/// per-step outputs and the final pooled state.
pub fn qrnn_forward<T: Scalar>(
    cfg: &QrnnLayerConfig,
    weights: &QrnnWeightSet<T>,
    input: &[Vec<T>],
    c0: Option<&[T]>,
) -> Result<(Vec<Vec<T>>, Vec<T>), NeuralError> {
    cfg.validate()?;
    let steps = input.len();
    if steps == 0 {
        return Err(NeuralError::shape("qrnn_forward", "empty input sequence"));
    }
    for (t, v) in input.iter().enumerate() {
        if v.len() != cfg.input_size {
            return Err(NeuralError::shape(
                "qrnn_forward",
                format!("step {t} has {} features, expected {}", v.len(), cfg.input_size),
            ));
        }
    }
    if weights.wz.shape() != cfg.weight_shape()
        || weights.wf.shape() != cfg.weight_shape()
        || weights.wo.shape() != cfg.weight_shape()
    {
        return Err(NeuralError::shape(
            "qrnn_forward",
            format!(
                "gate weights {:?} do not match config {:?}",
                weights.wz.shape(),
                cfg.weight_shape()
            ),
        ));
    }
    let c0 = match c0 {
        Some(c) if c.len() != cfg.hidden_size => {
            return Err(NeuralError::shape(
                "qrnn_forward",
                format!("c0 has {} entries, expected {}", c.len(), cfg.hidden_size),
            ))
        }
        Some(c) => c.to_vec(),
        None => vec![T::zero(); cfg.hidden_size],
    };

    let mut g = Graph::eval();
    let flat: Vec<T> = input.iter().flatten().copied().collect();
    let x = g.leaf(Tensor::new(vec![steps, cfg.input_size], flat))?;
    let c0_node = g.leaf(Tensor::new(vec![1, cfg.hidden_size], c0))?;
    let gates = QrnnGateNodes {
        wz: g.leaf(weights.wz.clone())?,
        wf: g.leaf(weights.wf.clone())?,
        wo: g.leaf(weights.wo.clone())?,
        bz: g.leaf(weights.bz.clone())?,
        bf: g.leaf(weights.bf.clone())?,
        bo: g.leaf(weights.bo.clone())?,
    };
    let (h, c) = qrnn_layer(
        &mut g,
        cfg,
        &gates,
        x,
        c0_node,
        steps,
        1,
        &mut QrnnRuntime::default(),
    )?;
    let hv = g.value(h);
    let outputs = (0..steps)
        .map(|t| hv.data()[t * cfg.hidden_size..(t + 1) * cfg.hidden_size].to_vec())
        .collect();
    let cv = g.value(c);
    let c_last = cv.data()[(steps - 1) * cfg.hidden_size..].to_vec();
    Ok((outputs, c_last))
}
