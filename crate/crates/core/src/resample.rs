//! SMOTE: synthetic minority oversampling over real-valued feature vectors.
//!
//! Each synthetic point lies on the segment between a minority point and one
//! of its k nearest minority neighbors; majority points never influence the
//! synthesis. Output counts are exactly balanced.

use rand::Rng;
use thiserror::Error;

use crate::rng::stream;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ResampleError {
    #[error("both classes must be present")]
    SingleClass,
    #[error("minority class has {minority} points; need more than k = {k}")]
    ClassTooSmall { minority: usize, k: usize },
    #[error("points and labels disagree: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy)]
pub struct SmoteConfig {
    pub k_neighbors: usize,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        Self {
            k_neighbors: 5,
            seed: 0,
        }
    }
}

fn sq_dist<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).to_f64_lossy();
            d * d
        })
        .sum()
}

/// Index list of the k nearest points to `of` within `points` (excluding
/// itself), ties broken by original index order.
fn k_nearest<T: Scalar>(points: &[&[T]], of: usize, k: usize) -> Vec<usize> {
    let mut order: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != of)
        .map(|(i, p)| (sq_dist(points[of], p), i))
        .collect();
    order.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances").then(a.1.cmp(&b.1)));
    order.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Balance the classes by synthesizing minority points: cycle through the
/// minority set, pick one of each point's k nearest minority neighbors, and
/// emit `x + λ(x_n − x)` with `λ ~ U(0,1)` from the seeded stream. Original
/// points come first in the output, order preserved.
pub fn smote<T: Scalar>(
    points: &[Vec<T>],
    labels: &[bool],
    cfg: &SmoteConfig,
) -> Result<(Vec<Vec<T>>, Vec<bool>), ResampleError> {
    if points.len() != labels.len() {
        return Err(ResampleError::ShapeMismatch(format!(
            "{} points vs {} labels",
            points.len(),
            labels.len()
        )));
    }
    if let Some(first) = points.first() {
        if points.iter().any(|p| p.len() != first.len()) {
            return Err(ResampleError::ShapeMismatch(
                "points have differing dimensions".into(),
            ));
        }
    }
    let pos: Vec<usize> = (0..points.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..points.len()).filter(|&i| !labels[i]).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(ResampleError::SingleClass);
    }

    let mut out_points = points.to_vec();
    let mut out_labels = labels.to_vec();
    if pos.len() == neg.len() {
        return Ok((out_points, out_labels));
    }
    let (minority_idx, minority_label, need) = if pos.len() < neg.len() {
        (&pos, true, neg.len() - pos.len())
    } else {
        (&neg, false, pos.len() - neg.len())
    };
    if cfg.k_neighbors == 0 || cfg.k_neighbors >= minority_idx.len() {
        return Err(ResampleError::ClassTooSmall {
            minority: minority_idx.len(),
            k: cfg.k_neighbors,
        });
    }

    let minority: Vec<&[T]> = minority_idx.iter().map(|&i| points[i].as_slice()).collect();
    let neighbors: Vec<Vec<usize>> = (0..minority.len())
        .map(|i| k_nearest(&minority, i, cfg.k_neighbors))
        .collect();

    let mut rng = stream(cfg.seed, "smote", 0);
    for s in 0..need {
        let base = s % minority.len();
        let pick = neighbors[base][rng.gen_range(0..cfg.k_neighbors)];
        let lambda = T::from_f64_lossy(rng.gen_range(0.0..1.0));
        let synthetic: Vec<T> = minority[base]
            .iter()
            .zip(minority[pick])
            .map(|(&x, &xn)| x + lambda * (xn - x))
            .collect();
        out_points.push(synthetic);
        out_labels.push(minority_label);
    }
    Ok((out_points, out_labels))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (Vec<Vec<f64>>, Vec<bool>) {
        let minority = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let majority: Vec<Vec<f64>> = (0..9)
            .map(|i| vec![10.0 + f64::from(i), 10.0])
            .collect();
        let mut points = minority;
        let mut labels = vec![true; 3];
        points.extend(majority);
        labels.extend(vec![false; 9]);
        (points, labels)
    }

    #[test]
    fn balances_counts_exactly() {
        let (points, labels) = toy();
        let cfg = SmoteConfig {
            k_neighbors: 2,
            seed: 9,
        };
        let (aug_points, aug_labels) = smote(&points, &labels, &cfg).unwrap();
        let pos = aug_labels.iter().filter(|&&l| l).count();
        let neg = aug_labels.len() - pos;
        assert_eq!(pos, neg);
        assert_eq!(aug_points.len(), 18);
        // Originals first and unchanged.
        assert_eq!(&aug_points[..12], &points[..]);
        assert_eq!(&aug_labels[..12], &labels[..]);
    }

    #[test]
    fn synthetics_lie_on_minority_neighbor_segments() {
        let (points, labels) = toy();
        let cfg = SmoteConfig {
            k_neighbors: 2,
            seed: 4,
        };
        let (aug_points, _) = smote(&points, &labels, &cfg).unwrap();
        let minority: Vec<&[f64]> = points[..3].iter().map(Vec::as_slice).collect();
        // Brute-force neighbor table: every pair, sorted by distance.
        for synth in &aug_points[12..] {
            let mut on_segment = false;
            for (i, a) in minority.iter().enumerate() {
                for b in k_nearest(&minority, i, 2).iter().map(|&j| minority[j]) {
                    // synth = a + λ(b−a) for some λ in [0,1)?
                    let dx = [b[0] - a[0], b[1] - a[1]];
                    let sx = [synth[0] - a[0], synth[1] - a[1]];
                    let lambda = if dx[0].abs() > 1e-12 {
                        sx[0] / dx[0]
                    } else {
                        sx[1] / dx[1]
                    };
                    let recon = [a[0] + lambda * dx[0], a[1] + lambda * dx[1]];
                    if (0.0..1.0).contains(&lambda)
                        && (recon[0] - synth[0]).abs() < 1e-9
                        && (recon[1] - synth[1]).abs() < 1e-9
                    {
                        on_segment = true;
                    }
                }
            }
            assert!(on_segment, "synthetic {synth:?} off all segments");
        }
    }

    #[test]
    fn lambda_zero_duplicates_base_point() {
        // λ=0 puts the synthetic exactly at x (segment endpoint); emulate by
        // checking midpoint arithmetic directly.
        let x = [0.0, 0.0];
        let n = [1.0, 1.0];
        let lambda = 0.5;
        let synth: Vec<f64> = x.iter().zip(n).map(|(&a, b)| a + lambda * (b - a)).collect();
        assert_eq!(synth, vec![0.5, 0.5]);
        let lambda = 0.0;
        let synth: Vec<f64> = x.iter().zip(n).map(|(&a, b)| a + lambda * (b - a)).collect();
        assert_eq!(synth, x.to_vec());
    }

    #[test]
    fn synthetics_stay_in_minority_bounding_box() {
        let (points, labels) = toy();
        let cfg = SmoteConfig {
            k_neighbors: 2,
            seed: 77,
        };
        let (aug_points, _) = smote(&points, &labels, &cfg).unwrap();
        for synth in &aug_points[12..] {
            assert!((0.0..=1.0).contains(&synth[0]), "{synth:?}");
            assert!((0.0..=1.0).contains(&synth[1]), "{synth:?}");
        }
    }

    #[test]
    fn deterministic_per_seed_and_majority_independent() {
        let (points, labels) = toy();
        let cfg = SmoteConfig {
            k_neighbors: 2,
            seed: 123,
        };
        let (a, _) = smote(&points, &labels, &cfg).unwrap();
        let (b, _) = smote(&points, &labels, &cfg).unwrap();
        assert_eq!(a, b);

        // Moving majority points must not change any synthetic sample.
        let mut moved = points.clone();
        for p in moved.iter_mut().skip(3) {
            p[0] += 500.0;
        }
        let (c, _) = smote(&moved, &labels, &cfg).unwrap();
        assert_eq!(&a[12..], &c[12..]);

        let other = SmoteConfig {
            k_neighbors: 2,
            seed: 124,
        };
        let (d, _) = smote(&points, &labels, &other).unwrap();
        assert_ne!(&a[12..], &d[12..]);
    }

    #[test]
    fn error_cases() {
        let points = vec![vec![0.0], vec![1.0]];
        assert!(matches!(
            smote(&points, &[true, true], &SmoteConfig::default()),
            Err(ResampleError::SingleClass)
        ));
        let mut points = vec![vec![0.0], vec![1.0]];
        let mut labels = vec![true, false];
        points.extend((0..5).map(|i| vec![f64::from(i)]));
        labels.extend(vec![false; 5]);
        assert!(matches!(
            smote(&points, &labels, &SmoteConfig { k_neighbors: 5, seed: 0 }),
            Err(ResampleError::ClassTooSmall { minority: 1, k: 5 })
        ));
    }

    #[test]
    fn balanced_input_is_untouched() {
        let points = vec![vec![0.0], vec![1.0], vec![2.0], vec![3.0]];
        let labels = vec![true, false, true, false];
        let (p, l) = smote(&points, &labels, &SmoteConfig::default()).unwrap();
        assert_eq!(p, points);
        assert_eq!(l, labels);
    }
}
