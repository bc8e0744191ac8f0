//! Training objectives: multi-class dice loss over region probabilities,
//! binary cross-entropy over boundary probabilities, and their
//! lambda-weighted combination, each with analytic gradients that are
//! verifiable by central finite differences.
//!
//! Functions are generic over `f32`/`f64`: the trainer runs them in f32 on
//! tensor slices, the gradient-check suite in f64. Reductions use a fixed
//! left-to-right order within fixed-size chunks, so values are reproducible
//! across runs and thread counts.

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Smoothing constant added to dice numerator and denominator. Defines the
/// absent-class case: an empty class with an empty prediction scores dice 1.
pub const DICE_SMOOTH: f64 = 1e-5;

/// Clamp for probabilities entering logs.
pub const BCE_EPS: f64 = 1e-7;

/// Weight of the boundary-detection loss in the combined objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub lambda: f64,
}

impl LossWeights {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "loss weight lambda must be >= 0, got {lambda}"
            )));
        }
        Ok(Self { lambda })
    }
}

/// Per-task losses and their weighted total, `total = region + lambda * boundary`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub region_loss: f64,
    pub boundary_loss: f64,
    pub lambda: f64,
    pub total: f64,
}

/// Chunked left-to-right sum with a fixed chunk size; deterministic and more
/// stable than a naive running sum.
fn stable_sum<F: Float, I: Iterator<Item = F>>(iter: I) -> F {
    let mut total = F::zero();
    let mut chunk = F::zero();
    let mut count = 0usize;
    for v in iter {
        chunk = chunk + v;
        count += 1;
        if count == 4096 {
            total = total + chunk;
            chunk = F::zero();
            count = 0;
        }
    }
    total + chunk
}

fn check_same_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a} vs {b} elements")));
    }
    Ok(())
}

/// Raw per-class dice similarity `(2*sum(p*t) + s) / (sum(p^2) + sum(t^2) + s)`.
///
/// `prob` and `target` are channel-major (`classes * n` values each).
pub fn dice_per_class<F: Float>(
    prob: &[F],
    target: &[F],
    classes: usize,
    n: usize,
    smooth: F,
) -> Result<Vec<F>> {
    check_same_len(prob.len(), classes * n, "dice probability channels")?;
    check_same_len(target.len(), classes * n, "dice target channels")?;
    let mut out = Vec::with_capacity(classes);
    for c in 0..classes {
        let p = &prob[c * n..(c + 1) * n];
        let t = &target[c * n..(c + 1) * n];
        let inter = stable_sum(p.iter().zip(t).map(|(&a, &b)| a * b));
        let p2 = stable_sum(p.iter().map(|&a| a * a));
        let t2 = stable_sum(t.iter().map(|&b| b * b));
        let two = F::from(2.0).unwrap();
        out.push((two * inter + smooth) / (p2 + t2 + smooth));
    }
    Ok(out)
}

/// Multi-class dice loss: `1 - mean over classes of dice_c`. In `[0, 1]`;
/// zero exactly when the probabilities equal the one-hot target (smooth = 0,
/// all classes present).
pub fn dice_region_loss<F: Float>(
    prob: &[F],
    target: &[F],
    classes: usize,
    n: usize,
    smooth: F,
) -> Result<F> {
    let dice = dice_per_class(prob, target, classes, n, smooth)?;
    let mean = stable_sum(dice.into_iter()) / F::from(classes).unwrap();
    Ok(F::one() - mean)
}

/// Dice loss plus its gradient with respect to `prob`.
pub fn dice_region_loss_grad<F: Float>(
    prob: &[F],
    target: &[F],
    classes: usize,
    n: usize,
    smooth: F,
) -> Result<(F, Vec<F>)> {
    check_same_len(prob.len(), classes * n, "dice probability channels")?;
    check_same_len(target.len(), classes * n, "dice target channels")?;
    let two = F::from(2.0).unwrap();
    let inv_c = F::one() / F::from(classes).unwrap();
    let mut grad = vec![F::zero(); prob.len()];
    let mut dice_sum = F::zero();
    for c in 0..classes {
        let p = &prob[c * n..(c + 1) * n];
        let t = &target[c * n..(c + 1) * n];
        let inter = stable_sum(p.iter().zip(t).map(|(&a, &b)| a * b));
        let p2 = stable_sum(p.iter().map(|&a| a * a));
        let t2 = stable_sum(t.iter().map(|&b| b * b));
        let num = two * inter + smooth;
        let den = p2 + t2 + smooth;
        dice_sum = dice_sum + num / den;
        // d dice_c / d p_v = (2 t_v * den - num * 2 p_v) / den^2
        let g = &mut grad[c * n..(c + 1) * n];
        let den2 = den * den;
        for ((gv, &pv), &tv) in g.iter_mut().zip(p).zip(t) {
            *gv = -inv_c * (two * tv * den - num * two * pv) / den2;
        }
    }
    Ok((F::one() - dice_sum * inv_c, grad))
}

/// Mean binary cross-entropy of edge probabilities against a binary target.
/// Probabilities are clamped into `(eps, 1 - eps)` before the logs.
pub fn boundary_bce_loss<F: Float>(edge_prob: &[F], edge_target: &[u8]) -> Result<F> {
    check_same_len(edge_prob.len(), edge_target.len(), "boundary probability/target")?;
    if edge_prob.is_empty() {
        return Err(Error::InvalidArgument("boundary loss over an empty grid".into()));
    }
    let eps = F::from(BCE_EPS).unwrap();
    let one = F::one();
    let total = stable_sum(edge_prob.iter().zip(edge_target).map(|(&p, &t)| {
        let p = p.max(eps).min(one - eps);
        if t != 0 {
            -p.ln()
        } else {
            -(one - p).ln()
        }
    }));
    Ok(total / F::from(edge_prob.len()).unwrap())
}

/// BCE loss plus its gradient with respect to `edge_prob`. Voxels clamped by
/// the log guard receive zero gradient.
pub fn boundary_bce_loss_grad<F: Float>(
    edge_prob: &[F],
    edge_target: &[u8],
) -> Result<(F, Vec<F>)> {
    let loss = boundary_bce_loss(edge_prob, edge_target)?;
    let eps = F::from(BCE_EPS).unwrap();
    let one = F::one();
    let inv_n = one / F::from(edge_prob.len()).unwrap();
    let grad = edge_prob
        .iter()
        .zip(edge_target)
        .map(|(&p, &t)| {
            if p <= eps || p >= one - eps {
                F::zero()
            } else if t != 0 {
                -inv_n / p
            } else {
                inv_n / (one - p)
            }
        })
        .collect();
    Ok((loss, grad))
}

/// Combined multi-task objective `L = L_RS + lambda * L_BD`.
pub fn combined_loss(region_loss: f64, boundary_loss: f64, weights: &LossWeights) -> LossBreakdown {
    LossBreakdown {
        region_loss,
        boundary_loss,
        lambda: weights.lambda,
        total: region_loss + weights.lambda * boundary_loss,
    }
}

/// Compares an analytic gradient against central finite differences.
///
/// Returns the maximum relative error over all coordinates, where the
/// relative error uses `max(|analytic|, |numeric|, 1e-8)` as denominator.
/// Non-finite loss values are reported as a numerical error.
pub fn grad_check<L, G>(loss: L, gradient: G, theta: &[f64], step: f64) -> Result<f64>
where
    L: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let analytic = gradient(theta);
    if analytic.len() != theta.len() {
        return Err(Error::ShapeMismatch(format!(
            "gradient has {} coordinates, parameters have {}",
            analytic.len(),
            theta.len()
        )));
    }
    let mut work = theta.to_vec();
    let mut max_err = 0.0f64;
    for i in 0..theta.len() {
        let orig = work[i];
        work[i] = orig + step;
        let up = loss(&work);
        work[i] = orig - step;
        let down = loss(&work);
        work[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numerical(format!(
                "loss is not finite near coordinate {i}: f(+h)={up}, f(-h)={down}"
            )));
        }
        let numeric = (up - down) / (2.0 * step);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-8);
        max_err = max_err.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(max_err)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Random per-voxel simplex over `classes`.
    fn random_simplex(classes: usize, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![0.0; classes * n];
        for v in 0..n {
            let raw: Vec<f64> = (0..classes).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = raw.iter().sum();
            for c in 0..classes {
                out[c * n + v] = raw[c] / s;
            }
        }
        out
    }

    fn random_one_hot(classes: usize, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = vec![0.0; classes * n];
        for v in 0..n {
            out[rng.gen_range(0..classes) * n + v] = 1.0;
        }
        out
    }

    #[test]
    fn perfect_overlap_has_zero_loss() {
        // volume containing every class, prob = one-hot target, smooth = 0
        let n = 8;
        let classes = 2;
        let mut target = vec![0.0f64; classes * n];
        for v in 0..n {
            target[(v % 2) * n + v] = 1.0;
        }
        let loss = dice_region_loss(&target, &target, classes, n, 0.0).unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn disjoint_prediction_scores_zero_dice() {
        let n = 4;
        // prediction puts everything in class 1, target everything in class 2
        let mut prob = vec![0.0f64; 3 * n];
        let mut target = vec![0.0f64; 3 * n];
        for v in 0..n {
            prob[n + v] = 1.0;
            target[2 * n + v] = 1.0;
        }
        let dice = dice_per_class(&prob, &target, 3, n, 0.0).unwrap();
        assert_eq!(dice[1], 0.0);
        assert_eq!(dice[2], 0.0);
    }

    #[test]
    fn dice_matches_scalar_loop_oracle() {
        let n = 8; // 2x2x2
        let classes = 2;
        let prob = random_simplex(classes, n, 3);
        let target = random_one_hot(classes, n, 4);
        let got = dice_region_loss(&prob, &target, classes, n, 0.0).unwrap();
        // term-by-term scalar oracle
        let mut acc = 0.0;
        for c in 0..classes {
            let (mut num, mut den) = (0.0, 0.0);
            for v in 0..n {
                num += 2.0 * prob[c * n + v] * target[c * n + v];
                den += prob[c * n + v].powi(2) + target[c * n + v].powi(2);
            }
            acc += num / den;
        }
        let want = 1.0 - acc / classes as f64;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn dice_is_symmetric_in_prob_and_target() {
        let n = 27;
        let a = random_simplex(3, n, 7);
        let b = random_simplex(3, n, 8);
        let ab = dice_region_loss(&a, &b, 3, n, DICE_SMOOTH).unwrap();
        let ba = dice_region_loss(&b, &a, 3, n, DICE_SMOOTH).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn dice_stays_in_unit_interval() {
        for seed in 0..20 {
            let n = 16;
            let prob = random_simplex(4, n, seed);
            let target = random_one_hot(4, n, seed + 100);
            let loss = dice_region_loss(&prob, &target, 4, n, DICE_SMOOTH).unwrap();
            assert!((0.0..=1.0).contains(&loss), "loss {loss} out of range");
        }
    }

    #[test]
    fn absent_class_with_empty_prediction_scores_one() {
        let n = 4;
        let mut prob = vec![0.0f64; 2 * n];
        let mut target = vec![0.0f64; 2 * n];
        for v in 0..n {
            prob[v] = 1.0;
            target[v] = 1.0;
        }
        let dice =
            dice_per_class(&prob, &target, 2, n, DICE_SMOOTH).unwrap();
        assert_eq!(dice[1], 1.0);
    }

    #[test]
    fn bce_of_exact_match_is_near_zero() {
        let target: Vec<u8> = vec![1, 0, 1, 1, 0];
        let prob: Vec<f64> = target.iter().map(|&t| t as f64).collect();
        let loss = boundary_bce_loss(&prob, &target).unwrap();
        assert!(loss <= -(1.0 - BCE_EPS).ln() + 1e-15);
    }

    #[test]
    fn bce_of_half_everywhere_is_ln2() {
        let prob = vec![0.5f64; 64];
        let target = vec![0u8; 64];
        let loss = boundary_bce_loss(&prob, &target).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_matches_per_voxel_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 27;
        let prob: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
        let target: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.3) as u8).collect();
        let got = boundary_bce_loss(&prob, &target).unwrap();
        let want: f64 = prob
            .iter()
            .zip(&target)
            .map(|(&p, &t)| -((t as f64) * p.ln() + (1.0 - t as f64) * (1.0 - p).ln()))
            .sum::<f64>()
            / n as f64;
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn combined_degenerates_at_lambda_zero() {
        let b = combined_loss(0.37, 0.9, &LossWeights::new(0.0).unwrap());
        assert_eq!(b.total, 0.37);
    }

    #[test]
    fn combined_arithmetic() {
        let b = combined_loss(0.3, 0.2, &LossWeights::new(1.0).unwrap());
        assert_eq!(b.total, 0.5);
        let b = combined_loss(0.3, 0.2, &LossWeights::new(1.5).unwrap());
        assert!((b.total - 0.6).abs() < 1e-15);
    }

    #[test]
    fn combined_is_affine_in_lambda() {
        let (r, bd) = (0.42, 0.137);
        let at = |l: f64| combined_loss(r, bd, &LossWeights::new(l).unwrap()).total;
        let slope = (at(2.0) - at(0.5)) / 1.5;
        assert!((slope - bd).abs() < 1e-12);
    }

    #[test]
    fn negative_lambda_is_rejected() {
        assert!(LossWeights::new(-1.0).is_err());
    }

    #[test]
    fn grad_check_quadratic_is_exact() {
        let f = |x: &[f64]| x.iter().map(|v| 1.5 * v * v + 2.0 * v).sum::<f64>();
        let g = |x: &[f64]| x.iter().map(|v| 3.0 * v + 2.0).collect::<Vec<_>>();
        let theta = [0.3, -1.2, 2.0, 0.0];
        let err = grad_check(f, g, &theta, 1e-3).unwrap();
        assert!(err < 1e-8, "relative error {err}");
    }

    #[test]
    fn dice_gradient_matches_finite_differences() {
        let n = 64; // 4^3
        let classes = 3;
        let prob = random_simplex(classes, n, 21);
        let target = random_one_hot(classes, n, 22);
        let f = |p: &[f64]| dice_region_loss(p, &target, classes, n, DICE_SMOOTH as f64).unwrap();
        let g = |p: &[f64]| {
            dice_region_loss_grad(p, &target, classes, n, DICE_SMOOTH as f64).unwrap().1
        };
        let err = grad_check(f, g, &prob, 1e-3).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let n = 64;
        let prob: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..0.95)).collect();
        let target: Vec<u8> = (0..n).map(|_| rng.gen_bool(0.4) as u8).collect();
        let f = |p: &[f64]| boundary_bce_loss(p, &target).unwrap();
        let g = |p: &[f64]| boundary_bce_loss_grad(p, &target).unwrap().1;
        let err = grad_check(f, g, &prob, 1e-4).unwrap();
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn grad_check_reports_non_finite_loss() {
        let f = |x: &[f64]| (x[0] - 0.001).ln();
        let g = |x: &[f64]| vec![1.0 / x[0]];
        let err = grad_check(f, g, &[0.0005], 1e-3);
        assert!(matches!(err, Err(Error::Numerical(_))));
    }
}
