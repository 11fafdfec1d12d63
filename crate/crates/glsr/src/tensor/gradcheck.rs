//! Finite-difference verification of reverse-mode gradients.
//!
//! The checker replays a user-supplied graph builder, compares the analytic
//! gradient of its scalar output against central differences, and reports
//! the worst relative error. Coordinates are sampled on an even stride, so
//! repeated runs test identical coordinates.

use super::graph::{Graph, Var};
use super::Tensor;
use crate::error::{Error, Result};

/// Outcome of a [`grad_check`] run.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
}

fn eval_scalar<F>(f: &F, leaves: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves.iter().map(|t| g.constant(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::Usage("grad_check target must be scalar".into()));
    }
    let val = v.data()[0];
    if !val.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss value {val}")));
    }
    Ok(val)
}

/// Compare the analytic gradient of `f`'s scalar output against central
/// finite differences at up to `max_coords_per_leaf` coordinates per leaf.
/// The step is `eps` scaled by coordinate magnitude; the relative error is
/// |analytic − numeric| / max(|analytic|, |numeric|, 1e−8).
pub fn grad_check<F>(
    f: &F,
    leaves: &[Tensor<f64>],
    eps: f64,
    max_coords_per_leaf: usize,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Result<Var>,
{
    if eps <= 0.0 {
        return Err(Error::config("grad_check eps must be positive"));
    }

    // Analytic pass.
    let mut g = Graph::new();
    let vars: Vec<Var> = leaves
        .iter()
        .map(|t| g.leaf(t.clone().with_grad()))
        .collect();
    let out = f(&mut g, &vars)?;
    if g.value(out).numel() != 1 {
        return Err(Error::Usage("grad_check target must be scalar".into()));
    }
    let base = g.value(out).data()[0];
    if !base.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss value {base}")));
    }
    let grads = g.backward(out, None)?;

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    for (li, leaf) in leaves.iter().enumerate() {
        let analytic: Option<&Tensor<f64>> = grads.get(vars[li]);
        let n = leaf.numel();
        let take = n.min(max_coords_per_leaf.max(1));
        for s in 0..take {
            // Even-stride sampling covers the tensor deterministically.
            let idx = s * n / take;
            let a = analytic.map_or(0.0, |t| t.data()[idx]);
            let theta = leaf.data()[idx];
            let h = eps * theta.abs().max(1.0);

            let mut plus = leaves.to_vec();
            plus[li].data_mut()[idx] = theta + h;
            let fp = eval_scalar(f, &plus)?;
            let mut minus = leaves.to_vec();
            minus[li].data_mut()[idx] = theta - h;
            let fm = eval_scalar(f, &minus)?;

            let numeric = (fp - fm) / (2.0 * h);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport { max_rel_err: max_rel, coords_checked: checked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    #[test]
    fn linear_function_is_exact() {
        let leaf = Tensor::from_vec(Shape::new(1, 1, 1, 4), vec![0.3, -1.2, 2.0, 0.7]).unwrap();
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let m = g.mean_all(vars[0]);
            Ok(g.scale(m, 3.0))
        };
        let report = grad_check(&f, &[leaf], 1e-5, 16).unwrap();
        assert!(report.max_rel_err < 1e-10, "rel {}", report.max_rel_err);
        assert_eq!(report.coords_checked, 4);
    }

    #[test]
    fn product_function_under_tolerance() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let a = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 3, 3), 1.0, &mut rng);
        let b = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 3, 3), 1.0, &mut rng);
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let p = g.mul(vars[0], vars[1])?;
            Ok(g.mean_all(p))
        };
        let report = grad_check(&f, &[a, b], 1e-5, 9).unwrap();
        assert!(report.max_rel_err < 1e-7, "rel {}", report.max_rel_err);
    }

    #[test]
    fn layer_norm_under_tolerance() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(22);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 4, 3, 3), 1.0, &mut rng);
        let gamma = Tensor::<f64>::rand_uniform(Shape::new(1, 4, 1, 1), 1.0, &mut rng);
        let beta = Tensor::<f64>::rand_uniform(Shape::new(1, 4, 1, 1), 1.0, &mut rng);
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let y = g.layer_norm(vars[0], vars[1], vars[2], 1e-6)?;
            let sq = g.mul(y, y)?;
            Ok(g.mean_all(sq))
        };
        let report = grad_check(&f, &[x, gamma, beta], 1e-5, 12).unwrap();
        assert!(report.max_rel_err < 1e-5, "rel {}", report.max_rel_err);
    }

    #[test]
    fn conv_gradients_under_tolerance() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 4, 5, 5), 1.0, &mut rng);
        let w = Tensor::<f64>::rand_uniform(Shape::new(3, 4, 3, 3), 0.5, &mut rng);
        let b = Tensor::<f64>::rand_uniform(Shape::new(1, 3, 1, 1), 0.5, &mut rng);
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let y = g.conv2d(vars[0], vars[1], Some(vars[2]), 1, 1, 1)?;
            let sq = g.mul(y, y)?;
            Ok(g.mean_all(sq))
        };
        let report = grad_check(&f, &[x, w, b], 1e-5, 20).unwrap();
        assert!(report.max_rel_err < 1e-7, "rel {}", report.max_rel_err);
    }

    #[test]
    fn depthwise_conv_gradients_under_tolerance() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(24);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 4, 6, 6), 1.0, &mut rng);
        let w = Tensor::<f64>::rand_uniform(Shape::new(4, 1, 3, 3), 0.5, &mut rng);
        let f = |g: &mut Graph<f64>, vars: &[Var]| {
            let y = g.conv2d(vars[0], vars[1], None, 1, 1, 4)?;
            let sq = g.mul(y, y)?;
            Ok(g.mean_all(sq))
        };
        let report = grad_check(&f, &[x, w], 1e-5, 18).unwrap();
        assert!(report.max_rel_err < 1e-7, "rel {}", report.max_rel_err);
    }

    #[test]
    fn frequency_term_gradient_under_tolerance() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(25);
        let x = Tensor::<f64>::rand_uniform(Shape::new(1, 2, 4, 4), 0.5, &mut rng);
        let f = |g: &mut Graph<f64>, vars: &[Var]| Ok(g.freq_l1(vars[0]));
        let report = grad_check(&f, &[x], 1e-6, 32).unwrap();
        assert!(report.max_rel_err < 1e-6, "rel {}", report.max_rel_err);
    }

    #[test]
    fn rejects_non_finite_loss() {
        let leaf = Tensor::from_vec(Shape::new(1, 1, 1, 1), vec![1.0]).unwrap();
        let f = |g: &mut Graph<f64>, _: &[Var]| {
            Ok(g.leaf(Tensor::scalar(f64::NAN)))
        };
        assert!(matches!(
            grad_check(&f, &[leaf], 1e-5, 1),
            Err(Error::Numeric(_))
        ));
    }
}
