//! Central-finite-difference verification of analytic gradients.

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Outcome of one gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// `(input index, element index)` of the worst disagreement.
    pub worst: Option<(usize, usize)>,
    pub tolerance: f64,
    pub pass: bool,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / scale
}

/// Compare the analytic gradient of a scalar-valued graph against central
/// finite differences at `point`.
///
/// `f` rebuilds the graph from leaves; it is called once with tracked leaves
/// for the analytic gradient and `2·N` more times with perturbed constants.
pub fn grad_check<F>(f: F, point: &[Tensor], h: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = point.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let out = f(&mut tape, &vars)?;
    if tape.value(out).len() != 1 {
        return Err(Error::DimensionMismatch {
            op: "grad_check",
            lhs: tape.value(out).shape().to_vec(),
            rhs: vec![1],
        });
    }
    tape.backward(out)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| tape.grad(v).expect("tracked leaf").to_vec())
        .collect();

    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = tensors.iter().map(|x| t.constant(x.clone())).collect();
        let y = f(&mut t, &vs)?;
        t.value(y).item()
    };

    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    for (pi, tensor) in point.iter().enumerate() {
        for ei in 0..tensor.len() {
            let mut plus = point.to_vec();
            plus[pi].data_mut()[ei] += h;
            let mut minus = point.to_vec();
            minus[pi].data_mut()[ei] -= h;
            let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
            let err = rel_error(analytic[pi][ei], numeric);
            if err > max_rel_error {
                max_rel_error = err;
                worst = Some((pi, ei));
            }
        }
    }

    Ok(GradCheckReport {
        max_rel_error,
        worst,
        tolerance,
        pass: max_rel_error < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mse_on_random_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pred = Tensor::uniform(vec![4, 3], -1.0, 1.0, &mut rng);
        let target = Tensor::uniform(vec![4, 3], -1.0, 1.0, &mut rng);
        let report = grad_check(
            |tape, vars| tape.mse(vars[0], vars[1]),
            &[pred, target],
            1e-5,
            1e-5,
        )
        .unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = Tensor::full(vec![2, 2], 0.7);
        let report = grad_check(
            |tape, vars| {
                // sum(x − x) ignores the input value entirely.
                let d = tape.sub(vars[0], vars[0])?;
                Ok(tape.sum_all(d))
            },
            &[x],
            1e-5,
            1e-6,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn softmax_cross_entropy_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let logits = Tensor::uniform(vec![3, 4], -2.0, 2.0, &mut rng);
        let mut target_logits = Tensor::uniform(vec![3, 4], -2.0, 2.0, &mut rng);
        let report = grad_check(
            |tape, vars| {
                let pred = tape.softmax_rows(vars[0])?;
                let target = tape.softmax_rows(vars[1])?;
                tape.row_cross_entropy(target, pred)
            },
            &[logits, target_logits.clone()],
            1e-5,
            1e-4,
        )
        .unwrap();
        assert!(report.pass, "max rel error {}", report.max_rel_error);
        // also exercised standalone with a detached target
        target_logits.data_mut()[0] += 0.25;
    }
}
