//! Central finite-difference gradient checking.
//!
//! The checker treats a model as a black-box scalar function of a named
//! parameter set and compares analytic gradients against central
//! differences, parameter scalar by parameter scalar.

use crate::params::{GradMap, ModelParams};
use crate::tensor::TensorError;

/// Default perturbation for double-precision checks.
pub const DEFAULT_EPS: f64 = 1e-5;

/// Worst relative disagreement found by [`finite_diff_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub params_checked: usize,
}

/// Compare `grads` (analytic, from one backward pass at `params`) against
/// central finite differences of `f`.
///
/// The relative error for one scalar is
/// `|analytic - central| / (|analytic| + |central| + eps)`; the report keeps
/// the maximum over all parameter scalars. `f` must be deterministic: it is
/// evaluated twice up front and a mismatch is an error.
pub fn finite_diff_check<F, E>(
    f: F,
    params: &ModelParams,
    grads: &GradMap,
    eps: f64,
) -> Result<GradCheckReport, E>
where
    F: Fn(&ModelParams) -> Result<f64, E>,
    E: From<TensorError>,
{
    let base_a = f(params)?;
    let base_b = f(params)?;
    if base_a != base_b {
        return Err(TensorError::NonDeterministic {
            a: base_a,
            b: base_b,
        }
        .into());
    }

    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        params_checked: 0,
    };
    let names: Vec<String> = params.names().map(|s| s.to_string()).collect();
    for name in &names {
        let len = params.get(name).unwrap().data.len();
        let zero = vec![0.0; len];
        let analytic = grads.get(name).map(|g| g.as_slice()).unwrap_or(&zero);
        for i in 0..len {
            let orig = work.get(name).unwrap().data[i];
            work.get_mut(name).unwrap().data[i] = orig + eps;
            let plus = f(&work)?;
            work.get_mut(name).unwrap().data[i] = orig - eps;
            let minus = f(&work)?;
            work.get_mut(name).unwrap().data[i] = orig;
            let central = (plus - minus) / (2.0 * eps);
            let a = analytic[i];
            let rel = (a - central).abs() / (a.abs() + central.abs() + eps);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = name.clone();
                report.worst_index = i;
            }
            report.params_checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{Tape, Tensor};

    fn quadratic_params() -> ModelParams {
        let mut p = ModelParams::new();
        p.insert("x", Tensor::vector(vec![0.7, -1.3, 2.1]));
        p
    }

    fn quadratic_loss(p: &ModelParams) -> Result<f64, TensorError> {
        // f = sum(x .* x) + 3*x[1]
        let mut tape = Tape::new();
        let x = tape.leaf(p.get("x").unwrap().clone());
        let sq = tape.hadamard(x, x)?;
        let s = tape.sum(sq);
        let x1 = tape.pick(x, 1)?;
        let lin = tape.affine(x1, 3.0, 0.0);
        let loss = tape.add(s, lin)?;
        Ok(tape.data(loss)[0])
    }

    #[test]
    fn quadratic_is_exact_up_to_rounding() {
        let p = quadratic_params();
        let mut tape = Tape::new();
        let x = tape.leaf(p.get("x").unwrap().clone());
        let sq = tape.hadamard(x, x).unwrap();
        let s = tape.sum(sq);
        let x1 = tape.pick(x, 1).unwrap();
        let lin = tape.affine(x1, 3.0, 0.0);
        let loss = tape.add(s, lin).unwrap();
        tape.backward(loss).unwrap();
        let mut grads = GradMap::new();
        grads.insert("x".to_string(), tape.grad(x));

        let report = finite_diff_check(quadratic_loss, &p, &grads, 1e-3).unwrap();
        assert!(
            report.max_rel_error < 1e-6,
            "quadratic check should be exact, got {}",
            report.max_rel_error
        );
    }

    #[test]
    fn constant_function_reports_zero_error() {
        let p = quadratic_params();
        let grads = GradMap::new(); // all-zero analytic gradients
        let report =
            finite_diff_check(|_| Ok::<f64, TensorError>(42.0), &p, &grads, DEFAULT_EPS).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
        assert_eq!(report.params_checked, 3);
    }

    #[test]
    fn nondeterministic_function_detected() {
        use std::cell::Cell;
        let p = quadratic_params();
        let grads = GradMap::new();
        let flip = Cell::new(0.0);
        let res = finite_diff_check(
            |_| {
                flip.set(flip.get() + 1.0);
                Ok::<f64, TensorError>(flip.get())
            },
            &p,
            &grads,
            DEFAULT_EPS,
        );
        assert!(matches!(res, Err(TensorError::NonDeterministic { .. })));
    }
}
