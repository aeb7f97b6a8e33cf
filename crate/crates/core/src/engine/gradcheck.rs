//! Central finite-difference verification of tape gradients (64-bit only).

use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::Result;

/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub passed: bool,
    pub max_rel_error: f64,
    /// Flat index of the element with the largest relative error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates whose difference stencil crosses a branch of a piecewise
    /// op; the central difference is meaningless there.
    pub kink_crossings: usize,
    /// Set when evaluating `f` itself failed.
    pub error: Option<String>,
}

impl GradCheck {
    fn failed(error: String) -> Self {
        GradCheck {
            passed: false,
            max_rel_error: f64::INFINITY,
            worst_index: 0,
            analytic: f64::NAN,
            numeric: f64::NAN,
            checked: 0,
            kink_crossings: 0,
            error: Some(error),
        }
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares the tape gradient of the scalar `f(x)` against
/// `(f(x + h_i e_i) - f(x - h_i e_i)) / (2 h_i)` with `h_i = h * max(1, |x_i|)`.
///
/// `f` records its computation on the given tape with `x` as a leaf. Failures
/// are reported in the result, never raised. A coordinate whose stencil
/// changes the branch of a piecewise op fails the check.
pub fn finite_diff_check<F>(f: F, x: &Tensor<f64>, h: f64, tol: f64) -> GradCheck
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let (analytic, base) = match analytic_gradient(&f, x) {
        Ok(g) => g,
        Err(e) => return GradCheck::failed(e.to_string()),
    };
    let mut report = GradCheck {
        passed: true,
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: x.numel(),
        kink_crossings: 0,
        error: None,
    };
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let xi = x.data()[i];
        let step = h * xi.abs().max(1.0);
        probe.data_mut()[i] = xi + step;
        let plus = evaluate(&f, &probe);
        probe.data_mut()[i] = xi - step;
        let minus = evaluate(&f, &probe);
        probe.data_mut()[i] = xi;
        let ((plus, sp), (minus, sm)) = match (plus, minus) {
            (Ok(p), Ok(m)) => (p, m),
            (Err(e), _) | (_, Err(e)) => return GradCheck::failed(e.to_string()),
        };
        if sp != base || sm != base {
            report.kink_crossings += 1;
        }
        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic.data()[i];
        let err = relative_error(a, numeric);
        if !(err <= report.max_rel_error) {
            report.max_rel_error = err;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.passed = report.max_rel_error <= tol && report.kink_crossings == 0;
    report
}

fn analytic_gradient<F>(f: &F, x: &Tensor<f64>) -> Result<(Tensor<f64>, u64)>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone());
    let out = f(&mut tape, xv)?;
    let mut grads = tape.backward(out)?;
    let g = grads.take(xv).expect("leaf gradients are always populated");
    Ok((g, tape.branch_signature()))
}

fn evaluate<F>(f: &F, x: &Tensor<f64>) -> Result<(f64, u64)>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = f(&mut tape, xv)?;
    Ok((tape.value(out).item()?, tape.branch_signature()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::rng::{Rng, Stream};

    #[test]
    fn quadratic_passes_tightly() {
        let x = Tensor::normal(&[4, 3], 0.0, 2.0, &mut Rng::new(11, Stream::Init)).unwrap();
        let r = finite_diff_check(
            |t, x| {
                let s = t.square(x)?;
                t.sum_all(s)
            },
            &x,
            1e-4,
            1e-6,
        );
        assert!(r.passed, "{r:?}");
        assert_eq!(r.checked, 12);
    }

    #[test]
    fn wrong_gradient_is_reported() {
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        // Gradient rule deliberately off by a factor of two.
        let r = finite_diff_check(
            |t, x| {
                let v = t.value(x).map(|v| v * v);
                let y = t.push("bad_square", &[x], v, super::super::tape::grad_fn(|inp, _, g, _| {
                    Ok(vec![Some(g.mul(inp[0])?)])
                }))?;
                t.sum_all(y)
            },
            &x,
            1e-4,
            1e-4,
        );
        assert!(!r.passed);
        assert!((r.max_rel_error - 0.5).abs() < 1e-6);
    }

    #[test]
    fn evaluation_error_does_not_abort() {
        let x = Tensor::from_vec(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        // Non-scalar output: backward refuses it.
        let r = finite_diff_check(|_, x| Ok(x), &x, 1e-4, 1e-4);
        assert!(!r.passed);
        assert!(r.error.is_some());
    }
}
