//! Central-difference gradient checking.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of comparing analytic and numeric gradients.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest per-coordinate relative error.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Coordinate where `max_rel_error` occurred.
    pub worst_index: usize,
    pub checked: usize,
    pub tol: f64,
    pub passed: bool,
    /// Set when the check could not run (non-finite values, graph errors).
    pub failure: Option<String>,
}

impl GradCheckReport {
    fn failed(reason: String, tol: f64) -> Self {
        GradCheckReport {
            max_rel_error: f64::INFINITY,
            max_abs_error: f64::INFINITY,
            worst_index: 0,
            checked: 0,
            tol,
            passed: false,
            failure: Some(reason),
        }
    }
}

/// Compares `analytic` against central differences of `value` at `input`.
///
/// The relative error of a coordinate is `|a - n| / max(|a|, |n|, floor)`,
/// where `floor` is `1e-3` times the largest gradient magnitude (and at
/// least `1e-8`): coordinates far below the gradient's own scale are
/// judged on that scale, so rounding noise in near-zero entries does not
/// dominate.
pub fn compare_gradients(
    value: impl Fn(&Tensor) -> Result<f64>,
    analytic: &Tensor,
    input: &Tensor,
    eps: f64,
    tol: f64,
) -> GradCheckReport {
    assert!(eps > 0.0, "eps must be positive");
    if analytic.shape() != input.shape() {
        return GradCheckReport::failed(
            format!("gradient shape {:?} vs input {:?}", analytic.shape(), input.shape()),
            tol,
        );
    }
    let mut numeric = vec![0.0; input.numel()];
    let mut probe = input.clone();
    for (i, slot) in numeric.iter_mut().enumerate() {
        let x0 = input.data()[i];
        probe.data_mut()[i] = x0 + eps;
        let plus = value(&probe);
        probe.data_mut()[i] = x0 - eps;
        let minus = value(&probe);
        probe.data_mut()[i] = x0;
        match (plus, minus) {
            (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => *slot = (p - m) / (2.0 * eps),
            (Err(e), _) | (_, Err(e)) => return GradCheckReport::failed(format!("evaluation failed: {e}"), tol),
            _ => return GradCheckReport::failed(format!("non-finite output at coordinate {i}"), tol),
        }
    }
    if !analytic.is_finite() {
        return GradCheckReport::failed("non-finite analytic gradient".into(), tol);
    }
    let scale = analytic
        .data()
        .iter()
        .chain(&numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (1e-3 * scale).max(1e-8);
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst_index: 0,
        checked: numeric.len(),
        tol,
        passed: false,
        failure: None,
    };
    for (i, (&a, &n)) in analytic.data().iter().zip(&numeric).enumerate() {
        let abs = (a - n).abs();
        let rel = abs / a.abs().max(n.abs()).max(floor);
        report.max_abs_error = report.max_abs_error.max(abs);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    report.passed = report.max_rel_error < tol;
    report
}

/// Checks the gradient of the scalar function `f` with respect to `input`.
pub fn grad_check<F>(f: F, input: &Tensor, eps: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&mut Graph, Var) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new();
        let x = g.param(input.clone());
        let out = match f(&mut g, x) {
            Ok(v) => v,
            Err(e) => return GradCheckReport::failed(format!("forward failed: {e}"), tol),
        };
        if !g.value(out).is_finite() {
            return GradCheckReport::failed("non-finite forward output".into(), tol);
        }
        if let Err(e) = g.backward(out) {
            return GradCheckReport::failed(format!("backward failed: {e}"), tol);
        }
        g.grad(x).cloned().unwrap_or_else(|| Tensor::zeros(input.shape()))
    };
    let value = |t: &Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let x = g.constant(t.clone());
        let out = f(&mut g, x)?;
        Ok(g.value(out).item())
    };
    compare_gradients(value, &analytic, input, eps, tol)
}
