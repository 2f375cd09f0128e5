//! Action of the matrix exponential on a vector without forming `e^A`.

use ndarray::linalg::general_mat_vec_mul;
use ndarray::ArrayView1;

use super::{norm1, ComplexMatrix, C64, ONE, ZERO};
use crate::error::{Error, Result};

/// A square linear map applied to vectors of length [`dim`](Self::dim).
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// `out = A x`. `out` is overwritten.
    fn apply(&self, x: &[C64], out: &mut [C64]);

    /// Any upper bound on the induced 1-norm of `A`. Only used to pick the
    /// number of scaling steps, so a loose bound costs time, not accuracy.
    fn norm1_bound(&self) -> f64;
}

impl LinearOperator for ComplexMatrix {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[C64], out: &mut [C64]) {
        let xv = ArrayView1::from(x);
        let mut ov = ndarray::ArrayViewMut1::from(out);
        general_mat_vec_mul(ONE, self, &xv, ZERO, &mut ov);
    }

    fn norm1_bound(&self) -> f64 {
        norm1(self)
    }
}

/// Taylor terms allowed per scaling step before giving up.
const MAX_TERMS: usize = 60;
/// Target norm of `A/s` per step.
const STEP_NORM: f64 = 1.0;

/// `e^A v`.
pub fn expm_action<A: LinearOperator + ?Sized>(op: &A, v: &[C64]) -> Result<Vec<C64>> {
    expm_action_scaled(op, 1.0, v)
}

/// `e^{tA} v` by `s` truncated-Taylor steps of `e^{tA/s}`, with `s` chosen so
/// that `‖tA/s‖₁ ≤ 1`. Each step sums terms until two consecutive terms fall
/// below unit roundoff relative to the running sum.
pub fn expm_action_scaled<A: LinearOperator + ?Sized>(op: &A, t: f64, v: &[C64]) -> Result<Vec<C64>> {
    let n = op.dim();
    if v.len() != n {
        return Err(Error::invalid(format!(
            "vector of length {} does not match operator dimension {n}",
            v.len()
        )));
    }
    if !t.is_finite() {
        return Err(Error::invalid("non-finite time in exponential action"));
    }
    let norm = op.norm1_bound() * t.abs();
    if !norm.is_finite() {
        return Err(Error::invalid("operator norm bound is not finite"));
    }
    if norm == 0.0 {
        return Ok(v.to_vec());
    }
    let steps = (norm / STEP_NORM).ceil().max(1.0) as usize;
    let h = t / steps as f64;
    let tol = f64::EPSILON / 2.0;

    let mut f = v.to_vec();
    let mut term = vec![ZERO; n];
    let mut next = vec![ZERO; n];
    for step in 0..steps {
        term.copy_from_slice(&f);
        let mut prev_norm = inf_norm(&term);
        let mut converged = false;
        for k in 1..=MAX_TERMS {
            op.apply(&term, &mut next);
            let c = h / k as f64;
            for z in next.iter_mut() {
                *z *= c;
            }
            std::mem::swap(&mut term, &mut next);
            for (fi, ti) in f.iter_mut().zip(term.iter()) {
                *fi += *ti;
            }
            let cur = inf_norm(&term);
            let fnorm = inf_norm(&f);
            if !fnorm.is_finite() {
                return Err(Error::numerical_at(step, "exponential action overflowed"));
            }
            if cur + prev_norm <= tol * fnorm {
                converged = true;
                break;
            }
            prev_norm = cur;
        }
        if !converged {
            return Err(Error::numerical_at(
                step,
                format!("Taylor series did not converge within {MAX_TERMS} terms"),
            ));
        }
    }
    Ok(f)
}

fn inf_norm(v: &[C64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}
