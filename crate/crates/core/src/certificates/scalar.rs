//! Closed-form sufficient conditions for agents with scalar state and input.

use serde::{Deserialize, Serialize};

use super::lmi::LmiData;
use crate::error::CertificateError;
use crate::game::build_prediction_matrices;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalarCertificateInput {
    pub a: f64,
    pub b: f64,
    pub w: f64,
    pub mu: f64,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarCondition {
    /// Multiplier on the cocoercivity supply (`λ₂ = 0`).
    First,
    /// Multiplier on the Lipschitz supply (`λ₁ = 0`).
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScalarCertificate {
    pub feasible: bool,
    pub condition: Option<ScalarCondition>,
    /// Minimizer of the first left-hand side (0 if the condition is vacuous).
    pub lambda1: f64,
    /// Minimizer of the second left-hand side (0 if the condition is vacuous).
    pub lambda2: f64,
    pub lhs_first: f64,
    pub lhs_second: f64,
}

impl ScalarCertificateInput {
    fn validate(&self) -> Result<(), CertificateError> {
        if !(self.mu > 0.0) {
            return Err(CertificateError::Precondition(format!(
                "μ must be positive, got {}",
                self.mu
            )));
        }
        if self.k < 2 {
            return Err(CertificateError::Precondition(format!(
                "horizon must be at least 2, got {}",
                self.k
            )));
        }
        if !(self.a.is_finite() && self.b.is_finite() && self.w.is_finite()) {
            return Err(CertificateError::Precondition("scalar data must be finite".into()));
        }
        Ok(())
    }

    /// `Σ_{k=0}^{K−2} ((k+1)·A^k)²`.
    pub fn horizon_sum(&self) -> f64 {
        (0..self.k.saturating_sub(1))
            .map(|k| ((k + 1) as f64 * self.a.powi(k as i32)).powi(2))
            .sum()
    }

    /// Left-hand side of the first condition, `None` outside `λ₁ > B²/μ`.
    pub fn lhs_first(&self, lambda1: f64) -> Option<f64> {
        let b2 = self.b * self.b;
        let gap = self.mu * lambda1 - b2;
        if !(b2 > 0.0 && gap > 0.0) {
            return None;
        }
        let a2 = self.a * self.a;
        Some(self.mu * lambda1 * a2 / gap + lambda1 * b2 * self.w * self.w * self.horizon_sum() / self.mu)
    }

    /// Left-hand side of the second condition, `None` outside `λ₂ > B²`.
    pub fn lhs_second(&self, lambda2: f64) -> Option<f64> {
        let b2 = self.b * self.b;
        let gap = lambda2 - b2;
        if !(b2 > 0.0 && gap > 0.0) {
            return None;
        }
        let a2 = self.a * self.a;
        Some(a2 * lambda2 / gap + 4.0 * lambda2 * b2 * self.w * self.w * self.horizon_sum() / (self.mu * self.mu))
    }

    /// The one-dimensional block matrix of this agent, for cross-checks against the LMI.
    pub fn lmi_data(&self) -> Result<LmiData, CertificateError> {
        self.validate()?;
        let a = Matrix::from_diag(&[self.a]);
        let b = Matrix::from_diag(&[self.b]);
        let (a_tilde, b_tilde) = build_prediction_matrices(&a, std::slice::from_ref(&b), self.k)
            .map_err(|e| CertificateError::Precondition(e.to_string()))?;
        let f_x = b_tilde[0].tr_matmul(&a_tilde).scale(2.0 * self.w);
        let mut b_hat = Matrix::zeros(1, self.k);
        b_hat[(0, 0)] = self.b;
        Ok(LmiData {
            a,
            b_hat,
            f_x,
            mu: self.mu,
        })
    }
}

/// Minimizes `f(offset + e^t)` over `t` by a coarse scan followed by
/// golden-section refinement around the best scan point.
fn minimize_log(offset: f64, resolution: usize, f: impl Fn(f64) -> Option<f64>) -> (f64, f64) {
    let (t_min, t_max) = (-40.0_f64, 40.0_f64);
    let n = resolution.max(8);
    let h = (t_max - t_min) / (n - 1) as f64;
    let eval = |t: f64| f(offset + t.exp()).unwrap_or(f64::INFINITY);
    let (mut best_t, mut best_v) = (t_min, f64::INFINITY);
    for i in 0..n {
        let t = t_min + h * i as f64;
        let v = eval(t);
        if v < best_v {
            best_t = t;
            best_v = v;
        }
    }
    let inv_phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = ((best_t - h).max(t_min), (best_t + h).min(t_max));
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (eval(c), eval(d));
    for _ in 0..200 {
        if hi - lo < 1e-12 {
            break;
        }
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = eval(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = eval(d);
        }
    }
    for (t, v) in [(c, fc), (d, fd)] {
        if v < best_v {
            best_t = t;
            best_v = v;
        }
    }
    (offset + best_t.exp(), best_v)
}

/// Checks both closed-form conditions, each minimized over its multiplier.
pub fn scalar_certificate(
    inp: &ScalarCertificateInput,
    resolution: usize,
) -> Result<ScalarCertificate, CertificateError> {
    inp.validate()?;
    let b2 = inp.b * inp.b;
    if b2 == 0.0 {
        return Ok(ScalarCertificate {
            feasible: false,
            condition: None,
            lambda1: 0.0,
            lambda2: 0.0,
            lhs_first: f64::INFINITY,
            lhs_second: f64::INFINITY,
        });
    }
    let (l1, v1) = minimize_log(b2 / inp.mu, resolution, |l| inp.lhs_first(l));
    let (l2, v2) = minimize_log(b2, resolution, |l| inp.lhs_second(l));
    let condition = if v1 < 1.0 {
        Some(ScalarCondition::First)
    } else if v2 < 1.0 {
        Some(ScalarCondition::Second)
    } else {
        None
    };
    Ok(ScalarCertificate {
        feasible: condition.is_some(),
        condition,
        lambda1: l1,
        lambda2: l2,
        lhs_first: v1,
        lhs_second: v2,
    })
}
