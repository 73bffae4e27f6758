//! Grids of the first closed-form condition over `(A, W, μ, λ₁)`.

use serde::{Deserialize, Serialize};

use super::scalar::ScalarCertificateInput;
use crate::error::CertificateError;
use crate::exec::{par_map, Execution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Fixed(f64),
    Range { min: f64, max: f64, steps: usize },
}

impl Axis {
    pub fn values(&self, name: &str) -> Result<Vec<f64>, CertificateError> {
        match *self {
            Axis::Fixed(v) if v.is_finite() => Ok(vec![v]),
            Axis::Fixed(_) => Err(CertificateError::Precondition(format!("{name}: value must be finite"))),
            Axis::Range { min, max, steps } => {
                if steps < 2 {
                    return Err(CertificateError::Precondition(format!(
                        "{name}: resolution must be at least 2, got {steps}"
                    )));
                }
                if !(min.is_finite() && max.is_finite() && min <= max) {
                    return Err(CertificateError::Precondition(format!(
                        "{name}: range must be finite with min ≤ max, got [{min}, {max}]"
                    )));
                }
                let h = (max - min) / (steps - 1) as f64;
                Ok((0..steps).map(|i| min + h * i as f64).collect())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub a: Axis,
    pub w: Axis,
    pub mu: Axis,
    pub lambda1: Axis,
    pub b: f64,
    pub k: usize,
}

impl RegionSpec {
    /// `(A, W)` slice at `λ₁ = 1.8` for `K = 10`, `B = 1` and five values of `μ`.
    pub fn fig3b() -> Self {
        Self {
            a: Axis::Range {
                min: 0.0,
                max: 1.0,
                steps: 41,
            },
            w: Axis::Range {
                min: 0.0,
                max: 1.0,
                steps: 41,
            },
            mu: Axis::Range {
                min: 0.6,
                max: 1.4,
                steps: 5,
            },
            lambda1: Axis::Fixed(1.8),
            b: 1.0,
            k: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegionPoint {
    pub a: f64,
    pub w: f64,
    pub mu: f64,
    pub lambda1: f64,
    pub feasible: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionGrid {
    /// Points ordered with `A` outermost, then `W`, `μ`, `λ₁`.
    pub points: Vec<RegionPoint>,
    /// Number of values along `A`, `W`, `μ`, `λ₁`.
    pub shape: [usize; 4],
}

impl RegionGrid {
    pub fn feasible_fraction(&self) -> f64 {
        if self.points.is_empty() {
            return 0.0;
        }
        self.points.iter().filter(|p| p.feasible).count() as f64 / self.points.len() as f64
    }

    pub fn get(&self, ia: usize, iw: usize, imu: usize, il: usize) -> &RegionPoint {
        let [_, nw, nm, nl] = self.shape;
        &self.points[((ia * nw + iw) * nm + imu) * nl + il]
    }
}

/// The first condition evaluated at a given `λ₁` (no minimization).
pub fn first_condition_holds(inp: &ScalarCertificateInput, lambda1: f64) -> bool {
    inp.lhs_first(lambda1).is_some_and(|v| v < 1.0)
}

pub fn feasibility_region(spec: &RegionSpec, exec: Execution) -> Result<RegionGrid, CertificateError> {
    if spec.k < 2 {
        return Err(CertificateError::Precondition(format!(
            "horizon must be at least 2, got {}",
            spec.k
        )));
    }
    let av = spec.a.values("A")?;
    let wv = spec.w.values("W")?;
    let mv = spec.mu.values("mu")?;
    let lv = spec.lambda1.values("lambda1")?;
    if mv.iter().any(|m| !(*m > 0.0)) {
        return Err(CertificateError::Precondition("μ values must be positive".into()));
    }
    let mut coords = Vec::with_capacity(av.len() * wv.len() * mv.len() * lv.len());
    for &a in &av {
        for &w in &wv {
            for &mu in &mv {
                for &l in &lv {
                    coords.push((a, w, mu, l));
                }
            }
        }
    }
    let points = par_map(exec, &coords, |&(a, w, mu, lambda1)| {
        let inp = ScalarCertificateInput {
            a,
            b: spec.b,
            w,
            mu,
            k: spec.k,
        };
        RegionPoint {
            a,
            w,
            mu,
            lambda1,
            feasible: first_condition_holds(&inp, lambda1),
        }
    });
    Ok(RegionGrid {
        points,
        shape: [av.len(), wv.len(), mv.len(), lv.len()],
    })
}
