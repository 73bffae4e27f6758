//! Solvers for the affine variational inequality `0 ∈ G·u + q + N_Z(u)`.
//!
//! The primary solver is a smoothed Fischer–Burmeister Newton method on the
//! KKT system. A projected-gradient iteration is kept as an independent
//! cross-check for box-constrained problems.

use serde::{Deserialize, Serialize};

use crate::error::SolverError;
use crate::game::{CondensedGame, Polyhedron, SparseRow};
use crate::matrix::{norm_inf, Matrix};
use crate::numerics::{solve_linear, spectral_norm};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
    pub pg_max_iterations: usize,
    pub smoothing_init: f64,
    pub smoothing_shrink: f64,
    /// Projected-gradient step; `None` uses `0.9·μ/‖G‖₂²`.
    pub pg_step: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 200,
            pg_max_iterations: 100_000,
            smoothing_init: 1e-2,
            smoothing_shrink: 0.2,
            pg_step: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |s: &str| Err(SolverError::Config(s.to_string()));
        if !(self.tolerance > 0.0) {
            return bad("tolerance must be positive");
        }
        if self.max_iterations == 0 || self.pg_max_iterations == 0 {
            return bad("iteration limits must be positive");
        }
        if !(self.smoothing_init > 0.0) {
            return bad("smoothing_init must be positive");
        }
        if !(self.smoothing_shrink > 0.0 && self.smoothing_shrink < 1.0) {
            return bad("smoothing_shrink must lie in (0, 1)");
        }
        if let Some(s) = self.pg_step {
            if !(s > 0.0) {
                return bad("pg_step must be positive");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Singular,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VgneSolution {
    pub u_star: Vec<f64>,
    /// One multiplier per row of [`Polyhedron::inequality_rows`].
    pub duals: Vec<f64>,
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
}

impl VgneSolution {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }
}

/// KKT natural residual `‖G·u + q + Rᵀλ‖∞ + ‖min(λ, c − R·u)‖∞`.
pub fn kkt_residual(g_mat: &Matrix, q: &[f64], rows: &[SparseRow], u: &[f64], duals: &[f64]) -> f64 {
    let mut st = g_mat.matvec(u);
    for (i, v) in st.iter_mut().enumerate() {
        *v += q[i];
    }
    let mut comp: f64 = 0.0;
    for (row, lam) in rows.iter().zip(duals) {
        for &(j, c) in &row.entries {
            st[j] += c * lam;
        }
        comp = comp.max(lam.min(row.slack(u)).abs());
    }
    norm_inf(&st) + comp
}

fn fb(a: f64, b: f64, sigma: f64) -> (f64, f64, f64) {
    let r = (a * a + b * b + 2.0 * sigma * sigma).sqrt();
    if r == 0.0 {
        return (0.0, 1.0, 1.0);
    }
    (a + b - r, 1.0 - a / r, 1.0 - b / r)
}

struct Smoothed {
    h: Vec<f64>,
    da: Vec<f64>,
    db: Vec<f64>,
}

fn smoothed_residual(g_mat: &Matrix, q: &[f64], rows: &[SparseRow], u: &[f64], lam: &[f64], sigma: f64) -> Smoothed {
    let n = u.len();
    let m = rows.len();
    let mut h = g_mat.matvec(u);
    for (i, v) in h.iter_mut().enumerate() {
        *v += q[i];
    }
    h.resize(n + m, 0.0);
    let mut da = vec![0.0; m];
    let mut db = vec![0.0; m];
    for (i, row) in rows.iter().enumerate() {
        for &(j, c) in &row.entries {
            h[j] += c * lam[i];
        }
        let (phi, a, b) = fb(lam[i], row.slack(u), sigma);
        h[n + i] = phi;
        da[i] = a;
        db[i] = b;
    }
    Smoothed { h, da, db }
}

fn half_sq(v: &[f64]) -> f64 {
    0.5 * v.iter().map(|x| x * x).sum::<f64>()
}

/// Solves `0 ∈ G·u + q + N_Z(u)` by smoothed Fischer–Burmeister Newton.
pub fn solve_affine_vi(
    g_mat: &Matrix,
    q: &[f64],
    z: &Polyhedron,
    cfg: &SolverConfig,
    warm: Option<(&[f64], &[f64])>,
) -> Result<VgneSolution, SolverError> {
    cfg.validate()?;
    let n = q.len();
    if g_mat.rows() != n || g_mat.cols() != n || z.dim() != n {
        return Err(SolverError::Dimension(format!(
            "G is {}x{}, offset has length {n}, decision set has dimension {}",
            g_mat.rows(),
            g_mat.cols(),
            z.dim()
        )));
    }
    let rows = z.inequality_rows();
    let m = rows.len();

    let mut u = match warm {
        Some((wu, _)) if wu.len() == n => wu.to_vec(),
        _ => z.project_box(&vec![0.0; n]),
    };
    let mut lam = match warm {
        Some((_, wl)) if wl.len() == m => wl.iter().map(|v| v.max(0.0)).collect(),
        _ => vec![0.0; m],
    };

    let mut sigma = cfg.smoothing_init;
    let sigma_floor = 1e-3 * cfg.tolerance;
    let mut best = (u.clone(), lam.clone(), kkt_residual(g_mat, q, &rows, &u, &lam));
    let mut status = SolveStatus::MaxIter;
    let mut iterations = 0;

    for it in 0..=cfg.max_iterations {
        let res = kkt_residual(g_mat, q, &rows, &u, &lam);
        if res < best.2 {
            best = (u.clone(), lam.clone(), res);
        }
        if res <= cfg.tolerance {
            status = SolveStatus::Converged;
            iterations = it;
            break;
        }
        if it == cfg.max_iterations {
            iterations = it;
            break;
        }

        let mut sm = smoothed_residual(g_mat, q, &rows, &u, &lam, sigma);
        while norm_inf(&sm.h) < sigma && sigma > sigma_floor {
            sigma = (sigma * cfg.smoothing_shrink).max(sigma_floor);
            sm = smoothed_residual(g_mat, q, &rows, &u, &lam, sigma);
        }

        // Newton system on (du, dλ):
        //   G du + Rᵀ dλ = −h_u,   D_a dλ − D_b R du = −φ.
        let mut jac = Matrix::zeros(n + m, n + m);
        jac.set_block(0, 0, g_mat);
        for (i, row) in rows.iter().enumerate() {
            for &(j, c) in &row.entries {
                jac[(j, n + i)] += c;
                jac[(n + i, j)] -= sm.db[i] * c;
            }
            jac[(n + i, n + i)] = sm.da[i];
        }
        let rhs: Vec<f64> = sm.h.iter().map(|v| -v).collect();
        let step = match solve_linear(&jac, &rhs) {
            Ok(s) => s,
            Err(_) => {
                jac.add_to_diag(1e-8);
                match solve_linear(&jac, &rhs) {
                    Ok(s) => s,
                    Err(_) => {
                        status = SolveStatus::Singular;
                        iterations = it;
                        break;
                    }
                }
            }
        };

        let psi0 = half_sq(&sm.h);
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..=30 {
            let un: Vec<f64> = (0..n).map(|i| u[i] + t * step[i]).collect();
            let ln: Vec<f64> = (0..m).map(|i| lam[i] + t * step[n + i]).collect();
            let psi = half_sq(&smoothed_residual(g_mat, q, &rows, &un, &ln, sigma).h);
            let ok = psi <= (1.0 - 2e-4 * t) * psi0;
            accepted = Some((un, ln));
            if ok {
                break;
            }
            t *= 0.5;
        }
        let (un, ln) = accepted.expect("line search evaluates at least one point");
        if un.iter().chain(&ln).any(|v| !v.is_finite()) {
            status = SolveStatus::Singular;
            iterations = it;
            break;
        }
        u = un;
        lam = ln;
    }

    let (u, mut lam, _) = if status == SolveStatus::Converged {
        (u, lam, 0.0)
    } else {
        best
    };
    for l in &mut lam {
        *l = l.max(0.0);
    }
    let residual = kkt_residual(g_mat, q, &rows, &u, &lam);
    if status != SolveStatus::Converged && residual <= cfg.tolerance {
        status = SolveStatus::Converged;
    }
    Ok(VgneSolution {
        u_star: u,
        duals: lam,
        residual,
        iterations,
        status,
    })
}

/// Equilibrium input trajectory of the game at state `x`.
pub fn solve_vgne(
    game: &CondensedGame,
    x: &[f64],
    cfg: &SolverConfig,
    warm: Option<&VgneSolution>,
) -> Result<VgneSolution, SolverError> {
    if x.len() != game.n_x() {
        return Err(SolverError::Dimension(format!(
            "state has length {}, game expects {}",
            x.len(),
            game.n_x()
        )));
    }
    let q = game.offset(x);
    let warm = warm.map(|w| (w.u_star.as_slice(), w.duals.as_slice()));
    solve_affine_vi(&game.g_mat, &q, &game.z, cfg, warm)
}

/// `φ(z) = (F_u + N_Z)⁻¹(z)`, i.e. the solution with offset `g − z`.
pub fn eval_phi(game: &CondensedGame, z: &[f64], cfg: &SolverConfig) -> Result<Vec<f64>, SolverError> {
    if z.len() != game.n_vars() {
        return Err(SolverError::Dimension(format!(
            "z has length {}, game has {} decision variables",
            z.len(),
            game.n_vars()
        )));
    }
    let q: Vec<f64> = game.g.iter().zip(z).map(|(g, zi)| g - zi).collect();
    let sol = solve_affine_vi(&game.g_mat, &q, &game.z, cfg, None)?;
    if !sol.converged() {
        return Err(SolverError::Unsupported(format!(
            "φ evaluation did not converge (status {:?}, residual {:e})",
            sol.status, sol.residual
        )));
    }
    Ok(sol.u_star)
}

/// Default projected-gradient step `0.9·μ/‖G‖₂²`.
pub fn default_pg_step(g_mat: &Matrix, mu: f64) -> Result<f64, SolverError> {
    let nrm = spectral_norm(g_mat).map_err(|e| SolverError::Config(e.to_string()))?;
    if !(nrm > 0.0) || !(mu > 0.0) {
        return Err(SolverError::Config("step needs μ > 0 and G ≠ 0".into()));
    }
    Ok(0.9 * mu / (nrm * nrm))
}

/// Projected-gradient fixed-point iteration `u ← Π_Z(u − γ·F(u))` on a box.
pub fn solve_projected_gradient_vi(
    g_mat: &Matrix,
    q: &[f64],
    z: &Polyhedron,
    mu: f64,
    cfg: &SolverConfig,
) -> Result<VgneSolution, SolverError> {
    cfg.validate()?;
    if z.has_coupling() {
        return Err(SolverError::Unsupported(
            "projected gradient handles box constraints only".into(),
        ));
    }
    let n = q.len();
    if g_mat.rows() != n || g_mat.cols() != n || z.dim() != n {
        return Err(SolverError::Dimension(
            "G, offset and decision set disagree in size".into(),
        ));
    }
    let gamma = match cfg.pg_step {
        Some(s) => s,
        None => default_pg_step(g_mat, mu)?,
    };
    let rows = z.inequality_rows();
    let mut u = z.project_box(&vec![0.0; n]);
    let mut status = SolveStatus::MaxIter;
    let mut iterations = cfg.pg_max_iterations;
    for it in 0..cfg.pg_max_iterations {
        let mut f = g_mat.matvec(&u);
        for (i, v) in f.iter_mut().enumerate() {
            *v += q[i];
        }
        let natural: f64 = (0..n)
            .map(|i| (u[i] - (u[i] - f[i]).max(z.lower[i]).min(z.upper[i])).abs())
            .fold(0.0, f64::max);
        if !natural.is_finite() || norm_inf(&u) > 1e12 {
            status = SolveStatus::Diverged;
            iterations = it;
            break;
        }
        if natural <= 0.1 * cfg.tolerance {
            status = SolveStatus::Converged;
            iterations = it;
            break;
        }
        for i in 0..n {
            u[i] = (u[i] - gamma * f[i]).max(z.lower[i]).min(z.upper[i]);
        }
    }
    let duals = box_duals(g_mat, q, z, &u);
    let residual = kkt_residual(g_mat, q, &rows, &u, &duals);
    if status == SolveStatus::Converged && residual > cfg.tolerance {
        status = SolveStatus::MaxIter;
    }
    Ok(VgneSolution {
        u_star: u,
        duals,
        residual,
        iterations,
        status,
    })
}

pub fn solve_projected_gradient(
    game: &CondensedGame,
    x: &[f64],
    cfg: &SolverConfig,
) -> Result<VgneSolution, SolverError> {
    if x.len() != game.n_x() {
        return Err(SolverError::Dimension(format!(
            "state has length {}, game expects {}",
            x.len(),
            game.n_x()
        )));
    }
    solve_projected_gradient_vi(&game.g_mat, &game.offset(x), &game.z, game.mu, cfg)
}

/// Multipliers of the box rows recovered from `F(u)` at a box-constrained point.
fn box_duals(g_mat: &Matrix, q: &[f64], z: &Polyhedron, u: &[f64]) -> Vec<f64> {
    let mut f = g_mat.matvec(u);
    for (i, v) in f.iter_mut().enumerate() {
        *v += q[i];
    }
    let scale = |b: f64| 1e-12 * b.abs().max(1.0);
    let mut duals = Vec::new();
    for i in 0..u.len() {
        if z.lower[i].is_finite() {
            let at = u[i] - z.lower[i] <= scale(z.lower[i]);
            duals.push(if at { f[i].max(0.0) } else { 0.0 });
        }
    }
    for i in 0..u.len() {
        if z.upper[i].is_finite() {
            let at = z.upper[i] - u[i] <= scale(z.upper[i]);
            duals.push(if at { (-f[i]).max(0.0) } else { 0.0 });
        }
    }
    duals
}
