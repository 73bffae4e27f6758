//! Block LMI assembly, verification and spectral-minimization search.

use serde::Serialize;

use crate::error::CertificateError;
use crate::exec::{par_map, Execution};
use crate::game::{CondensedGame, Mode};
use crate::matrix::{dot, Matrix};
use crate::numerics::{cholesky, spectral_radius, sym_eigen, sym_eigen_from};

/// Data entering the certificate: `x⁺ = A x + B̂ u` with `u = φ(−F_x x)`.
#[derive(Debug, Clone)]
pub struct LmiData {
    pub a: Matrix,
    pub b_hat: Matrix,
    pub f_x: Matrix,
    pub mu: f64,
}

impl LmiData {
    pub fn global(game: &CondensedGame) -> Self {
        Self {
            a: game.a.clone(),
            b_hat: game.b_hat(),
            f_x: game.f_x.clone(),
            mu: game.mu,
        }
    }

    /// Per-agent data of a decoupled game, all sharing the global `μ`.
    pub fn local(game: &CondensedGame) -> Result<Vec<Self>, CertificateError> {
        match (&game.local, game.mode) {
            (Some(blocks), Mode::Decoupled) => Ok(blocks
                .iter()
                .map(|b| Self {
                    a: b.a.clone(),
                    b_hat: b.b_hat.clone(),
                    f_x: b.f_x.clone(),
                    mu: game.mu,
                })
                .collect()),
            _ => Err(CertificateError::Precondition(
                "local certificates need a game with decoupled agent dynamics".into(),
            )),
        }
    }

    pub fn n_x(&self) -> usize {
        self.a.rows()
    }

    pub fn n_in(&self) -> usize {
        self.b_hat.cols()
    }

    fn validate(&self) -> Result<(), CertificateError> {
        let n = self.a.rows();
        let m = self.b_hat.cols();
        if !self.a.is_square() || self.b_hat.rows() != n || self.f_x.rows() != m || self.f_x.cols() != n {
            return Err(CertificateError::Dimension(format!(
                "A is {}x{}, B̂ is {}x{}, F_x is {}x{}",
                self.a.rows(),
                self.a.cols(),
                self.b_hat.rows(),
                self.b_hat.cols(),
                self.f_x.rows(),
                self.f_x.cols()
            )));
        }
        if !(self.mu > 0.0) {
            return Err(CertificateError::Precondition(format!(
                "μ must be positive, got {}",
                self.mu
            )));
        }
        Ok(())
    }

    /// The block matrix without admissibility checks on the multipliers.
    fn assemble_raw(&self, p: &Matrix, l1: f64, l2: f64) -> Matrix {
        let n = self.n_x();
        let m = self.n_in();
        let pa = p.matmul(&self.a);
        let pb = p.matmul(&self.b_hat);
        let mut tl = self.a.tr_matmul(&pa).sub(p);
        tl.add_assign_scaled(&self.f_x.tr_matmul(&self.f_x), l2 / (self.mu * self.mu));
        let mut tr = self.a.tr_matmul(&pb);
        tr.add_assign_scaled(&self.f_x.transpose(), -0.5 * l1);
        let mut br = self.b_hat.tr_matmul(&pb);
        br.add_to_diag(-(l1 * self.mu + l2));
        let mut out = Matrix::zeros(n + m, n + m);
        out.set_block(0, 0, &tl);
        out.set_block(0, n, &tr);
        out.set_block(n, 0, &tr.transpose());
        out.set_block(n, n, &br);
        out.sym_part()
    }

    pub fn assemble(&self, p: &Matrix, l1: f64, l2: f64) -> Result<Matrix, CertificateError> {
        self.validate()?;
        let n = self.n_x();
        if p.rows() != n || p.cols() != n {
            return Err(CertificateError::Dimension(format!(
                "P must be {n}x{n}, got {}x{}",
                p.rows(),
                p.cols()
            )));
        }
        if p.asymmetry() > 1e-12 * p.max_abs().max(1.0) {
            return Err(CertificateError::Precondition("P must be symmetric".into()));
        }
        if !(l1 >= 0.0 && l2 >= 0.0) {
            return Err(CertificateError::Precondition(format!(
                "multipliers must be nonnegative, got λ₁ = {l1}, λ₂ = {l2}"
            )));
        }
        if !(l1 + l2 > 0.0) {
            return Err(CertificateError::Precondition("λ₁ + λ₂ > 0 is required".into()));
        }
        Ok(self.assemble_raw(p, l1, l2))
    }

    /// `λ_max` of the assembled block (the search objective).
    pub fn max_eigenvalue(&self, p: &Matrix, l1: f64, l2: f64) -> Result<f64, CertificateError> {
        Ok(sym_eigen(&self.assemble_raw(p, l1, l2))?.max())
    }
}

pub fn assemble_lmi(game: &CondensedGame, p: &Matrix, l1: f64, l2: f64) -> Result<Matrix, CertificateError> {
    LmiData::global(game).assemble(p, l1, l2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CertificateCheck {
    pub verified: bool,
    pub achieved_max_eig: f64,
    pub min_eig_p: f64,
}

/// Verifies a candidate from scratch: fresh assembly, fresh eigenvalues and a
/// Cholesky factorization of `−L − ε/2·I`.
pub fn check_lmi(data: &LmiData, p: &Matrix, l1: f64, l2: f64, epsilon: f64, delta: f64) -> CertificateCheck {
    let fail = CertificateCheck {
        verified: false,
        achieved_max_eig: f64::NAN,
        min_eig_p: f64::NAN,
    };
    if !p.is_finite() || !l1.is_finite() || !l2.is_finite() || !epsilon.is_finite() {
        return fail;
    }
    let Ok(lmi) = data.assemble(p, l1, l2) else {
        return fail;
    };
    let (Ok(el), Ok(ep)) = (sym_eigen(&lmi), sym_eigen(&p.sym_part())) else {
        return fail;
    };
    let achieved = el.max();
    let min_p = ep.min();
    let mut shifted = lmi.scale(-1.0);
    shifted.add_to_diag(-0.5 * epsilon);
    let verified = epsilon > 0.0 && achieved <= -epsilon && min_p >= delta && cholesky(&shifted).is_some();
    CertificateCheck {
        verified,
        achieved_max_eig: achieved,
        min_eig_p: min_p,
    }
}

pub fn check_certificate(game: &CondensedGame, p: &Matrix, l1: f64, l2: f64, epsilon: f64) -> CertificateCheck {
    check_lmi(
        &LmiData::global(game),
        p,
        l1,
        l2,
        epsilon,
        SearchOptions::default().delta,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SearchOptions {
    /// Lower bound on `λ_min(P)`.
    pub delta: f64,
    /// Maximum number of subgradient iterations.
    pub budget: usize,
    /// Step scale `c` in `c/√t`.
    pub step: f64,
    /// The search stops early once `λ_max ≤ −stop_margin`.
    pub stop_margin: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            delta: 1e-6,
            budget: 50_000,
            step: 0.1,
            stop_margin: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificateResult {
    pub feasible: bool,
    #[serde(rename = "P")]
    pub p: Matrix,
    pub lambda1: f64,
    pub lambda2: f64,
    /// `−achieved_max_eig` when feasible, 0 otherwise.
    pub epsilon: f64,
    pub achieved_max_eig: f64,
    pub iterations: usize,
    /// Norm of the last subgradient; near zero with a positive objective
    /// indicates a genuinely infeasible instance rather than a short budget.
    pub subgradient_norm: f64,
    pub notes: Vec<String>,
}

/// Solves `AᵀPA − P = −I` by Smith's doubling iteration.
fn lyapunov_guess(a: &Matrix) -> Matrix {
    let n = a.rows();
    let mut p = Matrix::identity(n);
    let mut ak = a.clone();
    for _ in 0..64 {
        let inc = ak.tr_matmul(&p.matmul(&ak));
        p = p.add(&inc);
        ak = ak.matmul(&ak);
        if ak.max_abs() < 1e-14 || !p.is_finite() {
            break;
        }
    }
    if p.is_finite() {
        p.sym_part()
    } else {
        Matrix::identity(n)
    }
}

/// Euclidean projection of `y` onto `{z ≥ lb, Σz = 1}`.
fn project_capped_simplex(y: &[f64], lb: &[f64]) -> Vec<f64> {
    let total = |tau: f64| -> f64 { y.iter().zip(lb).map(|(yi, li)| (yi - tau).max(*li)).sum() };
    let mut lo = y.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if total(mid) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-16 * hi.abs().max(1.0) {
            break;
        }
    }
    let tau = 0.5 * (lo + hi);
    y.iter().zip(lb).map(|(yi, li)| (yi - tau).max(*li)).collect()
}

/// Projects onto `{P = Pᵀ, λ_min(P) ≥ δ, λ ≥ 0, tr(P) + λ₁ + λ₂ = 1}`.
fn project(p: &Matrix, l1: f64, l2: f64, delta: f64) -> Result<(Matrix, f64, f64), CertificateError> {
    let n = p.rows();
    let eig = sym_eigen(&p.sym_part())?;
    let mut y = eig.eigenvalues.clone();
    y.push(l1);
    y.push(l2);
    let mut lb = vec![delta * (1.0 + 1e-3); n];
    lb.extend([0.0, 0.0]);
    let z = project_capped_simplex(&y, &lb);
    let p_new = eig.reconstruct_with(|lam| {
        let idx = eig.eigenvalues.iter().position(|e| *e == lam).unwrap_or(0);
        z[idx]
    });
    Ok((p_new.sym_part(), z[n], z[n + 1]))
}

/// Minimizes `λ_max` of the block LMI over normalized `(P, λ₁, λ₂)`.
///
/// The block matrix is homogeneous in the decision variables, so the search
/// runs on `tr(P) + λ₁ + λ₂ = 1`. Any feasible answer is re-verified by
/// [`check_lmi`]; a budget-limited run is reported as infeasible.
pub fn search_lmi(data: &LmiData, opts: &SearchOptions) -> Result<CertificateResult, CertificateError> {
    data.validate()?;
    if !(opts.delta > 0.0) || opts.delta * data.n_x() as f64 >= 1.0 {
        return Err(CertificateError::Precondition(format!(
            "δ must be positive and below 1/n_x, got {}",
            opts.delta
        )));
    }
    let n = data.n_x();
    let rho = spectral_radius(&data.a)?;
    if rho >= 1.0 {
        let p = Matrix::identity(n).scale(1.0 / n as f64);
        let achieved = sym_eigen(&data.assemble_raw(&p, 0.0, 0.0))?.max();
        return Ok(CertificateResult {
            feasible: false,
            p,
            lambda1: 0.0,
            lambda2: 0.0,
            epsilon: 0.0,
            achieved_max_eig: achieved,
            iterations: 0,
            subgradient_norm: f64::NAN,
            notes: vec![format!(
                "open-loop stability required: ρ(A) = {rho:.6} ≥ 1, no certificate exists for unstable A"
            )],
        });
    }

    let guess = lyapunov_guess(&data.a);
    let tr: f64 = guess.diag().iter().sum();
    let (mut p, mut l1, mut l2) = project(&guess.scale(0.5 / tr), 0.25, 0.25, opts.delta)?;

    let mut best = (p.clone(), l1, l2, f64::INFINITY);
    let mut basis: Option<Matrix> = None;
    let mut grad_norm = f64::NAN;
    let mut iterations = 0;
    for t in 1..=opts.budget {
        iterations = t;
        let lmi = data.assemble_raw(&p, l1, l2);
        let eig = match &basis {
            Some(v) => sym_eigen_from(&lmi, v).or_else(|_| sym_eigen(&lmi))?,
            None => sym_eigen(&lmi)?,
        };
        let f = eig.max();
        let top = eig.vector(eig.eigenvalues.len() - 1);
        basis = Some(eig.eigenvectors);
        if f < best.3 {
            best = (p.clone(), l1, l2, f);
        }
        if f <= -opts.stop_margin {
            break;
        }

        let (va, vb) = top.split_at(n);
        let h: Vec<f64> = data
            .a
            .matvec(va)
            .iter()
            .zip(data.b_hat.matvec(vb))
            .map(|(x, y)| x + y)
            .collect();
        let fa = data.f_x.matvec(va);
        let bb = dot(vb, vb);
        let mut gp = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                gp[(i, j)] = h[i] * h[j] - va[i] * va[j];
            }
        }
        let g1 = -dot(&fa, vb) - data.mu * bb;
        let g2 = dot(&fa, &fa) / (data.mu * data.mu) - bb;
        grad_norm = (gp.frobenius_norm().powi(2) + g1 * g1 + g2 * g2).sqrt();
        if grad_norm == 0.0 {
            break;
        }
        let step = opts.step / (t as f64).sqrt() / grad_norm;
        p.add_assign_scaled(&gp, -step);
        let next = project(&p, l1 - step * g1, l2 - step * g2, opts.delta)?;
        p = next.0;
        l1 = next.1;
        l2 = next.2;
    }

    let (bp, b1, b2, bf) = best;
    let mut notes = Vec::new();
    if bf < 0.0 {
        let eps = -bf * (1.0 - 1e-6);
        let check = check_lmi(data, &bp, b1, b2, eps, opts.delta);
        if check.verified {
            return Ok(CertificateResult {
                feasible: true,
                p: bp,
                lambda1: b1,
                lambda2: b2,
                epsilon: -check.achieved_max_eig,
                achieved_max_eig: check.achieved_max_eig,
                iterations,
                subgradient_norm: grad_norm,
                notes,
            });
        }
        notes.push("best iterate failed independent re-verification".into());
    }
    notes.push(format!(
        "no certificate found within {iterations} iterations (best λ_max = {bf:.6e}); the condition is sufficient only, so this does not prove instability"
    ));
    Ok(CertificateResult {
        feasible: false,
        p: bp,
        lambda1: b1,
        lambda2: b2,
        epsilon: 0.0,
        achieved_max_eig: bf,
        iterations,
        subgradient_norm: grad_norm,
        notes,
    })
}

/// Global certificate for the condensed game.
pub fn search_certificate(game: &CondensedGame, opts: &SearchOptions) -> Result<CertificateResult, CertificateError> {
    let mut res = search_lmi(&LmiData::global(game), opts)?;
    if !game.z.is_bounded() {
        res.notes
            .push("decision set is unbounded; compactness required by the stability argument is unverified".into());
    }
    Ok(res)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalCertificates {
    pub agents: Vec<CertificateResult>,
    /// True only when every agent is certified.
    pub all_feasible: bool,
}

/// Runs the per-agent search on each local block of a decoupled game.
pub fn search_local_certificates(
    game: &CondensedGame,
    opts: &SearchOptions,
    exec: Execution,
) -> Result<LocalCertificates, CertificateError> {
    let data = LmiData::local(game)?;
    let results = par_map(exec, &data, |d| search_lmi(d, opts));
    let mut agents = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    if !game.z.is_bounded() {
        for a in &mut agents {
            a.notes
                .push("decision set is unbounded; compactness required by the stability argument is unverified".into());
        }
    }
    let all_feasible = agents.iter().all(|a| a.feasible);
    Ok(LocalCertificates { agents, all_feasible })
}

/// `ΔV_t = V(x_{t+1}) − V(x_t)` with `V(x) = (x − x̄)ᵀP(x − x̄)`.
pub fn lyapunov_decrease(states: &[Vec<f64>], p: &Matrix, x_bar: &[f64]) -> Result<Vec<f64>, CertificateError> {
    let n = x_bar.len();
    if p.rows() != n || p.cols() != n || states.iter().any(|x| x.len() != n) {
        return Err(CertificateError::Dimension(format!(
            "P is {}x{}, x̄ has length {n}",
            p.rows(),
            p.cols()
        )));
    }
    let v: Vec<f64> = states
        .iter()
        .map(|x| {
            let d: Vec<f64> = x.iter().zip(x_bar).map(|(a, b)| a - b).collect();
            p.quad_form(&d)
        })
        .collect();
    Ok(v.windows(2).map(|w| w[1] - w[0]).collect())
}
