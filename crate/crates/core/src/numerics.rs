//! Dense linear-algebra kernels sized for small control problems.
//!
//! Everything here is a pure function of its inputs. Matrices handled by the
//! rest of the crate rarely exceed a couple hundred rows, so the kernels favour
//! simple, robust algorithms: cyclic Jacobi for symmetric eigenproblems, LU
//! with partial pivoting for linear systems and repeated squaring for the
//! spectral radius of general matrices.

use crate::error::NumericsError;
use crate::matrix::{norm_inf, Matrix};

/// Tolerances for the kernels in this module.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NumericsConfig {
    /// Relative asymmetry accepted by [`sym_eigen`].
    pub symmetry_tol: f64,
    /// Jacobi stops once the off-diagonal Frobenius norm is below `jacobi_tol * ‖S‖_F`.
    pub jacobi_tol: f64,
    pub jacobi_max_sweeps: usize,
    /// Relative change at which the spectral-radius estimate is accepted.
    pub radius_tol: f64,
    pub radius_max_squarings: usize,
    /// Linear solves fail above this condition estimate.
    pub condition_limit: f64,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            symmetry_tol: 1e-12,
            jacobi_tol: 1e-12,
            jacobi_max_sweeps: 100,
            radius_tol: 1e-9,
            radius_max_squarings: 64,
            condition_limit: 1e12,
        }
    }
}

/// Eigenpairs of a symmetric matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// Orthonormal eigenvectors stored as columns, in the order of `eigenvalues`.
    pub eigenvectors: Matrix,
}

impl EigenDecomposition {
    pub fn min(&self) -> f64 {
        self.eigenvalues.first().copied().unwrap_or(f64::NAN)
    }

    pub fn max(&self) -> f64 {
        self.eigenvalues.last().copied().unwrap_or(f64::NAN)
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.eigenvectors.col_vec(i)
    }

    /// `V · diag(f(λ)) · Vᵀ`.
    pub fn reconstruct_with(&self, f: impl Fn(f64) -> f64) -> Matrix {
        let n = self.eigenvalues.len();
        let v = &self.eigenvectors;
        let mut out = Matrix::zeros(n, n);
        for (k, lam) in self.eigenvalues.iter().enumerate() {
            let fl = f(*lam);
            if fl == 0.0 {
                continue;
            }
            for i in 0..n {
                let vik = v[(i, k)] * fl;
                for j in 0..n {
                    out[(i, j)] += vik * v[(j, k)];
                }
            }
        }
        out
    }
}

pub fn sym_eigen(s: &Matrix) -> Result<EigenDecomposition, NumericsError> {
    sym_eigen_with(s, &NumericsConfig::default())
}

/// Cyclic Jacobi eigensolver.
pub fn sym_eigen_with(s: &Matrix, cfg: &NumericsConfig) -> Result<EigenDecomposition, NumericsError> {
    if !s.is_square() {
        return Err(NumericsError::Dimension(format!(
            "sym_eigen needs a square matrix, got {}x{}",
            s.rows(),
            s.cols()
        )));
    }
    if !s.is_finite() {
        return Err(NumericsError::Dimension("matrix has non-finite entries".into()));
    }
    let n = s.rows();
    let scale = s.max_abs().max(f64::MIN_POSITIVE);
    let asym = s.asymmetry();
    if asym > cfg.symmetry_tol * scale {
        return Err(NumericsError::NotSymmetric { asymmetry: asym });
    }

    jacobi(s.sym_part(), Matrix::identity(n), s.frobenius_norm(), cfg)
}

/// Jacobi eigensolver started from an approximate eigenvector basis `v0`.
///
/// When `v0` comes from a nearby matrix (as in iterative searches), `v0ᵀSv0`
/// is almost diagonal and only one or two sweeps are needed.
pub fn sym_eigen_from(s: &Matrix, v0: &Matrix) -> Result<EigenDecomposition, NumericsError> {
    let cfg = NumericsConfig::default();
    if !s.is_square() || v0.rows() != s.rows() || v0.cols() != s.rows() {
        return Err(NumericsError::Dimension(format!(
            "warm-started eigensolver needs matching square matrices, got {}x{} and {}x{}",
            s.rows(),
            s.cols(),
            v0.rows(),
            v0.cols()
        )));
    }
    let rotated = v0.tr_matmul(&s.sym_part().matmul(v0)).sym_part();
    jacobi(rotated, v0.clone(), s.frobenius_norm(), &cfg)
}

fn jacobi(
    mut a: Matrix,
    mut v: Matrix,
    s_norm: f64,
    cfg: &NumericsConfig,
) -> Result<EigenDecomposition, NumericsError> {
    let n = a.rows();
    let target = cfg.jacobi_tol * s_norm;

    let mut converged = false;
    for _ in 0..cfg.jacobi_max_sweeps {
        if off_diagonal_norm(&a) <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                a[(p, p)] -= t * apq;
                a[(q, q)] += t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a[(r, p)];
                        let arq = a[(r, q)];
                        let np = c * arp - sn * arq;
                        let nq = sn * arp + c * arq;
                        a[(r, p)] = np;
                        a[(p, r)] = np;
                        a[(r, q)] = nq;
                        a[(q, r)] = nq;
                    }
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - sn * vrq;
                    v[(r, q)] = sn * vrp + c * vrq;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > target {
        return Err(NumericsError::NotConverged("Jacobi eigensolver"));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        for r in 0..n {
            vectors[(r, dst)] = v[(r, src)];
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors: vectors,
    })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_sym_eigenvalue(m: &Matrix) -> Result<f64, NumericsError> {
    Ok(sym_eigen(&m.sym_part())?.min())
}

/// Spectral norm `‖M‖₂`.
pub fn spectral_norm(m: &Matrix) -> Result<f64, NumericsError> {
    let gram = m.tr_matmul(m).sym_part();
    Ok(sym_eigen(&gram)?.max().max(0.0).sqrt())
}

pub fn spectral_radius(a: &Matrix) -> Result<f64, NumericsError> {
    spectral_radius_with(a, &NumericsConfig::default())
}

/// Largest eigenvalue modulus of a general square matrix.
///
/// Uses `ρ(A) = lim ‖A^p‖^{1/p}` along `p = 2^j`, squaring a normalized copy
/// of the matrix and tracking the accumulated log-scale.
pub fn spectral_radius_with(a: &Matrix, cfg: &NumericsConfig) -> Result<f64, NumericsError> {
    if !a.is_square() {
        return Err(NumericsError::Dimension(format!(
            "spectral radius needs a square matrix, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    if !a.is_finite() {
        return Err(NumericsError::Dimension("matrix has non-finite entries".into()));
    }
    let norm0 = a.frobenius_norm();
    if norm0 == 0.0 {
        return Ok(0.0);
    }
    let mut m = a.scale(1.0 / norm0);
    let mut log_norm = norm0.ln();
    let mut power = 1.0_f64;
    let mut estimate = norm0;
    let mut stable_steps = 0;
    for j in 0..cfg.radius_max_squarings {
        m = m.matmul(&m);
        let nrm = m.frobenius_norm();
        if nrm == 0.0 {
            return Ok(0.0);
        }
        m = m.scale(1.0 / nrm);
        log_norm = 2.0 * log_norm + nrm.ln();
        power *= 2.0;
        let next = (log_norm / power).exp();
        if (next - estimate).abs() <= cfg.radius_tol * next.max(1e-300) && j >= 8 {
            stable_steps += 1;
            if stable_steps >= 2 {
                return Ok(next);
            }
        } else {
            stable_steps = 0;
        }
        estimate = next;
    }
    Ok(estimate)
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct Lu {
    lu: Matrix,
    perm: Vec<usize>,
    norm1: f64,
}

// Triangular solves read most clearly with explicit indices.
#[allow(clippy::needless_range_loop)]
impl Lu {
    pub fn factor(a: &Matrix) -> Result<Self, NumericsError> {
        if !a.is_square() {
            return Err(NumericsError::Dimension(format!(
                "LU needs a square matrix, got {}x{}",
                a.rows(),
                a.cols()
            )));
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let (piv, pval) =
                (k..n)
                    .map(|i| (i, lu[(i, k)].abs()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pval == 0.0 || !pval.is_finite() {
                return Err(NumericsError::Singular {
                    condition: f64::INFINITY,
                });
            }
            if piv != k {
                perm.swap(piv, k);
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(piv, j)];
                    lu[(piv, j)] = tmp;
                }
            }
            let d = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / d;
                lu[(i, k)] = f;
                if f != 0.0 {
                    for j in k + 1..n {
                        lu[(i, j)] -= f * lu[(k, j)];
                    }
                }
            }
        }
        Ok(Self {
            lu,
            perm,
            norm1: a.norm_1(),
        })
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    /// Solves `Aᵀ x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Vec<f64> {
        let n = self.dim();
        // Uᵀ z = b
        let mut z = b.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for j in 0..i {
                s -= self.lu[(j, i)] * z[j];
            }
            z[i] = s / self.lu[(i, i)];
        }
        // Lᵀ y = z
        for i in (0..n).rev() {
            let mut s = z[i];
            for j in i + 1..n {
                s -= self.lu[(j, i)] * z[j];
            }
            z[i] = s;
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = z[k];
        }
        x
    }

    /// 1-norm condition estimate (Hager's method on the inverse).
    pub fn condition_estimate(&self) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 1.0;
        }
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let y = self.solve(&x);
            est = y.iter().map(|v| v.abs()).sum::<f64>();
            let xi: Vec<f64> = y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect();
            let z = self.solve_transpose(&xi);
            let (jmax, zmax) = z
                .iter()
                .enumerate()
                .fold((0, -1.0), |b, (i, v)| if v.abs() > b.1 { (i, v.abs()) } else { b });
            let ztx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= ztx {
                break;
            }
            x = vec![0.0; n];
            x[jmax] = 1.0;
        }
        self.norm1 * est
    }

    pub fn determinant(&self) -> f64 {
        let n = self.dim();
        let mut det: f64 = (0..n).map(|i| self.lu[(i, i)]).product();
        // parity of the permutation
        let mut seen = vec![false; n];
        for start in 0..n {
            if seen[start] {
                continue;
            }
            let mut len = 0;
            let mut i = start;
            while !seen[i] {
                seen[i] = true;
                i = self.perm[i];
                len += 1;
            }
            if len % 2 == 0 {
                det = -det;
            }
        }
        det
    }
}

pub fn solve_linear(a: &Matrix, b: &[f64]) -> Result<Vec<f64>, NumericsError> {
    solve_linear_with(a, b, &NumericsConfig::default())
}

/// Solves `A x = b`, refusing systems whose condition estimate exceeds the limit.
pub fn solve_linear_with(a: &Matrix, b: &[f64], cfg: &NumericsConfig) -> Result<Vec<f64>, NumericsError> {
    if a.rows() != b.len() {
        return Err(NumericsError::Dimension(format!(
            "right-hand side has length {}, matrix has {} rows",
            b.len(),
            a.rows()
        )));
    }
    let lu = Lu::factor(a)?;
    let cond = lu.condition_estimate();
    if !cond.is_finite() || cond > cfg.condition_limit {
        return Err(NumericsError::Singular { condition: cond });
    }
    Ok(lu.solve(b))
}

/// Solves `A X = B` column by column.
pub fn solve_matrix(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    let lu = Lu::factor(a)?;
    let cond = lu.condition_estimate();
    if !cond.is_finite() || cond > NumericsConfig::default().condition_limit {
        return Err(NumericsError::Singular { condition: cond });
    }
    let mut x = Matrix::zeros(a.cols(), b.cols());
    for j in 0..b.cols() {
        let col = lu.solve(&b.col_vec(j));
        for (i, v) in col.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    Ok(x)
}

/// Cholesky factor `L` with `A = L Lᵀ`, or `None` when `A` is not positive definite.
pub fn cholesky(a: &Matrix) -> Option<Matrix> {
    if !a.is_square() {
        return None;
    }
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

/// Relative residual `‖A x − b‖∞ / (‖A‖∞ ‖x‖∞ + ‖b‖∞)`.
pub fn relative_residual(a: &Matrix, x: &[f64], b: &[f64]) -> f64 {
    let r: Vec<f64> = a.matvec(x).iter().zip(b).map(|(ax, bi)| ax - bi).collect();
    norm_inf(&r) / (a.norm_inf() * norm_inf(x) + norm_inf(b)).max(f64::MIN_POSITIVE)
}
