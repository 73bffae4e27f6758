//! Random game generators and independent reference computations shared by
//! the integration tests. Everything here avoids the crate's own linear
//! algebra so that agreement with the library is meaningful.

#![allow(dead_code)]

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use rhg_core::game::{
    condense, Agent, AgentDynamics, CondensedGame, ConstraintSpec, GameSpec, InputBox, InputCost, Mode, StageCost,
    StageCoupling,
};
use rhg_core::matrix::Matrix;

pub use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, Copy)]
pub struct GenOptions {
    pub mode: Mode,
    pub boxes: bool,
    pub coupling: bool,
    pub max_vars: usize,
    pub max_rows: usize,
    /// Drop all linear cost terms so that the origin is an equilibrium.
    pub zero_linear: bool,
    /// Upper bound on the entries of the state weight factor.
    pub state_weight: f64,
    /// Scale of the random dynamics matrices.
    pub a_scale: f64,
    pub max_agents: usize,
    pub max_horizon: usize,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self {
            mode: Mode::Decoupled,
            boxes: true,
            coupling: true,
            max_vars: 6,
            max_rows: 8,
            zero_linear: false,
            state_weight: 0.7,
            a_scale: 0.6,
            max_agents: 3,
            max_horizon: 3,
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo..hi)
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| uniform(rng, -scale, scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn random_psd(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Matrix {
    let l = random_matrix(rng, n, n, scale);
    l.matmul(&l.transpose()).sym_part()
}

fn random_bound(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.3) {
        f64::INFINITY
    } else {
        uniform(rng, 0.1, 1.0)
    }
}

/// Draws a game that condenses with `μ ≥ 0.05` and fits the size limits.
pub fn random_game(rng: &mut ChaCha8Rng, opts: &GenOptions) -> (GameSpec, CondensedGame) {
    loop {
        let m = rng.gen_range(1..=opts.max_agents);
        let k = rng.gen_range(2..=opts.max_horizon);
        let n_u: Vec<usize> = (0..m).map(|_| rng.gen_range(1..=2)).collect();
        if k * n_u.iter().sum::<usize>() > opts.max_vars {
            continue;
        }
        let n_x: Vec<usize> = match opts.mode {
            Mode::Decoupled => (0..m).map(|_| rng.gen_range(1..=2)).collect(),
            Mode::Coupled => vec![rng.gen_range(1..=3); m],
        };
        let shared_a = random_matrix(rng, n_x[0], n_x[0], opts.a_scale);
        let mut agents = Vec::with_capacity(m);
        for v in 0..m {
            let a = match opts.mode {
                Mode::Coupled => shared_a.clone(),
                Mode::Decoupled => random_matrix(rng, n_x[v], n_x[v], opts.a_scale),
            };
            let b = random_matrix(rng, n_x[v], n_u[v], 1.0);
            let ws = uniform(rng, 0.0, opts.state_weight);
            let w = random_psd(rng, n_x[v], ws);
            let w_lin = if opts.zero_linear {
                vec![0.0; n_x[v]]
            } else {
                (0..n_x[v]).map(|_| uniform(rng, -1.0, 1.0)).collect()
            };
            let mut q_self = random_psd(rng, n_u[v], 0.8);
            q_self.add_to_diag(uniform(rng, 1.0, 3.0));
            let mut q_cross = BTreeMap::new();
            for j in 0..m {
                if j != v {
                    q_cross.insert(j, random_matrix(rng, n_u[v], n_u[j], 0.3));
                }
            }
            let q_lin = if opts.zero_linear {
                vec![vec![0.0; n_u[v]]]
            } else if rng.gen_bool(0.5) {
                vec![(0..n_u[v]).map(|_| uniform(rng, -1.0, 1.0)).collect()]
            } else {
                (0..k)
                    .map(|_| (0..n_u[v]).map(|_| uniform(rng, -1.0, 1.0)).collect())
                    .collect()
            };
            agents.push(Agent {
                dynamics: AgentDynamics { a, b },
                cost: StageCost {
                    w,
                    w_lin,
                    input: InputCost { q_self, q_cross, q_lin },
                },
            });
        }
        let boxes = n_u
            .iter()
            .map(|&n| {
                if opts.boxes {
                    vec![InputBox {
                        lower: (0..n).map(|_| -random_bound(rng)).collect(),
                        upper: (0..n).map(|_| random_bound(rng)).collect(),
                    }]
                } else {
                    vec![InputBox::unbounded(n)]
                }
            })
            .collect();
        let coupling = if opts.coupling && m > 1 {
            let total: usize = n_u.iter().sum();
            vec![StageCoupling {
                matrix: random_matrix(rng, 1, total, 1.0),
                rhs: vec![uniform(rng, 0.1, 1.0)],
            }]
        } else {
            Vec::new()
        };
        let spec = GameSpec {
            agents,
            horizon: k,
            constraints: ConstraintSpec { boxes, coupling },
            mode: opts.mode,
        };
        let Ok(game) = condense(&spec) else { continue };
        if game.mu < 0.05 || dense_constraints(&spec).1.len() > opts.max_rows {
            continue;
        }
        return (spec, game);
    }
}

/// Offsets of `u^v_0` in the stacked vector (agent-major, then stage-major).
pub fn stacked_offsets(spec: &GameSpec) -> Vec<usize> {
    let mut off = Vec::new();
    let mut acc = 0;
    for a in &spec.agents {
        off.push(acc);
        acc += a.dynamics.b.cols() * spec.horizon;
    }
    off
}

fn agent_input(spec: &GameSpec, u: &[f64], v: usize, k: usize) -> Vec<f64> {
    let n = spec.agents[v].dynamics.b.cols();
    let o = stacked_offsets(spec)[v] + k * n;
    u[o..o + n].to_vec()
}

fn stage_input(spec: &GameSpec, u: &[f64], k: usize) -> Vec<f64> {
    (0..spec.agents.len())
        .flat_map(|v| agent_input(spec, u, v, k))
        .collect()
}

fn to_na(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.rows(), m.cols(), |i, j| m[(i, j)])
}

/// Constraint rows `R u ≤ c` read directly off the `GameSpec`.
pub fn dense_constraints(spec: &GameSpec) -> (Vec<Vec<f64>>, Vec<f64>) {
    let k_h = spec.horizon;
    let offsets = stacked_offsets(spec);
    let n: usize = spec.agents.iter().map(|a| a.dynamics.b.cols()).sum::<usize>() * k_h;
    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for (v, boxes) in spec.constraints.boxes.iter().enumerate() {
        let nu = spec.agents[v].dynamics.b.cols();
        for k in 0..k_h {
            let bx = &boxes[if boxes.len() == 1 { 0 } else { k }];
            for i in 0..nu {
                let idx = offsets[v] + k * nu + i;
                if bx.upper[i].is_finite() {
                    let mut r = vec![0.0; n];
                    r[idx] = 1.0;
                    rows.push(r);
                    rhs.push(bx.upper[i]);
                }
                if bx.lower[i].is_finite() {
                    let mut r = vec![0.0; n];
                    r[idx] = -1.0;
                    rows.push(r);
                    rhs.push(-bx.lower[i]);
                }
            }
        }
    }
    let cp = &spec.constraints.coupling;
    if !cp.is_empty() {
        for k in 0..k_h {
            let c = &cp[if cp.len() == 1 { 0 } else { k }];
            for (i, b) in c.rhs.iter().enumerate() {
                let mut r = vec![0.0; n];
                let mut col = 0;
                for (v, a) in spec.agents.iter().enumerate() {
                    let nu = a.dynamics.b.cols();
                    for j in 0..nu {
                        r[offsets[v] + k * nu + j] = c.matrix[(i, col + j)];
                    }
                    col += nu;
                }
                rows.push(r);
                rhs.push(*b);
            }
        }
    }
    (rows, rhs)
}

/// Predicted states `x_0 … x_K` obtained by simulating the dynamics.
pub fn rollout(spec: &GameSpec, x0: &[f64], u: &[f64]) -> Vec<DVector<f64>> {
    let mut xs = vec![DVector::from_column_slice(x0)];
    for k in 0..spec.horizon {
        let x = xs.last().unwrap().clone();
        let next = match spec.mode {
            Mode::Coupled => {
                let mut nx = to_na(&spec.agents[0].dynamics.a) * &x;
                for (v, a) in spec.agents.iter().enumerate() {
                    nx += to_na(&a.dynamics.b) * DVector::from_vec(agent_input(spec, u, v, k));
                }
                nx
            }
            Mode::Decoupled => {
                let mut parts = Vec::new();
                let mut off = 0;
                for (v, a) in spec.agents.iter().enumerate() {
                    let n = a.dynamics.a.rows();
                    let xv = x.rows(off, n).into_owned();
                    let nv = to_na(&a.dynamics.a) * xv
                        + to_na(&a.dynamics.b) * DVector::from_vec(agent_input(spec, u, v, k));
                    parts.extend(nv.iter().copied());
                    off += n;
                }
                DVector::from_vec(parts)
            }
        };
        xs.push(next);
    }
    xs
}

/// Agent `v`'s finite-horizon cost with the dynamics substituted. Predicted
/// states `x_0 … x_K` carry the state weight; inputs run over `0 … K−1`.
pub fn agent_cost(spec: &GameSpec, v: usize, x0: &[f64], u: &[f64]) -> f64 {
    let xs = rollout(spec, x0, u);
    let agent = &spec.agents[v];
    let (off, n) = match spec.mode {
        Mode::Coupled => (0, x0.len()),
        Mode::Decoupled => {
            let off: usize = spec.agents[..v].iter().map(|a| a.dynamics.a.rows()).sum();
            (off, agent.dynamics.a.rows())
        }
    };
    let w = to_na(&agent.cost.w);
    let wl = DVector::from_column_slice(&agent.cost.w_lin);
    let mut total = 0.0;
    for x in &xs {
        let xv = x.rows(off, n).into_owned();
        total += (xv.transpose() * &w * &xv)[(0, 0)] + wl.dot(&xv);
    }
    let ic = &agent.cost.input;
    let qs = to_na(&ic.q_self);
    for k in 0..spec.horizon {
        let uv = DVector::from_vec(agent_input(spec, u, v, k));
        total += 0.5 * (uv.transpose() * &qs * &uv)[(0, 0)];
        for (j, qc) in &ic.q_cross {
            let uj = DVector::from_vec(agent_input(spec, u, *j, k));
            total += (uv.transpose() * to_na(qc) * uj)[(0, 0)];
        }
        let ql = &ic.q_lin[if ic.q_lin.len() == 1 { 0 } else { k }];
        total += DVector::from_column_slice(ql).dot(&uv);
    }
    total
}

/// Stacked gradients `col_v ∇_{u^v} J^v` by central differences.
pub fn fd_pseudo_gradient(spec: &GameSpec, x0: &[f64], u: &[f64], h: f64) -> Vec<f64> {
    let offsets = stacked_offsets(spec);
    let mut out = vec![0.0; u.len()];
    for (v, a) in spec.agents.iter().enumerate() {
        let len = a.dynamics.b.cols() * spec.horizon;
        for i in offsets[v]..offsets[v] + len {
            let mut up = u.to_vec();
            let mut dn = u.to_vec();
            up[i] += h;
            dn[i] -= h;
            out[i] = (agent_cost(spec, v, x0, &up) - agent_cost(spec, v, x0, &dn)) / (2.0 * h);
        }
    }
    out
}

pub fn stage_inputs_of(spec: &GameSpec, u: &[f64]) -> Vec<Vec<f64>> {
    (0..spec.horizon).map(|k| stage_input(spec, u, k)).collect()
}

/// Solves `0 ∈ G u + q + N_Z(u)` with `Z = {R u ≤ c}` by trying every active
/// set and keeping the points that satisfy all KKT conditions.
pub fn active_set_solutions(g: &Matrix, q: &[f64], rows: &[Vec<f64>], rhs: &[f64]) -> Vec<Vec<f64>> {
    let n = q.len();
    let m = rows.len();
    assert!(m <= 16, "enumeration limited to 16 rows");
    let g = to_na(g);
    let mut found = Vec::new();
    for mask in 0u32..(1 << m) {
        let act: Vec<usize> = (0..m).filter(|i| mask & (1 << i) != 0).collect();
        let s = act.len();
        let mut kkt = DMatrix::<f64>::zeros(n + s, n + s);
        kkt.view_mut((0, 0), (n, n)).copy_from(&g);
        let mut b = DVector::<f64>::zeros(n + s);
        for i in 0..n {
            b[i] = -q[i];
        }
        for (r, &i) in act.iter().enumerate() {
            for j in 0..n {
                kkt[(j, n + r)] = rows[i][j];
                kkt[(n + r, j)] = rows[i][j];
            }
            b[n + r] = rhs[i];
        }
        let lu = kkt.full_piv_lu();
        if !lu.is_invertible() {
            continue;
        }
        let Some(sol) = lu.solve(&b) else { continue };
        let u: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let duals_ok = (0..s).all(|r| sol[n + r] >= -1e-10);
        let primal_ok = rows
            .iter()
            .zip(rhs)
            .all(|(r, c)| r.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() <= c + 1e-10);
        if duals_ok && primal_ok {
            found.push(u);
        }
    }
    found
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| uniform(rng, -scale, scale)).collect()
}

/// Largest eigenvalue of a symmetric matrix (nalgebra reference).
pub fn max_eig(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.max()
}

/// Minimum eigenvalue of the symmetric part.
pub fn min_sym_eig(m: &Matrix) -> f64 {
    let a = to_na(m);
    ((&a + a.transpose()) * 0.5).symmetric_eigen().eigenvalues.min()
}

/// Spectral radius via the complex Schur form.
pub fn spectral_radius(m: &Matrix) -> f64 {
    to_na(m)
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// One-dimensional certificate matrix with `P = 1` written out from the
/// scalar data: `F_x[j] = 2 W B Σ_{i=j+1}^{K} A^{i−1−j} A^i`.
pub fn scalar_lmi(a: f64, b: f64, w: f64, mu: f64, k: usize, l1: f64, l2: f64) -> DMatrix<f64> {
    let fx: Vec<f64> = (0..k)
        .map(|j| {
            2.0 * w
                * b
                * ((j + 1)..=k)
                    .map(|i| a.powi((i - 1 - j) as i32) * a.powi(i as i32))
                    .sum::<f64>()
        })
        .collect();
    let mut m = DMatrix::<f64>::zeros(k + 1, k + 1);
    m[(0, 0)] = a * a - 1.0 + l2 / (mu * mu) * fx.iter().map(|f| f * f).sum::<f64>();
    for j in 0..k {
        let bh = if j == 0 { b } else { 0.0 };
        let off = a * bh - 0.5 * l1 * fx[j];
        m[(0, j + 1)] = off;
        m[(j + 1, 0)] = off;
    }
    for i in 0..k {
        for j in 0..k {
            let bi = if i == 0 { b } else { 0.0 };
            let bj = if j == 0 { b } else { 0.0 };
            m[(i + 1, j + 1)] = bi * bj - if i == j { l1 * mu + l2 } else { 0.0 };
        }
    }
    m
}
