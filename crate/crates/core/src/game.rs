//! Multi-agent LTI game data model and condensing into an affine pseudo-gradient.
//!
//! Decision vectors are stacked agent-major then stage-major:
//! `u = col(u^1_0, …, u^1_{K-1}, u^2_0, …, u^M_{K-1})`.
//! Per-stage data (input cost offsets, boxes, coupling rows) is given either as
//! a single entry that applies to every stage or as exactly `K` entries.

use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::GameError;
use crate::matrix::Matrix;
use crate::numerics::{min_sym_eigenvalue, sym_eigen};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Every agent acts on one shared state; each `a` is the global state matrix.
    Coupled,
    /// Each agent owns a local state block; the global state is their concatenation.
    Decoupled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDynamics {
    pub a: Matrix,
    pub b: Matrix,
}

/// Input part of the stage cost. Its gradient with respect to `u^v` is
/// `q_self·u^v + Σ_j q_cross[j]·u^j + q_lin[k]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputCost {
    pub q_self: Matrix,
    #[serde(default)]
    pub q_cross: BTreeMap<usize, Matrix>,
    /// One vector for all stages, or one per stage.
    pub q_lin: Vec<Vec<f64>>,
}

/// Stage cost `xᵀWx + wᵀx + ℓ_u(u^v, u^{-v})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCost {
    pub w: Matrix,
    pub w_lin: Vec<f64>,
    pub input: InputCost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Agent {
    pub dynamics: AgentDynamics,
    pub cost: StageCost,
}

/// Box on one agent's stage input. Infinite bounds mean unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputBox {
    #[serde(with = "lower_bounds")]
    pub lower: Vec<f64>,
    #[serde(with = "upper_bounds")]
    pub upper: Vec<f64>,
}

impl InputBox {
    pub fn symmetric(n: usize, limit: f64) -> Self {
        Self {
            lower: vec![-limit; n],
            upper: vec![limit; n],
        }
    }

    pub fn unbounded(n: usize) -> Self {
        Self::symmetric(n, f64::INFINITY)
    }
}

/// Rows `matrix · u_k ≤ rhs` over the stage input `u_k = col_v(u^v_k)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageCoupling {
    pub matrix: Matrix,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    /// Indexed `[agent][stage]`; each agent lists one box or `K` boxes.
    pub boxes: Vec<Vec<InputBox>>,
    /// Empty, one entry for all stages, or one per stage.
    #[serde(default)]
    pub coupling: Vec<StageCoupling>,
}

impl ConstraintSpec {
    pub fn unconstrained(input_dims: &[usize]) -> Self {
        Self {
            boxes: input_dims.iter().map(|&n| vec![InputBox::unbounded(n)]).collect(),
            coupling: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameSpec {
    pub agents: Vec<Agent>,
    pub horizon: usize,
    pub constraints: ConstraintSpec,
    pub mode: Mode,
}

/// Where each agent's data sits inside the stacked vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentLayout {
    pub n_u: usize,
    /// Offset of `u^v_0` in the stacked horizon vector.
    pub stacked_offset: usize,
    /// Offset of `u^v` in the stage input `u_k`.
    pub input_offset: usize,
    /// Offset and size of the agent's state block (whole state in coupled mode).
    pub state_offset: usize,
    pub n_x: usize,
}

/// One-sided sparse inequality `Σ coeff·u[idx] ≤ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub entries: Vec<(usize, f64)>,
    pub rhs: f64,
}

impl SparseRow {
    pub fn eval(&self, u: &[f64]) -> f64 {
        self.entries.iter().map(|(i, c)| c * u[*i]).sum()
    }

    pub fn slack(&self, u: &[f64]) -> f64 {
        self.rhs - self.eval(u)
    }
}

/// Stacked decision set: a box plus coupling rows `C·u ≤ c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub coupling: Vec<SparseRow>,
}

impl Polyhedron {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            coupling: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn has_coupling(&self) -> bool {
        !self.coupling.is_empty()
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|b| b.is_finite())
    }

    /// All constraints as one-sided rows: finite lower bounds, then finite
    /// upper bounds (both in variable order), then coupling rows.
    pub fn inequality_rows(&self) -> Vec<SparseRow> {
        let mut rows = Vec::new();
        for (i, lo) in self.lower.iter().enumerate() {
            if lo.is_finite() {
                rows.push(SparseRow {
                    entries: vec![(i, -1.0)],
                    rhs: -lo,
                });
            }
        }
        for (i, hi) in self.upper.iter().enumerate() {
            if hi.is_finite() {
                rows.push(SparseRow {
                    entries: vec![(i, 1.0)],
                    rhs: *hi,
                });
            }
        }
        rows.extend(self.coupling.iter().cloned());
        rows
    }

    /// Largest constraint violation (0 when feasible).
    pub fn max_violation(&self, u: &[f64]) -> f64 {
        let mut v: f64 = 0.0;
        for (i, x) in u.iter().enumerate() {
            v = v.max(self.lower[i] - x).max(x - self.upper[i]);
        }
        for r in &self.coupling {
            v = v.max(-r.slack(u));
        }
        v
    }

    /// Smallest slack over all finite constraints (`+∞` when there are none).
    pub fn min_slack(&self, u: &[f64]) -> f64 {
        self.inequality_rows()
            .iter()
            .map(|r| r.slack(u))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn project_box(&self, u: &[f64]) -> Vec<f64> {
        u.iter()
            .enumerate()
            .map(|(i, x)| x.max(self.lower[i]).min(self.upper[i]))
            .collect()
    }
}

/// Local prediction data of one agent in decoupled mode.
#[derive(Debug, Clone)]
pub struct LocalBlocks {
    pub a: Matrix,
    pub b: Matrix,
    /// `B^v Ξ^v`, the local input map acting on the agent's stacked horizon.
    pub b_hat: Matrix,
    pub a_tilde: Matrix,
    pub b_tilde: Matrix,
    /// `2 B̃^vᵀ W̃^v Ã^v`.
    pub f_x: Matrix,
}

/// Affine pseudo-gradient `F(u, x) = G·u + g + F_x·x` with its decision set.
#[derive(Debug, Clone)]
pub struct CondensedGame {
    pub mode: Mode,
    pub horizon: usize,
    pub layout: Vec<AgentLayout>,
    /// Global state matrix and stacked input map `[B^1 … B^M]`.
    pub a: Matrix,
    pub b: Matrix,
    pub a_tilde: Matrix,
    pub b_tilde: Vec<Matrix>,
    pub g_mat: Matrix,
    pub g: Vec<f64>,
    pub f_x: Matrix,
    pub mu: f64,
    pub z: Polyhedron,
    pub xi: Matrix,
    pub local: Option<Vec<LocalBlocks>>,
}

impl CondensedGame {
    pub fn n_x(&self) -> usize {
        self.a.rows()
    }

    /// Total stage-input dimension `Σ n_u^v`.
    pub fn n_u(&self) -> usize {
        self.b.cols()
    }

    /// Length of the stacked decision vector.
    pub fn n_vars(&self) -> usize {
        self.g.len()
    }

    pub fn num_agents(&self) -> usize {
        self.layout.len()
    }

    /// `F_x·x + g`, the affine offset at state `x`.
    pub fn offset(&self, x: &[f64]) -> Vec<f64> {
        let fx = self.f_x.matvec(x);
        fx.iter().zip(&self.g).map(|(a, b)| a + b).collect()
    }

    pub fn pseudo_gradient(&self, u: &[f64], x: &[f64]) -> Vec<f64> {
        let gu = self.g_mat.matvec(u);
        gu.iter().zip(self.offset(x)).map(|(a, b)| a + b).collect()
    }

    /// `B̂ = B Ξ`.
    pub fn b_hat(&self) -> Matrix {
        self.b.matmul(&self.xi)
    }

    /// Stage-0 inputs `Ξ u`.
    pub fn first_stage(&self, u: &[f64]) -> Vec<f64> {
        self.xi.matvec(u)
    }

    pub fn step(&self, x: &[f64], u0: &[f64]) -> Vec<f64> {
        let ax = self.a.matvec(x);
        let bu = self.b.matvec(u0);
        ax.iter().zip(bu).map(|(a, b)| a + b).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondenseConfig {
    /// Games with `μ` at or below this value are rejected.
    pub mu_threshold: f64,
    pub feasibility_tol: f64,
}

impl Default for CondenseConfig {
    fn default() -> Self {
        Self {
            mu_threshold: 1e-10,
            feasibility_tol: 1e-9,
        }
    }
}

impl GameSpec {
    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn input_dims(&self) -> Vec<usize> {
        self.agents.iter().map(|a| a.dynamics.b.cols()).collect()
    }

    pub fn state_dim(&self) -> usize {
        match self.mode {
            Mode::Coupled => self.agents.first().map_or(0, |a| a.dynamics.a.rows()),
            Mode::Decoupled => self.agents.iter().map(|a| a.dynamics.a.rows()).sum(),
        }
    }

    pub fn layout(&self) -> Vec<AgentLayout> {
        let k = self.horizon;
        let mut stacked = 0;
        let mut input = 0;
        let mut state = 0;
        let mut out = Vec::with_capacity(self.agents.len());
        for ag in &self.agents {
            let n_u = ag.dynamics.b.cols();
            let n_x = ag.dynamics.a.rows();
            let state_offset = match self.mode {
                Mode::Coupled => 0,
                Mode::Decoupled => state,
            };
            out.push(AgentLayout {
                n_u,
                stacked_offset: stacked,
                input_offset: input,
                state_offset,
                n_x,
            });
            stacked += k * n_u;
            input += n_u;
            state += n_x;
        }
        out
    }

    /// Global state matrix (block diagonal in decoupled mode).
    pub fn global_a(&self) -> Matrix {
        match self.mode {
            Mode::Coupled => self.agents[0].dynamics.a.clone(),
            Mode::Decoupled => {
                let blocks: Vec<Matrix> = self.agents.iter().map(|a| a.dynamics.a.clone()).collect();
                Matrix::block_diag(&blocks)
            }
        }
    }

    /// Agent `v`'s input map embedded into the global state.
    pub fn global_b_agent(&self, v: usize) -> Matrix {
        let b = &self.agents[v].dynamics.b;
        match self.mode {
            Mode::Coupled => b.clone(),
            Mode::Decoupled => {
                let lay = &self.layout()[v];
                let mut out = Matrix::zeros(self.state_dim(), b.cols());
                out.set_block(lay.state_offset, 0, b);
                out
            }
        }
    }

    pub fn global_b(&self) -> Matrix {
        let blocks: Vec<Matrix> = (0..self.agents.len()).map(|v| self.global_b_agent(v)).collect();
        Matrix::hstack(&blocks)
    }

    /// Agent `v`'s state weight embedded into the global state.
    pub fn global_w_agent(&self, v: usize) -> (Matrix, Vec<f64>) {
        let c = &self.agents[v].cost;
        match self.mode {
            Mode::Coupled => (c.w.clone(), c.w_lin.clone()),
            Mode::Decoupled => {
                let lay = &self.layout()[v];
                let n = self.state_dim();
                let mut w = Matrix::zeros(n, n);
                w.set_block(lay.state_offset, lay.state_offset, &c.w);
                let mut wl = vec![0.0; n];
                wl[lay.state_offset..lay.state_offset + lay.n_x].copy_from_slice(&c.w_lin);
                (w, wl)
            }
        }
    }

    pub fn validate(&self) -> Result<(), GameError> {
        let inv = |s: String| Err(GameError::Invalid(s));
        let m = self.agents.len();
        if m == 0 {
            return inv("game has no agents".into());
        }
        if self.horizon < 2 {
            return inv(format!("horizon must be at least 2, got {}", self.horizon));
        }
        let k = self.horizon;
        let dims = self.input_dims();
        let n_x_global = self.state_dim();
        for (v, ag) in self.agents.iter().enumerate() {
            let (a, b) = (&ag.dynamics.a, &ag.dynamics.b);
            if !a.is_square() || a.rows() == 0 {
                return inv(format!(
                    "agent {v}: A must be square and non-empty, got {}x{}",
                    a.rows(),
                    a.cols()
                ));
            }
            if b.rows() != a.rows() || b.cols() == 0 {
                return inv(format!(
                    "agent {v}: B has shape {}x{}, expected {} rows and at least one column",
                    b.rows(),
                    b.cols(),
                    a.rows()
                ));
            }
            if !a.is_finite() || !b.is_finite() {
                return inv(format!("agent {v}: dynamics contain non-finite entries"));
            }
            if self.mode == Mode::Coupled && (a.rows() != n_x_global || *a != self.agents[0].dynamics.a) {
                return inv(format!(
                    "agent {v}: coupled mode requires every agent to share the same A"
                ));
            }
            let c = &ag.cost;
            let nx = a.rows();
            if c.w.rows() != nx || c.w.cols() != nx {
                return inv(format!(
                    "agent {v}: W has shape {}x{}, expected {nx}x{nx}",
                    c.w.rows(),
                    c.w.cols()
                ));
            }
            if c.w_lin.len() != nx {
                return inv(format!("agent {v}: w has length {}, expected {nx}", c.w_lin.len()));
            }
            if !c.w.is_finite() || c.w_lin.iter().any(|x| !x.is_finite()) {
                return inv(format!("agent {v}: state cost contains non-finite entries"));
            }
            let nu = dims[v];
            let ic = &c.input;
            if ic.q_self.rows() != nu || ic.q_self.cols() != nu || !ic.q_self.is_finite() {
                return inv(format!("agent {v}: Q_self must be a finite {nu}x{nu} matrix"));
            }
            for (j, q) in &ic.q_cross {
                if *j >= m || *j == v {
                    return inv(format!("agent {v}: Q_cross refers to invalid agent {j}"));
                }
                if q.rows() != nu || q.cols() != dims[*j] || !q.is_finite() {
                    return inv(format!(
                        "agent {v}: Q_cross[{j}] must be a finite {nu}x{} matrix",
                        dims[*j]
                    ));
                }
            }
            if ic.q_lin.len() != 1 && ic.q_lin.len() != k {
                return inv(format!(
                    "agent {v}: q must list 1 or {k} stage vectors, got {}",
                    ic.q_lin.len()
                ));
            }
            if ic
                .q_lin
                .iter()
                .any(|q| q.len() != nu || q.iter().any(|x| !x.is_finite()))
            {
                return inv(format!("agent {v}: every q vector must have {nu} finite entries"));
            }
        }

        let cs = &self.constraints;
        if cs.boxes.len() != m {
            return inv(format!(
                "constraints list boxes for {} agents, expected {m}",
                cs.boxes.len()
            ));
        }
        for (v, boxes) in cs.boxes.iter().enumerate() {
            if boxes.len() != 1 && boxes.len() != k {
                return inv(format!(
                    "agent {v}: boxes must list 1 or {k} stages, got {}",
                    boxes.len()
                ));
            }
            for (s, bx) in boxes.iter().enumerate() {
                if bx.lower.len() != dims[v] || bx.upper.len() != dims[v] {
                    return inv(format!("agent {v} stage {s}: box bounds must have {} entries", dims[v]));
                }
                for (i, (lo, hi)) in bx.lower.iter().zip(&bx.upper).enumerate() {
                    if lo.is_nan() || hi.is_nan() || *lo == f64::INFINITY || *hi == f64::NEG_INFINITY {
                        return inv(format!("agent {v} stage {s}: invalid bound at component {i}"));
                    }
                    if lo > hi {
                        return Err(GameError::Infeasible(format!(
                            "agent {v} stage {s} component {i}: lower bound {lo} exceeds upper bound {hi}"
                        )));
                    }
                }
            }
        }
        let nu_total: usize = dims.iter().sum();
        if !cs.coupling.is_empty() && cs.coupling.len() != 1 && cs.coupling.len() != k {
            return inv(format!(
                "coupling must list 0, 1 or {k} stages, got {}",
                cs.coupling.len()
            ));
        }
        for (s, c) in cs.coupling.iter().enumerate() {
            if c.matrix.cols() != nu_total || c.rhs.len() != c.matrix.rows() {
                return inv(format!(
                    "coupling stage {s}: matrix must have {nu_total} columns and one right-hand side per row"
                ));
            }
            if !c.matrix.is_finite() || c.rhs.iter().any(|x| !x.is_finite()) {
                return inv(format!("coupling stage {s}: rows must be finite"));
            }
        }
        Ok(())
    }
}

fn stage_entry<T>(list: &[T], k: usize) -> &T {
    if list.len() == 1 {
        &list[0]
    } else {
        &list[k]
    }
}

/// Stacks `(I, A, …, A^K)` and the impulse-response matrices of each input map.
pub fn build_prediction_matrices(a: &Matrix, b: &[Matrix], k: usize) -> Result<(Matrix, Vec<Matrix>), GameError> {
    if k < 1 {
        return Err(GameError::Invalid("prediction horizon must be at least 1".into()));
    }
    if !a.is_square() {
        return Err(GameError::Invalid(format!(
            "A must be square, got {}x{}",
            a.rows(),
            a.cols()
        )));
    }
    let n = a.rows();
    if let Some((v, bad)) = b.iter().enumerate().find(|(_, bv)| bv.rows() != n) {
        return Err(GameError::Invalid(format!(
            "B[{v}] has {} rows, expected {n}",
            bad.rows()
        )));
    }
    let mut powers = Vec::with_capacity(k + 1);
    powers.push(Matrix::identity(n));
    for i in 1..=k {
        powers.push(powers[i - 1].matmul(a));
    }
    let a_tilde = Matrix::vstack(&powers);
    let b_tilde = b
        .iter()
        .map(|bv| {
            let nu = bv.cols();
            let impulses: Vec<Matrix> = powers[..k].iter().map(|p| p.matmul(bv)).collect();
            let mut bt = Matrix::zeros((k + 1) * n, k * nu);
            for i in 1..=k {
                for j in 0..i {
                    bt.set_block(i * n, j * nu, &impulses[i - 1 - j]);
                }
            }
            bt
        })
        .collect();
    Ok((a_tilde, b_tilde))
}

/// Input cost of the aggregative form `(Σ_j R u^j)ᵀ u^v`.
pub fn aggregative_cost(r: &Matrix, agent: usize, input_dims: &[usize]) -> Result<InputCost, GameError> {
    if !r.is_square() {
        return Err(GameError::Invalid(format!(
            "R must be square, got {}x{}",
            r.rows(),
            r.cols()
        )));
    }
    let nu = r.rows();
    if input_dims.get(agent) != Some(&nu) {
        return Err(GameError::Invalid(format!(
            "R is {nu}x{nu} but agent {agent} has input dimension {:?}",
            input_dims.get(agent)
        )));
    }
    let q_self = r.add(&r.transpose());
    let lambda_min = min_sym_eigenvalue(&q_self)?;
    if lambda_min <= CondenseConfig::default().mu_threshold {
        return Err(GameError::NotMonotone { lambda_min });
    }
    let mut q_cross = BTreeMap::new();
    for (j, &nj) in input_dims.iter().enumerate() {
        if j == agent {
            continue;
        }
        if nj != nu {
            return Err(GameError::Invalid(format!(
                "aggregative cost needs equal input dimensions, agent {j} has {nj} and agent {agent} has {nu}"
            )));
        }
        q_cross.insert(j, r.clone());
    }
    Ok(InputCost {
        q_self,
        q_cross,
        q_lin: vec![vec![0.0; nu]],
    })
}

/// Lifts stage boxes and coupling rows to the stacked horizon.
pub fn assemble_stacked_constraints(spec: &GameSpec) -> Result<Polyhedron, GameError> {
    spec.validate()?;
    let k = spec.horizon;
    let layout = spec.layout();
    let n: usize = layout.iter().map(|l| l.n_u * k).sum();
    let mut poly = Polyhedron::unbounded(n);
    for (v, lay) in layout.iter().enumerate() {
        for s in 0..k {
            let bx = stage_entry(&spec.constraints.boxes[v], s);
            for i in 0..lay.n_u {
                let idx = lay.stacked_offset + s * lay.n_u + i;
                poly.lower[idx] = bx.lower[i];
                poly.upper[idx] = bx.upper[i];
            }
        }
    }
    if !spec.constraints.coupling.is_empty() {
        for s in 0..k {
            let c = stage_entry(&spec.constraints.coupling, s);
            for r in 0..c.matrix.rows() {
                let mut entries = Vec::new();
                for lay in &layout {
                    for i in 0..lay.n_u {
                        let coeff = c.matrix[(r, lay.input_offset + i)];
                        if coeff != 0.0 {
                            entries.push((lay.stacked_offset + s * lay.n_u + i, coeff));
                        }
                    }
                }
                poly.coupling.push(SparseRow { entries, rhs: c.rhs[r] });
            }
        }
    }
    Ok(poly)
}

/// Selection matrix extracting each agent's stage-0 input from the stacked vector.
pub fn selection_matrix(layout: &[AgentLayout], horizon: usize) -> Matrix {
    let nu: usize = layout.iter().map(|l| l.n_u).sum();
    let mut xi = Matrix::zeros(nu, nu * horizon);
    for lay in layout {
        for i in 0..lay.n_u {
            xi[(lay.input_offset + i, lay.stacked_offset + i)] = 1.0;
        }
    }
    xi
}

/// Checks that the decision set is nonempty.
///
/// Boxes are checked exactly. Coupling rows only involve one stage, so each
/// stage is probed separately: every row alone against the box, then cyclic
/// projections onto the box and all rows of the stage.
pub fn check_feasible(poly: &Polyhedron, tol: f64) -> Result<(), GameError> {
    for i in 0..poly.dim() {
        if poly.lower[i] > poly.upper[i] {
            return Err(GameError::Infeasible(format!(
                "variable {i}: lower bound {} exceeds upper bound {}",
                poly.lower[i], poly.upper[i]
            )));
        }
    }
    for (r, row) in poly.coupling.iter().enumerate() {
        let best: f64 = row
            .entries
            .iter()
            .map(|&(i, c)| if c > 0.0 { c * poly.lower[i] } else { c * poly.upper[i] })
            .sum();
        if best > row.rhs + tol {
            return Err(GameError::Infeasible(format!(
                "coupling row {r} cannot be satisfied within the input boxes (best value {best:.6e} > {:.6e})",
                row.rhs
            )));
        }
    }
    if poly.coupling.len() < 2 {
        return Ok(());
    }
    // Group rows into connected components over shared variables.
    let mut groups: Vec<(Vec<usize>, Vec<usize>)> = Vec::new();
    for (r, row) in poly.coupling.iter().enumerate() {
        let vars: Vec<usize> = row.entries.iter().map(|e| e.0).collect();
        let hits: Vec<usize> = groups
            .iter()
            .enumerate()
            .filter(|(_, g)| g.1.iter().any(|v| vars.contains(v)))
            .map(|(i, _)| i)
            .collect();
        let mut merged = (vec![r], vars);
        for &h in hits.iter().rev() {
            let g = groups.remove(h);
            merged.0.extend(g.0);
            merged.1.extend(g.1);
        }
        merged.1.sort_unstable();
        merged.1.dedup();
        groups.push(merged);
    }
    for (rows, vars) in groups.iter().filter(|g| g.0.len() > 1) {
        let mut u: Vec<f64> = vec![0.0; poly.dim()];
        for &i in vars {
            u[i] = 0.0_f64.max(poly.lower[i]).min(poly.upper[i]);
        }
        let mut ok = false;
        for _ in 0..20_000 {
            let mut worst: f64 = 0.0;
            for &r in rows {
                let row = &poly.coupling[r];
                let viol = -row.slack(&u);
                worst = worst.max(viol);
                if viol > 0.0 {
                    let nrm2: f64 = row.entries.iter().map(|e| e.1 * e.1).sum();
                    if nrm2 > 0.0 {
                        for &(i, c) in &row.entries {
                            u[i] -= viol * c / nrm2;
                        }
                    }
                }
                for &(i, _) in &row.entries {
                    u[i] = u[i].max(poly.lower[i]).min(poly.upper[i]);
                }
            }
            if worst <= tol {
                ok = true;
                break;
            }
        }
        if !ok {
            return Err(GameError::Infeasible(format!(
                "no input satisfies coupling rows {rows:?} together with the boxes"
            )));
        }
    }
    Ok(())
}

fn symmetrized_weight(w: &Matrix, agent: usize) -> Result<Matrix, GameError> {
    let asym = w.asymmetry();
    if asym > 1e-12 * w.max_abs().max(1.0) {
        warn!("agent {agent}: state weight W is asymmetric by {asym:e}; using (W+Wᵀ)/2");
    }
    let ws = w.sym_part();
    let lam = sym_eigen(&ws)?.min();
    if lam < -1e-10 * ws.max_abs().max(1.0) {
        return Err(GameError::Invalid(format!(
            "agent {agent}: state weight W is not positive semidefinite (λ_min = {lam:e})"
        )));
    }
    Ok(ws)
}

/// State-cost contribution `(2 B̃ᵀW̃B̃_j, B̃ᵀw̃, 2 B̃ᵀW̃Ã)` for weights replicated over `x_0..x_K`.
fn state_blocks(
    w: &Matrix,
    w_lin: &[f64],
    b_own: &Matrix,
    b_others: &[&Matrix],
    a_tilde: &Matrix,
) -> (Vec<Matrix>, Vec<f64>, Matrix) {
    let n = w.rows();
    let stages = a_tilde.rows() / n;
    let apply_w = |m: &Matrix| {
        let mut out = Matrix::zeros(m.rows(), m.cols());
        for s in 0..stages {
            let blk = w.matmul(&m.block(s * n, 0, n, m.cols()));
            out.set_block(s * n, 0, &blk);
        }
        out
    };
    let wb_own = apply_w(b_own);
    let cross = b_others.iter().map(|bj| wb_own.tr_matmul(bj).scale(2.0)).collect();
    let w_rep: Vec<f64> = (0..stages).flat_map(|_| w_lin.iter().copied()).collect();
    let lin = b_own.tr_matvec(&w_rep);
    let fx = wb_own.tr_matmul(a_tilde).scale(2.0);
    (cross, lin, fx)
}

pub fn condense(spec: &GameSpec) -> Result<CondensedGame, GameError> {
    condense_with(spec, &CondenseConfig::default())
}

/// Condenses dynamics and costs into `F(u, x) = G·u + g + F_x·x`.
///
/// Predicted states `x_0 … x_K` all carry the state weight; `x_0` does not
/// depend on `u` so it only shifts the cost.
pub fn condense_with(spec: &GameSpec, cfg: &CondenseConfig) -> Result<CondensedGame, GameError> {
    spec.validate()?;
    let k = spec.horizon;
    let m = spec.num_agents();
    let layout = spec.layout();
    let n_vars: usize = layout.iter().map(|l| l.n_u * k).sum();
    let n_x = spec.state_dim();
    let a = spec.global_a();
    let b = spec.global_b();
    let b_agents: Vec<Matrix> = (0..m).map(|v| spec.global_b_agent(v)).collect();
    let (a_tilde, b_tilde) = build_prediction_matrices(&a, &b_agents, k)?;

    let weights: Vec<Matrix> = spec
        .agents
        .iter()
        .enumerate()
        .map(|(v, ag)| symmetrized_weight(&ag.cost.w, v))
        .collect::<Result<_, _>>()?;

    let mut g_mat = Matrix::zeros(n_vars, n_vars);
    let mut g = vec![0.0; n_vars];
    let mut f_x = Matrix::zeros(n_vars, n_x);
    let mut local = Vec::new();

    for (v, lay) in layout.iter().enumerate() {
        let ag = &spec.agents[v];
        let rows = lay.stacked_offset;
        match spec.mode {
            Mode::Coupled => {
                let others: Vec<&Matrix> = b_tilde.iter().collect();
                let (cross, lin, fx) = state_blocks(&weights[v], &ag.cost.w_lin, &b_tilde[v], &others, &a_tilde);
                for (j, blk) in cross.iter().enumerate() {
                    g_mat.add_block(rows, layout[j].stacked_offset, blk);
                }
                for (i, val) in lin.iter().enumerate() {
                    g[rows + i] += val;
                }
                f_x.add_block(rows, 0, &fx);
            }
            Mode::Decoupled => {
                let (la, lb) = (&ag.dynamics.a, &ag.dynamics.b);
                let (lat, lbt) = build_prediction_matrices(la, std::slice::from_ref(lb), k)?;
                let lbt = lbt.into_iter().next().expect("one input map");
                let (cross, lin, fx) = state_blocks(&weights[v], &ag.cost.w_lin, &lbt, &[&lbt], &lat);
                g_mat.add_block(rows, rows, &cross[0]);
                for (i, val) in lin.iter().enumerate() {
                    g[rows + i] += val;
                }
                f_x.add_block(rows, lay.state_offset, &fx);
                let mut xi_v = Matrix::zeros(lay.n_u, lay.n_u * k);
                for i in 0..lay.n_u {
                    xi_v[(i, i)] = 1.0;
                }
                local.push(LocalBlocks {
                    a: la.clone(),
                    b: lb.clone(),
                    b_hat: lb.matmul(&xi_v),
                    a_tilde: lat,
                    b_tilde: lbt,
                    f_x: fx,
                });
            }
        }

        let ic = &ag.cost.input;
        for s in 0..k {
            let r0 = rows + s * lay.n_u;
            g_mat.add_block(r0, r0, &ic.q_self);
            for (j, q) in &ic.q_cross {
                let c0 = layout[*j].stacked_offset + s * layout[*j].n_u;
                g_mat.add_block(r0, c0, q);
            }
            for (i, val) in stage_entry(&ic.q_lin, s).iter().enumerate() {
                g[r0 + i] += val;
            }
        }
    }

    let mu = min_sym_eigenvalue(&g_mat)?;
    if mu <= cfg.mu_threshold {
        return Err(GameError::NotMonotone { lambda_min: mu });
    }
    let z = assemble_stacked_constraints(spec)?;
    check_feasible(&z, cfg.feasibility_tol)?;
    let xi = selection_matrix(&layout, k);

    Ok(CondensedGame {
        mode: spec.mode,
        horizon: k,
        layout,
        a,
        b,
        a_tilde,
        b_tilde,
        g_mat,
        g,
        f_x,
        mu,
        z,
        xi,
        local: (spec.mode == Mode::Decoupled).then_some(local),
    })
}

mod lower_bounds {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        let opt: Vec<Option<f64>> = v.iter().map(|x| x.is_finite().then_some(*x)).collect();
        opt.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt = Vec::<Option<f64>>::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::NEG_INFINITY)).collect())
    }
}

mod upper_bounds {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        super::lower_bounds::serialize(v, s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let opt = Vec::<Option<f64>>::deserialize(d)?;
        Ok(opt.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    pub(crate) fn scalar_agent(a: f64, b: f64, w: f64, q: f64) -> Agent {
        Agent {
            dynamics: AgentDynamics {
                a: m(&[&[a]]),
                b: m(&[&[b]]),
            },
            cost: StageCost {
                w: m(&[&[w]]),
                w_lin: vec![0.0],
                input: InputCost {
                    q_self: m(&[&[q]]),
                    q_cross: BTreeMap::new(),
                    q_lin: vec![vec![0.0]],
                },
            },
        }
    }

    #[test]
    fn scalar_prediction_matrices() {
        let (at, bt) = build_prediction_matrices(&m(&[&[0.5]]), &[m(&[&[1.0]])], 3).unwrap();
        assert_eq!(at.col_vec(0), vec![1.0, 0.5, 0.25, 0.125]);
        let expected = m(&[&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0], &[0.5, 1.0, 0.0], &[0.25, 0.5, 1.0]]);
        assert_eq!(bt[0], expected);
    }

    #[test]
    fn horizon_one_and_nilpotent() {
        let a = m(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let b = m(&[&[1.0], &[0.0]]);
        let (at, bt) = build_prediction_matrices(&a, std::slice::from_ref(&b), 1).unwrap();
        assert_eq!(at, Matrix::vstack(&[Matrix::identity(2), a.clone()]));
        assert_eq!(bt[0], Matrix::vstack(&[Matrix::zeros(2, 1), b.clone()]));

        let (at, bt) = build_prediction_matrices(&a, &[b], 4).unwrap();
        for p in 2..=4 {
            assert_eq!(at.block(2 * p, 0, 2, 2).max_abs(), 0.0);
        }
        // Block (i, j) with i - 1 - j >= 2 involves A^2 = 0.
        assert_eq!(bt[0].block(2 * 4, 0, 2, 1).max_abs(), 0.0);
        assert!(build_prediction_matrices(&a, &[m(&[&[1.0]])], 2).is_err());
        assert!(build_prediction_matrices(&a, &[], 0).is_err());
    }

    #[test]
    fn decoupled_state_free_game() {
        let spec = GameSpec {
            agents: vec![scalar_agent(0.0, 1.0, 0.0, 2.0)],
            horizon: 2,
            constraints: ConstraintSpec::unconstrained(&[1]),
            mode: Mode::Coupled,
        };
        let c = condense(&spec).unwrap();
        assert_eq!(c.g_mat, Matrix::from_diag(&[2.0, 2.0]));
        assert_eq!(c.g, vec![0.0, 0.0]);
        assert_eq!(c.f_x.max_abs(), 0.0);
        assert_abs_diff_eq!(c.mu, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn aggregative_gradient_and_rejection() {
        let r = Matrix::from_diag(&[10.0, 0.01]);
        let ic = aggregative_cost(&r, 0, &[2, 2]).unwrap();
        assert_eq!(ic.q_self.matvec(&[1.0, 1.0]), vec![20.0, 0.02]);
        assert_eq!(ic.q_cross[&1], r);

        let bad = m(&[&[1.0, 2.0], &[0.0, 1.0]]);
        assert!(matches!(
            aggregative_cost(&bad, 0, &[2]),
            Err(GameError::NotMonotone { .. })
        ));
    }

    #[test]
    fn two_scalar_aggregative_agents() {
        let dims = [1, 1];
        let agents: Vec<Agent> = (0..2)
            .map(|v| {
                let mut ag = scalar_agent(0.5, 1.0, 0.0, 1.0);
                ag.cost.input = aggregative_cost(&m(&[&[1.0]]), v, &dims).unwrap();
                ag
            })
            .collect();
        let spec = GameSpec {
            agents,
            horizon: 2,
            constraints: ConstraintSpec::unconstrained(&dims),
            mode: Mode::Decoupled,
        };
        let c = condense(&spec).unwrap();
        // Stage-0 blocks of both agents.
        assert_eq!(c.g_mat[(0, 0)], 2.0);
        assert_eq!(c.g_mat[(0, 2)], 1.0);
        assert_eq!(c.g_mat[(2, 0)], 1.0);
        assert_abs_diff_eq!(c.mu, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn stacked_constraint_counts() {
        let mut spec = GameSpec {
            agents: vec![scalar_agent(0.5, 1.0, 0.0, 1.0), scalar_agent(0.5, 1.0, 0.0, 1.0)],
            horizon: 2,
            constraints: ConstraintSpec {
                boxes: vec![vec![InputBox::symmetric(1, 1.0)]; 2],
                coupling: vec![],
            },
            mode: Mode::Decoupled,
        };
        let p = assemble_stacked_constraints(&spec).unwrap();
        assert_eq!(p.inequality_rows().len(), 8);
        assert_eq!(p.coupling.len(), 0);

        spec.constraints.boxes[1][0].lower[0] = 2.0;
        assert!(matches!(
            assemble_stacked_constraints(&spec),
            Err(GameError::Infeasible(_))
        ));
    }

    #[test]
    fn coupling_rows_lift_per_stage() {
        let agents: Vec<Agent> = (0..3).map(|_| scalar_agent(0.9, 1.0, 0.0, 1.0)).collect();
        let d = 1.5;
        let l_max = 10.0;
        let spec = GameSpec {
            agents,
            horizon: 2,
            constraints: ConstraintSpec {
                boxes: vec![vec![InputBox::symmetric(1, 7.0)]; 3],
                coupling: vec![StageCoupling {
                    matrix: m(&[&[1.0, 1.0, 1.0], &[-1.0, -1.0, -1.0]]),
                    rhs: vec![l_max - d, d],
                }],
            },
            mode: Mode::Decoupled,
        };
        let p = assemble_stacked_constraints(&spec).unwrap();
        assert_eq!(p.coupling.len(), 4);
        // Stage 1 row touches the second entry of each agent's block.
        let idx: Vec<usize> = p.coupling[2].entries.iter().map(|e| e.0).collect();
        assert_eq!(idx, vec![1, 3, 5]);
        assert!(check_feasible(&p, 1e-9).is_ok());

        let mut tight = spec.clone();
        tight.constraints.coupling[0].rhs = vec![-1.0, -1.0];
        let p = assemble_stacked_constraints(&tight).unwrap();
        assert!(matches!(check_feasible(&p, 1e-9), Err(GameError::Infeasible(_))));
    }

    #[test]
    fn selection_matrix_picks_stage_zero() {
        let layout = vec![
            AgentLayout {
                n_u: 2,
                stacked_offset: 0,
                input_offset: 0,
                state_offset: 0,
                n_x: 1,
            },
            AgentLayout {
                n_u: 1,
                stacked_offset: 6,
                input_offset: 2,
                state_offset: 0,
                n_x: 1,
            },
        ];
        let xi = selection_matrix(&layout, 3);
        let u: Vec<f64> = (0..9).map(|i| i as f64).collect();
        assert_eq!(xi.matvec(&u), vec![0.0, 1.0, 6.0]);
    }

    #[test]
    fn monotonicity_gate() {
        let spec = GameSpec {
            agents: vec![scalar_agent(0.5, 1.0, 0.0, 0.0)],
            horizon: 2,
            constraints: ConstraintSpec::unconstrained(&[1]),
            mode: Mode::Coupled,
        };
        assert!(matches!(condense(&spec), Err(GameError::NotMonotone { .. })));
    }

    #[test]
    fn asymmetric_weight_is_symmetrized() {
        let mut ag = scalar_agent(0.5, 1.0, 0.0, 1.0);
        ag.dynamics.a = Matrix::from_diag(&[0.5, 0.5]);
        ag.dynamics.b = m(&[&[1.0], &[0.0]]);
        ag.cost.w = m(&[&[1.0, 0.2], &[0.0, 1.0]]);
        ag.cost.w_lin = vec![0.0, 0.0];
        let mut spec = GameSpec {
            agents: vec![ag],
            horizon: 3,
            constraints: ConstraintSpec::unconstrained(&[1]),
            mode: Mode::Coupled,
        };
        let c1 = condense(&spec).unwrap();
        spec.agents[0].cost.w = m(&[&[1.0, 0.1], &[0.1, 1.0]]);
        let c2 = condense(&spec).unwrap();
        assert!(c1.g_mat.sub(&c2.g_mat).max_abs() < 1e-14);
    }

    #[test]
    fn validation_messages_name_the_problem() {
        let mut spec = GameSpec {
            agents: vec![scalar_agent(0.5, 1.0, 0.0, 1.0)],
            horizon: 1,
            constraints: ConstraintSpec::unconstrained(&[1]),
            mode: Mode::Coupled,
        };
        assert!(spec.validate().unwrap_err().to_string().contains("horizon"));
        spec.horizon = 3;
        spec.agents[0].cost.w_lin = vec![];
        assert!(spec.validate().unwrap_err().to_string().contains("w has length"));
    }

    #[test]
    fn bounds_roundtrip_through_json() {
        let bx = InputBox {
            lower: vec![f64::NEG_INFINITY, -1.0],
            upper: vec![2.0, f64::INFINITY],
        };
        let s = serde_json::to_string(&bx).unwrap();
        assert_eq!(s, r#"{"lower":[null,-1.0],"upper":[2.0,null]}"#);
        let back: InputBox = serde_json::from_str(&s).unwrap();
        assert_eq!(back, bx);
    }
}
