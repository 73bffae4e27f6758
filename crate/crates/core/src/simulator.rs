//! Closed-loop rollout of the receding-horizon feedback law and steady-state analysis.

use serde::Serialize;

use crate::error::SimulationError;
use crate::exec::{par_map, Execution};
use crate::game::{condense, CondensedGame, GameSpec, Mode, Polyhedron, SparseRow};
use crate::matrix::{norm2, norm_inf, Matrix};
use crate::numerics::{min_sym_eigenvalue, solve_matrix, spectral_radius};
use crate::vi::{solve_affine_vi, solve_vgne, SolveStatus, SolverConfig, VgneSolution};

/// Supplies the game played at each time step.
pub trait SpecSource: Sync {
    fn spec_at(&self, t: usize) -> GameSpec;

    /// Whether `spec_at` can change with `t`. Fixed sources are condensed once.
    fn is_time_varying(&self) -> bool {
        false
    }
}

impl SpecSource for GameSpec {
    fn spec_at(&self, _t: usize) -> GameSpec {
        self.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationOptions {
    pub steps: usize,
    pub divergence_threshold: f64,
    pub solver: SolverConfig,
    pub warm_start: bool,
    /// Records `V(x_t) = (x_t − x̄)ᵀP(x_t − x̄)` when set.
    pub lyapunov: Option<(Matrix, Vec<f64>)>,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            steps: 100,
            divergence_threshold: 1e6,
            solver: SolverConfig::default(),
            warm_start: true,
            lyapunov: None,
        }
    }
}

impl SimulationOptions {
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepStats {
    pub residual: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    /// Smallest slack of the applied input over stage-0 boxes and coupling rows.
    pub min_slack: f64,
    /// Largest violation of stage-0 boxes and coupling rows.
    pub max_violation: f64,
    /// Largest violation of the stage-0 coupling rows alone.
    pub max_coupling_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    /// `x_0 … x_T` (shorter if the run diverged or aborted).
    pub states: Vec<Vec<f64>>,
    /// Applied stage-0 inputs, one per transition.
    pub inputs: Vec<Vec<f64>>,
    pub stats: Vec<StepStats>,
    pub lyapunov: Option<Vec<f64>>,
    pub diverged: bool,
}

impl Trajectory {
    fn new(x0: &[f64], lyap: Option<f64>) -> Self {
        Self {
            states: vec![x0.to_vec()],
            inputs: Vec::new(),
            stats: Vec::new(),
            lyapunov: lyap.map(|v| vec![v]),
            diverged: false,
        }
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().expect("trajectory has an initial state")
    }

    pub fn max_violation(&self) -> f64 {
        self.stats.iter().map(|s| s.max_violation).fold(0.0, f64::max)
    }

    pub fn max_coupling_violation(&self) -> f64 {
        self.stats.iter().map(|s| s.max_coupling_violation).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub u_applied: Vec<f64>,
    pub x_next: Vec<f64>,
    pub solution: VgneSolution,
}

/// Stage-0 rows of the decision set: the box and coupling rows that touch
/// only the first stage of each agent.
fn stage_zero_rows(game: &CondensedGame) -> (Polyhedron, Vec<SparseRow>) {
    let mut map = vec![usize::MAX; game.n_vars()];
    for lay in &game.layout {
        for i in 0..lay.n_u {
            map[lay.stacked_offset + i] = lay.input_offset + i;
        }
    }
    let n_u = game.n_u();
    let mut bx = Polyhedron::unbounded(n_u);
    for (idx, &dst) in map.iter().enumerate() {
        if dst != usize::MAX {
            bx.lower[dst] = game.z.lower[idx];
            bx.upper[dst] = game.z.upper[idx];
        }
    }
    let coupling = game
        .z
        .coupling
        .iter()
        .filter(|r| r.entries.iter().all(|(i, _)| map[*i] != usize::MAX))
        .map(|r| SparseRow {
            entries: r.entries.iter().map(|(i, c)| (map[*i], *c)).collect(),
            rhs: r.rhs,
        })
        .collect();
    (bx, coupling)
}

fn stage_zero_stats(game: &CondensedGame, u0: &[f64], sol: &VgneSolution) -> StepStats {
    let (bx, coupling) = stage_zero_rows(game);
    let mut min_slack = f64::INFINITY;
    let mut max_violation: f64 = 0.0;
    for (i, u) in u0.iter().enumerate() {
        for s in [u - bx.lower[i], bx.upper[i] - u] {
            if s.is_finite() {
                min_slack = min_slack.min(s);
                max_violation = max_violation.max(-s);
            }
        }
    }
    let mut max_coupling: f64 = 0.0;
    for r in &coupling {
        let s = r.slack(u0);
        min_slack = min_slack.min(s);
        max_coupling = max_coupling.max(-s);
    }
    StepStats {
        residual: sol.residual,
        iterations: sol.iterations,
        status: sol.status,
        min_slack,
        max_violation: max_violation.max(max_coupling),
        max_coupling_violation: max_coupling,
    }
}

/// Shifts a solution one stage ahead (last stage repeated); duals are kept.
pub fn shift_warm_start(game: &CondensedGame, sol: &VgneSolution) -> VgneSolution {
    let k = game.horizon;
    let mut u = sol.u_star.clone();
    for lay in &game.layout {
        for s in 0..k - 1 {
            for i in 0..lay.n_u {
                u[lay.stacked_offset + s * lay.n_u + i] = sol.u_star[lay.stacked_offset + (s + 1) * lay.n_u + i];
            }
        }
    }
    VgneSolution {
        u_star: u,
        ..sol.clone()
    }
}

/// One application of the feedback law: solve, apply the first stage, propagate.
pub fn rhg_step(
    game: &CondensedGame,
    x: &[f64],
    cfg: &SolverConfig,
    warm: Option<&VgneSolution>,
) -> Result<StepOutcome, SimulationError> {
    let solution = solve_vgne(game, x, cfg, warm)?;
    let u_applied = game.first_stage(&solution.u_star);
    let x_next = game.step(x, &u_applied);
    Ok(StepOutcome {
        u_applied,
        x_next,
        solution,
    })
}

fn lyap_value(opts: &SimulationOptions, x: &[f64]) -> Option<f64> {
    opts.lyapunov.as_ref().map(|(p, xb)| {
        let d: Vec<f64> = x.iter().zip(xb).map(|(a, b)| a - b).collect();
        p.quad_form(&d)
    })
}

/// Rolls out the closed loop for `opts.steps` steps from `x0`.
///
/// Divergence (‖x‖ above the threshold or non-finite) ends the run early and
/// is reported in the trajectory, not as an error. Solver failures abort with
/// the partial trajectory attached.
pub fn simulate(source: &dyn SpecSource, x0: &[f64], opts: &SimulationOptions) -> Result<Trajectory, SimulationError> {
    if opts.steps == 0 {
        return Err(SimulationError::Invalid("simulation needs at least one step".into()));
    }
    if let Some((p, xb)) = &opts.lyapunov {
        if p.rows() != x0.len() || p.cols() != x0.len() || xb.len() != x0.len() {
            return Err(SimulationError::Invalid(
                "Lyapunov matrix and reference must match the state size".into(),
            ));
        }
    }
    let mut spec = source.spec_at(0);
    let mut game = condense(&spec)?;
    if x0.len() != game.n_x() {
        return Err(SimulationError::Invalid(format!(
            "initial state has length {}, game has {} states",
            x0.len(),
            game.n_x()
        )));
    }
    let mut traj = Trajectory::new(x0, lyap_value(opts, x0));
    let mut x = x0.to_vec();
    let mut warm: Option<VgneSolution> = None;

    for t in 0..opts.steps {
        if t > 0 && source.is_time_varying() {
            let next = source.spec_at(t);
            if next != spec {
                spec = next;
                game = condense(&spec).map_err(|e| SimulationError::Step {
                    t,
                    message: e.to_string(),
                    partial: Box::new(traj.clone()),
                })?;
            }
        }
        let w = if opts.warm_start { warm.as_ref() } else { None };
        let out = rhg_step(&game, &x, &opts.solver, w).map_err(|e| SimulationError::Step {
            t,
            message: e.to_string(),
            partial: Box::new(traj.clone()),
        })?;
        let stats = stage_zero_stats(&game, &out.u_applied, &out.solution);
        if out.solution.status != SolveStatus::Converged {
            traj.stats.push(stats);
            traj.inputs.push(out.u_applied);
            return Err(SimulationError::Step {
                t,
                message: format!(
                    "equilibrium solver ended with status {:?} (residual {:e})",
                    out.solution.status, out.solution.residual
                ),
                partial: Box::new(traj),
            });
        }
        traj.stats.push(stats);
        traj.inputs.push(out.u_applied);
        if let (Some(v), Some(lv)) = (lyap_value(opts, &out.x_next), traj.lyapunov.as_mut()) {
            lv.push(v);
        }
        let nrm = norm2(&out.x_next);
        traj.states.push(out.x_next.clone());
        if !nrm.is_finite() || nrm > opts.divergence_threshold {
            traj.diverged = true;
            break;
        }
        warm = Some(shift_warm_start(&game, &out.solution));
        x = out.x_next;
    }
    Ok(traj)
}

/// Independent runs from several initial states.
pub fn simulate_batch(
    source: &dyn SpecSource,
    x0s: &[Vec<f64>],
    opts: &SimulationOptions,
    exec: Execution,
) -> Vec<Result<Trajectory, SimulationError>> {
    par_map(exec, x0s, |x0| simulate(source, x0, opts))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteadyState {
    pub u_s: Vec<f64>,
    pub x_s: Vec<f64>,
    /// Equilibrium solver residual.
    pub residual: f64,
    /// `‖x_s − A x_s − B u_s‖∞`.
    pub dynamics_residual: f64,
    pub mu: f64,
    pub status: SolveStatus,
}

/// Single-stage game obtained by eliminating `x = (I − A)⁻¹ B u`.
///
/// Uses the stage-0 input cost offsets, boxes and coupling rows.
pub fn solve_steady_state(spec: &GameSpec, cfg: &SolverConfig) -> Result<SteadyState, SimulationError> {
    spec.validate()?;
    let layout = spec.layout();
    let n_u: usize = layout.iter().map(|l| l.n_u).sum();
    let a = spec.global_a();
    let rho = spectral_radius(&a)?;
    if rho >= 1.0 {
        return Err(SimulationError::Precondition(format!(
            "steady state needs a stable state matrix, ρ(A) = {rho:.6}"
        )));
    }
    let n_x = a.rows();
    let i_minus_a = Matrix::identity(n_x).sub(&a);
    let solve = |m: &Matrix, rhs: &Matrix| {
        solve_matrix(m, rhs).map_err(|e| SimulationError::Precondition(format!("I − A is singular: {e}")))
    };

    // H_v maps agent v's input to the global steady state.
    let h: Vec<Matrix> = match spec.mode {
        Mode::Coupled => (0..layout.len())
            .map(|v| solve(&i_minus_a, &spec.global_b_agent(v)))
            .collect::<Result<_, _>>()?,
        Mode::Decoupled => spec
            .agents
            .iter()
            .zip(&layout)
            .map(|(ag, lay)| {
                let local = Matrix::identity(lay.n_x).sub(&ag.dynamics.a);
                let hl = solve(&local, &ag.dynamics.b)?;
                let mut full = Matrix::zeros(n_x, lay.n_u);
                full.set_block(lay.state_offset, 0, &hl);
                Ok(full)
            })
            .collect::<Result<_, SimulationError>>()?,
    };

    let mut g_mat = Matrix::zeros(n_u, n_u);
    let mut g = vec![0.0; n_u];
    for (v, lay) in layout.iter().enumerate() {
        let (w, w_lin) = spec.global_w_agent(v);
        let w = w.sym_part();
        let wh = w.matmul(&h[v]);
        let r0 = lay.input_offset;
        for (j, lj) in layout.iter().enumerate() {
            if spec.mode == Mode::Coupled || j == v {
                g_mat.add_block(r0, lj.input_offset, &wh.tr_matmul(&h[j]).scale(2.0));
            }
        }
        let ic = &spec.agents[v].cost.input;
        g_mat.add_block(r0, r0, &ic.q_self);
        for (j, q) in &ic.q_cross {
            g_mat.add_block(r0, layout[*j].input_offset, q);
        }
        let lin = h[v].tr_matvec(&w_lin);
        for i in 0..lay.n_u {
            g[r0 + i] += lin[i] + ic.q_lin[0][i];
        }
    }
    let mu = min_sym_eigenvalue(&g_mat)?;
    if mu <= 1e-10 {
        return Err(SimulationError::Precondition(format!(
            "steady-state game is not strongly monotone (λ_min = {mu:e})"
        )));
    }

    let mut z = Polyhedron::unbounded(n_u);
    for (v, lay) in layout.iter().enumerate() {
        let bx = &spec.constraints.boxes[v][0];
        for i in 0..lay.n_u {
            z.lower[lay.input_offset + i] = bx.lower[i];
            z.upper[lay.input_offset + i] = bx.upper[i];
        }
    }
    if let Some(c) = spec.constraints.coupling.first() {
        for r in 0..c.matrix.rows() {
            z.coupling.push(SparseRow {
                entries: (0..n_u)
                    .filter(|&j| c.matrix[(r, j)] != 0.0)
                    .map(|j| (j, c.matrix[(r, j)]))
                    .collect(),
                rhs: c.rhs[r],
            });
        }
    }
    crate::game::check_feasible(&z, 1e-9)?;

    let sol = solve_affine_vi(&g_mat, &g, &z, cfg, None)?;
    let mut x_s = vec![0.0; n_x];
    for (v, lay) in layout.iter().enumerate() {
        let xv = h[v].matvec(&sol.u_star[lay.input_offset..lay.input_offset + lay.n_u]);
        for (i, val) in xv.iter().enumerate() {
            x_s[i] += val;
        }
    }
    let b = spec.global_b();
    let ax = a.matvec(&x_s);
    let bu = b.matvec(&sol.u_star);
    let dyn_res: Vec<f64> = (0..n_x).map(|i| x_s[i] - ax[i] - bu[i]).collect();
    Ok(SteadyState {
        u_s: sol.u_star,
        x_s,
        residual: sol.residual,
        dynamics_residual: norm_inf(&dyn_res),
        mu,
        status: sol.status,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceMetrics {
    /// `‖x_t − x_s‖₂` for every recorded state.
    pub distances: Vec<f64>,
    pub max_violation: f64,
    pub max_coupling_violation: f64,
}

pub fn convergence_metrics(traj: &Trajectory, steady: &SteadyState) -> Result<ConvergenceMetrics, SimulationError> {
    if traj.states.iter().any(|x| x.len() != steady.x_s.len()) {
        return Err(SimulationError::Invalid(
            "trajectory and steady state differ in state size".into(),
        ));
    }
    let distances = traj
        .states
        .iter()
        .map(|x| norm2(&x.iter().zip(&steady.x_s).map(|(a, b)| a - b).collect::<Vec<_>>()))
        .collect();
    Ok(ConvergenceMetrics {
        distances,
        max_violation: traj.max_violation(),
        max_coupling_violation: traj.max_coupling_violation(),
    })
}
