//! Battery charging game between households sharing a grid connection.
//!
//! Each consumer `v` has state of charge `x^v`, charging input `u^v` and an
//! inflexible demand `d^v`, buying `l^v = u^v + d^v` from the grid. Demand
//! forecasts use the base profile; the stage-0 demand is the realized one, so
//! shocks are not previewed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::GameError;
use crate::game::{
    Agent, AgentDynamics, ConstraintSpec, GameSpec, InputBox, InputCost, Mode, StageCost, StageCoupling,
};
use crate::matrix::Matrix;
use crate::simulator::SpecSource;

pub const DEFAULT_SEED: u64 = 20190502;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryAgent {
    /// Leakage factor.
    pub a: f64,
    /// Charging efficiency.
    pub b: f64,
    pub x_ref: f64,
    /// Coupling price.
    pub gamma1: f64,
    /// Base energy price.
    pub gamma2: f64,
    /// Weight on `(x − x_ref)²`.
    pub gamma3: f64,
    /// Charging rate limit, `|u| ≤ u_max`.
    pub u_max: f64,
    /// Per-household grid limit, `0 ≤ l ≤ l_max`.
    pub l_max: f64,
}

/// Multiplies every agent's realized demand by `factor` for `start ≤ t < end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandShock {
    pub start: usize,
    pub end: usize,
    pub factor: f64,
}

/// Replaces parameters at time `t`. `agent = None` targets every agent.
///
/// Without `preview` an override only changes the realized stage-0 data at
/// `t`. With `preview` it is also used in any forecast that covers `t`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScheduleOverride {
    pub t: usize,
    #[serde(default)]
    pub agent: Option<usize>,
    #[serde(default)]
    pub demand: Option<f64>,
    #[serde(default)]
    pub gamma1: Option<f64>,
    #[serde(default)]
    pub gamma2: Option<f64>,
    #[serde(default)]
    pub gamma3: Option<f64>,
    #[serde(default)]
    pub l_max: Option<f64>,
    #[serde(default)]
    pub grid_limit: Option<f64>,
    #[serde(default)]
    pub preview: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParameterSchedule {
    #[serde(default)]
    pub shock: Option<DemandShock>,
    #[serde(default)]
    pub overrides: Vec<ScheduleOverride>,
}

impl ParameterSchedule {
    pub fn validate(&self, steps: usize, num_agents: usize) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if let Some(s) = &self.shock {
            if s.start >= s.end || s.end > steps {
                errs.push(format!(
                    "schedule.shock: window [{}, {}) must be non-empty and within {steps} steps",
                    s.start, s.end
                ));
            }
            if !(s.factor.is_finite() && s.factor >= 0.0) {
                errs.push(format!(
                    "schedule.shock.factor: must be finite and non-negative, got {}",
                    s.factor
                ));
            }
        }
        for (i, o) in self.overrides.iter().enumerate() {
            if o.t >= steps {
                errs.push(format!(
                    "schedule.overrides[{i}].t: {} is outside the {steps}-step run",
                    o.t
                ));
            }
            if o.agent.is_some_and(|a| a >= num_agents) {
                errs.push(format!(
                    "schedule.overrides[{i}].agent: no agent {:?}",
                    o.agent.unwrap()
                ));
            }
            let vals = [o.demand, o.gamma1, o.gamma2, o.gamma3, o.l_max, o.grid_limit];
            if vals.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
                errs.push(format!(
                    "schedule.overrides[{i}]: values must be finite and non-negative"
                ));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryScenario {
    pub agents: Vec<BatteryAgent>,
    /// Aggregate grid capacity `L_max`.
    pub grid_limit: f64,
    pub horizon: usize,
    /// Base demand per agent, indexed by hour and repeated cyclically.
    pub demand: Vec<Vec<f64>>,
    #[serde(default)]
    pub schedule: ParameterSchedule,
}

/// Smooth daily profile with a morning and an evening peak, in kWh per hour.
/// `peak` scales both peaks relative to the base load.
pub fn double_peak_profile(scale: f64, peak: f64, hours: usize) -> Vec<f64> {
    let bump = |h: f64, c: f64, w: f64| {
        // Wrapped distance on the 24 h circle.
        let d = (h - c).rem_euclid(24.0);
        let d = d.min(24.0 - d);
        (-(d * d) / (2.0 * w * w)).exp()
    };
    (0..hours)
        .map(|h| {
            let h = h as f64;
            scale * (0.5 + peak * (0.9 * bump(h, 7.5, 1.5) + 1.6 * bump(h, 19.0, 2.0)))
        })
        .collect()
}

/// Reads per-agent demand columns from CSV text. A header row is required;
/// a column named `t` or `hour` is ignored.
pub fn demand_from_csv(text: &str) -> Result<Vec<Vec<f64>>, String> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    let cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| !matches!(h.to_ascii_lowercase().as_str(), "t" | "hour"))
        .map(|(i, _)| i)
        .collect();
    if cols.is_empty() {
        return Err("demand CSV has no demand columns".into());
    }
    let mut out = vec![Vec::new(); cols.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        for (k, &c) in cols.iter().enumerate() {
            let field = rec
                .get(c)
                .ok_or_else(|| format!("row {}: missing column {}", line + 2, &headers[c]))?;
            let v: f64 = field
                .parse()
                .map_err(|_| format!("row {}: column {}: not a number: {field:?}", line + 2, &headers[c]))?;
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!(
                    "row {}: column {}: demand must be finite and non-negative",
                    line + 2,
                    &headers[c]
                ));
            }
            out[k].push(v);
        }
    }
    if out[0].is_empty() {
        return Err("demand CSV has no rows".into());
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
struct StageData {
    demand: f64,
    gamma1: f64,
    gamma2: f64,
    gamma3: f64,
    l_max: f64,
}

impl BatteryScenario {
    /// Three households with parameters drawn from the published ranges.
    pub fn builtin(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents: Vec<BatteryAgent> = (0..3)
            .map(|_| BatteryAgent {
                a: rng.gen_range(0.955..=0.98),
                b: rng.gen_range(0.7..=0.9),
                x_ref: rng.gen_range(15.0..=20.0),
                gamma1: rng.gen_range(0.03..=0.05),
                gamma2: rng.gen_range(0.01..=0.2),
                gamma3: rng.gen_range(0.01..=0.02),
                u_max: 7.0,
                l_max: 10.0,
            })
            .collect();
        let demand = (0..agents.len())
            .map(|_| double_peak_profile(rng.gen_range(0.8..=1.2), 0.5, 24))
            .collect();
        Self {
            agents,
            grid_limit: 6.0,
            horizon: 24,
            demand,
            schedule: ParameterSchedule {
                shock: Some(DemandShock {
                    start: 21,
                    end: 25,
                    factor: 2.0,
                }),
                overrides: Vec::new(),
            },
        }
    }

    pub fn num_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        if self.agents.is_empty() {
            errs.push("agents: at least one agent is required".into());
        }
        if self.horizon == 0 {
            errs.push("horizon: must be at least 1".into());
        }
        if !(self.grid_limit.is_finite() && self.grid_limit > 0.0) {
            errs.push(format!("grid_limit: must be positive, got {}", self.grid_limit));
        }
        for (v, a) in self.agents.iter().enumerate() {
            let fields = [
                ("a", a.a),
                ("b", a.b),
                ("x_ref", a.x_ref),
                ("gamma1", a.gamma1),
                ("gamma2", a.gamma2),
                ("gamma3", a.gamma3),
                ("u_max", a.u_max),
                ("l_max", a.l_max),
            ];
            for (name, val) in fields {
                if !val.is_finite() {
                    errs.push(format!("agents[{v}].{name}: must be finite"));
                }
            }
            if !(a.gamma1 > 0.0) {
                errs.push(format!("agents[{v}].gamma1: must be positive, got {}", a.gamma1));
            }
            if a.gamma3 < 0.0 {
                errs.push(format!("agents[{v}].gamma3: must be non-negative, got {}", a.gamma3));
            }
            if a.u_max < 0.0 || a.l_max < 0.0 {
                errs.push(format!("agents[{v}]: u_max and l_max must be non-negative"));
            }
        }
        if self.demand.len() != self.agents.len() {
            errs.push(format!(
                "demand: {} profiles for {} agents",
                self.demand.len(),
                self.agents.len()
            ));
        }
        for (v, d) in self.demand.iter().enumerate() {
            if d.is_empty() {
                errs.push(format!("demand[{v}]: profile is empty"));
            }
            if d.iter().any(|x| !x.is_finite() || *x < 0.0) {
                errs.push(format!("demand[{v}]: values must be finite and non-negative"));
            }
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }

    pub fn base_demand(&self, v: usize, t: usize) -> f64 {
        let d = &self.demand[v];
        d[t % d.len()]
    }

    fn overrides_for(&self, v: usize, t: usize, realized: bool) -> impl Iterator<Item = &ScheduleOverride> {
        self.schedule
            .overrides
            .iter()
            .filter(move |o| o.t == t && o.agent.is_none_or(|a| a == v) && (realized || o.preview))
    }

    /// Demand of agent `v` at time `t`, either realized or as forecast.
    pub fn demand_at(&self, v: usize, t: usize, realized: bool) -> f64 {
        let mut d = self.base_demand(v, t);
        if realized {
            if let Some(s) = &self.schedule.shock {
                if (s.start..s.end).contains(&t) {
                    d *= s.factor;
                }
            }
        }
        for o in self.overrides_for(v, t, realized) {
            if let Some(x) = o.demand {
                d = x;
            }
        }
        d
    }

    fn stage(&self, v: usize, t: usize, realized: bool) -> StageData {
        let a = &self.agents[v];
        let mut s = StageData {
            demand: self.demand_at(v, t, realized),
            gamma1: a.gamma1,
            gamma2: a.gamma2,
            gamma3: a.gamma3,
            l_max: a.l_max,
        };
        for o in self.overrides_for(v, t, realized) {
            s.gamma1 = o.gamma1.unwrap_or(s.gamma1);
            s.gamma2 = o.gamma2.unwrap_or(s.gamma2);
            s.gamma3 = o.gamma3.unwrap_or(s.gamma3);
            s.l_max = o.l_max.unwrap_or(s.l_max);
        }
        s
    }

    fn grid_limit_at(&self, t: usize, realized: bool) -> f64 {
        self.schedule
            .overrides
            .iter()
            .filter(|o| o.t == t && (realized || o.preview))
            .filter_map(|o| o.grid_limit)
            .next_back()
            .unwrap_or(self.grid_limit)
    }

    /// Game from per-stage data `stages[k][v]` and grid limits per stage.
    fn assemble(&self, stages: &[Vec<StageData>], limits: &[f64]) -> GameSpec {
        let m = self.num_agents();
        let k = stages.len();
        // Prices and state weights are taken from stage 0; prices that vary
        // along the horizon enter only through the linear terms.
        let agents = (0..m)
            .map(|v| {
                let p = &self.agents[v];
                let s0 = stages[0][v];
                let q_cross = (0..m)
                    .filter(|&j| j != v)
                    .map(|j| (j, Matrix::from_diag(&[s0.gamma1])))
                    .collect();
                let q_lin = stages
                    .iter()
                    .map(|st| {
                        let total: f64 = st.iter().map(|s| s.demand).sum();
                        vec![st[v].gamma1 * (total + st[v].demand) + st[v].gamma2]
                    })
                    .collect();
                Agent {
                    dynamics: AgentDynamics {
                        a: Matrix::from_diag(&[p.a]),
                        b: Matrix::from_diag(&[p.b]),
                    },
                    cost: StageCost {
                        w: Matrix::from_diag(&[s0.gamma3]),
                        w_lin: vec![-2.0 * s0.gamma3 * p.x_ref],
                        input: InputCost {
                            q_self: Matrix::from_diag(&[2.0 * s0.gamma1]),
                            q_cross,
                            q_lin,
                        },
                    },
                }
            })
            .collect();
        let boxes = (0..m)
            .map(|v| {
                let p = &self.agents[v];
                stages
                    .iter()
                    .map(|st| {
                        let s = st[v];
                        InputBox {
                            lower: vec![(-p.u_max).max(-s.demand)],
                            upper: vec![p.u_max.min(s.l_max - s.demand)],
                        }
                    })
                    .collect()
            })
            .collect();
        let coupling = stages
            .iter()
            .zip(limits)
            .map(|(st, &lim)| {
                let total: f64 = st.iter().map(|s| s.demand).sum();
                StageCoupling {
                    matrix: Matrix::from_rows(&[vec![1.0; m], vec![-1.0; m]]).expect("rectangular"),
                    rhs: vec![lim - total, total],
                }
            })
            .collect();
        debug_assert_eq!(k, self.horizon);
        GameSpec {
            agents,
            horizon: self.horizon,
            constraints: ConstraintSpec { boxes, coupling },
            mode: Mode::Decoupled,
        }
    }

    /// Game solved at time `t`: realized data at stage 0, forecasts afterwards.
    pub fn spec_at_time(&self, t: usize) -> GameSpec {
        let m = self.num_agents();
        let stages: Vec<Vec<StageData>> = (0..self.horizon)
            .map(|k| (0..m).map(|v| self.stage(v, t + k, k == 0)).collect())
            .collect();
        let limits: Vec<f64> = (0..self.horizon).map(|k| self.grid_limit_at(t + k, k == 0)).collect();
        self.assemble(&stages, &limits)
    }

    /// Time-invariant game with every agent's demand at its profile mean.
    pub fn nominal_spec(&self) -> GameSpec {
        let m = self.num_agents();
        let stage: Vec<StageData> = (0..m)
            .map(|v| {
                let d = &self.demand[v];
                let a = &self.agents[v];
                StageData {
                    demand: d.iter().sum::<f64>() / d.len() as f64,
                    gamma1: a.gamma1,
                    gamma2: a.gamma2,
                    gamma3: a.gamma3,
                    l_max: a.l_max,
                }
            })
            .collect();
        let mut spec = self.assemble(&vec![stage; self.horizon], &vec![self.grid_limit; self.horizon]);
        // Collapse identical per-stage data to single entries.
        for ag in &mut spec.agents {
            ag.cost.input.q_lin.truncate(1);
        }
        for b in &mut spec.constraints.boxes {
            b.truncate(1);
        }
        spec.constraints.coupling.truncate(1);
        spec
    }

    /// Aggregate grid load `Σ_v (u^v + d^v)` at time `t` for applied inputs `u`.
    pub fn aggregate_load(&self, t: usize, u: &[f64]) -> f64 {
        (0..self.num_agents()).map(|v| u[v] + self.demand_at(v, t, true)).sum()
    }

    pub fn check(&self) -> Result<(), GameError> {
        self.validate().map_err(|e| GameError::Invalid(e.join("; ")))
    }
}

impl SpecSource for BatteryScenario {
    fn spec_at(&self, t: usize) -> GameSpec {
        self.spec_at_time(t)
    }

    fn is_time_varying(&self) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::condense;

    #[test]
    fn builtin_is_deterministic_and_in_range() {
        let a = BatteryScenario::builtin(DEFAULT_SEED);
        assert_eq!(a, BatteryScenario::builtin(DEFAULT_SEED));
        assert_ne!(a, BatteryScenario::builtin(7));
        for ag in &a.agents {
            assert!((0.955..=0.98).contains(&ag.a));
            assert!((0.7..=0.9).contains(&ag.b));
            assert!((15.0..=20.0).contains(&ag.x_ref));
            assert!((0.03..=0.05).contains(&ag.gamma1));
            assert!((0.01..=0.2).contains(&ag.gamma2));
            assert!((0.01..=0.02).contains(&ag.gamma3));
        }
        assert!(a.validate().is_ok());
    }

    #[test]
    fn shock_is_realized_but_not_forecast() {
        let s = BatteryScenario::builtin(DEFAULT_SEED);
        assert_eq!(s.demand_at(0, 22, true), 2.0 * s.base_demand(0, 22));
        assert_eq!(s.demand_at(0, 22, false), s.base_demand(0, 22));
        assert_eq!(s.demand_at(0, 25, true), s.base_demand(0, 25));

        let spec = s.spec_at_time(21);
        let total: f64 = (0..3).map(|v| s.demand_at(v, 21, true)).sum();
        assert!((spec.constraints.coupling[0].rhs[1] - total).abs() < 1e-12);
        let forecast: f64 = (0..3).map(|v| s.base_demand(v, 22)).sum();
        assert!((spec.constraints.coupling[1].rhs[1] - forecast).abs() < 1e-12);
    }

    #[test]
    fn cost_mapping_matches_finite_differences() {
        // ℓ^v = (γ₁ Σ_j l^j + γ₂) l^v with l = u + d.
        let s = BatteryScenario::builtin(3);
        let spec = s.spec_at_time(5);
        let d: Vec<f64> = (0..3).map(|v| s.demand_at(v, 5, true)).collect();
        let u = [0.3, -0.2, 1.1];
        let cost = |v: usize, u: &[f64]| {
            let l: Vec<f64> = (0..3).map(|j| u[j] + d[j]).collect();
            (s.agents[v].gamma1 * l.iter().sum::<f64>() + s.agents[v].gamma2) * l[v]
        };
        for v in 0..3 {
            let ic = &spec.agents[v].cost.input;
            let mut grad = ic.q_self[(0, 0)] * u[v] + ic.q_lin[0][0];
            for (j, q) in &ic.q_cross {
                grad += q[(0, 0)] * u[*j];
            }
            let h = 1e-6;
            let mut up = u;
            up[v] += h;
            let mut dn = u;
            dn[v] -= h;
            let fd = (cost(v, &up) - cost(v, &dn)) / (2.0 * h);
            assert!((grad - fd).abs() < 1e-7, "agent {v}: {grad} vs {fd}");
        }
    }

    #[test]
    fn nominal_game_is_strongly_monotone() {
        let s = BatteryScenario::builtin(DEFAULT_SEED);
        let g = condense(&s.nominal_spec()).unwrap();
        assert!(g.mu > 0.0);
        assert!(g.z.has_coupling());
    }

    #[test]
    fn schedule_validation() {
        let mut s = BatteryScenario::builtin(DEFAULT_SEED);
        s.schedule.overrides.push(ScheduleOverride {
            t: 100,
            agent: Some(5),
            ..Default::default()
        });
        let errs = s.schedule.validate(48, 3).unwrap_err();
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn overrides_apply_at_their_time() {
        let mut s = BatteryScenario::builtin(DEFAULT_SEED);
        s.schedule.overrides.push(ScheduleOverride {
            t: 3,
            agent: Some(1),
            demand: Some(4.0),
            ..Default::default()
        });
        assert_eq!(s.demand_at(1, 3, true), 4.0);
        assert_eq!(s.demand_at(1, 3, false), s.base_demand(1, 3));
        assert_eq!(s.demand_at(0, 3, true), s.base_demand(0, 3));
    }

    #[test]
    fn csv_demand() {
        let d = demand_from_csv("hour,a,b\n0,1.0,2.0\n1,1.5,2.5\n").unwrap();
        assert_eq!(d, vec![vec![1.0, 1.5], vec![2.0, 2.5]]);
        assert!(demand_from_csv("t,a\n0,x\n").unwrap_err().contains("row 2"));
    }
}
