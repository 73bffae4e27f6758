//! Scenario files and the built-in case studies.
//!
//! A scenario is a JSON document tagged by `"model"`: either a general
//! linear-quadratic game (`"game"`) or the battery charging game
//! (`"battery"`). Matrices are nested arrays of rows. Infinite box bounds are
//! written as `null`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::battery::{demand_from_csv, BatteryAgent, BatteryScenario, ParameterSchedule, DEFAULT_SEED};
use crate::certificates::SearchOptions;
use crate::error::ScenarioError;
use crate::game::{
    aggregative_cost, Agent, AgentDynamics, ConstraintSpec, GameSpec, InputBox, InputCost, Mode, StageCost,
    StageCoupling,
};
use crate::matrix::Matrix;
use crate::simulator::SpecSource;

pub const BUILTINS: [&str; 3] = ["illustrative_unstable", "illustrative_stable", "battery_charging"];

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum CostForm {
    /// Gradient `q_self·u^v + Σ_j q_cross[j]·u^j + q_lin`.
    Quadratic {
        q_self: Rows,
        #[serde(default, with = "agent_keys")]
        q_cross: BTreeMap<usize, Rows>,
        #[serde(default)]
        q_lin: Vec<Vec<f64>>,
    },
    /// Cost `(Σ_j R u^j)ᵀ u^v` plus optional linear terms.
    Aggregative {
        r: Rows,
        #[serde(default)]
        q_lin: Vec<Vec<f64>>,
    },
}

/// JSON object keys are strings; this maps them to agent indices. Needed
/// because the flattened model enum hides the key type from serde_json.
mod agent_keys {
    use std::collections::BTreeMap;

    use serde::de::Error;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use super::Rows;

    pub fn serialize<S: Serializer>(m: &BTreeMap<usize, Rows>, s: S) -> Result<S::Ok, S::Error> {
        m.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<usize, Rows>, D::Error> {
        BTreeMap::<String, Rows>::deserialize(d)?
            .into_iter()
            .map(|(k, v)| {
                k.trim()
                    .parse::<usize>()
                    .map(|i| (i, v))
                    .map_err(|_| D::Error::custom(format!("q_cross key '{k}' is not an agent index")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentDoc {
    pub a: Rows,
    pub b: Rows,
    pub w: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_lin: Option<Vec<f64>>,
    pub cost: CostForm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CouplingDoc {
    pub matrix: Rows,
    pub rhs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConstraintDoc {
    /// `[agent][stage]`; a missing agent entry means unbounded.
    #[serde(default)]
    pub boxes: Vec<Vec<InputBox>>,
    #[serde(default)]
    pub coupling: Vec<CouplingDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GameDoc {
    pub agents: Vec<AgentDoc>,
    pub horizon: usize,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub constraints: ConstraintDoc,
}

fn default_mode() -> Mode {
    Mode::Decoupled
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatteryDoc {
    pub agents: Vec<BatteryAgent>,
    pub grid_limit: f64,
    #[serde(default = "default_battery_horizon")]
    pub horizon: usize,
    /// Per-agent hourly profiles. Exactly one of `demand` and `demand_csv` is required.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand: Option<Vec<Vec<f64>>>,
    /// CSV path, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demand_csv: Option<String>,
    #[serde(default)]
    pub schedule: ParameterSchedule,
}

fn default_battery_horizon() -> usize {
    24
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum ModelDoc {
    Game(GameDoc),
    Battery(BatteryDoc),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default = "default_threshold")]
    pub divergence_threshold: f64,
}

fn default_steps() -> usize {
    100
}

fn default_threshold() -> f64 {
    1e6
}

impl Default for SimulationSettings {
    fn default() -> Self {
        Self {
            x0: None,
            steps: default_steps(),
            seed: None,
            divergence_threshold: default_threshold(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateSettings {
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_budget")]
    pub budget: usize,
}

fn default_delta() -> f64 {
    SearchOptions::default().delta
}

fn default_budget() -> usize {
    SearchOptions::default().budget
}

impl Default for CertificateSettings {
    fn default() -> Self {
        Self {
            delta: default_delta(),
            budget: default_budget(),
        }
    }
}

impl CertificateSettings {
    pub fn search_options(&self) -> SearchOptions {
        SearchOptions {
            delta: self.delta,
            budget: self.budget,
            ..SearchOptions::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(flatten)]
    pub model: ModelDoc,
    #[serde(default)]
    pub simulation: SimulationSettings,
    #[serde(default)]
    pub certificate: CertificateSettings,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    Game(GameSpec),
    Battery(BatteryScenario),
}

/// A validated scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub model: Model,
    pub simulation: SimulationSettings,
    pub certificate: CertificateSettings,
}

impl Scenario {
    /// The game used for certificates and the steady state. For the battery
    /// model this is the time-invariant game at mean demand.
    pub fn nominal_spec(&self) -> GameSpec {
        match &self.model {
            Model::Game(s) => s.clone(),
            Model::Battery(b) => b.nominal_spec(),
        }
    }

    pub fn source(&self) -> &dyn SpecSource {
        match &self.model {
            Model::Game(s) => s,
            Model::Battery(b) => b,
        }
    }

    pub fn battery(&self) -> Option<&BatteryScenario> {
        match &self.model {
            Model::Battery(b) => Some(b),
            Model::Game(_) => None,
        }
    }
}

struct Diagnostics(Vec<String>);

impl Diagnostics {
    fn push(&mut self, msg: String) {
        self.0.push(msg);
    }

    /// Rectangular, finite, non-empty; returns `(rows, cols)` when usable.
    fn matrix(&mut self, field: &str, m: &Rows) -> Option<(usize, usize)> {
        if m.is_empty() || m[0].is_empty() {
            self.push(format!("{field}: matrix must have at least one row and one column"));
            return None;
        }
        let cols = m[0].len();
        let mut ok = true;
        for (i, r) in m.iter().enumerate() {
            if r.len() != cols {
                self.push(format!("{field}: row {i} has {} entries, expected {cols}", r.len()));
                ok = false;
            }
            if r.iter().any(|x| !x.is_finite()) {
                self.push(format!("{field}: row {i} contains a non-finite entry"));
                ok = false;
            }
        }
        ok.then_some((m.len(), cols))
    }

    fn expect_shape(&mut self, field: &str, m: &Rows, rows: usize, cols: usize) -> bool {
        match self.matrix(field, m) {
            Some((r, c)) if (r, c) == (rows, cols) => true,
            Some((r, c)) => {
                self.push(format!("{field}: expected {rows}x{cols}, got {r}x{c}"));
                false
            }
            None => false,
        }
    }

    fn vector(&mut self, field: &str, v: &[f64], len: usize) -> bool {
        if v.len() != len {
            self.push(format!("{field}: expected length {len}, got {}", v.len()));
            false
        } else if v.iter().any(|x| !x.is_finite()) {
            self.push(format!("{field}: contains a non-finite entry"));
            false
        } else {
            true
        }
    }

    fn staged(&mut self, field: &str, count: usize, horizon: usize) {
        if count != 1 && count != horizon {
            self.push(format!(
                "{field}: give one entry for all stages or exactly {horizon}, got {count}"
            ));
        }
    }
}

fn to_matrix(rows: &Rows) -> Matrix {
    Matrix::from_rows(rows).expect("validated")
}

impl GameDoc {
    /// Checks every field and collects all problems before building the `GameSpec`.
    pub fn to_spec(&self) -> Result<GameSpec, ScenarioError> {
        let mut d = Diagnostics(Vec::new());
        if self.agents.is_empty() {
            d.push("agents: at least one agent is required".into());
        }
        if self.horizon == 0 {
            d.push("horizon: must be at least 1".into());
        }
        let m = self.agents.len();
        let mut n_x = Vec::with_capacity(m);
        let mut n_u = Vec::with_capacity(m);
        for (v, ag) in self.agents.iter().enumerate() {
            let p = format!("agents[{v}]");
            let a = d.matrix(&format!("{p}.a"), &ag.a);
            if let Some((r, c)) = a {
                if r != c {
                    d.push(format!("{p}.a: must be square, got {r}x{c}"));
                }
            }
            let b = d.matrix(&format!("{p}.b"), &ag.b);
            if let (Some((ra, _)), Some((rb, _))) = (a, b) {
                if ra != rb {
                    d.push(format!("{p}.b: has {rb} rows but a has {ra}"));
                }
            }
            n_x.push(a.map(|x| x.0));
            n_u.push(b.map(|x| x.1));
        }
        let dims_known = n_x.iter().all(Option::is_some) && n_u.iter().all(Option::is_some);
        let n_x: Vec<usize> = n_x.into_iter().map(|x| x.unwrap_or(0)).collect();
        let n_u: Vec<usize> = n_u.into_iter().map(|x| x.unwrap_or(0)).collect();
        if self.mode == Mode::Coupled && dims_known && n_x.windows(2).any(|w| w[0] != w[1]) {
            d.push("agents: coupled mode needs every agent to share the state dimension".into());
        }

        for (v, ag) in self.agents.iter().enumerate() {
            let p = format!("agents[{v}]");
            let nx = n_x[v];
            let nu = n_u[v];
            if dims_known {
                d.expect_shape(&format!("{p}.w"), &ag.w, nx, nx);
                if let Some(wl) = &ag.w_lin {
                    d.vector(&format!("{p}.w_lin"), wl, nx);
                }
            }
            let q_lin = match &ag.cost {
                CostForm::Quadratic { q_lin, .. } | CostForm::Aggregative { q_lin, .. } => q_lin,
            };
            if !q_lin.is_empty() {
                d.staged(&format!("{p}.cost.q_lin"), q_lin.len(), self.horizon);
                if dims_known {
                    for (k, q) in q_lin.iter().enumerate() {
                        d.vector(&format!("{p}.cost.q_lin[{k}]"), q, nu);
                    }
                }
            }
            match &ag.cost {
                CostForm::Quadratic { q_self, q_cross, .. } => {
                    if dims_known {
                        d.expect_shape(&format!("{p}.cost.q_self"), q_self, nu, nu);
                        for (j, q) in q_cross {
                            if *j >= m || *j == v {
                                d.push(format!("{p}.cost.q_cross: key {j} is not another agent"));
                            } else {
                                d.expect_shape(&format!("{p}.cost.q_cross.{j}"), q, nu, n_u[*j]);
                            }
                        }
                    }
                }
                CostForm::Aggregative { r, .. } => {
                    if dims_known {
                        d.expect_shape(&format!("{p}.cost.r"), r, nu, nu);
                        if let Some((j, _)) = n_u.iter().enumerate().find(|(_, &x)| x != nu) {
                            d.push(format!(
                                "{p}.cost: aggregative form needs equal input sizes, agent {j} differs"
                            ));
                        }
                    }
                }
            }
        }

        let c = &self.constraints;
        if !c.boxes.is_empty() && c.boxes.len() != m {
            d.push(format!("constraints.boxes: {} entries for {m} agents", c.boxes.len()));
        }
        for (v, list) in c.boxes.iter().enumerate() {
            d.staged(&format!("constraints.boxes[{v}]"), list.len(), self.horizon);
            if dims_known && v < m {
                for (k, bx) in list.iter().enumerate() {
                    let f = format!("constraints.boxes[{v}][{k}]");
                    if bx.lower.len() != n_u[v] || bx.upper.len() != n_u[v] {
                        d.push(format!("{f}: bounds must have length {}", n_u[v]));
                    } else if bx
                        .lower
                        .iter()
                        .zip(&bx.upper)
                        .any(|(l, u)| l > u || l.is_nan() || u.is_nan())
                    {
                        d.push(format!("{f}: lower bound exceeds upper bound"));
                    }
                }
            }
        }
        if !c.coupling.is_empty() {
            d.staged("constraints.coupling", c.coupling.len(), self.horizon);
        }
        let total_u: usize = n_u.iter().sum();
        for (k, cp) in c.coupling.iter().enumerate() {
            let f = format!("constraints.coupling[{k}]");
            if let Some((r, cols)) = d.matrix(&format!("{f}.matrix"), &cp.matrix) {
                if dims_known && cols != total_u {
                    d.push(format!("{f}.matrix: expected {total_u} columns, got {cols}"));
                }
                d.vector(&format!("{f}.rhs"), &cp.rhs, r);
            }
        }
        if !d.0.is_empty() {
            return Err(ScenarioError::Validation(d.0));
        }

        let agents = self
            .agents
            .iter()
            .enumerate()
            .map(|(v, ag)| {
                let input = match &ag.cost {
                    CostForm::Quadratic { q_self, q_cross, q_lin } => InputCost {
                        q_self: to_matrix(q_self),
                        q_cross: q_cross.iter().map(|(j, q)| (*j, to_matrix(q))).collect(),
                        q_lin: if q_lin.is_empty() {
                            vec![vec![0.0; n_u[v]]]
                        } else {
                            q_lin.clone()
                        },
                    },
                    CostForm::Aggregative { r, q_lin } => {
                        let mut ic = aggregative_cost(&to_matrix(r), v, &n_u)?;
                        if !q_lin.is_empty() {
                            ic.q_lin = q_lin.clone();
                        }
                        ic
                    }
                };
                Ok(Agent {
                    dynamics: AgentDynamics {
                        a: to_matrix(&ag.a),
                        b: to_matrix(&ag.b),
                    },
                    cost: StageCost {
                        w: to_matrix(&ag.w),
                        w_lin: ag.w_lin.clone().unwrap_or_else(|| vec![0.0; n_x[v]]),
                        input,
                    },
                })
            })
            .collect::<Result<Vec<_>, ScenarioError>>()?;
        let boxes = if c.boxes.is_empty() {
            n_u.iter().map(|&n| vec![InputBox::unbounded(n)]).collect()
        } else {
            c.boxes.clone()
        };
        let spec = GameSpec {
            agents,
            horizon: self.horizon,
            constraints: ConstraintSpec {
                boxes,
                coupling: c
                    .coupling
                    .iter()
                    .map(|cp| StageCoupling {
                        matrix: to_matrix(&cp.matrix),
                        rhs: cp.rhs.clone(),
                    })
                    .collect(),
            },
            mode: self.mode,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Quadratic-form document describing `spec` exactly.
    pub fn from_spec(spec: &GameSpec) -> Self {
        Self {
            agents: spec
                .agents
                .iter()
                .map(|ag| AgentDoc {
                    a: ag.dynamics.a.to_rows(),
                    b: ag.dynamics.b.to_rows(),
                    w: ag.cost.w.to_rows(),
                    w_lin: Some(ag.cost.w_lin.clone()),
                    cost: CostForm::Quadratic {
                        q_self: ag.cost.input.q_self.to_rows(),
                        q_cross: ag.cost.input.q_cross.iter().map(|(j, q)| (*j, q.to_rows())).collect(),
                        q_lin: ag.cost.input.q_lin.clone(),
                    },
                })
                .collect(),
            horizon: spec.horizon,
            mode: spec.mode,
            constraints: ConstraintDoc {
                boxes: spec.constraints.boxes.clone(),
                coupling: spec
                    .constraints
                    .coupling
                    .iter()
                    .map(|c| CouplingDoc {
                        matrix: c.matrix.to_rows(),
                        rhs: c.rhs.clone(),
                    })
                    .collect(),
            },
        }
    }
}

impl BatteryDoc {
    pub fn to_scenario(&self, base_dir: Option<&Path>) -> Result<BatteryScenario, ScenarioError> {
        let demand = match (&self.demand, &self.demand_csv) {
            (Some(d), None) => d.clone(),
            (None, Some(p)) => {
                let path = base_dir.map_or_else(|| Path::new(p).to_path_buf(), |b| b.join(p));
                let text = std::fs::read_to_string(&path).map_err(|e| ScenarioError::Io {
                    path: path.display().to_string(),
                    error: e,
                })?;
                demand_from_csv(&text).map_err(|e| ScenarioError::Validation(vec![format!("demand_csv: {e}")]))?
            }
            _ => {
                return Err(ScenarioError::Validation(vec![
                    "demand: give exactly one of `demand` and `demand_csv`".into(),
                ]))
            }
        };
        let s = BatteryScenario {
            agents: self.agents.clone(),
            grid_limit: self.grid_limit,
            horizon: self.horizon,
            demand,
            schedule: self.schedule.clone(),
        };
        s.validate().map_err(ScenarioError::Validation)?;
        Ok(s)
    }

    pub fn from_scenario(s: &BatteryScenario) -> Self {
        Self {
            agents: s.agents.clone(),
            grid_limit: s.grid_limit,
            horizon: s.horizon,
            demand: Some(s.demand.clone()),
            demand_csv: None,
            schedule: s.schedule.clone(),
        }
    }
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Validates the document. `base_dir` resolves relative CSV paths.
    pub fn resolve(&self, base_dir: Option<&Path>) -> Result<Scenario, ScenarioError> {
        let model = match &self.model {
            ModelDoc::Game(g) => Model::Game(g.to_spec()?),
            ModelDoc::Battery(b) => Model::Battery(b.to_scenario(base_dir)?),
        };
        let mut errs = Vec::new();
        let sim = &self.simulation;
        if sim.steps == 0 {
            errs.push("simulation.steps: must be at least 1".to_string());
        }
        if !(sim.divergence_threshold > 0.0) {
            errs.push("simulation.divergence_threshold: must be positive".to_string());
        }
        let n_x = match &model {
            Model::Game(s) => s.state_dim(),
            Model::Battery(b) => {
                if let Err(e) = b.schedule.validate(sim.steps, b.num_agents()) {
                    errs.extend(e);
                }
                b.num_agents()
            }
        };
        if let Some(x0) = &sim.x0 {
            if x0.len() != n_x {
                errs.push(format!("simulation.x0: expected length {n_x}, got {}", x0.len()));
            } else if x0.iter().any(|x| !x.is_finite()) {
                errs.push("simulation.x0: contains a non-finite entry".to_string());
            }
        }
        if !(self.certificate.delta > 0.0) {
            errs.push("certificate.delta: must be positive".to_string());
        }
        if self.certificate.budget == 0 {
            errs.push("certificate.budget: must be at least 1".to_string());
        }
        if !errs.is_empty() {
            return Err(ScenarioError::Validation(errs));
        }
        Ok(Scenario {
            name: self.name.clone().unwrap_or_else(|| "scenario".into()),
            model,
            simulation: self.simulation.clone(),
            certificate: self.certificate,
        })
    }
}

fn diag(v: &[f64]) -> Rows {
    Matrix::from_diag(v).to_rows()
}

/// Two agents with stable local dynamics and an aggregative input cost.
/// `weight` sets the large entry of each state weight.
pub fn illustrative_doc(weight: f64) -> GameDoc {
    let agent = |a: Rows, b: Rows, w: Rows, r: Rows| AgentDoc {
        a,
        b,
        w,
        w_lin: None,
        cost: CostForm::Aggregative { r, q_lin: Vec::new() },
    };
    GameDoc {
        agents: vec![
            agent(
                vec![vec![0.6, 0.3], vec![0.3, 0.7]],
                vec![vec![10.0, 5.5], vec![11.0, 4.0]],
                diag(&[weight, 0.05]),
                diag(&[10.0, 0.01]),
            ),
            agent(
                vec![vec![0.6, 0.1], vec![0.8, 0.1]],
                vec![vec![13.0, 19.0], vec![6.5, 10.0]],
                diag(&[0.05, weight]),
                diag(&[0.01, 20.0]),
            ),
        ],
        horizon: 10,
        mode: Mode::Decoupled,
        constraints: ConstraintDoc::default(),
    }
}

/// Initial state used by the illustrative builtins.
pub const ILLUSTRATIVE_X0: [f64; 4] = [10.0, -5.0, -10.0, 5.0];

/// The scenario document behind a builtin name.
pub fn builtin_file(name: &str, seed: Option<u64>) -> Result<ScenarioFile, ScenarioError> {
    let (model, simulation) = match name {
        "illustrative_unstable" | "illustrative_stable" => {
            let unstable = name == "illustrative_unstable";
            (
                ModelDoc::Game(illustrative_doc(if unstable { 20.0 } else { 1.0 })),
                SimulationSettings {
                    x0: Some(ILLUSTRATIVE_X0.to_vec()),
                    steps: if unstable { 200 } else { 100 },
                    seed,
                    divergence_threshold: default_threshold(),
                },
            )
        }
        "battery_charging" => {
            let seed = seed.unwrap_or(DEFAULT_SEED);
            let s = BatteryScenario::builtin(seed);
            let n = s.num_agents();
            (
                ModelDoc::Battery(BatteryDoc::from_scenario(&s)),
                SimulationSettings {
                    x0: Some(vec![0.0; n]),
                    steps: 48,
                    seed: Some(seed),
                    divergence_threshold: default_threshold(),
                },
            )
        }
        _ => {
            return Err(ScenarioError::UnknownBuiltin {
                name: name.to_string(),
                options: BUILTINS.iter().map(|s| s.to_string()).collect(),
            })
        }
    };
    Ok(ScenarioFile {
        name: Some(name.to_string()),
        model,
        simulation,
        certificate: CertificateSettings::default(),
    })
}

pub fn load_builtin(name: &str, seed: Option<u64>) -> Result<Scenario, ScenarioError> {
    builtin_file(name, seed)?.resolve(None)
}

/// Loads a builtin by name, or otherwise a JSON file. `seed` overrides the
/// seed of builtins that draw random parameters.
pub fn load_scenario(path_or_name: &str, seed: Option<u64>) -> Result<Scenario, ScenarioError> {
    if BUILTINS.contains(&path_or_name) {
        return load_builtin(path_or_name, seed);
    }
    let path = Path::new(path_or_name);
    if !path.exists() && !path_or_name.contains(['/', '.', '\\']) {
        return Err(ScenarioError::UnknownBuiltin {
            name: path_or_name.to_string(),
            options: BUILTINS.iter().map(|s| s.to_string()).collect(),
        });
    }
    let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
        path: path.display().to_string(),
        error: e,
    })?;
    let mut file = ScenarioFile::from_json(&text)?;
    if seed.is_some() {
        file.simulation.seed = seed;
    }
    if file.name.is_none() {
        file.name = path.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    file.resolve(path.parent())
}
