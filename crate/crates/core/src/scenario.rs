//! Scenario files: a JSON description of one experiment (domain,
//! coefficients, data, simulation and FEM settings, task), its
//! validation, and the dispatch that turns it into a summary and CSV
//! artifacts. Also the expected-value sidecars used by the corpus.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::coefficients::{CoefficientField, CoefficientSpec};
use crate::diffusion::{SimConfig, Trackers};
use crate::expr::{ExprError, ExprParser, Expression, Var};
use crate::fem::{triangulate, DiscreteField, FemError, FemSystem};
use crate::geometry::{self, BoundaryPoint, Domain, Point, ShapeSpec, Side};
use crate::harmonic::{self, Binning, Estimate, HarmonicError, SoftConfig, REGULARITY_SCHEDULE};
use crate::semilinear::{self, radial::RadialProblem, MeasureData, SemilinearConfig, SemilinearError};
use crate::trace::{self, MartinMetric, NormConfig, TraceConfig, TraceError};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Validation { path: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Io(String),
}

impl ScenarioError {
    fn at(path: impl Into<String>, message: impl ToString) -> Self {
        ScenarioError::Validation { path: path.into(), message: message.to_string() }
    }

    /// Process exit code for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            ScenarioError::Validation { .. } | ScenarioError::Io(_) => 2,
            ScenarioError::Numerical(_) => 3,
        }
    }
}

impl From<HarmonicError> for ScenarioError {
    fn from(e: HarmonicError) -> Self {
        match e {
            HarmonicError::Precondition(m) => ScenarioError::at("params", m),
            e => ScenarioError::Numerical(e.to_string()),
        }
    }
}

impl From<FemError> for ScenarioError {
    fn from(e: FemError) -> Self {
        ScenarioError::Numerical(e.to_string())
    }
}

impl From<TraceError> for ScenarioError {
    fn from(e: TraceError) -> Self {
        match e {
            TraceError::Harmonic(h) => h.into(),
            TraceError::Invalid(m) => ScenarioError::at("params", m),
            e => ScenarioError::Numerical(e.to_string()),
        }
    }
}

impl From<SemilinearError> for ScenarioError {
    fn from(e: SemilinearError) -> Self {
        match e {
            e @ SemilinearError::NotMonotone { .. } => ScenarioError::at("f", e),
            SemilinearError::Invalid(m) => ScenarioError::at("semilinear", m),
            e => ScenarioError::Numerical(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    EstimateHmeasure,
    SolvePwb,
    EstimateDelta,
    TestRegularity,
    CheckSoft,
    CheckHarnack,
    Trace,
    MartinDistance,
    Decompose,
    Norms,
    CheckEmbedding,
    SolveWeak,
    CompareWeakPwb,
    SolveSemilinear,
    GoodMeasure,
}

impl Task {
    pub const ALL: [Task; 15] = [
        Task::EstimateHmeasure,
        Task::SolvePwb,
        Task::EstimateDelta,
        Task::TestRegularity,
        Task::CheckSoft,
        Task::CheckHarnack,
        Task::Trace,
        Task::MartinDistance,
        Task::Decompose,
        Task::Norms,
        Task::CheckEmbedding,
        Task::SolveWeak,
        Task::CompareWeakPwb,
        Task::SolveSemilinear,
        Task::GoodMeasure,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::EstimateHmeasure => "estimate-hmeasure",
            Task::SolvePwb => "solve-pwb",
            Task::EstimateDelta => "estimate-delta",
            Task::TestRegularity => "test-regularity",
            Task::CheckSoft => "check-soft",
            Task::CheckHarnack => "check-harnack",
            Task::Trace => "trace",
            Task::MartinDistance => "martin-distance",
            Task::Decompose => "decompose",
            Task::Norms => "norms",
            Task::CheckEmbedding => "check-embedding",
            Task::SolveWeak => "solve-weak",
            Task::CompareWeakPwb => "compare-weak-pwb",
            Task::SolveSemilinear => "solve-semilinear",
            Task::GoodMeasure => "good-measure",
        }
    }

    pub fn from_name(name: &str) -> Option<Task> {
        Task::ALL.into_iter().find(|t| t.name() == name)
    }
}

fn default_psi() -> String {
    "0".into()
}

/// Boundary data: an expression in `x, y, z, theta, side`, optional
/// expressions replacing it on individual slit sides, and optional values
/// at removed points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundarySpec {
    #[serde(default = "default_psi")]
    pub psi: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub sides: BTreeMap<Side, String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub punctures: Vec<f64>,
}

impl Default for BoundarySpec {
    fn default() -> Self {
        Self { psi: default_psi(), sides: BTreeMap::new(), punctures: Vec::new() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    #[serde(default)]
    pub atoms: Vec<(Vec<f64>, f64)>,
    #[serde(default)]
    pub density: Option<String>,
}

fn default_h() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FemSpec {
    #[serde(default = "default_h")]
    pub h: f64,
}

impl Default for FemSpec {
    fn default() -> Self {
        Self { h: default_h() }
    }
}

/// Which interior function a trace, norm or decomposition task works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldSource {
    /// The expression in `params.u`.
    Expression,
    /// FEM weak solution with the scenario's boundary data.
    Weak,
    /// FEM `δ = G1`.
    Delta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoodSolver {
    Radial,
    Fem,
}

fn default_bins() -> usize {
    36
}
fn default_family() -> usize {
    64
}
fn default_ks() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}
fn default_exponents() -> Vec<f64> {
    vec![2.0]
}
fn default_truncations() -> Vec<f64> {
    (0..8).map(|k| 4f64.powi(k + 2)).collect()
}
fn default_inner() -> usize {
    200
}

/// Task-specific knobs; each task reads only the ones it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskParams {
    #[serde(default = "default_bins")]
    pub bins: usize,
    /// Exact solution in `x, y, z`, reported next to estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact: Option<String>,
    /// Second set of values at removed points, evaluated on the same paths.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alt_punctures: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<(Vec<f64>, Vec<f64>)>,
    #[serde(default = "default_family")]
    pub family: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<FieldSource>,
    #[serde(default = "default_exponents")]
    pub exponents: Vec<f64>,
    #[serde(default)]
    pub trace: TraceConfig,
    #[serde(default)]
    pub norms: NormConfig,
    #[serde(default)]
    pub soft: SoftConfig,
    #[serde(default = "default_ks")]
    pub ks: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<GoodSolver>,
    #[serde(default = "default_truncations")]
    pub truncations: Vec<f64>,
    #[serde(default)]
    pub radial: RadialProblem,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lp_exponents: Vec<f64>,
    /// Inner paths per stage exit for the tower check in `check-soft`.
    #[serde(default = "default_inner")]
    pub inner_paths: usize,
}

impl Default for TaskParams {
    fn default() -> Self {
        serde_json::from_value(json!({})).expect("defaults deserialize")
    }
}

fn default_paths() -> usize {
    10_000
}
fn default_p() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub domain: ShapeSpec,
    #[serde(default)]
    pub coefficients: CoefficientSpec,
    #[serde(default)]
    pub boundary: BoundarySpec,
    /// Shorthand for `boundary.psi` used by semilinear scenarios.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none", alias = "measure")]
    pub mu: Option<MeasureSpec>,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub fem: FemSpec,
    pub task: Task,
    #[serde(default)]
    pub probes: Vec<Vec<f64>>,
    #[serde(default = "default_paths")]
    pub n_paths: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f: Option<String>,
    /// Exponent available as the constant `p` in every expression.
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub semilinear: SemilinearConfig,
    #[serde(default)]
    pub params: TaskParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

/// Sets `key` (dot-separated, numeric segments index arrays) to `raw`,
/// read as JSON when it parses and as a string otherwise.
pub fn apply_override(root: &mut Value, key: &str, raw: &str) -> Result<(), ScenarioError> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut cur = root;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ScenarioError::at(key, "empty key segment"));
    }
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Array(items) => {
                let idx: usize = part.parse().map_err(|_| ScenarioError::at(key, format!("`{part}` is not an index")))?;
                let len = items.len();
                items.get_mut(idx).ok_or_else(|| ScenarioError::at(key, format!("index {idx} out of range ({len})")))?
            }
            Value::Object(map) => map.entry(part.to_string()).or_insert_with(|| if last { Value::Null } else { json!({}) }),
            _ => return Err(ScenarioError::at(key, format!("cannot descend into `{part}`"))),
        };
    }
    *cur = value;
    Ok(())
}

impl Scenario {
    /// Parses scenario JSON after applying `key=value` overrides.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Scenario, ScenarioError> {
        let mut value: Value = serde_json::from_str(text)
            .map_err(|e| ScenarioError::at(".", format!("invalid JSON at line {} column {}: {e}", e.line(), e.column())))?;
        for (k, v) in overrides {
            apply_override(&mut value, k, v)?;
        }
        Self::from_value(value)
    }

    pub fn from_value(value: Value) -> Result<Scenario, ScenarioError> {
        serde_path_to_error::deserialize(value).map_err(|e| {
            let path = e.path().to_string();
            ScenarioError::at(path, e.into_inner())
        })
    }

    pub fn load(path: &Path, overrides: &[(String, String)]) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, overrides)
    }

    /// The scenario with every default filled in, as echoed in summaries.
    pub fn echo(&self) -> Value {
        serde_json::to_value(self).expect("scenario serializes")
    }

    pub fn resolve(&self) -> Result<Resolved, ScenarioError> {
        Resolved::new(self.clone())
    }
}

/// Boundary data ready for evaluation at exit points.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    psi: Expression,
    sides: Vec<(Side, Expression)>,
    punctures: Vec<(Point, f64)>,
    radius: f64,
}

impl BoundaryData {
    pub fn eval(&self, b: &BoundaryPoint) -> f64 {
        if let Some(side) = b.side {
            if let Some((_, e)) = self.sides.iter().find(|(s, _)| *s == side) {
                return e.eval_boundary(b);
            }
        }
        if let Some((_, v)) = self.punctures.iter().find(|(p, _)| (b.position - p).norm() <= self.radius) {
            return *v;
        }
        self.psi.eval_boundary(b)
    }

    pub fn expression(&self) -> &Expression {
        &self.psi
    }

    fn with_punctures(&self, values: &[f64]) -> Self {
        let mut out = self.clone();
        out.punctures = self.punctures.iter().zip(values).map(|((p, _), v)| (*p, *v)).collect();
        out
    }

    fn side_dependent(&self) -> bool {
        !self.sides.is_empty() || self.psi.uses(Var::Side)
    }
}

/// A validated scenario with its parsed pieces.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub scenario: Scenario,
    pub domain: Domain,
    pub field: CoefficientField,
    pub boundary: BoundaryData,
    pub probes: Vec<Point>,
    pub f: Option<Expression>,
    pub mu: MeasureData,
    pub u: Option<Expression>,
    pub exact: Option<Expression>,
}

fn parse_expr(parser: &ExprParser, path: &str, src: &str) -> Result<Expression, ScenarioError> {
    parser.parse(src).map_err(|e: ExprError| ScenarioError::at(path, e))
}

fn to_point(path: &str, coords: &[f64], dim: usize) -> Result<Point, ScenarioError> {
    if coords.len() != dim {
        return Err(ScenarioError::at(path, format!("expected {dim} coordinates, got {}", coords.len())));
    }
    geometry::point(coords).map_err(|e| ScenarioError::at(path, e))
}

impl Resolved {
    fn new(sc: Scenario) -> Result<Self, ScenarioError> {
        let domain = Domain::new(sc.domain.clone()).map_err(|e| ScenarioError::at("domain", e))?;
        let dim = domain.dim();
        let field = CoefficientField::new(sc.coefficients.clone(), dim).map_err(|e| ScenarioError::at("coefficients", e))?;
        sc.sim.validate().map_err(|e| ScenarioError::at("sim", e))?;
        if !(sc.fem.h > 0.0 && sc.fem.h.is_finite()) {
            return Err(ScenarioError::at("fem.h", "must be positive"));
        }
        if sc.n_paths == 0 {
            return Err(ScenarioError::at("n_paths", "must be at least 1"));
        }
        if !(sc.p.is_finite() && sc.p > 0.0) {
            return Err(ScenarioError::at("p", "must be positive"));
        }
        let parser = ExprParser::new().constant("p", sc.p);

        let psi_src = match (&sc.psi, sc.boundary.psi.as_str()) {
            (Some(_), s) if s != "0" => return Err(ScenarioError::at("psi", "given both as `psi` and `boundary.psi`")),
            (Some(s), _) => ("psi", s.as_str()),
            (None, s) => ("boundary.psi", s),
        };
        let psi = parse_expr(&parser, psi_src.0, psi_src.1)?;
        if psi.uses(Var::U) {
            return Err(ScenarioError::at(psi_src.0, "boundary data cannot depend on u"));
        }
        let mut sides = Vec::new();
        for (side, src) in &sc.boundary.sides {
            if domain.slit().is_none() {
                return Err(ScenarioError::at(format!("boundary.sides.{}", side.as_str()), "domain has no two-sided boundary"));
            }
            sides.push((*side, parse_expr(&parser, &format!("boundary.sides.{}", side.as_str()), src)?));
        }
        let holes = domain.punctures();
        if !sc.boundary.punctures.is_empty() && sc.boundary.punctures.len() != holes.len() {
            return Err(ScenarioError::at(
                "boundary.punctures",
                format!("expected {} values, one per removed point", holes.len()),
            ));
        }
        let punctures = holes
            .iter()
            .enumerate()
            .map(|(i, p)| (*p, sc.boundary.punctures.get(i).copied().unwrap_or_else(|| psi.eval_boundary(&BoundaryPoint::plain(*p)))))
            .collect();
        let boundary = BoundaryData { psi, sides, punctures, radius: domain.puncture_radius() };
        if let Some(alt) = &sc.params.alt_punctures {
            if alt.len() != holes.len() {
                return Err(ScenarioError::at("params.alt_punctures", format!("expected {} values", holes.len())));
            }
        }

        let on_boundary_task = sc.task == Task::TestRegularity;
        let mut probes = Vec::new();
        for (i, c) in sc.probes.iter().enumerate() {
            let path = format!("probes[{i}]");
            let x = to_point(&path, c, dim)?;
            if on_boundary_task {
                if !domain.on_boundary(&x) {
                    return Err(ScenarioError::at(path, "point is not on the boundary"));
                }
            } else if !domain.inside(&x) {
                return Err(ScenarioError::at(path, "point is not inside the domain"));
            }
            probes.push(x);
        }

        let f = match &sc.f {
            Some(src) => Some(parse_expr(&parser, "f", src)?),
            None => None,
        };
        let mut mu = MeasureData::default();
        if let Some(m) = &sc.mu {
            for (i, (c, w)) in m.atoms.iter().enumerate() {
                let path = format!("mu.atoms[{i}]");
                let x = to_point(&path, c, dim)?;
                if !domain.inside(&x) {
                    return Err(ScenarioError::at(path, "atom is not inside the domain"));
                }
                if !w.is_finite() {
                    return Err(ScenarioError::at(path, "weight must be finite"));
                }
                mu.atoms.push((x, *w));
            }
            if let Some(src) = &m.density {
                mu.density = Some(parse_expr(&parser, "mu.density", src)?);
            }
        }
        let u = match &sc.params.u {
            Some(src) => Some(parse_expr(&parser, "params.u", src)?),
            None => None,
        };
        let exact = match &sc.params.exact {
            Some(src) => Some(parse_expr(&parser, "params.exact", src)?),
            None => None,
        };
        sc.semilinear.validate().map_err(|e| ScenarioError::at("semilinear", e))?;
        let r = Resolved { scenario: sc, domain, field, boundary, probes, f, mu, u, exact };
        r.check_task()?;
        Ok(r)
    }

    fn check_task(&self) -> Result<(), ScenarioError> {
        let sc = &self.scenario;
        let need_probes = matches!(
            sc.task,
            Task::EstimateHmeasure
                | Task::SolvePwb
                | Task::EstimateDelta
                | Task::TestRegularity
                | Task::CheckSoft
                | Task::CheckHarnack
                | Task::CompareWeakPwb
        );
        if need_probes && self.probes.is_empty() {
            return Err(ScenarioError::at("probes", format!("task {} needs at least one probe", sc.task.name())));
        }
        let needs_mesh = matches!(
            sc.task,
            Task::MartinDistance | Task::Decompose | Task::SolveWeak | Task::CompareWeakPwb | Task::SolveSemilinear
        ) || (sc.task == Task::GoodMeasure && sc.params.solver != Some(GoodSolver::Radial))
            || (matches!(sc.task, Task::Trace | Task::Norms | Task::CheckSoft) && self.source() != FieldSource::Expression);
        if needs_mesh && self.domain.dim() != 2 {
            return Err(ScenarioError::at("domain", format!("task {} needs a 2D mesh", sc.task.name())));
        }
        if self.source() == FieldSource::Expression
            && matches!(sc.task, Task::Trace | Task::Norms | Task::Decompose)
            && self.u.is_none()
        {
            return Err(ScenarioError::at("params.u", "required when params.source is `expression`"));
        }
        match sc.task {
            Task::EstimateHmeasure if sc.params.bins == 0 => return Err(ScenarioError::at("params.bins", "must be positive")),
            Task::CheckHarnack => {
                let c = sc.params.center.as_ref().ok_or_else(|| ScenarioError::at("params.center", "required"))?;
                to_point("params.center", c, self.domain.dim())?;
                if !sc.params.radius.is_some_and(|r| r > 0.0) {
                    return Err(ScenarioError::at("params.radius", "required and positive"));
                }
            }
            Task::MartinDistance => {
                if sc.params.pairs.is_empty() {
                    return Err(ScenarioError::at("params.pairs", "at least one pair is required"));
                }
                for (i, (x, y)) in sc.params.pairs.iter().enumerate() {
                    for (j, c) in [x, y].into_iter().enumerate() {
                        let path = format!("params.pairs[{i}][{j}]");
                        let p = to_point(&path, c, 2)?;
                        if !self.domain.inside(&p) {
                            return Err(ScenarioError::at(path, "point is not inside the domain"));
                        }
                    }
                }
            }
            Task::Norms if sc.params.exponents.iter().any(|p| !(*p >= 1.0)) => {
                return Err(ScenarioError::at("params.exponents", "exponents must be at least 1"));
            }
            Task::CheckEmbedding if self.boundary.side_dependent() => {
                return Err(ScenarioError::at("boundary", "check-embedding needs side-independent boundary data"));
            }
            Task::SolveSemilinear if self.f.is_none() => return Err(ScenarioError::at("f", "required for solve-semilinear")),
            Task::GoodMeasure => {
                let atom = self.mu.atoms.first().ok_or_else(|| ScenarioError::at("mu.atoms", "good-measure needs a Dirac atom"))?;
                if sc.params.truncations.len() < 3 || sc.params.truncations.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(ScenarioError::at("params.truncations", "need at least three increasing levels"));
                }
                if sc.params.solver == Some(GoodSolver::Radial) {
                    let unit_ball = matches!(&sc.domain, ShapeSpec::Ball { center, radius } if center.len() == 3 && center.iter().all(|c| *c == 0.0) && *radius == 1.0);
                    if !unit_ball || atom.0.norm() != 0.0 {
                        return Err(ScenarioError::at("domain", "the radial solver needs the unit ball in R^3 with the atom at 0"));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    fn source(&self) -> FieldSource {
        self.scenario.params.source.unwrap_or(if self.scenario.params.u.is_some() {
            FieldSource::Expression
        } else {
            FieldSource::Weak
        })
    }

    fn psi(&self) -> impl Fn(&BoundaryPoint) -> f64 + Sync + '_ {
        |b| self.boundary.eval(b)
    }

    fn system(&self, h: f64) -> Result<FemSystem, ScenarioError> {
        let mesh = triangulate(&self.domain, h).map_err(|e| ScenarioError::at("domain", e))?;
        Ok(FemSystem::new(Arc::new(mesh), &self.field)?)
    }
}

/// A file written next to the summary as `<prefix>.<suffix>.<extension>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Artifact {
    pub suffix: String,
    /// `csv` for tables, `off` for meshes.
    pub extension: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: Value,
    pub artifacts: Vec<Artifact>,
}

impl RunOutput {
    pub fn summary_text(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.summary).expect("summary serializes");
        s.push('\n');
        s
    }

    /// Writes `<prefix>.summary.json` and the artifacts; returns the paths.
    pub fn write(&self, prefix: &Path) -> Result<Vec<std::path::PathBuf>, ScenarioError> {
        if let Some(dir) = prefix.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| ScenarioError::Io(format!("{}: {e}", dir.display())))?;
        }
        let base = prefix.to_string_lossy().into_owned();
        let mut written = Vec::new();
        let mut put = |path: String, text: &str| -> Result<(), ScenarioError> {
            std::fs::write(&path, text).map_err(|e| ScenarioError::Io(format!("{path}: {e}")))?;
            written.push(path.into());
            Ok(())
        };
        put(format!("{base}.summary.json"), &self.summary_text())?;
        for a in &self.artifacts {
            put(format!("{base}.{}.{}", a.suffix, a.extension), &a.contents)?;
        }
        Ok(written)
    }
}

fn coords(x: &Point, dim: usize) -> Vec<f64> {
    geometry::coords(x, dim)
}

fn csv_point(x: &Point) -> String {
    format!("{:?},{:?},{:?}", x.x, x.y, x.z)
}

/// Validates and runs a scenario.
pub fn run(scenario: &Scenario, version: &str) -> Result<RunOutput, ScenarioError> {
    let r = scenario.resolve()?;
    let (results, artifacts) = dispatch(&r)?;
    let summary = json!({
        "name": scenario.name,
        "task": scenario.task.name(),
        "version": version,
        "seed": scenario.sim.seed,
        "config": scenario.echo(),
        "results": results,
    });
    Ok(RunOutput { summary, artifacts })
}

type Outcome = Result<(Value, Vec<Artifact>), ScenarioError>;

fn dispatch(r: &Resolved) -> Outcome {
    match r.scenario.task {
        Task::EstimateHmeasure => task_hmeasure(r),
        Task::SolvePwb => task_pwb(r),
        Task::EstimateDelta => task_delta(r),
        Task::TestRegularity => task_regularity(r),
        Task::CheckSoft => task_soft(r),
        Task::CheckHarnack => task_harnack(r),
        Task::Trace => task_trace(r),
        Task::MartinDistance => task_martin(r),
        Task::Decompose => task_decompose(r),
        Task::Norms => task_norms(r),
        Task::CheckEmbedding => task_embedding(r),
        Task::SolveWeak => task_weak(r),
        Task::CompareWeakPwb => task_compare(r),
        Task::SolveSemilinear => task_semilinear(r),
        Task::GoodMeasure => task_good(r),
    }
}

fn artifact(suffix: &str, contents: String) -> Artifact {
    Artifact { suffix: suffix.into(), extension: "csv".into(), contents }
}

fn mesh_artifact(sys: &FemSystem) -> Artifact {
    Artifact { suffix: "mesh".into(), extension: "off".into(), contents: sys.mesh().to_off() }
}

fn task_hmeasure(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let x0 = r.probes[0];
    let binning = Binning { angular: sc.params.bins };
    let hist = harmonic::harmonic_measure(&r.domain, &r.field, &x0, &sc.sim, sc.n_paths, &binning)?;
    let puncture_hits: usize = hist
        .bins
        .iter()
        .filter(|b| matches!(b.cell, harmonic::BoundaryCell::Puncture { .. }))
        .map(|b| b.count)
        .sum();
    let mut results = json!({
        "x0": coords(&x0, r.domain.dim()),
        "n_samples": hist.n_samples,
        "puncture_hits": puncture_hits,
        "bins": hist.bins,
    });
    if r.field.is_identity() {
        if let Some(reference) = harmonic::poisson_reference(&r.domain, &x0, &binning) {
            results["tv_poisson"] = json!(hist.total_variation(&reference));
            results["poisson"] = json!(reference);
        }
    }
    Ok((results, vec![artifact("hmeasure", hist.to_csv())]))
}

fn estimate_json(e: &Estimate) -> Value {
    serde_json::to_value(e).expect("estimate serializes")
}

fn task_pwb(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let psi = r.psi();
    let alt = sc.params.alt_punctures.as_ref().map(|v| r.boundary.with_punctures(v));
    let mut rows = Vec::new();
    let mut csv = String::from("probe,x,y,z,value,std_error,n_samples,exact\n");
    let mut hits = 0;
    for (k, x) in r.probes.iter().enumerate() {
        let batch = harmonic::exit_samples(&r.domain, &r.field, x, &sc.sim, sc.n_paths, Trackers::default(), k)?;
        hits += batch.records.iter().filter(|rec| rec.hit_puncture).count();
        let est = harmonic::boundary_mean(&batch, &psi)?;
        let mut row = json!({ "x": coords(x, r.domain.dim()), "estimate": estimate_json(&est) });
        let exact = r.exact.as_ref().map(|e| e.eval_at(x, 0.0));
        if let Some(v) = exact {
            row["exact"] = json!(v);
            row["z_score"] = json!(if est.std_error > 0.0 { (est.value - v) / est.std_error } else { 0.0 });
        }
        if let Some(alt) = &alt {
            let g = |b: &BoundaryPoint| alt.eval(b);
            let e2 = harmonic::boundary_mean(&batch, &g)?;
            row["alt"] = json!({ "estimate": estimate_json(&e2), "bitwise_equal": e2.value.to_bits() == est.value.to_bits() });
        }
        let _ = writeln!(
            csv,
            "{k},{},{:?},{:?},{},{}",
            csv_point(x),
            est.value,
            est.std_error,
            est.n_samples,
            exact.map_or(String::new(), |v| format!("{v:?}"))
        );
        rows.push(row);
    }
    let results = json!({ "probes": rows, "puncture_hits": hits });
    Ok((results, vec![artifact("pwb", csv)]))
}

fn ball_exit_time(r: &Resolved, x: &Point) -> Option<f64> {
    match r.domain.spec() {
        ShapeSpec::Ball { radius, .. } if r.field.is_identity() => {
            let d = r.domain.dim() as f64;
            Some((radius * radius - (x - r.domain.center()).norm_squared()) / (2.0 * d))
        }
        _ => None,
    }
}

fn task_delta(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let fem = if r.domain.dim() == 2 && r.domain.slit().is_none() && r.domain.punctures().is_empty() {
        let sys = r.system(sc.fem.h)?;
        let n = sys.mesh().n_vertices();
        Some(sys.green_apply(&vec![1.0; n])?)
    } else {
        None
    };
    let mut rows = Vec::new();
    let mut csv = String::from("probe,x,y,z,value,std_error,n_samples,fem,oracle\n");
    for (k, x) in r.probes.iter().enumerate() {
        let batch = harmonic::exit_samples(&r.domain, &r.field, x, &sc.sim, sc.n_paths, Trackers::default(), k)?;
        let t: Vec<f64> = batch.records.iter().map(|rec| rec.exit_time).collect();
        let est = Estimate::from_samples(&t, batch.truncated);
        let fem_v = fem.as_ref().and_then(|d| d.eval(x));
        let oracle = ball_exit_time(r, x);
        let _ = writeln!(
            csv,
            "{k},{},{:?},{:?},{},{},{}",
            csv_point(x),
            est.value,
            est.std_error,
            est.n_samples,
            fem_v.map_or(String::new(), |v| format!("{v:?}")),
            oracle.map_or(String::new(), |v| format!("{v:?}"))
        );
        rows.push(json!({ "x": coords(x, r.domain.dim()), "estimate": estimate_json(&est), "fem": fem_v, "oracle": oracle }));
    }
    Ok((json!({ "probes": rows }), vec![artifact("delta", csv)]))
}

fn task_regularity(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let schedule = sc.params.schedule.clone().unwrap_or_else(|| REGULARITY_SCHEDULE.to_vec());
    let mut rows = Vec::new();
    let mut csv = String::from("probe,x,y,z,verdict,t0,dt,survival,std_error,ci_lo,ci_hi\n");
    for (k, z) in r.probes.iter().enumerate() {
        let cfg = SimConfig { seed: sc.sim.seed.wrapping_add(k as u64), ..sc.sim.clone() };
        let rep = harmonic::regularity_test(&r.domain, &r.field, z, &cfg, sc.n_paths, &schedule)?;
        let verdict = serde_json::to_value(rep.verdict).expect("verdict serializes");
        for l in &rep.levels {
            let _ = writeln!(
                csv,
                "{k},{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
                csv_point(z),
                verdict.as_str().unwrap_or(""),
                l.t0,
                l.dt,
                l.survival.value,
                l.survival.std_error,
                l.ci.0,
                l.ci.1
            );
        }
        rows.push(json!({ "z": coords(z, r.domain.dim()), "verdict": verdict, "levels": rep.levels }));
    }
    Ok((json!({ "probes": rows }), vec![artifact("regularity", csv)]))
}

/// The interior function named by `params.source`, on a mesh when needed.
enum Interior {
    Expr(Expression),
    Field(DiscreteField),
}

impl Interior {
    fn build(r: &Resolved, sys: Option<&FemSystem>) -> Result<Interior, ScenarioError> {
        Ok(match r.source() {
            FieldSource::Expression => Interior::Expr(r.u.clone().ok_or_else(|| ScenarioError::at("params.u", "required"))?),
            FieldSource::Weak => {
                let sys = sys.ok_or_else(|| ScenarioError::at("params.source", "needs a mesh"))?;
                Interior::Field(sys.solve_weak_fn(|b| r.boundary.eval(b))?)
            }
            FieldSource::Delta => {
                let sys = sys.ok_or_else(|| ScenarioError::at("params.source", "needs a mesh"))?;
                Interior::Field(sys.green_apply(&vec![1.0; sys.mesh().n_vertices()])?)
            }
        })
    }

    fn on_mesh(self, sys: &FemSystem) -> DiscreteField {
        match self {
            Interior::Field(f) => f,
            Interior::Expr(e) => DiscreteField::from_fn(sys.mesh().clone(), |p, _| e.eval_at(p, 0.0)),
        }
    }
}

fn with_interior<T>(it: &Interior, k: impl FnOnce(&(dyn Fn(&Point) -> f64 + Sync)) -> T) -> T {
    match it {
        Interior::Expr(e) => k(&|p: &Point| e.eval_at(p, 0.0)),
        Interior::Field(f) => {
            let g = trace::field_fn(f);
            k(&g)
        }
    }
}

fn optional_system(r: &Resolved) -> Result<Option<FemSystem>, ScenarioError> {
    if r.source() == FieldSource::Expression {
        Ok(None)
    } else {
        r.system(r.scenario.fem.h).map(Some)
    }
}

fn task_soft(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let sys = optional_system(r)?;
    let interior = Interior::build(r, sys.as_ref())?;
    let psi = r.psi();
    let reports = with_interior(&interior, |u| {
        harmonic::soft_solution_check(&r.domain, &r.field, &psi, u, &r.probes, &sc.sim, sc.n_paths, &sc.params.soft)
    })?;
    let mut tower = Vec::new();
    for x in &r.probes {
        let cfg = SimConfig { seed: sc.sim.seed.wrapping_add(1), ..sc.sim.clone() };
        tower.push(harmonic::tower_check(&r.domain, &r.field, &psi, x, 1, &cfg, sc.n_paths.min(2000), sc.params.inner_paths)?);
    }
    let mut csv = String::from("probe,stage,offset,value,std_error,target,target_std_error,doob_ratio\n");
    for (k, rep) in reports.iter().enumerate() {
        for s in &rep.stages {
            let _ = writeln!(
                csv,
                "{k},{},{:?},{:?},{:?},{:?},{:?},{:?}",
                s.n, s.offset, s.value.value, s.value.std_error, rep.target.value, rep.target.std_error, rep.doob_ratio
            );
        }
    }
    let all_ok = reports.iter().all(|p| p.doob_ok) && tower.iter().all(|t| t.agrees);
    Ok((json!({ "probes": reports, "tower": tower, "all_ok": all_ok }), vec![artifact("soft", csv)]))
}

fn task_harnack(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let c = to_point("params.center", sc.params.center.as_deref().unwrap_or_default(), r.domain.dim())?;
    let psi = r.psi();
    let rep = harmonic::harnack_check(&r.domain, &r.field, &psi, &c, sc.params.radius.unwrap_or(0.0), &r.probes, &sc.sim, sc.n_paths)?;
    let mut csv = String::from("i,j,ratio\n");
    for (i, row) in rep.ratios.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let _ = writeln!(csv, "{i},{j},{v:?}");
        }
    }
    Ok((serde_json::to_value(&rep).expect("report serializes"), vec![artifact("harnack", csv)]))
}

fn task_trace(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let sys = optional_system(r)?;
    let interior = Interior::build(r, sys.as_ref())?;
    let rep = with_interior(&interior, |u| trace::trace_estimate(&r.domain, &r.field, u, &sc.sim, &sc.params.trace))?;
    let converged: Vec<_> = rep.converged().collect();
    let agree = converged
        .iter()
        .filter(|s| (s.limit_value - r.boundary.eval(&s.boundary_point)).abs() <= rep.tol_trace)
        .count();
    let mut results = json!({
        "tol_trace": rep.tol_trace,
        "w_trace": rep.w_trace,
        "n_samples": rep.samples.len(),
        "converged_fraction": rep.converged_fraction(),
        "boundary_agreement": if converged.is_empty() { 0.0 } else { agree as f64 / converged.len() as f64 },
        "cells": rep.cells,
    });
    if let Some((frac, n)) = rep.side_agreement(trace::side_sign) {
        results["side_agreement"] = json!({ "fraction": frac, "samples": n });
    }
    let mut samples = String::from("x,y,z,side,limit,converged\n");
    for s in &rep.samples {
        let _ = writeln!(
            samples,
            "{},{},{:?},{}",
            csv_point(&s.boundary_point.position),
            s.boundary_point.side.map_or("", Side::as_str),
            s.limit_value,
            s.converged
        );
    }
    Ok((results, vec![artifact("trace", rep.to_csv()), artifact("trace_samples", samples)]))
}

fn task_martin(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let sys = Arc::new(r.system(sc.fem.h)?);
    let metric = MartinMetric::new(sys, &r.domain, sc.params.family)?;
    let mut rows = Vec::new();
    let mut csv = String::from("pair,x1,y1,x2,y2,distance\n");
    let mut first = None;
    for (i, (a, b)) in sc.params.pairs.iter().enumerate() {
        let x = to_point("params.pairs", a, 2)?;
        let y = to_point("params.pairs", b, 2)?;
        let d = metric.distance(&x, &y)?;
        let d0 = *first.get_or_insert(d);
        let _ = writeln!(csv, "{i},{:?},{:?},{:?},{:?},{d:?}", x.x, x.y, y.x, y.y);
        rows.push(json!({ "x": a, "y": b, "distance": d, "relative": d / d0 }));
    }
    Ok((json!({ "family": metric.bumps().len(), "pairs": rows }), vec![artifact("martin", csv)]))
}

fn task_decompose(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let sys = r.system(sc.fem.h)?;
    let psi_interior = Interior::build(r, Some(&sys))?.on_mesh(&sys);
    let dec = trace::decompose(&r.domain, &r.field, &sys, &psi_interior, &sc.sim, &sc.params.trace)?;
    let at_probes: Vec<Value> = r
        .probes
        .iter()
        .map(|x| json!({ "x": coords(x, 2), "harmonic": dec.harmonic.eval(x), "potential": dec.potential.eval(x) }))
        .collect();
    let results = json!({
        "tol_trace": dec.trace.tol_trace,
        "converged_fraction": dec.trace.converged_fraction(),
        "potential_trace_max": dec.potential_trace_max(),
        "potential_trace_vanishes": dec.potential_trace_max() <= dec.trace.tol_trace,
        "probes": at_probes,
    });
    Ok((
        results,
        vec![
            artifact("harmonic", dec.harmonic.to_csv()),
            artifact("potential", dec.potential.to_csv()),
            artifact("trace", dec.trace.to_csv()),
            mesh_artifact(&sys),
        ],
    ))
}

fn task_norms(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let sys = optional_system(r)?;
    let interior = Interior::build(r, sys.as_ref())?;
    let psi = r.psi();
    let mut reports = Vec::new();
    let mut csv = String::from("p,d_norm,d_norm_se,s_norm,s_norm_se,boundary_norm,boundary_norm_se,doob_ratio\n");
    for &p in &sc.params.exponents {
        let rep = with_interior(&interior, |u| trace::norm_report(&r.domain, &r.field, u, &psi, p, &sc.sim, &sc.params.norms))?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:?}"));
        let _ = writeln!(
            csv,
            "{p:?},{:?},{:?},{},{},{:?},{:?},{}",
            rep.d_norm,
            rep.d_norm_se,
            opt(rep.s_norm),
            opt(rep.s_norm_se),
            rep.boundary_norm,
            rep.boundary_norm_se,
            opt(rep.doob_ratio)
        );
        let mut row = serde_json::to_value(&rep).expect("report serializes");
        if let (Some(s), Some(s_se)) = (rep.s_norm, rep.s_norm_se) {
            // S^p ≤ 4 D^p at p = 2, up to three combined standard errors.
            let gap = s * s - 4.0 * rep.d_norm * rep.d_norm;
            let se = ((2.0 * s * s_se).powi(2) + (8.0 * rep.d_norm * rep.d_norm_se).powi(2)).sqrt();
            row["doob_ok"] = json!(gap <= 3.0 * se);
        }
        let z = (rep.d_norm - rep.boundary_norm).abs();
        row["boundary_match"] = json!(z <= 3.0 * rep.d_norm_se.hypot(rep.boundary_norm_se));
        reports.push(row);
    }
    Ok((json!({ "reports": reports }), vec![artifact("norms", csv)]))
}

fn task_embedding(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let witness = if r.domain.slit().is_some() { Some(r.system(sc.fem.h)?) } else { None };
    let rep = trace::im_embedding_check(&r.domain, &r.field, r.boundary.expression(), &sc.sim, &sc.params.trace, witness.as_ref())?;
    Ok((serde_json::to_value(&rep).expect("report serializes"), Vec::new()))
}

fn task_weak(r: &Resolved) -> Outcome {
    let sys = r.system(r.scenario.fem.h)?;
    let u = sys.solve_weak_fn(|b| r.boundary.eval(b))?;
    let rows: Vec<Value> = r
        .probes
        .iter()
        .map(|x| json!({ "x": coords(x, 2), "value": u.eval(x), "exact": r.exact.as_ref().map(|e| e.eval_at(x, 0.0)) }))
        .collect();
    let results = json!({
        "vertices": sys.mesh().n_vertices(),
        "triangles": sys.mesh().triangles.len(),
        "probes": rows,
    });
    Ok((results, vec![artifact("field", u.to_csv()), mesh_artifact(&sys)]))
}

fn task_compare(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let h = sc.fem.h;
    let coarse = r.system(h)?.solve_weak_fn(|b| r.boundary.eval(b))?;
    let fine = r.system(h / 2.0)?.solve_weak_fn(|b| r.boundary.eval(b))?;
    let psi = r.psi();
    let mut fem = Vec::new();
    let mut c_max: f64 = 0.0;
    for x in &r.probes {
        let a = coarse.eval(x).ok_or_else(|| ScenarioError::Numerical("probe outside the coarse mesh".into()))?;
        let b = fine.eval(x).ok_or_else(|| ScenarioError::Numerical("probe outside the fine mesh".into()))?;
        // u_h - u_{h/2} ≈ C h² (1 - 1/4)
        c_max = c_max.max((a - b).abs() / (0.75 * h * h));
        fem.push((a, b));
    }
    let mut rows = Vec::new();
    let mut csv = String::from("probe,x,y,z,fem,fem_fine,mc,std_error,bound,pass\n");
    let mut all_pass = true;
    let mut se_max: f64 = 0.0;
    for (k, (x, (a, b))) in r.probes.iter().zip(fem).enumerate() {
        let batch = harmonic::exit_samples(&r.domain, &r.field, x, &sc.sim, sc.n_paths, Trackers::default(), k)?;
        let est = harmonic::boundary_mean(&batch, &psi)?;
        let bound = 3.0 * est.std_error + c_max * h * h;
        let pass = (a - est.value).abs() <= bound;
        all_pass &= pass;
        se_max = se_max.max(est.std_error);
        let _ = writeln!(csv, "{k},{},{a:?},{b:?},{:?},{:?},{bound:?},{pass}", csv_point(x), est.value, est.std_error);
        rows.push(json!({ "x": coords(x, 2), "fem": a, "fem_fine": b, "mc": estimate_json(&est), "bound": bound, "pass": pass }));
    }
    let results = json!({ "h": h, "c": c_max, "max_std_error": se_max, "all_pass": all_pass, "probes": rows });
    Ok((results, vec![artifact("compare", csv)]))
}

fn task_semilinear(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let sys = r.system(sc.fem.h)?;
    let f = r.f.as_ref().expect("checked in validation");
    let psi = r.psi();
    let sol = semilinear::solve_semilinear(&sys, f, &r.mu, &psi, &sc.semilinear)?;
    let apriori = semilinear::apriori_check(&sys, &sol, &psi, f, &r.mu, &sc.params.ks, semilinear::TOL_APRIORI)?;
    let monotone = (sol.snapshots.len() > 1).then(|| semilinear::truncation_monotonicity(&sol));
    let rows: Vec<Value> = r
        .probes
        .iter()
        .map(|x| json!({ "x": coords(x, 2), "value": sol.u.eval(x), "exact": r.exact.as_ref().map(|e| e.eval_at(x, 0.0)) }))
        .collect();
    let results = json!({
        "probes": rows,
        "levels": sol.levels,
        "residual": sol.residual,
        "f_l1_delta": sol.f_l1_delta,
        "truncation_monotonicity": monotone,
        "apriori": apriori,
        "apriori_holds": apriori.all_hold(),
    });
    let mut ap = String::from("k,u_l1,breve_sq,bound,holds,combined_holds,slack\n");
    for row in &apriori.rows {
        let _ = writeln!(
            ap,
            "{:?},{:?},{:?},{:?},{},{},{:?}",
            row.k, row.u_l1, row.breve_sq, row.bound, row.holds, row.combined_holds, row.slack
        );
    }
    Ok((results, vec![artifact("field", sol.u.to_csv()), artifact("apriori", ap), mesh_artifact(&sys)]))
}

fn task_good(r: &Resolved) -> Outcome {
    let sc = &r.scenario;
    let (atom, weight) = r.mu.atoms[0];
    match sc.params.solver.unwrap_or(GoodSolver::Fem) {
        GoodSolver::Radial => {
            let rep = semilinear::good_measure_probe_radial(sc.p, weight, &sc.params.truncations, &sc.params.radial);
            let m = *sc.params.truncations.last().expect("validated");
            let lp = semilinear::lp_delta_refinement(sc.p, weight, m, &sc.params.lp_exponents, &sc.params.radial);
            let csv = good_csv(&rep);
            Ok((json!({ "solver": "radial", "verdict": rep.verdict, "consistent": rep.consistent, "runs": rep.runs, "lp_delta": lp }), vec![artifact("good", csv)]))
        }
        GoodSolver::Fem => {
            let sys = r.system(sc.fem.h)?;
            let default_f;
            let f = match &r.f {
                Some(f) => f,
                None => {
                    default_f = ExprParser::new().constant("p", sc.p).parse("-u*abs(u)^(p-1)").expect("fixed expression");
                    &default_f
                }
            };
            let rep = semilinear::good_measure_probe_fem(&sys, f, atom, weight, &sc.semilinear)?;
            let csv = good_csv(&rep);
            Ok((json!({ "solver": "fem", "verdict": rep.verdict, "consistent": rep.consistent, "runs": rep.runs }), vec![artifact("good", csv)]))
        }
    }
}

fn good_csv(rep: &semilinear::GoodMeasureReport) -> String {
    let mut csv = String::from("psi,truncation,mass,atom_value\n");
    for run in &rep.runs {
        for ((m, mass), v) in run.truncations.iter().zip(&run.masses).zip(&run.atom_values) {
            let _ = writeln!(csv, "{:?},{m:?},{mass:?},{v:?}", run.psi);
        }
    }
    csv
}

/// One expectation on a summary value, addressed by a JSON pointer.
/// Exactly one of `value` (with `tolerance`), `equals`, or a `min`/`max`
/// bound is used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Check {
    pub pointer: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub equals: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    /// Where the expected value comes from (closed form, oracle, invariant...).
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub checks: Vec<Check>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub pointer: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn evaluate(&self, summary: &Value) -> CheckOutcome {
        let (passed, detail) = match summary.pointer(&self.pointer) {
            None => (false, "missing".to_string()),
            Some(actual) => {
                if let Some(want) = &self.equals {
                    (actual == want, format!("{actual} vs {want}"))
                } else if let Some(x) = actual.as_f64() {
                    let mut ok = true;
                    let mut parts = Vec::new();
                    if let Some(v) = self.value {
                        let tol = self.tolerance.unwrap_or(0.0);
                        ok &= (x - v).abs() <= tol;
                        parts.push(format!("{x:.6} vs {v} ± {tol}"));
                    }
                    if let Some(lo) = self.min {
                        ok &= x >= lo;
                        parts.push(format!("{x:.6} >= {lo}"));
                    }
                    if let Some(hi) = self.max {
                        ok &= x <= hi;
                        parts.push(format!("{x:.6} <= {hi}"));
                    }
                    if parts.is_empty() {
                        (false, "no expectation given".into())
                    } else {
                        (ok, parts.join(", "))
                    }
                } else {
                    (false, format!("not a number: {actual}"))
                }
            }
        };
        CheckOutcome { pointer: self.pointer.clone(), passed, detail }
    }
}

impl Sidecar {
    pub fn load(path: &Path) -> Result<Sidecar, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io(format!("missing sidecar {}: {e}", path.display())))?;
        let mut de = serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(&mut de)
            .map_err(|e| ScenarioError::at(format!("{}: {}", path.display(), e.path()), e.into_inner()))
    }

    pub fn evaluate(&self, summary: &Value) -> Vec<CheckOutcome> {
        self.checks.iter().map(|c| c.evaluate(summary)).collect()
    }
}

/// Scenario files of a corpus directory (every `*.json` that is not a
/// sidecar), sorted by name.
pub fn corpus_entries(dir: &Path) -> Result<Vec<std::path::PathBuf>, ScenarioError> {
    let rd = std::fs::read_dir(dir).map_err(|e| ScenarioError::Io(format!("{}: {e}", dir.display())))?;
    let mut out: Vec<_> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".json") && !name.ends_with(".expected.json")
        })
        .collect();
    out.sort();
    Ok(out)
}

/// `foo.json` → `foo.expected.json`.
pub fn sidecar_path(scenario: &Path) -> std::path::PathBuf {
    scenario.with_extension("expected.json")
}

#[cfg(test)]
mod tests;
