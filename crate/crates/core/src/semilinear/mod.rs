//! Semilinear problems `-Au = f(x, u) + μ` in `D`, `u = ψ` on the
//! boundary, with `f` nonincreasing in `u` and `μ` a measure of finite
//! δ-weighted total variation, solved on the FEM mesh by damped Picard
//! iteration over a ladder of truncations `f_{n,m} = (f ∧ n) ∨ (-m)`.

pub mod radial;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{check_nonincreasing, Expression};
use crate::fem::{breve_parts, DiscreteField, FemError, FemSystem};
use crate::geometry::{BoundaryPoint, Point};
use crate::harmonic::BoundaryFn;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SemilinearError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("f is not nonincreasing in u at ({}, {}): f(u={}) < f(u={})", x.x, x.y, u_lo, u_hi)]
    NotMonotone { x: Point, u_lo: f64, u_hi: f64 },
    #[error("Picard iteration diverged at truncation level (n={n}, m={m}); residual {residual}")]
    Diverged { n: f64, m: f64, residual: f64 },
    #[error("{0}")]
    Invalid(String),
}

/// Atoms (the concentrated part) plus an optional density with respect to
/// Lebesgue measure.
#[derive(Debug, Clone, Default)]
pub struct MeasureData {
    pub atoms: Vec<(Point, f64)>,
    pub density: Option<Expression>,
}

impl MeasureData {
    pub fn dirac(at: Point, weight: f64) -> Self {
        Self { atoms: vec![(at, weight)], density: None }
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.iter().all(|a| a.1 == 0.0) && self.density.is_none()
    }

    /// `Σ|w_i| δ(x_i) + ∫|ρ| δ dm` with `δ = G1` on the mesh.
    pub fn tv_delta(&self, system: &FemSystem, delta: &DiscreteField) -> Result<f64, FemError> {
        let mut s = 0.0;
        for (x, w) in &self.atoms {
            let v = system.pole_vertex(x)?;
            s += w.abs() * delta.values[v];
        }
        if let Some(rho) = &self.density {
            let m = system.lumped_mass();
            for (i, x) in system.mesh().vertices.iter().enumerate() {
                s += m[i] * rho.eval_at(x, 0.0).abs() * delta.values[i];
            }
        }
        Ok(s)
    }

    /// `G μ`: Green columns for atoms plus `G ρ`.
    pub fn potential(&self, system: &FemSystem) -> Result<DiscreteField, FemError> {
        let n = system.mesh().n_vertices();
        let mut load = vec![0.0; n];
        for (x, w) in &self.atoms {
            if system.mesh().locate(x).is_none() {
                return Err(FemError::OutsideMesh(x.x, x.y));
            }
            load[system.pole_vertex(x)?] += w;
        }
        if let Some(rho) = &self.density {
            let f: Vec<f64> = system.mesh().vertices.iter().map(|x| rho.eval_at(x, 0.0)).collect();
            for (l, v) in load.iter_mut().zip(system.load(&f)) {
                *l += v;
            }
        }
        system.solve(&vec![0.0; n], &load)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SemilinearConfig {
    /// Truncation levels `(n_k, m_k)`, strictly increasing in both.
    pub schedule: Vec<(f64, f64)>,
    pub picard_tol: f64,
    pub max_outer: usize,
    /// Initial damping θ of `u ← u + θ (T(u) - u)`; halved whenever the
    /// residual grows.
    pub damping: f64,
    pub max_inner: usize,
    /// Stop once two consecutive levels agree within `picard_tol`.
    pub stop_early: bool,
    /// Start from the harmonic lift (`true`) or from zero.
    pub start_harmonic: bool,
}

impl Default for SemilinearConfig {
    fn default() -> Self {
        Self {
            schedule: vec![(1.0, 1.0), (4.0, 4.0), (16.0, 16.0), (64.0, 64.0)],
            picard_tol: 1e-8,
            max_outer: 64,
            damping: 0.5,
            max_inner: 20_000,
            stop_early: true,
            start_harmonic: true,
        }
    }
}

impl SemilinearConfig {
    pub fn validate(&self) -> Result<(), SemilinearError> {
        if self.schedule.is_empty() {
            return Err(SemilinearError::Invalid("empty truncation schedule".into()));
        }
        if self.schedule.windows(2).any(|w| !(w[1].0 > w[0].0 && w[1].1 > w[0].1)) {
            return Err(SemilinearError::Invalid("truncation schedule must be strictly increasing".into()));
        }
        if self.schedule.iter().any(|(n, m)| !(*n >= 0.0 && *m >= 0.0)) {
            return Err(SemilinearError::Invalid("truncation levels must be nonnegative".into()));
        }
        if !(self.picard_tol > 0.0) {
            return Err(SemilinearError::Invalid("picard_tol must be positive".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(SemilinearError::Invalid("damping must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub n: f64,
    pub m: f64,
    pub iterations: usize,
    pub residual: f64,
    pub damping: f64,
    /// Largest change from the previous level.
    pub change: f64,
}

#[derive(Debug, Clone)]
pub struct SemilinearSolution {
    pub u: DiscreteField,
    pub harmonic: DiscreteField,
    pub measure_potential: DiscreteField,
    pub delta: DiscreteField,
    pub levels: Vec<LevelReport>,
    /// Solution at each truncation level, in schedule order.
    pub snapshots: Vec<Vec<f64>>,
    /// `‖u - (G f_{n,m}(·,u) + Gμ + H)‖_∞` at the last level.
    pub residual: f64,
    /// `‖f(·,u)‖_{L^1_δ}` without truncation.
    pub f_l1_delta: f64,
}

/// `f_{n,m} = (f ∧ n) ∨ (-m)`.
pub fn truncate(v: f64, n: f64, m: f64) -> f64 {
    v.min(n).max(-m)
}

fn sup_norm_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |s, (x, y)| s.max((x - y).abs()))
}

struct Picard<'a> {
    system: &'a FemSystem,
    f: &'a Expression,
    base: Vec<f64>,
}

impl Picard<'_> {
    /// Nodal `f_{n,m}(x, u)`.
    fn source(&self, u: &[f64], n: f64, m: f64) -> Vec<f64> {
        self.system
            .mesh()
            .vertices
            .iter()
            .zip(u)
            .map(|(x, &v)| truncate(self.f.eval_at(x, v), n, m))
            .collect()
    }

    /// `T(u) = G f_{n,m}(·,u) + Gμ + H`, with a lumped-mass load so that the
    /// discrete map keeps the comparison principle.
    fn apply(&self, u: &[f64], n: f64, m: f64) -> Result<Vec<f64>, FemError> {
        let s = self.source(u, n, m);
        let lm = self.system.lumped_mass();
        let load: Vec<f64> = s.iter().zip(lm).map(|(a, b)| a * b).collect();
        let nv = u.len();
        let g = self.system.solve(&vec![0.0; nv], &load)?;
        Ok(g.values.iter().zip(&self.base).map(|(a, b)| a + b).collect())
    }
}

/// Solves by damped Picard iteration at each truncation level, warm-starting
/// from the previous level.
pub fn solve_semilinear(
    system: &FemSystem,
    f: &Expression,
    mu: &MeasureData,
    psi: BoundaryFn<'_>,
    cfg: &SemilinearConfig,
) -> Result<SemilinearSolution, SemilinearError> {
    cfg.validate()?;
    let mesh = system.mesh().clone();
    let nv = mesh.n_vertices();
    let harmonic = system.solve_weak_fn(psi)?;
    let measure_potential = mu.potential(system)?;
    let delta = system.green_apply(&vec![1.0; nv])?;
    let base: Vec<f64> = harmonic.values.iter().zip(&measure_potential.values).map(|(a, b)| a + b).collect();

    let bound = 2.0 * base.iter().fold(0.0f64, |s, v| s.max(v.abs())) + 1.0;
    let step = (nv / 50).max(1);
    let probes: Vec<Point> = mesh.vertices.iter().step_by(step).copied().collect();
    if let Err(v) = check_nonincreasing(f, &probes, (-bound, bound)) {
        return Err(SemilinearError::NotMonotone { x: v.x, u_lo: v.u_lo, u_hi: v.u_hi });
    }

    let pic = Picard { system, f, base };
    let mut u = if cfg.start_harmonic { harmonic.values.clone() } else { vec![0.0; nv] };
    for i in mesh.boundary_vertices() {
        u[i] = harmonic.values[i];
    }
    let mut levels = Vec::new();
    let mut snapshots: Vec<Vec<f64>> = Vec::new();
    let mut residual = 0.0;
    for &(n, m) in cfg.schedule.iter().take(cfg.max_outer) {
        let mut theta = cfg.damping;
        let mut iterations = 0;
        let mut prev_res = f64::INFINITY;
        let mut growth = 0;
        let start_res;
        {
            let t = pic.apply(&u, n, m)?;
            start_res = sup_norm_diff(&t, &u);
        }
        loop {
            let t = pic.apply(&u, n, m)?;
            let res = sup_norm_diff(&t, &u);
            residual = res;
            if res <= cfg.picard_tol {
                break;
            }
            if res > prev_res {
                theta *= 0.5;
                growth += 1;
            }
            if iterations >= cfg.max_inner || theta < 1e-8 || (growth >= 50 && res > start_res) {
                return Err(SemilinearError::Diverged { n, m, residual: res });
            }
            for (ui, ti) in u.iter_mut().zip(&t) {
                *ui += theta * (ti - *ui);
            }
            prev_res = res;
            iterations += 1;
        }
        let change = snapshots.last().map_or(f64::INFINITY, |s| sup_norm_diff(s, &u));
        levels.push(LevelReport { n, m, iterations, residual, damping: theta, change });
        snapshots.push(u.clone());
        if cfg.stop_early && change <= cfg.picard_tol {
            break;
        }
    }
    let lm = system.lumped_mass();
    let f_l1_delta = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(i, x)| lm[i] * f.eval_at(x, u[i]).abs() * delta.values[i])
        .sum();
    Ok(SemilinearSolution {
        u: DiscreteField::new(mesh, u),
        harmonic,
        measure_potential,
        delta,
        levels,
        snapshots,
        residual,
        f_l1_delta,
    })
}

/// `T_k(u) = ((-k) ∨ u) ∧ k`.
pub fn t_k(v: f64, k: f64) -> f64 {
    v.max(-k).min(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriRow {
    pub k: f64,
    pub u_l1: f64,
    pub breve_sq: f64,
    pub bound: f64,
    /// `‖T_k u‖²_breve ≤ bound (1 + tol)`.
    pub holds: bool,
    /// The same bound with `‖u‖_{L^1}` added on the left.
    pub combined_holds: bool,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AprioriReport {
    pub psi_l1_hm: f64,
    pub f0_l1_delta: f64,
    pub mu_tv_delta: f64,
    pub lambda: f64,
    pub rows: Vec<AprioriRow>,
}

impl AprioriReport {
    pub fn all_hold(&self) -> bool {
        self.rows.iter().all(|r| r.holds)
    }
}

pub const TOL_APRIORI: f64 = 0.05;

/// Evaluates `‖T_k u‖²_breve ≤ 3kλ⁻¹(‖ψ‖_{L¹(h_m)} + ‖f(·,0)‖_{L¹_δ} + ‖μ‖_{TV,δ})`
/// for each `k`, with `‖ψ‖_{L¹(h_m)} = ∫ H_{|ψ|} dm` from the FEM.
pub fn apriori_check(
    system: &FemSystem,
    sol: &SemilinearSolution,
    psi: BoundaryFn<'_>,
    f: &Expression,
    mu: &MeasureData,
    ks: &[f64],
    tol: f64,
) -> Result<AprioriReport, SemilinearError> {
    let abs_psi = |b: &BoundaryPoint| psi(b).abs();
    let h_abs = system.solve_weak_fn(abs_psi)?;
    let psi_l1_hm = h_abs.integral();
    let lm = system.lumped_mass();
    let delta = &sol.delta;
    let f0_l1_delta: f64 = system
        .mesh()
        .vertices
        .iter()
        .enumerate()
        .map(|(i, x)| lm[i] * f.eval_at(x, 0.0).abs() * delta.values[i])
        .sum();
    let mu_tv_delta = mu.tv_delta(system, delta)?;
    let lambda = system.lambda();
    let u_l1 = sol.u.l1_norm();
    let data = psi_l1_hm + f0_l1_delta + mu_tv_delta;
    let rows = ks
        .iter()
        .map(|&k| {
            let tk = DiscreteField::new(sol.u.mesh.clone(), sol.u.values.iter().map(|v| t_k(*v, k)).collect());
            let (l2, grad) = breve_parts(&tk, delta)?;
            let breve_sq = (l2 + grad).powi(2);
            let bound = 3.0 * k / lambda * data;
            Ok(AprioriRow {
                k,
                u_l1,
                breve_sq,
                bound,
                holds: breve_sq <= bound * (1.0 + tol),
                combined_holds: u_l1 + breve_sq <= bound * (1.0 + tol),
                slack: bound - breve_sq,
            })
        })
        .collect::<Result<Vec<_>, FemError>>()?;
    Ok(AprioriReport { psi_l1_hm, f0_l1_delta, mu_tv_delta, lambda, rows })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GoodVerdict {
    Good,
    NotGood,
    Inconclusive,
}

/// Reads a verdict from near-atom absorbed masses along the truncation
/// ladder. Increments that keep pace with (≥ 0.9×) the previous one mean
/// the truncated absorption is still feeding on the atom; increments
/// that shrink (≤ 0.75×) or vanish mean the absorbed mass has settled.
pub fn classify_masses(masses: &[f64]) -> GoodVerdict {
    if masses.len() < 3 {
        return GoodVerdict::Inconclusive;
    }
    let l = masses.len();
    let d1 = masses[l - 2] - masses[l - 3];
    let d2 = masses[l - 1] - masses[l - 2];
    let scale = masses[l - 1].abs().max(1e-300);
    if d2.abs() <= 1e-9 * scale || masses.iter().all(|m| *m == 0.0) {
        return GoodVerdict::Good;
    }
    if d2 > 0.0 && d1 > 0.0 && d2 >= 0.9 * d1 {
        GoodVerdict::NotGood
    } else if d1 > 0.0 && d2.abs() <= 0.75 * d1 {
        GoodVerdict::Good
    } else {
        GoodVerdict::Inconclusive
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodMeasureRun {
    pub psi: f64,
    pub truncations: Vec<f64>,
    pub masses: Vec<f64>,
    /// `u` at the node nearest the atom for each level.
    pub atom_values: Vec<f64>,
    pub verdict: GoodVerdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoodMeasureReport {
    pub runs: Vec<GoodMeasureRun>,
    pub verdict: GoodVerdict,
    pub consistent: bool,
}

impl GoodMeasureReport {
    fn from_runs(runs: Vec<GoodMeasureRun>) -> Self {
        let consistent = runs.windows(2).all(|w| w[0].verdict == w[1].verdict);
        let verdict = if consistent { runs[0].verdict } else { GoodVerdict::Inconclusive };
        Self { runs, verdict, consistent }
    }
}

pub const NEAR_ATOM_RADIUS: f64 = 0.1;

/// Radial 3D probe for `μ = w δ_0`, `f(u) = -u|u|^{p-1}` on the unit
/// ball, run for boundary values ψ = 0 and ψ = 1.
pub fn good_measure_probe_radial(p: f64, weight: f64, truncations: &[f64], base: &radial::RadialProblem) -> GoodMeasureReport {
    let runs = [0.0, 1.0]
        .iter()
        .map(|&psi| {
            let prob = radial::RadialProblem { p, weight, psi, ..*base };
            let mut warm: Option<Vec<f64>> = None;
            let mut masses = Vec::new();
            let mut atom_values = Vec::new();
            for &m in truncations {
                let s = radial::solve_radial(&prob, m, warm.as_deref());
                masses.push(s.near_atom_mass(NEAR_ATOM_RADIUS));
                atom_values.push(s.u[0]);
                warm = Some(s.u);
            }
            GoodMeasureRun { psi, truncations: truncations.to_vec(), verdict: classify_masses(&masses), masses, atom_values }
        })
        .collect();
    GoodMeasureReport::from_runs(runs)
}

/// 2D FEM probe for `μ = w δ_atom` with the power absorption `f`, run for
/// ψ = 0 and ψ = 1 over the configured schedule.
pub fn good_measure_probe_fem(
    system: &FemSystem,
    f: &Expression,
    atom: Point,
    weight: f64,
    cfg: &SemilinearConfig,
) -> Result<GoodMeasureReport, SemilinearError> {
    let mu = MeasureData::dirac(atom, weight);
    let cfg = SemilinearConfig { stop_early: false, ..cfg.clone() };
    let pole = system.pole_vertex(&atom)?;
    let lm = system.lumped_mass();
    let mut runs = Vec::new();
    for psi in [0.0, 1.0] {
        let data = move |_: &BoundaryPoint| psi;
        let sol = solve_semilinear(system, f, &mu, &data, &cfg)?;
        let verts = &system.mesh().vertices;
        let masses: Vec<f64> = sol
            .snapshots
            .iter()
            .zip(&sol.levels)
            .map(|(u, lvl)| {
                verts
                    .iter()
                    .enumerate()
                    .filter(|(_, x)| (*x - atom).norm() < NEAR_ATOM_RADIUS)
                    .map(|(i, x)| lm[i] * truncate(f.eval_at(x, u[i]), lvl.n, lvl.m).abs() * sol.delta.values[i])
                    .sum()
            })
            .collect();
        runs.push(GoodMeasureRun {
            psi,
            truncations: sol.levels.iter().map(|l| l.m).collect(),
            atom_values: sol.snapshots.iter().map(|u| u[pole]).collect(),
            verdict: classify_masses(&masses),
            masses,
        });
    }
    Ok(GoodMeasureReport::from_runs(runs))
}

/// Largest increase `u_{k+1} - u_k` between consecutive truncation levels
/// over all vertices (nonpositive when the ladder is monotone in `m`).
pub fn truncation_monotonicity(sol: &SemilinearSolution) -> f64 {
    sol.snapshots
        .windows(2)
        .flat_map(|w| w[1].iter().zip(&w[0]).map(|(a, b)| a - b))
        .fold(f64::NEG_INFINITY, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub holds: bool,
    pub worst_vertex: usize,
    /// `max (u1 - u2)`.
    pub worst_excess: f64,
}

/// Checks `u1 ≤ u2 + tol` at every vertex.
pub fn comparison_check(u1: &DiscreteField, u2: &DiscreteField, tol: f64) -> Result<ComparisonReport, SemilinearError> {
    if !u1.same_mesh(u2) {
        return Err(FemError::MeshMismatch.into());
    }
    let (worst_vertex, worst_excess) = u1
        .values
        .iter()
        .zip(&u2.values)
        .map(|(a, b)| a - b)
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, d)| if d > best.1 { (i, d) } else { best });
    Ok(ComparisonReport { holds: worst_excess <= tol, worst_vertex, worst_excess })
}

/// `∫ |u|^q δ dm` for the radial solution at two grid resolutions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpDeltaRow {
    pub q: f64,
    pub coarse: f64,
    pub fine: f64,
    pub relative_change: f64,
}

/// Refinement study of `∫|u|^q δ dm` for the radial Dirac problem: the
/// fine grid halves `r_min` twice and doubles the node count.
pub fn lp_delta_refinement(p: f64, weight: f64, m: f64, qs: &[f64], base: &radial::RadialProblem) -> Vec<LpDeltaRow> {
    let coarse_p = radial::RadialProblem { p, weight, ..*base };
    let fine_p = radial::RadialProblem { nodes: 2 * base.nodes, r_min: base.r_min / 4.0, ..coarse_p };
    let c = radial::solve_radial(&coarse_p, m, None);
    let f = radial::solve_radial(&fine_p, m, None);
    qs.iter()
        .map(|&q| {
            let (a, b) = (c.lp_delta(q), f.lp_delta(q));
            LpDeltaRow { q, coarse: a, fine: b, relative_change: (b - a).abs() / a.abs().max(1e-300) }
        })
        .collect()
}
