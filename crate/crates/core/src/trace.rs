//! Path-limit trace estimation, the Martin metric built from FEM Green
//! operators, 𝔇^p/𝔖^p norm estimates and the harmonic + potential
//! decomposition.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::CoefficientField;
use crate::diffusion::{sample_batch_from, PointFn, SimConfig, SimError, Trackers};
use crate::expr::{Expression, Var};
use crate::fem::{DiscreteField, FemError, FemSystem};
use crate::geometry::{BoundaryPoint, Domain, Point, Side};
use crate::harmonic::{quadrature_samples, BoundaryCache, BoundaryCell, Binning, HarmonicError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TraceError {
    #[error(transparent)]
    Harmonic(#[from] HarmonicError),
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("{0}")]
    Invalid(String),
    #[error("only {converged} of {total} trace samples converged")]
    NotConvergent { converged: usize, total: usize },
}

impl From<SimError> for TraceError {
    fn from(e: SimError) -> Self {
        TraceError::Harmonic(e.into())
    }
}

/// Scale knobs for path-limit detection, as fractions of the oscillation of
/// `u` and of the domain diameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceConfig {
    pub tol_factor: f64,
    pub window_factor: f64,
    pub grid: usize,
    pub per_point: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        Self {
            tol_factor: 0.02,
            window_factor: 0.002,
            grid: 16,
            per_point: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub boundary_point: BoundaryPoint,
    pub limit_value: f64,
    pub converged: bool,
    pub last_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCell {
    pub cell: BoundaryCell,
    pub samples: usize,
    pub converged: usize,
    pub mean: f64,
    pub spread: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub tol_trace: f64,
    pub w_trace: f64,
    pub samples: Vec<TraceSample>,
    pub cells: Vec<TraceCell>,
}

impl TraceReport {
    pub fn converged_fraction(&self) -> f64 {
        self.samples.iter().filter(|s| s.converged).count() as f64 / self.samples.len() as f64
    }

    pub fn converged(&self) -> impl Iterator<Item = &TraceSample> {
        self.samples.iter().filter(|s| s.converged)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cell,side,samples,converged,mean,spread\n");
        for c in &self.cells {
            let side = match c.cell {
                BoundaryCell::Slit { side } => side.as_str(),
                _ => "",
            };
            s.push_str(&format!("{},{},{},{},{},{}\n", c.cell.label(), side, c.samples, c.converged, c.mean, c.spread));
        }
        s
    }

    /// Share of converged slit samples whose limit has the sign `sign(side)`;
    /// `None` when no converged sample ended on a slit side.
    pub fn side_agreement(&self, sign: impl Fn(Side) -> f64) -> Option<(f64, usize)> {
        let mut n = 0;
        let mut ok = 0;
        for s in self.converged() {
            if let Some(side @ (Side::Above | Side::Below)) = s.boundary_point.side {
                n += 1;
                if s.limit_value * sign(side) > 0.0 {
                    ok += 1;
                }
            }
        }
        (n > 0).then(|| (ok as f64 / n as f64, n))
    }
}

/// Evaluates a FEM field anywhere near the mesh, falling back to the nearest
/// vertex outside it.
pub fn field_fn(u: &DiscreteField) -> impl Fn(&Point) -> f64 + Sync + '_ {
    move |x| {
        u.eval(x).unwrap_or_else(|| {
            let v = u.mesh.nearest_vertex(x, false).expect("non-empty mesh");
            u.values[v]
        })
    }
}

/// `max u - min u` over a quadrature grid.
pub fn oscillation(domain: &Domain, u: PointFn<'_>) -> f64 {
    let (pts, _) = domain.quadrature_grid(64);
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &pts {
        let v = u(p);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if pts.is_empty() { 0.0 } else { hi - lo }
}

/// Path limits of `u(X_t)` as `t → τ`: the limit is the mean of the last
/// values recorded inside the boundary window of width `w_trace`, and the
/// sample is converged when those values oscillate by at most `tol_trace`.
pub fn trace_estimate(
    domain: &Domain,
    field: &CoefficientField,
    u: PointFn<'_>,
    cfg: &SimConfig,
    tcfg: &TraceConfig,
) -> Result<TraceReport, TraceError> {
    let osc = oscillation(domain, u);
    let tol = (tcfg.tol_factor * osc).max(1e-12);
    let w = tcfg.window_factor * domain.diam();
    trace_with(domain, field, u, cfg, tcfg, tol, w)
}

fn trace_with(
    domain: &Domain,
    field: &CoefficientField,
    u: PointFn<'_>,
    cfg: &SimConfig,
    tcfg: &TraceConfig,
    tol: f64,
    w: f64,
) -> Result<TraceReport, TraceError> {
    let tr = Trackers { window: Some((u, w)), ..Trackers::default() };
    let (_, _, batch) = quadrature_samples(domain, field, cfg, tcfg.grid, tcfg.per_point, tr, 0)?;
    let samples: Vec<TraceSample> = batch
        .records
        .iter()
        .map(|r| {
            let win = r.window.clone().unwrap_or_default();
            let mut last = win.last.clone();
            if last.is_empty() {
                last.push(u(&r.exit_point.position));
            }
            let limit = last.iter().sum::<f64>() / last.len() as f64;
            let lo = last.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            TraceSample {
                boundary_point: r.exit_point,
                limit_value: limit,
                converged: hi - lo <= tol && limit.is_finite(),
                last_values: last,
            }
        })
        .collect();
    let binning = Binning::default();
    let cell_list = binning.cells(domain);
    let mut acc = vec![(0usize, 0usize, 0.0f64, 0.0f64); cell_list.len()];
    for (s, r) in samples.iter().zip(&batch.records) {
        let k = binning.locate(domain, r);
        acc[k].0 += 1;
        if s.converged {
            acc[k].1 += 1;
            acc[k].2 += s.limit_value;
            acc[k].3 += s.limit_value * s.limit_value;
        }
    }
    let cells = cell_list
        .into_iter()
        .zip(acc)
        .filter(|(_, a)| a.0 > 0)
        .map(|(cell, (n, c, s, s2))| {
            let mean = if c > 0 { s / c as f64 } else { f64::NAN };
            let var = if c > 1 { ((s2 - s * mean) / (c - 1) as f64).max(0.0) } else { 0.0 };
            TraceCell { cell, samples: n, converged: c, mean, spread: var.sqrt() }
        })
        .collect();
    Ok(TraceReport { tol_trace: tol, w_trace: w, samples, cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingReport {
    pub norm_omega: f64,
    pub norm_martin: f64,
    pub bitwise_equal: bool,
    /// Every path satisfies `i_M(ψ)(exit with side) = ψ(exit position)`.
    pub pathwise_identity: bool,
    pub n_samples: usize,
    /// Side agreement of the ±1 slit trace, exhibiting a trace that no
    /// side-independent ψ can produce (slit domains only).
    pub non_surjective_witness: Option<f64>,
}

/// Shared-sample check that `i_M` is an isometry from `L^2(∂D; ω_m)` into
/// `L^2(∂_M D; h_m)`, with `m` normalised to a probability on `D`.
/// `witness` holds an FEM system for the slit ±1 data when the domain
/// has a two-sided boundary piece.
pub fn im_embedding_check(
    domain: &Domain,
    field: &CoefficientField,
    psi: &Expression,
    cfg: &SimConfig,
    tcfg: &TraceConfig,
    witness: Option<&FemSystem>,
) -> Result<EmbeddingReport, TraceError> {
    if psi.uses(Var::Side) {
        return Err(TraceError::Invalid("ψ must not depend on the side label".into()));
    }
    let (_, _, batch) = quadrature_samples(domain, field, cfg, tcfg.grid, tcfg.per_point, Trackers::default(), 0)?;
    let n = batch.records.len() as f64;
    let mut identity = true;
    let (mut s_omega, mut s_martin) = (0.0, 0.0);
    for r in &batch.records {
        let plain = psi.eval_boundary(&BoundaryPoint::plain(r.exit_point.position));
        let lifted = psi.eval_boundary(&r.exit_point);
        identity &= plain.to_bits() == lifted.to_bits();
        s_omega += plain * plain;
        s_martin += lifted * lifted;
    }
    let norm_omega = (s_omega / n).sqrt();
    let norm_martin = (s_martin / n).sqrt();
    let non_surjective_witness = match (domain.slit(), witness) {
        (Some(_), Some(sys)) => {
            let u = sys.solve_weak_fn(slit_data)?;
            let f = field_fn(&u);
            let rep = trace_estimate(domain, field, &f, cfg, tcfg)?;
            rep.side_agreement(side_sign).map(|(frac, _)| frac)
        }
        _ => None,
    };
    Ok(EmbeddingReport {
        norm_omega,
        norm_martin,
        bitwise_equal: norm_omega.to_bits() == norm_martin.to_bits(),
        pathwise_identity: identity,
        n_samples: batch.records.len(),
        non_surjective_witness,
    })
}

/// +1 above the slit, -1 below, 0 elsewhere.
pub fn slit_data(b: &BoundaryPoint) -> f64 {
    match b.side {
        Some(Side::Above) => 1.0,
        Some(Side::Below) => -1.0,
        _ => 0.0,
    }
}

pub fn side_sign(s: Side) -> f64 {
    match s {
        Side::Above => 1.0,
        Side::Below => -1.0,
        Side::Tip => 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Point,
    pub width: f64,
}

impl Bump {
    pub fn eval(&self, x: &Point) -> f64 {
        let s = (x - self.center).norm_squared() / (self.width * self.width);
        if s >= 1.0 { 0.0 } else { (1.0 - s) * (1.0 - s) }
    }
}

/// Compactly supported bumps on dyadic lattices over the bounding box,
/// coarse to fine, keeping those whose support stays inside `D`.
pub fn dyadic_bumps(domain: &Domain, n: usize) -> Vec<Bump> {
    let (lo, hi) = domain.bbox();
    let mut out = Vec::new();
    for level in 0..24 {
        let s = domain.diam() / f64::powi(2.0, level + 1);
        let w = 0.45 * s;
        let counts: Vec<usize> = (0..2).map(|i| ((hi[i] - lo[i]) / s).ceil().max(1.0) as usize).collect();
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let c = Point::new(lo.x + (i as f64 + 0.5) * s, lo.y + (j as f64 + 0.5) * s, 0.0);
                if domain.inside(&c) && domain.signed_distance(&c) > w {
                    out.push(Bump { center: c, width: w });
                    if out.len() == n {
                        return out;
                    }
                }
            }
        }
    }
    out
}

/// `ϱ(x, y) = Σ 2^{-n} |Δ_n| / (1 + |Δ_n|)` with
/// `Δ_n = κ̂f_n(x) - κ̂f_n(y)` and `κ̂f(z) = (G f)(z) / δ(z)`, both Green
/// operators computed by the FEM.
pub struct MartinMetric {
    system: Arc<FemSystem>,
    delta: DiscreteField,
    bumps: Vec<Bump>,
    potentials: Vec<DiscreteField>,
}

impl MartinMetric {
    pub fn new(system: Arc<FemSystem>, domain: &Domain, n: usize) -> Result<Self, TraceError> {
        let mesh = system.mesh().clone();
        let ones = vec![1.0; mesh.n_vertices()];
        let delta = system.green_apply(&ones)?;
        let bumps = dyadic_bumps(domain, n);
        if bumps.is_empty() {
            return Err(TraceError::Invalid("no bump fits inside the domain".into()));
        }
        let potentials = bumps
            .iter()
            .map(|b| {
                let f: Vec<f64> = mesh.vertices.iter().map(|v| b.eval(v)).collect();
                system.green_apply(&f)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { system, delta, bumps, potentials })
    }

    pub fn bumps(&self) -> &[Bump] {
        &self.bumps
    }

    pub fn system(&self) -> &FemSystem {
        &self.system
    }

    /// `κ̂f_n(z)` for every family member.
    pub fn kernel_values(&self, z: &Point) -> Result<Vec<f64>, TraceError> {
        let mesh = self.system.mesh();
        let (t, bary) = mesh
            .locate(z)
            .ok_or(FemError::OutsideMesh(z.x, z.y))?;
        let tri = mesh.triangles[t];
        let interp = |vals: &[f64]| bary[0] * vals[tri[0]] + bary[1] * vals[tri[1]] + bary[2] * vals[tri[2]];
        let d = interp(&self.delta.values);
        if d <= 0.0 {
            return Err(TraceError::Invalid(format!("δ vanishes at ({}, {})", z.x, z.y)));
        }
        Ok(self.potentials.iter().map(|p| interp(&p.values) / d).collect())
    }

    pub fn distance(&self, x: &Point, y: &Point) -> Result<f64, TraceError> {
        let kx = self.kernel_values(x)?;
        let ky = self.kernel_values(y)?;
        Ok(metric_sum(&kx, &ky))
    }
}

fn metric_sum(kx: &[f64], ky: &[f64]) -> f64 {
    let mut s = 0.0;
    let mut w = 1.0;
    for (a, b) in kx.iter().zip(ky) {
        w *= 0.5;
        let d = (a - b).abs();
        s += w * d / (1.0 + d);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStage {
    pub n: u32,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormReport {
    pub p: f64,
    pub d_norm: f64,
    pub d_norm_se: f64,
    pub s_norm: Option<f64>,
    pub s_norm_se: Option<f64>,
    /// `‖ψ‖_{L^p(∂; h_m)}`, the term for `D` itself.
    pub boundary_norm: f64,
    pub boundary_norm_se: f64,
    /// `∫ E_x|u(X_{τ_{D_n}})|^p m(dx)` per exhaustion stage.
    pub stages: Vec<NormStage>,
    /// `S^p / D^p` when the S-norm is reported.
    pub doob_ratio: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormConfig {
    pub grid: usize,
    pub per_point: usize,
    pub stages: u32,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self { grid: 16, per_point: 40, stages: 10 }
    }
}

/// Volume-weighted mean and standard error of per-path samples.
fn volume_term(samples: &[f64], volume: f64) -> (f64, f64) {
    let e = crate::harmonic::Estimate::from_samples(samples, 0);
    (volume * e.value, volume * e.std_error)
}

/// Norm with a delta-method standard error from a term `T = ‖·‖^p`.
fn root(term: (f64, f64), p: f64) -> (f64, f64) {
    let n = term.0.max(0.0).powf(1.0 / p);
    let se = if term.0 > 0.0 { term.1 * n / (p * term.0) } else { 0.0 };
    (n, se)
}

/// 𝔇^p and 𝔖^p norms of the harmonic function `u` with boundary values
/// `psi`, integrated against Lebesgue measure over a quadrature grid.
pub fn norm_report(
    domain: &Domain,
    field: &CoefficientField,
    u: PointFn<'_>,
    psi: &(dyn Fn(&BoundaryPoint) -> f64 + Sync),
    p: f64,
    cfg: &SimConfig,
    ncfg: &NormConfig,
) -> Result<NormReport, TraceError> {
    if p < 1.0 || !p.is_finite() {
        return Err(TraceError::Invalid(format!("p must be at least 1, got {p}")));
    }
    if ncfg.stages == 0 {
        return Err(TraceError::Invalid("norms need at least one exhaustion stage".into()));
    }
    let sup_fn = |x: &Point| u(x).abs().powf(p);
    let want_s = p > 1.0;
    let tr = Trackers { sup: want_s.then_some(&sup_fn as PointFn<'_>), ..Trackers::default() };
    let (pts, vol, batch) = quadrature_samples(domain, field, cfg, ncfg.grid, ncfg.per_point, tr, 0)?;
    let volume = vol * pts.len() as f64;
    let bvals: Vec<f64> = batch.records.iter().map(|r| psi(&r.exit_point).abs().powf(p)).collect();
    let full = volume_term(&bvals, volume);
    let mut stages = Vec::new();
    for n in 1..=ncfg.stages {
        let dn = domain.exhaustion(n);
        let start = |i: usize| pts[i / ncfg.per_point];
        let stream = (n as u64) << 36;
        let mut vals = vec![0.0; pts.len() * ncfg.per_point];
        let inside: Vec<bool> = pts.iter().map(|x| dn.inside(x)).collect();
        if inside.iter().any(|b| *b) {
            // Paths from points outside D_n stop at once; only inside points simulate.
            let idx: Vec<usize> = (0..vals.len()).filter(|i| inside[i / ncfg.per_point]).collect();
            let st = |k: usize| start(idx[k]);
            let b = sample_batch_from(&dn, field, &st, cfg, idx.len(), Trackers::default(), stream)?;
            if b.truncated > 0 {
                return Err(SimError::TruncationBudget { truncated: b.truncated, n_paths: b.n_paths }.into());
            }
            for (k, r) in idx.iter().zip(&b.records) {
                vals[*k] = u(&r.exit_point.position).abs().powf(p);
            }
        }
        for (i, v) in vals.iter_mut().enumerate() {
            if !inside[i / ncfg.per_point] {
                *v = u(&start(i)).abs().powf(p);
            }
        }
        let (value, std_error) = volume_term(&vals, volume);
        stages.push(NormStage { n, value, std_error });
    }
    // The D-norm is the sup over the exhaustion alone, so it stays an
    // independent route to the boundary norm; its bias shrinks like 2^-stages.
    let best = stages
        .iter()
        .map(|s| (s.value, s.std_error))
        .fold((f64::NEG_INFINITY, 0.0), |a, b| if b.0 > a.0 { b } else { a });
    let (d_norm, d_norm_se) = root(best, p);
    let (boundary_norm, boundary_norm_se) = root(full, p);
    let (s_norm, s_norm_se, doob_ratio) = if want_s {
        let sups: Vec<f64> = batch
            .records
            .iter()
            .zip(&bvals)
            .map(|(r, b)| r.sup_functional.unwrap_or(0.0).max(*b))
            .collect();
        let s = volume_term(&sups, volume);
        let (n, se) = root(s, p);
        (Some(n), Some(se), Some(s.0 / best.0))
    } else {
        (None, None, None)
    };
    Ok(NormReport {
        p,
        d_norm,
        d_norm_se,
        s_norm,
        s_norm_se,
        boundary_norm,
        boundary_norm_se,
        stages,
        doob_ratio,
    })
}

#[derive(Debug, Clone)]
pub struct Decomposition {
    pub harmonic: DiscreteField,
    pub potential: DiscreteField,
    pub trace: TraceReport,
    /// Trace of the potential part; its converged limits should vanish.
    pub potential_trace: TraceReport,
}

impl Decomposition {
    /// Largest `|limit|` among converged samples of the potential's trace.
    pub fn potential_trace_max(&self) -> f64 {
        self.potential_trace.converged().map(|s| s.limit_value.abs()).fold(0.0, f64::max)
    }
}

/// Splits `psi = h + p` with `h` harmonic carrying the estimated trace of
/// `psi` and `p` of potential type. Boundary values of `h` at each mesh
/// boundary vertex interpolate the converged trace samples on the same side.
pub fn decompose(
    domain: &Domain,
    field: &CoefficientField,
    system: &FemSystem,
    psi: &DiscreteField,
    cfg: &SimConfig,
    tcfg: &TraceConfig,
) -> Result<Decomposition, TraceError> {
    let f = field_fn(psi);
    let trace = trace_estimate(domain, field, &f, cfg, tcfg)?;
    let total = trace.samples.len();
    let converged = trace.converged().count();
    if (converged as f64) < 0.99 * total as f64 {
        return Err(TraceError::NotConvergent { converged, total });
    }
    let mesh = system.mesh().clone();
    let mut caches: Vec<(Option<Side>, BoundaryCache)> = Vec::new();
    for side in [None, Some(Side::Above), Some(Side::Below), Some(Side::Tip)] {
        let (nodes, values): (Vec<Point>, Vec<f64>) = trace
            .converged()
            .filter(|s| s.boundary_point.side == side)
            .map(|s| (s.boundary_point.position, s.limit_value))
            .unzip();
        if !nodes.is_empty() {
            caches.push((side, BoundaryCache::new(nodes, values, 4)));
        }
    }
    let h = system.solve_weak_fn(|b| {
        let cache = caches
            .iter()
            .find(|(s, _)| *s == b.side)
            .or_else(|| caches.iter().find(|(s, _)| s.is_none()))
            .map(|(_, c)| c);
        match cache {
            Some(c) => c.eval(&b.position),
            None => f(&b.position),
        }
    })?;
    let p = DiscreteField::new(mesh, psi.values.iter().zip(&h.values).map(|(a, b)| a - b).collect());
    let potential_trace = {
        let pf = field_fn(&p);
        trace_with(domain, field, &pf, cfg, tcfg, trace.tol_trace, trace.w_trace)?
    };
    Ok(Decomposition { harmonic: h, potential: p, trace, potential_trace })
}
