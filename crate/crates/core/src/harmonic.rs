//! Monte Carlo estimators built on exit records: PWB values, harmonic
//! measure histograms, mean exit times, boundary regularity and a few
//! consistency checks (soft solutions, Harnack ratios, tower property).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::CoefficientField;
use crate::diffusion::{
    probe_stream, sample_batch_from, sample_exit_batch, Batch, ExitRecord, PointFn, Scheme,
    SimConfig, SimError, Trackers,
};
use crate::geometry::{BoundaryPoint, Domain, GeometryError, Point, Side};

pub type BoundaryFn<'a> = &'a (dyn Fn(&BoundaryPoint) -> f64 + Sync);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarmonicError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("boundary data is not finite at ({x}, {y}, {z})")]
    NotFinite { x: f64, y: f64, z: f64 },
    #[error("{0}")]
    Precondition(String),
}

/// Sample mean with its CLT standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: usize,
    pub truncated: usize,
}

impl Estimate {
    pub fn from_samples(samples: &[f64], truncated: usize) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            value: mean,
            std_error: (var / n as f64).sqrt(),
            n_samples: n,
            truncated,
        }
    }

    /// `|self - other| <= k * sqrt(se1^2 + se2^2)`.
    pub fn agrees_with(&self, other: &Estimate, k: f64) -> bool {
        (self.value - other.value).abs() <= k * self.std_error.hypot(other.std_error)
    }
}

/// Cells of the boundary used by histograms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundaryCell {
    /// Angular sector about the domain centre (2D).
    Angle { index: usize, lo: f64, hi: f64 },
    /// Band `lo <= cos(polar angle) < hi` about the domain centre (3D);
    /// equal-width bands have equal area on a sphere.
    Band { index: usize, lo: f64, hi: f64 },
    Slit { side: Side },
    Puncture { index: usize },
}

impl BoundaryCell {
    pub fn label(&self) -> String {
        match self {
            BoundaryCell::Angle { index, .. } => format!("angle{index}"),
            BoundaryCell::Band { index, .. } => format!("band{index}"),
            BoundaryCell::Slit { side } => format!("slit_{}", side.as_str()),
            BoundaryCell::Puncture { index } => format!("puncture{index}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Binning {
    pub angular: usize,
}

impl Default for Binning {
    fn default() -> Self {
        Self { angular: 36 }
    }
}

impl Binning {
    pub fn cells(&self, domain: &Domain) -> Vec<BoundaryCell> {
        let n = self.angular;
        let mut cells: Vec<BoundaryCell> = (0..n)
            .map(|i| {
                if domain.dim() == 2 {
                    let w = 2.0 * PI / n as f64;
                    BoundaryCell::Angle { index: i, lo: -PI + w * i as f64, hi: -PI + w * (i + 1) as f64 }
                } else {
                    let w = 2.0 / n as f64;
                    BoundaryCell::Band { index: i, lo: -1.0 + w * i as f64, hi: -1.0 + w * (i + 1) as f64 }
                }
            })
            .collect();
        if domain.slit().is_some() {
            for side in [Side::Above, Side::Below, Side::Tip] {
                cells.push(BoundaryCell::Slit { side });
            }
        }
        for index in 0..domain.punctures().len() {
            cells.push(BoundaryCell::Puncture { index });
        }
        cells
    }

    /// Index into [`Binning::cells`] of the cell containing an exit.
    pub fn locate(&self, domain: &Domain, rec: &ExitRecord) -> usize {
        let n = self.angular;
        let extra = if domain.slit().is_some() { 3 } else { 0 };
        if rec.hit_puncture {
            let p = rec.exit_point.position;
            let k = domain
                .punctures()
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - p).norm().total_cmp(&(b.1 - p).norm()))
                .map(|(k, _)| k)
                .unwrap_or(0);
            return n + extra + k;
        }
        if let Some(side) = rec.exit_point.side {
            if extra > 0 {
                return n + match side {
                    Side::Above => 0,
                    Side::Below => 1,
                    Side::Tip => 2,
                };
            }
        }
        let v = rec.exit_point.position - domain.center();
        let i = if domain.dim() == 2 {
            ((v.y.atan2(v.x) + PI) / (2.0 * PI) * n as f64).floor() as isize
        } else {
            let c = if v.norm() > 0.0 { v.z / v.norm() } else { 0.0 };
            ((c + 1.0) / 2.0 * n as f64).floor() as isize
        };
        i.clamp(0, n as isize - 1) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub cell: BoundaryCell,
    pub count: usize,
    pub mass: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonicMeasureHistogram {
    pub bins: Vec<HistogramBin>,
    /// Starting point; `None` for measures averaged over an interior grid.
    pub x0: Option<Point>,
    /// Total mass of the represented measure before normalisation
    /// (1 for a single starting point, the grid volume for averaged ones).
    pub total: f64,
    pub n_samples: usize,
}

impl HarmonicMeasureHistogram {
    pub fn total_variation(&self, reference: &[f64]) -> f64 {
        0.5 * self.bins.iter().zip(reference).map(|(b, r)| (b.mass - r).abs()).sum::<f64>()
    }

    pub fn mass_of(&self, cell: &BoundaryCell) -> f64 {
        self.bins.iter().filter(|b| &b.cell == cell).map(|b| b.mass).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("cell,lo,hi,count,mass,std_error\n");
        for b in &self.bins {
            let (lo, hi) = match b.cell {
                BoundaryCell::Angle { lo, hi, .. } | BoundaryCell::Band { lo, hi, .. } => (lo, hi),
                _ => (f64::NAN, f64::NAN),
            };
            s.push_str(&format!("{},{},{},{},{},{}\n", b.cell.label(), lo, hi, b.count, b.mass, b.std_error));
        }
        s
    }
}

/// Poisson-kernel masses of the angular cells of a disk seen from `x0`
/// (composite Simpson per cell); `None` unless the domain is a 2D ball.
pub fn poisson_reference(domain: &Domain, x0: &Point, binning: &Binning) -> Option<Vec<f64>> {
    let radius = match domain.spec() {
        crate::geometry::ShapeSpec::Ball { radius, .. } if domain.dim() == 2 => *radius,
        _ => return None,
    };
    let c = domain.center();
    let (px, py) = (x0.x - c.x, x0.y - c.y);
    let rho2 = px * px + py * py;
    let kernel = |t: f64| {
        let (dx, dy) = (radius * t.cos() - px, radius * t.sin() - py);
        (radius * radius - rho2) / (2.0 * PI * (dx * dx + dy * dy))
    };
    const PANELS: usize = 64;
    let masses = binning
        .cells(domain)
        .iter()
        .map(|cell| match *cell {
            BoundaryCell::Angle { lo, hi, .. } => {
                let h = (hi - lo) / PANELS as f64;
                let inner: f64 = (1..PANELS).map(|i| if i % 2 == 1 { 4.0 } else { 2.0 } * kernel(lo + h * i as f64)).sum();
                h / 3.0 * (kernel(lo) + inner + kernel(hi))
            }
            _ => 0.0,
        })
        .collect();
    Some(masses)
}

fn check_inside(domain: &Domain, x: &Point) -> Result<(), HarmonicError> {
    domain.distance_to_boundary(x)?;
    Ok(())
}

/// Exit samples from `x0` on streams `probe_stream(probe)..`.
pub fn exit_samples(
    domain: &Domain,
    field: &CoefficientField,
    x0: &Point,
    cfg: &SimConfig,
    n_paths: usize,
    trackers: Trackers<'_>,
    probe: usize,
) -> Result<Batch, HarmonicError> {
    check_inside(domain, x0)?;
    Ok(sample_exit_batch(domain, field, x0, cfg, n_paths, trackers, probe_stream(probe))?)
}

/// Mean of `psi` over the exit points of a batch.
pub fn boundary_mean(batch: &Batch, psi: BoundaryFn<'_>) -> Result<Estimate, HarmonicError> {
    let mut vals = Vec::with_capacity(batch.records.len());
    for r in &batch.records {
        let v = psi(&r.exit_point);
        if !v.is_finite() {
            let p = r.exit_point.position;
            return Err(HarmonicError::NotFinite { x: p.x, y: p.y, z: p.z });
        }
        vals.push(v);
    }
    Ok(Estimate::from_samples(&vals, batch.truncated))
}

/// `u(x0) = E ψ(X_τ)`.
pub fn pwb_solve(
    domain: &Domain,
    field: &CoefficientField,
    psi: BoundaryFn<'_>,
    x0: &Point,
    cfg: &SimConfig,
    n_paths: usize,
) -> Result<Estimate, HarmonicError> {
    let batch = exit_samples(domain, field, x0, cfg, n_paths, Trackers::default(), 0)?;
    boundary_mean(&batch, psi)
}

/// PWB values at several probes; probe `k` uses its own stream block.
pub fn pwb_probes(
    domain: &Domain,
    field: &CoefficientField,
    psi: BoundaryFn<'_>,
    probes: &[Point],
    cfg: &SimConfig,
    n_paths: usize,
) -> Result<Vec<Estimate>, HarmonicError> {
    probes
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let b = exit_samples(domain, field, x, cfg, n_paths, Trackers::default(), k)?;
            boundary_mean(&b, psi)
        })
        .collect()
}

fn histogram_from(
    domain: &Domain,
    batch: &Batch,
    weights: Option<&[f64]>,
    binning: &Binning,
    x0: Option<Point>,
    total: f64,
) -> HarmonicMeasureHistogram {
    let cells = binning.cells(domain);
    let mut count = vec![0usize; cells.len()];
    let mut mass = vec![0.0; cells.len()];
    let mut hits = Vec::with_capacity(batch.records.len());
    for (i, r) in batch.records.iter().enumerate() {
        let c = binning.locate(domain, r);
        count[c] += 1;
        mass[c] += weights.map_or(1.0, |w| w[i]);
        hits.push(c);
    }
    let wsum: f64 = weights.map_or(batch.records.len() as f64, |w| w.iter().sum());
    let n = batch.records.len() as f64;
    let bins = cells
        .into_iter()
        .enumerate()
        .map(|(k, cell)| {
            let p = mass[k] / wsum;
            // Standard error of a weighted indicator mean.
            let se = match weights {
                None => (p * (1.0 - p) / n).sqrt(),
                Some(w) => {
                    let mean_w = wsum / n;
                    let var = hits
                        .iter()
                        .zip(w)
                        .map(|(&h, &wi)| {
                            let ind = if h == k { 1.0 } else { 0.0 };
                            let z = wi * (ind - p) / mean_w;
                            z * z
                        })
                        .sum::<f64>()
                        / (n - 1.0).max(1.0);
                    (var / n).sqrt()
                }
            };
            HistogramBin { cell, count: count[k], mass: p, std_error: se }
        })
        .collect();
    HarmonicMeasureHistogram { bins, x0, total, n_samples: batch.records.len() }
}

/// Binned exit distribution `ω_x0`.
pub fn harmonic_measure(
    domain: &Domain,
    field: &CoefficientField,
    x0: &Point,
    cfg: &SimConfig,
    n_paths: usize,
    binning: &Binning,
) -> Result<HarmonicMeasureHistogram, HarmonicError> {
    let batch = exit_samples(domain, field, x0, cfg, n_paths, Trackers::default(), 0)?;
    Ok(histogram_from(domain, &batch, None, binning, Some(*x0), 1.0))
}

/// Exit samples started from the cell centres of a `grid^d` quadrature
/// grid, `per_point` paths each. Returns the grid, the cell volume and the
/// batch (path `i` starts at grid point `i / per_point`).
pub fn quadrature_samples(
    domain: &Domain,
    field: &CoefficientField,
    cfg: &SimConfig,
    grid: usize,
    per_point: usize,
    trackers: Trackers<'_>,
    stream_base: u64,
) -> Result<(Vec<Point>, f64, Batch), HarmonicError> {
    let (pts, vol) = domain.quadrature_grid(grid);
    if pts.is_empty() {
        return Err(HarmonicError::Precondition("quadrature grid has no interior points".into()));
    }
    let start = |i: usize| pts[i / per_point];
    let batch = sample_batch_from(domain, field, &start, cfg, pts.len() * per_point, trackers, stream_base)?;
    Ok((pts, vol, batch))
}

/// Binned `ω_m = ∫ ω_x m(dx)`, normalised to a probability; `total` holds
/// the grid volume.
pub fn averaged_harmonic_measure(
    domain: &Domain,
    field: &CoefficientField,
    cfg: &SimConfig,
    grid: usize,
    per_point: usize,
    binning: &Binning,
) -> Result<HarmonicMeasureHistogram, HarmonicError> {
    let (pts, vol, batch) = quadrature_samples(domain, field, cfg, grid, per_point, Trackers::default(), 0)?;
    Ok(histogram_from(domain, &batch, None, binning, None, vol * pts.len() as f64))
}

/// Mean exit time `δ(x0) = E τ`.
pub fn delta_estimate(
    domain: &Domain,
    field: &CoefficientField,
    x0: &Point,
    cfg: &SimConfig,
    n_paths: usize,
) -> Result<Estimate, HarmonicError> {
    let batch = exit_samples(domain, field, x0, cfg, n_paths, Trackers::default(), 0)?;
    let t: Vec<f64> = batch.records.iter().map(|r| r.exit_time).collect();
    Ok(Estimate::from_samples(&t, batch.truncated))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regularity {
    Regular,
    Irregular,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalLevel {
    pub t0: f64,
    pub dt: f64,
    pub survival: Estimate,
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub verdict: Regularity,
    pub levels: Vec<SurvivalLevel>,
}

pub const REGULARITY_SCHEDULE: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Wilson score interval for a binomial proportion.
pub fn wilson_interval(successes: usize, n: usize, z: f64) -> (f64, f64) {
    let n = n as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

/// Survival probabilities `P_z(τ > t0)` for paths started at the boundary
/// point `z`, over `t0 = s * δ_ref` for `s` in `schedule`, where `δ_ref` is
/// the mean exit time from the centre of a ball of radius `diam/2`.
pub fn regularity_test(
    domain: &Domain,
    field: &CoefficientField,
    z: &Point,
    cfg: &SimConfig,
    n_paths: usize,
    schedule: &[f64],
) -> Result<RegularityReport, HarmonicError> {
    if !domain.on_boundary(z) {
        return Err(HarmonicError::Precondition(format!(
            "regularity test point ({}, {}, {}) is not on the boundary",
            z.x, z.y, z.z
        )));
    }
    if schedule.is_empty() {
        return Err(HarmonicError::Precondition("empty t0 schedule".into()));
    }
    let r = domain.diam() / 2.0;
    let delta_ref = r * r / (2.0 * domain.dim() as f64 * field.lambda());
    let mut levels = Vec::new();
    for (k, s) in schedule.iter().enumerate() {
        let t0 = s * delta_ref;
        let mut c = cfg.clone();
        c.scheme = Scheme::Em;
        c.dt = cfg.dt.min(t0 / 50.0);
        let trackers = Trackers { horizon: Some(t0), ..Trackers::default() };
        let batch = sample_exit_batch(domain, field, z, &c, n_paths, trackers, probe_stream(k))?;
        let alive: Vec<f64> = batch.records.iter().map(|r| if r.censored { 1.0 } else { 0.0 }).collect();
        let survivors = alive.iter().filter(|v| **v > 0.0).count();
        levels.push(SurvivalLevel {
            t0,
            dt: c.dt,
            survival: Estimate::from_samples(&alive, batch.truncated),
            ci: wilson_interval(survivors, alive.len(), 3.0),
        });
    }
    let last = levels.last().expect("non-empty schedule");
    let verdict = if last.survival.value < 0.05 && last.ci.1 < 0.2 {
        Regularity::Regular
    } else if levels.iter().all(|l| l.survival.value > 0.5 && l.ci.0 > 0.3) {
        Regularity::Irregular
    } else {
        Regularity::Inconclusive
    };
    Ok(RegularityReport { verdict, levels })
}

/// Piecewise-linear interpolant of values cached on scattered boundary
/// points: inverse-distance weights over the `dim` nearest nodes, which is
/// linear interpolation between neighbouring nodes on a curve.
#[derive(Debug, Clone)]
pub struct BoundaryCache {
    pub nodes: Vec<Point>,
    pub values: Vec<f64>,
    k: usize,
}

impl BoundaryCache {
    pub fn new(nodes: Vec<Point>, values: Vec<f64>, dim: usize) -> Self {
        Self { nodes, values, k: dim.max(2) }
    }

    pub fn eval(&self, x: &Point) -> f64 {
        let mut near: Vec<(f64, usize)> = self.nodes.iter().map(|n| (n - x).norm()).zip(0..).collect();
        let k = self.k.min(near.len());
        near.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0));
        let near = &near[..k];
        if let Some(&(_, i)) = near.iter().find(|(d, _)| *d < 1e-14) {
            return self.values[i];
        }
        let (mut num, mut den) = (0.0, 0.0);
        for &(d, i) in near {
            num += self.values[i] / d;
            den += 1.0 / d;
        }
        num / den
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftStage {
    pub n: u32,
    pub offset: f64,
    pub value: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftProbeReport {
    pub x: Point,
    pub target: Estimate,
    pub stages: Vec<SoftStage>,
    pub doob_ratio: f64,
    pub doob_rel_se: f64,
    pub doob_ok: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftConfig {
    pub stages: u32,
    pub grid: usize,
    pub inner_paths: usize,
}

impl Default for SoftConfig {
    fn default() -> Self {
        Self { stages: 4, grid: 64, inner_paths: 2000 }
    }
}

/// Ratio of means `mean(a)/mean(b)` with a delta-method standard error.
pub fn ratio_estimate(a: &[f64], b: &[f64]) -> (f64, f64) {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let r = ma / mb;
    let var = a.iter().zip(b).map(|(x, y)| (x - r * y).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (r, (var / n).sqrt() / mb.abs())
}

/// Convergence of `∫_{∂D_n} u dω_{x,D_n}` toward `∫ψ dω_x` over the
/// exhaustion, and the Doob ratio `E sup|u(X_t)|^2 / E|ψ(X_τ)|^2`.
/// `u` is an interior representation of the solution (a FEM field or an
/// exact formula) used by the sup tracker.
#[allow(clippy::too_many_arguments)]
pub fn soft_solution_check(
    domain: &Domain,
    field: &CoefficientField,
    psi: BoundaryFn<'_>,
    u: PointFn<'_>,
    probes: &[Point],
    cfg: &SimConfig,
    n_paths: usize,
    soft: &SoftConfig,
) -> Result<Vec<SoftProbeReport>, HarmonicError> {
    let mut stage_caches = Vec::new();
    for n in 1..=soft.stages {
        let dn = domain.exhaustion(n);
        let nodes: Vec<Point> = dn
            .boundary_samples(soft.grid)
            .into_iter()
            .filter(|p| domain.inside(p))
            .collect();
        if nodes.is_empty() {
            stage_caches.push(None);
            continue;
        }
        let stream = probe_stream(1000 + n as usize);
        let values = nodes
            .iter()
            .enumerate()
            .map(|(j, p)| {
                let b = sample_exit_batch(
                    domain,
                    field,
                    p,
                    cfg,
                    soft.inner_paths,
                    Trackers::default(),
                    stream + (j * soft.inner_paths) as u64,
                )?;
                Ok(boundary_mean(&b, psi)?.value)
            })
            .collect::<Result<Vec<f64>, HarmonicError>>()?;
        stage_caches.push(Some((dn, BoundaryCache::new(nodes, values, domain.dim()))));
    }
    let mut out = Vec::new();
    for (k, x) in probes.iter().enumerate() {
        let sup_fn = |p: &Point| {
            let v = u(p);
            v * v
        };
        let tr = Trackers { sup: Some(&sup_fn), ..Trackers::default() };
        let batch = exit_samples(domain, field, x, cfg, n_paths, tr, k)?;
        let target = boundary_mean(&batch, psi)?;
        let mut psi2 = Vec::with_capacity(batch.records.len());
        for r in &batch.records {
            let v = psi(&r.exit_point);
            psi2.push(v * v);
        }
        // The sup includes the exit value.
        let sups: Vec<f64> = batch
            .records
            .iter()
            .zip(&psi2)
            .map(|(r, p2)| r.sup_functional.unwrap_or(0.0).max(*p2))
            .collect();
        let (ratio, se) = ratio_estimate(&sups, &psi2);
        let rel = if ratio != 0.0 { se / ratio } else { 0.0 };
        let mut stages = Vec::new();
        for (i, cache) in stage_caches.iter().enumerate() {
            let Some((dn, cache)) = cache else { continue };
            if !dn.inside(x) {
                continue;
            }
            let b = sample_exit_batch(dn, field, x, cfg, n_paths, Trackers::default(), probe_stream(k) + (1u64 << 32) * (i as u64 + 1))?;
            let vals: Vec<f64> = b.records.iter().map(|r| cache.eval(&r.exit_point.position)).collect();
            stages.push(SoftStage {
                n: i as u32 + 1,
                offset: domain.exhaustion_radius(i as u32 + 1),
                value: Estimate::from_samples(&vals, b.truncated),
            });
        }
        out.push(SoftProbeReport {
            x: *x,
            target,
            stages,
            doob_ratio: ratio,
            doob_rel_se: rel,
            doob_ok: ratio <= 4.0 * (1.0 + 3.0 * rel),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnackReport {
    pub values: Vec<Estimate>,
    /// `ratios[i][j] = u(x_i) / u(x_j)`.
    pub ratios: Vec<Vec<f64>>,
    pub max_ratio: f64,
    /// The ratio matrix for `2ψ` equals that for `ψ` bitwise.
    pub rescale_invariant: bool,
}

fn ratio_matrix(v: &[f64]) -> Vec<Vec<f64>> {
    v.iter().map(|a| v.iter().map(|b| a / b).collect()).collect()
}

/// Ratios `u(x)/u(y)` over probes in `B(center, r)`, `B(center, 2r) ⊂ D`.
#[allow(clippy::too_many_arguments)]
pub fn harnack_check(
    domain: &Domain,
    field: &CoefficientField,
    psi: BoundaryFn<'_>,
    center: &Point,
    r: f64,
    probes: &[Point],
    cfg: &SimConfig,
    n_paths: usize,
) -> Result<HarnackReport, HarmonicError> {
    if domain.distance_to_boundary(center)? < 2.0 * r {
        return Err(HarmonicError::Precondition("B(center, 2r) is not inside the domain".into()));
    }
    if let Some(p) = probes.iter().find(|p| (*p - center).norm() > r) {
        return Err(HarmonicError::Precondition(format!("probe ({}, {}) lies outside B(center, r)", p.x, p.y)));
    }
    let mut values = Vec::new();
    let mut doubled = Vec::new();
    for (k, x) in probes.iter().enumerate() {
        let batch = exit_samples(domain, field, x, cfg, n_paths, Trackers::default(), k)?;
        let e = boundary_mean(&batch, psi)?;
        if e.value.abs() <= 3.0 * e.std_error {
            return Err(HarmonicError::Precondition(format!(
                "u at probe {k} is indistinguishable from zero"
            )));
        }
        let twice = |b: &BoundaryPoint| 2.0 * psi(b);
        doubled.push(boundary_mean(&batch, &twice)?.value);
        values.push(e);
    }
    let v: Vec<f64> = values.iter().map(|e| e.value).collect();
    let ratios = ratio_matrix(&v);
    let ratios2 = ratio_matrix(&doubled);
    let rescale_invariant = ratios
        .iter()
        .flatten()
        .zip(ratios2.iter().flatten())
        .all(|(a, b)| a.to_bits() == b.to_bits());
    let max_ratio = ratios.iter().flatten().copied().fold(0.0, f64::max);
    Ok(HarnackReport { values, ratios, max_ratio, rescale_invariant })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TowerReport {
    pub direct: Estimate,
    pub two_stage: Estimate,
    pub agrees: bool,
}

/// Compares `u(x)` with `E_x u(X_{τ_V})` for `V = D_n`, where the inner
/// value at each exit from `V` is itself a Monte Carlo mean over
/// `inner_paths` paths.
#[allow(clippy::too_many_arguments)]
pub fn tower_check(
    domain: &Domain,
    field: &CoefficientField,
    psi: BoundaryFn<'_>,
    x: &Point,
    n: u32,
    cfg: &SimConfig,
    n_paths: usize,
    inner_paths: usize,
) -> Result<TowerReport, HarmonicError> {
    let v = domain.exhaustion(n);
    if !v.inside(x) {
        return Err(HarmonicError::Precondition(format!("probe is not inside D_{n}")));
    }
    let direct = pwb_solve(domain, field, psi, x, cfg, n_paths)?;
    let outer = sample_exit_batch(&v, field, x, cfg, n_paths, Trackers::default(), probe_stream(1))?;
    let starts: Vec<Point> = outer.records.iter().map(|r| r.exit_point.position).collect();
    let start = |i: usize| starts[i / inner_paths];
    let inner = sample_batch_from(
        domain,
        field,
        &start,
        cfg,
        starts.len() * inner_paths,
        Trackers::default(),
        probe_stream(2),
    )?;
    if inner.truncated > 0 {
        return Err(SimError::TruncationBudget { truncated: inner.truncated, n_paths: inner.n_paths }.into());
    }
    let mut vals = Vec::with_capacity(starts.len());
    for chunk in inner.records.chunks(inner_paths) {
        let mut s = 0.0;
        for r in chunk {
            s += psi(&r.exit_point);
        }
        vals.push(s / chunk.len() as f64);
    }
    let two_stage = Estimate::from_samples(&vals, outer.truncated);
    Ok(TowerReport { agrees: direct.agrees_with(&two_stage, 3.0), direct, two_stage })
}
