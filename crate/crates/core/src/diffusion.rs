//! Exit sampling for the diffusion generated by A = div(a grad).
//!
//! For a = I this is Brownian motion at twice the standard speed, so the
//! mean exit time of a ball of radius r from its centre is r^2 / (2d).
//! Walk-on-spheres handles isotropic constant fields; Euler-Maruyama with
//! drift `div a` and diffusion `sqrt(2) a^{1/2}` handles C^1 fields.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coefficients::{CoeffError, CoefficientField};
use crate::geometry::{BoundaryPoint, Domain, GeometryError, Point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Wos,
    Em,
}

fn default_dt() -> f64 {
    1e-3
}
fn default_eps_shell() -> f64 {
    1e-4
}
fn default_max_steps() -> u64 {
    1_000_000
}
fn default_seed() -> u64 {
    42
}
fn default_true() -> bool {
    true
}
fn default_chunk() -> usize {
    1024
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_dt")]
    pub dt: f64,
    /// Absorption shell for walk-on-spheres, relative to the diameter.
    #[serde(default = "default_eps_shell")]
    pub eps_shell: f64,
    #[serde(default = "default_max_steps")]
    pub max_steps: u64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub bridge_correction: bool,
    /// Paths per work unit; reductions always run in path order.
    #[serde(default = "default_chunk")]
    pub chunk_size: usize,
}

fn default_scheme() -> Scheme {
    Scheme::Wos
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            scheme: Scheme::Wos,
            dt: default_dt(),
            eps_shell: default_eps_shell(),
            max_steps: default_max_steps(),
            seed: default_seed(),
            bridge_correction: true,
            chunk_size: default_chunk(),
        }
    }
}

impl SimConfig {
    pub fn em(dt: f64) -> Self {
        Self {
            scheme: Scheme::Em,
            dt,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::Config("dt must be positive".into()));
        }
        if !(self.eps_shell > 0.0 && self.eps_shell < 0.1) {
            return Err(SimError::Config("eps_shell must lie in (0, 0.1)".into()));
        }
        if self.max_steps < 1000 {
            return Err(SimError::Config("max_steps must be at least 1000".into()));
        }
        if self.chunk_size == 0 {
            return Err(SimError::Config("chunk_size must be positive".into()));
        }
        Ok(())
    }
}

/// Running statistics of a functional over the last contiguous stretch of
/// the path spent within distance `width` of the boundary.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WindowStats {
    pub count: u64,
    pub sum: f64,
    pub min: f64,
    pub max: f64,
    /// Most recent values, oldest first (at most `WINDOW_TAIL`).
    pub last: Vec<f64>,
}

pub const WINDOW_TAIL: usize = 8;

impl WindowStats {
    fn reset(&mut self) {
        self.count = 0;
        self.sum = 0.0;
        self.min = f64::INFINITY;
        self.max = f64::NEG_INFINITY;
        self.last.clear();
    }

    fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.min = self.min.min(v);
        self.max = self.max.max(v);
        if self.last.len() == WINDOW_TAIL {
            self.last.remove(0);
        }
        self.last.push(v);
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    pub fn oscillation(&self) -> f64 {
        self.max - self.min
    }

    /// Oscillation over the recorded tail only.
    pub fn tail_oscillation(&self) -> f64 {
        let lo = self.last.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.last.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }
}

pub type PointFn<'a> = &'a (dyn Fn(&Point) -> f64 + Sync);

/// Path functionals to accumulate while simulating.
#[derive(Clone, Copy, Default)]
pub struct Trackers<'a> {
    /// Accumulates the integral of f(X_r) dr up to the exit time.
    pub integrand: Option<PointFn<'a>>,
    /// Running sup of |g(X_t)|, including the starting point.
    pub sup: Option<PointFn<'a>>,
    /// Window statistics of u(X_t) close to the boundary.
    pub window: Option<(PointFn<'a>, f64)>,
    /// Stop at this time if the path has not exited (the record is censored).
    pub horizon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExitRecord {
    pub exit_point: BoundaryPoint,
    pub exit_time: f64,
    pub steps: u64,
    pub path_integral: Option<f64>,
    pub sup_functional: Option<f64>,
    pub hit_puncture: bool,
    pub window: Option<WindowStats>,
    /// The path reached the horizon inside the domain; `exit_point` then
    /// holds the current position.
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("path truncated after {} steps", partial.steps)]
    Truncated { partial: Box<ExitRecord> },
    #[error("{truncated} of {n_paths} paths truncated (more than 0.1%)")]
    TruncationBudget { truncated: usize, n_paths: usize },
    #[error("path {index}: {source}")]
    Path { index: usize, source: Box<SimError> },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Coefficient(#[from] CoeffError),
    #[error("walk-on-spheres requires an isotropic constant coefficient field")]
    WosNeedsIsotropic,
    #[error("n_paths must be at least 1")]
    NoPaths,
}

/// Independent stream for path `stream` under `seed`.
pub fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream offset for probe `k`; paths of different probes never share a stream.
pub fn probe_stream(k: usize) -> u64 {
    (k as u64) << 40
}

fn uniform_direction<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Point {
    loop {
        let mut v = Point::zeros();
        for i in 0..dim {
            v[i] = rng.sample(StandardNormal);
        }
        let n = v.norm();
        if n > 1e-12 {
            return v / n;
        }
    }
}

/// Sample from the Green density of the unit ball centred at 0 (for the
/// Laplacian), normalised to a probability density.
fn green_ball_sample<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Point {
    // Radial density s log(1/s) (2D) or s - s^2 (3D) on [0, 1].
    let (bound, dens): (f64, fn(f64) -> f64) = if dim == 2 {
        (1.0 / std::f64::consts::E, |s: f64| if s > 0.0 { -s * s.ln() } else { 0.0 })
    } else {
        (0.25, |s: f64| s - s * s)
    };
    let s = loop {
        let s: f64 = rng.random();
        let u: f64 = rng.random::<f64>() * bound;
        if u <= dens(s) {
            break s;
        }
    };
    uniform_direction(rng, dim) * s
}

struct State<'a> {
    trackers: Trackers<'a>,
    integral: f64,
    sup: f64,
    window: WindowStats,
}

impl<'a> State<'a> {
    fn new(trackers: Trackers<'a>, x0: &Point, domain: &Domain) -> Self {
        let mut s = Self {
            trackers,
            integral: 0.0,
            sup: 0.0,
            window: WindowStats::default(),
        };
        s.window.reset();
        s.visit(x0, domain);
        s
    }

    fn visit(&mut self, x: &Point, domain: &Domain) {
        if let Some(g) = self.trackers.sup {
            self.sup = self.sup.max(g(x).abs());
        }
        if let Some((u, w)) = self.trackers.window {
            if domain.nonpolar_distance(x) < w {
                self.window.push(u(x));
            } else if self.window.count > 0 {
                self.window.reset();
            }
        }
    }

    fn finish(self, exit_point: BoundaryPoint, exit_time: f64, steps: u64, hit_puncture: bool, censored: bool) -> ExitRecord {
        ExitRecord {
            exit_point,
            exit_time,
            steps,
            path_integral: self.trackers.integrand.map(|_| self.integral),
            sup_functional: self.trackers.sup.map(|_| self.sup),
            hit_puncture,
            window: self.trackers.window.map(|_| self.window),
            censored,
        }
    }
}

/// Scalar c when a = c I, for walk-on-spheres.
fn isotropic_scale(field: &CoefficientField) -> Option<f64> {
    let a = field.a(&Point::zeros());
    let d = field.dim();
    if field.is_identity() {
        return Some(1.0);
    }
    let c = a[(0, 0)];
    let iso = (0..d).all(|i| (0..d).all(|j| a[(i, j)] == if i == j { c } else { 0.0 }));
    // Constant fields give the same matrix everywhere; probe a second point.
    let b = field.a(&Point::new(0.37, -0.21, if d == 3 { 0.13 } else { 0.0 }));
    (iso && a == b && c > 0.0).then_some(c)
}

/// Simulates one path from `x0` until it leaves the domain.
pub fn sample_exit<R: Rng + ?Sized>(
    domain: &Domain,
    field: &CoefficientField,
    x0: &Point,
    cfg: &SimConfig,
    trackers: Trackers<'_>,
    rng: &mut R,
) -> Result<ExitRecord, SimError> {
    match cfg.scheme {
        Scheme::Wos => {
            let c = isotropic_scale(field).ok_or(SimError::WosNeedsIsotropic)?;
            if trackers.horizon.is_some() {
                return Err(SimError::Config(
                    "a time horizon needs the em scheme".into(),
                ));
            }
            if !domain.inside(x0) && !domain.on_boundary(x0) {
                return Err(GeometryError::Outside { x: x0.x, y: x0.y, z: x0.z }.into());
            }
            Ok(wos_path(domain, c, x0, cfg, trackers, rng))
        }
        Scheme::Em => {
            if !field.supports_sde() {
                return Err(CoeffError::UnsupportedForSde.into());
            }
            if !domain.inside(x0) && !domain.on_boundary(x0) {
                return Err(GeometryError::Outside { x: x0.x, y: x0.y, z: x0.z }.into());
            }
            em_path(domain, field, x0, cfg, trackers, rng)
        }
    }
    .and_then(|r| {
        if r.steps > cfg.max_steps {
            Err(SimError::Truncated { partial: Box::new(r) })
        } else {
            Ok(r)
        }
    })
}

fn wos_path<R: Rng + ?Sized>(
    domain: &Domain,
    scale: f64,
    x0: &Point,
    cfg: &SimConfig,
    trackers: Trackers<'_>,
    rng: &mut R,
) -> ExitRecord {
    let dim = domain.dim();
    let shell = cfg.eps_shell * domain.diam();
    let eps_pt = domain.puncture_radius();
    let mut st = State::new(trackers, x0, domain);
    let mut x = *x0;
    let mut time = 0.0;
    let mut steps = 0u64;
    loop {
        let d = domain.nonpolar_distance(&x);
        if d < shell {
            let bp = domain.nearest_boundary(&x);
            return st.finish(bp, time, steps, false, false);
        }
        if steps >= cfg.max_steps {
            // Report the truncation with one step over budget.
            return st.finish(BoundaryPoint::plain(x), time, steps + 1, false, false);
        }
        let mean_time = d * d / (2.0 * dim as f64 * scale);
        if let Some(f) = st.trackers.integrand {
            let y = x + green_ball_sample(rng, dim) * d;
            st.integral += mean_time * f(&y);
        }
        x += uniform_direction(rng, dim) * d;
        time += mean_time;
        steps += 1;
        for p in domain.punctures() {
            if (x - p).norm() < eps_pt {
                return st.finish(BoundaryPoint::plain(*p), time, steps, true, false);
            }
        }
        st.visit(&x, domain);
    }
}

fn em_path<R: Rng + ?Sized>(
    domain: &Domain,
    field: &CoefficientField,
    x0: &Point,
    cfg: &SimConfig,
    trackers: Trackers<'_>,
    rng: &mut R,
) -> Result<ExitRecord, SimError> {
    let dim = domain.dim();
    let c_dt = 0.1 / field.upper();
    let floor = cfg.eps_shell * domain.diam();
    let horizon = trackers.horizon;
    let mut st = State::new(trackers, x0, domain);
    let mut x = *x0;
    let mut t = 0.0;
    let mut steps = 0u64;
    loop {
        if let Some(h) = horizon {
            if t >= h {
                return Ok(st.finish(BoundaryPoint::plain(x), t, steps, false, true));
            }
        }
        if steps >= cfg.max_steps {
            return Ok(st.finish(BoundaryPoint::plain(x), t, steps + 1, false, false));
        }
        let d = domain.nonpolar_distance(&x);
        let reach = d.max(floor);
        let mut dt = cfg.dt.min(c_dt * reach * reach);
        if let Some(h) = horizon {
            dt = dt.min(h - t);
        }
        let drift = field.drift(&x)?;
        let sigma = field.sigma_bar(&x)?;
        let mut xi = Point::zeros();
        for i in 0..dim {
            xi[i] = rng.sample(StandardNormal);
        }
        let y = x + drift * dt + sigma * xi * (2.0 * dt).sqrt();
        steps += 1;
        if let Some(integrand) = st.trackers.integrand {
            st.integral += integrand(&x) * dt;
        }
        if let Some(c) = domain.crossing(&x, &y) {
            return Ok(st.finish(c.point, t + c.t * dt, steps, c.puncture, false));
        }
        let dy = domain.nonpolar_distance(&y);
        if dy <= 0.0 {
            // Tangential graze missed by the crossing test.
            return Ok(st.finish(domain.nearest_boundary(&y), t + dt, steps, false, false));
        }
        if cfg.bridge_correction {
            let nb = domain.nearest_boundary(if d <= dy { &x } else { &y });
            let normal = {
                let v = if d <= dy { x - nb.position } else { y - nb.position };
                let n = v.norm();
                if n > 0.0 {
                    v / n
                } else {
                    Point::new(1.0, 0.0, 0.0)
                }
            };
            let var = (normal.transpose() * field.a(&x) * normal)[(0, 0)];
            let p = (-(d.max(0.0) * dy) / (var * dt)).exp();
            if rng.random::<f64>() < p {
                return Ok(st.finish(nb, t + dt, steps, false, false));
            }
        }
        t += dt;
        x = y;
        st.visit(&x, domain);
    }
}

/// Exit records of a batch, in path order.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub records: Vec<ExitRecord>,
    pub truncated: usize,
    pub n_paths: usize,
}

/// Simulates `n_paths` paths; path `i` uses stream `stream_base + i`.
/// Results do not depend on the number of worker threads.
pub fn sample_exit_batch(
    domain: &Domain,
    field: &CoefficientField,
    x0: &Point,
    cfg: &SimConfig,
    n_paths: usize,
    trackers: Trackers<'_>,
    stream_base: u64,
) -> Result<Batch, SimError> {
    sample_batch_from(domain, field, &|_| *x0, cfg, n_paths, trackers, stream_base)
}

/// Like [`sample_exit_batch`] with a per-path starting point.
pub fn sample_batch_from(
    domain: &Domain,
    field: &CoefficientField,
    start: &(dyn Fn(usize) -> Point + Sync),
    cfg: &SimConfig,
    n_paths: usize,
    trackers: Trackers<'_>,
    stream_base: u64,
) -> Result<Batch, SimError> {
    cfg.validate()?;
    if n_paths == 0 {
        return Err(SimError::NoPaths);
    }
    let chunks: Vec<(usize, usize)> = (0..n_paths)
        .step_by(cfg.chunk_size)
        .map(|s| (s, (s + cfg.chunk_size).min(n_paths)))
        .collect();
    let results: Vec<Result<Vec<Option<ExitRecord>>, SimError>> = chunks
        .into_par_iter()
        .map(|(lo, hi)| {
            let mut out = Vec::with_capacity(hi - lo);
            for i in lo..hi {
                let mut rng = path_rng(cfg.seed, stream_base + i as u64);
                match sample_exit(domain, field, &start(i), cfg, trackers, &mut rng) {
                    Ok(r) => out.push(Some(r)),
                    Err(SimError::Truncated { .. }) => out.push(None),
                    Err(e) => {
                        return Err(SimError::Path {
                            index: i,
                            source: Box::new(e),
                        })
                    }
                }
            }
            Ok(out)
        })
        .collect();
    let mut records = Vec::with_capacity(n_paths);
    let mut truncated = 0;
    for chunk in results {
        for r in chunk? {
            match r {
                Some(r) => records.push(r),
                None => truncated += 1,
            }
        }
    }
    if truncated * 1000 > n_paths {
        return Err(SimError::TruncationBudget { truncated, n_paths });
    }
    Ok(Batch {
        records,
        truncated,
        n_paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ShapeSpec, Side};

    fn p2(x: f64, y: f64) -> Point {
        Point::new(x, y, 0.0)
    }

    fn slit() -> Domain {
        Domain::new(ShapeSpec::SlitBall {
            center: None,
            radius: 1.0,
            slit: [[-0.5, 0.0], [0.5, 0.0]],
        })
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::default().validate().is_ok());
        let bad = SimConfig { eps_shell: 0.2, ..SimConfig::default() };
        assert!(bad.validate().is_err());
        let bad = SimConfig { max_steps: 10, ..SimConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn zero_paths_rejected() {
        let d = Domain::unit_disk();
        let f = CoefficientField::identity(2);
        let r = sample_exit_batch(&d, &f, &p2(0.0, 0.0), &SimConfig::default(), 0, Trackers::default(), 0);
        assert_eq!(r, Err(SimError::NoPaths));
    }

    #[test]
    fn batch_is_bitwise_reproducible_and_chunk_independent() {
        let d = Domain::unit_disk();
        let f = CoefficientField::identity(2);
        let cfg = SimConfig::default();
        let a = sample_exit_batch(&d, &f, &p2(0.3, 0.1), &cfg, 3000, Trackers::default(), 0).unwrap();
        let b = sample_exit_batch(&d, &f, &p2(0.3, 0.1), &cfg, 3000, Trackers::default(), 0).unwrap();
        assert_eq!(a, b);
        let small = SimConfig { chunk_size: 7, ..cfg.clone() };
        let c = sample_exit_batch(&d, &f, &p2(0.3, 0.1), &small, 3000, Trackers::default(), 0).unwrap();
        assert_eq!(a, c);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let e = pool.install(|| sample_exit_batch(&d, &f, &p2(0.3, 0.1), &small, 3000, Trackers::default(), 0).unwrap());
        assert_eq!(a, e);
    }

    #[test]
    fn wos_exits_lie_on_boundary() {
        let d = Domain::unit_disk();
        let f = CoefficientField::identity(2);
        let b = sample_exit_batch(&d, &f, &p2(0.0, 0.5), &SimConfig::default(), 2000, Trackers::default(), 0).unwrap();
        assert_eq!(b.records.len(), 2000);
        for r in &b.records {
            assert!((r.exit_point.position.norm() - 1.0).abs() < 1e-12);
            assert!(!r.hit_puncture);
        }
    }

    #[test]
    fn em_exits_lie_on_boundary() {
        let d = Domain::unit_disk();
        let f = CoefficientField::identity(2);
        let cfg = SimConfig::em(1e-3);
        let b = sample_exit_batch(&d, &f, &p2(0.2, 0.0), &cfg, 500, Trackers::default(), 0).unwrap();
        for r in &b.records {
            assert!((r.exit_point.position.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn wos_rejects_anisotropic_fields() {
        let d = Domain::unit_disk();
        let f = CoefficientField::new(
            crate::CoefficientSpec::Constant { a: vec![vec![2.0, 0.0], vec![0.0, 1.0]] },
            2,
        )
        .unwrap();
        let mut rng = path_rng(1, 0);
        let r = sample_exit(&d, &f, &p2(0.0, 0.0), &SimConfig::default(), Trackers::default(), &mut rng);
        assert_eq!(r, Err(SimError::WosNeedsIsotropic));
    }

    #[test]
    fn truncation_is_reported() {
        let d = Domain::unit_disk();
        let f = CoefficientField::identity(2);
        let cfg = SimConfig { max_steps: 1000, dt: 1e-7, ..SimConfig::em(1e-7) };
        let mut rng = path_rng(1, 0);
        let r = sample_exit(&d, &f, &p2(0.0, 0.0), &cfg, Trackers::default(), &mut rng);
        assert!(matches!(r, Err(SimError::Truncated { .. })));
        let b = sample_exit_batch(&d, &f, &p2(0.0, 0.0), &cfg, 10, Trackers::default(), 0);
        assert!(matches!(b, Err(SimError::TruncationBudget { truncated: 10, .. })));
    }

    #[test]
    fn side_labels_favour_the_starting_side() {
        let d = slit();
        let f = CoefficientField::identity(2);
        let cfg = SimConfig::default();
        let count = |y: f64| {
            let b = sample_exit_batch(&d, &f, &p2(0.0, y), &cfg, 20_000, Trackers::default(), 0).unwrap();
            let above = b.records.iter().filter(|r| r.exit_point.side == Some(Side::Above)).count();
            let below = b.records.iter().filter(|r| r.exit_point.side == Some(Side::Below)).count();
            (above as f64 / 2e4, below as f64 / 2e4)
        };
        let (a_up, b_up) = count(0.3);
        let (a_dn, b_dn) = count(-0.3);
        assert!(a_up > b_up);
        let se = |p: f64| (p * (1.0 - p) / 2e4).sqrt();
        let joint = (se(a_up).powi(2) + se(b_dn).powi(2)).sqrt();
        assert!((a_up - b_dn).abs() <= 3.0 * joint, "{a_up} vs {b_dn}");
        let joint = (se(b_up).powi(2) + se(a_dn).powi(2)).sqrt();
        assert!((b_up - a_dn).abs() <= 3.0 * joint, "{b_up} vs {a_dn}");
    }

    #[test]
    fn wos_path_integral_of_one_is_exit_time() {
        let d = Domain::unit_disk();
        let f = CoefficientField::identity(2);
        let one = |_: &Point| 1.0;
        let tr = Trackers { integrand: Some(&one), ..Trackers::default() };
        let b = sample_exit_batch(&d, &f, &p2(0.5, 0.0), &SimConfig::default(), 200, tr, 0).unwrap();
        for r in &b.records {
            assert!((r.path_integral.unwrap() - r.exit_time).abs() < 1e-15);
        }
    }

    #[test]
    fn green_sample_mean_square_radius() {
        // E|Y|^2 under the normalised 2D Green density of the unit disk:
        // int s^3 log(1/s) / int s log(1/s) = (1/16) / (1/4) = 1/4.
        let mut rng = path_rng(3, 0);
        let n = 200_000;
        let m: f64 = (0..n).map(|_| green_ball_sample(&mut rng, 2).norm_squared()).sum::<f64>() / n as f64;
        assert!((m - 0.25).abs() < 3e-3, "{m}");
        // 3D: radial density s - s^2, so E|Y|^2 = int (s^3 - s^4) / int (s - s^2).
        let m: f64 = (0..n).map(|_| green_ball_sample(&mut rng, 3).norm_squared()).sum::<f64>() / n as f64;
        let want = (1.0 / 4.0 - 1.0 / 5.0) / (1.0 / 2.0 - 1.0 / 3.0);
        assert!((m - want).abs() < 3e-3, "{m} vs {want}");
    }

    #[test]
    fn horizon_censors_paths() {
        let d = Domain::unit_disk();
        let f = CoefficientField::identity(2);
        let tr = Trackers { horizon: Some(1e-3), ..Trackers::default() };
        let cfg = SimConfig::em(1e-4);
        let mut rng = path_rng(5, 0);
        let r = sample_exit(&d, &f, &p2(0.0, 0.0), &cfg, tr, &mut rng).unwrap();
        assert!(r.censored);
        assert!((r.exit_time - 1e-3).abs() < 1e-15);
    }
}
