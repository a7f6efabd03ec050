//! Bounded open sets in R^2 and R^3 with labelled boundaries.
//!
//! Points are always `Vector3<f64>`; two-dimensional domains keep `z = 0`.
//! Every shape carries a signed distance (positive inside). It is exact for
//! balls, boxes, polygons, slit and punctured balls, exact inside for CSG
//! intersections and differences, and a lower bound inside CSG unions.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point = Vector3<f64>;

/// Absolute geometric tolerance for exact shapes.
pub const TOL_EXACT: f64 = 1e-12;
/// Absolute geometric tolerance for CSG and offset shapes.
pub const TOL_CSG: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    Invalid(String),
    #[error("point ({x}, {y}, {z}) is not inside the domain")]
    Outside { x: f64, y: f64, z: f64 },
    #[error("segment from {from:?} to {to:?} does not cross the boundary")]
    NoCrossing { from: [f64; 3], to: [f64; 3] },
    #[error("point must have {expected} coordinates, got {got}")]
    Dimension { expected: usize, got: usize },
}

fn outside_err(x: &Point) -> GeometryError {
    GeometryError::Outside {
        x: x.x,
        y: x.y,
        z: x.z,
    }
}

/// Builds a point from 2 or 3 coordinates.
pub fn point(coords: &[f64]) -> Result<Point, GeometryError> {
    match coords.len() {
        2 => Ok(Point::new(coords[0], coords[1], 0.0)),
        3 => Ok(Point::new(coords[0], coords[1], coords[2])),
        n => Err(GeometryError::Dimension {
            expected: 2,
            got: n,
        }),
    }
}

pub fn coords(p: &Point, dim: usize) -> Vec<f64> {
    p.as_slice()[..dim].to_vec()
}

/// Which face of a two-sided boundary piece a path reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Above,
    Below,
    Tip,
}

impl Side {
    pub fn flipped(self) -> Side {
        match self {
            Side::Above => Side::Below,
            Side::Below => Side::Above,
            Side::Tip => Side::Tip,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Above => "above",
            Side::Below => "below",
            Side::Tip => "tip",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub position: Point,
    pub side: Option<Side>,
}

impl BoundaryPoint {
    pub fn plain(position: Point) -> Self {
        Self {
            position,
            side: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CsgOp {
    Union,
    Intersection,
    Difference,
}

/// Serialized shape description, as it appears in scenario files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
    Box {
        lo: Vec<f64>,
        hi: Vec<f64>,
    },
    Polygon {
        vertices: Vec<[f64; 2]>,
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        holes: Vec<Vec<[f64; 2]>>,
    },
    SlitBall {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<[f64; 2]>,
        radius: f64,
        slit: [[f64; 2]; 2],
    },
    PuncturedBall {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
        radius: f64,
        removed: Vec<f64>,
    },
    Csg {
        op: CsgOp,
        left: Box<ShapeSpec>,
        right: Box<ShapeSpec>,
    },
    /// `{x in base : dist(x, boundary of base) > r}`.
    Offset {
        base: Box<ShapeSpec>,
        r: f64,
    },
}

impl ShapeSpec {
    pub const KINDS: [&'static str; 7] = [
        "ball",
        "box",
        "polygon",
        "slit_ball",
        "punctured_ball",
        "csg",
        "offset",
    ];
}

#[derive(Debug, Clone, PartialEq)]
enum Geom {
    Ball {
        c: Point,
        r: f64,
    },
    Box {
        lo: Point,
        hi: Point,
        dim: usize,
    },
    Polygon {
        rings: Vec<Vec<Point>>,
    },
    SlitBall {
        c: Point,
        r: f64,
        a: Point,
        b: Point,
    },
    PuncturedBall {
        c: Point,
        r: f64,
        p: Point,
    },
    Csg {
        op: CsgOp,
        l: Box<Geom>,
        r: Box<Geom>,
    },
    Offset {
        base: Box<Geom>,
        r: f64,
    },
}

fn cross2(u: &Point, v: &Point) -> f64 {
    u.x * v.y - u.y * v.x
}

/// Closest point on segment [a, b] to x, with its parameter in [0, 1].
fn project_segment(x: &Point, a: &Point, b: &Point) -> (Point, f64) {
    let d = b - a;
    let len2 = d.norm_squared();
    let t = if len2 == 0.0 {
        0.0
    } else {
        ((x - a).dot(&d) / len2).clamp(0.0, 1.0)
    };
    (a + d * t, t)
}

/// Distance from x to segment [a, b]; collinear points get exactly zero.
fn segment_distance(x: &Point, a: &Point, b: &Point) -> f64 {
    let (q, t) = project_segment(x, a, b);
    if t > 0.0 && t < 1.0 && x.z == 0.0 && a.z == 0.0 && b.z == 0.0 {
        let d = b - a;
        cross2(&d, &(x - a)).abs() / d.norm()
    } else {
        (x - q).norm()
    }
}

fn point_in_ring(x: &Point, ring: &[Point]) -> bool {
    let mut inside = false;
    let n = ring.len();
    let mut j = n - 1;
    for i in 0..n {
        let (pi, pj) = (&ring[i], &ring[j]);
        if (pi.y > x.y) != (pj.y > x.y) {
            let xc = pj.x + (x.y - pj.y) / (pi.y - pj.y) * (pi.x - pj.x);
            if x.x < xc {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Smallest t in (t_min, 1] with a + t(b-a) on segment [p, q]; also returns
/// the parameter along [p, q].
fn segment_hit(a: &Point, b: &Point, p: &Point, q: &Point, t_min: f64) -> Option<(f64, f64)> {
    let d = b - a;
    let e = q - p;
    let den = cross2(&d, &e);
    if den == 0.0 {
        return None;
    }
    let w = p - a;
    let t = cross2(&w, &e) / den;
    let s = cross2(&w, &d) / den;
    if t > t_min && t <= 1.0 && (0.0..=1.0).contains(&s) {
        Some((t, s))
    } else {
        None
    }
}

/// Exit parameter of the segment from the ball, for `a` inside or on it.
fn ball_exit(a: &Point, b: &Point, c: &Point, r: f64, t_min: f64) -> Option<f64> {
    let d = b - a;
    let f = a - c;
    let qa = d.norm_squared();
    if qa == 0.0 {
        return None;
    }
    let qb = f.dot(&d);
    let qc = f.norm_squared() - r * r;
    let disc = qb * qb - qa * qc;
    if disc < 0.0 {
        return None;
    }
    // Stable form of the larger root.
    let sq = disc.sqrt();
    let t = if qb >= 0.0 {
        -qc / (qb + sq)
    } else {
        (sq - qb) / qa
    };
    if t > t_min && t <= 1.0 {
        Some(t)
    } else {
        None
    }
}

fn project_ball(x: &Point, c: &Point, r: f64) -> Point {
    let v = x - c;
    let n = v.norm();
    if n == 0.0 {
        c + Point::new(r, 0.0, 0.0)
    } else {
        c + v * (r / n)
    }
}

impl Geom {
    fn build(spec: &ShapeSpec, in_csg: bool) -> Result<(Geom, usize), GeometryError> {
        let bad = |m: &str| Err(GeometryError::Invalid(m.to_string()));
        match spec {
            ShapeSpec::Ball { center, radius } => {
                if !(*radius > 0.0 && radius.is_finite()) {
                    return bad("ball radius must be positive");
                }
                Ok((
                    Geom::Ball {
                        c: point(center)?,
                        r: *radius,
                    },
                    center.len(),
                ))
            }
            ShapeSpec::Box { lo, hi } => {
                if lo.len() != hi.len() {
                    return bad("box corners differ in dimension");
                }
                let (l, h) = (point(lo)?, point(hi)?);
                if lo.iter().zip(hi).any(|(a, b)| !(a < b)) {
                    return bad("box needs lo < hi in every coordinate");
                }
                Ok((
                    Geom::Box {
                        lo: l,
                        hi: h,
                        dim: lo.len(),
                    },
                    lo.len(),
                ))
            }
            ShapeSpec::Polygon { vertices, holes } => {
                let mut rings = Vec::new();
                for ring in std::iter::once(vertices).chain(holes) {
                    if ring.len() < 3 {
                        return bad("polygon rings need at least 3 vertices");
                    }
                    let pts: Vec<Point> = ring.iter().map(|v| Point::new(v[0], v[1], 0.0)).collect();
                    let area: f64 = (0..pts.len())
                        .map(|i| cross2(&pts[i], &pts[(i + 1) % pts.len()]))
                        .sum();
                    if area.abs() < 1e-14 {
                        return bad("polygon ring has zero area");
                    }
                    rings.push(pts);
                }
                Ok((Geom::Polygon { rings }, 2))
            }
            ShapeSpec::SlitBall {
                center,
                radius,
                slit,
            } => {
                if in_csg {
                    return bad("slit_ball cannot be combined in csg");
                }
                let c = center.map_or(Point::zeros(), |c| Point::new(c[0], c[1], 0.0));
                let a = Point::new(slit[0][0], slit[0][1], 0.0);
                let b = Point::new(slit[1][0], slit[1][1], 0.0);
                if !(*radius > 0.0) {
                    return bad("slit_ball radius must be positive");
                }
                if (a - b).norm() < 1e-12 {
                    return bad("slit segment is degenerate");
                }
                if (a - c).norm() >= *radius || (b - c).norm() >= *radius {
                    return bad("slit must lie strictly inside the ball");
                }
                Ok((Geom::SlitBall { c, r: *radius, a, b }, 2))
            }
            ShapeSpec::PuncturedBall {
                center,
                radius,
                removed,
            } => {
                let p = point(removed)?;
                let c = match center {
                    Some(c) => {
                        if c.len() != removed.len() {
                            return bad("punctured_ball center and removed point differ in dimension");
                        }
                        point(c)?
                    }
                    None => Point::zeros(),
                };
                if !(*radius > 0.0) {
                    return bad("punctured_ball radius must be positive");
                }
                if (p - c).norm() >= *radius {
                    return bad("removed point must lie strictly inside the ball");
                }
                Ok((Geom::PuncturedBall { c, r: *radius, p }, removed.len()))
            }
            ShapeSpec::Csg { op, left, right } => {
                let (l, dl) = Geom::build(left, true)?;
                let (r, dr) = Geom::build(right, true)?;
                if dl != dr {
                    return bad("csg operands differ in dimension");
                }
                Ok((
                    Geom::Csg {
                        op: *op,
                        l: Box::new(l),
                        r: Box::new(r),
                    },
                    dl,
                ))
            }
            ShapeSpec::Offset { base, r } => {
                if !(*r >= 0.0) {
                    return bad("offset must be nonnegative");
                }
                let (g, d) = Geom::build(base, in_csg)?;
                Ok((
                    Geom::Offset {
                        base: Box::new(g),
                        r: *r,
                    },
                    d,
                ))
            }
        }
    }

    /// Signed distance; `polar` includes removed points as boundary.
    fn sdist(&self, x: &Point, polar: bool) -> f64 {
        match self {
            Geom::Ball { c, r } => r - (x - c).norm(),
            Geom::Box { lo, hi, dim } => {
                let mut inside = f64::INFINITY;
                let mut out2 = 0.0;
                for i in 0..*dim {
                    let m = (x[i] - lo[i]).min(hi[i] - x[i]);
                    inside = inside.min(m);
                    if m < 0.0 {
                        out2 += m * m;
                    }
                }
                if inside >= 0.0 {
                    inside
                } else {
                    -out2.sqrt()
                }
            }
            Geom::Polygon { rings } => {
                let mut dmin = f64::INFINITY;
                for ring in rings {
                    for i in 0..ring.len() {
                        dmin = dmin.min(segment_distance(x, &ring[i], &ring[(i + 1) % ring.len()]));
                    }
                }
                let inside = point_in_ring(x, &rings[0])
                    && !rings[1..].iter().any(|h| point_in_ring(x, h));
                if inside {
                    dmin
                } else {
                    -dmin
                }
            }
            Geom::SlitBall { c, r, a, b } => {
                let s = r - (x - c).norm();
                if s <= 0.0 {
                    return s;
                }
                s.min(segment_distance(x, a, b))
            }
            Geom::PuncturedBall { c, r, p } => {
                let s = r - (x - c).norm();
                if polar && s > 0.0 {
                    s.min((x - p).norm())
                } else {
                    s
                }
            }
            Geom::Csg { op, l, r } => {
                let (a, b) = (l.sdist(x, polar), r.sdist(x, polar));
                match op {
                    CsgOp::Union => a.max(b),
                    CsgOp::Intersection => a.min(b),
                    CsgOp::Difference => a.min(-b),
                }
            }
            // An offset turns removed points into genuine holes of radius r.
            Geom::Offset { base, r } => base.sdist(x, true) - r,
        }
    }

    fn punctures(&self, out: &mut Vec<Point>) {
        match self {
            Geom::PuncturedBall { p, .. } => out.push(*p),
            Geom::Csg { l, r, .. } => {
                l.punctures(out);
                r.punctures(out);
            }
            _ => {}
        }
    }

    fn bbox(&self, dim: usize) -> (Point, Point) {
        let cube = |c: &Point, r: f64| {
            let mut lo = c - Point::repeat(r);
            let mut hi = c + Point::repeat(r);
            if dim == 2 {
                lo.z = 0.0;
                hi.z = 0.0;
            }
            (lo, hi)
        };
        match self {
            Geom::Ball { c, r } | Geom::SlitBall { c, r, .. } | Geom::PuncturedBall { c, r, .. } => {
                cube(c, *r)
            }
            Geom::Box { lo, hi, .. } => (*lo, *hi),
            Geom::Polygon { rings } => {
                let mut lo = Point::repeat(f64::INFINITY);
                let mut hi = Point::repeat(f64::NEG_INFINITY);
                for v in &rings[0] {
                    lo = lo.inf(v);
                    hi = hi.sup(v);
                }
                (lo, hi)
            }
            Geom::Csg { op, l, r } => {
                let (a, b) = (l.bbox(dim), r.bbox(dim));
                match op {
                    CsgOp::Union => (a.0.inf(&b.0), a.1.sup(&b.1)),
                    CsgOp::Intersection => (a.0.sup(&b.0), a.1.inf(&b.1)),
                    CsgOp::Difference => a,
                }
            }
            Geom::Offset { base, .. } => base.bbox(dim),
        }
    }

    fn is_exact(&self) -> bool {
        !matches!(self, Geom::Csg { .. } | Geom::Offset { .. })
    }
}

/// A validated bounded open set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ShapeSpec", into = "ShapeSpec")]
pub struct Domain {
    spec: ShapeSpec,
    geom: Geom,
    dim: usize,
    bbox: (Point, Point),
    diam: f64,
    punctures: Vec<Point>,
    tol: f64,
}

impl TryFrom<ShapeSpec> for Domain {
    type Error = GeometryError;
    fn try_from(spec: ShapeSpec) -> Result<Self, Self::Error> {
        Domain::new(spec)
    }
}

impl From<Domain> for ShapeSpec {
    fn from(d: Domain) -> Self {
        d.spec
    }
}

/// Result of a segment crossing test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crossing {
    /// Fraction of the segment travelled before the crossing.
    pub t: f64,
    pub point: BoundaryPoint,
    pub puncture: bool,
}

impl Domain {
    pub fn new(spec: ShapeSpec) -> Result<Self, GeometryError> {
        let (geom, dim) = Geom::build(&spec, false)?;
        if dim != 2 && dim != 3 {
            return Err(GeometryError::Invalid(format!(
                "dimension must be 2 or 3, got {dim}"
            )));
        }
        let bbox = geom.bbox(dim);
        if (0..dim).any(|i| !(bbox.0[i] < bbox.1[i])) {
            return Err(GeometryError::Invalid("domain is empty".into()));
        }
        let diam = match &geom {
            Geom::Ball { r, .. } | Geom::SlitBall { r, .. } | Geom::PuncturedBall { r, .. } => {
                2.0 * r
            }
            Geom::Polygon { rings } => {
                let v = &rings[0];
                let mut m: f64 = 0.0;
                for i in 0..v.len() {
                    for j in i + 1..v.len() {
                        m = m.max((v[i] - v[j]).norm());
                    }
                }
                m
            }
            _ => (bbox.1 - bbox.0).norm(),
        };
        let tol = if geom.is_exact() { TOL_EXACT } else { TOL_CSG };
        let mut punctures = Vec::new();
        geom.punctures(&mut punctures);
        punctures.retain(|p| geom.sdist(p, true).abs() <= tol);
        let d = Domain {
            spec,
            geom,
            dim,
            bbox,
            diam,
            punctures,
            tol,
        };
        Ok(d)
    }

    pub fn unit_disk() -> Self {
        Self::new(ShapeSpec::Ball {
            center: vec![0.0, 0.0],
            radius: 1.0,
        })
        .expect("valid")
    }

    pub fn spec(&self) -> &ShapeSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn diam(&self) -> f64 {
        self.diam
    }

    pub fn bbox(&self) -> (Point, Point) {
        self.bbox
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// Removed points that are isolated boundary components.
    pub fn punctures(&self) -> &[Point] {
        &self.punctures
    }

    /// Capture radius for removed points.
    pub fn puncture_radius(&self) -> f64 {
        1e-6 * self.diam
    }

    pub fn slit(&self) -> Option<(Point, Point)> {
        match &self.geom {
            Geom::SlitBall { a, b, .. } => Some((*a, *b)),
            _ => None,
        }
    }

    /// Ball center for round shapes, bounding-box center otherwise.
    pub fn center(&self) -> Point {
        match &self.geom {
            Geom::Ball { c, .. } | Geom::SlitBall { c, .. } | Geom::PuncturedBall { c, .. } => *c,
            _ => (self.bbox.0 + self.bbox.1) * 0.5,
        }
    }

    /// Lebesgue measure for shapes where it is elementary.
    pub fn volume(&self) -> Option<f64> {
        use std::f64::consts::PI;
        match &self.geom {
            Geom::Ball { r, .. } | Geom::SlitBall { r, .. } | Geom::PuncturedBall { r, .. } => {
                Some(if self.dim == 2 {
                    PI * r * r
                } else {
                    4.0 / 3.0 * PI * r * r * r
                })
            }
            Geom::Box { lo, hi, dim } => Some((0..*dim).map(|i| hi[i] - lo[i]).product()),
            Geom::Polygon { rings } => {
                let area = |ring: &Vec<Point>| {
                    (0..ring.len())
                        .map(|i| cross2(&ring[i], &ring[(i + 1) % ring.len()]))
                        .sum::<f64>()
                        .abs()
                        / 2.0
                };
                Some(area(&rings[0]) - rings[1..].iter().map(area).sum::<f64>())
            }
            _ => None,
        }
    }

    /// Signed distance to the full boundary, removed points included.
    pub fn signed_distance(&self, x: &Point) -> f64 {
        self.geom.sdist(x, true)
    }

    /// Signed distance ignoring removed points, which diffusions never hit.
    pub fn nonpolar_distance(&self, x: &Point) -> f64 {
        self.geom.sdist(x, false)
    }

    pub fn inside(&self, x: &Point) -> bool {
        if self.dim == 2 && x.z != 0.0 {
            return false;
        }
        self.signed_distance(x) > 0.0
    }

    pub fn distance_to_boundary(&self, x: &Point) -> Result<f64, GeometryError> {
        if !self.inside(x) {
            return Err(outside_err(x));
        }
        Ok(self.signed_distance(x))
    }

    pub fn on_boundary(&self, x: &Point) -> bool {
        self.signed_distance(x).abs() <= self.tol.max(1e-12 * self.diam)
    }

    fn slit_side(a: &Point, b: &Point, x: &Point) -> Side {
        if cross2(&(b - a), &(x - a)) > 0.0 {
            Side::Above
        } else {
            Side::Below
        }
    }

    /// Nearest point of the non-polar boundary, labelled by the side `x` is on.
    pub fn nearest_boundary(&self, x: &Point) -> BoundaryPoint {
        match &self.geom {
            Geom::Ball { c, r } | Geom::PuncturedBall { c, r, .. } => {
                BoundaryPoint::plain(project_ball(x, c, *r))
            }
            Geom::Box { lo, hi, dim } => {
                let mut best = (f64::INFINITY, 0, 0.0);
                for i in 0..*dim {
                    for (v, face) in [(x[i] - lo[i], lo[i]), (hi[i] - x[i], hi[i])] {
                        if v.abs() < best.0 {
                            best = (v.abs(), i, face);
                        }
                    }
                }
                let mut p = *x;
                p[best.1] = best.2;
                BoundaryPoint::plain(p)
            }
            Geom::Polygon { rings } => {
                let mut best = (f64::INFINITY, *x);
                for ring in rings {
                    for i in 0..ring.len() {
                        let (q, _) = project_segment(x, &ring[i], &ring[(i + 1) % ring.len()]);
                        let d = (x - q).norm();
                        if d < best.0 {
                            best = (d, q);
                        }
                    }
                }
                BoundaryPoint::plain(best.1)
            }
            Geom::SlitBall { c, r, a, b } => {
                let dc = r - (x - c).norm();
                let (q, s) = project_segment(x, a, b);
                if (x - q).norm() < dc {
                    let side = if s <= 0.0 || s >= 1.0 {
                        Side::Tip
                    } else {
                        Self::slit_side(a, b, x)
                    };
                    BoundaryPoint {
                        position: q,
                        side: Some(side),
                    }
                } else {
                    BoundaryPoint::plain(project_ball(x, c, *r))
                }
            }
            Geom::Csg { .. } | Geom::Offset { .. } => {
                BoundaryPoint::plain(self.gradient_projection(x))
            }
        }
    }

    fn gradient(&self, x: &Point) -> Point {
        let h = 1e-7 * self.diam;
        let mut g = Point::zeros();
        for i in 0..self.dim {
            let mut e = Point::zeros();
            e[i] = h;
            g[i] = (self.nonpolar_distance(&(x + e)) - self.nonpolar_distance(&(x - e))) / (2.0 * h);
        }
        g
    }

    fn gradient_projection(&self, x: &Point) -> Point {
        let mut p = *x;
        for _ in 0..8 {
            let s = self.nonpolar_distance(&p);
            if s.abs() <= self.tol {
                break;
            }
            let g = self.gradient(&p);
            let n2 = g.norm_squared();
            if n2 == 0.0 {
                break;
            }
            p -= g * (s / n2);
        }
        p
    }

    /// First crossing of the non-polar boundary by the segment `a -> b`,
    /// together with capture by a removed point, whichever comes first.
    /// Crossings at parameter 0 are ignored, so `a` may lie on the boundary.
    pub fn crossing(&self, a: &Point, b: &Point) -> Option<Crossing> {
        let t_min = 1e-12;
        let mut best: Option<Crossing> = match &self.geom {
            Geom::Ball { c, r } | Geom::PuncturedBall { c, r, .. } => {
                ball_exit(a, b, c, *r, t_min).map(|t| Crossing {
                    t,
                    point: BoundaryPoint::plain(project_ball(&(a + (b - a) * t), c, *r)),
                    puncture: false,
                })
            }
            Geom::Box { lo, hi, dim } => {
                let d = b - a;
                let mut best: Option<(f64, usize, f64)> = None;
                for i in 0..*dim {
                    let face = if d[i] > 0.0 {
                        hi[i]
                    } else if d[i] < 0.0 {
                        lo[i]
                    } else {
                        continue;
                    };
                    let t = (face - a[i]) / d[i];
                    if t > t_min && t <= 1.0 && best.is_none_or(|(bt, _, _)| t < bt) {
                        best = Some((t, i, face));
                    }
                }
                best.map(|(t, i, face)| {
                    let mut p = a + d * t;
                    p[i] = face;
                    for j in 0..*dim {
                        p[j] = p[j].clamp(lo[j], hi[j]);
                    }
                    Crossing {
                        t,
                        point: BoundaryPoint::plain(p),
                        puncture: false,
                    }
                })
            }
            Geom::Polygon { rings } => {
                let mut best: Option<(f64, Point)> = None;
                for ring in rings {
                    for i in 0..ring.len() {
                        let (p, q) = (&ring[i], &ring[(i + 1) % ring.len()]);
                        if let Some((t, s)) = segment_hit(a, b, p, q, t_min) {
                            if best.is_none_or(|(bt, _)| t < bt) {
                                best = Some((t, p + (q - p) * s));
                            }
                        }
                    }
                }
                best.map(|(t, p)| Crossing {
                    t,
                    point: BoundaryPoint::plain(p),
                    puncture: false,
                })
            }
            Geom::SlitBall { c, r, a: sa, b: sb } => {
                let circle = ball_exit(a, b, c, *r, t_min);
                let slit = segment_hit(a, b, sa, sb, t_min);
                match (circle, slit) {
                    (_, Some((t, s))) if circle.is_none_or(|tc| t <= tc) => {
                        let len = (sb - sa).norm();
                        let side = if s * len <= self.tol || (1.0 - s) * len <= self.tol {
                            Side::Tip
                        } else {
                            Self::slit_side(sa, sb, a)
                        };
                        Some(Crossing {
                            t,
                            point: BoundaryPoint {
                                position: sa + (sb - sa) * s,
                                side: Some(side),
                            },
                            puncture: false,
                        })
                    }
                    (Some(t), _) => Some(Crossing {
                        t,
                        point: BoundaryPoint::plain(project_ball(&(a + (b - a) * t), c, *r)),
                        puncture: false,
                    }),
                    _ => None,
                }
            }
            Geom::Csg { .. } | Geom::Offset { .. } => self.trace_crossing(a, b),
        };
        let eps = self.puncture_radius();
        for p in &self.punctures {
            let (q, t) = project_segment(p, a, b);
            if (p - q).norm() < eps && t > t_min && best.is_none_or(|c| t < c.t) {
                best = Some(Crossing {
                    t,
                    point: BoundaryPoint::plain(*p),
                    puncture: true,
                });
            }
        }
        best
    }

    /// Sphere tracing along the segment with the signed distance.
    fn trace_crossing(&self, a: &Point, b: &Point) -> Option<Crossing> {
        let d = b - a;
        let len = d.norm();
        if len == 0.0 {
            return None;
        }
        let tol = self.tol;
        let step_min = tol / len;
        let mut t = 0.0;
        let mut prev_t = 0.0;
        for _ in 0..100_000 {
            let p = a + d * t;
            let s = self.nonpolar_distance(&p);
            if t > 1e-12 && s <= tol {
                // Refine by bisection between the last inside point and t.
                let (mut lo, mut hi) = (prev_t, t);
                if s < -tol {
                    for _ in 0..60 {
                        let mid = 0.5 * (lo + hi);
                        if self.nonpolar_distance(&(a + d * mid)) > 0.0 {
                            lo = mid;
                        } else {
                            hi = mid;
                        }
                    }
                }
                let tc = if s < -tol { hi } else { t };
                let q = self.gradient_projection(&(a + d * tc));
                return Some(Crossing {
                    t: tc,
                    point: BoundaryPoint::plain(q),
                    puncture: false,
                });
            }
            if t >= 1.0 {
                return None;
            }
            prev_t = t;
            t = (t + (s.abs() / len).max(step_min)).min(1.0);
        }
        None
    }

    /// First crossing point of `[x_prev, x_next]` with the boundary; side
    /// labels follow the approach direction.
    pub fn classify_exit(&self, x_prev: &Point, x_next: &Point) -> Result<BoundaryPoint, GeometryError> {
        self.crossing(x_prev, x_next)
            .map(|c| c.point)
            .ok_or(GeometryError::NoCrossing {
                from: [x_prev.x, x_prev.y, x_prev.z],
                to: [x_next.x, x_next.y, x_next.z],
            })
    }

    /// `{x in D : dist(x, boundary) > r}`.
    pub fn offset(&self, r: f64) -> Domain {
        if r == 0.0 {
            return self.clone();
        }
        let spec = match (&self.spec, &self.geom) {
            (ShapeSpec::Ball { center, radius }, _) if r < *radius => ShapeSpec::Ball {
                center: center.clone(),
                radius: radius - r,
            },
            (ShapeSpec::Box { lo, hi }, _) => ShapeSpec::Box {
                lo: lo.iter().map(|v| v + r).collect(),
                hi: hi.iter().map(|v| v - r).collect(),
            },
            (ShapeSpec::Offset { base, r: r0 }, _) => ShapeSpec::Offset {
                base: base.clone(),
                r: r0 + r,
            },
            _ => ShapeSpec::Offset {
                base: Box::new(self.spec.clone()),
                r,
            },
        };
        Domain::new(spec).expect("offset of a valid domain")
    }

    /// Exhaustion set D_n with offset r_n = diam 2^{-n-1}.
    pub fn exhaustion(&self, n: u32) -> Domain {
        self.offset(self.exhaustion_radius(n))
    }

    pub fn exhaustion_radius(&self, n: u32) -> f64 {
        self.diam * 0.5f64.powi(n as i32 + 1)
    }

    /// Interior points of a regular `n^d` grid over the bounding box, with
    /// the cell volume.
    pub fn sample_interior_grid(&self, n: usize) -> Vec<Point> {
        self.quadrature_grid(n).0
    }

    /// Cell centres of an `n^d` grid over the bounding box that lie inside,
    /// and the common cell volume.
    pub fn quadrature_grid(&self, n: usize) -> (Vec<Point>, f64) {
        let (lo, hi) = self.bbox;
        let h = (hi - lo) / n as f64;
        let mut pts = Vec::new();
        let nz = if self.dim == 3 { n } else { 1 };
        for k in 0..nz {
            for j in 0..n {
                for i in 0..n {
                    let mut p = Point::new(
                        lo.x + (i as f64 + 0.5) * h.x,
                        lo.y + (j as f64 + 0.5) * h.y,
                        0.0,
                    );
                    if self.dim == 3 {
                        p.z = lo.z + (k as f64 + 0.5) * h.z;
                    }
                    if self.inside(&p) {
                        pts.push(p);
                    }
                }
            }
        }
        let vol = if self.dim == 3 { h.x * h.y * h.z } else { h.x * h.y };
        (pts, vol)
    }

    /// Uniform random interior point by rejection from the bounding box.
    pub fn random_interior<R: Rng + ?Sized>(&self, rng: &mut R) -> Point {
        let (lo, hi) = self.bbox;
        loop {
            let mut p = Point::zeros();
            for i in 0..self.dim {
                p[i] = rng.random_range(lo[i]..hi[i]);
            }
            if self.inside(&p) {
                return p;
            }
        }
    }

    /// Dense sampling of the full boundary (removed points included), used
    /// for brute-force distance checks.
    pub fn boundary_samples(&self, n: usize) -> Vec<Point> {
        let mut out = Vec::new();
        let sphere = |c: &Point, r: f64, dim: usize, out: &mut Vec<Point>| {
            use std::f64::consts::PI;
            if dim == 2 {
                for k in 0..n {
                    let t = 2.0 * PI * k as f64 / n as f64;
                    out.push(c + Point::new(r * t.cos(), r * t.sin(), 0.0));
                }
            } else {
                let m = (n as f64).sqrt().ceil() as usize;
                for i in 0..=m {
                    let th = PI * i as f64 / m as f64;
                    for j in 0..2 * m {
                        let ph = PI * j as f64 / m as f64;
                        out.push(
                            c + Point::new(th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()) * r,
                        );
                    }
                }
            }
        };
        let segment = |a: &Point, b: &Point, out: &mut Vec<Point>| {
            for k in 0..=n {
                out.push(a + (b - a) * (k as f64 / n as f64));
            }
        };
        match &self.geom {
            Geom::Ball { c, r } => sphere(c, *r, self.dim, &mut out),
            Geom::PuncturedBall { c, r, p } => {
                sphere(c, *r, self.dim, &mut out);
                out.push(*p);
            }
            Geom::SlitBall { c, r, a, b } => {
                sphere(c, *r, 2, &mut out);
                segment(a, b, &mut out);
            }
            Geom::Polygon { rings } => {
                for ring in rings {
                    for i in 0..ring.len() {
                        segment(&ring[i], &ring[(i + 1) % ring.len()], &mut out);
                    }
                }
            }
            Geom::Box { lo, hi, dim } => {
                let m = if *dim == 2 { n } else { (n as f64).sqrt().ceil() as usize };
                for axis in 0..*dim {
                    for face in [lo[axis], hi[axis]] {
                        let others: Vec<usize> = (0..*dim).filter(|&i| i != axis).collect();
                        let count = if *dim == 2 { m + 1 } else { (m + 1) * (m + 1) };
                        for k in 0..count {
                            let mut p = Point::zeros();
                            p[axis] = face;
                            let i0 = others[0];
                            let u = (k % (m + 1)) as f64 / m as f64;
                            p[i0] = lo[i0] + (hi[i0] - lo[i0]) * u;
                            if *dim == 3 {
                                let i1 = others[1];
                                let v = (k / (m + 1)) as f64 / m as f64;
                                p[i1] = lo[i1] + (hi[i1] - lo[i1]) * v;
                            }
                            out.push(p);
                        }
                    }
                }
            }
            Geom::Csg { .. } | Geom::Offset { .. } => {
                // Project a grid of nearby points onto the zero level set.
                let (lo, hi) = self.bbox;
                let m = if self.dim == 2 { n } else { (n as f64).sqrt() as usize };
                let h = (hi - lo) / m as f64;
                for (i, j) in (0..=m).flat_map(|i| (0..=m).map(move |j| (i, j))) {
                    let p = Point::new(lo.x + h.x * i as f64, lo.y + h.y * j as f64, 0.0);
                    if self.dim == 2 && self.signed_distance(&p).abs() < 2.0 * h.norm() {
                        out.push(self.gradient_projection(&p));
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p2(x: f64, y: f64) -> Point {
        Point::new(x, y, 0.0)
    }

    fn disk() -> Domain {
        Domain::unit_disk()
    }

    fn punctured() -> Domain {
        Domain::new(ShapeSpec::PuncturedBall {
            center: None,
            radius: 1.0,
            removed: vec![0.0, 0.0],
        })
        .unwrap()
    }

    fn slit() -> Domain {
        Domain::new(ShapeSpec::SlitBall {
            center: None,
            radius: 1.0,
            slit: [[-0.5, 0.0], [0.5, 0.0]],
        })
        .unwrap()
    }

    fn square() -> Domain {
        Domain::new(ShapeSpec::Box {
            lo: vec![0.0, 0.0],
            hi: vec![1.0, 1.0],
        })
        .unwrap()
    }

    fn l_shape() -> Domain {
        Domain::new(ShapeSpec::Polygon {
            vertices: vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [-1.0, 1.0]],
            holes: vec![],
        })
        .unwrap()
    }

    fn csg_union() -> Domain {
        Domain::new(ShapeSpec::Csg {
            op: CsgOp::Union,
            left: Box::new(ShapeSpec::Ball {
                center: vec![-0.4, 0.0],
                radius: 0.6,
            }),
            right: Box::new(ShapeSpec::Ball {
                center: vec![0.4, 0.0],
                radius: 0.6,
            }),
        })
        .unwrap()
    }

    fn csg_difference() -> Domain {
        Domain::new(ShapeSpec::Csg {
            op: CsgOp::Difference,
            left: Box::new(ShapeSpec::Box {
                lo: vec![-1.0, -1.0],
                hi: vec![1.0, 1.0],
            }),
            right: Box::new(ShapeSpec::Ball {
                center: vec![0.0, 0.0],
                radius: 0.4,
            }),
        })
        .unwrap()
    }

    #[test]
    fn inside_examples() {
        assert!(disk().inside(&p2(0.0, 0.0)));
        assert!(!disk().inside(&p2(1.0, 0.0)));
        assert!(!punctured().inside(&p2(0.0, 0.0)));
        assert!(!slit().inside(&p2(0.2, 0.0)));
        assert!(slit().inside(&p2(0.7, 0.0)));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(disk().distance_to_boundary(&p2(0.5, 0.0)).unwrap(), 0.5);
        assert_eq!(punctured().distance_to_boundary(&p2(0.1, 0.0)).unwrap(), 0.1);
        assert_eq!(slit().distance_to_boundary(&p2(0.0, 0.2)).unwrap(), 0.2);
        assert!(disk().distance_to_boundary(&p2(2.0, 0.0)).is_err());
        assert_eq!(punctured().nonpolar_distance(&p2(0.1, 0.0)), 0.9);
    }

    #[test]
    fn classify_exit_examples() {
        let s = slit();
        let bp = s.classify_exit(&p2(0.0, 0.1), &p2(0.0, -0.1)).unwrap();
        assert!((bp.position - p2(0.0, 0.0)).norm() < 1e-15);
        assert_eq!(bp.side, Some(Side::Above));
        let bp = s.classify_exit(&p2(0.0, -0.1), &p2(0.0, 0.1)).unwrap();
        assert_eq!(bp.side, Some(Side::Below));
        let bp = disk().classify_exit(&p2(0.9, 0.0), &p2(1.1, 0.0)).unwrap();
        assert!((bp.position - p2(1.0, 0.0)).norm() < 1e-15);
        assert_eq!(bp.side, None);
        assert!(disk().classify_exit(&p2(0.1, 0.0), &p2(0.2, 0.0)).is_err());
    }

    #[test]
    fn slit_tip_label() {
        let s = slit();
        let bp = s.classify_exit(&p2(0.5, 0.1), &p2(0.5, -0.1)).unwrap();
        assert_eq!(bp.side, Some(Side::Tip));
        let bp = s.nearest_boundary(&p2(0.55, 0.01));
        assert_eq!(bp.side, Some(Side::Tip));
    }

    #[test]
    fn exhaustion_examples() {
        let d = disk().exhaustion(2);
        assert_eq!(d.spec(), &ShapeSpec::Ball { center: vec![0.0, 0.0], radius: 0.75 });
        let sq = square().offset(0.25);
        assert_eq!(sq.spec(), &ShapeSpec::Box { lo: vec![0.25, 0.25], hi: vec![0.75, 0.75] });
        let ann = punctured().offset(0.1);
        assert!(!ann.inside(&p2(0.05, 0.0)));
        assert!(ann.inside(&p2(0.5, 0.0)));
        assert!(!ann.inside(&p2(0.95, 0.0)));
        assert!((ann.signed_distance(&p2(0.5, 0.0)) - 0.4).abs() < 1e-15);
        assert!((ann.nonpolar_distance(&p2(0.3, 0.0)) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn exhaustion_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for d in [disk(), punctured(), slit(), square(), l_shape(), csg_union()] {
            for n in 1..5 {
                let dn = d.exhaustion(n);
                let dn1 = d.exhaustion(n + 1);
                for _ in 0..200 {
                    let x = d.random_interior(&mut rng);
                    if dn.inside(&x) {
                        assert!(dn1.inside(&x), "{:?} n={n} x={x:?}", d.spec());
                    }
                }
            }
        }
    }

    #[test]
    fn reversing_segment_flips_side() {
        let s = slit();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let x = rng.random_range(-0.45..0.45);
            let a = p2(x, rng.random_range(0.01..0.3));
            let b = p2(x + rng.random_range(-0.02..0.02), -rng.random_range(0.01..0.3));
            let s1 = s.classify_exit(&a, &b).unwrap().side.unwrap();
            let s2 = s.classify_exit(&b, &a).unwrap().side.unwrap();
            assert_eq!(s1.flipped(), s2);
        }
    }

    #[test]
    fn distance_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let ball3 = Domain::new(ShapeSpec::Ball { center: vec![0.0, 0.0, 0.0], radius: 1.0 }).unwrap();
        let box3 = Domain::new(ShapeSpec::Box { lo: vec![0.0; 3], hi: vec![1.0, 2.0, 1.0] }).unwrap();
        let shapes = [disk(), punctured(), slit(), square(), l_shape(), csg_difference(), ball3, box3];
        for d in shapes {
            let n = if d.dim() == 2 { 20_000 } else { 40_000 };
            let samples = d.boundary_samples(n);
            // Spacing bound of the sampling controls the brute-force error.
            let spacing = if d.dim() == 2 { d.diam() * 4.0 / n as f64 } else { d.diam() * 4.0 / (n as f64).sqrt() };
            for _ in 0..1000 {
                let x = d.random_interior(&mut rng);
                let exact = d.distance_to_boundary(&x).unwrap();
                let brute = samples.iter().map(|s| (x - s).norm()).fold(f64::INFINITY, f64::min);
                assert!(exact <= brute + 2.0 * d.tol(), "{:?}: exact {exact} brute {brute}", d.spec());
                assert!(brute - exact <= spacing + 2.0 * d.tol(), "{:?}: exact {exact} brute {brute}", d.spec());
            }
        }
    }

    #[test]
    fn csg_union_distance_is_lower_bound() {
        let d = csg_union();
        let samples = d.boundary_samples(4000);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let x = d.random_interior(&mut rng);
            let lb = d.distance_to_boundary(&x).unwrap();
            let brute = samples
                .iter()
                .filter(|s| d.signed_distance(s).abs() < 1e-6)
                .map(|s| (x - s).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(lb <= brute + 1e-9);
        }
    }

    #[test]
    fn csg_crossing_by_tracing() {
        let d = csg_difference();
        let c = d.crossing(&p2(0.7, 0.0), &p2(0.0, 0.0)).unwrap();
        assert!((c.point.position - p2(0.4, 0.0)).norm() < 1e-8);
        assert!((c.t - 0.3 / 0.7).abs() < 1e-8);
        let c = d.crossing(&p2(0.7, 0.0), &p2(1.5, 0.0)).unwrap();
        assert!((c.point.position - p2(1.0, 0.0)).norm() < 1e-8);
    }

    #[test]
    fn polygon_crossing() {
        let d = l_shape();
        let c = d.crossing(&p2(0.5, -0.5), &p2(0.5, 0.5)).unwrap();
        assert!((c.point.position - p2(0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn box_crossing_and_projection() {
        let d = square();
        let c = d.crossing(&p2(0.5, 0.5), &p2(1.5, 0.75)).unwrap();
        assert!((c.point.position - p2(1.0, 0.625)).norm() < 1e-15);
        assert_eq!(d.nearest_boundary(&p2(0.1, 0.5)).position, p2(0.0, 0.5));
    }

    #[test]
    fn puncture_capture() {
        let d = punctured();
        let c = d.crossing(&p2(-0.1, 0.0), &p2(0.1, 0.0)).unwrap();
        assert!(c.puncture);
        assert!(d.crossing(&p2(-0.1, 0.01), &p2(0.1, 0.01)).is_none());
        assert_eq!(d.punctures().len(), 1);
        assert!(d.on_boundary(&p2(0.0, 0.0)));
    }

    #[test]
    fn json_round_trip() {
        let src = r#"{"type":"slit_ball","radius":1.0,"slit":[[-0.5,0],[0.5,0]]}"#;
        let d: Domain = serde_json::from_str(src).unwrap();
        assert!(d.slit().is_some());
        let back: Domain = serde_json::from_str(&serde_json::to_string(&d).unwrap()).unwrap();
        assert_eq!(d, back);
        let bad = r#"{"type":"slit_ball","radius":1.0,"slit":[[-1.5,0],[0.5,0]]}"#;
        assert!(serde_json::from_str::<Domain>(bad).is_err());
    }

    #[test]
    fn volumes() {
        assert!((disk().volume().unwrap() - std::f64::consts::PI).abs() < 1e-15);
        assert_eq!(l_shape().volume().unwrap(), 3.0);
        assert_eq!(square().volume().unwrap(), 1.0);
    }
}
