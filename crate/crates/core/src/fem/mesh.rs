//! Constrained Delaunay meshing of two-dimensional domains.

use std::f64::consts::PI;
use std::fmt::Write as _;

use spade::{AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation};

use super::FemError;
use crate::geometry::{BoundaryPoint, Domain, Point, ShapeSpec, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexFlag {
    Interior,
    Boundary(Option<Side>),
}

impl VertexFlag {
    pub fn is_boundary(self) -> bool {
        matches!(self, VertexFlag::Boundary(_))
    }

    pub fn side(self) -> Option<Side> {
        match self {
            VertexFlag::Boundary(s) => s,
            VertexFlag::Interior => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub flags: Vec<VertexFlag>,
    pub h: f64,
    locator: Locator,
}

/// Uniform bucket grid over triangle bounding boxes.
#[derive(Debug, Clone)]
struct Locator {
    lo: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
}

impl Locator {
    fn new(vertices: &[Point], triangles: &[[usize; 3]], h: f64) -> Self {
        let mut lo = Point::repeat(f64::INFINITY);
        let mut hi = Point::repeat(f64::NEG_INFINITY);
        for v in vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let cell = h.max(1e-12);
        let nx = (((hi.x - lo.x) / cell).ceil() as usize).max(1);
        let ny = (((hi.y - lo.y) / cell).ceil() as usize).max(1);
        let mut buckets = vec![Vec::new(); nx * ny];
        let mut loc = Self { lo, cell, nx, ny, buckets: Vec::new() };
        for (t, tri) in triangles.iter().enumerate() {
            let (mut a, mut b) = (Point::repeat(f64::INFINITY), Point::repeat(f64::NEG_INFINITY));
            for &i in tri {
                a = a.inf(&vertices[i]);
                b = b.sup(&vertices[i]);
            }
            let (i0, j0) = loc.cell_of(&a);
            let (i1, j1) = loc.cell_of(&b);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * nx + i].push(t as u32);
                }
            }
        }
        loc.buckets = buckets;
        loc
    }

    fn cell_of(&self, x: &Point) -> (usize, usize) {
        let i = ((x.x - self.lo.x) / self.cell).floor().clamp(0.0, (self.nx - 1) as f64) as usize;
        let j = ((x.y - self.lo.y) / self.cell).floor().clamp(0.0, (self.ny - 1) as f64) as usize;
        (i, j)
    }
}

pub fn barycentric(x: &Point, a: &Point, b: &Point, c: &Point) -> [f64; 3] {
    let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    let l1 = ((x.x - a.x) * (c.y - a.y) - (c.x - a.x) * (x.y - a.y)) / det;
    let l2 = ((b.x - a.x) * (x.y - a.y) - (x.x - a.x) * (b.y - a.y)) / det;
    [1.0 - l1 - l2, l1, l2]
}

impl Mesh {
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, flags: Vec<VertexFlag>, h: f64) -> Self {
        let locator = Locator::new(&vertices, &triangles, h);
        Self { vertices, triangles, flags, h, locator }
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
        (a + b + c) / 3.0
    }

    pub fn boundary_vertices(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.vertices.len()).filter(|&i| self.flags[i].is_boundary())
    }

    pub fn boundary_point(&self, v: usize) -> BoundaryPoint {
        BoundaryPoint {
            position: self.vertices[v],
            side: self.flags[v].side(),
        }
    }

    /// Triangle containing `x` with its barycentric coordinates. Points just
    /// outside the mesh snap to the nearest triangle within `h`.
    pub fn locate(&self, x: &Point) -> Option<(usize, [f64; 3])> {
        let loc = &self.locator;
        let (ci, cj) = loc.cell_of(x);
        let mut best: Option<(f64, usize, [f64; 3])> = None;
        for &t in &loc.buckets[cj * loc.nx + ci] {
            let t = t as usize;
            let [a, b, c] = self.triangles[t].map(|i| self.vertices[i]);
            let l = barycentric(x, &a, &b, &c);
            let worst = l.iter().copied().fold(f64::INFINITY, f64::min);
            if worst >= -1e-12 {
                return Some((t, l));
            }
            if best.is_none_or(|(w, _, _)| worst > w) {
                best = Some((worst, t, l));
            }
        }
        // Clamped fallback for points on the hull edge or in slivers between
        // buckets.
        let (worst, t, l) = best?;
        if worst < -0.5 {
            return None;
        }
        let mut l = l.map(|v| v.max(0.0));
        let s: f64 = l.iter().sum();
        l.iter_mut().for_each(|v| *v /= s);
        Some((t, l))
    }

    pub fn interpolate(&self, values: &[f64], x: &Point) -> Option<f64> {
        let (t, l) = self.locate(x)?;
        let tri = self.triangles[t];
        Some(l[0] * values[tri[0]] + l[1] * values[tri[1]] + l[2] * values[tri[2]])
    }

    pub fn nearest_vertex(&self, x: &Point, interior_only: bool) -> Option<usize> {
        (0..self.vertices.len())
            .filter(|&i| !interior_only || !self.flags[i].is_boundary())
            .min_by(|&a, &b| (self.vertices[a] - x).norm().total_cmp(&(self.vertices[b] - x).norm()))
    }

    pub fn max_edge(&self) -> f64 {
        let mut m: f64 = 0.0;
        for tri in &self.triangles {
            for k in 0..3 {
                m = m.max((self.vertices[tri[k]] - self.vertices[tri[(k + 1) % 3]]).norm());
            }
        }
        m
    }

    /// Smallest interior angle in degrees.
    pub fn min_angle(&self) -> f64 {
        let mut m = f64::INFINITY;
        for tri in &self.triangles {
            for k in 0..3 {
                let p = self.vertices[tri[k]];
                let u = self.vertices[tri[(k + 1) % 3]] - p;
                let v = self.vertices[tri[(k + 2) % 3]] - p;
                let ang = (u.dot(&v) / (u.norm() * v.norm())).clamp(-1.0, 1.0).acos();
                m = m.min(ang.to_degrees());
            }
        }
        m
    }

    /// Object File Format text.
    pub fn to_off(&self) -> String {
        let mut s = String::from("OFF\n");
        let _ = writeln!(s, "{} {} 0", self.vertices.len(), self.triangles.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:?} {:?} 0", v.x, v.y);
        }
        for t in &self.triangles {
            let _ = writeln!(s, "3 {} {} {}", t[0], t[1], t[2]);
        }
        s
    }
}

/// Boundary polylines and constraint segments for the mesher.
struct Outline {
    points: Vec<Point>,
    segments: Vec<(usize, usize)>,
    /// Circles whose boundary vertices are projected back after refinement.
    circles: Vec<(Point, f64)>,
    slit: Option<(Point, Point)>,
}

impl Outline {
    fn new() -> Self {
        Self { points: Vec::new(), segments: Vec::new(), circles: Vec::new(), slit: None }
    }

    fn add_chain(&mut self, pts: Vec<Point>, closed: bool) {
        let base = self.points.len();
        let n = pts.len();
        self.points.extend(pts);
        for i in 0..n - 1 {
            self.segments.push((base + i, base + i + 1));
        }
        if closed {
            self.segments.push((base + n - 1, base));
        }
    }

    fn add_polyline(&mut self, corners: &[Point], closed: bool, spacing: f64) {
        let mut pts = Vec::new();
        let m = if closed { corners.len() } else { corners.len() - 1 };
        for i in 0..m {
            let (a, b) = (corners[i], corners[(i + 1) % corners.len()]);
            let k = (((b - a).norm() / spacing).ceil() as usize).max(1);
            for j in 0..k {
                pts.push(a + (b - a) * (j as f64 / k as f64));
            }
        }
        if !closed {
            pts.push(*corners.last().expect("nonempty"));
        }
        self.add_chain(pts, closed);
    }

    fn add_circle(&mut self, c: Point, r: f64, spacing: f64) {
        let k = ((2.0 * PI * r / spacing).ceil() as usize).max(12);
        let pts = (0..k)
            .map(|j| {
                let t = 2.0 * PI * j as f64 / k as f64;
                c + Point::new(r * t.cos(), r * t.sin(), 0.0)
            })
            .collect();
        self.add_chain(pts, true);
        self.circles.push((c, r));
    }
}

fn outline(domain: &Domain, spacing: f64) -> Result<Outline, FemError> {
    let mut o = Outline::new();
    let p = |v: &[f64]| Point::new(v[0], v[1], 0.0);
    match domain.spec() {
        ShapeSpec::Ball { center, radius } => o.add_circle(p(center), *radius, spacing),
        ShapeSpec::PuncturedBall { center, radius, .. } => {
            // The removed point has no two-dimensional footprint.
            let c = center.as_ref().map_or(Point::zeros(), |c| p(c));
            o.add_circle(c, *radius, spacing);
        }
        ShapeSpec::SlitBall { center, radius, slit } => {
            let c = center.map_or(Point::zeros(), |c| p(&c));
            o.add_circle(c, *radius, spacing);
            let (a, b) = (p(&slit[0]), p(&slit[1]));
            o.add_polyline(&[a, b], false, spacing);
            o.slit = Some((a, b));
        }
        ShapeSpec::Box { lo, hi } => {
            let c = [p(lo), Point::new(hi[0], lo[1], 0.0), p(hi), Point::new(lo[0], hi[1], 0.0)];
            o.add_polyline(&c, true, spacing);
        }
        ShapeSpec::Polygon { vertices, holes } => {
            for ring in std::iter::once(vertices).chain(holes) {
                let c: Vec<Point> = ring.iter().map(|v| p(v)).collect();
                o.add_polyline(&c, true, spacing);
            }
        }
        ShapeSpec::Csg { .. } | ShapeSpec::Offset { .. } => {
            return Err(FemError::Unsupported(
                "meshing supports ball, box, polygon, slit_ball and punctured_ball".into(),
            ))
        }
    }
    Ok(o)
}

/// Triangulates a two-dimensional domain with edges at most `h` and angles
/// at least 20 degrees. Slit vertices are duplicated, one copy per side.
pub fn triangulate(domain: &Domain, h: f64) -> Result<Mesh, FemError> {
    if domain.dim() != 2 {
        return Err(FemError::Unsupported("meshing is two-dimensional only".into()));
    }
    if !(h > 0.0) || h > domain.diam() {
        return Err(FemError::Invalid(format!("mesh size h={h} out of range")));
    }
    let est = domain.volume().unwrap_or(domain.diam() * domain.diam()) / (h * h);
    if est > 2e6 {
        return Err(FemError::Invalid(format!("mesh size h={h} gives too many elements")));
    }
    let mut area_factor = 0.8;
    for _ in 0..6 {
        let mesh = try_mesh(domain, h, area_factor)?;
        if mesh.max_edge() <= h * (1.0 + 1e-9) {
            if mesh.min_angle() < 20.0 {
                return Err(FemError::Meshing(format!(
                    "minimum angle {:.2} below 20 degrees",
                    mesh.min_angle()
                )));
            }
            return Ok(mesh);
        }
        area_factor *= 0.8;
    }
    Err(FemError::Meshing("could not reach the requested edge length".into()))
}

fn try_mesh(domain: &Domain, h: f64, area_factor: f64) -> Result<Mesh, FemError> {
    let spacing = 0.7 * h * area_factor / 0.8;
    let o = outline(domain, spacing)?;
    let mut cdt = ConstrainedDelaunayTriangulation::<Point2<f64>>::new();
    let mut handles = Vec::with_capacity(o.points.len());
    for q in &o.points {
        let hnd = cdt
            .insert(Point2::new(q.x, q.y))
            .map_err(|e| FemError::Meshing(format!("{e:?}")))?;
        handles.push(hnd);
    }
    for &(a, b) in &o.segments {
        if handles[a] != handles[b] {
            cdt.add_constraint(handles[a], handles[b]);
        }
    }
    let target = h * area_factor;
    let params = RefinementParameters::<f64>::new()
        .with_angle_limit(AngleLimit::from_deg(25.0))
        .with_max_allowed_area(3f64.sqrt() / 4.0 * target * target)
        .with_max_additional_vertices(4_000_000)
        .exclude_outer_faces(false)
        .keep_constraint_edges();
    let res = cdt.refine(params);
    if !res.refinement_complete {
        return Err(FemError::Meshing("refinement did not complete".into()));
    }

    let tol = 1e-9 * domain.diam();
    let mut verts: Vec<Point> = cdt.vertices().map(|v| Point::new(v.position().x, v.position().y, 0.0)).collect();
    // Chord points created on circular boundaries go back onto the circle.
    for v in verts.iter_mut() {
        for &(c, r) in &o.circles {
            let d = (*v - c).norm();
            let sagitta = spacing * spacing / (4.0 * r) + 1e-12 * r;
            if d > 0.0 && (d - r).abs() <= sagitta {
                *v = c + (*v - c) * (r / d);
            }
        }
    }
    let mut tris: Vec<[usize; 3]> = Vec::new();
    for f in cdt.inner_faces() {
        let [a, b, c] = f.vertices().map(|v| v.fix().index());
        let cen = (verts[a] + verts[b] + verts[c]) / 3.0;
        if domain.nonpolar_distance(&cen) > 0.0 {
            tris.push([a, b, c]);
        }
    }
    // Keep referenced vertices only.
    let mut map = vec![usize::MAX; verts.len()];
    let mut kept = Vec::new();
    for t in tris.iter_mut() {
        for i in t.iter_mut() {
            if map[*i] == usize::MAX {
                map[*i] = kept.len();
                kept.push(verts[*i]);
            }
            *i = map[*i];
        }
    }
    let mut verts = kept;
    let on_slit = |x: &Point| -> Option<f64> {
        let (a, b) = o.slit?;
        let d = b - a;
        let s = (x - a).dot(&d) / d.norm_squared();
        let perp = (d.x * (x.y - a.y) - d.y * (x.x - a.x)).abs() / d.norm();
        (perp <= tol && (-1e-12..=1.0 + 1e-12).contains(&s)).then_some(s)
    };
    let mut flags: Vec<VertexFlag> = verts
        .iter()
        .map(|x| {
            if let Some(s) = on_slit(x) {
                let len = o.slit.map_or(1.0, |(a, b)| (b - a).norm());
                if s * len <= tol || (1.0 - s) * len <= tol {
                    VertexFlag::Boundary(Some(Side::Tip))
                } else {
                    VertexFlag::Boundary(Some(Side::Above))
                }
            } else if domain.nonpolar_distance(x).abs() <= tol {
                VertexFlag::Boundary(None)
            } else {
                VertexFlag::Interior
            }
        })
        .collect();
    // Duplicate interior slit vertices for triangles below the slit.
    if let Some((a, b)) = o.slit {
        let mut copy = vec![usize::MAX; verts.len()];
        for t in tris.iter_mut() {
            let cen = (verts[t[0]] + verts[t[1]] + verts[t[2]]) / 3.0;
            let d = b - a;
            let below = d.x * (cen.y - a.y) - d.y * (cen.x - a.x) < 0.0;
            if !below {
                continue;
            }
            for i in t.iter_mut() {
                if flags[*i] == VertexFlag::Boundary(Some(Side::Above)) {
                    if copy[*i] == usize::MAX {
                        copy[*i] = verts.len();
                        verts.push(verts[*i]);
                        flags.push(VertexFlag::Boundary(Some(Side::Below)));
                    }
                    *i = copy[*i];
                }
            }
        }
    }
    // Counter-clockwise orientation.
    for t in tris.iter_mut() {
        let [p, q, r] = t.map(|i| verts[i]);
        if (q.x - p.x) * (r.y - p.y) - (r.x - p.x) * (q.y - p.y) < 0.0 {
            t.swap(1, 2);
        }
    }
    Ok(Mesh::new(verts, tris, flags, h))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Domain {
        Domain::new(ShapeSpec::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] }).unwrap()
    }

    #[test]
    fn square_mesh_structure() {
        let m = triangulate(&square(), 0.5).unwrap();
        assert!(m.triangles.len() >= 8);
        for i in m.boundary_vertices() {
            let v = m.vertices[i];
            let on = v.x.abs() < 1e-12 || v.y.abs() < 1e-12 || (v.x - 1.0).abs() < 1e-12 || (v.y - 1.0).abs() < 1e-12;
            assert!(on, "{v:?}");
        }
        assert!(m.max_edge() <= 0.5 + 1e-12);
        assert!(m.min_angle() >= 20.0);
        let area: f64 = (0..m.triangles.len()).map(|t| m.area(t)).sum();
        assert!((area - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disk_mesh_quality() {
        let m = triangulate(&Domain::unit_disk(), 0.1).unwrap();
        assert!(m.max_edge() <= 0.1 + 1e-12);
        assert!(m.min_angle() >= 20.0);
        for i in m.boundary_vertices() {
            assert!((m.vertices[i].norm() - 1.0).abs() < 1e-12);
        }
        assert!((0..m.triangles.len()).all(|t| m.area(t) > 0.0));
    }

    #[test]
    fn slit_vertices_are_duplicated() {
        let d = Domain::new(ShapeSpec::SlitBall { center: None, radius: 1.0, slit: [[-0.5, 0.0], [0.5, 0.0]] }).unwrap();
        let m = triangulate(&d, 0.1).unwrap();
        let on_slit: Vec<usize> = (0..m.n_vertices())
            .filter(|&i| m.vertices[i].y == 0.0 && m.vertices[i].x.abs() <= 0.5)
            .collect();
        let mut interior_positions = Vec::new();
        for &i in &on_slit {
            let x = m.vertices[i].x;
            if (x.abs() - 0.5).abs() < 1e-12 {
                assert_eq!(m.flags[i], VertexFlag::Boundary(Some(Side::Tip)));
            } else {
                interior_positions.push(x);
            }
        }
        interior_positions.sort_by(|a, b| a.total_cmp(b));
        assert!(!interior_positions.is_empty());
        for pair in interior_positions.chunks(2) {
            assert_eq!(pair.len(), 2);
            assert_eq!(pair[0], pair[1]);
        }
        let above = on_slit.iter().filter(|&&i| m.flags[i] == VertexFlag::Boundary(Some(Side::Above))).count();
        let below = on_slit.iter().filter(|&&i| m.flags[i] == VertexFlag::Boundary(Some(Side::Below))).count();
        assert_eq!(above, below);
        assert_eq!(above * 2, interior_positions.len());
        // Every triangle touching a below copy lies below the slit.
        for t in 0..m.triangles.len() {
            let uses_below = m.triangles[t].iter().any(|&i| m.flags[i] == VertexFlag::Boundary(Some(Side::Below)));
            if uses_below {
                assert!(m.centroid(t).y < 0.0);
            }
        }
    }

    #[test]
    fn punctured_disk_meshes_like_the_disk() {
        let d = Domain::new(ShapeSpec::PuncturedBall { center: None, radius: 1.0, removed: vec![0.0, 0.0] }).unwrap();
        let a = triangulate(&d, 0.1).unwrap();
        let b = triangulate(&Domain::unit_disk(), 0.1).unwrap();
        assert_eq!(a.vertices, b.vertices);
        assert_eq!(a.triangles, b.triangles);
    }

    #[test]
    fn l_shape_area_and_location() {
        let d = Domain::new(ShapeSpec::Polygon {
            vertices: vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 0.0], [0.0, 0.0], [0.0, 1.0], [-1.0, 1.0]],
            holes: vec![],
        })
        .unwrap();
        let m = triangulate(&d, 0.2).unwrap();
        let area: f64 = (0..m.triangles.len()).map(|t| m.area(t)).sum();
        assert!((area - 3.0).abs() < 1e-12);
        let vals: Vec<f64> = m.vertices.iter().map(|v| 2.0 * v.x - v.y).collect();
        for x in [Point::new(-0.3, 0.7, 0.0), Point::new(0.5, -0.5, 0.0), Point::new(-0.99, -0.99, 0.0)] {
            assert!((m.interpolate(&vals, &x).unwrap() - (2.0 * x.x - x.y)).abs() < 1e-12);
        }
        assert!(m.locate(&Point::new(5.0, 5.0, 0.0)).is_none());
    }
}
