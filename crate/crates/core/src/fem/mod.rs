//! P1 finite elements on triangulated two-dimensional domains: the weak
//! Dirichlet problem, the Green operator and Green function columns.

pub mod mesh;

use std::fmt::Write as _;
use std::sync::Arc;

use sprs::{CsMat, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};
use thiserror::Error;

use crate::coefficients::CoefficientField;
use crate::geometry::{BoundaryPoint, Point, Side};
pub use mesh::{triangulate, Mesh, VertexFlag};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FemError {
    #[error("invalid finite element input: {0}")]
    Invalid(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("meshing failed: {0}")]
    Meshing(String),
    #[error("singular or inaccurate linear system (relative residual {0:e})")]
    Singular(f64),
    #[error("point ({0}, {1}) is outside the mesh")]
    OutsideMesh(f64, f64),
    #[error("fields live on different meshes")]
    MeshMismatch,
}

/// Nodal values on a mesh.
#[derive(Debug, Clone)]
pub struct DiscreteField {
    pub mesh: Arc<Mesh>,
    pub values: Vec<f64>,
}

impl DiscreteField {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Self {
        assert_eq!(mesh.n_vertices(), values.len());
        Self { mesh, values }
    }

    pub fn from_fn(mesh: Arc<Mesh>, f: impl Fn(&Point, VertexFlag) -> f64) -> Self {
        let values = mesh.vertices.iter().zip(&mesh.flags).map(|(x, fl)| f(x, *fl)).collect();
        Self { mesh, values }
    }

    pub fn eval(&self, x: &Point) -> Option<f64> {
        self.mesh.interpolate(&self.values, x)
    }

    pub fn same_mesh(&self, other: &DiscreteField) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Boundary restriction keyed by vertex, with side labels.
    pub fn trace_values(&self) -> Vec<(usize, BoundaryPoint, f64)> {
        self.mesh
            .boundary_vertices()
            .map(|v| (v, self.mesh.boundary_point(v), self.values[v]))
            .collect()
    }

    /// `vertex_id,x,y,value,boundary_flag,side`
    pub fn to_csv(&self) -> String {
        let mut s = String::from("vertex_id,x,y,value,boundary_flag,side\n");
        for (i, (x, f)) in self.mesh.vertices.iter().zip(&self.mesh.flags).enumerate() {
            let (flag, side) = match f {
                VertexFlag::Interior => ("interior", ""),
                VertexFlag::Boundary(side) => ("boundary", side.map_or("", Side::as_str)),
            };
            let _ = writeln!(s, "{i},{:?},{:?},{:?},{flag},{side}", x.x, x.y, self.values[i]);
        }
        s
    }

    /// Integral of |u| (exact for piecewise linear u of one sign per element,
    /// midpoint-rule otherwise).
    pub fn l1_norm(&self) -> f64 {
        let m = &self.mesh;
        (0..m.triangles.len())
            .map(|t| {
                let v = m.triangles[t].map(|i| self.values[i]);
                let a = m.area(t);
                if v.iter().all(|x| *x >= 0.0) || v.iter().all(|x| *x <= 0.0) {
                    a * (v[0] + v[1] + v[2]).abs() / 3.0
                } else {
                    edge_midpoint_rule(a, v, |x| x.abs())
                }
            })
            .sum()
    }

    pub fn integral(&self) -> f64 {
        let m = &self.mesh;
        (0..m.triangles.len())
            .map(|t| m.area(t) * m.triangles[t].iter().map(|&i| self.values[i]).sum::<f64>() / 3.0)
            .sum()
    }
}

/// Edge-midpoint quadrature of g(u) for linear u with vertex values `v`;
/// exact when g(u) is quadratic.
fn edge_midpoint_rule(area: f64, v: [f64; 3], g: impl Fn(f64) -> f64) -> f64 {
    area / 3.0 * (g(0.5 * (v[0] + v[1])) + g(0.5 * (v[1] + v[2])) + g(0.5 * (v[2] + v[0])))
}

fn gradients(a: &Point, b: &Point, c: &Point) -> (f64, [[f64; 2]; 3]) {
    let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    let area = 0.5 * det;
    let g = [
        [(b.y - c.y) / det, (c.x - b.x) / det],
        [(c.y - a.y) / det, (a.x - c.x) / det],
        [(a.y - b.y) / det, (b.x - a.x) / det],
    ];
    (area, g)
}

/// Gradient of a P1 field on triangle `t`.
pub fn element_gradient(mesh: &Mesh, values: &[f64], t: usize) -> [f64; 2] {
    let tri = mesh.triangles[t];
    let [a, b, c] = tri.map(|i| mesh.vertices[i]);
    let (_, g) = gradients(&a, &b, &c);
    let mut out = [0.0; 2];
    for k in 0..3 {
        out[0] += values[tri[k]] * g[k][0];
        out[1] += values[tri[k]] * g[k][1];
    }
    out
}

/// L^2 norm of u plus the L^2 norm of sqrt(delta) grad u.
pub fn breve_norm(u: &DiscreteField, delta: &DiscreteField) -> Result<f64, FemError> {
    let (l2, grad) = breve_parts(u, delta)?;
    Ok(l2 + grad)
}

/// The two terms of [`breve_norm`].
pub fn breve_parts(u: &DiscreteField, delta: &DiscreteField) -> Result<(f64, f64), FemError> {
    if !u.same_mesh(delta) {
        return Err(FemError::MeshMismatch);
    }
    let m = &u.mesh;
    let mut l2 = 0.0;
    let mut grad = 0.0;
    for t in 0..m.triangles.len() {
        let tri = m.triangles[t];
        let area = m.area(t);
        l2 += edge_midpoint_rule(area, tri.map(|i| u.values[i]), |x| x * x);
        let g = element_gradient(m, &u.values, t);
        let d = edge_midpoint_rule(area, tri.map(|i| delta.values[i]), |x| x);
        grad += (g[0] * g[0] + g[1] * g[1]) * d;
    }
    Ok((l2.sqrt(), grad.sqrt()))
}

/// Assembled stiffness and mass matrices with a cached factorisation of
/// the interior block.
pub struct FemSystem {
    mesh: Arc<Mesh>,
    lambda: f64,
    stiffness: CsMat<f64>,
    mass: CsMat<f64>,
    lumped: Vec<f64>,
    interior: Vec<usize>,
    index: Vec<Option<usize>>,
    kii: CsMat<f64>,
    factor: LdlNumeric<f64, usize>,
}

impl std::fmt::Debug for FemSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FemSystem")
            .field("vertices", &self.mesh.n_vertices())
            .field("interior", &self.interior.len())
            .finish()
    }
}

impl FemSystem {
    pub fn new(mesh: Arc<Mesh>, field: &CoefficientField) -> Result<Self, FemError> {
        if field.dim() != 2 {
            return Err(FemError::Unsupported("finite elements are two-dimensional".into()));
        }
        let n = mesh.n_vertices();
        let mut k = TriMat::new((n, n));
        let mut mm = TriMat::new((n, n));
        let mut lumped = vec![0.0; n];
        for (t, tri) in mesh.triangles.iter().enumerate() {
            let [a, b, c] = tri.map(|i| mesh.vertices[i]);
            let (area, g) = gradients(&a, &b, &c);
            if !(area > 0.0) {
                return Err(FemError::Invalid(format!("triangle {t} has nonpositive area")));
            }
            let am = field.a(&mesh.centroid(t));
            // Symmetric part only, each pair computed once so the factor sees exact symmetry.
            let off = 0.5 * (am[(0, 1)] + am[(1, 0)]);
            for i in 0..3 {
                for j in i..3 {
                    let kij = area
                        * (am[(0, 0)] * g[i][0] * g[j][0]
                            + off * (g[i][0] * g[j][1] + g[i][1] * g[j][0])
                            + am[(1, 1)] * g[i][1] * g[j][1]);
                    let mij = if i == j { area / 6.0 } else { area / 12.0 };
                    k.add_triplet(tri[i], tri[j], kij);
                    mm.add_triplet(tri[i], tri[j], mij);
                    if i != j {
                        k.add_triplet(tri[j], tri[i], kij);
                        mm.add_triplet(tri[j], tri[i], mij);
                    }
                }
                lumped[tri[i]] += area / 3.0;
            }
        }
        let stiffness: CsMat<f64> = k.to_csr();
        let mass: CsMat<f64> = mm.to_csr();
        let mut index = vec![None; n];
        let mut interior = Vec::new();
        for i in 0..n {
            if !mesh.flags[i].is_boundary() {
                index[i] = Some(interior.len());
                interior.push(i);
            }
        }
        if interior.is_empty() {
            return Err(FemError::Invalid("mesh has no interior vertices".into()));
        }
        let ni = interior.len();
        let mut kt = TriMat::new((ni, ni));
        for (row, vec) in stiffness.outer_iterator().enumerate() {
            if let Some(r) = index[row] {
                for (col, &v) in vec.iter() {
                    if let Some(c) = index[col] {
                        kt.add_triplet(r, c, v);
                    }
                }
            }
        }
        let kii: CsMat<f64> = kt.to_csc();
        let factor = Ldl::new()
            .fill_in_reduction(sprs::FillInReduction::ReverseCuthillMcKee)
            .numeric(kii.view())
            .map_err(|_| FemError::Singular(f64::NAN))?;
        Ok(Self {
            mesh,
            lambda: field.lambda(),
            stiffness,
            mass,
            lumped,
            interior,
            index,
            kii,
            factor,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn lumped_mass(&self) -> &[f64] {
        &self.lumped
    }

    pub fn stiffness(&self) -> &CsMat<f64> {
        &self.stiffness
    }

    /// Solves with Dirichlet values taken from the boundary entries of `g`
    /// and load vector `load` (tested against hat functions).
    pub fn solve(&self, g: &[f64], load: &[f64]) -> Result<DiscreteField, FemError> {
        let n = self.mesh.n_vertices();
        if g.len() != n || load.len() != n {
            return Err(FemError::Invalid("vector length does not match the mesh".into()));
        }
        if g.iter().chain(load).any(|v| !v.is_finite()) {
            return Err(FemError::Invalid("non-finite data".into()));
        }
        let mut ub = vec![0.0; n];
        for i in self.mesh.boundary_vertices() {
            ub[i] = g[i];
        }
        let kub = matvec(&self.stiffness, &ub);
        let rhs: Vec<f64> = self.interior.iter().map(|&i| load[i] - kub[i]).collect();
        let ui: Vec<f64> = self.factor.solve(&rhs);
        let res = matvec(&self.kii, &ui);
        let rn = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        let en = res.iter().zip(&rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        if rn > 0.0 && en > 1e-10 * rn {
            return Err(FemError::Singular(en / rn));
        }
        let mut u = ub;
        for (k, &i) in self.interior.iter().enumerate() {
            u[i] = ui[k];
        }
        Ok(DiscreteField::new(self.mesh.clone(), u))
    }

    /// Weak solution with boundary data `psi` (boundary entries of a full
    /// nodal vector).
    pub fn solve_weak(&self, psi: &[f64]) -> Result<DiscreteField, FemError> {
        self.solve(psi, &vec![0.0; self.mesh.n_vertices()])
    }

    pub fn solve_weak_fn(&self, psi: impl Fn(&BoundaryPoint) -> f64) -> Result<DiscreteField, FemError> {
        let g: Vec<f64> = (0..self.mesh.n_vertices())
            .map(|i| if self.mesh.flags[i].is_boundary() { psi(&self.mesh.boundary_point(i)) } else { 0.0 })
            .collect();
        self.solve_weak(&g)
    }

    /// Consistent-mass load vector of nodal values `f`.
    pub fn load(&self, f: &[f64]) -> Vec<f64> {
        matvec(&self.mass, f)
    }

    /// G f: zero boundary values, source `f` given at the vertices.
    pub fn green_apply(&self, f: &[f64]) -> Result<DiscreteField, FemError> {
        let n = self.mesh.n_vertices();
        if f.len() != n {
            return Err(FemError::Invalid("vector length does not match the mesh".into()));
        }
        self.solve(&vec![0.0; n], &self.load(f))
    }

    /// Solution with a unit point load at the interior vertex nearest `y`.
    pub fn green_column(&self, y: &Point) -> Result<DiscreteField, FemError> {
        let v = self.pole_vertex(y)?;
        self.green_column_at_vertex(v)
    }

    pub fn pole_vertex(&self, y: &Point) -> Result<usize, FemError> {
        if self.mesh.locate(y).is_none() {
            return Err(FemError::OutsideMesh(y.x, y.y));
        }
        self.mesh.nearest_vertex(y, true).ok_or(FemError::OutsideMesh(y.x, y.y))
    }

    pub fn green_column_at_vertex(&self, v: usize) -> Result<DiscreteField, FemError> {
        let n = self.mesh.n_vertices();
        let mut load = vec![0.0; n];
        load[v] = 1.0;
        self.solve(&vec![0.0; n], &load)
    }

    /// E(u, v) = (a grad u, grad v).
    pub fn energy(&self, u: &[f64], v: &[f64]) -> f64 {
        let ku = matvec(&self.stiffness, u);
        ku.iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Largest |E(u, phi_i)| over interior hat functions.
    pub fn galerkin_defect(&self, u: &[f64]) -> f64 {
        let ku = matvec(&self.stiffness, u);
        self.interior.iter().fold(0.0, |m, &i| m.max(ku[i].abs()))
    }

    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior
    }

    pub fn is_interior(&self, v: usize) -> bool {
        self.index[v].is_some()
    }
}

fn matvec(m: &CsMat<f64>, x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; m.rows()];
    if m.is_csr() {
        for (r, row) in m.outer_iterator().enumerate() {
            out[r] = row.iter().map(|(c, v)| v * x[c]).sum();
        }
    } else {
        for (c, col) in m.outer_iterator().enumerate() {
            for (r, v) in col.iter() {
                out[r] += v * x[c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests;
