//! Symmetric uniformly elliptic coefficient fields a(x).
//!
//! Matrices are stored as `Matrix3`; two-dimensional fields live in the
//! upper-left 2x2 block with zeros elsewhere.

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{Bindings, ExprError, ExprParser, Expression, Var};
use crate::geometry::{Domain, Point};

pub type Mat = Matrix3<f64>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CoeffError {
    #[error("invalid coefficient field: {0}")]
    Invalid(String),
    #[error("expression `{source_text}`: {error}")]
    Expr { source_text: String, error: ExprError },
    #[error("a(x) is not symmetric positive definite at ({0}, {1}, {2})")]
    NotSpd(f64, f64, f64),
    #[error("checkerboard coefficients have no drift; they are supported by the finite element path only")]
    UnsupportedForSde,
}

/// Serialized coefficient description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    #[default]
    Identity,
    Constant {
        a: Vec<Vec<f64>>,
    },
    Smooth {
        a: Vec<Vec<String>>,
        /// `da[k][i][j]` is the derivative of `a_ij` in coordinate `k`;
        /// missing trailing matrices are zero.
        #[serde(default)]
        da: Vec<Vec<Vec<String>>>,
        lambda: f64,
        upper: f64,
    },
    Checkerboard {
        matrices: Vec<Vec<Vec<f64>>>,
        cell: f64,
        lambda: f64,
        upper: f64,
    },
}

#[derive(Debug, Clone)]
enum Kind {
    Identity,
    Constant { a: Mat, sqrt: Mat },
    Smooth { a: Vec<Vec<Expression>>, da: Vec<Vec<Vec<Expression>>> },
    Checkerboard { mats: Vec<Mat>, cell: f64 },
}

#[derive(Debug, Clone)]
pub struct CoefficientField {
    spec: CoefficientSpec,
    kind: Kind,
    dim: usize,
    lambda: f64,
    upper: f64,
}

fn mat_from_rows(rows: &[Vec<f64>], dim: usize) -> Result<Mat, CoeffError> {
    if rows.len() != dim || rows.iter().any(|r| r.len() != dim) {
        return Err(CoeffError::Invalid(format!("matrix must be {dim}x{dim}")));
    }
    let mut m = Mat::zeros();
    for i in 0..dim {
        for j in 0..dim {
            m[(i, j)] = rows[i][j];
        }
    }
    Ok(m)
}

/// Eigenvalues of a symmetric matrix in ascending order (closed form).
pub fn sym_eigenvalues(a: &Mat, dim: usize) -> [f64; 3] {
    if dim == 2 {
        let tr = a[(0, 0)] + a[(1, 1)];
        let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        let disc = ((a[(0, 0)] - a[(1, 1)]).powi(2) / 4.0 + a[(0, 1)] * a[(1, 0)]).max(0.0).sqrt();
        let hi = tr / 2.0 + disc;
        // Product form keeps the small eigenvalue accurate.
        let lo = if hi != 0.0 { det / hi } else { tr / 2.0 - disc };
        return [lo, hi, 0.0];
    }
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    if p1 == 0.0 {
        let mut e = [a[(0, 0)], a[(1, 1)], a[(2, 2)]];
        e.sort_by(|x, y| x.total_cmp(y));
        return e;
    }
    let q = a.trace() / 3.0;
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    let b = (a - Mat::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    let mut e = [e1, e2, e3];
    e.sort_by(|x, y| x.total_cmp(y));
    e
}

/// Symmetric positive definite square root, or `None` if `a` is not SPD.
pub fn spd_sqrt(a: &Mat, dim: usize) -> Option<Mat> {
    let ev = sym_eigenvalues(a, dim);
    if ev[..dim].iter().any(|&l| !(l > 0.0)) {
        return None;
    }
    if dim == 2 {
        let s = (a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)]).sqrt();
        let t = (a[(0, 0)] + a[(1, 1)] + 2.0 * s).sqrt();
        let mut r = Mat::zeros();
        r[(0, 0)] = (a[(0, 0)] + s) / t;
        r[(1, 1)] = (a[(1, 1)] + s) / t;
        r[(0, 1)] = a[(0, 1)] / t;
        r[(1, 0)] = a[(1, 0)] / t;
        return Some(r);
    }
    let mu = [ev[0].sqrt(), ev[1].sqrt(), ev[2].sqrt()];
    let i1 = mu[0] + mu[1] + mu[2];
    let i2 = mu[0] * mu[1] + mu[0] * mu[2] + mu[1] * mu[2];
    let i3 = mu[0] * mu[1] * mu[2];
    let num = -(a * a) + a * (i1 * i1 - i2) + Mat::identity() * (i1 * i3);
    let mut r = num / (i1 * i2 - i3);
    // Restore exact symmetry.
    r = (r + r.transpose()) * 0.5;
    Some(r)
}

impl CoefficientField {
    pub fn identity(dim: usize) -> Self {
        Self::new(CoefficientSpec::Identity, dim).expect("identity")
    }

    pub fn new(spec: CoefficientSpec, dim: usize) -> Result<Self, CoeffError> {
        if dim != 2 && dim != 3 {
            return Err(CoeffError::Invalid(format!("dimension {dim}")));
        }
        let parser = ExprParser::new().variables(&[Var::X, Var::Y, Var::Z]);
        let parse = |s: &String| {
            parser.parse(s).map_err(|error| CoeffError::Expr {
                source_text: s.clone(),
                error,
            })
        };
        let (kind, lambda, upper) = match &spec {
            CoefficientSpec::Identity => (Kind::Identity, 1.0, 1.0),
            CoefficientSpec::Constant { a } => {
                let m = mat_from_rows(a, dim)?;
                if (m - m.transpose()).abs().max() > 1e-14 * m.abs().max() {
                    return Err(CoeffError::Invalid("constant matrix is not symmetric".into()));
                }
                let ev = sym_eigenvalues(&m, dim);
                let sqrt = spd_sqrt(&m, dim).ok_or(CoeffError::NotSpd(0.0, 0.0, 0.0))?;
                (Kind::Constant { a: m, sqrt }, ev[0], ev[dim - 1])
            }
            CoefficientSpec::Smooth { a, da, lambda, upper } => {
                if a.len() != dim || a.iter().any(|r| r.len() != dim) {
                    return Err(CoeffError::Invalid(format!("a must be {dim}x{dim}")));
                }
                if da.len() > dim {
                    return Err(CoeffError::Invalid(format!("da has more than {dim} matrices")));
                }
                let a = a
                    .iter()
                    .map(|row| row.iter().map(parse).collect::<Result<Vec<_>, _>>())
                    .collect::<Result<Vec<_>, _>>()?;
                let mut d = Vec::new();
                for m in da {
                    if m.len() != dim || m.iter().any(|r| r.len() != dim) {
                        return Err(CoeffError::Invalid(format!("each da matrix must be {dim}x{dim}")));
                    }
                    d.push(
                        m.iter()
                            .map(|row| row.iter().map(parse).collect::<Result<Vec<_>, _>>())
                            .collect::<Result<Vec<_>, _>>()?,
                    );
                }
                (Kind::Smooth { a, da: d }, *lambda, *upper)
            }
            CoefficientSpec::Checkerboard { matrices, cell, lambda, upper } => {
                if matrices.is_empty() || !(*cell > 0.0) {
                    return Err(CoeffError::Invalid("checkerboard needs matrices and cell > 0".into()));
                }
                let mats = matrices
                    .iter()
                    .map(|m| mat_from_rows(m, dim))
                    .collect::<Result<Vec<_>, _>>()?;
                (Kind::Checkerboard { mats, cell: *cell }, *lambda, *upper)
            }
        };
        if !(lambda > 0.0 && upper >= lambda && upper.is_finite()) {
            return Err(CoeffError::Invalid(format!(
                "need 0 < lambda <= upper, got lambda={lambda}, upper={upper}"
            )));
        }
        Ok(Self { spec, kind, dim, lambda, upper })
    }

    pub fn spec(&self) -> &CoefficientSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn upper(&self) -> f64 {
        self.upper
    }

    pub fn is_identity(&self) -> bool {
        matches!(self.kind, Kind::Identity)
    }

    pub fn supports_sde(&self) -> bool {
        !matches!(self.kind, Kind::Checkerboard { .. })
    }

    fn block_identity(&self) -> Mat {
        let mut m = Mat::identity();
        if self.dim == 2 {
            m[(2, 2)] = 0.0;
        }
        m
    }

    pub fn a(&self, x: &Point) -> Mat {
        match &self.kind {
            Kind::Identity => self.block_identity(),
            Kind::Constant { a, .. } => *a,
            Kind::Smooth { a, .. } => {
                let b = Bindings::at_point(x);
                let mut m = Mat::zeros();
                for i in 0..self.dim {
                    for j in 0..self.dim {
                        m[(i, j)] = a[i][j].eval(&b).unwrap_or(f64::NAN);
                    }
                }
                m
            }
            Kind::Checkerboard { mats, cell } => {
                let idx: i64 = (0..self.dim).map(|k| (x[k] / cell).floor() as i64).sum();
                mats[idx.rem_euclid(mats.len() as i64) as usize]
            }
        }
    }

    pub fn sigma_bar(&self, x: &Point) -> Result<Mat, CoeffError> {
        match &self.kind {
            Kind::Identity => Ok(self.block_identity()),
            Kind::Constant { sqrt, .. } => Ok(*sqrt),
            _ => spd_sqrt(&self.a(x), self.dim).ok_or(CoeffError::NotSpd(x.x, x.y, x.z)),
        }
    }

    /// b_j = sum_i d_i a_ij.
    pub fn drift(&self, x: &Point) -> Result<Point, CoeffError> {
        match &self.kind {
            Kind::Identity | Kind::Constant { .. } => Ok(Point::zeros()),
            Kind::Smooth { da, .. } => {
                let b = Bindings::at_point(x);
                let mut out = Point::zeros();
                for (i, m) in da.iter().enumerate() {
                    for j in 0..self.dim {
                        out[j] += m[i][j].eval(&b).unwrap_or(f64::NAN);
                    }
                }
                Ok(out)
            }
            Kind::Checkerboard { .. } => Err(CoeffError::UnsupportedForSde),
        }
    }

    /// Checks symmetry and the ellipticity bounds at `n` random points of
    /// the domain. Returns the observed extreme eigenvalues.
    pub fn validate_on<R: Rng + ?Sized>(
        &self,
        domain: &Domain,
        n: usize,
        rng: &mut R,
    ) -> Result<(f64, f64), CoeffError> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for _ in 0..n {
            let x = domain.random_interior(rng);
            let a = self.a(&x);
            let scale = a.abs().max().max(1.0);
            if !a.iter().all(|v| v.is_finite()) {
                return Err(CoeffError::NotSpd(x.x, x.y, x.z));
            }
            if (a - a.transpose()).abs().max() > 1e-12 * scale {
                return Err(CoeffError::Invalid(format!(
                    "a(x) is not symmetric at ({}, {}, {})",
                    x.x, x.y, x.z
                )));
            }
            let ev = sym_eigenvalues(&a, self.dim);
            lo = lo.min(ev[0]);
            hi = hi.max(ev[self.dim - 1]);
            let slack = 1e-12 * scale;
            if ev[0] < self.lambda - slack || ev[self.dim - 1] > self.upper + slack {
                return Err(CoeffError::Invalid(format!(
                    "eigenvalues [{}, {}] at ({}, {}, {}) violate lambda={} upper={}",
                    ev[0],
                    ev[self.dim - 1],
                    x.x,
                    x.y,
                    x.z,
                    self.lambda,
                    self.upper
                )));
            }
        }
        Ok((lo, hi))
    }
}

impl Serialize for CoefficientField {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.spec.serialize(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn p2(x: f64, y: f64) -> Point {
        Point::new(x, y, 0.0)
    }

    fn oracle_sqrt(a: &Mat, dim: usize) -> Mat {
        // Independent route: eigendecomposition from nalgebra.
        let sub = a.view((0, 0), (dim, dim)).into_owned();
        let eig = SymmetricEigen::new(sub);
        let mut d = eig.eigenvalues.clone();
        d.iter_mut().for_each(|v| *v = v.sqrt());
        let r = &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose();
        let mut out = Mat::zeros();
        for i in 0..dim {
            for j in 0..dim {
                out[(i, j)] = r[(i, j)];
            }
        }
        out
    }

    fn mat2(a: f64, b: f64, c: f64) -> Mat {
        let mut m = Mat::zeros();
        m[(0, 0)] = a;
        m[(0, 1)] = b;
        m[(1, 0)] = b;
        m[(1, 1)] = c;
        m
    }

    #[test]
    fn sqrt_examples() {
        let id = CoefficientField::identity(2);
        assert_eq!(id.sigma_bar(&p2(0.1, 0.2)).unwrap(), id.a(&p2(0.0, 0.0)));
        let s = spd_sqrt(&mat2(4.0, 0.0, 1.0), 2).unwrap();
        assert_eq!((s[(0, 0)], s[(1, 1)], s[(0, 1)]), (2.0, 1.0, 0.0));
        let s = spd_sqrt(&mat2(2.0, 1.0, 2.0), 2).unwrap();
        // Eigen-oracle: (sqrt3 + 1)/2 and (sqrt3 - 1)/2.
        assert!((s[(0, 0)] - 1.3660254037844386).abs() < 1e-15);
        assert!((s[(0, 1)] - 0.3660254037844386).abs() < 1e-15);
        assert!(spd_sqrt(&mat2(1.0, 2.0, 1.0), 2).is_none());
    }

    #[test]
    fn drift_examples() {
        let id = CoefficientField::identity(2);
        assert_eq!(id.drift(&p2(0.3, 0.3)).unwrap(), Point::zeros());
        let f = CoefficientField::new(
            CoefficientSpec::Smooth {
                a: vec![vec!["1+x^2".into(), "0".into()], vec!["0".into(), "1".into()]],
                da: vec![vec![vec!["2*x".into(), "0".into()], vec!["0".into(), "0".into()]]],
                lambda: 1.0,
                upper: 2.0,
            },
            2,
        )
        .unwrap();
        assert_eq!(f.drift(&p2(0.5, 0.1)).unwrap(), Point::new(1.0, 0.0, 0.0));
        let g = CoefficientField::new(
            CoefficientSpec::Smooth {
                a: vec![vec!["1+y^2".into(), "0".into()], vec!["0".into(), "1+x^2".into()]],
                da: vec![
                    vec![vec!["0".into(), "0".into()], vec!["0".into(), "2*x".into()]],
                    vec![vec!["2*y".into(), "0".into()], vec!["0".into(), "0".into()]],
                ],
                lambda: 1.0,
                upper: 2.0,
            },
            2,
        )
        .unwrap();
        assert_eq!(g.drift(&p2(0.5, 0.7)).unwrap(), Point::zeros());
        let cb = CoefficientField::new(
            CoefficientSpec::Checkerboard {
                matrices: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![4.0, 0.0], vec![0.0, 4.0]]],
                cell: 0.5,
                lambda: 1.0,
                upper: 4.0,
            },
            2,
        )
        .unwrap();
        assert_eq!(cb.drift(&p2(0.1, 0.1)), Err(CoeffError::UnsupportedForSde));
        assert_eq!(cb.a(&p2(0.6, 0.1))[(0, 0)], 4.0);
        assert_eq!(cb.a(&p2(0.6, 0.6))[(0, 0)], 1.0);
    }

    #[test]
    fn validation_detects_bad_bounds() {
        let f = CoefficientField::new(
            CoefficientSpec::Smooth {
                a: vec![vec!["1+x^2".into(), "0".into()], vec!["0".into(), "1".into()]],
                da: vec![],
                lambda: 1.0,
                upper: 1.5,
            },
            2,
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = Domain::unit_disk();
        assert!(f.validate_on(&d, 1000, &mut rng).is_err());
    }

    proptest! {
        #[test]
        fn sqrt_squares_back_2d(l1 in 1e-3f64..1e3, l2 in 1e-3f64..1e3, th in 0.0f64..3.2) {
            let (c, s) = (th.cos(), th.sin());
            let a = mat2(l1 * c * c + l2 * s * s, (l1 - l2) * c * s, l1 * s * s + l2 * c * c);
            let r = spd_sqrt(&a, 2).unwrap();
            prop_assert!((r - r.transpose()).norm() == 0.0);
            prop_assert!((r * r - a).norm() <= 1e-10 * a.norm());
            prop_assert!((r - oracle_sqrt(&a, 2)).norm() <= 1e-10 * r.norm());
        }

        #[test]
        fn sqrt_squares_back_3d(
            l in prop::array::uniform3(1e-2f64..1e2),
            q in prop::array::uniform4(-1.0f64..1.0),
        ) {
            let quat = nalgebra::Quaternion::new(q[0] + 1.5, q[1], q[2], q[3]);
            let rot = nalgebra::UnitQuaternion::from_quaternion(quat).to_rotation_matrix();
            let a = rot.matrix() * Mat::from_diagonal(&nalgebra::Vector3::new(l[0], l[1], l[2])) * rot.matrix().transpose();
            let a = (a + a.transpose()) * 0.5;
            let r = spd_sqrt(&a, 3).unwrap();
            prop_assert!((r * r - a).norm() <= 1e-10 * a.norm());
            let ev = sym_eigenvalues(&a, 3);
            let mut want = l;
            want.sort_by(|x, y| x.total_cmp(y));
            for k in 0..3 {
                prop_assert!((ev[k] - want[k]).abs() <= 1e-9 * want[2]);
            }
        }
    }
}
