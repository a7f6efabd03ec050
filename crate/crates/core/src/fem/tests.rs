use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::coefficients::CoefficientSpec;
use crate::geometry::{Domain, ShapeSpec};

fn square() -> Domain {
    Domain::new(ShapeSpec::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] }).unwrap()
}

fn system(d: &Domain, h: f64) -> FemSystem {
    let m = Arc::new(triangulate(d, h).unwrap());
    FemSystem::new(m, &CoefficientField::identity(2)).unwrap()
}

fn p2(x: f64, y: f64) -> Point {
    Point::new(x, y, 0.0)
}

#[test]
fn linear_data_is_reproduced() {
    let s = system(&square(), 0.1);
    let u = s.solve_weak_fn(|b| b.position.x).unwrap();
    for (x, v) in s.mesh().vertices.iter().zip(&u.values) {
        assert!((x.x - v).abs() < 1e-12);
    }
    assert!(s.galerkin_defect(&u.values) < 1e-12);
}

#[test]
fn disk_cosine_data() {
    let s = system(&Domain::unit_disk(), 0.02);
    let u = s.solve_weak_fn(|b| b.position.y.atan2(b.position.x).cos()).unwrap();
    let v = u.eval(&p2(0.5, 0.0)).unwrap();
    assert!((v - 0.5).abs() <= 5e-3, "{v}");
}

#[test]
fn green_apply_of_one_matches_exit_time() {
    let s = system(&Domain::unit_disk(), 0.02);
    let n = s.mesh().n_vertices();
    let d = s.green_apply(&vec![1.0; n]).unwrap();
    assert!((d.eval(&p2(0.0, 0.0)).unwrap() - 0.25).abs() <= 5e-3);
    let z = s.green_apply(&vec![0.0; n]).unwrap();
    assert!(z.values.iter().all(|v| *v == 0.0));
    let f1: Vec<f64> = s.mesh().vertices.iter().map(|x| x.x * x.x).collect();
    let f2: Vec<f64> = s.mesh().vertices.iter().map(|x| (3.0 * x.y).sin()).collect();
    let sum: Vec<f64> = f1.iter().zip(&f2).map(|(a, b)| a + b).collect();
    let (g1, g2, g12) = (s.green_apply(&f1).unwrap(), s.green_apply(&f2).unwrap(), s.green_apply(&sum).unwrap());
    for i in 0..n {
        assert!((g12.values[i] - g1.values[i] - g2.values[i]).abs() < 1e-12);
    }
    assert!(d.trace_values().iter().all(|(_, _, v)| *v == 0.0));
}

#[test]
fn green_column_disk_oracle() {
    let s = system(&Domain::unit_disk(), 0.02);
    let g = s.green_column(&p2(0.0, 0.0)).unwrap();
    let oracle = (2.0f64).ln() / (2.0 * PI);
    for k in 0..8 {
        let t = 2.0 * PI * k as f64 / 8.0;
        let v = g.eval(&p2(0.5 * t.cos(), 0.5 * t.sin())).unwrap();
        assert!((v - oracle).abs() <= 0.1 * oracle, "{v} vs {oracle}");
    }
    assert!(g.values.iter().all(|v| *v >= -1e-12));
}

#[test]
fn green_column_symmetry() {
    let s = system(&Domain::unit_disk(), 0.1);
    let v1 = s.pole_vertex(&p2(0.3, 0.2)).unwrap();
    let v2 = s.pole_vertex(&p2(-0.4, 0.1)).unwrap();
    let g1 = s.green_column_at_vertex(v1).unwrap();
    let g2 = s.green_column_at_vertex(v2).unwrap();
    assert!((g1.values[v2] - g2.values[v1]).abs() <= 1e-12 * g1.values[v2].abs().max(1.0));
}

#[test]
fn checkerboard_maximum_principle() {
    let m = Arc::new(triangulate(&square(), 0.05).unwrap());
    let f = CoefficientField::new(
        CoefficientSpec::Checkerboard {
            matrices: vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![4.0, 0.0], vec![0.0, 4.0]]],
            cell: 0.25,
            lambda: 1.0,
            upper: 4.0,
        },
        2,
    )
    .unwrap();
    let s = FemSystem::new(m, &f).unwrap();
    let u = s.solve_weak_fn(|b| b.position.x).unwrap();
    assert!(u.values.iter().all(|v| (-1e-12..=1.0 + 1e-12).contains(v)));
}

#[test]
fn breve_norm_examples() {
    let s = system(&square(), 0.1);
    let mesh = s.mesh().clone();
    let one = DiscreteField::from_fn(mesh.clone(), |_, _| 1.0);
    let zero = DiscreteField::from_fn(mesh.clone(), |_, _| 0.0);
    assert_eq!(breve_norm(&zero, &one).unwrap(), 0.0);
    let c = DiscreteField::from_fn(mesh.clone(), |_, _| 2.5);
    assert!((breve_norm(&c, &one).unwrap() - 2.5).abs() < 1e-12);
    let x = DiscreteField::from_fn(mesh.clone(), |p, _| p.x);
    let want = (1.0f64 / 3.0).sqrt() + 1.0;
    assert!((breve_norm(&x, &one).unwrap() - want).abs() < 1e-3);
    let other = system(&square(), 0.2);
    let foreign = DiscreteField::from_fn(other.mesh().clone(), |_, _| 1.0);
    assert_eq!(breve_norm(&x, &foreign), Err(FemError::MeshMismatch));
}

#[test]
fn slit_trace_keeps_both_sides() {
    let d = Domain::new(ShapeSpec::SlitBall { center: None, radius: 1.0, slit: [[-0.5, 0.0], [0.5, 0.0]] }).unwrap();
    let s = system(&d, 0.1);
    let u = s
        .solve_weak_fn(|b| match b.side {
            Some(Side::Above) => 1.0,
            Some(Side::Below) => -1.0,
            _ => 0.0,
        })
        .unwrap();
    let tr = u.trace_values();
    assert!(tr.iter().any(|(_, b, v)| b.side == Some(Side::Above) && *v == 1.0));
    assert!(tr.iter().any(|(_, b, v)| b.side == Some(Side::Below) && *v == -1.0));
    assert!(u.eval(&p2(0.0, 0.05)).unwrap() > 0.5);
    assert!(u.eval(&p2(0.0, -0.05)).unwrap() < -0.5);
}

#[test]
fn energy_minimality_and_orthogonality() {
    let s = system(&Domain::unit_disk(), 0.1);
    let u = s.solve_weak_fn(|b| (2.0 * b.position.x).sin() + b.position.y).unwrap();
    let eu = s.energy(&u.values, &u.values);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = u.values.len();
    for _ in 0..100 {
        let mut w = u.values.clone();
        for i in 0..n {
            if s.is_interior(i) {
                w[i] += rng.random_range(-0.1..0.1);
            }
        }
        assert!(s.energy(&w, &w) >= eu);
        let v: Vec<f64> = (0..n).map(|i| if s.is_interior(i) { rng.random_range(-1.0..1.0) } else { 0.0 }).collect();
        let nu = eu.sqrt();
        let nv = s.energy(&v, &v).sqrt();
        assert!(s.energy(&u.values, &v).abs() <= 1e-9 * nu * nv);
    }
}

#[test]
fn csv_and_off_exports() {
    let s = system(&square(), 0.5);
    let u = s.solve_weak_fn(|b| b.position.x).unwrap();
    let csv = u.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "vertex_id,x,y,value,boundary_flag,side");
    assert_eq!(lines.len(), s.mesh().n_vertices() + 1);
    for l in &lines[1..] {
        assert_eq!(l.split(',').count(), 6);
    }
    let off = s.mesh().to_off();
    assert!(off.starts_with("OFF\n"));
}
