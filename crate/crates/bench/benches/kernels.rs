use std::hint::black_box;
use std::sync::Arc;

use criterion::{criterion_group, criterion_main, Criterion};
use dirlab_core::diffusion::sample_exit_batch;
use dirlab_core::fem::triangulate;
use dirlab_core::semilinear::radial::{solve_radial, RadialProblem};
use dirlab_core::semilinear::{solve_semilinear, MeasureData, SemilinearConfig};
use dirlab_core::{BoundaryPoint, CoefficientField, CoefficientSpec, Domain, Expression, FemSystem, Point, ShapeSpec, SimConfig, Trackers};

fn slit() -> Domain {
    Domain::new(ShapeSpec::SlitBall { center: None, radius: 1.0, slit: [[-0.5, 0.0], [0.5, 0.0]] }).unwrap()
}

fn walks(c: &mut Criterion) {
    let disk = Domain::unit_disk();
    let id = CoefficientField::identity(2);
    let x0 = Point::new(0.5, 0.0, 0.0);
    let mut g = c.benchmark_group("walks");
    g.sample_size(20);
    g.bench_function("wos_disk_10k", |b| {
        b.iter(|| sample_exit_batch(&disk, &id, &x0, &SimConfig::default(), 10_000, Trackers::default(), 0).unwrap())
    });
    let s = slit();
    let x1 = Point::new(0.0, 0.2, 0.0);
    g.bench_function("wos_slit_10k", |b| {
        b.iter(|| sample_exit_batch(&s, &id, &x1, &SimConfig::default(), 10_000, Trackers::default(), 0).unwrap())
    });
    let aniso = CoefficientField::new(
        CoefficientSpec::Constant { a: vec![vec![1.5, 0.3], vec![0.3, 1.0]] },
        2,
    )
    .unwrap();
    g.bench_function("em_disk_1k_dt1e-4", |b| {
        b.iter(|| sample_exit_batch(&disk, &aniso, &x0, &SimConfig::em(1e-4), 1_000, Trackers::default(), 0).unwrap())
    });
    g.finish();
}

fn fem(c: &mut Criterion) {
    let disk = Domain::unit_disk();
    let s = slit();
    let id = CoefficientField::identity(2);
    let mut g = c.benchmark_group("fem");
    g.sample_size(10);
    g.bench_function("mesh_disk_h0.02", |b| b.iter(|| triangulate(black_box(&disk), 0.02).unwrap()));
    g.bench_function("mesh_slit_h0.02", |b| b.iter(|| triangulate(black_box(&s), 0.02).unwrap()));
    let mesh = Arc::new(triangulate(&disk, 0.02).unwrap());
    g.bench_function("assemble_factor_disk_h0.02", |b| b.iter(|| FemSystem::new(mesh.clone(), &id).unwrap()));
    let sys = FemSystem::new(mesh.clone(), &id).unwrap();
    let psi = |p: &BoundaryPoint| p.position.x * p.position.y;
    g.bench_function("solve_weak_disk_h0.02", |b| b.iter(|| sys.solve_weak_fn(psi).unwrap()));
    let coarse = FemSystem::new(Arc::new(triangulate(&disk, 0.05).unwrap()), &id).unwrap();
    let f = Expression::parse("-u*abs(u)").unwrap();
    let mu = MeasureData::dirac(Point::zeros(), 5.0);
    let zero = |_: &BoundaryPoint| 0.0;
    g.bench_function("semilinear_dirac_h0.05", |b| {
        b.iter(|| solve_semilinear(&coarse, &f, &mu, &zero, &SemilinearConfig::default()).unwrap())
    });
    g.finish();
}

fn radial(c: &mut Criterion) {
    let mut g = c.benchmark_group("radial");
    g.sample_size(10);
    let problem = RadialProblem { weight: 20.0, ..RadialProblem::default() };
    g.bench_function("radial_p2_m1024", |b| b.iter(|| solve_radial(black_box(&problem), 1024.0, None)));
    g.finish();
}

criterion_group!(benches, walks, fem, radial);
criterion_main!(benches);
