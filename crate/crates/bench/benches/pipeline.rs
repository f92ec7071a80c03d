//! Benchmarks for the main pipeline stages: simulation, matrix-inequality
//! assembly, and geodesic energy minimization on the bundled oscillator.

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::{DMatrix, DVector};

use eqfree_core::*;

fn duffing_rk4() -> DtSystem {
    let vars = VarSpace::new(&["x1", "x2"], &["w"], 1).unwrap();
    let f1 = parse("x2", &vars).unwrap();
    let f2 = parse("-8*x1 - 10*x1^3 - 4*x2 + w", &vars).unwrap();
    let h = parse("x1", &vars).unwrap();
    let ct = CtSystem::new(vars, vec![f1, f2], vec![h]).unwrap();
    rk4_discretize(&ct, 0.01)
}

fn bench_simulate(c: &mut Criterion) {
    let sys = duffing_rk4();
    let x0 = DVector::from_column_slice(&[0.1, -0.2]);
    let w: Vec<DVector<f64>> = (0..1000)
        .map(|t| DVector::from_element(1, (0.01 * t as f64).sin()))
        .collect();
    c.bench_function("simulate_1000_steps", |b| {
        b.iter(|| simulate(&sys, &x0, &w, 1000).unwrap())
    });
}

fn bench_assembly(c: &mut Criterion) {
    let sys = duffing_rk4();
    let region = BoxRegion::new(vec![-1.0, -1.0, -1.0], vec![1.0, 1.0, 1.0]).unwrap();
    let dgrid = Grid::uniform(region.clone(), 21);
    let dset = estimate_dset(&sys, &dgrid, 1.05).unwrap();
    let emb = build_identity_embedding(&sys, &region, &dset).unwrap();
    let basis =
        StorageBasis::parse(&["p1".into(), "p2".into(), "p3".into()], &["p1^2".into()]).unwrap();
    let p_grid = Grid::uniform(emb.map.p_box.clone(), 5);
    c.bench_function("assemble_l2_5cube", |b| {
        b.iter(|| assemble_incremental_l2(&emb, &basis, &p_grid, 3, 1e-6).unwrap())
    });
}

fn bench_geodesic(c: &mut Criterion) {
    let basis =
        StorageBasis::parse(&["p1".into(), "p2".into(), "p3".into()], &["p1^2".into()]).unwrap();
    let map = SchedulingMap {
        indices: vec![0, 1, 2],
        state_mapped: vec![true, true, false],
        p_box: BoxRegion::new(vec![-1.0; 3], vec![1.0; 3]).unwrap(),
        rate_box: BoxRegion::new(vec![-0.1; 3], vec![0.1; 3]).unwrap(),
    };
    let coeffs = vec![
        DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
        DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.2]),
    ];
    let metric = StorageMetric::new(coeffs, basis, &map, StorageForm::Direct, 1.0);
    let a = DVector::from_column_slice(&[-0.8, 0.6]);
    let b2 = DVector::from_column_slice(&[0.7, -0.5]);
    c.bench_function("geodesic_16_segments", |b| {
        b.iter(|| geodesic(&metric, &a, &b2, 16).unwrap())
    });
}

criterion_group!(benches, bench_simulate, bench_assembly, bench_geodesic);
criterion_main!(benches);
