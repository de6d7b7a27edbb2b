use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};

use slabgas_core::density::{Equilibrium, SlabProfile};
use slabgas_core::duhamel::{estimate_term, McConfig, SeriesTruncation, VelocityProposal};
use slabgas_core::kernels::{collision_operator, CollisionQuadrature, Tensorized};
use slabgas_core::pseudo::{build_backward, CollisionTree, CreationParams, Mode};
use slabgas_core::randomness::{sample_initial_configuration, PlacementOptions, ReflectionRecord};
use slabgas_core::sim::{simulate, SimConfig};
use slabgas_core::solver::{transport_apply, TransportMode};
use slabgas_core::{Particle, Position, RngSeed, Vec3};

fn root(x: [f64; 3], v: [f64; 3]) -> Particle {
    Particle {
        x: Position::new(x[0], x[1], x[2]).unwrap(),
        v: Vec3::new(v[0], v[1], v[2]),
    }
}

fn event_engine(c: &mut Criterion) {
    let f0 = Equilibrium { beta: 1.0 };
    let n = 256;
    let eps = (n as f64).powf(-0.5);
    let state = sample_initial_configuration(RngSeed::new(1, 0), n, eps, &f0, PlacementOptions::default()).unwrap();
    c.bench_function("simulate N=256 to t=0.05", |b| {
        b.iter(|| simulate(black_box(state.clone()), 0.05, SimConfig::default(), &[], |_| {}).unwrap())
    });
}

fn pseudotrajectory(c: &mut Criterion) {
    let z = vec![root([0.4, 0.5, 0.5], [0.7, -0.3, 0.2])];
    let tree = CollisionTree::new(1, vec![1, 2], vec![1, -1]).unwrap();
    let params = CreationParams {
        times: vec![0.6, 0.3],
        nu: vec![Vec3::new(0.0, 1.0, 0.0), Vec3::new(0.6, 0.0, 0.8)],
        vbar: vec![Vec3::new(-0.5, 0.4, 0.1), Vec3::new(0.2, 0.9, -0.6)],
    };
    let seed = RngSeed::new(2, 0);
    let recs: Vec<ReflectionRecord> = (0..3).map(|i| ReflectionRecord::new(seed.record_key(i))).collect();
    c.bench_function("build_backward r=2 epsilon", |b| {
        b.iter(|| build_backward(Mode::Epsilon, 1e-2, 1.0, black_box(&z), &tree, &params, &recs))
    });
}

fn collision_and_transport(c: &mut Criterion) {
    let f = SlabProfile { beta: 1.0, amplitude: 0.5 };
    let x = Position::new(0.3, 0.5, 0.5).unwrap();
    let v = Vec3::new(0.4, -0.2, 0.7);
    let q = CollisionQuadrature {
        e_cut: 30.0,
        n_samples: 4096,
        seed: 3,
        ..Default::default()
    };
    c.bench_function("collision_operator 4096 samples", |b| {
        b.iter(|| collision_operator(&f, &f, black_box(&x), &v, &q).unwrap())
    });
    let mode = TransportMode::Series {
        n_gauss: 8,
        n_azimuth: 16,
    };
    c.bench_function("transport_apply series t=0.2", |b| {
        b.iter(|| transport_apply(&f, 0.2, black_box(&x), &v, mode))
    });
}

fn duhamel_term(c: &mut Criterion) {
    let f = Equilibrium { beta: 1.0 };
    let fam = Tensorized {
        f: &f,
        s_max: 3,
        factor: 1.0,
    };
    let trunc = SeriesTruncation::new(2, 25.0, 1.0).unwrap();
    let z = [root([0.5, 0.5, 0.5], [0.3, -0.2, 0.1])];
    let cfg = McConfig {
        mode: Mode::Zero,
        epsilon: 0.0,
        n_samples: 2000,
        seed: RngSeed::new(4, 0),
        proposal: VelocityProposal::UniformBall,
    };
    c.bench_function("estimate_term r=2 2000 samples", |b| {
        b.iter(|| estimate_term(&cfg, 2, 0.2, black_box(&z), &fam, &trunc).unwrap())
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = event_engine, pseudotrajectory, collision_and_transport, duhamel_term
}
criterion_main!(benches);
