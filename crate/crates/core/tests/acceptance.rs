//! Acceptance criteria, one test per criterion, run one at a time. Each test
//! prints a single `PASS` or `FAIL` line with its measurements.

use std::io::Write;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use slabgas_core::density::{Equilibrium, SlabProfile};
use slabgas_core::duhamel::{continuity_bound_check, ContinuityConfig};
use slabgas_core::geometry::Wall;
use slabgas_core::harness::{
    bad_set_decay_study, convergence_sweep, fitted_time_horizon, series_solver_check, write_json, BadSetConfig,
    ExperimentConfig, InitialSpec, Observable, SeriesConfig, SolverConfig,
};
use slabgas_core::kernels::{
    carleman_pushforward_check, singular_integral, strip_integral, uniform_ball, uniform_sphere, CarlemanPair,
    StripTarget,
};
use slabgas_core::pseudo::DiscrepancyClass;
use slabgas_core::randomness::{sample_initial_configuration, PlacementOptions, RecordKey, ReflectionRecord, RngSeed};
use slabgas_core::sim::{double_shock_flags, simulate, EventKind, SimConfig, SimError, Simulator};
use slabgas_core::solver::{picard_solve, GridSpec};
use slabgas_core::stats::{ks_one_sample, normal_cdf, Accumulator};
use slabgas_core::Vec3;

static SERIAL: Mutex<()> = Mutex::new(());

fn report(id: u32, name: &str, pass: bool, elapsed: Duration, limit: Duration, detail: String) {
    let ok = pass && elapsed <= limit;
    let _ = writeln!(
        std::io::stderr(),
        "criterion {id:>2} [{name}]: {} ({:.1}s of {:.0}s) {detail}",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        limit.as_secs_f64()
    );
    assert!(ok, "criterion {id} failed: {detail}");
}

fn lock() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

#[test]
fn criterion_01_conservation() {
    let _g = lock();
    let start = Instant::now();
    let n = 50;
    let eps = (n as f64).powf(-0.5);
    let st = sample_initial_configuration(RngSeed::new(101, 0), n, eps, &Equilibrium { beta: 1.0 }, PlacementOptions::default())
        .unwrap();
    let e0 = st.kinetic_energy();
    let mut sim = Simulator::new(st, SimConfig::default()).unwrap();
    let (mut worst_drift, mut worst_speed, mut worst_overlap) = (0.0f64, 0.0f64, 0.0f64);
    let mut events = 0;
    while events < 10_000 {
        let before: Vec<f64> = sim.state().particles.iter().map(|p| p.v.norm()).collect();
        let Some(ev) = sim.step_until(f64::INFINITY).unwrap() else { break };
        events += 1;
        let st = sim.state();
        if let EventKind::WallReflection(i) = ev.kind {
            worst_speed = worst_speed.max((st.particles[i].v.norm() - before[i]).abs());
        }
        worst_drift = worst_drift.max((st.kinetic_energy() / e0 - 1.0).abs());
        if let Some((d, _, _)) = st.min_pair_distance() {
            worst_overlap = worst_overlap.max(eps - d);
        }
    }
    let pass = events == 10_000 && worst_drift < 1e-9 && worst_speed < 1e-12 && worst_overlap <= 1e-12;
    report(
        1,
        "conservation",
        pass,
        start.elapsed(),
        Duration::from_secs(10),
        format!("events={events} energy_drift={worst_drift:.2e} reflection_speed_change={worst_speed:.2e} overlap={worst_overlap:.2e}"),
    );
}

#[test]
fn criterion_02_diffuse_law() {
    let _g = lock();
    let start = Instant::now();
    let mut us = Vec::with_capacity(100_000);
    for lane in 0..1000u64 {
        let mut rec = ReflectionRecord::new(RecordKey {
            seed: 202,
            stream: 0,
            lane,
        });
        let mut v = Vec3::new(-0.7, 0.2, 0.4);
        for k in 0..100 {
            let gamma = if k % 2 == 0 { Wall::X1Zero.gamma() } else { Wall::X1One.gamma() };
            let incoming = if gamma == 1 { -v.x.abs() } else { v.x.abs() };
            let vin = Vec3::new(incoming, v.y, v.z);
            v = rec.consume_reflection(&vin, gamma).unwrap();
            us.push(gamma as f64 * v.x / v.norm());
        }
    }
    let acc: Accumulator = us.iter().copied().collect();
    let mean = acc.estimate();
    let sigma = (1.0f64 / 18.0).sqrt() / (us.len() as f64).sqrt();
    let ks = ks_one_sample(&mut us, |u| (u.clamp(0.0, 1.0)).powi(2));
    let crit = ks.critical(0.01);
    let pass = ks.statistic < crit && (mean.mean - 2.0 / 3.0).abs() < 3.0 * sigma;
    report(
        2,
        "diffuse law",
        pass,
        start.elapsed(),
        Duration::from_secs(5),
        format!(
            "n=100000 ks={:.5} critical99={crit:.5} mean={:.5} (2/3 +- {:.5})",
            ks.statistic,
            mean.mean,
            3.0 * sigma
        ),
    );
}

#[test]
fn criterion_03_stationarity() {
    let _g = lock();
    let start = Instant::now();
    let n = 256;
    let eps = (n as f64).powf(-0.5);
    let f0 = Equilibrium { beta: 1.0 };
    use rayon::prelude::*;
    let finals: Vec<(Vec<f64>, f64)> = (0..200u64)
        .into_par_iter()
        .map(|r| {
            let st = sample_initial_configuration(RngSeed::new(303, r), n, eps, &f0, PlacementOptions::default()).unwrap();
            let (st, _) = simulate(st, 0.5, SimConfig::default(), &[], |_| {}).unwrap();
            let comps: Vec<f64> = st.particles.iter().map(|p| p.v.x).collect();
            let e = st.particles.iter().map(|p| p.v.norm_squared()).sum::<f64>() / n as f64;
            (comps, e)
        })
        .collect();
    let mut comps: Vec<f64> = finals.iter().flat_map(|f| f.0.iter().copied()).collect();
    let energy: Accumulator = finals.iter().map(|f| f.1).collect();
    let energy = energy.estimate();
    let ks = ks_one_sample(&mut comps, normal_cdf);
    let pass = ks.p_value > 0.01 && (energy.mean - 3.0).abs() < 3.0 * energy.stderr;
    report(
        3,
        "stationarity",
        pass,
        start.elapsed(),
        Duration::from_secs(300),
        format!(
            "ks_p={:.3} energy={:.4}+-{:.4} (target 3)",
            ks.p_value, energy.mean, energy.stderr
        ),
    );
}

#[test]
fn criterion_04_reflection_bound() {
    let _g = lock();
    let start = Instant::now();
    let mut runs = 0;
    let mut violations = 0u64;
    let mut reflections = 0u64;
    let battery: [(usize, f64, f64); 6] = [
        (1, 0.0, 20.0),
        (2, 0.1, 10.0),
        (16, 0.25, 5.0),
        (64, 0.125, 2.0),
        (256, 0.0625, 1.0),
        (1024, 0.03125, 0.2),
    ];
    for (k, &(n, eps, t)) in battery.iter().enumerate() {
        for r in 0..4u64 {
            let st = sample_initial_configuration(
                RngSeed::new(404 + k as u64, r),
                n,
                eps,
                &SlabProfile {
                    beta: 0.5,
                    amplitude: 0.5,
                },
                PlacementOptions::default(),
            )
            .unwrap();
            runs += 1;
            match simulate(st, t, SimConfig::default(), &[], |_| {}) {
                Ok((_, diag)) => {
                    for c in &diag.per_particle {
                        reflections += c.reflections;
                        violations += (c.reflections > c.reflection_bound()) as u64;
                    }
                }
                Err(SimError::ReflectionBoundViolated { .. }) => violations += 1,
                Err(e) => panic!("simulation failed: {e}"),
            }
        }
    }
    report(
        4,
        "reflection bound",
        violations == 0 && reflections > 0,
        start.elapsed(),
        Duration::from_secs(300),
        format!("runs={runs} reflections={reflections} violations={violations}"),
    );
}

#[test]
fn criterion_05_two_shock_scaling() {
    let _g = lock();
    let start = Instant::now();
    let (d_big, d_small) = (4e-3, 2e-3);
    let replicas = 400_000;
    let flags = double_shock_flags(16, 0.25, 1.0, &[d_big, d_small], replicas, 505).unwrap();
    let n = replicas as f64;
    let pa = flags.iter().filter(|f| f[0]).count() as f64 / n;
    let pb = flags.iter().filter(|f| f[1]).count() as f64 / n;
    let pab = flags.iter().filter(|f| f[0] && f[1]).count() as f64 / n;
    let ratio = pa / pb;
    // delta method with the covariance of the paired indicators
    let var = ratio * ratio * ((pa * (1.0 - pa)) / (pa * pa) + (pb * (1.0 - pb)) / (pb * pb) - 2.0 * (pab - pa * pb) / (pa * pb)) / n;
    let sigma = var.max(0.0).sqrt();
    let pass = (ratio - 4.0).abs() < 3.0 * sigma;
    report(
        5,
        "two-shock scaling",
        pass,
        start.elapsed(),
        Duration::from_secs(300),
        format!("p({d_big})={pa:.5} p({d_small})={pb:.5} ratio={ratio:.3}+-{sigma:.3} (target 4)"),
    );
}

#[test]
fn criterion_06_carleman() {
    let _g = lock();
    let start = Instant::now();
    let mut rng = RngSeed::new(606, 0).rng(0);
    let mut defect: f64 = 0.0;
    for _ in 0..1_000_000 {
        let v = uniform_ball(&mut rng, 5.0);
        let vs = uniform_ball(&mut rng, 5.0);
        let nu = uniform_sphere(&mut rng);
        defect = defect.max(CarlemanPair::from_collision(&v, &vs, &nu).orthogonality_defect());
    }
    let mut max_z: f64 = 0.0;
    for (k, v) in [Vec3::new(0.3, -0.5, 0.8), Vec3::new(1.5, 0.2, 0.0)].iter().enumerate() {
        max_z = max_z.max(carleman_pushforward_check(v, 9.0, 400_000, 606 + k as u64).max_z);
    }
    let v = Vec3::new(0.4, 0.3, -0.2);
    let energy = 16.0;
    let mut strip_dev: f64 = 0.0;
    for target in [StripTarget::VStar, StripTarget::VPrime, StripTarget::VStarPrime] {
        for a in [0.1, 0.7] {
            let h = 1e-3;
            let ratio = strip_integral(&v, a, a + 2.0 * h, energy, target) / strip_integral(&v, a, a + h, energy, target);
            strip_dev = strip_dev.max((ratio / 2.0 - 1.0).abs());
        }
    }
    let mut sing_dev: f64 = 0.0;
    for target in [StripTarget::VStar, StripTarget::VPrime, StripTarget::VStarPrime] {
        let norm1 = |e: f64| singular_integral(&v, e, energy, 1, target) / (energy * energy * e * e.ln().abs());
        let norm2 = |e: f64| singular_integral(&v, e, energy, 2, target) / (energy * energy * e.sqrt());
        let (f1, f2) = (norm1(1e-2), norm2(1e-2));
        for e in [1e-3, 1e-4] {
            sing_dev = sing_dev.max((norm1(e) / f1 - 1.0).abs()).max((norm2(e) / f2 - 1.0).abs());
        }
    }
    let pass = defect < 1e-10 && max_z < 3.0 && strip_dev <= 0.1 && sing_dev <= 0.5;
    report(
        6,
        "Carleman",
        pass,
        start.elapsed(),
        Duration::from_secs(120),
        format!(
            "orthogonality={defect:.1e} pushforward_max_z={max_z:.2} strip_ratio_dev={strip_dev:.3} singular_dev={sing_dev:.3}"
        ),
    );
}

#[test]
fn criterion_07_continuity_envelope() {
    let _g = lock();
    let start = Instant::now();
    let rep = continuity_bound_check(&ContinuityConfig::default()).unwrap();
    let constants: Vec<String> = rep
        .entries
        .iter()
        .filter_map(|e| e.constant.map(|c| format!("r={} t={:.3}: {:.3}", e.r, e.t, c)))
        .collect();
    report(
        7,
        "continuity envelope",
        rep.stable,
        start.elapsed(),
        Duration::from_secs(600),
        format!(
            "T={:.4} pilot C={:.3} max_rel_dev={:.3} [{}]",
            rep.t_max,
            rep.c_fit,
            rep.max_rel_dev,
            constants.join("; ")
        ),
    );
}

fn slab_config(seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        n_list: vec![64, 256, 1024],
        times: vec![0.05, 0.1, 0.2],
        initial: InitialSpec::SlabProfile {
            beta: 1.0,
            amplitude: 0.5,
        },
        seed,
        replicas: 200,
        bins: 16,
        observables: vec![Observable::One, Observable::V1, Observable::Energy],
        mu: 5.0,
        offdiag_margin: 0.0,
        solver: SolverConfig::default(),
        badsets: None,
        series: None,
    }
}

#[test]
fn criterion_08_series_solver() {
    let _g = lock();
    let start = Instant::now();
    let mut cfg = slab_config(808);
    cfg.series = Some(SeriesConfig {
        x1: 0.25,
        r_max: 2,
        energy: 36.0,
        n_samples: 400_000,
        t_fraction: 0.25,
    });
    let rep = series_solver_check(&cfg).unwrap();
    let pass = rep.rows.iter().all(|r| r.z_score.abs() < 3.0);
    let rows: Vec<String> = rep
        .rows
        .iter()
        .map(|r| {
            format!(
                "{}: series={:.5}+-{:.5} solver={:.5} z={:.2}",
                r.observable.name(),
                r.series.mean,
                r.series.stderr,
                r.solver,
                r.z_score
            )
        })
        .collect();
    report(
        8,
        "series/solver",
        pass,
        start.elapsed(),
        Duration::from_secs(600),
        format!("t={:.4} x1={} [{}]", rep.t, rep.x1, rows.join("; ")),
    );
}

#[test]
fn criterion_09_pseudotrajectory_continuity() {
    let _g = lock();
    let start = Instant::now();
    let cfg = BadSetConfig {
        s: 1,
        a: vec![1],
        sigma: vec![1],
        t: 0.5,
        epsilons: vec![1e-2, 1e-3],
        n_samples: 20_000,
        beta: 1.0,
    };
    let rep = bad_set_decay_study(&cfg, 909, 0.0).unwrap();
    let c: Vec<f64> = rep
        .distances
        .iter()
        .map(|d| d.mean / (d.epsilon * d.epsilon.ln().abs()))
        .collect();
    let dev = (c[1] / c[0] - 1.0).abs();
    let pass = dev <= 0.5 && rep.distances.iter().all(|d| d.clean_samples > 100);
    let rows: Vec<String> = rep
        .distances
        .iter()
        .zip(&c)
        .map(|(d, c)| format!("eps={:e}: mean={:.3e}+-{:.1e} clean={} C={:.3}", d.epsilon, d.mean, d.stderr, d.clean_samples, c))
        .collect();
    report(
        9,
        "pseudotrajectory continuity",
        pass,
        start.elapsed(),
        Duration::from_secs(300),
        format!("C ratio deviation={dev:.3} [{}]", rows.join("; ")),
    );
}

#[test]
fn criterion_10_bad_set_decay() {
    let _g = lock();
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut pass = true;
    for (a, sigma) in [(vec![1], vec![1]), (vec![1, 2], vec![1, 1]), (vec![1, 1], vec![1, -1])] {
        let cfg = BadSetConfig {
            s: 1,
            a: a.clone(),
            sigma: sigma.clone(),
            t: 1.0,
            epsilons: vec![1e-1, 1e-2],
            n_samples: 20_000,
            beta: 1.0,
        };
        let rep = bad_set_decay_study(&cfg, 1010, 0.0).unwrap();
        for class in DiscrepancyClass::ALL {
            if class == DiscrepancyClass::Clean {
                continue;
            }
            let hi = rep.row(1e-1, class).unwrap();
            let lo = rep.row(1e-2, class).unwrap();
            let se = hi.stderr.hypot(lo.stderr);
            let z = if se > 0.0 { (hi.frequency - lo.frequency) / se } else { 0.0 };
            let ok = z > 1.645;
            pass &= ok;
            lines.push(format!(
                "a={a:?} sigma={sigma:?} {}: {:.4} -> {:.4} z={z:.1}{}",
                class.as_str(),
                hi.frequency,
                lo.frequency,
                if ok { "" } else { " (not below)" }
            ));
        }
        let g: Vec<String> = rep.grazing_set.iter().map(|g| format!("{:.4}", g.frequency)).collect();
        lines.push(format!("a={a:?} sigma={sigma:?} grazing set membership: {}", g.join(" -> ")));
    }
    report(
        10,
        "bad-set decay",
        pass,
        start.elapsed(),
        Duration::from_secs(600),
        format!("[{}]", lines.join("; ")),
    );
}

#[test]
fn criterion_11_lanford_sweep() {
    let _g = lock();
    let start = Instant::now();
    let cfg = slab_config(1111);
    let (_, fitted) = fitted_time_horizon(1.0, cfg.mu).unwrap();
    let rep = convergence_sweep(&cfg).unwrap();
    let pass = fitted > 0.2 && rep.verdicts.iter().all(|v| v.non_increasing && v.final_within_noise);
    let rows: Vec<String> = rep
        .verdicts
        .iter()
        .map(|v| {
            let g: Vec<String> = v
                .gaps
                .iter()
                .zip(&v.uncertainties)
                .map(|(g, u)| format!("{g:.4}/{u:.4}"))
                .collect();
            format!(
                "t={} {}: {}{}",
                v.t,
                v.observable.name(),
                g.join(" "),
                if v.non_increasing && v.final_within_noise { "" } else { " (fails)" }
            )
        })
        .collect();
    report(
        11,
        "Lanford sweep",
        pass,
        start.elapsed(),
        Duration::from_secs(1800),
        format!("T={fitted:.4} gap/uncertainty per N=64,256,1024 [{}]", rows.join("; ")),
    );
}

fn outputs(cfg: &ExperimentConfig) -> Vec<u8> {
    let mut out = Vec::new();
    let sweep = convergence_sweep(cfg).unwrap();
    sweep.write_marginals_csv(&mut out).unwrap();
    write_json(&sweep, &mut out).unwrap();
    let bad = bad_set_decay_study(cfg.badsets.as_ref().unwrap(), cfg.seed, cfg.offdiag_margin).unwrap();
    bad.write_csv(&mut out).unwrap();
    write_json(&bad, &mut out).unwrap();
    let series = series_solver_check(cfg).unwrap();
    write_json(&series, &mut out).unwrap();
    let sol = picard_solve(&SlabProfile { beta: 1.0, amplitude: 0.5 }, 0.05, 1e-9, &cfg.solver.grid).unwrap();
    sol.write_csv(&mut out).unwrap();
    out
}

#[test]
fn criterion_12_determinism() {
    let _g = lock();
    let start = Instant::now();
    let grid = GridSpec {
        n_x: 9,
        n_speed: 17,
        n_cos: 9,
        n_steps: 2,
        stencil: 256,
        ..Default::default()
    };
    let cfg = ExperimentConfig {
        n_list: vec![32, 64],
        times: vec![0.05, 0.1],
        replicas: 20,
        bins: 4,
        solver: SolverConfig {
            grid,
            dt: 0.05,
            tol: 1e-8,
        },
        badsets: Some(BadSetConfig {
            s: 1,
            a: vec![1, 1],
            sigma: vec![1, -1],
            t: 0.5,
            epsilons: vec![0.1, 0.03],
            n_samples: 500,
            beta: 1.0,
        }),
        series: Some(SeriesConfig {
            x1: 0.5,
            r_max: 2,
            energy: 25.0,
            n_samples: 2000,
            t_fraction: 0.25,
        }),
        ..slab_config(1212)
    };
    let a = outputs(&cfg);
    let b = outputs(&cfg);
    report(
        12,
        "determinism",
        a == b && !a.is_empty(),
        start.elapsed(),
        Duration::from_secs(600),
        format!("bytes={} identical={}", a.len(), a == b),
    );
}
