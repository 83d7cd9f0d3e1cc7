use coupling_lab::dynamics::{simulate_split, LowHighModel, SplitSystem, TorusConfig};
use coupling_lab::engine::{block_probabilities_from, run_episodes, CouplingModel, EpisodeResult, SchedulerConfig};
use coupling_lab::estimators::stats::ks_two_sample;
use coupling_lab::rng::stream;
use rayon::prelude::*;

fn toy() -> LowHighModel {
    let d = LowHighModel::default_model();
    LowHighModel::new(d.f, d.g, d.sigma_l, d.sigma_h, d.k0, d.dt, 0.5).unwrap()
}

fn ks_all(label: &str, a: &[Vec<f64>], b: &[Vec<f64>], fns: &[(&str, &dyn Fn(&[f64]) -> f64)]) {
    for (name, f) in fns {
        let fa: Vec<f64> = a.iter().map(|u| f(u)).collect();
        let fb: Vec<f64> = b.iter().map(|u| f(u)).collect();
        let (d, p) = ks_two_sample(&fa, &fb);
        assert!(p > 1e-3, "{label}/{name}: D = {d}, p = {p}");
    }
}

#[test]
fn coupled_components_keep_their_laws_toy() {
    let m = toy();
    let cfg = SchedulerConfig::default();
    let (u1, u2) = ([1.0, 1.0], [-1.0, -1.0]);
    let blocks = 3;
    let n = 2000;
    let batch = run_episodes(&m, &u1, &u2, blocks, &cfg, 11, n).unwrap();
    let steps = blocks * m.steps_per_block();
    let direct = |u0: &[f64], tag: u64| -> Vec<Vec<f64>> {
        (0..n)
            .into_par_iter()
            .map(|i| simulate_split(&m, u0, steps, 0.0, &mut stream(12, &[tag, i as u64])).unwrap().states.last().to_vec())
            .collect()
    };
    let fns: [(&str, &dyn Fn(&[f64]) -> f64); 3] =
        [("x", &|u| u[0]), ("y", &|u| u[1]), ("r²", &|u| u[0] * u[0] + u[1] * u[1])];
    let c1: Vec<Vec<f64>> = batch.episodes.iter().map(|e| e.states1[blocks].clone()).collect();
    let c2: Vec<Vec<f64>> = batch.episodes.iter().map(|e| e.states2[blocks].clone()).collect();
    ks_all("first", &c1, &direct(&u1, 0), &fns);
    ks_all("second", &c2, &direct(&u2, 1), &fns);
    // the test only means something if some pairs actually coupled
    assert!(batch.episodes.iter().filter(|e| e.l0[blocks].is_some()).count() > n / 4);
}

#[test]
fn coupled_components_keep_their_laws_torus() {
    let m = TorusConfig { dt: 0.01, ..TorusConfig::default() }.build().unwrap();
    let cfg = SchedulerConfig::default();
    let n = 3000;
    let batch = run_episodes(&m, &[0.1], &[0.6], 1, &cfg, 21, n).unwrap();
    let direct = |x0: f64, tag: u64| -> Vec<Vec<f64>> {
        (0..n).map(|i| m.simulate(x0, m.steps_per_block(), 0.0, &mut stream(22, &[tag, i as u64])).states.last().to_vec()).collect()
    };
    let tau = std::f64::consts::TAU;
    let fns: [(&str, &dyn Fn(&[f64]) -> f64); 3] =
        [("x", &|u| u[0]), ("cos", &|u| (tau * u[0]).cos()), ("sin", &|u| (tau * u[0]).sin())];
    let c1: Vec<Vec<f64>> = batch.episodes.iter().map(|e| e.states1[1].clone()).collect();
    let c2: Vec<Vec<f64>> = batch.episodes.iter().map(|e| e.states2[1].clone()).collect();
    ks_all("first", &c1, &direct(0.1, 0), &fns);
    ks_all("second", &c2, &direct(0.6, 1), &fns);
}

fn check_l0_chain(e: &EpisodeResult, m: &LowHighModel, cfg: &SchedulerConfig) {
    for (k, l0) in e.l0.iter().enumerate() {
        let Some(l) = *l0 else { continue };
        assert!(l <= k);
        assert!(e.h[l] <= cfg.d0, "fresh start at {l} with 𝓗 = {}", e.h[l]);
        for j in l..=k {
            assert_eq!(e.l0[j], Some(l), "l0 chain broken at {j}");
        }
        let (x1, _) = m.split(&e.states1[k]);
        let (x2, _) = m.split(&e.states2[k]);
        assert_eq!(x1, x2, "low modes differ at block {k} with l0 = {l}");
        if l < k {
            assert!(e.blocks[k - 1].path_equal);
        }
    }
}

#[test]
fn l0_is_consistent_along_episodes() {
    let m = toy();
    let cfg = SchedulerConfig { d0: 2.0, r0: 6.0, aleph: 3.0, b_rate: 2.0, ..SchedulerConfig::default() };
    let batch = run_episodes(&m, &[0.8, 0.5], &[-0.8, -0.5], 12, &cfg, 31, 300).unwrap();
    let mut seen = 0;
    for e in &batch.episodes {
        check_l0_chain(e, &m, &cfg);
        seen += e.l0.iter().filter(|l| l.is_some()).count();
    }
    assert!(seen > 0);
}

#[test]
fn decoupling_is_rare_for_old_couplings() {
    let m = toy();
    let cfg = SchedulerConfig::default();
    let batch = run_episodes(&m, &[0.5, 0.5], &[-0.5, -0.5], 16, &cfg, 41, 800).unwrap();
    let p = block_probabilities_from(&batch.episodes, &cfg, batch.complete);
    let t = SplitSystem::block_len(&m);
    let mut checked = 0;
    for (age, e) in p.decoupling.iter().enumerate().skip(1) {
        if e.n < 50 {
            continue;
        }
        checked += 1;
        let se = (e.value * (1.0 - e.value) / e.n as f64).sqrt().max(1.0 / e.n as f64);
        assert!(e.value <= (-(age as f64) * t).exp() + 3.0 * se, "age {age}: {e:?}");
    }
    assert!(checked >= 5);
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let m = toy();
    let cfg = SchedulerConfig::default();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_episodes(&m, &[0.3, 0.1], &[-0.3, 0.4], 4, &cfg, 51, 24).unwrap())
    };
    let (a, b) = (run(1), run(3));
    for (x, y) in a.episodes.iter().zip(&b.episodes) {
        assert_eq!(x.states1, y.states1);
        assert_eq!(x.states2, y.states2);
        assert_eq!(x.l0, y.l0);
    }
    assert_eq!(m.distance(&[0.0, 3.0], &[0.0, -1.0]), 4.0);
}
