use coupling_lab::engine::{l0_update, BlockData, L0State, SchedulerConfig};
use coupling_lab::estimators::stats::{chi_square_p, wilson};
use coupling_lab::measure::{
    coupling_meet_lower_bound, maximal_coupling_exact, maximal_coupling_sample, meet, pushforward_coupling,
    tv_distance, CouplingMatrix, DensityRatioOracle, FiniteMeasure, ProbabilityMeasure, Reference,
};
use coupling_lab::rng::{child_seed, stream};
use proptest::prelude::*;
use rand::Rng;

fn weights(max: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64], 1..=max).prop_filter_map("all zero", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| w.iter().map(|v| v / s).collect())
    })
}

fn pair(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..=max).prop_flat_map(|n| (weights_n(n), weights_n(n)))
}

fn weights_n(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(prop_oneof![Just(0.0), 0.0..1.0f64], n).prop_filter_map("all zero", |w| {
        let s: f64 = w.iter().sum();
        (s > 1e-6).then(|| w.iter().map(|v| v / s).collect())
    })
}

fn pm(w: &[f64]) -> ProbabilityMeasure {
    ProbabilityMeasure::from_weights(w.to_vec()).unwrap()
}

fn tv_oracle(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

fn marginal_err(m: &FiniteMeasure, w: &[f64]) -> f64 {
    m.labels().iter().zip(m.weights()).map(|(l, v)| (v - w[l.parse::<usize>().unwrap()]).abs()).fold(0.0, f64::max)
}

/// A coupling built by the north-west corner rule after permuting labels,
/// so generally far from maximal.
fn transport_coupling(p: &[f64], q: &[f64], perm_r: &[usize], perm_c: &[usize]) -> Vec<Vec<f64>> {
    let n = p.len();
    let mut joint = vec![vec![0.0; n]; n];
    let (mut a, mut b) = (p.to_vec(), q.to_vec());
    let (mut i, mut j) = (0, 0);
    while i < n && j < n {
        let (r, c) = (perm_r[i], perm_c[j]);
        let m = a[r].min(b[c]);
        joint[r][c] += m;
        a[r] -= m;
        b[c] -= m;
        if a[r] <= 1e-15 {
            i += 1;
        } else {
            j += 1;
        }
    }
    joint
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tv_is_a_metric_on_pairs((p, q) in pair(24)) {
        let (a, b) = (pm(&p), pm(&q));
        let d = tv_distance(&a, &b);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d, tv_distance(&b, &a));
        prop_assert_eq!(tv_distance(&a, &a), 0.0);
        prop_assert!((d - tv_oracle(&p, &q)).abs() <= 1e-12);
        prop_assert!((meet(&a, &b).mass() - (1.0 - d)).abs() <= 1e-12);
    }

    #[test]
    fn maximal_coupling_has_the_right_marginals((p, q) in pair(24)) {
        let c = maximal_coupling_exact(&pm(&p), &pm(&q));
        prop_assert!(c.joint.iter().all(|v| *v >= 0.0));
        prop_assert!(marginal_err(&c.row_marginal(), &p) <= 1e-12);
        prop_assert!(marginal_err(&c.col_marginal(), &q) <= 1e-12);
        prop_assert!((c.diagonal_mass() - (1.0 - tv_oracle(&p, &q))).abs() <= 1e-12);
    }

    #[test]
    fn no_coupling_beats_maximal((p, q) in pair(16), seed in any::<u64>()) {
        let n = p.len();
        let mut rng = stream(seed, &[]);
        let perm = |rng: &mut coupling_lab::rng::StreamRng| {
            let mut v: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                v.swap(i, rng.random_range(0..=i));
            }
            v
        };
        let (pr, pc) = (perm(&mut rng), perm(&mut rng));
        let joint = transport_coupling(&p, &q, &pr, &pc);
        let diag: f64 = (0..n).map(|i| joint[i][i]).sum();
        prop_assert!(diag <= 1.0 - tv_distance(&pm(&p), &pm(&q)) + 1e-12);
    }

    #[test]
    fn pushforward_coupling_is_image_maximal((p, q) in pair(24), classes in 1usize..6) {
        let f0 = |l: &str| (l.parse::<usize>().unwrap() % classes).to_string();
        let (a, b) = (pm(&p), pm(&q));
        let c = pushforward_coupling(&a, &b, f0);
        prop_assert!(marginal_err(&c.row_marginal(), &p) <= 1e-12);
        prop_assert!(marginal_err(&c.col_marginal(), &q) <= 1e-12);
        let img = c.pushforward(f0);
        let want = maximal_coupling_exact(&a.pushforward(f0), &b.pushforward(f0));
        for r in &want.rows {
            for s in &want.cols {
                prop_assert!((img.entry(r, s) - want.entry(r, s)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn identity_pushforward_is_the_maximal_coupling((p, q) in pair(12)) {
        let (a, b) = (pm(&p), pm(&q));
        let c = pushforward_coupling(&a, &b, |l: &str| l.to_string());
        let m = maximal_coupling_exact(&a, &b);
        for r in &m.rows {
            for s in &m.cols {
                prop_assert!((c.entry(r, s) - m.entry(r, s)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn meet_bound_is_monotone(p in 1.01..6.0f64, c in 1.01..50.0f64, m in 0.0..1.0f64, dm in 0.0..0.5f64) {
        let b = coupling_meet_lower_bound(p, c, m).unwrap();
        prop_assert!(b >= 0.0 && b <= m + 1e-15);
        prop_assert!(coupling_meet_lower_bound(p, c, (m + dm).min(1.0)).unwrap() >= b);
        prop_assert!(coupling_meet_lower_bound(p, c * 2.0, m).unwrap() <= b);
    }

    #[test]
    fn meet_bound_never_exceeds_meet((p, q) in pair(16), pexp in 1.01..5.0f64, mask in any::<u32>()) {
        let a: Vec<usize> = (0..p.len()).filter(|&k| mask >> k & 1 == 1 && p[k] > 0.0 && q[k] > 0.0).collect();
        let moment: f64 = a.iter().map(|&k| (p[k] / q[k]).powf(pexp + 1.0) * q[k]).sum();
        let mass: f64 = a.iter().map(|&k| p[k]).sum::<f64>().min(1.0);
        let bound = coupling_meet_lower_bound(pexp, moment.max(1.0 + 1e-12), mass).unwrap();
        let meet_a: f64 = a.iter().map(|&k| p[k].min(q[k])).sum();
        prop_assert!(bound <= meet_a);
    }

    #[test]
    fn measures_roundtrip_through_json(w in weights(10)) {
        let m = pm(&w);
        let s = serde_json::to_string(m.as_measure()).unwrap();
        let back: FiniteMeasure = serde_json::from_str(&s).unwrap();
        prop_assert_eq!(&back, m.as_measure());
        let c = maximal_coupling_exact(&m, &m);
        let back: CouplingMatrix = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn l0_update_keeps_its_invariants(
        k in 0usize..50,
        start in prop::option::of(0usize..50),
        path_equal in any::<bool>(),
        terminal in any::<bool>(),
        persist in any::<bool>(),
        fresh in any::<bool>(),
        h_end in 0.0..20.0f64,
    ) {
        let cfg = SchedulerConfig::default();
        let l0 = start.map(|l| l.min(k));
        let state = L0State { k, l0, offsets: if l0.is_some() { [1.0, 2.0] } else { [0.0; 2] } };
        let data = BlockData {
            path_equal: path_equal && terminal,
            terminal_low_equal: terminal,
            low_gap: 0.0,
            h_end,
            persist_energy_ok: persist,
            fresh_energy_ok: fresh,
            increments: [0.5, 0.25],
        };
        let next = l0_update(&state, &data, &cfg).unwrap();
        prop_assert_eq!(next.k, k + 1);
        match next.l0 {
            None => prop_assert_eq!(next.offsets, [0.0; 2]),
            Some(l) => {
                prop_assert!(l <= k + 1);
                prop_assert!(terminal);
                if l == k + 1 {
                    prop_assert!(h_end <= cfg.d0 && fresh);
                } else {
                    prop_assert_eq!(Some(l), l0);
                    prop_assert!(data.path_equal && persist);
                    prop_assert_eq!(next.offsets, [1.5, 2.25]);
                }
            }
        }
    }

    #[test]
    fn wilson_interval_brackets_the_estimate(n in 1usize..5000, frac in 0.0..=1.0f64) {
        let s = (frac * n as f64).round() as usize;
        let e = wilson(s, n);
        prop_assert!(0.0 <= e.lo && e.lo <= e.value && e.value <= e.hi && e.hi <= 1.0);
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        let x: u64 = stream(seed, &[a, b]).random();
        prop_assert_eq!(x, stream(seed, &[a, b]).random::<u64>());
        if a != b {
            prop_assert_ne!(x, stream(seed, &[b, a]).random::<u64>());
        }
        prop_assert_ne!(child_seed(seed, a), child_seed(seed, a.wrapping_add(1)));
    }
}

/// Discrete laws sampled through the path sampler: each marginal passes a
/// chi-square test and the coupling frequency matches `1 − TV`.
#[test]
fn sampler_matches_the_exact_coupling() {
    let p = [0.05, 0.3, 0.15, 0.2, 0.3];
    let q = [0.25, 0.1, 0.35, 0.2, 0.1];
    let tv = tv_oracle(&p, &q);
    let draw = |w: &'static [f64]| {
        move |rng: &mut coupling_lab::rng::StreamRng| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, v) in w.iter().enumerate() {
                acc += v;
                if u < acc {
                    return i;
                }
            }
            w.len() - 1
        }
    };
    static P: [f64; 5] = [0.05, 0.3, 0.15, 0.2, 0.3];
    static Q: [f64; 5] = [0.25, 0.1, 0.35, 0.2, 0.1];
    let oracle = DensityRatioOracle::new(|z: &usize| (Q[*z] / P[*z]).ln(), Reference::First);
    let n = 40_000;
    let mut rng = stream(77, &[]);
    let (mut c1, mut c2, mut coupled) = ([0.0; 5], [0.0; 5], 0usize);
    for _ in 0..n {
        let d = maximal_coupling_sample(draw(&P), &oracle, draw(&Q), &mut rng, 1000).unwrap();
        c1[d.z1] += 1.0;
        c2[d.z2] += 1.0;
        if d.coupled {
            assert_eq!(d.z1, d.z2);
            coupled += 1;
        }
    }
    let e1: Vec<f64> = p.iter().map(|v| v * n as f64).collect();
    let e2: Vec<f64> = q.iter().map(|v| v * n as f64).collect();
    assert!(chi_square_p(&c1, &e1).unwrap() > 1e-3);
    assert!(chi_square_p(&c2, &e2).unwrap() > 1e-3);
    let ph = coupled as f64 / n as f64;
    let se = ((1.0 - tv) * tv / n as f64).sqrt();
    assert!((ph - (1.0 - tv)).abs() <= 3.0 * se, "{ph} vs {}", 1.0 - tv);
}
