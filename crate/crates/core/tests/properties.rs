use std::collections::BTreeSet;

use percodrift::environment::{apply_surgery, EdgeConfig, EdgeStates, EnvironmentOracle, SurgerySpec};
use percodrift::green::green_exact;
use percodrift::kalikow::config_probability;
use percodrift::kernel::{constants, pi, Bias, LocalKernel};
use percodrift::lattice::{Ball, Dir, DirSet, Edge, Vertex};
use percodrift::rng::derive_seed;
use percodrift::stats::wls_line;
use percodrift::traps::compute_l1_l;
use proptest::prelude::*;

fn v(c: &[i32]) -> Vertex {
    Vertex::new(c).unwrap()
}

#[test]
fn first_surgery_slot_wins_on_overlap() {
    let e = Edge::at(v(&[0, 0]), Dir::new(0, true));
    let f = Edge::at(v(&[0, 0]), Dir::new(1, true));
    let a1: BTreeSet<Edge> = [e].into();
    let a2: BTreeSet<Edge> = [e, f].into();
    // e ∈ A₁ ∩ A₂, e ∈ B₂ ∖ B₁: A₁ says open, A₂ says closed.
    let s = SurgerySpec::on(a1, BTreeSet::new()).unwrap().with_secondary(a2.clone(), a2).unwrap();
    let closed = EdgeConfig::from_oracle(EnvironmentOracle::new(3, 0.0).unwrap());
    let out = apply_surgery(&closed, &s).unwrap();
    assert!(out.state(&e).unwrap());
    assert!(!out.state(&f).unwrap());
}

fn bias_strategy() -> impl Strategy<Value = Bias> {
    (0.05f64..2.5, -1.0f64..1.0, -1.0f64..1.0)
        .prop_filter("non-zero direction", |(_, a, b)| a.abs() + b.abs() > 1e-3)
        .prop_map(|(l, a, b)| Bias::new(l, &[a, b]).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn local_rows_are_probability_vectors(bias in bias_strategy(), bits in 0u32..15) {
        let k = LocalKernel::from_closed(DirSet(bits), &bias);
        let mut total = k.self_loop();
        for e in Dir::all(2) {
            prop_assert!(k.prob(e) >= 0.0);
            if DirSet(bits).contains(e) {
                prop_assert_eq!(k.prob(e), 0.0);
            }
            total += k.prob(e);
        }
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn edge_states_ignore_orientation(seed in any::<u64>(), p in 0.0f64..1.0, x in -50i32..50, y in -50i32..50, axis in 0usize..2) {
        let o = EnvironmentOracle::new(seed, p).unwrap();
        let a = v(&[x, y]);
        let b = a.step(Dir::new(axis, true));
        prop_assert_eq!(o.is_open(&Edge::between(a, b).unwrap()), o.is_open(&Edge::between(b, a).unwrap()));
        prop_assert_eq!(o.is_open(&Edge::at(b, Dir::new(axis, false))), o.is_open(&Edge::at(a, Dir::new(axis, true))));
    }

    #[test]
    fn star_configuration_law_sums_to_one(eps in 0.0f64..1.0) {
        let total: f64 = (0..16u32).map(|b| config_probability(1.0 - eps, 2, DirSet(b))).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeds_are_stable_and_keyed(m in any::<u64>(), a in any::<u64>(), b in any::<u64>()) {
        prop_assert_eq!(derive_seed(m, &[a, b]), derive_seed(m, &[a, b]));
        if a != b {
            prop_assert_ne!(derive_seed(m, &[a, b]), derive_seed(m, &[b, a]));
        }
    }

    #[test]
    fn weighted_line_fit_recovers_exact_lines(a in -5.0f64..5.0, b in -5.0f64..5.0, s in proptest::collection::vec(0.1f64..2.0, 4)) {
        let x = [0.0, 0.01, 0.02, 0.04];
        let y: Vec<f64> = x.iter().map(|x| a + b * x).collect();
        let f = wls_line(&x, &y, &s).unwrap();
        prop_assert!((f.slope - b).abs() < 1e-8 && (f.intercept - a).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    /// Detailed balance of the killed Green function: π(x)G(x,y) = π(y)G(y,x),
    /// and G(y,y) ≥ 1.
    #[test]
    fn killed_green_is_reversible(seed in any::<u64>(), p in 0.5f64..1.0, delta in 0.1f64..0.95, bias in bias_strategy()) {
        let omega = EdgeConfig::from_oracle(EnvironmentOracle::new(seed, p).unwrap());
        let ball = Ball::around_origin(2, 5);
        let x = v(&[0, 0]);
        let y = v(&[1, 1]);
        let (px, py) = (pi(&omega, &x, &bias).unwrap(), pi(&omega, &y, &bias).unwrap());
        prop_assume!(px > 0.0 && py > 0.0);
        let gy = green_exact(&omega, &bias, delta, &y, &ball, f64::INFINITY).unwrap();
        let gx = green_exact(&omega, &bias, delta, &x, &ball, f64::INFINITY).unwrap();
        let lhs = px * gy.value(&x);
        let rhs = py * gx.value(&y);
        // Solves stop at residual 1e-12 relative to max |b| = 1, so tiny
        // entries only carry absolute accuracy.
        let floor = 1e-11 * (px + py);
        prop_assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(rhs.abs()) + floor, "{lhs} vs {rhs}");
        prop_assert!(gy.value(&y) >= 1.0 - 1e-12);
    }

    #[test]
    fn local_radii_are_ordered(seed in any::<u64>(), p in 0.7f64..1.0, r in 1u32..3) {
        let bias = Bias::axis(2, 0.5).unwrap();
        let c = constants(&bias, 2, 64).unwrap();
        let omega = EnvironmentOracle::new(seed, p).unwrap();
        let radii = compute_l1_l(&omega, &Vertex::origin(2), r, &bias, &c, 512).unwrap();
        prop_assert!(radii.l_a1 > r);
        prop_assert!(radii.l_a >= radii.l_a1);
        prop_assert_eq!(radii.h_offset, c.eta as u64 * radii.l_a1 as u64);
    }
}

#[test]
fn saved_windows_round_trip() {
    let oracle = EnvironmentOracle::new(11, 0.6).unwrap();
    let ball = Ball::around_origin(2, 6);
    let mut cfg = EdgeConfig::sample_window(oracle, ball);
    cfg.force(Edge::at(v(&[0, 0]), Dir::new(0, true)), false);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("window.bin");
    cfg.save_window(&path).unwrap();
    let back = EdgeConfig::load_window(&path).unwrap();
    for e in ball.edges() {
        assert_eq!(back.state(&e).unwrap(), cfg.state(&e).unwrap(), "{e:?}");
    }
}
