use objnav::grid::Grid;
use objnav::planning::fmm::DistanceField;
use objnav::planning::goal::select_goal_bounded;
use objnav::planning::{select_goal, Fmm};
use objnav::predictor::ProbabilityMap;
use proptest::prelude::*;

fn pm(z: Vec<f64>, w: usize) -> ProbabilityMap {
    let h = z.len() / w;
    ProbabilityMap {
        z: Grid::from_vec(h, w, z),
        target: 1,
        masked: true,
    }
}

fn field(d: Vec<f64>, w: usize) -> DistanceField {
    let h = d.len() / w;
    DistanceField {
        d: Grid::from_vec(h, w, d),
        sources: vec![0],
        resolution: 1.0,
    }
}

/// `(z, d)` on a 6x6 grid, some cells unreachable, some z exactly zero.
fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    let z = prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 36);
    let d = prop::collection::vec(prop_oneof![1 => Just(f64::INFINITY), 6 => 0.0f64..30.0], 36);
    (z, d)
}

/// Brute-force argmax of `exp(-d / lambda) z` written out independently.
fn oracle(z: &[f64], d: &[f64], lambda: Option<f64>) -> Option<usize> {
    let mut best: Option<(f64, f64, usize)> = None;
    for i in 0..z.len() {
        if z[i] <= 0.0 || !d[i].is_finite() {
            continue;
        }
        let s = match lambda {
            Some(l) => (-d[i] / l).exp() * z[i],
            None => z[i],
        };
        let take = match best {
            None => s > 0.0,
            Some((bs, bd, _)) => s > bs || (s == bs && d[i] < bd),
        };
        if take {
            best = Some((s, d[i], i));
        }
    }
    best.map(|b| b.2)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn matches_brute_force((z, d) in instance(), lambda in 0.1f64..50.0) {
        let got = select_goal(&pm(z.clone(), 6), &field(d.clone(), 6), lambda).map(|g| g.goal);
        prop_assert_eq!(got, oracle(&z, &d, Some(lambda)));
    }

    #[test]
    fn huge_lambda_is_argmax_z((z, d) in instance()) {
        let got = select_goal(&pm(z.clone(), 6), &field(d.clone(), 6), 1e6).map(|g| g.goal);
        prop_assert_eq!(got, oracle(&z, &d, None));
    }

    #[test]
    fn argmax_is_scale_invariant((z, d) in instance(), lambda in 0.1f64..50.0, k in 0.01f64..100.0) {
        let a = select_goal(&pm(z.clone(), 6), &field(d.clone(), 6), lambda).map(|g| g.goal);
        let scaled: Vec<f64> = z.iter().map(|v| v * k).collect();
        let b = select_goal(&pm(scaled, 6), &field(d, 6), lambda).map(|g| g.goal);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn halving_lambda_never_moves_the_goal_farther((z, d) in instance(), lambda in 0.2f64..50.0) {
        let zz = pm(z, 6);
        let dd = field(d.clone(), 6);
        if let (Some(a), Some(b)) = (select_goal(&zz, &dd, lambda), select_goal(&zz, &dd, lambda / 2.0)) {
            prop_assert!(d[b.goal] <= d[a.goal]);
        }
    }

    #[test]
    fn bounded_march_agrees_with_full_field(
        free in prop::collection::vec(prop::bool::weighted(0.8), 100),
        z in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..1.0], 100),
        lambda in prop_oneof![Just(f64::INFINITY), 0.5f64..20.0],
    ) {
        let mut free = free;
        free[0] = true;
        let trav = Grid::from_vec(10, 10, free);
        let zz = pm(z, 10);
        let full = Fmm::new().field(&trav, &[0], 0.05);
        let a = select_goal(&zz, &full, lambda);
        let b = select_goal_bounded(&zz, &trav, 0, 0.05, lambda, &mut Fmm::new());
        prop_assert_eq!(a.map(|g| g.goal), b.map(|g| g.goal));
    }
}

#[test]
fn worked_example() {
    let z = pm(vec![0.9, 0.5], 2);
    let d = field(vec![10.0, 1.0], 2);
    let g = select_goal(&z, &d, 5.0).unwrap();
    assert_eq!(g.goal, 1);
    assert!((0.9 * (-2.0f64).exp() - 0.12180).abs() < 1e-4);
    assert!((g.score - 0.40937).abs() < 1e-4);
}
