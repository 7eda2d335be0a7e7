use evsuc::degradation::{fade_linear, DegradationParams};
use evsuc::frequency::{
    min_nadir_inertia, mstg_curve, nadir_cut_fan, nadir_cut_grid, nadir_cuts, nadir_ok,
    rocof_min_inertia, CutPoint, FrState,
};
use evsuc::rolling::default_start;
use evsuc::system::{aggregate_fleet, ChargingRegime, EvFleetSpec, FrequencyParams};
use evsuc::wind::{build_tree, sample_wind_path, LogisticTransform, WindModel};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gb() -> FrequencyParams {
    FrequencyParams::gb()
}

fn wind(capacity: f64, phi: f64, noise: f64) -> WindModel {
    WindModel {
        installed_capacity: capacity,
        ar_coefficient: phi,
        noise_std: noise,
        transform: LogisticTransform::default(),
    }
}

fn quantile_set() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::btree_set(1u32..999, 1..8)
        .prop_map(|s| s.into_iter().map(|q| q as f64 / 1000.0).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tree_is_consistent(
        quantiles in quantile_set(),
        stages in 0usize..30,
        phi in 0.0f64..0.99,
        noise in 0.0f64..1.0,
        frac in 0.0f64..1.0,
    ) {
        let model = wind(6.0, phi, noise);
        let tree = build_tree(&model, 6.0 * frac, default_start(), &quantiles, 0.5 * stages as f64, 0.5).unwrap();
        prop_assert_eq!(tree.len(), 1 + if stages > 0 { quantiles.len() * stages } else { 0 });
        prop_assert!(tree.check_invariants().is_ok());
        for (i, n) in tree.nodes.iter().enumerate() {
            prop_assert_eq!(n.id, i);
            if let Some(p) = n.parent {
                prop_assert!(p < i);
            }
            prop_assert!((0.0..=6.0).contains(&n.wind_available));
        }
        for depth in 1..=stages {
            let at: Vec<_> = tree.nodes.iter().filter(|n| n.depth == depth).collect();
            let mass: f64 = at.iter().map(|n| n.pi).sum();
            prop_assert!((mass - 1.0).abs() <= 1e-9);
            for w in at.windows(2) {
                // branches are stored in quantile order
                prop_assert!(w[1].branch > w[0].branch);
                prop_assert!(w[1].wind_available >= w[0].wind_available - 1e-12);
            }
        }
    }

    #[test]
    fn wind_paths_stay_in_range(seed in any::<u64>(), phi in 0.0f64..0.99, noise in 0.0f64..2.0) {
        let path = sample_wind_path(&wind(30.0, phi, noise), seed, 200).unwrap();
        prop_assert!(path.iter().all(|&w| (0.0..=30.0).contains(&w)));
    }

    #[test]
    fn nadir_is_monotone(h in 1.0f64..600.0, r_e in 0.0f64..1.8, r_p in 0.0f64..4.0, d in 0.0f64..50.0) {
        let f = gb();
        let s = FrState { h, r_e, r_p };
        if nadir_ok(&s, &f) {
            let more_h = FrState { h: h + d, ..s };
            let more_e = FrState { r_e: (r_e + d / 50.0).min(f.p_l), ..s };
            let more_p = FrState { r_p: r_p + d / 10.0, ..s };
            prop_assert!(nadir_ok(&more_h, &f));
            prop_assert!(nadir_ok(&more_e, &f));
            prop_assert!(nadir_ok(&more_p, &f));
        }
    }

    #[test]
    fn fan_cuts_admit_secure_states(h in 0.0f64..600.0, r_e in 0.0f64..1.8, r_p in 0.0f64..4.0) {
        let f = gb();
        let s = FrState { h, r_e, r_p };
        if nadir_ok(&s, &f) {
            for c in nadir_cut_fan(&f, 9, 0.05, 20.0) {
                prop_assert!(c.slack(&s) >= -1e-9 * (1.0 + h), "cut excludes a secure state");
            }
        }
    }

    #[test]
    fn mstg_is_nonincreasing(fr in 1.8f64..7.2, step in 0.0f64..1.0, t in 1.0f64..10.0) {
        let f = gb();
        let pts = mstg_curve(&f, 4.0, 0.5, t, &[fr, fr + step]).unwrap();
        let (a, b) = (pts[0].mstg.unwrap(), pts[1].mstg.unwrap());
        prop_assert!(b <= a + 1e-12);
        prop_assert!(b >= 0.5 * rocof_min_inertia(&f) / 4.0 - 1e-12);
    }

    #[test]
    fn fleet_aggregate_is_linear(n in 0u64..1_000_000, m in 0u64..1_000_000) {
        let a = aggregate_fleet(&EvFleetSpec::reference(n, ChargingRegime::V2g));
        let b = aggregate_fleet(&EvFleetSpec::reference(m, ChargingRegime::V2g));
        let c = aggregate_fleet(&EvFleetSpec::reference(n + m, ChargingRegime::V2g));
        prop_assert!((a.energy + b.energy - c.energy).abs() <= 1e-12 * c.energy.max(1.0));
        prop_assert!((a.power + b.power - c.power).abs() <= 1e-12 * c.power.max(1.0));
    }

    #[test]
    fn linear_fade_never_decreases(x in 0.2f64..0.9, dx in 0.0f64..0.7) {
        let p = DegradationParams::default();
        let y = (x + dx).min(0.9);
        prop_assert!(fade_linear(y, &p).q_l >= fade_linear(x, &p).q_l);
    }
}

/// Stationary mean of the output, by trapezoidal integration of the
/// transform against the stationary latent density.
fn stationary_mean(model: &WindModel) -> f64 {
    let sd = model.stationary_std();
    let n = 20_000;
    let (lo, hi) = (-10.0 * sd, 10.0 * sd);
    let h = (hi - lo) / n as f64;
    let density =
        |z: f64| (-(z * z) / (2.0 * sd * sd)).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt());
    (0..=n)
        .map(|i| {
            let z = lo + i as f64 * h;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * h * density(z) * model.power_of_latent(z)
        })
        .sum()
}

#[test]
fn long_run_mean_matches_quadrature() {
    let model = wind(30.0, 0.95, 0.3);
    let path = sample_wind_path(&model, 17, 100_000).unwrap();
    let mean = path.iter().sum::<f64>() / path.len() as f64;
    let var = path.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / path.len() as f64;
    // effective sample size of an AR(1)-like series
    let phi = model.ar_coefficient;
    let n_eff = path.len() as f64 * (1.0 - phi) / (1.0 + phi);
    let sigma = (var / n_eff).sqrt();
    let expected = stationary_mean(&model);
    assert!(
        (mean - expected).abs() <= 3.0 * sigma,
        "empirical {mean}, quadrature {expected}, sigma {sigma}"
    );
}

#[test]
fn cut_sets_contain_the_secure_region() {
    let f = gb();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let single = nadir_cuts(&f, &[CutPoint { r_e: 0.0, r_p: 1.8 }]).unwrap();
    let three = nadir_cut_grid(&f, &[0.0, 0.9, 1.8], 1.8).unwrap();
    let mut secure = 0;
    for _ in 0..10_000 {
        let s = FrState {
            h: rng.gen_range(0.0..600.0),
            r_e: rng.gen_range(0.0..1.8),
            r_p: rng.gen_range(0.0..4.0),
        };
        if !nadir_ok(&s, &f) {
            continue;
        }
        secure += 1;
        for c in three.iter() {
            assert!(c.slack(&s) >= -1e-9 * (1.0 + s.h), "{s:?}");
        }
        if s.r_e == 0.0 {
            assert!(single[0].slack(&s) >= -1e-9);
        }
    }
    assert!(secure > 1000);
    // the single cut is tangent at its reference point
    let h = min_nadir_inertia(0.0, 1.8, &f);
    assert!(
        single[0]
            .slack(&FrState {
                h,
                r_e: 0.0,
                r_p: 1.8
            })
            .abs()
            < 1e-9 * h
    );
    for k in 0..200 {
        let r_p = 0.2 + 0.02 * k as f64;
        let s = FrState {
            h: min_nadir_inertia(0.0, r_p, &f),
            r_e: 0.0,
            r_p,
        };
        assert!(single[0].slack(&s) >= -1e-9 * s.h);
    }
}

#[test]
fn dense_cuts_approach_the_cone() {
    let f = gb();
    let points: Vec<CutPoint> = (0..5)
        .flat_map(|i| {
            (0..10).map(move |j| CutPoint {
                r_e: 1.8 * i as f64 / 5.0,
                r_p: 0.25 * 1.5f64.powi(j),
            })
        })
        .collect();
    assert_eq!(points.len(), 50);
    let cuts = nadir_cuts(&f, &points).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut cone, mut relaxed) = (0usize, 0usize);
    for _ in 0..200_000 {
        let s = FrState {
            h: rng.gen_range(0.0..600.0),
            r_e: rng.gen_range(0.0..1.8),
            r_p: rng.gen_range(0.0..4.0),
        };
        let inside = nadir_ok(&s, &f);
        let admitted = cuts.iter().all(|c| c.admits(&s)) && s.h >= 0.0;
        if inside {
            cone += 1;
            assert!(admitted);
        }
        if admitted {
            relaxed += 1;
        }
    }
    let excess = (relaxed - cone) as f64 / cone as f64;
    assert!(
        excess <= 0.02,
        "relaxation volume exceeds the cone by {:.2}%",
        100.0 * excess
    );
}

#[test]
fn faster_response_needs_less_generation() {
    let f = gb();
    let fr = [1.81, 2.0, 3.0];
    let slow = mstg_curve(&f, 4.0, 0.5, 10.0, &fr).unwrap();
    let fast = mstg_curve(&f, 4.0, 0.5, 1.0, &fr).unwrap();
    assert!(slow[0].mstg.unwrap() > fast[0].mstg.unwrap());
    for (s, q) in slow.iter().zip(&fast) {
        assert!(q.mstg.unwrap() <= s.mstg.unwrap());
    }
    assert!(mstg_curve(&f, 4.0, 0.5, 10.0, &[1.0]).unwrap()[0]
        .mstg
        .is_none());
}
