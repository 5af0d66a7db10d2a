//! Distributional checks on the random generators.

use std::f64::consts::PI;

use auv_sysid::excitation::{sample_initial_condition, ExcitationConfig};
use auv_sysid::models::sample_offset_params;
use auv_sysid::{seed, ParamErrorLevel, TruthParams};

/// Two-sided one-sample Kolmogorov-Smirnov statistic against U[lo, hi].
fn ks_uniform(mut xs: Vec<f64>, lo: f64, hi: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Critical value at alpha = 0.001.
fn ks_critical(n: usize) -> f64 {
    1.95 / (n as f64).sqrt()
}

#[test]
fn initial_conditions_are_uniform_in_their_bands() {
    let cfg = ExcitationConfig::default();
    let mut rng = seed::rng_from(31);
    let n = 20_000;
    let ics: Vec<_> = (0..n).map(|_| sample_initial_condition(&cfg, &mut rng)).collect();
    let tm = cfg.theta_fraction * PI / 2.0;
    let checks = [
        ("theta", ics.iter().map(|x| x.theta).collect::<Vec<_>>(), -tm, tm),
        ("psi", ics.iter().map(|x| x.psi).collect(), -PI, PI),
        (
            "u",
            ics.iter().map(|x| x.u).collect(),
            cfg.surge_band[0],
            cfg.surge_band[1],
        ),
        ("q", ics.iter().map(|x| x.q).collect(), -cfg.rate_bound, cfg.rate_bound),
        ("duc", ics.iter().map(|x| x.delta_uc).collect(), 0.0, 1.0),
        ("drc", ics.iter().map(|x| x.delta_rc).collect(), -1.0, 1.0),
    ];
    for (name, xs, lo, hi) in checks {
        let d = ks_uniform(xs, lo, hi);
        assert!(d < ks_critical(n), "{name}: KS statistic {d}");
    }
    assert!(ics.iter().all(|x| x.p_x == 0.0 && x.w == 0.0));
}

#[test]
fn offset_samples_are_uniform_on_the_interval() {
    let truth = TruthParams::default();
    let e = ParamErrorLevel::new(0.3).unwrap();
    let mut rng = seed::rng_from(8);
    let n = 20_000;
    let draws: Vec<_> = (0..n).map(|_| sample_offset_params(&truth, e, &mut rng).mu).collect();
    for (i, m) in truth.mu().iter().enumerate() {
        let (lo, hi) = (m * 0.7f64, m * 1.3f64);
        let d = ks_uniform(draws.iter().map(|d| d[i]).collect(), lo.min(hi), lo.max(hi));
        assert!(d < ks_critical(n), "coordinate {i}: KS statistic {d}");
    }
}

#[test]
fn offset_streams_scale_with_error_level() {
    let truth = TruthParams::default();
    let a = sample_offset_params(&truth, ParamErrorLevel::new(1.0).unwrap(), &mut seed::rng_from(4));
    let b = sample_offset_params(&truth, ParamErrorLevel::new(0.5).unwrap(), &mut seed::rng_from(4));
    for ((x, y), m) in a.mu.iter().zip(&b.mu).zip(truth.mu()) {
        assert!(((x - m) - 2.0 * (y - m)).abs() < 1e-12);
    }
}
