//! Pinned values and trajectory invariants checked against the oracles in `common`.

mod common;

use anisoswarm::degenerate::is_stable_root;
use anisoswarm::polar::RootOptions;
use anisoswarm::scenario::{find_square_beta, run_scenario, OutputSpec, RunMode};
use anisoswarm::{BreakdownKind, KernelParams, Termination, VisionParams};
use common::*;

/// Side length of the balanced square for the default Morse kernel.
/// Computed with 40-digit arithmetic.
const SQUARE_BETA: f64 = 4.975_991_748_493_854e-1;

#[test]
fn square_beta_matches_pinned_value() {
    let k = KernelParams::default();
    let balance = |b: f64| {
        morse_deriv(b, &k)
            + morse_deriv(b * std::f64::consts::SQRT_2, &k) / std::f64::consts::SQRT_2
    };
    // Independent bracket: repulsive at 0.3, attractive at the K' zero.
    let (mut lo, mut hi) = (0.3, 2.0 * (4.0f64 / 3.0).ln());
    assert!(balance(lo) < 0.0 && balance(hi) > 0.0);
    for _ in 0..200 {
        let m = 0.5 * (lo + hi);
        if m == lo || m == hi {
            break;
        }
        if balance(m) < 0.0 {
            lo = m;
        } else {
            hi = m;
        }
    }
    assert!((lo - SQUARE_BETA).abs() <= 4e-16, "{lo:.17e}");
    let beta = find_square_beta(&k, 1e-14).unwrap();
    assert!((beta - SQUARE_BETA).abs() <= 4e-16, "{beta:.17e}");
}

#[test]
fn isotropic_run_matches_plain_rk4() {
    for seed in [3u64, 7, 11] {
        let mut spec = seeded_spec(seed, 5, 2.5, 1.0);
        spec.model.vision = VisionParams::isotropic();
        let (log, _) = run_scenario(&spec, RunMode::Degenerate, &OutputSpec::default()).unwrap();
        assert_eq!(log.termination, Termination::ReachedTEnd);
        assert!(log.events.is_empty());
        let steps = (1.0 / spec.sim.dt).round() as usize;
        let oracle = isotropic_rk4(&spec.positions(), &spec.model, spec.sim.dt, steps);
        let last = log.last_state();
        assert!((last.time - 1.0).abs() <= 1e-12);
        for (a, b) in last.positions.iter().zip(&oracle) {
            assert!(
                (a[0] - b[0]).abs() <= 1e-9 && (a[1] - b[1]).abs() <= 1e-9,
                "seed {seed}: {a:?} vs {b:?}"
            );
        }
    }
}

#[test]
fn seeded_runs_respect_event_invariants() {
    let mut kinds = Vec::new();
    for (seed, box_size) in [(18u64, 4.0), (13, 2.0), (5, 3.0), (21, 4.0)] {
        let spec = seeded_spec(seed, 4, box_size, 40.0);
        let (log, _) = run_scenario(&spec, RunMode::Degenerate, &OutputSpec::default()).unwrap();
        assert!(
            log.samples.windows(2).all(|w| w[1].time > w[0].time),
            "seed {seed}: sample times"
        );
        assert!(
            log.events.windows(2).all(|w| w[1].time > w[0].time),
            "seed {seed}: event times"
        );
        // Positions are continuous: no sample pair moves faster than the fastest particle allows.
        for w in log.samples.windows(2) {
            let vmax = w
                .iter()
                .flat_map(|s| (0..4).map(|i| s.speed(i)))
                .fold(0.0, f64::max);
            for (a, b) in w[0].positions.iter().zip(&w[1].positions) {
                let jump = (a[0] - b[0]).hypot(a[1] - b[1]);
                assert!(
                    jump <= 2.0 * vmax * (w[1].time - w[0].time) + 1e-12,
                    "seed {seed}: position jump {jump:e}"
                );
            }
        }
        for ev in &log.events {
            kinds.push(ev.kind);
            if ev.kind == BreakdownKind::Stopping {
                assert!(
                    ev.r_pre <= spec.sim.mu_stop,
                    "seed {seed}: stop at speed {:e}",
                    ev.r_pre
                );
            }
            let post = log
                .samples
                .iter()
                .find(|s| s.time == ev.time)
                .expect("post-jump sample");
            let p = ev.particle;
            assert!(circ(post.heading(p), ev.theta_post) <= 1e-12);
            assert!(is_stable_root(
                p,
                &post.positions,
                ev.theta_post,
                &spec.model,
                &RootOptions::default()
            )
            .unwrap());
            let f = residual(p, &post.positions, post.velocities[p], &spec.model);
            assert!(
                f[0].hypot(f[1]) <= 1e-10,
                "seed {seed}: post-jump residual {f:?}"
            );
        }
    }
    assert!(kinds.contains(&BreakdownKind::RootLoss) && kinds.contains(&BreakdownKind::Stopping));
}

#[test]
fn outward_square_expands_at_the_predicted_speed() {
    let spec = anisoswarm::scenario::build_square_scenario(&KernelParams::default()).unwrap();
    let (log, _) = run_scenario(&spec, RunMode::Degenerate, &OutputSpec::default()).unwrap();
    let k = spec.model.kernel;
    let beta = SQUARE_BETA;
    let speed = std::f64::consts::SQRT_2 / 16.0
        * (1.0 - std::f64::consts::FRAC_1_SQRT_2)
        * morse_deriv(beta * std::f64::consts::SQRT_2, &k)
        * std::f64::consts::SQRT_2;
    let first = &log.samples[0];
    for i in 0..4 {
        assert!((first.speed(i) - speed).abs() <= 1e-10 * speed);
    }
    // Symmetry is preserved along the run.
    for s in &log.samples {
        let r: Vec<f64> = s.positions.iter().map(|p| p[0].hypot(p[1])).collect();
        assert!(r.iter().all(|x| (x - r[0]).abs() <= 1e-12));
    }
}
