//! Scenario construction: the square configuration with non-unique
//! velocities, seeded random swarms, initial root selection and run drivers.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::degenerate::{run_degenerate, SimParams, Termination, TrajectoryLog};
use crate::error::{Error, Result};
use crate::model::{energy, isotropic_velocity, norm, KernelParams, ModelParams, VisionParams};
use crate::output;
use crate::polar::{
    angle_diff, enumerate_roots, rest_solutions, RestOptions, RootClass, RootRecord,
};
use crate::relaxation::{run_relaxation, EpsParams};

/// SplitMix64: `state += 0x9E3779B97F4A7C15`, then
/// `z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9`,
/// `z = (z ^ (z >> 27)) * 0x94D049BB133111EB`, `z ^ (z >> 31)`.
/// Uniform doubles take the top 53 bits: `(x >> 11) * 2^-53`.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Seeded positions, uniform in `[0, box)²`, drawn as `x1, y1, x2, y2, ...`.
pub fn seeded_positions(seed: u64, count: usize, box_size: f64) -> Vec<[f64; 2]> {
    let mut rng = SplitMix64::new(seed);
    (0..count)
        .map(|_| {
            let x = box_size * rng.next_f64();
            let y = box_size * rng.next_f64();
            [x, y]
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialPositions {
    Explicit(Vec<[f64; 2]>),
    Seeded {
        seed: u64,
        count: usize,
        #[serde(rename = "box")]
        box_size: f64,
    },
}

/// How the initial root of each particle is chosen among the admissible ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialRootPolicy {
    /// The stable admissible root with the largest radius.
    #[default]
    MaxRadiusStable,
    /// Index into the admissible roots sorted by angle, per particle.
    Index(Vec<usize>),
    /// Explicit angles; each must be an admissible root.
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub model: ModelParams,
    pub initial_positions: InitialPositions,
    #[serde(default)]
    pub initial_root_policy: InitialRootPolicy,
    #[serde(default)]
    pub sim: SimParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps: Option<EpsParams>,
}

impl ScenarioSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("invalid scenario: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Canonical pretty-printed JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        let config = |e: Error| Error::Config(e.to_string());
        self.model.validate().map_err(config)?;
        self.sim.validate().map_err(config)?;
        if let Some(eps) = &self.eps {
            eps.validate().map_err(config)?;
        }
        if self.model.dimension != 2 {
            return Err(Error::Config(format!(
                "only two-dimensional scenarios are supported, got dimension {}",
                self.model.dimension
            )));
        }
        let positions = self.positions();
        if positions.len() != self.model.n_particles {
            return Err(Error::Config(format!(
                "{} positions given for n_particles = {}",
                positions.len(),
                self.model.n_particles
            )));
        }
        if let InitialPositions::Seeded { box_size, .. } = self.initial_positions {
            if !(box_size > 0.0) {
                return Err(Error::Config("box must be positive".into()));
            }
        }
        if let InitialRootPolicy::Explicit(_) = self.initial_root_policy {
            self.initial_roots().map_err(config)?;
        }
        Ok(())
    }

    pub fn positions(&self) -> Vec<[f64; 2]> {
        match &self.initial_positions {
            InitialPositions::Explicit(p) => p.clone(),
            InitialPositions::Seeded {
                seed,
                count,
                box_size,
            } => seeded_positions(*seed, *count, *box_size),
        }
    }

    /// Initial roots according to the policy.
    pub fn initial_roots(&self) -> Result<Vec<RootRecord>> {
        let positions = self.positions();
        let n = positions.len();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let roots = enumerate_roots(i, &positions, &self.model, &self.sim.roots)?;
            let admissible: Vec<RootRecord> = roots
                .into_iter()
                .filter(|r| r.classification.is_admissible())
                .collect();
            let chosen = match &self.initial_root_policy {
                InitialRootPolicy::MaxRadiusStable => admissible
                    .iter()
                    .filter(|r| r.classification == RootClass::StableAdmissible)
                    .max_by(|a, b| a.radius.total_cmp(&b.radius))
                    .copied(),
                InitialRootPolicy::Index(idx) => {
                    let k = *idx.get(i).ok_or_else(|| {
                        Error::Config(format!("no root index given for particle {i}"))
                    })?;
                    admissible.get(k).copied()
                }
                InitialRootPolicy::Explicit(angles) => {
                    let a = *angles
                        .get(i)
                        .ok_or_else(|| Error::Config(format!("no angle given for particle {i}")))?;
                    admissible
                        .iter()
                        .find(|r| angle_diff(r.theta, a).abs() <= 1e-6)
                        .copied()
                }
            };
            out.push(chosen.ok_or_else(|| {
                Error::Config(format!(
                    "policy {:?} selects no admissible root for particle {i}",
                    self.initial_root_policy
                ))
            })?);
        }
        Ok(out)
    }
}

/// `K'(β) + (√2/2) K'(β√2)`.
pub fn square_balance(beta: f64, kernel: &KernelParams) -> f64 {
    kernel.deriv_unchecked(beta) + FRAC_1_SQRT_2 * kernel.deriv_unchecked(beta * SQRT_2)
}

/// Side length of the square on which every corner is an isotropic
/// equilibrium, with `K'(β) < 0`. The bracket is the first sign change of the
/// balance on a scan of `(0, r0]`, where `r0` is the zero of `K'`. It is
/// bisected to adjacent floats; `tol` bounds the residual of the result.
pub fn find_square_beta(kernel: &KernelParams, tol: f64) -> Result<f64> {
    kernel.validate()?;
    let r0 = kernel.sign_change_radius().ok_or_else(|| {
        Error::InvalidParams("K' has no repulsive-to-attractive sign change".into())
    })?;
    let f = |b: f64| square_balance(b, kernel);
    let scan = 1000;
    let mut bracket = None;
    let mut prev = (r0 * 1e-6, f(r0 * 1e-6));
    for k in 1..=scan {
        let b = r0 * k as f64 / scan as f64;
        let fb = f(b);
        if fb == 0.0 {
            return Ok(b);
        }
        if (prev.1 < 0.0) != (fb < 0.0) {
            bracket = Some((prev.0, b, prev.1));
            break;
        }
        prev = (b, fb);
    }
    let (mut lo, mut hi, flo) = bracket.ok_or_else(|| {
        Error::InvalidParams("square balance has no sign change below the K' zero".into())
    })?;
    let mut best = if f(lo).abs() < f(hi).abs() { lo } else { hi };
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm.abs() < f(best).abs() {
            best = mid;
        }
        if fm == 0.0 || !(mid > lo && mid < hi) {
            break;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if f(best).abs() > tol {
        return Err(Error::NonConvergence(format!(
            "square balance residual {:e} above tolerance {tol:e}",
            f(best).abs()
        )));
    }
    Ok(best)
}

/// Corners `(±β/2, ±β/2)` ordered counter-clockwise from the first
/// quadrant, rotated by `rotation` about the origin.
pub fn square_positions(beta: f64, rotation: f64) -> Vec<[f64; 2]> {
    let h = 0.5 * beta;
    let (s, c) = rotation.sin_cos();
    [[h, h], [-h, h], [-h, -h], [h, -h]]
        .iter()
        .map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]])
        .collect()
}

/// Square scenario with linear vision `g(s) = (1 - s)/2`, starting every
/// particle on its outward root.
pub fn build_square_scenario(kernel: &KernelParams) -> Result<ScenarioSpec> {
    let beta = find_square_beta(kernel, 1e-14)?;
    let positions = square_positions(beta, 0.0);
    let outward: Vec<f64> = positions.iter().map(|p| p[1].atan2(p[0])).collect();
    let spec = ScenarioSpec {
        name: "square".into(),
        model: ModelParams::new(4, *kernel, VisionParams::linear(1.0, 1.0)?)?,
        initial_positions: InitialPositions::Explicit(positions),
        initial_root_policy: InitialRootPolicy::Explicit(outward),
        sim: SimParams {
            t_end: 1.0,
            ..SimParams::default()
        },
        eps: None,
    };
    Ok(spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub expected: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NonuniquenessReport {
    pub beta: f64,
    /// Generalized solutions (admissible roots plus rest directions) per particle.
    pub solutions_per_particle: Vec<usize>,
    pub combinations: usize,
    pub checks: Vec<Check>,
}

impl NonuniquenessReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn check(name: String, value: f64, expected: f64, tolerance: f64, relative: bool) -> Check {
    let err = if relative {
        (value - expected).abs() / expected.abs().max(f64::MIN_POSITIVE)
    } else {
        (value - expected).abs()
    };
    Check {
        name,
        passed: err <= tolerance,
        value,
        expected,
        tolerance,
    }
}

/// Check the square scenario: every corner is an isotropic equilibrium and
/// has an outward and an inward admissible root of speed
/// `(√2/16)(1 - √2/2) K'(β√2) √2` plus the rest solution `s = 0`.
///
/// `β` is taken as the side length of the given configuration.
pub fn verify_nonuniqueness(spec: &ScenarioSpec) -> Result<NonuniquenessReport> {
    let positions = spec.positions();
    if positions.len() != 4 {
        return Err(Error::Config(
            "the square check needs four particles".into(),
        ));
    }
    let params = &spec.model;
    let kernel = &params.kernel;
    let center = [
        positions.iter().map(|p| p[0]).sum::<f64>() / 4.0,
        positions.iter().map(|p| p[1]).sum::<f64>() / 4.0,
    ];
    let beta = norm(&[
        positions[0][0] - positions[1][0],
        positions[0][1] - positions[1][1],
    ]);
    let speed =
        SQRT_2 / 16.0 * (1.0 - FRAC_1_SQRT_2) * kernel.deriv_unchecked(beta * SQRT_2) * SQRT_2;
    let rest_opts = RestOptions::default();
    let mut checks = Vec::new();
    let mut counts = Vec::new();
    for i in 0..4 {
        checks.push(check(
            format!("isotropic_equilibrium[{i}]"),
            norm(&isotropic_velocity(i, &positions, params)?),
            0.0,
            1e-10,
            false,
        ));
        let roots = enumerate_roots(i, &positions, params, &spec.sim.roots)?;
        let admissible: Vec<RootRecord> = roots
            .iter()
            .filter(|r| r.classification.is_admissible())
            .copied()
            .collect();
        let rest = rest_solutions(i, &positions, params, &spec.sim.roots, &rest_opts)?;
        counts.push(admissible.len() + rest.len());
        checks.push(check(
            format!("admissible_roots[{i}]"),
            admissible.len() as f64,
            2.0,
            0.0,
            false,
        ));
        checks.push(check(
            format!("rest_solutions[{i}]"),
            rest.len() as f64,
            1.0,
            0.0,
            false,
        ));
        if let Some(r) = rest.first() {
            checks.push(check(
                format!("rest_direction_norm[{i}]"),
                norm(&r.direction),
                0.0,
                1e-8,
                false,
            ));
        }
        let out_dir = (positions[i][1] - center[1]).atan2(positions[i][0] - center[0]);
        let nearest = |target: f64| {
            admissible
                .iter()
                .min_by(|a, b| {
                    angle_diff(a.theta, target)
                        .abs()
                        .total_cmp(&angle_diff(b.theta, target).abs())
                })
                .copied()
        };
        match (nearest(out_dir), nearest(out_dir + PI)) {
            (Some(out), Some(inw)) => {
                checks.push(check(
                    format!("outward_heading[{i}]"),
                    angle_diff(out.theta, out_dir),
                    0.0,
                    1e-10,
                    false,
                ));
                checks.push(check(
                    format!("inward_heading[{i}]"),
                    angle_diff(inw.theta, out_dir + PI),
                    0.0,
                    1e-10,
                    false,
                ));
                checks.push(check(
                    format!("outward_speed[{i}]"),
                    out.radius,
                    speed,
                    1e-10,
                    true,
                ));
                checks.push(check(
                    format!("inward_speed[{i}]"),
                    inw.radius,
                    out.radius,
                    1e-10,
                    true,
                ));
            }
            _ => checks.push(check(format!("roots_present[{i}]"), 0.0, 1.0, 0.0, false)),
        }
    }
    let combinations = counts.iter().product();
    Ok(NonuniquenessReport {
        beta,
        solutions_per_particle: counts,
        combinations,
        checks,
    })
}

/// Per-sample diagnostics of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticRow {
    pub time: f64,
    pub max_speed: f64,
    pub center_of_mass: [f64; 2],
    pub energy: f64,
}

pub fn long_run_diagnostics(
    log: &TrajectoryLog,
    params: &ModelParams,
) -> Result<Vec<DiagnosticRow>> {
    log.samples
        .iter()
        .map(|s| {
            let n = s.positions.len() as f64;
            Ok(DiagnosticRow {
                time: s.time,
                max_speed: s.velocities.iter().map(norm).fold(0.0, f64::max),
                center_of_mass: [
                    s.positions.iter().map(|p| p[0]).sum::<f64>() / n,
                    s.positions.iter().map(|p| p[1]).sum::<f64>() / n,
                ],
                energy: energy(&s.positions, params)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunMode {
    Degenerate,
    /// Relaxation run started on the initial roots.
    Relaxation {
        epsilon: f64,
    },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutputSpec {
    pub trajectory_csv: Option<PathBuf>,
    pub events_jsonl: Option<PathBuf>,
    pub summary_json: Option<PathBuf>,
    pub diagnostics_csv: Option<PathBuf>,
}

impl OutputSpec {
    /// `<dir>/<name>.csv`, `.events.jsonl`, `.summary.json`, `.diagnostics.csv`.
    pub fn in_dir(dir: &Path, name: &str) -> Self {
        Self {
            trajectory_csv: Some(dir.join(format!("{name}.csv"))),
            events_jsonl: Some(dir.join(format!("{name}.events.jsonl"))),
            summary_json: Some(dir.join(format!("{name}.summary.json"))),
            diagnostics_csv: Some(dir.join(format!("{name}.diagnostics.csv"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub mode: String,
    pub termination: Termination,
    pub diagnostic: Option<String>,
    pub t_final: f64,
    pub samples: usize,
    pub root_loss_events: usize,
    pub stopping_events: usize,
    pub warnings: Vec<String>,
}

/// Run a scenario and write the requested outputs.
pub fn run_scenario(
    spec: &ScenarioSpec,
    mode: RunMode,
    outputs: &OutputSpec,
) -> Result<(TrajectoryLog, RunSummary)> {
    spec.validate()?;
    let positions = spec.positions();
    let roots = spec.initial_roots()?;
    let (log, mode_name) = match mode {
        RunMode::Degenerate => (
            run_degenerate(0.0, &positions, &roots, &spec.model, &spec.sim)?,
            "degenerate".to_string(),
        ),
        RunMode::Relaxation { epsilon } => {
            let eps = EpsParams {
                epsilon,
                ..spec.eps.unwrap_or(EpsParams {
                    t_end: spec.sim.t_end,
                    ..EpsParams::default()
                })
            };
            let initial = crate::model::PhaseState {
                time: 0.0,
                positions,
                velocities: roots.iter().map(RootRecord::velocity).collect(),
            };
            (
                run_relaxation(&initial, &spec.model, &eps)?,
                format!("relaxation(epsilon={epsilon:e})"),
            )
        }
    };
    let count = |k| log.events.iter().filter(|e| e.kind == k).count();
    let summary = RunSummary {
        name: spec.name.clone(),
        mode: mode_name,
        termination: log.termination,
        diagnostic: log.diagnostic.clone(),
        t_final: log.last_state().time,
        samples: log.samples.len(),
        root_loss_events: count(crate::degenerate::BreakdownKind::RootLoss),
        stopping_events: count(crate::degenerate::BreakdownKind::Stopping),
        warnings: log.warnings.clone(),
    };
    if let Some(p) = &outputs.trajectory_csv {
        output::write_trajectory_csv(&mut output::create(p)?, &log)?;
    }
    if let Some(p) = &outputs.events_jsonl {
        output::write_events_jsonl(&mut output::create(p)?, &log.events)?;
    }
    if let Some(p) = &outputs.diagnostics_csv {
        let rows = long_run_diagnostics(&log, &spec.model)?;
        output::write_diagnostics_csv(&mut output::create(p)?, &rows)?;
    }
    if let Some(p) = &outputs.summary_json {
        output::write_json(&mut output::create(p)?, &summary)?;
    }
    Ok((log, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> ScenarioSpec {
        build_square_scenario(&KernelParams::default()).unwrap()
    }

    #[test]
    fn splitmix_reference_outputs() {
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
    }

    #[test]
    fn seeded_positions_are_reproducible_and_in_box() {
        let a = seeded_positions(42, 6, 3.0);
        assert_eq!(a, seeded_positions(42, 6, 3.0));
        assert_ne!(a, seeded_positions(43, 6, 3.0));
        assert!(a.iter().flatten().all(|c| (0.0..3.0).contains(c)));
        let unit = seeded_positions(42, 6, 1.0);
        for (p, q) in a.iter().zip(&unit) {
            assert_eq!(p[0], 3.0 * q[0]);
            assert_eq!(p[1], 3.0 * q[1]);
        }
    }

    #[test]
    fn beta_balances_the_square() {
        let k = KernelParams::default();
        let beta = find_square_beta(&k, 1e-14).unwrap();
        assert!(square_balance(beta, &k).abs() <= 1e-14);
        assert!(k.deriv_unchecked(beta) < 0.0);
        assert!(k.deriv_unchecked(beta * SQRT_2) > 0.0);
    }

    #[test]
    fn beta_needs_a_sign_change() {
        let k = KernelParams::new(3.0, 1.0, 2.0, 1.0).unwrap();
        assert!(matches!(
            find_square_beta(&k, 1e-14),
            Err(Error::InvalidParams(_))
        ));
    }

    #[test]
    fn square_has_81_generalized_combinations() {
        let report = verify_nonuniqueness(&square()).unwrap();
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.solutions_per_particle, vec![3; 4]);
        assert_eq!(report.combinations, 81);
    }

    #[test]
    fn rotated_square_still_passes() {
        let mut spec = square();
        let beta = find_square_beta(&spec.model.kernel, 1e-14).unwrap();
        spec.initial_positions =
            InitialPositions::Explicit(square_positions(beta, 17f64.to_radians()));
        spec.initial_root_policy = InitialRootPolicy::MaxRadiusStable;
        assert!(verify_nonuniqueness(&spec).unwrap().passed());
    }

    #[test]
    fn miscalibrated_beta_fails_the_equilibrium_check() {
        let mut spec = square();
        let beta = find_square_beta(&spec.model.kernel, 1e-14).unwrap();
        spec.initial_positions = InitialPositions::Explicit(square_positions(beta + 1e-3, 0.0));
        let report = verify_nonuniqueness(&spec).unwrap();
        assert!(!report.passed());
        assert!(report
            .checks
            .iter()
            .filter(|c| c.name.starts_with("isotropic_equilibrium"))
            .all(|c| !c.passed));
    }

    #[test]
    fn square_check_needs_four_particles() {
        let mut spec = square();
        spec.model.n_particles = 3;
        spec.initial_positions = InitialPositions::Seeded {
            seed: 1,
            count: 3,
            box_size: 1.0,
        };
        assert!(matches!(verify_nonuniqueness(&spec), Err(Error::Config(_))));
    }

    #[test]
    fn json_round_trip_is_stable() {
        let spec = square();
        let text = spec.to_json().unwrap();
        let back = ScenarioSpec::from_json(&text).unwrap();
        assert_eq!(back, spec);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut value: serde_json::Value =
            serde_json::from_str(&square().to_json().unwrap()).unwrap();
        value["colour"] = serde_json::json!("red");
        let r = ScenarioSpec::from_json(&value.to_string());
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn explicit_angles_must_be_admissible() {
        let mut spec = square();
        spec.initial_root_policy = InitialRootPolicy::Explicit(vec![0.3; 4]);
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn position_count_must_match() {
        let mut spec = square();
        spec.model.n_particles = 5;
        assert!(matches!(spec.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn outward_square_recedes_without_events() {
        let spec = square();
        let (log, summary) =
            run_scenario(&spec, RunMode::Degenerate, &OutputSpec::default()).unwrap();
        assert_eq!(summary.termination, Termination::ReachedTEnd);
        assert!(log.events.is_empty());
        let spread = |s: &crate::model::PhaseState| s.positions.iter().map(norm).sum::<f64>();
        assert!(spread(log.last_state()) > spread(&log.samples[0]));
    }

    #[test]
    fn diagnostics_follow_samples() {
        let spec = square();
        let (log, _) = run_scenario(&spec, RunMode::Degenerate, &OutputSpec::default()).unwrap();
        let rows = long_run_diagnostics(&log, &spec.model).unwrap();
        assert_eq!(rows.len(), log.samples.len());
        for (r, s) in rows.iter().zip(&log.samples) {
            assert_eq!(r.time, s.time);
        }
        // The symmetric square keeps its centre.
        assert!(rows.iter().all(|r| norm(&r.center_of_mass) <= 1e-12));
    }
}
