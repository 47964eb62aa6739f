//! The degenerate (first-order) system: positions move with a velocity field
//! obtained by continuing one root of `H_i` per particle. Breakdowns of the
//! root branch are localized in time and resolved by a jump to the
//! equilibrium reached by the adjoint flow at the frozen configuration.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{norm, ModelParams, PhaseState};
use crate::polar::{
    angle_diff, track_frame, LostReason, ParticleFrame, RootClass, RootOptions, RootRecord,
    TrackOutcome,
};
use crate::relaxation::{adjoint_flow, AdjointOptions};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub dt: f64,
    pub t_end: f64,
    /// Speed at or below which a particle counts as stopped.
    pub mu_stop: f64,
    /// Pair distance at or below which the run terminates.
    pub lambda_collide: f64,
    pub sample_every: usize,
    /// Accepted steps inspected for monotone braking before a stop.
    pub k_stop: usize,
    pub max_bisect: usize,
    /// Drift time past a localized breakdown for the first jump attempt, and
    /// the time resolution of a hold.
    pub jump_lookahead: f64,
    /// Longest time a particle is held at rest waiting for the adjoint flow
    /// to leave the origin.
    pub max_hold: f64,
    pub max_events: usize,
    pub roots: RootOptions,
    pub adjoint: AdjointOptions,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 1e-2,
            t_end: 10.0,
            mu_stop: 1e-7,
            lambda_collide: 1e-3,
            sample_every: 10,
            k_stop: 5,
            max_bisect: 40,
            jump_lookahead: 1e-4,
            max_hold: 1.0,
            max_events: 10_000,
            roots: RootOptions::default(),
            adjoint: AdjointOptions::default(),
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !self.t_end.is_finite() {
            return Err(Error::InvalidParams(
                "dt must be positive and t_end finite".into(),
            ));
        }
        if !(self.mu_stop > 0.0) || !(self.lambda_collide > 0.0) {
            return Err(Error::InvalidParams(
                "mu_stop and lambda_collide must be positive".into(),
            ));
        }
        if self.sample_every == 0 || self.k_stop == 0 {
            return Err(Error::InvalidParams(
                "sample_every and k_stop must be at least 1".into(),
            ));
        }
        if !(self.jump_lookahead > 0.0) || !(self.max_hold >= 0.0) {
            return Err(Error::InvalidParams(
                "jump_lookahead must be positive and max_hold non-negative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BreakdownKind {
    RootLoss,
    Stopping,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BreakdownEvent {
    /// Time of the jump.
    pub time: f64,
    pub particle: usize,
    pub kind: BreakdownKind,
    pub theta_pre: f64,
    pub r_pre: f64,
    pub theta_post: f64,
    pub r_post: f64,
    /// Both breakdown conditions were close to their thresholds.
    pub ambiguous: bool,
    /// The radius decreased over the last `k_stop` accepted steps.
    pub braking: bool,
    /// Time between the localized breakdown and the jump.
    pub hold: f64,
}

/// A localized breakdown before jump selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventDraft {
    pub time: f64,
    pub particle: usize,
    pub kind: BreakdownKind,
    pub theta_pre: f64,
    pub r_pre: f64,
    pub ambiguous: bool,
    pub braking: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    ReachedTEnd,
    CollisionGuard,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryLog {
    pub samples: Vec<PhaseState>,
    pub events: Vec<BreakdownEvent>,
    pub termination: Termination,
    pub diagnostic: Option<String>,
    pub warnings: Vec<String>,
}

impl TrajectoryLog {
    pub fn new(initial: PhaseState) -> Self {
        Self {
            samples: vec![initial],
            events: Vec::new(),
            termination: Termination::Error,
            diagnostic: None,
            warnings: Vec::new(),
        }
    }

    pub fn last_state(&self) -> &PhaseState {
        self.samples.last().expect("log holds the initial state")
    }

    fn push_sample(&mut self, s: &PhaseState) {
        if s.time > self.last_state().time {
            self.samples.push(s.clone());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignalKind {
    RootLost(LostReason),
    LowSpeed,
    Collision { other: usize },
}

/// Why a step was aborted. `theta` and `radius` describe the offending
/// particle at the failing stage (the last Newton iterate for a lost root).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BreakdownSignal {
    pub kind: SignalKind,
    pub particle: usize,
    pub theta: f64,
    pub radius: f64,
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Accepted {
        state: PhaseState,
        thetas: Vec<f64>,
        radii: Vec<f64>,
    },
    Signal(BreakdownSignal),
}

/// Continue every particle's root from `theta_prev` at `positions`.
pub fn gamma(
    positions: &[[f64; 2]],
    theta_prev: &[f64],
    params: &ModelParams,
    opts: &RootOptions,
) -> Result<Vec<TrackOutcome>> {
    if theta_prev.len() != positions.len() {
        return Err(Error::Domain(format!(
            "expected {} angles, got {}",
            positions.len(),
            theta_prev.len()
        )));
    }
    (0..positions.len())
        .map(|i| {
            let frame = ParticleFrame::new(i, positions, params)?;
            Ok(track_frame(&frame, theta_prev[i], opts))
        })
        .collect()
}

fn closest_pair(positions: &[[f64; 2]]) -> (usize, usize, f64) {
    let mut best = (0, 0, f64::INFINITY);
    for i in 0..positions.len() {
        for j in i + 1..positions.len() {
            let d = norm(&[
                positions[i][0] - positions[j][0],
                positions[i][1] - positions[j][1],
            ]);
            if d < best.2 {
                best = (i, j, d);
            }
        }
    }
    best
}

/// Velocity field at `positions`, or the first signal raised there. A held
/// particle is at rest and keeps its seed angle.
fn stage(
    positions: &[[f64; 2]],
    seeds: &[f64],
    params: &ModelParams,
    sim: &SimParams,
    held: Option<usize>,
) -> Result<std::result::Result<Vec<RootRecord>, BreakdownSignal>> {
    let (i, j, d) = closest_pair(positions);
    if d <= sim.lambda_collide {
        return Ok(Err(BreakdownSignal {
            kind: SignalKind::Collision { other: j },
            particle: i,
            theta: seeds[i],
            radius: f64::NAN,
            slope: f64::NAN,
        }));
    }
    if seeds.len() != positions.len() {
        return Err(Error::Domain(format!(
            "expected {} angles, got {}",
            positions.len(),
            seeds.len()
        )));
    }
    let mut roots = Vec::with_capacity(positions.len());
    for i in 0..positions.len() {
        if held == Some(i) {
            roots.push(RootRecord {
                theta: seeds[i],
                radius: 0.0,
                slope: f64::NAN,
                classification: RootClass::Inadmissible,
            });
            continue;
        }
        let frame = ParticleFrame::new(i, positions, params)?;
        match track_frame(&frame, seeds[i], &sim.roots) {
            TrackOutcome::Tracked(rec) if rec.radius > sim.mu_stop => roots.push(rec),
            TrackOutcome::Tracked(rec) => {
                return Ok(Err(BreakdownSignal {
                    kind: SignalKind::LowSpeed,
                    particle: i,
                    theta: rec.theta,
                    radius: rec.radius,
                    slope: rec.slope,
                }))
            }
            TrackOutcome::Lost { reason, last_theta } => {
                return Ok(Err(BreakdownSignal {
                    kind: SignalKind::RootLost(reason),
                    particle: i,
                    theta: last_theta,
                    radius: f64::NAN,
                    slope: f64::NAN,
                }))
            }
        }
    }
    Ok(Ok(roots))
}

/// One RK4 step of size `h`. Each stage's velocity is obtained by continuing
/// the previous stage's roots; `state.velocities` must be the roots `thetas`
/// at `state.positions`.
pub fn rk4_step(
    state: &PhaseState,
    thetas: &[f64],
    h: f64,
    params: &ModelParams,
    sim: &SimParams,
) -> Result<StepOutcome> {
    rk4_step_held(state, thetas, h, params, sim, None)
}

fn rk4_step_held(
    state: &PhaseState,
    thetas: &[f64],
    h: f64,
    params: &ModelParams,
    sim: &SimParams,
    held: Option<usize>,
) -> Result<StepOutcome> {
    let x0 = &state.positions;
    let shifted = |k: &[[f64; 2]], c: f64| -> Vec<[f64; 2]> {
        x0.iter()
            .zip(k)
            .map(|(x, v)| [x[0] + c * v[0], x[1] + c * v[1]])
            .collect()
    };
    let k1 = state.velocities.clone();
    let mut seeds = thetas.to_vec();
    let mut ks = vec![k1];
    for c in [0.5 * h, 0.5 * h, h] {
        let x = shifted(ks.last().expect("k1 present"), c);
        let roots = match stage(&x, &seeds, params, sim, held)? {
            Ok(r) => r,
            Err(sig) => return Ok(StepOutcome::Signal(sig)),
        };
        seeds = roots.iter().map(|r| r.theta).collect();
        ks.push(roots.iter().map(RootRecord::velocity).collect());
    }
    let n = x0.len();
    let mut x_new = Vec::with_capacity(n);
    for i in 0..n {
        let mut x = x0[i];
        for c in 0..2 {
            x[c] += h / 6.0 * (ks[0][i][c] + 2.0 * ks[1][i][c] + 2.0 * ks[2][i][c] + ks[3][i][c]);
        }
        x_new.push(x);
    }
    let roots = match stage(&x_new, &seeds, params, sim, held)? {
        Ok(r) => r,
        Err(sig) => return Ok(StepOutcome::Signal(sig)),
    };
    Ok(StepOutcome::Accepted {
        state: PhaseState {
            time: state.time + h,
            positions: x_new,
            velocities: roots.iter().map(RootRecord::velocity).collect(),
        },
        thetas: roots.iter().map(|r| r.theta).collect(),
        radii: roots.iter().map(|r| r.radius).collect(),
    })
}

/// A breakdown localized between an accepted and a rejected step size.
#[derive(Debug, Clone, PartialEq)]
pub struct Localized {
    /// Last accepted state before the breakdown.
    pub state: PhaseState,
    pub thetas: Vec<f64>,
    /// Signal raised by the smallest rejected step.
    pub signal: BreakdownSignal,
    /// Width of the final bracket.
    pub bracket: f64,
}

/// Bisect the failed step `[0, h]` from `state` to the boundary between
/// accepted and rejected step sizes, then classify the breakdown.
///
/// A lost root or a degenerate slope is a root loss; a radius at or below
/// `mu_stop` is a stop. `radius_history` holds the particle radii of the most
/// recent accepted steps and sets the `braking` flag. Returns `Ok(Err(..))`
/// with the localized data when the signal is a collision.
pub fn detect_breakdown(
    state: &PhaseState,
    thetas: &[f64],
    h: f64,
    signal: BreakdownSignal,
    radius_history: &[Vec<f64>],
    params: &ModelParams,
    sim: &SimParams,
) -> Result<std::result::Result<(EventDraft, Localized), Localized>> {
    let (mut lo, mut hi) = (0.0, h);
    let mut best = (state.clone(), thetas.to_vec());
    let mut sig = signal;
    for _ in 0..sim.max_bisect {
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            break;
        }
        match rk4_step(state, thetas, mid, params, sim)? {
            StepOutcome::Accepted {
                state: s,
                thetas: t,
                ..
            } => {
                lo = mid;
                best = (s, t);
            }
            StepOutcome::Signal(s) => {
                hi = mid;
                sig = s;
            }
        }
    }
    let loc = Localized {
        state: best.0,
        thetas: best.1,
        signal: sig,
        bracket: hi - lo,
    };
    let p = sig.particle;
    let kind = match sig.kind {
        SignalKind::Collision { .. } => return Ok(Err(loc)),
        SignalKind::LowSpeed => BreakdownKind::Stopping,
        SignalKind::RootLost(_) => BreakdownKind::RootLoss,
    };
    let (theta_pre, r_pre) = match kind {
        BreakdownKind::Stopping => (sig.theta, sig.radius),
        BreakdownKind::RootLoss => (loc.thetas[p], norm(&loc.state.velocities[p])),
    };
    let ramp = 10.0 * sim.mu_stop;
    let ambiguous = match kind {
        BreakdownKind::Stopping => sig.slope.abs() <= sim.roots.slope_tol.sqrt(),
        BreakdownKind::RootLoss => r_pre <= ramp,
    };
    let hist: Vec<f64> = radius_history
        .iter()
        .rev()
        .take(sim.k_stop)
        .map(|r| r[p])
        .collect();
    let braking = hist.len() >= sim.k_stop && hist.windows(2).all(|w| w[0] < w[1]);
    if ambiguous {
        log::info!(
            "ambiguous breakdown of particle {p} at t = {:.12}: r_pre = {r_pre:e}",
            loc.state.time
        );
    }
    let draft = EventDraft {
        time: loc.state.time,
        particle: p,
        kind,
        theta_pre,
        r_pre,
        ambiguous,
        braking,
    };
    Ok(Ok((draft, loc)))
}

/// Resolve a breakdown by running the adjoint flow at `post_positions`,
/// started from `(max(r_pre, r_floor), theta_pre)`.
pub fn select_jump_frozen_adjoint(
    draft: &EventDraft,
    post_positions: &[[f64; 2]],
    params: &ModelParams,
    sim: &SimParams,
) -> Result<BreakdownEvent> {
    let r0 = draft.r_pre.max(sim.adjoint.r_floor);
    let v0 = [r0 * draft.theta_pre.cos(), r0 * draft.theta_pre.sin()];
    let res = adjoint_flow(
        post_positions,
        v0,
        draft.particle,
        params,
        &sim.roots,
        &sim.adjoint,
        false,
    )
    .map_err(|e| match e {
        Error::NonConvergence(reason) => Error::UnresolvedJump {
            time: draft.time,
            reason,
        },
        other => other,
    })?;
    Ok(BreakdownEvent {
        time: draft.time,
        particle: draft.particle,
        kind: draft.kind,
        theta_pre: draft.theta_pre,
        r_pre: draft.r_pre,
        theta_post: res.theta,
        r_post: res.radius,
        ambiguous: draft.ambiguous,
        braking: draft.braking,
        hold: 0.0,
    })
}

/// Result of resolving a localized breakdown.
enum Resolution {
    Jump {
        event: BreakdownEvent,
        post: PhaseState,
        thetas: Vec<f64>,
        /// States of the hold before the jump.
        path: Vec<PhaseState>,
    },
    /// The hold lasted until `t_end`.
    HeldToEnd { path: Vec<PhaseState> },
}

/// Try the jump after a drift of `jump_lookahead`. If the adjoint flow does
/// not leave the origin, hold the particle at rest while the others move on
/// their roots, retrying every `dt` and bisecting the first resolving step
/// down to `jump_lookahead`.
fn resolve_jump(
    draft: &EventDraft,
    loc: &Localized,
    params: &ModelParams,
    sim: &SimParams,
) -> Result<Resolution> {
    let p = draft.particle;
    let ramp = 10.0 * sim.mu_stop;
    // Ok(Err(reason)) marks a configuration that does not resolve the jump.
    let attempt = |positions: &[[f64; 2]], time: f64, hold: f64| {
        let mut d = *draft;
        d.time = time;
        match select_jump_frozen_adjoint(&d, positions, params, sim) {
            Ok(e) if e.r_post > ramp => Ok(Ok(BreakdownEvent { hold, ..e })),
            Ok(e) => Ok(Err(format!("selected root has speed {:e}", e.r_post))),
            Err(Error::UnresolvedJump { reason, .. }) => Ok(Err(reason)),
            Err(e) => Err(e),
        }
    };
    let t_loc = loc.state.time;
    let delta = sim.jump_lookahead;
    let drifted: Vec<[f64; 2]> = loc
        .state
        .positions
        .iter()
        .zip(&loc.state.velocities)
        .map(|(x, v)| [x[0] + delta * v[0], x[1] + delta * v[1]])
        .collect();
    let mut path = Vec::new();
    let (event, positions) = match attempt(&drifted, t_loc + delta, delta)? {
        Ok(event) => (event, drifted),
        Err(reason) => {
            log::debug!("particle {p} held at rest from t = {t_loc}: {reason}");
            let mut rest = loc.state.clone();
            rest.velocities[p] = [0.0, 0.0];
            let held_step = |from: &PhaseState, h: f64| -> Result<PhaseState> {
                match rk4_step_held(from, &loc.thetas, h, params, sim, Some(p))? {
                    StepOutcome::Accepted { state, .. } => Ok(state),
                    StepOutcome::Signal(sig) => Err(Error::UnresolvedJump {
                        time: from.time,
                        reason: format!(
                            "particle {} raised {:?} while particle {p} was held at rest",
                            sig.particle, sig.kind
                        ),
                    }),
                }
            };
            let mut found = None;
            let mut last_reason = reason;
            while found.is_none() {
                let elapsed = rest.time - t_loc;
                if rest.time >= sim.t_end - 1e-9 * sim.dt {
                    path.push(rest);
                    return Ok(Resolution::HeldToEnd { path });
                }
                if elapsed >= sim.max_hold {
                    return Err(Error::UnresolvedJump {
                        time: rest.time,
                        reason: format!(
                            "particle {p} still at rest after {elapsed:e}: {last_reason}"
                        ),
                    });
                }
                let h = sim.dt.min(sim.t_end - rest.time);
                let next = held_step(&rest, h)?;
                match attempt(&next.positions, next.time, next.time - t_loc)? {
                    Ok(event) => {
                        let (mut lo, mut hi) = (0.0, h);
                        let mut best = (event, next.positions);
                        while hi - lo > sim.jump_lookahead {
                            let mid = 0.5 * (lo + hi);
                            let probe = held_step(&rest, mid)?;
                            match attempt(&probe.positions, probe.time, probe.time - t_loc)? {
                                Ok(e) => {
                                    hi = mid;
                                    best = (e, probe.positions);
                                }
                                Err(_) => lo = mid,
                            }
                        }
                        found = Some(best);
                    }
                    Err(reason) => {
                        last_reason = reason;
                        path.push(std::mem::replace(&mut rest, next));
                    }
                }
            }
            path.push(rest);
            found.expect("loop exits with a resolution")
        }
    };
    let mut thetas = loc.thetas.clone();
    thetas[p] = event.theta_post;
    let mut velocities = Vec::with_capacity(thetas.len());
    for (j, out) in gamma(&positions, &thetas, params, &sim.roots)?
        .into_iter()
        .enumerate()
    {
        match out {
            TrackOutcome::Tracked(rec) => {
                thetas[j] = rec.theta;
                velocities.push(rec.velocity());
            }
            TrackOutcome::Lost { reason, .. } => {
                return Err(Error::UnresolvedJump {
                    time: event.time,
                    reason: format!(
                        "particle {j} lost its root ({reason:?}) while resolving particle {p}"
                    ),
                })
            }
        }
    }
    let post = PhaseState {
        time: event.time,
        positions,
        velocities,
    };
    Ok(Resolution::Jump {
        event,
        post,
        thetas,
        path,
    })
}

/// Integrate the degenerate system from `initial_positions` along the chosen
/// initial roots until `sim.t_end`.
///
/// Steps land on the grid `t0 + k dt`; after a jump the next step is
/// shortened to return to the grid. Samples are taken every `sample_every`
/// grid steps, at the final time, and on both sides of every jump.
pub fn run_degenerate(
    t0: f64,
    initial_positions: &[[f64; 2]],
    initial_roots: &[RootRecord],
    params: &ModelParams,
    sim: &SimParams,
) -> Result<TrajectoryLog> {
    params.validate()?;
    sim.validate()?;
    if params.dimension != 2 {
        return Err(Error::UnsupportedDimension(params.dimension));
    }
    if initial_roots.len() != initial_positions.len() {
        return Err(Error::Domain(
            "one initial root per particle is required".into(),
        ));
    }
    let seeds: Vec<f64> = initial_roots.iter().map(|r| r.theta).collect();
    let mut thetas = Vec::with_capacity(seeds.len());
    let mut velocities = Vec::with_capacity(seeds.len());
    for (i, out) in gamma(initial_positions, &seeds, params, &sim.roots)?
        .into_iter()
        .enumerate()
    {
        match out {
            TrackOutcome::Tracked(rec)
                if rec.classification.is_admissible()
                    && angle_diff(rec.theta, seeds[i]).abs() <= 1e-8 =>
            {
                thetas.push(rec.theta);
                velocities.push(rec.velocity());
            }
            other => {
                return Err(Error::Domain(format!(
                    "initial angle {} of particle {i} is not an admissible root: {other:?}",
                    seeds[i]
                )))
            }
        }
    }
    let mut state = PhaseState {
        time: t0,
        positions: initial_positions.to_vec(),
        velocities,
    };
    let mut log = TrajectoryLog::new(state.clone());
    let mut history: VecDeque<Vec<f64>> = VecDeque::with_capacity(sim.k_stop + 1);
    history.push_back(state.velocities.iter().map(norm).collect());
    let dt = sim.dt;
    let t_end = sim.t_end;

    let fail = |log: &mut TrajectoryLog, termination, msg: String| {
        log::warn!("{msg}");
        log.termination = termination;
        log.diagnostic = Some(msg);
    };

    loop {
        if state.time >= t_end - 1e-9 * dt {
            log.push_sample(&state);
            log.termination = Termination::ReachedTEnd;
            break;
        }
        let mut k = ((state.time - t0) / dt + 1e-9).floor() as i64 + 1;
        if t0 + k as f64 * dt - state.time < 1e-3 * dt {
            k += 1;
        }
        let target = (t0 + k as f64 * dt).min(t_end);
        let h = target - state.time;
        let outcome = match rk4_step(&state, &thetas, h, params, sim) {
            Ok(o) => o,
            Err(e) => {
                fail(&mut log, Termination::Error, e.to_string());
                break;
            }
        };
        match outcome {
            StepOutcome::Accepted {
                state: mut s,
                thetas: t,
                radii,
            } => {
                s.time = target;
                state = s;
                thetas = t;
                history.push_back(radii);
                if history.len() > sim.k_stop + 1 {
                    history.pop_front();
                }
                if k % sim.sample_every as i64 == 0 {
                    log.push_sample(&state);
                }
            }
            StepOutcome::Signal(sig) => {
                if let SignalKind::Collision { other } = sig.kind {
                    log.push_sample(&state);
                    fail(
                        &mut log,
                        Termination::CollisionGuard,
                        format!(
                            "particles {} and {other} within lambda_collide after t = {}",
                            sig.particle, state.time
                        ),
                    );
                    break;
                }
                let hist: Vec<Vec<f64>> = history.iter().cloned().collect();
                let detected = match detect_breakdown(&state, &thetas, h, sig, &hist, params, sim) {
                    Ok(d) => d,
                    Err(e) => {
                        fail(&mut log, Termination::Error, e.to_string());
                        break;
                    }
                };
                let (draft, loc) = match detected {
                    Ok(pair) => pair,
                    Err(loc) => {
                        log.push_sample(&loc.state);
                        fail(
                            &mut log,
                            Termination::CollisionGuard,
                            format!("collision guard reached at t = {}", loc.state.time),
                        );
                        break;
                    }
                };
                if log.events.len() >= sim.max_events {
                    log.push_sample(&loc.state);
                    fail(
                        &mut log,
                        Termination::Error,
                        format!(
                            "event limit {} reached at t = {}",
                            sim.max_events, draft.time
                        ),
                    );
                    break;
                }
                match resolve_jump(&draft, &loc, params, sim) {
                    Ok(Resolution::Jump {
                        event,
                        post,
                        thetas: t,
                        path,
                    }) => {
                        log::debug!("{event:?}");
                        push_path(&mut log, &loc.state, &path, sim.sample_every);
                        log.push_sample(&post);
                        log.events.push(event);
                        state = post;
                        thetas = t;
                        history.clear();
                        history.push_back(state.velocities.iter().map(norm).collect());
                    }
                    Ok(Resolution::HeldToEnd { path }) => {
                        push_path(&mut log, &loc.state, &path, sim.sample_every);
                        log.warnings.push(format!(
                            "particle {} at rest from t = {} to t_end",
                            draft.particle, loc.state.time
                        ));
                        log.termination = Termination::ReachedTEnd;
                        break;
                    }
                    Err(e) => {
                        log.push_sample(&loc.state);
                        fail(&mut log, Termination::Error, e.to_string());
                        break;
                    }
                }
            }
        }
    }
    Ok(log)
}

/// Log the localized state, every `sample_every`-th hold state and the last.
fn push_path(log: &mut TrajectoryLog, loc: &PhaseState, path: &[PhaseState], sample_every: usize) {
    log.push_sample(loc);
    for (k, s) in path.iter().enumerate() {
        if (k + 1) % sample_every == 0 || k + 1 == path.len() {
            log.push_sample(s);
        }
    }
}

/// Whether `theta` is a stable admissible root of particle `i` at `positions`.
pub fn is_stable_root(
    i: usize,
    positions: &[[f64; 2]],
    theta: f64,
    params: &ModelParams,
    opts: &RootOptions,
) -> Result<bool> {
    let frame = ParticleFrame::new(i, positions, params)?;
    Ok(match track_frame(&frame, theta, opts) {
        TrackOutcome::Tracked(rec) => {
            rec.classification == RootClass::StableAdmissible
                && angle_diff(rec.theta, theta).abs() <= 1e-8
        }
        TrackOutcome::Lost { .. } => false,
    })
}
