//! The ε-relaxation system `x' = v`, `ε v' = F(x, v)` and the fictitious-time
//! adjoint flow `dv/dτ = F(x*, v)` at a frozen configuration.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degenerate::{Termination, TrajectoryLog};
use crate::error::{Error, Result};
use crate::model::{norm, ModelParams, PhaseState};
use crate::polar::{
    angle_diff, eigenvalues_2x2, track_frame, ParticleFrame, RootClass, RootOptions, RootRecord,
    TrackOutcome,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpsParams {
    pub epsilon: f64,
    /// Step size as a fraction of ε.
    pub dt_factor: f64,
    pub t_end: f64,
    /// Radius below which `v/|v|` is replaced by `v/v_floor`.
    pub v_floor: f64,
    pub sample_every: usize,
    /// Every step is sampled while `max_i |dv_i/dt|` exceeds this.
    pub steep_threshold: f64,
    /// Grid steps are split so that each substep `h` has
    /// `h ρ(D_v F)/ε <= stiff_limit`.
    pub stiff_limit: f64,
    pub max_substeps: usize,
}

impl Default for EpsParams {
    fn default() -> Self {
        Self {
            epsilon: 1e-3,
            dt_factor: 0.1,
            t_end: 5.0,
            v_floor: 1e-12,
            sample_every: 10,
            steep_threshold: 10.0,
            stiff_limit: 1.0,
            max_substeps: 100,
        }
    }
}

impl EpsParams {
    pub fn dt(&self) -> f64 {
        self.dt_factor * self.epsilon
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::InvalidParams("epsilon must be positive".into()));
        }
        if !(self.dt_factor > 0.0 && self.dt_factor <= 0.2) {
            return Err(Error::InvalidParams(format!(
                "dt_factor must lie in (0, 0.2] to resolve the fast scale, got {}",
                self.dt_factor
            )));
        }
        if !(self.stiff_limit > 0.0) || self.max_substeps == 0 {
            return Err(Error::InvalidParams(
                "stiff_limit must be positive and max_substeps at least 1".into(),
            ));
        }
        if !(self.v_floor > 0.0) || self.sample_every == 0 {
            return Err(Error::InvalidParams(
                "v_floor must be positive and sample_every at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// `F_i(x, v_i)` for all particles with the direction regularized as
/// `v/max(|v|, v_floor)`. Pair terms are computed once per unordered pair.
pub fn relaxation_forces(
    positions: &[[f64; 2]],
    velocities: &[[f64; 2]],
    params: &ModelParams,
    v_floor: f64,
) -> Result<Vec<[f64; 2]>> {
    let n = positions.len();
    if n != params.n_particles || velocities.len() != n {
        return Err(Error::Domain(format!(
            "expected {} positions and velocities",
            params.n_particles
        )));
    }
    if params.dimension != 2 {
        return Err(Error::UnsupportedDimension(params.dimension));
    }
    let dirs: Vec<[f64; 2]> = velocities
        .iter()
        .map(|v| {
            let s = norm(v).max(v_floor);
            [v[0] / s, v[1] / s]
        })
        .collect();
    let scale = -1.0 / n as f64;
    let mut out: Vec<[f64; 2]> = velocities.iter().map(|v| [-v[0], -v[1]]).collect();
    for i in 0..n {
        for j in i + 1..n {
            let d = [
                positions[i][0] - positions[j][0],
                positions[i][1] - positions[j][1],
            ];
            let r = norm(&d);
            if !(r > 0.0) {
                return Err(Error::Coincident(i, j));
            }
            let u = [d[0] / r, d[1] / r];
            let f = params.kernel.deriv_unchecked(r);
            let si = (u[0] * dirs[i][0] + u[1] * dirs[i][1]).clamp(-1.0, 1.0);
            let sj = (-u[0] * dirs[j][0] - u[1] * dirs[j][1]).clamp(-1.0, 1.0);
            let wi = scale * f * params.vision.weight_unchecked(si);
            let wj = scale * f * params.vision.weight_unchecked(sj);
            out[i][0] += wi * u[0];
            out[i][1] += wi * u[1];
            out[j][0] -= wj * u[0];
            out[j][1] -= wj * u[1];
        }
    }
    Ok(out)
}

/// Largest spectral radius over particles of `D_v F_i(x, v_i)`, with the
/// same direction regularization as [`relaxation_forces`].
pub fn fast_spectral_radius(
    positions: &[[f64; 2]],
    velocities: &[[f64; 2]],
    params: &ModelParams,
    v_floor: f64,
) -> Result<f64> {
    let n = positions.len();
    let dirs: Vec<([f64; 2], f64, bool)> = velocities
        .iter()
        .map(|v| {
            let r = norm(v);
            let s = r.max(v_floor);
            ([v[0] / s, v[1] / s], s, r >= v_floor)
        })
        .collect();
    let scale = -1.0 / n as f64;
    let mut jac = vec![[[0.0; 2]; 2]; n];
    for i in 0..n {
        for j in i + 1..n {
            let d = [
                positions[i][0] - positions[j][0],
                positions[i][1] - positions[j][1],
            ];
            let r = norm(&d);
            if !(r > 0.0) {
                return Err(Error::Coincident(i, j));
            }
            let u = [d[0] / r, d[1] / r];
            let f = params.kernel.deriv_unchecked(r);
            let si = (u[0] * dirs[i].0[0] + u[1] * dirs[i].0[1]).clamp(-1.0, 1.0);
            let sj = (-u[0] * dirs[j].0[0] - u[1] * dirs[j].0[1]).clamp(-1.0, 1.0);
            let ci = scale * f * params.vision.weight_deriv_unchecked(si);
            let cj = scale * f * params.vision.weight_deriv_unchecked(sj);
            for a in 0..2 {
                for b in 0..2 {
                    jac[i][a][b] += ci * u[a] * u[b];
                    jac[j][a][b] += cj * u[a] * u[b];
                }
            }
        }
    }
    let mut rho = 0.0f64;
    for (m, (d, len, projected)) in jac.iter().zip(&dirs) {
        let proj = if *projected {
            [
                [1.0 - d[0] * d[0], -d[0] * d[1]],
                [-d[1] * d[0], 1.0 - d[1] * d[1]],
            ]
        } else {
            [[1.0, 0.0], [0.0, 1.0]]
        };
        let mut dv = [[0.0; 2]; 2];
        for a in 0..2 {
            for b in 0..2 {
                dv[a][b] = (m[a][0] * proj[0][b] + m[a][1] * proj[1][b]) / len;
            }
            dv[a][a] -= 1.0;
        }
        for (re, im) in eigenvalues_2x2(dv) {
            rho = rho.max(re.hypot(im));
        }
    }
    Ok(rho)
}

/// Right-hand side `(dx/dt, dv/dt)` of the relaxation system.
pub fn eps_rhs(
    state: &PhaseState,
    params: &ModelParams,
    eps: &EpsParams,
) -> Result<(Vec<[f64; 2]>, Vec<[f64; 2]>)> {
    let f = relaxation_forces(&state.positions, &state.velocities, params, eps.v_floor)?;
    let inv = 1.0 / eps.epsilon;
    let dv = f.iter().map(|a| [a[0] * inv, a[1] * inv]).collect();
    Ok((state.velocities.clone(), dv))
}

/// Explicit RK4 stepper for the relaxation system.
#[derive(Debug, Clone)]
pub struct RelaxationIntegrator<'a> {
    params: &'a ModelParams,
    eps: EpsParams,
    state: PhaseState,
    steps: u64,
    t0: f64,
}

impl<'a> RelaxationIntegrator<'a> {
    pub fn new(initial: PhaseState, params: &'a ModelParams, eps: EpsParams) -> Result<Self> {
        eps.validate()?;
        params.validate()?;
        let t0 = initial.time;
        Ok(Self {
            params,
            eps,
            state: initial,
            steps: 0,
            t0,
        })
    }

    pub fn state(&self) -> &PhaseState {
        &self.state
    }

    /// One grid step of size `dt`; returns `max_i |dv_i/dt|` at the step start.
    pub fn step(&mut self) -> Result<f64> {
        let t = self.t0 + (self.steps + 1) as f64 * self.eps.dt();
        let steep = self.step_by(self.eps.dt())?;
        self.steps += 1;
        self.state.time = t;
        Ok(steep)
    }

    /// Advance by `h`, split into stiffness-limited substeps.
    fn step_by(&mut self, h: f64) -> Result<f64> {
        let rho = fast_spectral_radius(
            &self.state.positions,
            &self.state.velocities,
            self.params,
            self.eps.v_floor,
        )?;
        let n = (h * rho / (self.eps.epsilon * self.eps.stiff_limit))
            .ceil()
            .clamp(1.0, self.eps.max_substeps as f64) as usize;
        let sub = h / n as f64;
        let t = self.state.time;
        let steep = self.substep(sub)?;
        for _ in 1..n {
            self.substep(sub)?;
        }
        self.state.time = t + h;
        Ok(steep)
    }

    fn substep(&mut self, h: f64) -> Result<f64> {
        let inv = 1.0 / self.eps.epsilon;
        let floor = self.eps.v_floor;
        let x0 = &self.state.positions;
        let v0 = &self.state.velocities;
        let n = x0.len();
        let axpy = |base: &[[f64; 2]], k: &[[f64; 2]], c: f64| -> Vec<[f64; 2]> {
            base.iter()
                .zip(k)
                .map(|(b, d)| [b[0] + c * d[0], b[1] + c * d[1]])
                .collect()
        };
        let accel = |x: &[[f64; 2]], v: &[[f64; 2]]| -> Result<Vec<[f64; 2]>> {
            let f = relaxation_forces(x, v, self.params, floor)?;
            Ok(f.into_iter().map(|a| [a[0] * inv, a[1] * inv]).collect())
        };

        let a1 = accel(x0, v0)?;
        let steep = a1.iter().map(norm).fold(0.0, f64::max);
        let (x2, v2) = (axpy(x0, v0, 0.5 * h), axpy(v0, &a1, 0.5 * h));
        let a2 = accel(&x2, &v2)?;
        let (x3, v3) = (axpy(x0, &v2, 0.5 * h), axpy(v0, &a2, 0.5 * h));
        let a3 = accel(&x3, &v3)?;
        let (x4, v4) = (axpy(x0, &v3, h), axpy(v0, &a3, h));
        let a4 = accel(&x4, &v4)?;

        let mut x_new = Vec::with_capacity(n);
        let mut v_new = Vec::with_capacity(n);
        for i in 0..n {
            let mut x = [0.0; 2];
            let mut v = [0.0; 2];
            for k in 0..2 {
                x[k] = x0[i][k] + h / 6.0 * (v0[i][k] + 2.0 * v2[i][k] + 2.0 * v3[i][k] + v4[i][k]);
                v[k] = v0[i][k] + h / 6.0 * (a1[i][k] + 2.0 * a2[i][k] + 2.0 * a3[i][k] + a4[i][k]);
            }
            x_new.push(x);
            v_new.push(v);
        }
        self.state.positions = x_new;
        self.state.velocities = v_new;
        Ok(steep)
    }

    /// State at time `t >= current time`. Grid steps of size `dt` are taken
    /// while they do not pass `t`; an off-grid remainder is integrated on a
    /// copy so the integrator stays on its step grid.
    pub fn advance_to(&mut self, t: f64) -> Result<PhaseState> {
        let dt = self.eps.dt();
        while self.t0 + (self.steps + 1) as f64 * dt <= t + 1e-9 * dt {
            self.step()?;
        }
        let gap = t - self.state.time;
        if gap.abs() <= 1e-9 * dt {
            let mut s = self.state.clone();
            s.time = t;
            return Ok(s);
        }
        let mut probe = self.clone();
        probe.step_by(gap)?;
        let mut s = probe.state;
        s.time = t;
        Ok(s)
    }
}

/// Integrate the relaxation system from `initial` to `eps.t_end`.
///
/// Samples every `sample_every` steps, and every step while the velocity
/// field is steep. Velocities that stay below `v_floor` for longer than
/// `100 ε` are reported as warnings.
pub fn run_relaxation(
    initial: &PhaseState,
    params: &ModelParams,
    eps: &EpsParams,
) -> Result<TrajectoryLog> {
    let mut integ = RelaxationIntegrator::new(initial.clone(), params, *eps)?;
    let mut log = TrajectoryLog::new(initial.clone());
    let n_steps = ((eps.t_end - initial.time) / eps.dt()).round().max(0.0) as u64;
    let mut below_since: Vec<Option<f64>> = vec![None; initial.positions.len()];
    let mut warned = vec![false; initial.positions.len()];
    for k in 1..=n_steps {
        let steep = integ.step()?;
        let st = integ.state();
        for (i, v) in st.velocities.iter().enumerate() {
            if norm(v) < eps.v_floor {
                let since = *below_since[i].get_or_insert(st.time);
                if !warned[i] && st.time - since > 100.0 * eps.epsilon {
                    warned[i] = true;
                    let msg = format!(
                        "particle {i} below v_floor since t = {since:.6} (near-rest drift)"
                    );
                    log::warn!("{msg}");
                    log.warnings.push(msg);
                }
            } else {
                below_since[i] = None;
                warned[i] = false;
            }
        }
        if k % eps.sample_every as u64 == 0 || steep > eps.steep_threshold || k == n_steps {
            log.samples.push(st.clone());
        }
    }
    log.termination = Termination::ReachedTEnd;
    Ok(log)
}

/// Options for the frozen-configuration adjoint flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdjointOptions {
    /// Bound on `|dθ/dτ| + |dr/dτ|/r` at the polished equilibrium.
    pub adjoint_tol: f64,
    /// The flow counts as settled once `|dθ/dτ| + |dr/dτ|/r` stays below
    /// this for 10 consecutive steps and Newton polishing lands within
    /// `1e-6` of the current heading.
    pub settle_tol: f64,
    pub tau_max: f64,
    pub r_floor: f64,
    pub rtol: f64,
    pub atol: f64,
    pub h_max: f64,
    pub max_steps: usize,
    /// Fictitious time spent below `r_floor`, or more than 1000 consecutive
    /// steps there, counts as collapse to rest.
    pub rest_tau: f64,
}

impl Default for AdjointOptions {
    fn default() -> Self {
        Self {
            adjoint_tol: 1e-10,
            settle_tol: 1e-6,
            tau_max: 1e3,
            r_floor: 1e-7,
            rtol: 1e-10,
            atol: 1e-16,
            h_max: 0.5,
            max_steps: 200_000,
            rest_tau: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjointResult {
    pub radius: f64,
    pub theta: f64,
    pub slope: f64,
    pub tau: f64,
    pub steps: usize,
    /// `(τ, r, θ)` after every accepted step when tracing is requested.
    pub trace: Vec<[f64; 3]>,
}

// Dormand-Prince 5(4) tableau.
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

fn dopri_step(f: &impl Fn([f64; 2]) -> [f64; 2], y: [f64; 2], h: f64) -> ([f64; 2], [f64; 2]) {
    let mut k = [[0.0; 2]; 7];
    for s in 0..7 {
        let mut ys = y;
        for (a, kk) in A[s].iter().zip(&k).take(s) {
            ys[0] += h * a * kk[0];
            ys[1] += h * a * kk[1];
        }
        k[s] = f(ys);
    }
    let mut y5 = y;
    let mut err = [0.0; 2];
    for s in 0..7 {
        for c in 0..2 {
            y5[c] += h * B5[s] * k[s][c];
            err[c] += h * (B5[s] - B4[s]) * k[s][c];
        }
    }
    (y5, err)
}

/// Integrate `dv/dτ = F_i(x*, v)` at the frozen configuration until it
/// settles on an equilibrium `(r*, θ*)`.
///
/// The flow is integrated in Cartesian form with an embedded Runge-Kutta
/// pair, which lets trajectories pass through `v = 0`; settling is judged on
/// the polar form `dθ/dτ = H(θ)/r`, `dr/dτ = -r + R(θ)`. The equilibrium is
/// polished by Newton on `H` and must be stable and admissible.
pub fn adjoint_flow(
    frozen_positions: &[[f64; 2]],
    v0: [f64; 2],
    particle: usize,
    params: &ModelParams,
    root_opts: &RootOptions,
    opts: &AdjointOptions,
    record_trace: bool,
) -> Result<AdjointResult> {
    if norm(&v0) < opts.r_floor * (1.0 - 1e-12) {
        return Err(Error::Domain(format!(
            "adjoint flow needs |v0| >= r_floor = {:e}",
            opts.r_floor
        )));
    }
    let frame = ParticleFrame::new(particle, frozen_positions, params)?;
    let tiny = 1e-300;
    let rhs = |v: [f64; 2]| {
        let r = norm(&v).max(tiny);
        let (g, _) = frame.interaction([v[0] / r, v[1] / r]);
        [g[0] - v[0], g[1] - v[1]]
    };

    let mut v = v0;
    let mut tau = 0.0;
    let mut h = 1e-3f64.min(opts.h_max);
    let mut calm = 0usize;
    let mut below_since: Option<f64> = None;
    let mut below_steps = 0usize;
    let mut trace = Vec::new();
    let mut steps = 0usize;
    if record_trace {
        trace.push([0.0, norm(&v), v[1].atan2(v[0])]);
    }
    while steps < opts.max_steps {
        if tau > opts.tau_max {
            return Err(Error::NonConvergence(format!(
                "adjoint flow for particle {particle} did not settle by tau = {:e}",
                opts.tau_max
            )));
        }
        let (y, err) = dopri_step(&rhs, v, h);
        let scale = |c: usize| opts.atol + opts.rtol * v[c].abs().max(y[c].abs());
        let e = ((err[0] / scale(0)).powi(2) + (err[1] / scale(1)).powi(2)).sqrt() / 2f64.sqrt();
        if !e.is_finite() {
            h *= 0.1;
            continue;
        }
        if e <= 1.0 {
            v = y;
            tau += h;
            steps += 1;
            let r = norm(&v);
            let theta = v[1].atan2(v[0]);
            if record_trace {
                trace.push([tau, r, theta]);
            }
            if r < opts.r_floor {
                let since = *below_since.get_or_insert(tau);
                below_steps += 1;
                if tau - since > opts.rest_tau || below_steps > 1000 {
                    return Err(Error::NonConvergence(format!(
                        "adjoint flow for particle {particle} collapsed to rest (r = {r:e})"
                    )));
                }
                calm = 0;
            } else {
                below_since = None;
                below_steps = 0;
                let t = frame.eval(theta);
                let speed = (t.h.abs() + (t.r - r).abs()) / r;
                calm = if speed <= opts.settle_tol {
                    calm + 1
                } else {
                    0
                };
                if calm >= 10 {
                    if let Some(rec) = polish(&frame, theta, r, root_opts, opts)? {
                        return Ok(AdjointResult {
                            radius: rec.radius,
                            theta: rec.theta,
                            slope: rec.slope,
                            tau,
                            steps,
                            trace,
                        });
                    }
                    calm = 0;
                }
            }
        }
        let factor = if e == 0.0 {
            5.0
        } else {
            (0.9 * e.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = (h * factor).min(opts.h_max);
        if h < 1e-18 {
            return Err(Error::NonConvergence(format!(
                "adjoint step size underflow at tau = {tau:e}"
            )));
        }
    }
    Err(Error::NonConvergence(format!(
        "adjoint flow exceeded {} steps",
        opts.max_steps
    )))
}

/// Newton-polished equilibrium near `(r, θ)`, or `None` when Newton leaves
/// the neighbourhood (a slow passage rather than an equilibrium).
fn polish(
    frame: &ParticleFrame,
    theta: f64,
    r: f64,
    root_opts: &RootOptions,
    opts: &AdjointOptions,
) -> Result<Option<RootRecord>> {
    let rec = match track_frame(frame, theta, root_opts) {
        TrackOutcome::Tracked(rec) => rec,
        TrackOutcome::Lost { .. } => return Ok(None),
    };
    if angle_diff(rec.theta, theta).abs() > 1e-6 || (rec.radius - r).abs() > 1e-6 * r {
        return Ok(None);
    }
    if rec.classification != RootClass::StableAdmissible {
        return Err(Error::Internal(format!(
            "adjoint equilibrium is not a stable admissible root: {rec:?}"
        )));
    }
    let residual = frame.h(rec.theta).abs() / rec.radius;
    if residual > opts.adjoint_tol {
        return Err(Error::Internal(format!(
            "polished equilibrium has |H|/r = {residual:e} above adjoint_tol"
        )));
    }
    Ok(Some(rec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub epsilon: f64,
    pub err_x: f64,
    pub err_v: f64,
    /// Empirical order against the previous (larger) ε.
    pub order_x: Option<f64>,
    pub order_v: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    /// The reference run terminated before its horizon.
    pub partial: bool,
}

/// Sup-norm errors of ε-runs against a degenerate reference at the
/// reference sample times, skipping `jump_exclusion`-neighbourhoods of
/// reference events (default `50 ε`). Velocity errors skip the initial time.
pub fn sweep_epsilon(
    initial: &PhaseState,
    params: &ModelParams,
    eps_list: &[f64],
    template: &EpsParams,
    reference: &TrajectoryLog,
    jump_exclusion: Option<f64>,
) -> Result<SweepTable> {
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("eps_list must be strictly decreasing".into()));
    }
    if reference.samples.is_empty() {
        return Err(Error::Config("reference log has no samples".into()));
    }
    let t0 = initial.time;
    let errors: Vec<Result<(f64, f64)>> = eps_list
        .par_iter()
        .map(|&epsilon| {
            let eps = EpsParams {
                epsilon,
                ..*template
            };
            let excl = jump_exclusion.unwrap_or(50.0 * epsilon);
            let mut integ = RelaxationIntegrator::new(initial.clone(), params, eps)?;
            let (mut ex, mut ev) = (0.0f64, 0.0f64);
            for sample in &reference.samples {
                if sample.time < t0 {
                    continue;
                }
                if reference
                    .events
                    .iter()
                    .any(|e| (sample.time - e.time).abs() <= excl)
                {
                    continue;
                }
                let st = integ.advance_to(sample.time)?;
                for i in 0..st.positions.len() {
                    let dx = [
                        st.positions[i][0] - sample.positions[i][0],
                        st.positions[i][1] - sample.positions[i][1],
                    ];
                    ex = ex.max(norm(&dx));
                    if sample.time > t0 {
                        let dv = [
                            st.velocities[i][0] - sample.velocities[i][0],
                            st.velocities[i][1] - sample.velocities[i][1],
                        ];
                        ev = ev.max(norm(&dv));
                    }
                }
            }
            Ok((ex, ev))
        })
        .collect();

    let mut rows: Vec<SweepRow> = Vec::with_capacity(eps_list.len());
    for (k, (&epsilon, res)) in eps_list.iter().zip(errors).enumerate() {
        let (err_x, err_v) = res?;
        let order = |prev: f64, cur: f64| {
            let ratio = eps_list[k - 1] / epsilon;
            (prev / cur).ln() / ratio.ln()
        };
        let (order_x, order_v) = if k == 0 {
            (None, None)
        } else {
            let p = &rows[k - 1];
            (Some(order(p.err_x, err_x)), Some(order(p.err_v, err_v)))
        };
        rows.push(SweepRow {
            epsilon,
            err_x,
            err_v,
            order_x,
            order_v,
        });
    }
    Ok(SweepTable {
        rows,
        partial: reference.termination != Termination::ReachedTEnd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{KernelParams, VisionParams};
    use crate::polar::enumerate_roots;
    use crate::scenario::seeded_positions;

    fn params(n: usize) -> ModelParams {
        ModelParams::new(n, KernelParams::default(), VisionParams::default()).unwrap()
    }

    /// Positions and the largest stable root of every particle.
    fn on_roots(seed: u64, n: usize, box_size: f64) -> (Vec<[f64; 2]>, Vec<RootRecord>) {
        let p = params(n);
        let x = seeded_positions(seed, n, box_size);
        let roots = (0..n)
            .map(|i| {
                enumerate_roots(i, &x, &p, &RootOptions::default())
                    .unwrap()
                    .into_iter()
                    .filter(|r| r.classification == RootClass::StableAdmissible)
                    .max_by(|a, b| a.radius.total_cmp(&b.radius))
                    .unwrap()
            })
            .collect();
        (x, roots)
    }

    fn state_on_roots(seed: u64, n: usize, box_size: f64) -> PhaseState {
        let (positions, roots) = on_roots(seed, n, box_size);
        PhaseState {
            time: 0.0,
            positions,
            velocities: roots.iter().map(RootRecord::velocity).collect(),
        }
    }

    #[test]
    fn fixed_point_has_zero_acceleration() {
        let p = params(4);
        let s = state_on_roots(13, 4, 2.0);
        let eps = EpsParams::default();
        let (dx, dv) = eps_rhs(&s, &p, &eps).unwrap();
        assert_eq!(dx, s.velocities);
        for a in dv {
            assert!(norm(&a) <= 1e-10 / eps.epsilon, "{a:?}");
        }
    }

    #[test]
    fn doubling_epsilon_halves_acceleration() {
        let p = params(3);
        let mut s = state_on_roots(5, 3, 2.0);
        s.velocities[0] = [0.01, -0.02];
        let e1 = EpsParams::default();
        let e2 = EpsParams {
            epsilon: 2.0 * e1.epsilon,
            ..e1
        };
        let (_, a1) = eps_rhs(&s, &p, &e1).unwrap();
        let (_, a2) = eps_rhs(&s, &p, &e2).unwrap();
        for (u, w) in a1.iter().zip(&a2) {
            assert_eq!(u[0], 2.0 * w[0]);
            assert_eq!(u[1], 2.0 * w[1]);
        }
    }

    #[test]
    fn coincident_positions_are_rejected() {
        let p = params(2);
        let r = relaxation_forces(
            &[[0.0, 0.0], [0.0, 0.0]],
            &[[1.0, 0.0], [0.0, 1.0]],
            &p,
            1e-12,
        );
        assert!(matches!(r, Err(Error::Coincident(0, 1))));
    }

    #[test]
    fn step_factor_must_resolve_fast_scale() {
        let bad = EpsParams {
            dt_factor: 0.5,
            ..EpsParams::default()
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidParams(_))));
        assert!(EpsParams::default().validate().is_ok());
    }

    #[test]
    fn spectral_radius_matches_closed_form_eigenvalues() {
        // At a root the eigenvalues of D_v F are -1 and H'/r.
        let p = params(4);
        let (x, roots) = on_roots(13, 4, 2.0);
        let v: Vec<[f64; 2]> = roots.iter().map(RootRecord::velocity).collect();
        let expected = roots
            .iter()
            .map(|r| (r.slope / r.radius).abs().max(1.0))
            .fold(0.0, f64::max);
        let rho = fast_spectral_radius(&x, &v, &p, 1e-12).unwrap();
        assert!(
            (rho - expected).abs() <= 1e-6 * expected,
            "{rho} vs {expected}"
        );
    }

    #[test]
    fn advance_to_lands_on_requested_time_without_moving_the_grid() {
        let p = params(4);
        let s = state_on_roots(13, 4, 2.0);
        let eps = EpsParams {
            epsilon: 1e-2,
            ..EpsParams::default()
        };
        let mut a = RelaxationIntegrator::new(s.clone(), &p, eps).unwrap();
        let mut b = RelaxationIntegrator::new(s, &p, eps).unwrap();
        let mid = a.advance_to(0.0105).unwrap();
        assert_eq!(mid.time, 0.0105);
        let x = a.advance_to(0.02).unwrap();
        for _ in 0..20 {
            b.step().unwrap();
        }
        assert!((b.state().time - 0.02).abs() < 1e-15);
        assert_eq!(x.positions, b.state().positions);
    }

    #[test]
    fn relaxation_log_is_ordered_and_reaches_t_end() {
        let p = params(3);
        let s = state_on_roots(7, 3, 2.0);
        let eps = EpsParams {
            epsilon: 1e-2,
            t_end: 0.3,
            ..EpsParams::default()
        };
        let log = run_relaxation(&s, &p, &eps).unwrap();
        assert_eq!(log.termination, Termination::ReachedTEnd);
        assert!(log.samples.windows(2).all(|w| w[0].time < w[1].time));
        assert!((log.last_state().time - 0.3).abs() < 1e-12);
        assert!(log.events.is_empty());
    }

    #[test]
    fn adjoint_started_on_stable_root_returns_it() {
        let p = params(4);
        let (x, roots) = on_roots(13, 4, 2.0);
        for (i, root) in roots.iter().enumerate() {
            let res = adjoint_flow(
                &x,
                root.velocity(),
                i,
                &p,
                &RootOptions::default(),
                &AdjointOptions::default(),
                false,
            )
            .unwrap();
            assert!(angle_diff(res.theta, root.theta).abs() <= 1e-8);
            assert!((res.radius - root.radius).abs() <= 1e-8 * root.radius);
            assert!(res.slope < 0.0);
        }
    }

    #[test]
    fn adjoint_leaves_unstable_root_along_the_sign_of_h() {
        // Particle 1 of this configuration has stable roots on both sides of
        // an unstable one.
        let p = params(4);
        let x = seeded_positions(18, 4, 2.0);
        let roots = enumerate_roots(1, &x, &p, &RootOptions::default()).unwrap();
        let unstable = roots
            .iter()
            .find(|r| r.classification == RootClass::UnstableAdmissible)
            .unwrap();
        let frame = ParticleFrame::new(1, &x, &p).unwrap();
        let mut landed = Vec::new();
        for d in [-1e-6, 1e-6] {
            let th = unstable.theta + d;
            let v0 = [unstable.radius * th.cos(), unstable.radius * th.sin()];
            let res = adjoint_flow(
                &x,
                v0,
                1,
                &p,
                &RootOptions::default(),
                &AdjointOptions::default(),
                false,
            )
            .unwrap();
            assert!(res.slope < 0.0);
            assert!(angle_diff(res.theta, unstable.theta).abs() > 1e-3);
            // H > 0 turns the heading counterclockwise.
            let side = angle_diff(res.theta, unstable.theta).signum();
            assert_eq!(side, frame.h(th).signum());
            landed.push(res.theta);
        }
        assert!(angle_diff(landed[0], landed[1]).abs() > 1e-3);
    }

    #[test]
    fn adjoint_rejects_start_below_floor() {
        let p = params(4);
        let x = seeded_positions(13, 4, 2.0);
        let r = adjoint_flow(
            &x,
            [1e-9, 0.0],
            0,
            &p,
            &RootOptions::default(),
            &AdjointOptions::default(),
            false,
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn sweep_requires_decreasing_epsilons() {
        let p = params(3);
        let s = state_on_roots(7, 3, 2.0);
        let reference = TrajectoryLog::new(s.clone());
        let r = sweep_epsilon(
            &s,
            &p,
            &[1e-3, 1e-2],
            &EpsParams::default(),
            &reference,
            None,
        );
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
