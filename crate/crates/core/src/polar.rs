//! Two-dimensional polar reduction of the implicit velocity equation.
//!
//! Writing `v_i = r [cos θ, sin θ]`, the fixed-point equation splits into a
//! scalar equation `H_i(θ) = 0` for the heading and the explicit radius
//! `r = R_i(θ)`. A root is admissible when `R_i > 0`, simple when
//! `H_i' != 0`, and positively stable (an attractor of the adjoint flow)
//! when `H_i' < 0`.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, check_layout, neighbour_pairs, norm, ModelParams, VisionParams};

/// Tolerances for root enumeration and continuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RootOptions {
    pub grid_n: usize,
    pub root_tol: f64,
    pub slope_tol: f64,
    pub tangency_tol: f64,
    pub max_newton: usize,
    /// Largest heading change accepted from one continuation call.
    pub max_drift: f64,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            grid_n: 1024,
            root_tol: 1e-12,
            slope_tol: 1e-8,
            tangency_tol: 1e-10,
            max_newton: 50,
            max_drift: PI / 8.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RootClass {
    StableAdmissible,
    UnstableAdmissible,
    Inadmissible,
    Degenerate,
}

impl RootClass {
    /// Degeneracy is checked first, then admissibility, then the slope sign.
    pub fn classify(radius: f64, slope: f64, slope_tol: f64) -> Self {
        if slope.abs() <= slope_tol {
            RootClass::Degenerate
        } else if radius <= 0.0 {
            RootClass::Inadmissible
        } else if slope < 0.0 {
            RootClass::StableAdmissible
        } else {
            RootClass::UnstableAdmissible
        }
    }

    pub fn is_admissible(self) -> bool {
        matches!(
            self,
            RootClass::StableAdmissible | RootClass::UnstableAdmissible
        )
    }
}

/// A root `θ` of `H_i` with its radius `R_i(θ)` and slope `H_i'(θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RootRecord {
    pub theta: f64,
    pub radius: f64,
    pub slope: f64,
    pub classification: RootClass,
}

impl RootRecord {
    pub fn velocity(&self) -> [f64; 2] {
        [
            self.radius * self.theta.cos(),
            self.radius * self.theta.sin(),
        ]
    }
}

/// A generalized fixed point with `v = 0`: a direction `s` with `|s| <= 1`
/// for which the weighted interaction sum vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RestSolution {
    pub direction: [f64; 2],
    pub residual_norm: f64,
    /// `|s| = 1` (a simultaneous root of `H` and `R`) rather than an interior point.
    pub on_boundary: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarTerms {
    pub h: f64,
    pub r: f64,
    pub h_prime: f64,
    pub r_prime: f64,
}

/// Wrap an angle into `[-π, π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let w = (theta + PI).rem_euclid(TAU) - PI;
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Signed shortest angular difference `a - b` in `[-π, π)`.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    wrap_angle(a - b)
}

/// Neighbour data for one particle at a frozen configuration.
///
/// Caches `u_ij` and `K'(|x_i - x_j|)` so that repeated evaluations of
/// `H_i`, `R_i` and their derivatives cost one vision evaluation per neighbour.
#[derive(Debug, Clone)]
pub struct ParticleFrame {
    pairs: Vec<([f64; 2], f64)>,
    scale: f64,
    vision: VisionParams,
}

impl ParticleFrame {
    pub fn new(i: usize, positions: &[[f64; 2]], params: &ModelParams) -> Result<Self> {
        if params.dimension != 2 {
            return Err(Error::UnsupportedDimension(params.dimension));
        }
        check_layout(i, positions, params)?;
        Ok(Self {
            pairs: neighbour_pairs(i, positions, &params.kernel)?,
            scale: -1.0 / params.n_particles as f64,
            vision: params.vision,
        })
    }

    /// `H`, `R`, `H'` and `R'` at `θ`.
    #[inline]
    pub fn eval(&self, theta: f64) -> PolarTerms {
        let (sin, cos) = theta.sin_cos();
        let mut t = PolarTerms {
            h: 0.0,
            r: 0.0,
            h_prime: 0.0,
            r_prime: 0.0,
        };
        for (u, f) in &self.pairs {
            let along = (u[0] * cos + u[1] * sin).clamp(-1.0, 1.0);
            let across = -u[0] * sin + u[1] * cos;
            let (g, dg) = self.vision.weight_and_deriv(along);
            t.h += f * across * g;
            t.r += f * along * g;
            t.h_prime += f * (-along * g + across * across * dg);
            t.r_prime += f * (across * g + along * across * dg);
        }
        t.h *= self.scale;
        t.r *= self.scale;
        t.h_prime *= self.scale;
        t.r_prime *= self.scale;
        t
    }

    #[inline]
    pub fn h(&self, theta: f64) -> f64 {
        let (sin, cos) = theta.sin_cos();
        let mut h = 0.0;
        for (u, f) in &self.pairs {
            let along = (u[0] * cos + u[1] * sin).clamp(-1.0, 1.0);
            let across = -u[0] * sin + u[1] * cos;
            h += f * across * self.vision.weight_unchecked(along);
        }
        h * self.scale
    }

    /// Weighted interaction sum for a direction `s` (`|s| <= 1`) and its Jacobian in `s`.
    pub fn interaction(&self, s: [f64; 2]) -> ([f64; 2], [[f64; 2]; 2]) {
        let mut g_sum = [0.0; 2];
        let mut jac = [[0.0; 2]; 2];
        for (u, f) in &self.pairs {
            let along = (u[0] * s[0] + u[1] * s[1]).clamp(-1.0, 1.0);
            let (g, dg) = self.vision.weight_and_deriv(along);
            for a in 0..2 {
                g_sum[a] += self.scale * f * u[a] * g;
                for b in 0..2 {
                    jac[a][b] += self.scale * f * dg * u[a] * u[b];
                }
            }
        }
        (g_sum, jac)
    }

    fn record(&self, theta: f64, opts: &RootOptions) -> RootRecord {
        let t = self.eval(theta);
        RootRecord {
            theta: wrap_angle(theta),
            radius: t.r,
            slope: t.h_prime,
            classification: RootClass::classify(t.r, t.h_prime, opts.slope_tol),
        }
    }
}

/// `H_i(θ)`: projection of the weighted interaction sum on `[-sin θ, cos θ]`.
pub fn h_of_theta(
    i: usize,
    positions: &[[f64; 2]],
    theta: f64,
    params: &ModelParams,
) -> Result<f64> {
    Ok(ParticleFrame::new(i, positions, params)?.h(theta))
}

/// `R_i(θ)`: projection of the weighted interaction sum on `[cos θ, sin θ]`.
pub fn r_of_theta(
    i: usize,
    positions: &[[f64; 2]],
    theta: f64,
    params: &ModelParams,
) -> Result<f64> {
    Ok(ParticleFrame::new(i, positions, params)?.eval(theta).r)
}

/// Analytic `dH_i/dθ`.
pub fn h_prime(i: usize, positions: &[[f64; 2]], theta: f64, params: &ModelParams) -> Result<f64> {
    Ok(ParticleFrame::new(i, positions, params)?
        .eval(theta)
        .h_prime)
}

fn bisect_sign_change(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, width: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        if b - a <= width {
            break;
        }
        let m = 0.5 * (a + b);
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// All roots of `H_i` on `[-π, π)`, sorted by angle.
///
/// Roots are bracketed by sign changes on a uniform grid, bisected to width
/// `1e-13` and polished with Newton. Sign-preserving local minima of `|H_i|`
/// below `tangency_tol` are reported as [`RootClass::Degenerate`].
pub fn enumerate_roots(
    i: usize,
    positions: &[[f64; 2]],
    params: &ModelParams,
    opts: &RootOptions,
) -> Result<Vec<RootRecord>> {
    if opts.grid_n < 8 {
        return Err(Error::Config(format!(
            "grid_n must be at least 8, got {}",
            opts.grid_n
        )));
    }
    let frame = ParticleFrame::new(i, positions, params)?;
    Ok(enumerate_frame(&frame, opts))
}

pub(crate) fn enumerate_frame(frame: &ParticleFrame, opts: &RootOptions) -> Vec<RootRecord> {
    let n = opts.grid_n;
    let step = TAU / n as f64;
    let grid: Vec<f64> = (0..n).map(|k| -PI + step * k as f64).collect();
    let values: Vec<f64> = grid.iter().map(|&t| frame.h(t)).collect();
    let mut roots = Vec::new();

    for k in 0..n {
        let (a, b) = (grid[k], grid[k] + step);
        let (fa, fb) = (values[k], values[(k + 1) % n]);
        if fa == 0.0 {
            roots.push(frame.record(a, opts));
            continue;
        }
        if fb == 0.0 || (fa < 0.0) == (fb < 0.0) {
            continue;
        }
        let mut theta = bisect_sign_change(|t| frame.h(t), a, b, 1e-13);
        for _ in 0..4 {
            let t = frame.eval(theta);
            if t.h == 0.0 || t.h_prime == 0.0 {
                break;
            }
            let next = theta - t.h / t.h_prime;
            if !(next >= a - 1e-12 && next <= b + 1e-12) || frame.h(next).abs() > t.h.abs() {
                break;
            }
            theta = next;
        }
        roots.push(frame.record(theta, opts));
    }

    // Near-tangencies: |H| has a sign-preserving local minimum close to zero.
    for k in 0..n {
        let prev = values[(k + n - 1) % n];
        let (cur, next) = (values[k], values[(k + 1) % n]);
        let same_sign =
            (prev > 0.0 && cur > 0.0 && next > 0.0) || (prev < 0.0 && cur < 0.0 && next < 0.0);
        if !same_sign || cur.abs() > prev.abs() || cur.abs() > next.abs() {
            continue;
        }
        let (a, b) = (grid[k] - step, grid[k] + step);
        let sign = cur.signum();
        let slope = |t: f64| sign * frame.eval(t).h_prime;
        if !(slope(a) <= 0.0 && slope(b) >= 0.0) {
            continue;
        }
        let theta = bisect_sign_change(slope, a, b, 1e-13);
        let t = frame.eval(theta);
        if t.h.abs() <= opts.tangency_tol {
            roots.push(RootRecord {
                theta: wrap_angle(theta),
                radius: t.r,
                slope: t.h_prime,
                classification: RootClass::Degenerate,
            });
        }
    }

    roots.sort_by(|a, b| a.theta.total_cmp(&b.theta));
    roots.dedup_by(|a, b| angle_diff(a.theta, b.theta).abs() < 1e-10);
    roots
}

/// Why continuation of a root failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LostReason {
    /// Newton hit the iteration cap or produced a non-finite iterate.
    Diverged,
    /// Newton left the drift window around the previous heading.
    Drift,
    /// `|H'|` fell to `slope_tol` or below.
    Degenerate,
    /// The slope changed sign: Newton landed on a different branch.
    BranchSwitch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TrackOutcome {
    Tracked(RootRecord),
    Lost { reason: LostReason, last_theta: f64 },
}

/// Continue a root of `H_i` from a nearby heading by Newton iteration.
pub fn track_root(
    i: usize,
    positions: &[[f64; 2]],
    theta_prev: f64,
    params: &ModelParams,
    opts: &RootOptions,
) -> Result<TrackOutcome> {
    let frame = ParticleFrame::new(i, positions, params)?;
    Ok(track_frame(&frame, theta_prev, opts))
}

pub(crate) fn track_frame(
    frame: &ParticleFrame,
    theta_prev: f64,
    opts: &RootOptions,
) -> TrackOutcome {
    let lost = |reason, last_theta| TrackOutcome::Lost { reason, last_theta };
    let mut theta = theta_prev;
    let mut initial_sign = 0.0;
    for iter in 0..=opts.max_newton {
        let t = frame.eval(theta);
        if !t.h.is_finite() || !t.h_prime.is_finite() {
            return lost(LostReason::Diverged, theta);
        }
        if t.h_prime.abs() <= opts.slope_tol {
            return lost(LostReason::Degenerate, theta);
        }
        if iter == 0 {
            initial_sign = t.h_prime.signum();
        }
        if t.h.abs() <= opts.root_tol {
            if t.h_prime.signum() != initial_sign {
                return lost(LostReason::BranchSwitch, theta);
            }
            // Extra Newton steps while they still reduce |H|.
            let mut t = t;
            for _ in 0..3 {
                if t.h == 0.0 {
                    break;
                }
                let next = theta - t.h / t.h_prime;
                let tn = frame.eval(next);
                if !(tn.h.abs() < t.h.abs()) {
                    break;
                }
                theta = next;
                t = tn;
            }
            return TrackOutcome::Tracked(RootRecord {
                theta: wrap_angle(theta),
                radius: t.r,
                slope: t.h_prime,
                classification: RootClass::classify(t.r, t.h_prime, opts.slope_tol),
            });
        }
        if iter == opts.max_newton {
            break;
        }
        theta -= t.h / t.h_prime;
        if angle_diff(theta, theta_prev).abs() > opts.max_drift {
            return lost(LostReason::Drift, theta);
        }
    }
    lost(LostReason::Diverged, theta)
}

/// Options for the generalized (rest) fixed-point search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RestOptions {
    pub rest_tol: f64,
    /// Newton starts per axis on the disk grid.
    pub grid: usize,
    pub max_newton: usize,
    pub dedup_dist: f64,
}

impl Default for RestOptions {
    fn default() -> Self {
        Self {
            rest_tol: 1e-12,
            grid: 32,
            max_newton: 50,
            dedup_dist: 1e-8,
        }
    }
}

/// All `s` with `|s| <= 1` such that `v = 0` solves the generalized fixed-point equation.
pub fn rest_solutions(
    i: usize,
    positions: &[[f64; 2]],
    params: &ModelParams,
    root_opts: &RootOptions,
    opts: &RestOptions,
) -> Result<Vec<RestSolution>> {
    let frame = ParticleFrame::new(i, positions, params)?;
    let mut found: Vec<RestSolution> = Vec::new();
    let push = |cand: RestSolution, found: &mut Vec<RestSolution>| {
        let dup = found.iter().any(|f| {
            let d = [
                f.direction[0] - cand.direction[0],
                f.direction[1] - cand.direction[1],
            ];
            norm(&d) < opts.dedup_dist
        });
        if !dup {
            found.push(cand);
        }
    };

    // Boundary: simultaneous roots of H and R.
    if root_opts.grid_n < 8 {
        return Err(Error::Config("grid_n must be at least 8".into()));
    }
    for root in enumerate_frame(&frame, root_opts) {
        let s = [root.theta.cos(), root.theta.sin()];
        let (g, _) = frame.interaction(s);
        let res = norm(&g);
        if res <= opts.rest_tol {
            push(
                RestSolution {
                    direction: s,
                    residual_norm: res,
                    on_boundary: true,
                },
                &mut found,
            );
        }
    }

    // Interior: Newton on the 2D map from a grid of starts inside the disk.
    let m = opts.grid.max(1);
    for a in 0..m {
        for b in 0..m {
            let s0 = [
                -1.0 + (2.0 * a as f64 + 1.0) / m as f64,
                -1.0 + (2.0 * b as f64 + 1.0) / m as f64,
            ];
            if norm(&s0) >= 1.0 {
                continue;
            }
            if let Some(sol) = newton_rest(&frame, s0, opts) {
                push(sol, &mut found);
            }
        }
    }
    Ok(found)
}

fn newton_rest(frame: &ParticleFrame, mut s: [f64; 2], opts: &RestOptions) -> Option<RestSolution> {
    for _ in 0..=opts.max_newton {
        let (g, j) = frame.interaction(s);
        let res = norm(&g);
        if res <= opts.rest_tol {
            let len = norm(&s);
            if len > 1.0 + 1e-12 {
                return None;
            }
            return Some(RestSolution {
                direction: s,
                residual_norm: res,
                on_boundary: (len - 1.0).abs() <= 1e-12,
            });
        }
        let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
        if !(det.abs() > 1e-300) || !det.is_finite() {
            return None;
        }
        let ds0 = (j[1][1] * g[0] - j[0][1] * g[1]) / det;
        let ds1 = (-j[1][0] * g[0] + j[0][0] * g[1]) / det;
        s = [s[0] - ds0, s[1] - ds1];
        if !(norm(&s) <= 1.5) {
            return None;
        }
    }
    None
}

/// Options for the α-regularized damped fixed-point iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AlphaOptions {
    pub damping: f64,
    pub max_iter: usize,
    /// Final iterates with `|v| <= rest_factor * α_last` are certified as rest states.
    pub rest_factor: f64,
    pub residual_tol: f64,
}

impl Default for AlphaOptions {
    fn default() -> Self {
        Self {
            damping: 0.5,
            max_iter: 200_000,
            rest_factor: 100.0,
            residual_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AlphaCertificate {
    /// A non-zero solution of the implicit equation.
    Moving {
        velocity: [f64; 2],
        residual_norm: f64,
    },
    /// The iterates collapse to `v = 0`; `direction` is the limit of `v/(α + |v|)`.
    Rest {
        direction: [f64; 2],
        residual_norm: f64,
        last_iterate: [f64; 2],
    },
}

/// Generalized fixed point through the α-regularized map
/// `v -> -(1/N) sum_j ∇K g(u_ij . v/(α + |v|))`, iterated with damping along
/// a decreasing α schedule and warm-started between α values.
pub fn alpha_fixed_point(
    i: usize,
    positions: &[[f64; 2]],
    params: &ModelParams,
    alpha_schedule: &[f64],
    initial: [f64; 2],
    root_opts: &RootOptions,
    opts: &AlphaOptions,
) -> Result<AlphaCertificate> {
    if alpha_schedule.is_empty() || alpha_schedule[0] > 1.0 {
        return Err(Error::Config(
            "alpha schedule must be non-empty with first entry <= 1".into(),
        ));
    }
    if alpha_schedule
        .windows(2)
        .any(|w| !(w[1] < w[0]) || !(w[1] > 0.0))
        || !(alpha_schedule[0] > 0.0)
    {
        return Err(Error::Config(
            "alpha schedule must be positive and strictly decreasing".into(),
        ));
    }
    let frame = ParticleFrame::new(i, positions, params)?;
    let omega = opts.damping;
    let mut v = initial;
    for &alpha in alpha_schedule {
        let map = |v: [f64; 2]| {
            let scale = 1.0 / (alpha + norm(&v));
            frame.interaction([v[0] * scale, v[1] * scale]).0
        };
        let mut converged = false;
        for _ in 0..opts.max_iter {
            let fv = map(v);
            let gap = norm(&[v[0] - fv[0], v[1] - fv[1]]);
            if gap <= alpha * 1e-3 {
                converged = true;
                break;
            }
            v = [
                (1.0 - omega) * v[0] + omega * fv[0],
                (1.0 - omega) * v[1] + omega * fv[1],
            ];
        }
        if !converged {
            return Err(Error::NonConvergence(format!(
                "alpha iteration stalled at alpha = {alpha:e}, last iterate {v:?}"
            )));
        }
    }

    let alpha_last = *alpha_schedule.last().unwrap();
    let speed = norm(&v);
    if speed <= opts.rest_factor * alpha_last {
        let scale = 1.0 / (alpha_last + speed);
        let s = [v[0] * scale, v[1] * scale];
        let (g, _) = frame.interaction(s);
        return Ok(AlphaCertificate::Rest {
            direction: s,
            residual_norm: norm(&g),
            last_iterate: v,
        });
    }

    // The α fixed point is O(α/|v|) away from a true root; polish the heading.
    let heading = v[1].atan2(v[0]);
    let velocity = match track_frame(&frame, heading, root_opts) {
        TrackOutcome::Tracked(rec) if rec.radius > 0.0 => rec.velocity(),
        _ => v,
    };
    let res = model::residual(i, positions, &velocity, params)?;
    let residual_norm = norm(&res);
    if residual_norm > opts.residual_tol {
        return Err(Error::NonConvergence(format!(
            "alpha limit {velocity:?} has residual {residual_norm:e}"
        )));
    }
    Ok(AlphaCertificate::Moving {
        velocity,
        residual_norm,
    })
}

/// Eigenvalues `(-1, H'(θ*)/r*)` of `D_v F_i` at an admissible root.
pub fn jacobian_eigenvalues(root: &RootRecord) -> Result<[f64; 2]> {
    if !(root.radius > 0.0) {
        return Err(Error::Domain(format!(
            "eigenvalues need an admissible root, radius = {}",
            root.radius
        )));
    }
    Ok([-1.0, root.slope / root.radius])
}

/// Central-difference Jacobian of the residual in `v`, for verification.
pub fn residual_jacobian_fd(
    i: usize,
    positions: &[[f64; 2]],
    v: [f64; 2],
    params: &ModelParams,
) -> Result<[[f64; 2]; 2]> {
    let h = 1e-6 * norm(&v).max(1e-3);
    let mut jac = [[0.0; 2]; 2];
    for b in 0..2 {
        let mut plus = v;
        let mut minus = v;
        plus[b] += h;
        minus[b] -= h;
        let fp = model::residual(i, positions, &plus, params)?;
        let fm = model::residual(i, positions, &minus, params)?;
        for a in 0..2 {
            jac[a][b] = (fp[a] - fm[a]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Eigenvalues of a real 2×2 matrix as `(re, im)` pairs, ordered by real part.
pub fn eigenvalues_2x2(m: [[f64; 2]; 2]) -> [(f64, f64); 2] {
    let tr = m[0][0] + m[1][1];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    let disc = 0.25 * tr * tr - det;
    if disc >= 0.0 {
        let root = disc.sqrt();
        // Stable form: avoid cancellation in the smaller-magnitude eigenvalue.
        let big = 0.5 * tr + root.copysign(tr);
        let small = if big != 0.0 { det / big } else { 0.0 };
        let (a, b) = if big <= small {
            (big, small)
        } else {
            (small, big)
        };
        [(a, 0.0), (b, 0.0)]
    } else {
        let im = (-disc).sqrt();
        [(0.5 * tr, -im), (0.5 * tr, im)]
    }
}

/// Verified eigenvalues: closed form plus the finite-difference cross-check.
pub fn jacobian_eigenvalues_checked(
    i: usize,
    positions: &[[f64; 2]],
    root: &RootRecord,
    params: &ModelParams,
) -> Result<([f64; 2], [(f64, f64); 2])> {
    let closed = jacobian_eigenvalues(root)?;
    let jac = residual_jacobian_fd(i, positions, root.velocity(), params)?;
    Ok((closed, eigenvalues_2x2(jac)))
}
