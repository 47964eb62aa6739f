//! Model parameters, the Morse interaction kernel, vision weights and the
//! implicit-velocity residual.
//!
//! The velocity of particle `i` is defined implicitly by
//!
//! ```text
//! v_i = -(1/N) sum_{j != i} K'(|x_i - x_j|) u_ij g(u_ij . v_i/|v_i|),   u_ij = (x_i - x_j)/|x_i - x_j|
//! ```
//!
//! and [`residual`] returns the defect of that equation. Functions here are
//! generic over the spatial dimension; the polar root machinery in
//! [`crate::polar`] is two-dimensional.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on |s| - 1 for dot products fed to the vision function.
pub const DOT_CLAMP_TOL: f64 = 1e-12;

/// Morse potential `K(r) = -C_a exp(-r/l_a) + C_r exp(-r/l_r)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub c_attract: f64,
    pub c_repulse: f64,
    pub l_attract: f64,
    pub l_repulse: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            c_attract: 3.0,
            c_repulse: 2.0,
            l_attract: 2.0,
            l_repulse: 1.0,
        }
    }
}

impl KernelParams {
    pub fn new(c_attract: f64, c_repulse: f64, l_attract: f64, l_repulse: f64) -> Result<Self> {
        let k = Self {
            c_attract,
            c_repulse,
            l_attract,
            l_repulse,
        };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.c_attract,
            self.c_repulse,
            self.l_attract,
            self.l_repulse,
        ];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParams(format!(
                "kernel parameters must be finite and positive, got {self:?}"
            )))
        }
    }

    #[inline]
    pub(crate) fn value_unchecked(&self, r: f64) -> f64 {
        -self.c_attract * (-r / self.l_attract).exp() + self.c_repulse * (-r / self.l_repulse).exp()
    }

    #[inline]
    pub(crate) fn deriv_unchecked(&self, r: f64) -> f64 {
        self.c_attract / self.l_attract * (-r / self.l_attract).exp()
            - self.c_repulse / self.l_repulse * (-r / self.l_repulse).exp()
    }

    /// Radius where `K'` changes sign from repulsive to attractive, if any.
    pub fn sign_change_radius(&self) -> Option<f64> {
        // (C_a/l_a) e^{-r/l_a} = (C_r/l_r) e^{-r/l_r}
        let ratio = (self.c_repulse / self.l_repulse) / (self.c_attract / self.l_attract);
        let rate = 1.0 / self.l_repulse - 1.0 / self.l_attract;
        if rate == 0.0 {
            return None;
        }
        let r = ratio.ln() / rate;
        (r > 0.0 && r.is_finite()).then_some(r)
    }

    /// `sup_{r >= 0} |K'(r)|` by grid scan over `[0, 50 max(l_a, l_r)]`.
    ///
    /// Both exponentials have decayed by `e^{-50}` at the right end, so the
    /// interior extremum and the `r = 0` endpoint are inside the scanned range.
    pub fn deriv_sup_norm(&self) -> f64 {
        const SAMPLES: usize = 200_000;
        let r_max = 50.0 * self.l_attract.max(self.l_repulse);
        (0..=SAMPLES)
            .map(|k| {
                self.deriv_unchecked(r_max * k as f64 / SAMPLES as f64)
                    .abs()
            })
            .fold(0.0, f64::max)
    }
}

/// `K(r)`.
pub fn kernel_value(r: f64, kernel: &KernelParams) -> Result<f64> {
    check_radius(r)?;
    Ok(kernel.value_unchecked(r))
}

/// `K'(r)`; negative values are repulsive, positive values attractive.
pub fn kernel_deriv(r: f64, kernel: &KernelParams) -> Result<f64> {
    check_radius(r)?;
    Ok(kernel.deriv_unchecked(r))
}

fn check_radius(r: f64) -> Result<()> {
    if r >= 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "kernel radius must be >= 0, got {r}"
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisionForm {
    /// `[tanh(a(-s + 1 - b/pi)) + 1] / c` with `c` chosen so that `g(-1) = 1`.
    Tanh,
    /// `(-a s + b) / (a + b)`.
    Linear,
    /// `g = 1`: the isotropic model.
    Isotropic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VisionSpec {
    form: VisionForm,
    #[serde(default)]
    steepness: f64,
    #[serde(default)]
    width: f64,
}

/// Vision (field-of-view) weight parameters.
///
/// The argument of the weight is `s = u_ij . v_i/|v_i| = -cos(phi_ij)`, so
/// `s = -1` means the neighbour is dead ahead and `s = +1` dead behind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VisionSpec", into = "VisionSpec")]
pub struct VisionParams {
    pub form: VisionForm,
    pub steepness: f64,
    pub width: f64,
    normalization: f64,
}

impl TryFrom<VisionSpec> for VisionParams {
    type Error = Error;

    fn try_from(spec: VisionSpec) -> Result<Self> {
        match spec.form {
            VisionForm::Tanh => Self::tanh(spec.steepness, spec.width),
            VisionForm::Linear => Self::linear(spec.steepness, spec.width),
            VisionForm::Isotropic => Ok(Self::isotropic()),
        }
    }
}

impl From<VisionParams> for VisionSpec {
    fn from(v: VisionParams) -> Self {
        Self {
            form: v.form,
            steepness: v.steepness,
            width: v.width,
        }
    }
}

impl Default for VisionParams {
    fn default() -> Self {
        Self::tanh(5.0, std::f64::consts::PI).expect("default vision parameters are valid")
    }
}

impl VisionParams {
    pub fn tanh(steepness: f64, width: f64) -> Result<Self> {
        if !(steepness > 0.0 && width > 0.0 && steepness.is_finite() && width.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "tanh vision needs a > 0 and b > 0, got a = {steepness}, b = {width}"
            )));
        }
        let normalization = (steepness * (2.0 - width / std::f64::consts::PI)).tanh() + 1.0;
        Ok(Self {
            form: VisionForm::Tanh,
            steepness,
            width,
            normalization,
        })
    }

    pub fn linear(steepness: f64, width: f64) -> Result<Self> {
        if !(steepness > 0.0 && width > 0.0 && steepness.is_finite() && width.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "linear vision needs a > 0 and b > 0, got a = {steepness}, b = {width}"
            )));
        }
        if width < steepness {
            return Err(Error::InvalidParams(format!(
                "linear vision needs b >= a so that g >= 0, got a = {steepness}, b = {width}"
            )));
        }
        Ok(Self {
            form: VisionForm::Linear,
            steepness,
            width,
            normalization: steepness + width,
        })
    }

    pub fn isotropic() -> Self {
        Self {
            form: VisionForm::Isotropic,
            steepness: 0.0,
            width: 0.0,
            normalization: 1.0,
        }
    }

    /// The constant `c` (tanh), `a + b` (linear) or 1 (isotropic).
    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    #[inline]
    pub(crate) fn weight_unchecked(&self, s: f64) -> f64 {
        match self.form {
            VisionForm::Tanh => {
                let arg = self.steepness * (-s + 1.0 - self.width / std::f64::consts::PI);
                (arg.tanh() + 1.0) / self.normalization
            }
            VisionForm::Linear => (-self.steepness * s + self.width) / self.normalization,
            VisionForm::Isotropic => 1.0,
        }
    }

    #[inline]
    pub(crate) fn weight_deriv_unchecked(&self, s: f64) -> f64 {
        match self.form {
            VisionForm::Tanh => {
                let t = (self.steepness * (-s + 1.0 - self.width / std::f64::consts::PI)).tanh();
                -self.steepness * (1.0 - t * t) / self.normalization
            }
            VisionForm::Linear => -self.steepness / self.normalization,
            VisionForm::Isotropic => 0.0,
        }
    }

    /// `(g, g')` at once; shares the tanh evaluation.
    #[inline]
    pub(crate) fn weight_and_deriv(&self, s: f64) -> (f64, f64) {
        match self.form {
            VisionForm::Tanh => {
                let t = (self.steepness * (-s + 1.0 - self.width / std::f64::consts::PI)).tanh();
                (
                    (t + 1.0) / self.normalization,
                    -self.steepness * (1.0 - t * t) / self.normalization,
                )
            }
            _ => (self.weight_unchecked(s), self.weight_deriv_unchecked(s)),
        }
    }
}

/// Clamp a dot product into `[-1, 1]`, rejecting values beyond the rounding tolerance.
pub fn clamp_dot(s: f64) -> Result<f64> {
    if s.is_nan() || s.abs() > 1.0 + DOT_CLAMP_TOL {
        return Err(Error::Domain(format!(
            "vision argument must lie in [-1, 1], got {s}"
        )));
    }
    Ok(s.clamp(-1.0, 1.0))
}

/// `g(s)`.
pub fn vision_weight(s: f64, vision: &VisionParams) -> Result<f64> {
    Ok(vision.weight_unchecked(clamp_dot(s)?))
}

/// `g'(s)`.
pub fn vision_weight_deriv(s: f64, vision: &VisionParams) -> Result<f64> {
    Ok(vision.weight_deriv_unchecked(clamp_dot(s)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub n_particles: usize,
    pub dimension: usize,
    pub kernel: KernelParams,
    pub vision: VisionParams,
}

impl ModelParams {
    pub fn new(n_particles: usize, kernel: KernelParams, vision: VisionParams) -> Result<Self> {
        let p = Self {
            n_particles,
            dimension: 2,
            kernel,
            vision,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles < 2 {
            return Err(Error::InvalidParams(format!(
                "need at least two particles, got {}",
                self.n_particles
            )));
        }
        if self.dimension == 0 {
            return Err(Error::InvalidParams("dimension must be positive".into()));
        }
        self.kernel.validate()
    }

    /// Same model with `g = 1`.
    pub fn isotropic(&self) -> Self {
        Self {
            vision: VisionParams::isotropic(),
            ..*self
        }
    }
}

/// Positions and velocities of all particles at one time (two dimensions).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub time: f64,
    pub positions: Vec<[f64; 2]>,
    pub velocities: Vec<[f64; 2]>,
}

impl PhaseState {
    pub fn speed(&self, i: usize) -> f64 {
        norm(&self.velocities[i])
    }

    pub fn heading(&self, i: usize) -> f64 {
        let v = self.velocities[i];
        v[1].atan2(v[0])
    }
}

#[inline]
pub(crate) fn norm<const D: usize>(v: &[f64; D]) -> f64 {
    v.iter().map(|c| c * c).sum::<f64>().sqrt()
}

#[inline]
pub(crate) fn dot<const D: usize>(a: &[f64; D], b: &[f64; D]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Smallest pairwise distance.
pub fn min_pair_distance<const D: usize>(positions: &[[f64; D]]) -> f64 {
    let mut best = f64::INFINITY;
    for (i, a) in positions.iter().enumerate() {
        for b in &positions[i + 1..] {
            let mut d = [0.0; D];
            for k in 0..D {
                d[k] = a[k] - b[k];
            }
            best = best.min(norm(&d));
        }
    }
    best
}

pub(crate) fn check_layout<const D: usize>(
    i: usize,
    positions: &[[f64; D]],
    params: &ModelParams,
) -> Result<()> {
    if params.dimension != D {
        return Err(Error::Domain(format!(
            "positions have dimension {D} but the model has dimension {}",
            params.dimension
        )));
    }
    if positions.len() != params.n_particles {
        return Err(Error::Domain(format!(
            "expected {} positions, got {}",
            params.n_particles,
            positions.len()
        )));
    }
    if i >= positions.len() {
        return Err(Error::Domain(format!("particle index {i} out of range")));
    }
    Ok(())
}

/// Unit vector `u_ij` and `K'(|x_i - x_j|)` for every neighbour of `i`.
pub(crate) fn neighbour_pairs<const D: usize>(
    i: usize,
    positions: &[[f64; D]],
    kernel: &KernelParams,
) -> Result<Vec<([f64; D], f64)>> {
    let xi = positions[i];
    let mut out = Vec::with_capacity(positions.len().saturating_sub(1));
    for (j, xj) in positions.iter().enumerate() {
        if j == i {
            continue;
        }
        let mut diff = [0.0; D];
        for k in 0..D {
            diff[k] = xi[k] - xj[k];
        }
        let d = norm(&diff);
        if !(d > 0.0) {
            return Err(Error::Coincident(i.min(j), i.max(j)));
        }
        for c in diff.iter_mut() {
            *c /= d;
        }
        out.push((diff, kernel.deriv_unchecked(d)));
    }
    Ok(out)
}

/// Weighted interaction sum `-(1/N) sum_j K' u_ij g(u_ij . s)` for a direction `s` with `|s| <= 1`.
pub fn interaction<const D: usize>(
    i: usize,
    positions: &[[f64; D]],
    direction: &[f64; D],
    params: &ModelParams,
) -> Result<[f64; D]> {
    check_layout(i, positions, params)?;
    let pairs = neighbour_pairs(i, positions, &params.kernel)?;
    let scale = -1.0 / params.n_particles as f64;
    let mut out = [0.0; D];
    for (u, f) in &pairs {
        let w = params
            .vision
            .weight_unchecked(clamp_dot(dot(u, direction))?);
        for k in 0..D {
            out[k] += scale * f * u[k] * w;
        }
    }
    Ok(out)
}

/// `F_i(x, v) = -v - (1/N) sum_j K'(|x_i - x_j|) u_ij g(u_ij . v/|v|)`.
///
/// A zero return value means `v` solves the implicit velocity equation.
pub fn residual<const D: usize>(
    i: usize,
    positions: &[[f64; D]],
    v: &[f64; D],
    params: &ModelParams,
) -> Result<[f64; D]> {
    let speed = norm(v);
    if !(speed > 0.0) {
        return Err(Error::Domain(
            "residual is undefined at v = 0; use rest_solutions".into(),
        ));
    }
    let mut dir = *v;
    for c in dir.iter_mut() {
        *c /= speed;
    }
    let mut out = interaction(i, positions, &dir, params)?;
    for k in 0..D {
        out[k] -= v[k];
    }
    Ok(out)
}

/// Velocity of particle `i` in the isotropic model (`g = 1`).
pub fn isotropic_velocity<const D: usize>(
    i: usize,
    positions: &[[f64; D]],
    params: &ModelParams,
) -> Result<[f64; D]> {
    check_layout(i, positions, params)?;
    let pairs = neighbour_pairs(i, positions, &params.kernel)?;
    let scale = -1.0 / params.n_particles as f64;
    let mut out = [0.0; D];
    for (u, f) in &pairs {
        for k in 0..D {
            out[k] += scale * f * u[k];
        }
    }
    Ok(out)
}

/// Interaction energy `(1/N) sum_i sum_{j != i} K(|x_i - x_j|)`.
pub fn energy<const D: usize>(positions: &[[f64; D]], params: &ModelParams) -> Result<f64> {
    check_layout(0, positions, params)?;
    let mut total = 0.0;
    for (i, a) in positions.iter().enumerate() {
        for (j, b) in positions.iter().enumerate() {
            if i == j {
                continue;
            }
            let mut diff = [0.0; D];
            for k in 0..D {
                diff[k] = a[k] - b[k];
            }
            let d = norm(&diff);
            if !(d > 0.0) {
                return Err(Error::Coincident(i.min(j), i.max(j)));
            }
            total += params.kernel.value_unchecked(d);
        }
    }
    Ok(total / params.n_particles as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn default_kernel() -> KernelParams {
        KernelParams::default()
    }

    #[test]
    fn kernel_at_origin() {
        let k = default_kernel();
        assert!((kernel_value(0.0, &k).unwrap() + 1.0).abs() < 1e-15);
        assert!((kernel_deriv(0.0, &k).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn kernel_decays_and_cancels() {
        let k = default_kernel();
        assert!(kernel_value(100.0, &k).unwrap().abs() < 1e-12);
        let sym = KernelParams::new(2.0, 2.0, 1.5, 1.5).unwrap();
        for r in [0.0, 0.3, 1.0, 7.0] {
            assert_eq!(kernel_value(r, &sym).unwrap(), 0.0);
        }
    }

    #[test]
    fn kernel_negative_radius_is_domain_error() {
        assert!(matches!(
            kernel_value(-1e-3, &default_kernel()),
            Err(Error::Domain(_))
        ));
        assert!(kernel_deriv(-1.0, &default_kernel()).is_err());
    }

    #[test]
    fn kernel_sign_change_closed_form() {
        let k = default_kernel();
        let r0 = 2.0 * (4.0f64 / 3.0).ln();
        assert!((k.sign_change_radius().unwrap() - r0).abs() < 1e-14);
        assert!(kernel_deriv(r0, &k).unwrap().abs() < 1e-15);
        assert!(kernel_deriv(r0 - 0.1, &k).unwrap() < 0.0);
        assert!(kernel_deriv(r0 + 0.1, &k).unwrap() > 0.0);
    }

    #[test]
    fn kernel_sup_norm_covers_origin() {
        let k = default_kernel();
        let sup = k.deriv_sup_norm();
        assert!(sup >= 0.5);
        // Interior maximum of K' for the default kernel is below the |K'(0)| = 0.5 endpoint.
        assert!(sup < 0.5 + 1e-12);
    }

    #[test]
    fn vision_forms() {
        let t = VisionParams::default();
        assert!((vision_weight(-1.0, &t).unwrap() - 1.0).abs() < 1e-15);
        let behind = vision_weight(1.0, &t).unwrap();
        let expect = ((-5.0f64).tanh() + 1.0) / (5.0f64.tanh() + 1.0);
        assert!((behind - expect).abs() < 1e-18);
        assert!(behind > 4.0e-5 && behind < 5.0e-5);

        let l = VisionParams::linear(1.0, 1.0).unwrap();
        assert_eq!(vision_weight(0.0, &l).unwrap(), 0.5);
        for s in [-1.0, -0.3, 0.0, 0.7, 1.0] {
            assert_eq!(vision_weight_deriv(s, &l).unwrap(), -0.5);
        }
    }

    #[test]
    fn vision_rejects_out_of_range() {
        let t = VisionParams::default();
        assert!(vision_weight(1.0 + 1e-13, &t).is_ok());
        assert!(vision_weight(1.0 + 1e-9, &t).is_err());
        assert!(vision_weight_deriv(-1.1, &t).is_err());
        assert!(VisionParams::linear(2.0, 1.0).is_err());
        assert!(VisionParams::tanh(0.0, 1.0).is_err());
    }

    #[test]
    fn tanh_weight_is_nonincreasing_and_in_unit_interval() {
        let t = VisionParams::default();
        for k in 0..=400 {
            let s = -1.0 + 2.0 * k as f64 / 400.0;
            assert!(vision_weight_deriv(s, &t).unwrap() <= 0.0);
            let g = vision_weight(s, &t).unwrap();
            assert!((0.0..=1.0 + 1e-15).contains(&g));
        }
    }

    #[test]
    fn vision_serde_recomputes_normalization() {
        let t = VisionParams::tanh(2.0, 1.25 * std::f64::consts::PI).unwrap();
        let json = serde_json::to_string(&t).unwrap();
        assert!(!json.contains("normalization"));
        let back: VisionParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, t);
        let bad = r#"{"form":"linear","steepness":2.0,"width":1.0}"#;
        assert!(serde_json::from_str::<VisionParams>(bad).is_err());
    }

    #[test]
    fn residual_rejects_rest_and_coincidence() {
        let p = ModelParams::new(2, default_kernel(), VisionParams::default()).unwrap();
        let x = [[0.0, 0.0], [1.0, 0.0]];
        assert!(matches!(
            residual(0, &x, &[0.0, 0.0], &p),
            Err(Error::Domain(_))
        ));
        let same = [[0.5, 0.5], [0.5, 0.5]];
        assert!(matches!(
            residual(0, &same, &[1.0, 0.0], &p),
            Err(Error::Coincident(0, 1))
        ));
    }

    #[test]
    fn equilibrium_pair_has_zero_isotropic_velocity() {
        let p = ModelParams::new(2, default_kernel(), VisionParams::isotropic()).unwrap();
        let r0 = p.kernel.sign_change_radius().unwrap();
        let x = [[0.0, 0.0], [r0, 0.0]];
        let v = isotropic_velocity(0, &x, &p).unwrap();
        assert!(norm(&v) < 1e-15);
    }

    #[test]
    fn isotropic_fixed_point_and_reduction() {
        let p = ModelParams::new(3, default_kernel(), VisionParams::isotropic()).unwrap();
        let x = [[0.0, 0.0], [1.3, 0.2], [-0.4, 2.1]];
        for i in 0..3 {
            let u = isotropic_velocity(i, &x, &p).unwrap();
            let f = residual(i, &x, &u, &p).unwrap();
            assert!(norm(&f) <= 1e-12);
            let w = [0.3, -0.8];
            let f = residual(i, &x, &w, &p).unwrap();
            assert!((f[0] - (-w[0] + u[0])).abs() <= 1e-13);
            assert!((f[1] - (-w[1] + u[1])).abs() <= 1e-13);
        }
    }

    #[test]
    fn generic_dimension_three() {
        let kernel = default_kernel();
        let p = ModelParams {
            n_particles: 3,
            dimension: 3,
            kernel,
            vision: VisionParams::default(),
        };
        let x = [[0.0, 0.0, 0.0], [1.0, 0.5, -0.2], [0.1, -1.2, 0.9]];
        let f = residual(1, &x, &[0.1, 0.2, 0.3], &p).unwrap();
        assert!(f.iter().all(|c| c.is_finite()));
        let x2 = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        assert!(residual(0, &x2, &[1.0, 0.0], &p).is_err());
    }

    #[test]
    fn energy_of_distant_pair() {
        let p = ModelParams::new(2, default_kernel(), VisionParams::default()).unwrap();
        let e = energy(&[[0.0, 0.0], [100.0, 0.0]], &p).unwrap();
        let k100 = kernel_value(100.0, &p.kernel).unwrap();
        assert!((e - k100).abs() < 1e-30);
        assert!(e.abs() < 2e-12);
    }
}
