//! Independent reference implementations used as test oracles. Nothing here
//! calls into the library's numerics; only parameter structs are shared.
#![allow(dead_code)]

use anisoswarm::scenario::{InitialPositions, InitialRootPolicy};
use anisoswarm::{KernelParams, ModelParams, ScenarioSpec, SimParams, VisionForm, VisionParams};

/// Morse `K'(r)` for `K = -C_a e^{-r/l_a} + C_r e^{-r/l_r}`.
pub fn morse_deriv(r: f64, k: &KernelParams) -> f64 {
    k.c_attract / k.l_attract * (-r / k.l_attract).exp()
        - k.c_repulse / k.l_repulse * (-r / k.l_repulse).exp()
}

pub fn morse(r: f64, k: &KernelParams) -> f64 {
    -k.c_attract * (-r / k.l_attract).exp() + k.c_repulse * (-r / k.l_repulse).exp()
}

pub fn weight(s: f64, v: &VisionParams) -> f64 {
    let pi = std::f64::consts::PI;
    match v.form {
        VisionForm::Tanh => {
            let c = (v.steepness * (2.0 - v.width / pi)).tanh() + 1.0;
            ((v.steepness * (-s + 1.0 - v.width / pi)).tanh() + 1.0) / c
        }
        VisionForm::Linear => (v.width - v.steepness * s) / (v.width + v.steepness),
        VisionForm::Isotropic => 1.0,
    }
}

/// `-(1/N) sum_j K'(|x_i - x_j|) u_ij g(u_ij . s)`.
pub fn force(i: usize, x: &[[f64; 2]], s: [f64; 2], p: &ModelParams) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (j, xj) in x.iter().enumerate() {
        if j == i {
            continue;
        }
        let d = [x[i][0] - xj[0], x[i][1] - xj[1]];
        let r = d[0].hypot(d[1]);
        let u = [d[0] / r, d[1] / r];
        let w = weight((u[0] * s[0] + u[1] * s[1]).clamp(-1.0, 1.0), &p.vision);
        let f = morse_deriv(r, &p.kernel);
        out[0] -= f * u[0] * w / p.n_particles as f64;
        out[1] -= f * u[1] * w / p.n_particles as f64;
    }
    out
}

/// `F_i(x, v) = -v + force(v/|v|)`.
pub fn residual(i: usize, x: &[[f64; 2]], v: [f64; 2], p: &ModelParams) -> [f64; 2] {
    let r = v[0].hypot(v[1]);
    let f = force(i, x, [v[0] / r, v[1] / r], p);
    [f[0] - v[0], f[1] - v[1]]
}

/// Tangential projection of the force at heading `θ`.
pub fn h(i: usize, x: &[[f64; 2]], theta: f64, p: &ModelParams) -> f64 {
    let f = force(i, x, [theta.cos(), theta.sin()], p);
    -f[0] * theta.sin() + f[1] * theta.cos()
}

pub fn radial(i: usize, x: &[[f64; 2]], theta: f64, p: &ModelParams) -> f64 {
    let f = force(i, x, [theta.cos(), theta.sin()], p);
    f[0] * theta.cos() + f[1] * theta.sin()
}

/// Roots of `h` on `[-π, π)` from sign changes on an `n`-point grid, each
/// bisected to machine precision.
pub fn dense_roots(i: usize, x: &[[f64; 2]], p: &ModelParams, n: usize) -> Vec<f64> {
    let pi = std::f64::consts::PI;
    let at = |k: usize| -pi + 2.0 * pi * k as f64 / n as f64;
    let mut roots = Vec::new();
    let mut a = at(0);
    let mut fa = h(i, x, a, p);
    for k in 1..=n {
        let b = at(k);
        let fb = h(i, x, b, p);
        if fa == 0.0 {
            roots.push(a);
        } else if fa * fb < 0.0 {
            let (mut lo, mut hi, mut flo) = (a, b, fa);
            for _ in 0..200 {
                let m = 0.5 * (lo + hi);
                if m == lo || m == hi {
                    break;
                }
                let fm = h(i, x, m, p);
                if (fm < 0.0) == (flo < 0.0) {
                    lo = m;
                    flo = fm;
                } else {
                    hi = m;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        a = b;
        fa = fb;
    }
    roots
}

/// Distance between angles on the circle.
pub fn circ(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * std::f64::consts::PI);
    d.min(2.0 * std::f64::consts::PI - d)
}

/// Plain RK4 for `x_i' = force_i` with `g = 1`.
pub fn isotropic_rk4(x0: &[[f64; 2]], p: &ModelParams, dt: f64, steps: usize) -> Vec<[f64; 2]> {
    let iso = p.isotropic();
    let rhs = |x: &[[f64; 2]]| -> Vec<[f64; 2]> {
        (0..x.len())
            .map(|i| force(i, x, [1.0, 0.0], &iso))
            .collect()
    };
    let axpy = |x: &[[f64; 2]], k: &[[f64; 2]], h: f64| -> Vec<[f64; 2]> {
        x.iter()
            .zip(k)
            .map(|(a, b)| [a[0] + h * b[0], a[1] + h * b[1]])
            .collect()
    };
    let mut x = x0.to_vec();
    for _ in 0..steps {
        let k1 = rhs(&x);
        let k2 = rhs(&axpy(&x, &k1, 0.5 * dt));
        let k3 = rhs(&axpy(&x, &k2, 0.5 * dt));
        let k4 = rhs(&axpy(&x, &k3, dt));
        for (i, xi) in x.iter_mut().enumerate() {
            for c in 0..2 {
                xi[c] += dt / 6.0 * (k1[i][c] + 2.0 * k2[i][c] + 2.0 * k3[i][c] + k4[i][c]);
            }
        }
    }
    x
}

/// Seeded `n`-particle scenario with the default kernel and vision.
pub fn seeded_spec(seed: u64, n: usize, box_size: f64, t_end: f64) -> ScenarioSpec {
    ScenarioSpec {
        name: format!("seed{seed}"),
        model: ModelParams::new(n, KernelParams::default(), VisionParams::default()).unwrap(),
        initial_positions: InitialPositions::Seeded {
            seed,
            count: n,
            box_size,
        },
        initial_root_policy: InitialRootPolicy::MaxRadiusStable,
        sim: SimParams {
            t_end,
            ..SimParams::default()
        },
        eps: None,
    }
}
