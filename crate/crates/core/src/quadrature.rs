//! Adaptive Simpson quadrature and a fixed-step RK4 integrator.

/// Relative tolerance used for every value-coefficient integral.
pub const REL_TOL: f64 = 1e-10;
/// Absolute floor below which an interval is considered converged.
pub const ABS_FLOOR: f64 = 1e-14;

const MAX_DEPTH: u32 = 48;

/// `∫_a^b f` by adaptive Simpson with Richardson correction.
///
/// The error target is `max(abs_floor, rel_tol · |I|)` where `I` is a
/// first-pass estimate of the whole integral; it is halved at each bisection.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, rel_tol: f64, abs_floor: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // A coarse five-point pass guards against a lucky three-point estimate near zero.
    let coarse = {
        let (q1, q3) = (0.5 * (a + m), 0.5 * (m + b));
        (b - a) / 12.0 * (fa + 4.0 * f(q1) + 2.0 * fm + 4.0 * f(q3) + fb)
    };
    let tol = (rel_tol * coarse.abs().max(whole.abs())).max(abs_floor);
    recurse(&f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol || !delta.is_finite() {
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
}

/// One classical RK4 step for a two-dimensional system.
#[inline]
pub fn rk4_step2<F: Fn(f64, [f64; 2]) -> [f64; 2]>(f: &F, t: f64, y: [f64; 2], dt: f64) -> [f64; 2] {
    let add = |y: [f64; 2], k: [f64; 2], c: f64| [y[0] + c * k[0], y[1] + c * k[1]];
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * dt, add(y, k1, 0.5 * dt));
    let k3 = f(t + 0.5 * dt, add(y, k2, 0.5 * dt));
    let k4 = f(t + dt, add(y, k3, dt));
    [
        y[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        y[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
    ]
}

/// One classical RK4 step for a three-dimensional system.
#[inline]
pub fn rk4_step3<F: Fn(f64, [f64; 3]) -> [f64; 3]>(f: &F, t: f64, y: [f64; 3], dt: f64) -> [f64; 3] {
    let add = |y: [f64; 3], k: [f64; 3], c: f64| [y[0] + c * k[0], y[1] + c * k[1], y[2] + c * k[2]];
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * dt, add(y, k1, 0.5 * dt));
    let k3 = f(t + 0.5 * dt, add(y, k2, 0.5 * dt));
    let k4 = f(t + dt, add(y, k3, dt));
    let mut out = [0.0; 3];
    for i in 0..3 {
        out[i] = y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}
