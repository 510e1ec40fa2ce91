//! Scalar-generic test functions: the three-input composite used throughout
//! the checks, and the n-input benchmark family.

use crate::ad::Scalar;

pub const INPUT_NAMES: [&str; 3] = ["a", "b", "c"];

/// Intermediates of the composite function.
#[derive(Debug, Clone, Copy)]
pub struct CompositeTrace<S> {
    pub u: S,
    pub v: S,
    pub w: S,
    pub f: S,
}

/// `f(a, b, c) = (w - w0)^2` with
/// `u = sin(ab) + cb^2 + a^3 c^2`, `v = exp(u^2 - 1) + a^2`,
/// `w = ln(v^2 + 1) + cos(c^2 - 1)`.
pub fn composite_trace<S: Scalar>(a: S, b: S, c: S, w0: f64) -> CompositeTrace<S> {
    let one = a.cst(1.0);
    let u = (a * b).sin() + c * b * b + a.powf(3.0) * c * c;
    let v = (u * u - one).exp() + a * a;
    let w = (v * v + one).ln() + (c * c - one).cos();
    let d = w - a.cst(w0);
    CompositeTrace { u, v, w, f: d * d }
}

pub fn composite<S: Scalar>(x: &[S], w0: f64) -> S {
    composite_trace(x[0], x[1], x[2], w0).f
}

/// Hand-coded tangent of the composite function along `(da, db, dc)`.
pub fn composite_tangent(x: [f64; 3], dx: [f64; 3], w0: f64) -> f64 {
    let [a, b, c] = x;
    let [da, db, dc] = dx;
    let t = composite_trace(a, b, c, w0);
    let du = (b * (a * b).cos() + 3.0 * a * a * c * c) * da
        + (a * (a * b).cos() + 2.0 * c * b) * db
        + (b * b + 2.0 * a.powi(3) * c) * dc;
    let dv = 2.0 * t.u * (t.u * t.u - 1.0).exp() * du + 2.0 * a * da;
    let dw = 2.0 * t.v / (t.v * t.v + 1.0) * dv - 2.0 * c * (c * c - 1.0).sin() * dc;
    2.0 * (t.w - w0) * dw
}

/// Hand-coded adjoint of the composite function (statements in reverse).
pub fn composite_adjoint(x: [f64; 3], w0: f64) -> [f64; 3] {
    let [a, b, c] = x;
    let t = composite_trace(a, b, c, w0);
    let f_bar = 1.0;
    let w_bar = 2.0 * (t.w - w0) * f_bar;
    let mut c_bar = -2.0 * c * (c * c - 1.0).sin() * w_bar;
    let v_bar = 2.0 * t.v / (t.v * t.v + 1.0) * w_bar;
    let mut a_bar = 2.0 * a * v_bar;
    let u_bar = 2.0 * t.u * (t.u * t.u - 1.0).exp() * v_bar;
    a_bar += (b * (a * b).cos() + 3.0 * a * a * c * c) * u_bar;
    let b_bar = (a * (a * b).cos() + 2.0 * c * b) * u_bar;
    c_bar += (b * b + 2.0 * a.powi(3) * c) * u_bar;
    [a_bar, b_bar, c_bar]
}

/// Number of layers used by [`bench_family`] for `n` inputs.
pub fn bench_depth(n: usize) -> usize {
    2 + n.max(1).ilog2() as usize
}

/// Deterministic benchmark point for `n` inputs.
pub fn bench_point(n: usize) -> Vec<f64> {
    (0..n).map(|i| 0.5 + 0.4 * (i as f64).sin()).collect()
}

/// Dense smooth function of `n` inputs: alternating neighbour-product/sum
/// layers and transcendental layers, reduced by `ln(1 + sum y^2)`.
pub fn bench_family<S: Scalar>(x: &[S]) -> S {
    let n = x.len();
    let mut y = x.to_vec();
    let mut next = Vec::with_capacity(n);
    for layer in 0..bench_depth(n) {
        next.clear();
        for i in 0..n {
            let prev = y[(i + n - 1) % n];
            let succ = y[(i + 1) % n];
            let yi = y[i];
            next.push(if layer % 2 == 0 {
                (yi + prev * succ).scale(0.5)
            } else {
                yi.shift(0.3).sin() * yi.scale(-0.1).exp()
            });
        }
        std::mem::swap(&mut y, &mut next);
    }
    let mut acc = y[0] * y[0];
    for &yi in &y[1..] {
        acc = acc + yi * yi;
    }
    acc.shift(1.0).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ad;

    #[test]
    fn hand_adjoint_matches_tape() {
        let x = [1.1, 0.7, 0.9];
        let (_, g) = ad::gradient(&x, |v| composite(v, 1.0)).unwrap();
        let h = composite_adjoint(x, 1.0);
        for i in 0..3 {
            assert!((g[i] - h[i]).abs() <= 1e-13 * g[i].abs().max(1.0));
        }
    }

    #[test]
    fn hand_tangent_matches_tape() {
        let x = [0.8, 1.3, 0.6];
        let (_, g) = ad::forward_gradient(&x, |v| composite(v, 0.5)).unwrap();
        for i in 0..3 {
            let mut e = [0.0; 3];
            e[i] = 1.0;
            let t = composite_tangent(x, e, 0.5);
            assert!((g[i] - t).abs() <= 1e-13 * t.abs().max(1.0));
        }
    }

    #[test]
    fn bench_family_is_finite() {
        for n in [1, 2, 10, 1000] {
            let v = bench_family(&bench_point(n));
            assert!(v.is_finite() && v > 0.0, "n={n} v={v}");
        }
    }
}
