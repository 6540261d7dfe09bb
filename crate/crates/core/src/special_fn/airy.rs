//! Airy functions of real argument.
//!
//! Regions:
//!
//! * `-5 <= t <= 2.5`: Maclaurin series for all four values.
//! * `t > 2.5`: Ai, Ai' from the modified Bessel function K_{1/3}(ζ),
//!   ζ = (2/3) t^{3/2}, evaluated by Steed's continued fraction with the
//!   factor e^{-ζ} carried as a log scale.
//! * `2.5 < t <= 8`: Bi, Bi' from the (cancellation free) Maclaurin series,
//!   rescaled by e^{-ζ}.
//! * `t > 8`: Bi, Bi' from the asymptotic expansion, scaled by e^{ζ}.
//! * `t < -5`: Taylor stepping of the Airy equation from t = -5.

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Ai(0).
const AI0: f64 = 0.355_028_053_887_817_239_26;
/// -Ai'(0).
const AIP0: f64 = 0.258_819_403_792_806_798_41;
const SQRT3: f64 = 1.732_050_807_568_877_293_5;

const SERIES_POS: f64 = 2.5;
const SERIES_NEG: f64 = -5.0;
const BI_ASYMPTOTIC: f64 = 8.0;
const MAX_ARG: f64 = 100.0;

/// Ai, Ai', Bi, Bi' at a real argument.
///
/// The true values are `ai * exp(ai_log_scale)` (same for `ai_prime`) and
/// `bi * exp(bi_log_scale)` (same for `bi_prime`), which keeps large
/// positive arguments representable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AiryValues<T> {
    pub t: T,
    pub ai: T,
    pub ai_prime: T,
    pub bi: T,
    pub bi_prime: T,
    pub ai_log_scale: T,
    pub bi_log_scale: T,
}

impl<T: Real> AiryValues<T> {
    /// Unscaled `(Ai, Ai', Bi, Bi')`; may underflow/overflow for large t.
    pub fn unscaled(&self) -> (T, T, T, T) {
        let sa = self.ai_log_scale.exp();
        let sb = self.bi_log_scale.exp();
        (self.ai * sa, self.ai_prime * sa, self.bi * sb, self.bi_prime * sb)
    }

    /// Ai·Bi' − Ai'·Bi, computed in scaled form (equals 1/π).
    pub fn wronskian(&self) -> T {
        (self.ai * self.bi_prime - self.ai_prime * self.bi)
            * (self.ai_log_scale + self.bi_log_scale).exp()
    }
}

/// Evaluates the Airy functions and their derivatives at `t`, `|t| <= 100`.
pub fn airy_eval<T: Real>(t: T) -> Result<AiryValues<T>> {
    let tf = t.as_f64();
    if !tf.is_finite() || tf.abs() > MAX_ARG {
        return Err(Error::ArgumentOutOfRange(tf));
    }
    let zero = T::zero();
    if tf < SERIES_NEG {
        return Ok(negative_by_stepping(t));
    }
    if tf <= SERIES_POS {
        let (ai, aip, bi, bip) = maclaurin(t);
        return Ok(AiryValues {
            t,
            ai,
            ai_prime: aip,
            bi,
            bi_prime: bip,
            ai_log_scale: zero,
            bi_log_scale: zero,
        });
    }
    let zeta = T::lit(2.0 / 3.0) * t * t.sqrt();
    let (ai, aip) = ai_scaled_bessel(t, zeta);
    let (bi, bip) = if tf <= BI_ASYMPTOTIC {
        let (_, _, bi, bip) = maclaurin(t);
        let s = (-zeta).exp();
        (bi * s, bip * s)
    } else {
        bi_scaled_asymptotic(t, zeta)
    };
    Ok(AiryValues {
        t,
        ai,
        ai_prime: aip,
        bi,
        bi_prime: bip,
        ai_log_scale: -zeta,
        bi_log_scale: zeta,
    })
}

/// Maclaurin series: Ai = c1 f − c2 g, Bi = √3 (c1 f + c2 g).
fn maclaurin<T: Real>(t: T) -> (T, T, T, T) {
    let t3 = t * t * t;
    let tiny = T::epsilon() * T::lit(0.01);
    // f and f'
    let mut f = T::one();
    let mut fk = T::one();
    let mut fp = T::zero();
    let mut dk = t * t * T::lit(0.5);
    // g and g'
    let mut g = t;
    let mut gk = t;
    let mut gp = T::one();
    let mut ek = T::one();
    let mut k = 0usize;
    loop {
        let kf = T::count(k);
        let three = T::lit(3.0);
        fk = fk * t3 / ((three * kf + T::lit(2.0)) * (three * kf + three));
        gk = gk * t3 / ((three * kf + three) * (three * kf + T::lit(4.0)));
        ek = ek * t3 / ((three * kf + T::one()) * (three * kf + three));
        f += fk;
        g += gk;
        fp += dk;
        gp += ek;
        let kn = kf + T::one();
        dk = dk * t3 / ((three * kn) * (three * kn + T::lit(2.0)));
        k += 1;
        let small = fk.abs() <= tiny * f.abs().max(T::one())
            && gk.abs() <= tiny * g.abs().max(T::one())
            && dk.abs() <= tiny * fp.abs().max(T::one())
            && ek.abs() <= tiny * gp.abs().max(T::one());
        if (small && k > 2) || k > 200 {
            break;
        }
    }
    let c1 = T::lit(AI0);
    let c2 = T::lit(AIP0);
    let s3 = T::lit(SQRT3);
    (
        c1 * f - c2 * g,
        c1 * fp - c2 * gp,
        s3 * (c1 * f + c2 * g),
        s3 * (c1 * fp + c2 * gp),
    )
}

/// e^{x} K_ν(x) and e^{x} K_{ν+1}(x) for x >= 2, |ν| <= 1/2 (Steed's CF2).
fn bessel_k_scaled<T: Real>(nu: T, x: T) -> (T, T) {
    let eps = T::epsilon();
    let two = T::lit(2.0);
    let mu2 = nu * nu;
    let xi = T::one() / x;
    let mut b = two * (T::one() + x);
    let mut d = T::one() / b;
    let mut delh = d;
    let mut h = d;
    let mut q1 = T::zero();
    let mut q2 = T::one();
    let a1 = T::lit(0.25) - mu2;
    let mut q = a1;
    let mut c = a1;
    let mut a = -a1;
    let mut s = T::one() + q * delh;
    for i in 2..10_000usize {
        let fi = T::count(i);
        a -= two * (fi - T::one());
        c = -a * c / fi;
        let qnew = (q1 - b * q2) / a;
        q1 = q2;
        q2 = qnew;
        q += c * qnew;
        b += two;
        d = T::one() / (b + a * d);
        delh = (b * d - T::one()) * delh;
        h += delh;
        let dels = q * delh;
        s += dels;
        if (dels / s).abs() < eps {
            break;
        }
    }
    h = a1 * h;
    let k_nu = (T::PI() / (two * x)).sqrt() / s;
    let k_nu1 = k_nu * (nu + x + T::lit(0.5) - h) * xi;
    (k_nu, k_nu1)
}

/// e^{ζ}·Ai(t) and e^{ζ}·Ai'(t) for t > 2.5 via K_{1/3}, K_{2/3}.
fn ai_scaled_bessel<T: Real>(t: T, zeta: T) -> (T, T) {
    let third = T::lit(1.0 / 3.0);
    let (k13, k43) = bessel_k_scaled(third, zeta);
    let k23 = k43 - T::lit(2.0) / (T::lit(3.0) * zeta) * k13;
    let pi = T::PI();
    let ai = (t / T::lit(3.0)).sqrt() * k13 / pi;
    let aip = -t / (pi * T::lit(SQRT3)) * k23;
    (ai, aip)
}

/// e^{-ζ}·Bi(t) and e^{-ζ}·Bi'(t) from the large-argument expansion.
fn bi_scaled_asymptotic<T: Real>(t: T, zeta: T) -> (T, T) {
    let mut u = T::one();
    let mut su = T::one();
    let mut sv = T::one();
    let mut zk = T::one();
    let mut last = T::infinity();
    for k in 1..40usize {
        let kf = T::count(k);
        let six = T::lit(6.0);
        u = u * (six * kf - T::lit(5.0)) * (six * kf - T::lit(3.0)) * (six * kf - T::one())
            / ((T::lit(2.0) * kf - T::one()) * T::lit(216.0) * kf);
        let v = -(six * kf + T::one()) / (six * kf - T::one()) * u;
        zk *= zeta;
        let term = u / zk;
        if term.abs() > last {
            break;
        }
        last = term.abs();
        su += term;
        sv += v / zk;
        if term.abs() < T::epsilon() * T::lit(0.01) {
            break;
        }
    }
    let rpi = T::PI().sqrt();
    let q = t.sqrt().sqrt();
    (su / (rpi * q), q * sv / rpi)
}

/// Advances (w, w') of the Airy equation from `t0` by `h` with its Taylor series.
fn taylor_step<T: Real>(t0: T, w: T, wp: T, h: T) -> (T, T) {
    // c_m = (t0 c_{m-2} + c_{m-3}) / (m (m-1)), c_{-1} = 0
    let (mut c3, mut c2, mut c1) = (T::zero(), w, wp);
    let mut val = w + wp * h;
    let mut der = wp;
    let mut hm1 = h; // h^{m-1}
    let mut quiet = 0;
    for m in 2..400usize {
        let mf = T::count(m);
        let cm = (t0 * c2 + c3) / (mf * (mf - T::one()));
        der += mf * cm * hm1;
        hm1 *= h;
        val += cm * hm1;
        c3 = c2;
        c2 = c1;
        c1 = cm;
        let scale = val.abs() + der.abs() + T::min_positive_value();
        if (mf * cm * hm1).abs() < T::epsilon() * T::lit(1e-2) * scale {
            quiet += 1;
            if quiet >= 3 {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    (val, der)
}

fn negative_by_stepping<T: Real>(t: T) -> AiryValues<T> {
    let start = T::lit(SERIES_NEG);
    let (mut ai, mut aip, mut bi, mut bip) = maclaurin(start);
    let mut x = start;
    while x > t {
        let h = (T::lit(2.0) / x.abs().sqrt()).min(T::lit(0.5)).min(x - t);
        let (a, ap) = taylor_step(x, ai, aip, -h);
        let (b, bp) = taylor_step(x, bi, bip, -h);
        ai = a;
        aip = ap;
        bi = b;
        bip = bp;
        x -= h;
    }
    AiryValues {
        t,
        ai,
        ai_prime: aip,
        bi,
        bi_prime: bip,
        ai_log_scale: T::zero(),
        bi_log_scale: T::zero(),
    }
}
