//! Standard-normal special functions.
//!
//! `erf`/`erfc` evaluate in `f64` through `libm`, whose `erfc` keeps full
//! relative precision in the tail, so both tails of `normal_cdf` do too.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[inline]
fn frac_1_sqrt_2pi<T: Scalar>() -> T {
    T::lit(0.398_942_280_401_432_677_939_946_059_934_381_868)
}

#[inline]
fn sqrt_2pi<T: Scalar>() -> T {
    T::lit(2.506_628_274_631_000_502_415_765_284_811_045_253)
}

pub fn erf<T: Scalar>(x: T) -> T {
    T::lit(libm::erf(x.to_f64_lossy()))
}

/// Complementary error function, accurate in relative terms for large x.
pub fn erfc<T: Scalar>(x: T) -> T {
    T::lit(libm::erfc(x.to_f64_lossy()))
}

/// Standard normal density φ(x).
#[inline]
pub fn normal_pdf<T: Scalar>(x: T) -> T {
    frac_1_sqrt_2pi::<T>() * (-T::lit(0.5) * x * x).exp()
}

/// Standard normal CDF Φ(x). Accurate in relative terms in the lower tail.
pub fn normal_cdf<T: Scalar>(x: T) -> T {
    let z = x * T::lit(std::f64::consts::FRAC_1_SQRT_2);
    if x < T::zero() {
        T::lit(0.5) * erfc(-z)
    } else {
        T::one() - T::lit(0.5) * erfc(z)
    }
}

/// Upper tail 1 − Φ(x), computed without cancellation.
#[inline]
pub fn normal_sf<T: Scalar>(x: T) -> T {
    normal_cdf(-x)
}

/// Below this, Φ(x) is evaluated through its asymptotic expansion.
const ASYMPTOTIC_TAIL: f64 = -37.0;

/// 1 − 1/x² + 3/x⁴ − 15/x⁶ + … (Φ(x)·|x|/φ(x) for x → −∞).
fn tail_series<T: Scalar>(x: T) -> T {
    let w = (x * x).recip();
    let mut term = T::one();
    let mut sum = T::one();
    for k in 1..=6 {
        term = -term * w * T::from_usize_lossy(2 * k - 1);
        sum += term;
    }
    sum
}

/// ln Φ(x), finite for every finite x.
pub fn log_normal_cdf<T: Scalar>(x: T) -> T {
    if x < T::lit(ASYMPTOTIC_TAIL) {
        let half_ln_tau = T::lit(0.918_938_533_204_672_8);
        -T::lit(0.5) * x * x - (-x).ln() - half_ln_tau + tail_series(x).ln()
    } else if x > T::zero() {
        (-normal_cdf(-x)).ln_1p()
    } else {
        normal_cdf(x).ln()
    }
}

/// Inverse Mills ratio φ(x)/Φ(x) = d ln Φ(x)/dx.
pub fn inverse_mills<T: Scalar>(x: T) -> T {
    if x < T::lit(ASYMPTOTIC_TAIL) {
        -x / tail_series(x)
    } else {
        normal_pdf(x) / normal_cdf(x)
    }
}

// Acklam's rational approximation, relative error ≈ 1.15e-9; refined below.
const ACKLAM_A: [f64; 6] = [
    -3.969_683_028_665_376e1,
    2.209_460_984_245_205e2,
    -2.759_285_104_469_687e2,
    1.383_577_518_672_69e2,
    -3.066_479_806_614_716e1,
    2.506_628_277_459_239,
];
const ACKLAM_B: [f64; 5] = [
    -5.447_609_879_822_406e1,
    1.615_858_368_580_409e2,
    -1.556_989_798_598_866e2,
    6.680_131_188_771_972e1,
    -1.328_068_155_288_572e1,
];
const ACKLAM_C: [f64; 6] = [
    -7.784_894_002_430_293e-3,
    -3.223_964_580_411_365e-1,
    -2.400_758_277_161_838,
    -2.549_732_539_343_734,
    4.374_664_141_464_968,
    2.938_163_982_698_783,
];
const ACKLAM_D: [f64; 4] = [
    7.784_695_709_041_462e-3,
    3.224_671_290_700_398e-1,
    2.445_134_137_142_996,
    3.754_408_661_907_416,
];

fn horner<T: Scalar>(coef: &[f64], x: T) -> T {
    coef.iter().fold(T::zero(), |acc, &c| acc * x + T::lit(c))
}

fn acklam_lower<T: Scalar>(p: T) -> T {
    let p_low = T::lit(0.02425);
    if p < p_low {
        let q = (-T::lit(2.0) * p.ln()).sqrt();
        horner(&ACKLAM_C, q) / (horner(&ACKLAM_D, q) * q + T::one())
    } else {
        let q = p - T::lit(0.5);
        let r = q * q;
        horner(&ACKLAM_A, r) * q / (horner(&ACKLAM_B, r) * r + T::one())
    }
}

/// Quantile of the lower half, p ∈ (0, 0.5].
fn quantile_lower<T: Scalar>(p: T) -> T {
    let mut x = acklam_lower(p);
    for _ in 0..3 {
        let e = normal_cdf(x) - p;
        let u = e * sqrt_2pi::<T>() * (T::lit(0.5) * x * x).exp();
        if !u.is_finite() {
            break;
        }
        let step = u / (T::one() + T::lit(0.5) * x * u);
        x -= step;
        if step.abs() <= T::epsilon() * x.abs() {
            break;
        }
    }
    x
}

/// Inverse standard normal CDF Φ⁻¹(p) for p ∈ (0, 1).
pub fn normal_quantile<T: Scalar>(p: T) -> Result<T> {
    if !(p > T::zero() && p < T::one()) {
        return Err(Error::Domain(format!(
            "normal_quantile needs p in (0,1), got {p}"
        )));
    }
    // 1 - p is exact for p ≥ 0.5
    if p <= T::lit(0.5) {
        Ok(quantile_lower(p))
    } else {
        Ok(-quantile_lower(T::one() - p))
    }
}

/// Φ⁻¹(p) after clamping p into [eps, 1 − eps].
pub fn normal_quantile_clamped<T: Scalar>(p: T, eps: T) -> T {
    let p = p.max(eps).min(T::one() - eps);
    normal_quantile(p).expect("clamped probability lies in (0,1)")
}

/// Logistic sigmoid 1 / (1 + e^{−z}).
#[inline]
pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}
