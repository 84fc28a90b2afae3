//! Adaptive Gauss-Kronrod (7, 15) quadrature.

#![allow(clippy::excessive_precision)]

use crate::error::{QlcError, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_639_206_854_697_526_329,
    0.949_107_912_342_758_524_526_189_684_047_851,
    0.864_864_423_359_769_072_789_712_788_640_926,
    0.741_531_185_599_394_439_863_864_773_280_788,
    0.586_087_235_467_691_130_294_144_845_693_013,
    0.405_845_151_377_397_166_906_606_412_076_961,
    0.207_784_955_007_898_467_600_689_403_773_245,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224_963_732_008_058_970,
    0.063_092_092_629_978_553_290_700_663_189_204,
    0.104_790_010_322_250_183_839_876_322_541_518,
    0.140_653_259_715_525_918_745_189_590_510_238,
    0.169_004_726_639_267_902_826_583_426_598_550,
    0.190_350_578_064_785_409_913_256_402_421_014,
    0.204_432_940_075_298_892_414_161_999_234_649,
    0.209_482_141_084_727_828_012_999_174_891_714,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_693_270_611_432_679_082,
    0.279_705_391_489_276_667_901_467_771_423_780,
    0.381_830_050_505_118_944_950_369_775_488_975,
    0.417_959_183_673_469_387_755_102_040_816_327,
];

const MAX_INTERVALS: usize = 4000;

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let x = h * XGK[j];
        let s = f(c - x) + f(c + x);
        kron += WGK[j] * s;
        if j % 2 == 1 {
            gauss += WG[j / 2] * s;
        }
    }
    (kron * h, ((kron - gauss) * h).abs())
}

/// Integral of `f` over `[a, b]` to `max(abs_tol, rel_tol * |I|)`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let mut parts = vec![(a, b, gk15(&f, a, b))];
    loop {
        let total: f64 = parts.iter().map(|p| p.2 .0).sum();
        let err: f64 = parts.iter().map(|p| p.2 .1).sum();
        if !total.is_finite() || !err.is_finite() {
            return Err(QlcError::Divergent(format!("integrand not finite on [{a}, {b}]")));
        }
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        if parts.len() >= MAX_INTERVALS {
            return Err(QlcError::Divergent(format!("quadrature on [{a}, {b}] stalled at error {err:e}")));
        }
        let worst =
            parts.iter().enumerate().max_by(|x, y| x.1 .2 .1.total_cmp(&y.1 .2 .1)).map(|(i, _)| i).unwrap_or(0);
        let (lo, hi, _) = parts.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        if !(mid > lo && mid < hi) {
            return Err(QlcError::Divergent("quadrature interval underflow".into()));
        }
        parts.push((lo, mid, gk15(&f, lo, mid)));
        parts.push((mid, hi, gk15(&f, mid, hi)));
    }
}

/// Integral of `f` over `[a, inf)` for `a > 0`.
///
/// Uses `t = a e^s` followed by `s = x / (1 - x)`, which turns polynomial
/// tails into exponential ones and keeps the mapped integrand bounded.
pub fn integrate_tail<F: Fn(f64) -> f64>(f: F, a: f64, abs_tol: f64, rel_tol: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(QlcError::InvalidInput(format!("tail start must be positive, got {a}")));
    }
    // The mapped integral is cut where t reaches e^700; a tail that has not
    // died out by then is treated as divergent.
    let s_max = 700.0 - a.ln().max(0.0);
    let t_end = a * s_max.exp();
    let edge = f(t_end) * t_end * s_max;
    if !(edge.abs() <= abs_tol) {
        return Err(QlcError::Divergent(format!("integrand does not decay fast enough past {a}")));
    }
    let mapped = |x: f64| {
        if x >= 1.0 {
            return 0.0;
        }
        let s = x / (1.0 - x);
        if s > s_max {
            return 0.0;
        }
        let t = a * s.exp();
        let v = f(t) * t / ((1.0 - x) * (1.0 - x));
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    integrate(mapped, 0.0, 1.0, abs_tol, rel_tol)
}
