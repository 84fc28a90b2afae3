//! Exponential families in canonical form.
//!
//! A family is described by its log-partition function `d`, so that the
//! log-likelihood of one observation is `y * v - d(v)` for a canonical
//! parameter `v` in the natural domain. The mean is `d'(v)` and the variance
//! is `d''(v)`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Bernoulli, Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QlcError, Result};

/// Open interval `(lower, upper)`; endpoints are never members.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const REAL_LINE: Interval = Interval { lower: f64::NEG_INFINITY, upper: f64::INFINITY };

    pub fn contains(&self, x: f64) -> bool {
        x.is_finite() && x > self.lower && x < self.upper
    }

    /// Membership in the closure (endpoints included when finite).
    pub fn closure_contains(&self, x: f64) -> bool {
        !x.is_nan() && x >= self.lower && x <= self.upper
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.lower, self.upper)
    }
}

/// Canonical exponential family.
///
/// `Gaussian { sigma }` has `d(v) = sigma^2 v^2 / 2`, i.e. observations are
/// `N(sigma^2 v, sigma^2)` and the noise standard deviation is `sigma`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EfcFamily {
    Gaussian { sigma: f64 },
    Poisson,
    Bernoulli,
}

impl EfcFamily {
    pub fn gaussian(sigma: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma > 0.0) {
            return invalid(format!("gaussian sigma must be positive, got {sigma}"));
        }
        Ok(EfcFamily::Gaussian { sigma })
    }

    /// Natural domain of the canonical parameter.
    pub fn natural_domain(&self) -> Interval {
        Interval::REAL_LINE
    }

    /// Open set of attainable means.
    pub fn mean_range(&self) -> Interval {
        match self {
            EfcFamily::Gaussian { .. } => Interval::REAL_LINE,
            EfcFamily::Poisson => Interval { lower: 0.0, upper: f64::INFINITY },
            EfcFamily::Bernoulli => Interval { lower: 0.0, upper: 1.0 },
        }
    }

    fn check(&self, v: f64) -> Result<()> {
        let dom = self.natural_domain();
        if dom.contains(v) {
            Ok(())
        } else {
            Err(QlcError::Domain { value: v, domain: dom.to_string() })
        }
    }

    fn finite(&self, v: f64, out: f64) -> Result<f64> {
        if out.is_finite() {
            Ok(out)
        } else {
            Err(QlcError::Domain { value: v, domain: self.natural_domain().to_string() })
        }
    }

    /// Log-partition `d(v)`.
    pub fn log_partition(&self, v: f64) -> Result<f64> {
        self.check(v)?;
        let out = match *self {
            EfcFamily::Gaussian { sigma } => 0.5 * sigma * sigma * v * v,
            EfcFamily::Poisson => v.exp(),
            EfcFamily::Bernoulli => softplus(v),
        };
        self.finite(v, out)
    }

    /// First derivative `d'(v)`, the mean.
    pub fn d_dot(&self, v: f64) -> Result<f64> {
        self.check(v)?;
        let out = match *self {
            EfcFamily::Gaussian { sigma } => sigma * sigma * v,
            EfcFamily::Poisson => v.exp(),
            EfcFamily::Bernoulli => logistic(v),
        };
        self.finite(v, out)
    }

    /// Second derivative `d''(v)`, the variance.
    pub fn d_ddot(&self, v: f64) -> Result<f64> {
        self.check(v)?;
        let out = match *self {
            EfcFamily::Gaussian { sigma } => sigma * sigma,
            EfcFamily::Poisson => v.exp(),
            EfcFamily::Bernoulli => {
                let p = logistic(v);
                p * (1.0 - p)
            }
        };
        self.finite(v, out)
    }

    /// Centered cumulant `d(v + t) - d(v) - t d'(v)`.
    pub fn centered_cumulant(&self, v: f64, t: f64) -> Result<f64> {
        self.check(v)?;
        self.check(v + t)?;
        let out = match *self {
            EfcFamily::Gaussian { sigma } => 0.5 * sigma * sigma * t * t,
            EfcFamily::Poisson => v.exp() * (t.exp_m1() - t),
            EfcFamily::Bernoulli => {
                let p = logistic(v);
                (p * t.exp_m1()).ln_1p() - t * p
            }
        };
        self.finite(v + t, out.max(0.0))
    }

    /// Canonical parameter with mean `m`.
    pub fn canonical_from_mean(&self, m: f64) -> Result<f64> {
        let range = self.mean_range();
        if !range.contains(m) {
            return Err(QlcError::Domain { value: m, domain: format!("mean range {range}") });
        }
        Ok(match *self {
            EfcFamily::Gaussian { sigma } => m / (sigma * sigma),
            EfcFamily::Poisson => m.ln(),
            EfcFamily::Bernoulli => (m / (1.0 - m)).ln(),
        })
    }

    /// One draw from the member with canonical parameter `v`.
    pub fn sample<R: Rng + ?Sized>(&self, v: f64, rng: &mut R) -> Result<f64> {
        let mean = self.d_dot(v)?;
        Ok(match *self {
            EfcFamily::Gaussian { sigma } => {
                Normal::new(mean, sigma).map_err(|e| QlcError::InvalidInput(e.to_string()))?.sample(rng)
            }
            EfcFamily::Poisson => {
                if mean == 0.0 {
                    0.0
                } else {
                    Poisson::new(mean).map_err(|e| QlcError::InvalidInput(e.to_string()))?.sample(rng)
                }
            }
            EfcFamily::Bernoulli => {
                let b = Bernoulli::new(mean).map_err(|e| QlcError::InvalidInput(e.to_string()))?;
                if b.sample(rng) {
                    1.0
                } else {
                    0.0
                }
            }
        })
    }

    /// Sub-gaussian scale of the member at `v`, see [`subgaussian_scale`].
    pub fn subgaussian_scale(&self, v: f64, lambda1: f64) -> Result<f64> {
        subgaussian_scale(*self, v, lambda1)
    }
}

impl fmt::Display for EfcFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EfcFamily::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            EfcFamily::Poisson => write!(f, "poisson"),
            EfcFamily::Bernoulli => write!(f, "bernoulli"),
        }
    }
}

impl FromStr for EfcFamily {
    type Err = QlcError;

    /// Accepts `gaussian`, `gaussian:SIGMA`, `poisson`, `bernoulli`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name.to_ascii_lowercase().as_str(), arg) {
            ("gaussian", None) => EfcFamily::gaussian(1.0),
            ("gaussian", Some(a)) => {
                let sigma: f64 = a.parse().map_err(|_| QlcError::InvalidInput(format!("bad gaussian sigma '{a}'")))?;
                EfcFamily::gaussian(sigma)
            }
            ("poisson", None) => Ok(EfcFamily::Poisson),
            ("bernoulli", None) => Ok(EfcFamily::Bernoulli),
            _ => invalid(format!("unknown family '{s}'")),
        }
    }
}

impl Serialize for EfcFamily {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for EfcFamily {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn softplus(v: f64) -> f64 {
    v.max(0.0) + (-v.abs()).exp().ln_1p()
}

fn logistic(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Variance of the member at `v` tilted by `t`, i.e. `d''(v + t)`.
pub fn tilted_variance(family: EfcFamily, v: f64, t: f64) -> Result<f64> {
    family.d_ddot(v + t)
}

const SCALE_LO: f64 = 1e-6;
const SCALE_HI: f64 = 1e6;
const LAMBDA_POINTS: usize = 200;

/// Smallest scale `s` with `c(2 lambda / s) <= 2 lambda^2` for all
/// `|lambda| <= lambda1`, where `c` is the centered cumulant of the member
/// at `v`. The condition is checked on 200 symmetric grid values of lambda
/// and the scale is located by bisection in `[1e-6, 1e6]`.
pub fn subgaussian_scale(family: EfcFamily, v: f64, lambda1: f64) -> Result<f64> {
    family.check(v)?;
    if let EfcFamily::Gaussian { sigma } = family {
        if lambda1 > 0.0 {
            return Ok(sigma);
        }
    }
    subgaussian_scale_of(|t| family.centered_cumulant(v, t), lambda1)
}

/// Bisection for the sub-gaussian scale of an arbitrary centered cumulant.
pub fn subgaussian_scale_of<F>(cumulant: F, lambda1: f64) -> Result<f64>
where
    F: Fn(f64) -> Result<f64>,
{
    if lambda1.is_nan() || lambda1 <= 0.0 {
        return invalid(format!("lambda1 must be positive, got {lambda1}"));
    }
    if !lambda1.is_finite() {
        return invalid("an infinite lambda1 needs a closed-form scale");
    }
    let half = LAMBDA_POINTS / 2;
    let lambdas: Vec<f64> = (1..=half)
        .flat_map(|k| {
            let l = lambda1 * k as f64 / half as f64;
            [l, -l]
        })
        .collect();
    // Returns the first violating lambda, if any.
    let violation = |scale: f64| -> Option<f64> {
        lambdas.iter().copied().find(|&l| match cumulant(2.0 * l / scale) {
            Ok(c) => c > 2.0 * l * l * (1.0 + 1e-12),
            Err(_) => true,
        })
    };
    if let Some(l) = violation(SCALE_HI) {
        return Err(QlcError::NoSubgaussianScale { lambda: l });
    }
    if violation(SCALE_LO).is_none() {
        return Ok(SCALE_LO);
    }
    let (mut lo, mut hi) = (SCALE_LO.ln(), SCALE_HI.ln());
    while hi - lo > 1e-13 {
        let mid = 0.5 * (lo + hi);
        if violation(mid.exp()).is_some() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi.exp())
}

/// Law of one observation under the data-generating process.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseLaw {
    /// Member of a canonical family.
    Efc { family: EfcFamily, canonical: f64 },
    /// Gaussian with arbitrary mean and standard deviation.
    Gaussian { mean: f64, sd: f64 },
    /// Point mass.
    Degenerate { value: f64 },
}

impl NoiseLaw {
    pub fn mean(&self) -> Result<f64> {
        match *self {
            NoiseLaw::Efc { family, canonical } => family.d_dot(canonical),
            NoiseLaw::Gaussian { mean, .. } => Ok(mean),
            NoiseLaw::Degenerate { value } => Ok(value),
        }
    }

    /// Centered log-moment generating function `log E exp{t (Y - EY)}`.
    pub fn cumulant(&self, t: f64) -> Result<f64> {
        match *self {
            NoiseLaw::Efc { family, canonical } => family.centered_cumulant(canonical, t),
            NoiseLaw::Gaussian { sd, .. } => Ok(0.5 * sd * sd * t * t),
            NoiseLaw::Degenerate { .. } => Ok(0.0),
        }
    }

    /// Second derivative of [`NoiseLaw::cumulant`] at `t`.
    pub fn tilted_variance(&self, t: f64) -> Result<f64> {
        match *self {
            NoiseLaw::Efc { family, canonical } => tilted_variance(family, canonical, t),
            NoiseLaw::Gaussian { sd, .. } => Ok(sd * sd),
            NoiseLaw::Degenerate { .. } => Ok(0.0),
        }
    }

    pub fn subgaussian_scale(&self, lambda1: f64) -> Result<f64> {
        match *self {
            NoiseLaw::Efc { family, canonical } => subgaussian_scale(family, canonical, lambda1),
            NoiseLaw::Gaussian { sd, .. } if sd > 0.0 => Ok(sd),
            NoiseLaw::Gaussian { .. } | NoiseLaw::Degenerate { .. } => Ok(SCALE_LO),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match *self {
            NoiseLaw::Efc { family, canonical } => family.sample(canonical, rng),
            NoiseLaw::Gaussian { mean, sd } => {
                if sd == 0.0 {
                    return Ok(mean);
                }
                Ok(Normal::new(mean, sd).map_err(|e| QlcError::InvalidInput(e.to_string()))?.sample(rng))
            }
            NoiseLaw::Degenerate { value } => Ok(value),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn log_partition_values() {
        let g = EfcFamily::gaussian(1.0).unwrap();
        assert_relative_eq!(g.log_partition(2.0).unwrap(), 2.0);
        assert_relative_eq!(EfcFamily::Poisson.log_partition(0.0).unwrap(), 1.0);
        assert_relative_eq!(EfcFamily::Bernoulli.log_partition(0.0).unwrap(), 2f64.ln());
    }

    #[test]
    fn cumulant_values() {
        assert_relative_eq!(
            EfcFamily::Poisson.centered_cumulant(0.0, 1.0).unwrap(),
            std::f64::consts::E - 2.0,
            epsilon = 1e-12
        );
        let g = EfcFamily::gaussian(3.0).unwrap();
        assert_relative_eq!(g.centered_cumulant(0.7, 0.4).unwrap(), 9.0 * 0.16 / 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_scale_is_sigma() {
        let g = EfcFamily::gaussian(2.0).unwrap();
        assert_eq!(g.subgaussian_scale(0.3, 1.0).unwrap(), 2.0);
        assert_eq!(g.subgaussian_scale(0.3, f64::INFINITY).unwrap(), 2.0);
    }

    #[test]
    fn poisson_scale_fixture() {
        // Binding constraint sits at lambda = 0.25: e^t - 1 - t = 1/8 with t = 0.5 / s.
        let s = EfcFamily::Poisson.subgaussian_scale(0.0, 0.25).unwrap();
        assert!(s > 1.0 && s < 2.0);
        let t = 0.5 / s;
        assert!((t.exp() - 1.0 - t - 0.125).abs() < 1e-9);
        assert_relative_eq!(s, 1.083_231_041_845_6, epsilon = 1e-9);
    }

    #[test]
    fn bernoulli_saturates_gracefully() {
        let b = EfcFamily::Bernoulli;
        assert!(b.d_dot(800.0).unwrap() <= 1.0);
        assert!(b.log_partition(-800.0).unwrap() >= 0.0);
        assert!(b.centered_cumulant(40.0, -80.0).unwrap().is_finite());
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(EfcFamily::Poisson.log_partition(f64::INFINITY), Err(QlcError::Domain { .. })));
        assert!(EfcFamily::Poisson.log_partition(1000.0).is_err());
        assert!(EfcFamily::Bernoulli.canonical_from_mean(1.0).is_err());
        assert!(EfcFamily::Poisson.subgaussian_scale(0.0, 0.0).is_err());
    }

    #[test]
    fn family_tokens_roundtrip() {
        for tok in ["gaussian:2.5", "poisson", "bernoulli"] {
            let f: EfcFamily = tok.parse().unwrap();
            assert_eq!(f.to_string(), tok);
        }
        assert_eq!("gaussian".parse::<EfcFamily>().unwrap(), EfcFamily::Gaussian { sigma: 1.0 });
        assert!("gaussian:-1".parse::<EfcFamily>().is_err());
        assert!("gamma".parse::<EfcFamily>().is_err());
    }

    fn families() -> impl Strategy<Value = EfcFamily> {
        prop_oneof![
            (0.2f64..3.0).prop_map(|s| EfcFamily::Gaussian { sigma: s }),
            Just(EfcFamily::Poisson),
            Just(EfcFamily::Bernoulli),
        ]
    }

    proptest! {
        #[test]
        fn cumulant_nonneg_and_zero_at_origin(f in families(), v in -4.0f64..4.0, t in -3.0f64..3.0) {
            prop_assert!(f.centered_cumulant(v, t).unwrap() >= 0.0);
            prop_assert_eq!(f.centered_cumulant(v, 0.0).unwrap(), 0.0);
        }

        #[test]
        fn cumulant_second_derivative_is_variance(f in families(), v in -3.0f64..3.0) {
            let h = 1e-3;
            let c2 = (f.centered_cumulant(v, h).unwrap() + f.centered_cumulant(v, -h).unwrap()) / (h * h);
            let var = f.d_ddot(v).unwrap();
            prop_assert!((c2 - var).abs() <= 1e-4 * var.max(1e-3));
        }

        #[test]
        fn derivatives_match_differences(f in families(), v in -3.0f64..3.0) {
            let h = 1e-5;
            let d1 = (f.log_partition(v + h).unwrap() - f.log_partition(v - h).unwrap()) / (2.0 * h);
            let d2 = (f.d_dot(v + h).unwrap() - f.d_dot(v - h).unwrap()) / (2.0 * h);
            prop_assert!((d1 - f.d_dot(v).unwrap()).abs() < 1e-6 * (1.0 + d1.abs()));
            prop_assert!((d2 - f.d_ddot(v).unwrap()).abs() < 1e-6 * (1.0 + d2.abs()));
        }

        #[test]
        fn mean_roundtrip(f in families(), v in -3.0f64..3.0) {
            let m = f.d_dot(v).unwrap();
            let back = f.canonical_from_mean(m).unwrap();
            prop_assert!((back - v).abs() < 1e-9);
        }

        #[test]
        fn scale_satisfies_condition(v in -2.0f64..2.0, l1 in 0.05f64..1.0) {
            let fam = EfcFamily::Poisson;
            let s = fam.subgaussian_scale(v, l1).unwrap();
            for k in 1..=50 {
                let l = l1 * k as f64 / 50.0;
                for lam in [l, -l] {
                    let c = fam.centered_cumulant(v, 2.0 * lam / s).unwrap();
                    prop_assert!(c <= 2.0 * lam * lam * (1.0 + 1e-9));
                }
            }
        }
    }
}
