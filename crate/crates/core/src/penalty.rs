//! Penalty families, their normalizing integrals and the constants that
//! enter the deviation bounds.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QlcError, Result};
use crate::grid::GridDomain;
use crate::linalg::quad_form;
use crate::quadrature::{integrate, integrate_tail};

/// Shape `kappa(t)` of a penalty; non-increasing with `kappa(t) = 1` near 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KappaKind {
    /// `exp(-delta1 (t - 1)_+^2)`.
    Quadratic { delta1: f64 },
    /// `(t + 1)^(-p - delta2)`.
    Logarithmic { delta2: f64 },
    /// Logarithmic below `r_threshold`, quadratic from `r_threshold` on.
    Hybrid { delta1: f64, delta2: f64, r_threshold: f64 },
}

impl KappaKind {
    pub fn validate(&self, p: usize) -> Result<()> {
        if p == 0 {
            return invalid("dimension must be positive");
        }
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                invalid(format!("{name} must be positive and finite, got {v}"))
            }
        };
        match *self {
            KappaKind::Quadratic { delta1 } => pos("delta1", delta1),
            KappaKind::Logarithmic { delta2 } => pos("delta2", delta2),
            KappaKind::Hybrid { delta1, delta2, r_threshold } => {
                pos("delta1", delta1)?;
                pos("delta2", delta2)?;
                pos("r_threshold", r_threshold)?;
                let below = KappaKind::Logarithmic { delta2 }.log_kappa(p, r_threshold);
                let above = KappaKind::Quadratic { delta1 }.log_kappa(p, r_threshold);
                if above > below {
                    return invalid(format!(
                        "hybrid penalty jumps upward at r_threshold = {r_threshold}; kappa would not be monotone"
                    ));
                }
                Ok(())
            }
        }
    }

    /// `log kappa(t)` for dimension `p`.
    pub fn log_kappa(&self, p: usize, t: f64) -> f64 {
        match *self {
            KappaKind::Quadratic { delta1 } => {
                let e = (t - 1.0).max(0.0);
                -delta1 * e * e
            }
            KappaKind::Logarithmic { delta2 } => -(p as f64 + delta2) * (t.max(0.0) + 1.0).ln(),
            KappaKind::Hybrid { delta1, delta2, r_threshold } => {
                if t >= r_threshold {
                    KappaKind::Quadratic { delta1 }.log_kappa(p, t)
                } else {
                    KappaKind::Logarithmic { delta2 }.log_kappa(p, t)
                }
            }
        }
    }

    pub fn kappa(&self, p: usize, t: f64) -> f64 {
        self.log_kappa(p, t).exp()
    }

    /// Values of `t` where `kappa` has a kink or jump.
    fn breakpoints(&self) -> Vec<f64> {
        match *self {
            KappaKind::Quadratic { .. } => vec![1.0],
            KappaKind::Logarithmic { .. } => vec![1.0],
            KappaKind::Hybrid { r_threshold, .. } => {
                let mut b = vec![1.0, r_threshold];
                b.sort_by(f64::total_cmp);
                b.dedup();
                b
            }
        }
    }
}

/// Volume of the unit ball in `R^p`.
pub fn unit_ball_volume(p: usize) -> f64 {
    // omega_0 = 1, omega_1 = 2, omega_p = 2 pi / p * omega_{p-2}
    let mut w = if p % 2 == 0 { 1.0 } else { 2.0 };
    let mut k = if p % 2 == 0 { 2 } else { 3 };
    while k <= p {
        w *= 2.0 * std::f64::consts::PI / k as f64;
        k += 2;
    }
    w
}

/// Entropy constant `sum_{k>=1} 2^-k p log(1 + 2^(k+1))`, summed until the
/// increments drop below `1e-12`.
pub fn entropy_constant(p: usize) -> f64 {
    let mut sum = 0.0;
    let mut k = 1;
    loop {
        let inc = 0.5f64.powi(k) * p as f64 * (1.0 + 2f64.powi(k + 1)).ln();
        sum += inc;
        if inc < 1e-12 {
            return sum;
        }
        k += 1;
    }
}

/// Normalizing integral `p * int_0^inf kappa(t) t^(p-1) dt`.
pub fn pstar(kind: &KappaKind, p: usize, rel_tol: f64) -> Result<f64> {
    kind.validate(p)?;
    let pf = p as f64;
    let integrand = |t: f64| kind.kappa(p, t) * t.powi(p as i32 - 1);
    let mut total = 0.0;
    let mut lo = 0.0;
    let abs_tol = 1e-15;
    for b in kind.breakpoints() {
        total += integrate(integrand, lo, b, abs_tol, rel_tol * 0.1)?;
        lo = b;
    }
    total += integrate_tail(integrand, lo, abs_tol, rel_tol * 0.1)?;
    let out = pf * total;
    if !out.is_finite() {
        return Err(QlcError::Divergent("normalizing integral is infinite".into()));
    }
    Ok(out)
}

/// Reference closed forms for the pure families (exact when `p = 1`).
pub fn pstar_reference(kind: &KappaKind, p: usize) -> Option<f64> {
    let pf = p as f64;
    match *kind {
        KappaKind::Quadratic { delta1 } => {
            Some(1.0 + (std::f64::consts::PI / delta1).powf(pf / 2.0) / unit_ball_volume(p))
        }
        KappaKind::Logarithmic { delta2 } => Some(pf / delta2),
        KappaKind::Hybrid { .. } => None,
    }
}

/// Argument shift inside `kappa`: `kappa(|x| / eps + shift)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KappaShift {
    #[default]
    One,
    Two,
}

impl KappaShift {
    fn value(self) -> f64 {
        match self {
            KappaShift::One => 1.0,
            KappaShift::Two => 2.0,
        }
    }
}

/// Anything that assigns a penalty to a parameter value.
pub trait Penalty: Sync {
    fn value(&self, theta: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> Penalty for F {
    fn value(&self, theta: &[f64]) -> f64 {
        self(theta)
    }
}

/// `-rho^-1 log kappa(eps^-1 |sqrt(V*) (theta - theta0)| + shift)`.
#[derive(Clone, Debug, PartialEq)]
pub struct PenaltySpec {
    pub kappa: KappaKind,
    pub eps: f64,
    pub rho: f64,
    pub theta0: Vec<f64>,
    pub vstar: DMatrix<f64>,
    pub shift: KappaShift,
}

impl PenaltySpec {
    pub fn new(kappa: KappaKind, eps: f64, rho: f64, theta0: Vec<f64>, vstar: DMatrix<f64>) -> Result<Self> {
        let p = theta0.len();
        kappa.validate(p)?;
        check_rho(rho)?;
        if !(eps.is_finite() && eps > 0.0) {
            return invalid(format!("eps must be positive, got {eps}"));
        }
        if vstar.nrows() != p || vstar.ncols() != p {
            return invalid("V* must be p x p");
        }
        Ok(PenaltySpec { kappa, eps, rho, theta0, vstar, shift: KappaShift::One })
    }

    pub fn with_shift(mut self, shift: KappaShift) -> Self {
        self.shift = shift;
        self
    }

    pub fn p(&self) -> usize {
        self.theta0.len()
    }

    /// `|sqrt(V*) (theta - theta0)|`.
    pub fn distance(&self, theta: &[f64]) -> f64 {
        let u: Vec<f64> = theta.iter().zip(&self.theta0).map(|(a, b)| a - b).collect();
        quad_form(&self.vstar, &u).max(0.0).sqrt()
    }

    pub fn evaluate(&self, theta: &[f64]) -> f64 {
        let t = self.distance(theta) / self.eps + self.shift.value();
        -self.kappa.log_kappa(self.p(), t) / self.rho
    }
}

impl Penalty for PenaltySpec {
    fn value(&self, theta: &[f64]) -> f64 {
        self.evaluate(theta)
    }
}

/// `a1^2 (theta - theta0)^T V* (theta - theta0)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticPenalty {
    pub a1: f64,
    pub theta0: Vec<f64>,
    pub vstar: DMatrix<f64>,
}

impl Penalty for QuadraticPenalty {
    fn value(&self, theta: &[f64]) -> f64 {
        let u: Vec<f64> = theta.iter().zip(&self.theta0).map(|(a, b)| a - b).collect();
        self.a1 * self.a1 * quad_form(&self.vstar, &u)
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if !(rho > 0.0 && rho < 1.0) {
        return invalid(format!("rho must lie in (0, 1), got {rho}"));
    }
    Ok(())
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps.is_finite() && eps > 0.0) {
        return invalid(format!("eps must be positive, got {eps}"));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    /// Local entropy plus volume ratio and local penalty integral.
    Main,
    /// Penalty from a shape `kappa` with normalizing integral `P*`.
    Ranking,
    /// Quadratic identifiability penalty.
    Quadratic,
    /// Chaining bound over a general random field.
    Global,
}

/// `log Q` split into its additive pieces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub variant: BoundVariant,
    pub rho: f64,
    pub eps: f64,
    pub p: usize,
    /// `2 eps^2 rho^2 / (1 - rho)`.
    pub deviation_term: f64,
    /// `(1 - rho)` times the entropy constant in use.
    pub entropy_term: f64,
    /// Remaining volume or penalty term.
    pub penalty_term: f64,
    pub log_q: f64,
}

impl BoundConstants {
    fn assemble(variant: BoundVariant, rho: f64, eps: f64, p: usize, entropy: f64, penalty_term: f64) -> Self {
        let deviation_term = 2.0 * eps * eps * rho * rho / (1.0 - rho);
        let entropy_term = (1.0 - rho) * entropy;
        BoundConstants {
            variant,
            rho,
            eps,
            p,
            deviation_term,
            entropy_term,
            penalty_term,
            log_q: deviation_term + entropy_term + penalty_term,
        }
    }

    pub fn q(&self) -> f64 {
        self.log_q.exp()
    }
}

/// `2 eps^2 rho^2/(1-rho) + (1-rho) Q_p + H_eps + p log nu1`.
pub fn bound_q_main(rho: f64, eps: f64, p: usize, nu1: f64, h_eps: f64) -> Result<BoundConstants> {
    check_rho(rho)?;
    check_eps(eps)?;
    if !(nu1 >= 1.0) {
        return invalid(format!("nu1 must be at least 1, got {nu1}"));
    }
    if !h_eps.is_finite() {
        return Err(QlcError::Divergent("local penalty integral is not finite".into()));
    }
    Ok(BoundConstants::assemble(BoundVariant::Main, rho, eps, p, entropy_constant(p), h_eps + p as f64 * nu1.ln()))
}

/// `2 eps^2 rho^2/(1-rho) + (1-rho) Q_p + log P*`.
pub fn bound_q_ranking(rho: f64, eps: f64, p: usize, pstar: f64) -> Result<BoundConstants> {
    check_rho(rho)?;
    check_eps(eps)?;
    if !(pstar.is_finite() && pstar > 0.0) {
        return invalid(format!("P* must be positive and finite, got {pstar}"));
    }
    Ok(BoundConstants::assemble(BoundVariant::Ranking, rho, eps, p, entropy_constant(p), pstar.ln()))
}

/// Constant for the quadratic identifiability penalty with `eps^2 = (1-rho)/rho`:
/// `2 rho + (1-rho) Q_p + log(1 + pi^(p/2) / (omega_p (1-rho)^(p/2) a1^p))`.
/// `s` must equal `1 - a1^2/a^2`.
pub fn bound_q_quadratic(rho: f64, s: f64, a: f64, a1: f64, p: usize) -> Result<BoundConstants> {
    check_rho(rho)?;
    if !(a > 0.0 && a1 > 0.0 && a1 <= a * (1.0 + 1e-12)) {
        return invalid(format!("need 0 < a1 <= a, got a1 = {a1}, a = {a}"));
    }
    if !(0.0..1.0).contains(&s) {
        return invalid(format!("s must lie in [0, 1), got {s}"));
    }
    let implied = 1.0 - a1 * a1 / (a * a);
    if (implied - s).abs() > 1e-9 {
        return invalid(format!("s = {s} does not match 1 - a1^2/a^2 = {implied}"));
    }
    let pf = p as f64;
    let eps = ((1.0 - rho) / rho).sqrt();
    let vol = std::f64::consts::PI.powf(pf / 2.0) / (unit_ball_volume(p) * (1.0 - rho).powf(pf / 2.0) * a1.powf(pf));
    Ok(BoundConstants::assemble(BoundVariant::Quadratic, rho, eps, p, entropy_constant(p), vol.ln_1p()))
}

/// Global chaining constant `2 eps^2 rho^2/(1-rho) + (1-rho) Q* + log nu + H`.
pub fn global_bound_constants(rho: f64, eps: f64, p: usize, q_star: f64, nu: f64, h: f64) -> Result<BoundConstants> {
    check_rho(rho)?;
    check_eps(eps)?;
    if !(nu >= 1.0 && q_star.is_finite() && q_star >= 0.0 && h.is_finite()) {
        return invalid("global constants need nu >= 1 and finite entropy and penalty terms");
    }
    Ok(BoundConstants::assemble(BoundVariant::Global, rho, eps, p, q_star, nu.ln() + h))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoEpsCheck {
    /// `rho eps / (1 - rho)`.
    pub lhs: f64,
    pub lambda_star: f64,
    pub holds: bool,
}

/// Range condition `rho eps / (1 - rho) <= lambda*`.
pub fn check_rho_eps(rho: f64, eps: f64, lambda_star: f64) -> Result<RhoEpsCheck> {
    check_rho(rho)?;
    check_eps(eps)?;
    let lhs = rho * eps / (1.0 - rho);
    Ok(RhoEpsCheck { lhs, lambda_star, holds: lhs <= lambda_star })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HEpsReport {
    pub value: f64,
    /// Share of the Riemann sum carried by points on the grid boundary.
    pub edge_fraction: f64,
}

/// `log{ omega_p^-1 eps^-p int sqrt(det V(theta)) exp(-rho pen_eps(theta)) dtheta }`
/// as a trapezoid sum on `grid`, where `pen_eps` is the minimum of the
/// penalty over grid points in the local ellipsoid `|sqrt(V(theta)) (. - theta)| <= eps`.
pub fn h_eps<P, V>(pen: &P, vfield: V, grid: &GridDomain, eps: f64, rho: f64) -> Result<HEpsReport>
where
    P: Penalty + ?Sized,
    V: Fn(&[f64]) -> DMatrix<f64>,
{
    check_eps(eps)?;
    if !(rho > 0.0) {
        return invalid(format!("rho must be positive, got {rho}"));
    }
    let p = grid.dim();
    let n = grid.len();
    let points = grid.points();
    let pens: Vec<f64> = points.iter().map(|x| pen.value(x)).collect();
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let v = vfield(&points[i]);
        let det = v.clone().determinant();
        if !(det > 0.0) {
            return Err(QlcError::ConditionViolated(format!("V is not positive definite at {:?}", points[i])));
        }
        let inv = v.clone().try_inverse().ok_or_else(|| QlcError::ConditionViolated("V is singular".into()))?;
        let radii: Vec<usize> =
            (0..p).map(|k| (eps * inv[(k, k)].max(0.0).sqrt() / grid.spacing(k)).floor() as usize).collect();
        let mut local = pens[i];
        for j in grid.window(i, &radii) {
            if pens[j] >= local {
                continue;
            }
            let d: Vec<f64> = points[j].iter().zip(&points[i]).map(|(a, b)| a - b).collect();
            if quad_form(&v, &d) <= eps * eps * (1.0 + 1e-12) {
                local = pens[j];
            }
        }
        terms.push((grid.weight(i) * det.sqrt()).ln() - rho * local);
    }
    let top = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !top.is_finite() {
        return Err(QlcError::Divergent("penalty integral is degenerate".into()));
    }
    let mut total = 0.0;
    let mut edge = 0.0;
    for (i, t) in terms.iter().enumerate() {
        let w = (t - top).exp();
        total += w;
        if grid.on_boundary(i) {
            edge += w;
        }
    }
    let value = top + total.ln() - unit_ball_volume(p).ln() - p as f64 * eps.ln();
    Ok(HEpsReport { value, edge_fraction: edge / total })
}

/// [`h_eps`] with a tail check: the sum is recomputed on a box twice as wide
/// with the same spacing and must not grow by more than 1%.
pub fn h_eps_checked<P, V>(pen: &P, vfield: V, grid: &GridDomain, eps: f64, rho: f64) -> Result<HEpsReport>
where
    P: Penalty + ?Sized,
    V: Fn(&[f64]) -> DMatrix<f64>,
{
    let base = h_eps(pen, &vfield, grid, eps, rho)?;
    let wide = grid.widened()?;
    let big = h_eps(pen, &vfield, &wide, eps, rho)?;
    if big.value - base.value > 0.01f64.ln_1p() {
        return Err(QlcError::Divergent(format!(
            "penalty integral grows from {} to {} when the box doubles",
            base.value, big.value
        )));
    }
    Ok(base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn unit_ball_volumes() {
        assert_eq!(unit_ball_volume(1), 2.0);
        assert_relative_eq!(unit_ball_volume(2), std::f64::consts::PI, epsilon = 1e-15);
        assert_relative_eq!(unit_ball_volume(3), 4.0 * std::f64::consts::PI / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn entropy_constant_fixture() {
        // Independent high-precision evaluation of the series.
        assert_relative_eq!(entropy_constant(1), 2.230_607_106_568_092, epsilon = 1e-11);
        assert_relative_eq!(entropy_constant(3), 3.0 * entropy_constant(1), epsilon = 1e-11);
    }

    #[test]
    fn penalty_values() {
        let v = DMatrix::identity(1, 1);
        let quad = PenaltySpec::new(KappaKind::Quadratic { delta1: 1.0 }, 1.0, 0.5, vec![0.0], v.clone()).unwrap();
        assert_relative_eq!(quad.evaluate(&[2.0]), 8.0, epsilon = 1e-12);
        let log = PenaltySpec::new(KappaKind::Logarithmic { delta2: 1.0 }, 1.0, 0.5, vec![0.0], v).unwrap();
        assert_relative_eq!(log.evaluate(&[1.0]), 4.0 * 3f64.ln(), epsilon = 1e-12);
        let shifted = log.clone().with_shift(KappaShift::Two);
        assert_relative_eq!(shifted.evaluate(&[1.0]), 4.0 * 4f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn pstar_matches_one_dimensional_forms() {
        for d in [0.5, 1.0, std::f64::consts::PI] {
            let k = KappaKind::Quadratic { delta1: d };
            assert_relative_eq!(pstar(&k, 1, 1e-12).unwrap(), pstar_reference(&k, 1).unwrap(), max_relative = 1e-8);
        }
        for d in [0.5, 1.0, 2.0] {
            let k = KappaKind::Logarithmic { delta2: d };
            assert_relative_eq!(pstar(&k, 1, 1e-12).unwrap(), 1.0 / d, max_relative = 1e-8);
            let two = pstar(&k, 2, 1e-12).unwrap();
            assert_relative_eq!(two, 2.0 / (d * (1.0 + d)), max_relative = 1e-8);
            assert!(two <= 2.0 / d);
        }
    }

    #[test]
    fn quadratic_bound_fixture() {
        let b = bound_q_quadratic(0.5, 0.5, 1.0, 0.5f64.sqrt(), 1).unwrap();
        let expect = 1.0 + 0.5 * entropy_constant(1) + (1.0 + std::f64::consts::PI.sqrt()).ln();
        assert_relative_eq!(b.log_q, expect, epsilon = 1e-12);
        assert!(bound_q_quadratic(0.5, 0.4, 1.0, 0.5f64.sqrt(), 1).is_err());
    }

    #[test]
    fn rejects_invalid() {
        assert!(bound_q_ranking(1.2, 1.0, 1, 2.0).is_err());
        assert!(bound_q_ranking(0.0, 1.0, 1, 2.0).is_err());
        assert!(KappaKind::Logarithmic { delta2: 0.0 }.validate(1).is_err());
        assert!(KappaKind::Hybrid { delta1: 1.0, delta2: 1.0, r_threshold: 0.5 }.validate(1).is_err());
        assert!(KappaKind::Hybrid { delta1: 1.0, delta2: 1.0, r_threshold: 3.0 }.validate(1).is_ok());
        assert!(check_rho_eps(0.5, 1.0, 0.5).map(|c| !c.holds).unwrap());
    }

    #[test]
    fn h_eps_constant_penalty() {
        let g = GridDomain::new(vec![-2.0], vec![3.0], vec![201]).unwrap();
        let c = 0.7;
        let r = h_eps(&|_: &[f64]| c, |_: &[f64]| DMatrix::from_element(1, 1, 4.0), &g, 0.5, 0.3).unwrap();
        let expect = (0.5f64.powi(-1) * 2.0 * 5.0 / 2.0).ln() - 0.3 * c;
        assert_relative_eq!(r.value, expect, epsilon = 1e-10);
    }

    #[test]
    fn h_eps_matches_pstar_for_quadratic() {
        let (rho, eps, delta1) = (0.5, 1.0, 1.0);
        let spec =
            PenaltySpec::new(KappaKind::Quadratic { delta1 }, eps, rho, vec![0.0], DMatrix::identity(1, 1)).unwrap();
        let g = GridDomain::new(vec![-10.0], vec![10.0], vec![4001]).unwrap();
        let r = h_eps_checked(&spec, |_: &[f64]| DMatrix::identity(1, 1), &g, eps, rho).unwrap();
        let target = pstar(&spec.kappa, 1, 1e-10).unwrap().ln();
        assert!((r.value - target).abs() <= 0.02 * target.abs());
    }

    #[test]
    fn h_eps_flags_flat_penalty() {
        let g = GridDomain::new(vec![-5.0], vec![5.0], vec![101]).unwrap();
        let r = h_eps_checked(&|_: &[f64]| 0.0, |_: &[f64]| DMatrix::identity(1, 1), &g, 1.0, 0.5);
        assert!(matches!(r, Err(QlcError::Divergent(_))));
    }

    proptest! {
        #[test]
        fn kappa_monotone_and_unit_at_origin(d1 in 0.1f64..4.0, d2 in 0.1f64..4.0, p in 1usize..5, t in 0.0f64..20.0, dt in 0.0f64..5.0) {
            for k in [KappaKind::Quadratic { delta1: d1 }, KappaKind::Logarithmic { delta2: d2 }] {
                prop_assert!(k.kappa(p, t + dt) <= k.kappa(p, t));
            }
            prop_assert_eq!(KappaKind::Quadratic { delta1: d1 }.kappa(p, 0.5), 1.0);
            prop_assert_eq!(KappaKind::Logarithmic { delta2: d2 }.kappa(p, 0.0), 1.0);
        }

        #[test]
        fn quadratic_penalty_identity(d1 in 0.1f64..4.0, rho in 0.05f64..0.95, eps in 0.1f64..3.0, x in -5.0f64..5.0, y in -5.0f64..5.0) {
            let v = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]);
            let spec = PenaltySpec::new(KappaKind::Quadratic { delta1: d1 }, eps, rho, vec![0.0, 0.0], v.clone()).unwrap();
            let expect = d1 / (rho * eps * eps) * quad_form(&v, &[x, y]);
            prop_assert!((spec.evaluate(&[x, y]) - expect).abs() <= 1e-10 * (1.0 + expect));
        }

        #[test]
        fn heavier_penalty_lowers_h(c in 0.0f64..3.0, rho in 0.1f64..0.9) {
            let g = GridDomain::new(vec![-3.0], vec![3.0], vec![61]).unwrap();
            let pen = |x: &[f64]| c * x[0] * x[0];
            let pen2 = |x: &[f64]| 2.0 * c * x[0] * x[0];
            let v = |_: &[f64]| DMatrix::identity(1, 1);
            let a = h_eps(&pen, v, &g, 0.5, rho).unwrap().value;
            let b = h_eps(&pen2, v, &g, 0.5, rho).unwrap().value;
            prop_assert!(b <= a + 1e-12);
        }

        #[test]
        fn ranking_bound_monotone_in_pstar(rho in 0.05f64..0.95, eps in 0.1f64..2.0, p1 in 1.0f64..10.0, extra in 0.0f64..10.0) {
            let a = bound_q_ranking(rho, eps, 2, p1).unwrap().log_q;
            let b = bound_q_ranking(rho, eps, 2, p1 + extra).unwrap().log_q;
            prop_assert!(b >= a);
        }
    }
}
