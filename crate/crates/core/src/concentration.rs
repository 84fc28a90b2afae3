//! Grid evaluation of the set functionals `z(A)` and `b(r)` and the tail and
//! coverage bounds built from them.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QlcError, Result};
pub use crate::grid::{refine_until_stable, GridDomain};
use crate::linalg::{quad_form, sym_eigen};
use crate::penalty::{bound_q_quadratic, check_rho, BoundConstants, Penalty};

/// Rate function and penalty tabulated on a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldValues {
    pub points: Vec<Vec<f64>>,
    pub rate: Vec<f64>,
    pub penalty: Vec<f64>,
}

/// Tabulate `rate` and `pen` over `grid`.
pub fn evaluate_field<R, P>(grid: &GridDomain, rate: R, pen: &P) -> Result<FieldValues>
where
    R: Fn(&[f64]) -> Result<f64> + Sync,
    P: Penalty + ?Sized,
{
    let points = grid.points();
    let rate = points.par_iter().map(|x| rate(x)).collect::<Result<Vec<_>>>()?;
    let penalty = points.iter().map(|x| pen.value(x)).collect();
    Ok(FieldValues { points, rate, penalty })
}

impl FieldValues {
    /// `inf_{theta not in A} {M(theta) - pen(theta)}`; `+inf` if `A` covers the grid.
    pub fn z_of_set<A: Fn(&[f64]) -> bool>(&self, in_a: A) -> f64 {
        self.points
            .iter()
            .zip(self.rate.iter().zip(&self.penalty))
            .filter(|(x, _)| !in_a(x))
            .map(|(_, (m, p))| m - p)
            .fold(f64::INFINITY, f64::min)
    }

    /// `max(0, sup_{M(theta) > r} {r + pen(theta) - M(theta)})`.
    pub fn b_of_r(&self, r: f64) -> f64 {
        self.rate.iter().zip(&self.penalty).filter(|(m, _)| **m > r).map(|(m, p)| r + p - m).fold(0.0, f64::max)
    }
}

/// `inf` of `M - pen` over grid points outside `A`.
pub fn z_of_set<A, R, P>(in_a: A, rate: R, pen: &P, grid: &GridDomain) -> Result<f64>
where
    A: Fn(&[f64]) -> bool,
    R: Fn(&[f64]) -> Result<f64> + Sync,
    P: Penalty + ?Sized,
{
    Ok(evaluate_field(grid, rate, pen)?.z_of_set(in_a))
}

/// `b(r)` on the grid.
pub fn b_of_r<R, P>(r: f64, rate: R, pen: &P, grid: &GridDomain) -> Result<f64>
where
    R: Fn(&[f64]) -> Result<f64> + Sync,
    P: Penalty + ?Sized,
{
    Ok(evaluate_field(grid, rate, pen)?.b_of_r(r))
}

/// A probability bound before and after clamping to `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundValue {
    pub log_value: f64,
    pub raw: f64,
    pub clamped: f64,
}

impl BoundValue {
    fn from_log(log_value: f64) -> Self {
        let raw = log_value.exp();
        BoundValue { log_value, raw, clamped: raw.min(1.0) }
    }
}

/// `Q exp{-rho (r - b(r))}`.
pub fn tail_bound(r: f64, rho: f64, log_q: f64, b_r: f64) -> Result<BoundValue> {
    check_rho(rho)?;
    Ok(BoundValue::from_log(log_q - rho * (r - b_r)))
}

/// `Q exp{-rho z + rho b(0)}`.
pub fn coverage_bound(z: f64, rho: f64, log_q: f64, b0: f64) -> Result<BoundValue> {
    check_rho(rho)?;
    Ok(BoundValue::from_log(log_q - rho * z + rho * b0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Minorant {
    /// Largest `a^2` with `M(theta) >= a^2 |sqrt(V*) (theta - theta0)|^2` on the region.
    pub a_sq: f64,
    pub argmin: Vec<f64>,
    pub points_used: usize,
}

/// Quadratic minorant of the rate function over grid points with
/// `|sqrt(V*) (theta - theta0)| <= radius` (the center itself excluded).
pub fn quadratic_minorant(field: &FieldValues, vstar: &DMatrix<f64>, theta0: &[f64], radius: f64) -> Result<Minorant> {
    let mut a_sq = f64::INFINITY;
    let mut argmin = Vec::new();
    let mut used = 0;
    for (x, m) in field.points.iter().zip(&field.rate) {
        let u: Vec<f64> = x.iter().zip(theta0).map(|(a, b)| a - b).collect();
        let q = quad_form(vstar, &u);
        if q <= 1e-14 || q > radius * radius {
            continue;
        }
        if *m < -1e-12 {
            return Err(QlcError::ConditionViolated(format!("rate function is negative ({m}) at {x:?}")));
        }
        used += 1;
        let ratio = m / q;
        if ratio < a_sq {
            a_sq = ratio;
            argmin = x.clone();
        }
    }
    if used == 0 {
        return invalid("no grid points in the minorant region");
    }
    Ok(Minorant { a_sq: a_sq.max(0.0), argmin, points_used: used })
}

/// Report for the quadratic identifiability bound. Both readings of the
/// excess term are surfaced: the analytic `b(r) <= (1 - s) r` and the value
/// of `b(r)` measured on the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadraticBoundReport {
    pub rho: f64,
    pub a: f64,
    pub a1: f64,
    pub s: f64,
    pub constants: BoundConstants,
    /// Constant with `a1 = a` (no penalty slack), used for coverage.
    pub constants_s0: BoundConstants,
    pub r: Vec<f64>,
    /// `Q(rho, s) exp(-rho s r)`.
    pub tail_analytic: Vec<BoundValue>,
    /// `b(r)` measured on the grid.
    pub b_measured: Vec<f64>,
    /// `Q(rho, s) exp{-rho (r - b(r))}` with the measured `b(r)`.
    pub tail_measured: Vec<BoundValue>,
    /// All measured `b(r)` vanish (to `1e-12`).
    pub b_is_zero: bool,
    /// Measured `b(r)` never exceeds `(1 - s) r`.
    pub b_within_analytic: bool,
    pub z: Vec<f64>,
    /// `Q(rho, 0) exp(-rho z)`.
    pub coverage: Vec<BoundValue>,
}

/// Assemble the quadratic bound on a tabulated field whose penalty is
/// `a1^2 |sqrt(V*) (theta - theta0)|^2`.
pub fn quadratic_bound_report(
    field: &FieldValues,
    rho: f64,
    a: f64,
    a1: f64,
    p: usize,
    r: &[f64],
    z: &[f64],
) -> Result<QuadraticBoundReport> {
    let s = 1.0 - a1 * a1 / (a * a);
    let constants = bound_q_quadratic(rho, s, a, a1, p)?;
    let constants_s0 = bound_q_quadratic(rho, 0.0, a, a, p)?;
    let mut tail_analytic = Vec::with_capacity(r.len());
    let mut tail_measured = Vec::with_capacity(r.len());
    let mut b_measured = Vec::with_capacity(r.len());
    let mut b_is_zero = true;
    let mut b_within_analytic = true;
    for &ri in r {
        let b = field.b_of_r(ri);
        b_is_zero &= b <= 1e-12;
        b_within_analytic &= b <= (1.0 - s) * ri + 1e-9 * (1.0 + ri.abs());
        tail_analytic.push(tail_bound(ri, rho, constants.log_q, (1.0 - s) * ri)?);
        tail_measured.push(tail_bound(ri, rho, constants.log_q, b)?);
        b_measured.push(b);
    }
    let coverage = z.iter().map(|&zi| coverage_bound(zi, rho, constants_s0.log_q, 0.0)).collect::<Result<Vec<_>>>()?;
    Ok(QuadraticBoundReport {
        rho,
        a,
        a1,
        s,
        constants,
        constants_s0,
        r: r.to_vec(),
        tail_analytic,
        b_measured,
        tail_measured,
        b_is_zero,
        b_within_analytic,
        z: z.to_vec(),
        coverage,
    })
}

/// Ellipsoid `{theta : (theta - theta0)^T D (theta - theta0) <= level}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ellipsoid {
    pub center: Vec<f64>,
    pub shape: DMatrix<f64>,
    pub level: f64,
    /// Semi-axis lengths, in increasing order of the shape eigenvalues.
    pub radii: Vec<f64>,
}

impl Ellipsoid {
    pub fn contains(&self, theta: &[f64]) -> bool {
        let u: Vec<f64> = theta.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        quad_form(&self.shape, &u) <= self.level
    }
}

/// Root-n neighborhood `{(theta - theta0)^T D1^2 (theta - theta0) <= r / n}`.
pub fn root_n_neighborhood(theta0: &[f64], d1: &DMatrix<f64>, r: f64, n: usize) -> Result<Ellipsoid> {
    let p = theta0.len();
    if d1.nrows() != p || d1.ncols() != p {
        return invalid("D1 must be p x p");
    }
    if !(r > 0.0) || n == 0 {
        return invalid("need r > 0 and n > 0");
    }
    let shape = d1.transpose() * d1;
    let level = r / n as f64;
    let e = sym_eigen(&shape);
    let mut eig: Vec<f64> = e.eigenvalues.iter().copied().collect();
    eig.sort_by(f64::total_cmp);
    if eig[0] <= 0.0 {
        return Err(QlcError::ConditionViolated("D1 is singular".into()));
    }
    let radii = eig.iter().map(|l| (level / l).sqrt()).collect();
    Ok(Ellipsoid { center: theta0.to_vec(), shape, level, radii })
}
