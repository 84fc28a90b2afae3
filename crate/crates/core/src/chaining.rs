//! Chaining over a random field indexed by a grid: the path-integrated
//! semimetric, ball covers, local entropy and the local-maximum inequality.

use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, QlcError, Result};
use crate::grid::GridDomain;
use crate::linalg::{gen_eig_extremes, sym_eigen};
pub use crate::penalty::global_bound_constants;

type MatrixFn = dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync;

/// Matrix field `H(v)` that scales increments of the random field.
#[derive(Clone)]
pub enum HField {
    Constant(DMatrix<f64>),
    Function(Arc<MatrixFn>),
}

impl HField {
    pub fn function<F: Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static>(f: F) -> Self {
        HField::Function(Arc::new(f))
    }

    pub fn at(&self, v: &[f64]) -> DMatrix<f64> {
        match self {
            HField::Constant(m) => m.clone(),
            HField::Function(f) => f(v),
        }
    }
}

impl std::fmt::Debug for HField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HField::Constant(m) => write!(f, "Constant({m:?})"),
            HField::Function(_) => f.write_str("Function(..)"),
        }
    }
}

/// Serializable description of an `H` field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum HFieldSpec {
    Identity,
    /// Constant matrix given by rows.
    Constant {
        matrix: Vec<Vec<f64>>,
    },
    /// `(a + b |v|^2)^power I`.
    Radial {
        a: f64,
        b: f64,
        power: f64,
    },
}

impl HFieldSpec {
    pub fn build(&self, p: usize) -> Result<HField> {
        match self {
            HFieldSpec::Identity => Ok(HField::Constant(DMatrix::identity(p, p))),
            HFieldSpec::Constant { matrix } => {
                if matrix.len() != p || matrix.iter().any(|r| r.len() != p) {
                    return invalid(format!("H must be {p} x {p}"));
                }
                Ok(HField::Constant(DMatrix::from_fn(p, p, |i, j| matrix[i][j])))
            }
            &HFieldSpec::Radial { a, b, power } => {
                if !(a >= 0.0 && b >= 0.0 && a + b > 0.0) {
                    return invalid("radial field needs a, b >= 0 and a + b > 0");
                }
                Ok(HField::function(move |v: &[f64]| {
                    let r2: f64 = v.iter().map(|x| x * x).sum();
                    DMatrix::identity(v.len(), v.len()) * (a + b * r2).powf(power)
                }))
            }
        }
    }
}

/// Default number of trapezoid panels along a path.
pub const PATH_PANELS: usize = 64;

/// Grid-indexed field with precomputed points, weights and `H` values.
#[derive(Clone, Debug)]
pub struct RandomFieldSpec {
    pub domain: GridDomain,
    pub h: HField,
    pub panels: usize,
    points: Vec<Vec<f64>>,
    weights: Vec<f64>,
    h_sq: Vec<DMatrix<f64>>,
    /// Smallest eigenvalue of `H^2` over the grid, used to bound ball extents.
    min_eig: f64,
}

impl RandomFieldSpec {
    pub fn new(domain: GridDomain, h: HField) -> Result<Self> {
        domain.validate()?;
        let points = domain.points();
        let p = domain.dim();
        let h_sq: Vec<DMatrix<f64>> = points
            .iter()
            .map(|x| {
                let m = h.at(x);
                m.transpose() * m
            })
            .collect();
        if let Some(m) = h_sq.iter().find(|m| m.nrows() != p || m.ncols() != p) {
            return invalid(format!("H has shape {:?} but the grid has dimension {p}", m.shape()));
        }
        let min_eig = h_sq
            .iter()
            .map(|m| sym_eigen(m).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
            .fold(f64::INFINITY, f64::min);
        if !(min_eig > 0.0) {
            return Err(QlcError::ConditionViolated("H is singular somewhere on the grid".into()));
        }
        let weights = domain.weights();
        Ok(RandomFieldSpec { domain, h, panels: PATH_PANELS, points, weights, h_sq, min_eig })
    }

    pub fn with_panels(mut self, panels: usize) -> Self {
        self.panels = panels.max(1);
        self
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i]
    }

    /// `H(v)^T H(v)` at grid point `i`.
    pub fn h_sq_at(&self, i: usize) -> &DMatrix<f64> {
        &self.h_sq[i]
    }

    /// Path semimetric
    /// `D(v, w)^2 = |w - v|^2 int_0^1 g^T H^2(v + t (w - v)) g dt`, `g = (w - v)/|w - v|`,
    /// by the trapezoid rule.
    pub fn semimetric(&self, v: &[f64], w: &[f64]) -> f64 {
        let d: Vec<f64> = w.iter().zip(v).map(|(a, b)| a - b).collect();
        match &self.h {
            HField::Constant(m) => {
                let hd = m * nalgebra::DVector::from_column_slice(&d);
                hd.norm()
            }
            HField::Function(f) => {
                let n = self.panels;
                let mut acc = 0.0;
                let mut x = vec![0.0; v.len()];
                for k in 0..=n {
                    let t = k as f64 / n as f64;
                    for (j, xj) in x.iter_mut().enumerate() {
                        *xj = v[j] + t * d[j];
                    }
                    let m = f(&x);
                    let sq: f64 = (0..d.len())
                        .map(|r| {
                            let row: f64 = (0..d.len()).map(|c| m[(r, c)] * d[c]).sum();
                            row * row
                        })
                        .sum();
                    let wgt = if k == 0 || k == n { 0.5 } else { 1.0 };
                    acc += wgt * sq;
                }
                (acc / n as f64).sqrt()
            }
        }
    }

    /// Semimetric between grid points, evaluated from the lexicographically
    /// smaller point so that it is exactly symmetric.
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.semimetric(&self.points[a], &self.points[b])
    }

    /// Grid points within semimetric distance `eps` of grid point `center`.
    pub fn ball(&self, center: usize, eps: f64) -> Vec<usize> {
        let reach = eps / self.min_eig.sqrt();
        let radii: Vec<usize> = (0..self.dim())
            .map(|k| (reach / self.domain.spacing(k)).floor().min(self.domain.points_per_axis[k] as f64) as usize)
            .collect();
        self.domain.window(center, &radii).into_iter().filter(|&j| self.distance(center, j) <= eps).collect()
    }

    /// Grid points `w` with `|H(center) (w - center)| <= r`.
    pub fn local_ball(&self, center: usize, r: f64) -> Vec<usize> {
        let c = &self.points[center];
        let hs = &self.h_sq[center];
        (0..self.len())
            .filter(|&j| {
                let d: Vec<f64> = self.points[j].iter().zip(c).map(|(a, b)| a - b).collect();
                crate::linalg::quad_form(hs, &d) <= r * r
            })
            .collect()
    }

    /// Trapezoid measure of a set of grid points.
    pub fn measure(&self, idx: &[usize]) -> f64 {
        idx.iter().map(|&i| self.weights[i]).sum()
    }
}

/// Covering radii of farthest-point traversal of `ball` starting at `center`:
/// entry `k` is the covering radius achieved by the first `k + 1` centers.
fn traversal_radii(spec: &RandomFieldSpec, center: usize, ball: &[usize], stop_at: f64) -> Vec<f64> {
    let mut nearest: Vec<f64> = ball.iter().map(|&q| spec.distance(center, q)).collect();
    let mut radii = Vec::new();
    loop {
        let (arg, r) = nearest
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (k, &d)| if d > acc.1 { (k, d) } else { acc });
        radii.push(r.max(0.0));
        if r <= stop_at || radii.len() >= ball.len() {
            return radii;
        }
        let c = ball[arg];
        for (k, &q) in ball.iter().enumerate() {
            if nearest[k] > 0.0 {
                let d = spec.distance(c, q);
                if d < nearest[k] {
                    nearest[k] = d;
                }
            }
        }
    }
}

fn count_for(radii: &[f64], eps0: f64) -> usize {
    radii.iter().position(|&r| r <= eps0).map_or(radii.len(), |k| k + 1)
}

/// Number of semimetric balls of radius `eps0`, centered at grid points,
/// needed to cover the grid points of `B(eps, center)`. Greedy farthest-point
/// cover, so an upper bound on the true covering number.
pub fn covering_number(spec: &RandomFieldSpec, eps0: f64, eps: f64, center: usize) -> Result<usize> {
    if !(eps0 > 0.0 && eps > 0.0) {
        return invalid("covering radii must be positive");
    }
    if center >= spec.len() {
        return invalid("center index out of range");
    }
    let ball = spec.ball(center, eps);
    Ok(count_for(&traversal_radii(spec, center, &ball, eps0), eps0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub center: Vec<f64>,
    pub eps: f64,
    pub ball_size: usize,
    /// Covering numbers at radii `2^-k eps`, `k = 1, 2, ...`.
    pub counts: Vec<usize>,
    /// Value of the remaining terms added after the last computed level.
    pub tail: f64,
    pub value: f64,
}

/// Local entropy `sum_k 2^-k log N(2^-k eps, eps, center)`. Once the count
/// saturates at the ball size the remaining levels are summed exactly; the
/// sum is also cut when the remaining terms are below `1e-9`.
pub fn local_entropy(spec: &RandomFieldSpec, eps: f64, center: usize) -> Result<EntropyReport> {
    if !(eps > 0.0) {
        return invalid("eps must be positive");
    }
    if center >= spec.len() {
        return invalid("center index out of range");
    }
    let ball = spec.ball(center, eps);
    let m = ball.len();
    let log_m = (m as f64).ln();
    let radii = traversal_radii(spec, center, &ball, 0.0);
    let mut counts = Vec::new();
    let mut value = 0.0;
    let mut tail = 0.0;
    let mut k = 1;
    loop {
        let w = 0.5f64.powi(k);
        let n = count_for(&radii, w * eps);
        counts.push(n);
        value += w * (n as f64).ln();
        if n >= m {
            tail = w * log_m;
            value += tail;
            break;
        }
        if w * log_m < 1e-9 {
            break;
        }
        k += 1;
    }
    Ok(EntropyReport { center: spec.point(center).to_vec(), eps, ball_size: m, counts, tail, value })
}

/// Largest local entropy over the given centers (all grid points when `None`).
pub fn max_local_entropy(spec: &RandomFieldSpec, eps: f64, centers: Option<&[usize]>) -> Result<EntropyReport> {
    let all: Vec<usize>;
    let centers = match centers {
        Some(c) => c,
        None => {
            all = (0..spec.len()).collect();
            &all
        }
    };
    let reports = centers.par_iter().map(|&c| local_entropy(spec, eps, c)).collect::<Result<Vec<_>>>()?;
    reports
        .into_iter()
        .reduce(|a, b| if b.value > a.value { b } else { a })
        .ok_or_else(|| QlcError::InvalidInput("no centers".into()))
}

/// Estimate of the local variability constant: the largest
/// `g^T H^2(w) g / g^T H^2(v) g` over grid pairs with `D(v, w) <= eps` and all
/// directions `g` (a generalized eigenvalue). Never below 1.
pub fn nu1_estimate(spec: &RandomFieldSpec, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return invalid("eps must be positive");
    }
    let per_center = (0..spec.len())
        .into_par_iter()
        .map(|i| {
            let mut best = 1.0f64;
            for j in spec.ball(i, eps) {
                if j != i {
                    best = best.max(gen_eig_extremes(&spec.h_sq[j], &spec.h_sq[i])?.max);
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_center.into_iter().fold(1.0, f64::max))
}

/// `nu1` restricted to pairs `(center, w)` with `w` in `B(eps, center)`:
/// the larger generalized eigenvalue of `H^2(w)` against `H^2(center)` and back.
pub fn nu1_at(spec: &RandomFieldSpec, center: usize, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return invalid("eps must be positive");
    }
    if center >= spec.len() {
        return invalid("center index out of range");
    }
    let hc = &spec.h_sq[center];
    let mut best = 1.0f64;
    for j in spec.ball(center, eps) {
        if j != center {
            best = best.max(gen_eig_extremes(&spec.h_sq[j], hc)?.max);
            best = best.max(gen_eig_extremes(hc, &spec.h_sq[j])?.max);
        }
    }
    Ok(best)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalMaxCheck {
    pub sup: f64,
    /// `nu * int f*(v) / pi(B(eps, v)) dpi(v)`.
    pub rhs: f64,
    /// Largest ratio `pi(B(v)) / pi(B(w))` over neighbouring grid pairs.
    pub nu: f64,
    /// `nu1^p` for comparison; equals the volume ratio only away from the box faces.
    pub nu1_pow_p: f64,
    pub holds: bool,
}

/// Checks `sup f <= nu int f*(v) / pi(B(eps, v)) dpi(v)` for non-negative grid
/// values `f`, with `f*` the maximum of `f` over `B(eps, v)`.
pub fn local_max_integral_check(spec: &RandomFieldSpec, eps: f64, f: &[f64]) -> Result<LocalMaxCheck> {
    if f.len() != spec.len() {
        return invalid("function values must match the grid");
    }
    if f.iter().any(|v| !(*v >= 0.0)) {
        return invalid("function values must be non-negative");
    }
    let balls: Vec<Vec<usize>> = (0..spec.len()).into_par_iter().map(|i| spec.ball(i, eps)).collect();
    let mass: Vec<f64> = balls.iter().map(|b| spec.measure(b)).collect();
    let mut nu = 1.0f64;
    let mut integral = 0.0;
    for (i, b) in balls.iter().enumerate() {
        let fstar = b.iter().map(|&j| f[j]).fold(0.0, f64::max);
        integral += spec.weights[i] * fstar / mass[i];
        for &j in b {
            nu = nu.max(mass[j] / mass[i]);
        }
    }
    let sup = f.iter().copied().fold(0.0, f64::max);
    let rhs = nu * integral;
    let nu1 = nu1_estimate(spec, eps)?;
    Ok(LocalMaxCheck { sup, rhs, nu, nu1_pow_p: nu1.powi(spec.dim() as i32), holds: sup <= rhs * (1.0 + 1e-12) })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    /// `B'(nu1^-1/2 eps) ⊆ B(eps)` on the grid.
    pub inner_ok: bool,
    /// `B(eps) ⊆ B'(nu1^1/2 eps)` on the grid.
    pub outer_ok: bool,
    /// Grid-counted volume of `B(eps)`.
    pub volume: f64,
    /// `omega_p eps^p / det H(center)`.
    pub reference_volume: f64,
}

/// Compares the semimetric ball with the local ellipsoids `B'(r)` defined
/// by `H(center)`, and its grid volume with the ellipsoid volume.
pub fn ball_sandwich(spec: &RandomFieldSpec, eps: f64, center: usize, nu1: f64) -> Result<SandwichReport> {
    if !(nu1 >= 1.0) {
        return invalid("nu1 must be at least 1");
    }
    let ball = spec.ball(center, eps);
    let mut member = vec![false; spec.len()];
    for &j in &ball {
        member[j] = true;
    }
    let inner = spec.local_ball(center, eps / nu1.sqrt());
    let outer = spec.local_ball(center, eps * nu1.sqrt());
    let mut in_outer = vec![false; spec.len()];
    for &j in &outer {
        in_outer[j] = true;
    }
    let det_h = spec.h_sq[center].clone().determinant().sqrt();
    let p = spec.dim();
    Ok(SandwichReport {
        inner_ok: inner.iter().all(|&j| member[j]),
        outer_ok: ball.iter().all(|&j| in_outer[j]),
        volume: spec.measure(&ball),
        reference_volume: crate::penalty::unit_ball_volume(p) * eps.powi(p as i32) / det_h,
    })
}
