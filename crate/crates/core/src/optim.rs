//! Box-constrained maximization by projected, damped Newton steps.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{QlcError, Result};
use crate::grid::ParamBox;
use crate::linalg::sym_eigen;

/// Smooth objective to be maximized.
pub trait Objective {
    fn value(&self, x: &[f64]) -> Result<f64>;
    fn gradient(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimOptions {
    /// Target norm of the projected gradient.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions { tol: 1e-10, max_iter: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    /// Norm of the gradient with components blocked by active bounds removed.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Iterations that fell back from a Newton step to a regularized one.
    pub fallback_steps: usize,
    pub at_boundary: bool,
}

fn projected_gradient(bx: &ParamBox, x: &[f64], g: &[f64]) -> (Vec<f64>, Vec<bool>) {
    let mut pg = g.to_vec();
    let mut free = vec![true; x.len()];
    for k in 0..x.len() {
        let blocked = (x[k] <= bx.lower[k] && g[k] < 0.0) || (x[k] >= bx.upper[k] && g[k] > 0.0);
        if blocked {
            pg[k] = 0.0;
            free[k] = false;
        }
    }
    (pg, free)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Ascent direction on the free coordinates: Newton when the negated Hessian
/// is positive definite, otherwise a Levenberg-shifted step.
fn direction(h: &DMatrix<f64>, g: &[f64], free: &[bool]) -> (Vec<f64>, bool) {
    let idx: Vec<usize> = (0..g.len()).filter(|&k| free[k]).collect();
    let m = idx.len();
    let mut neg_h = DMatrix::zeros(m, m);
    let mut rhs = DVector::zeros(m);
    for (a, &i) in idx.iter().enumerate() {
        rhs[a] = g[i];
        for (b, &j) in idx.iter().enumerate() {
            neg_h[(a, b)] = -h[(i, j)];
        }
    }
    let scatter = |d: &DVector<f64>| {
        let mut out = vec![0.0; g.len()];
        for (a, &i) in idx.iter().enumerate() {
            out[i] = d[a];
        }
        out
    };
    let finite = neg_h.iter().all(|v| v.is_finite());
    if finite {
        if let Some(ch) = Cholesky::new(neg_h.clone()) {
            let d = ch.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) && d.dot(&rhs) > 0.0 {
                return (scatter(&d), false);
            }
        }
        let e = sym_eigen(&neg_h);
        let lmin = e.eigenvalues.iter().fold(f64::INFINITY, |x, &y| x.min(y));
        let scale = e.eigenvalues.iter().fold(0.0f64, |x, &y| x.max(y.abs())).max(1e-8);
        let shift = (-lmin).max(0.0) + 1e-3 * scale;
        let shifted = neg_h + DMatrix::identity(m, m) * shift;
        if let Some(ch) = Cholesky::new(shifted) {
            let d = ch.solve(&rhs);
            if d.iter().all(|v| v.is_finite()) && d.dot(&rhs) > 0.0 {
                return (scatter(&d), true);
            }
        }
    }
    // Plain gradient ascent, normalized so the first trial step is bounded.
    let gn = rhs.norm().max(1.0);
    (scatter(&(rhs / gn)), true)
}

const MAX_ESCAPES: usize = 4;

/// At a stationary point with positive curvature in some free direction, step
/// along that direction (both signs tried) to leave a minimum or saddle.
fn escape_saddle<O: Objective + ?Sized>(
    obj: &O,
    bx: &ParamBox,
    x: &[f64],
    f: f64,
    h: &DMatrix<f64>,
    free: &[bool],
) -> Option<(Vec<f64>, f64)> {
    let idx: Vec<usize> = (0..x.len()).filter(|&k| free[k]).collect();
    if idx.is_empty() {
        return None;
    }
    let sub = DMatrix::from_fn(idx.len(), idx.len(), |a, b| h[(idx[a], idx[b])]);
    let e = sym_eigen(&sub);
    let (k, lmax) = e
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (k, &l)| if l > acc.1 { (k, l) } else { acc });
    let scale = e.eigenvalues.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    if !(lmax > 1e-8 * scale.max(1e-12)) {
        return None;
    }
    let mut best: Option<(Vec<f64>, f64)> = None;
    for sign in [1.0, -1.0] {
        let mut t = 1e-3 * (1.0 + norm(x));
        for _ in 0..40 {
            let mut trial = x.to_vec();
            for (a, &i) in idx.iter().enumerate() {
                trial[i] += sign * t * e.eigenvectors[(a, k)];
            }
            bx.project(&mut trial);
            if let Ok(ft) = obj.value(&trial) {
                if ft > f {
                    if best.as_ref().map_or(true, |b| ft > b.1) {
                        best = Some((trial, ft));
                    }
                    break;
                }
            }
            t *= 2.0;
        }
    }
    best
}

/// Maximize `obj` over `bx` from `init` (projected into the box first).
/// Second-order predicted increase `g' H^-1 g / 2` along the free
/// coordinates; infinite when the Hessian is not negative definite there.
fn newton_gain(h: &DMatrix<f64>, pg: &[f64], free: &[bool]) -> f64 {
    let idx: Vec<usize> = (0..pg.len()).filter(|&i| free[i]).collect();
    if idx.is_empty() {
        return 0.0;
    }
    let k = idx.len();
    let neg = DMatrix::from_fn(k, k, |a, b| -h[(idx[a], idx[b])]);
    let g = DVector::from_iterator(k, idx.iter().map(|&i| pg[i]));
    match neg.cholesky() {
        Some(c) => 0.5 * g.dot(&c.solve(&g)),
        None => f64::INFINITY,
    }
}

pub fn maximize<O: Objective + ?Sized>(
    obj: &O,
    bx: &ParamBox,
    init: &[f64],
    opts: OptimOptions,
) -> Result<OptimResult> {
    if init.len() != bx.dim() {
        return Err(QlcError::InvalidInput(format!("start has dimension {} but the box has {}", init.len(), bx.dim())));
    }
    let mut x = init.to_vec();
    bx.project(&mut x);
    let mut f = obj.value(&x)?;
    let mut fallback_steps = 0;
    let mut iterations = 0;
    let mut converged = false;
    let mut pg_norm = f64::INFINITY;
    let mut escapes = 0;
    while iterations < opts.max_iter {
        let g = obj.gradient(&x)?;
        let (pg, free) = projected_gradient(bx, &x, &g);
        pg_norm = norm(&pg);
        let h = obj.hessian(&x)?;
        if pg_norm <= opts.tol {
            if escapes < MAX_ESCAPES {
                if let Some((xn, fnew)) = escape_saddle(obj, bx, &x, f, &h, &free) {
                    escapes += 1;
                    iterations += 1;
                    x = xn;
                    f = fnew;
                    continue;
                }
            }
            converged = true;
            break;
        }
        iterations += 1;
        let (d, fell_back) = direction(&h, &pg, &free);
        if fell_back {
            fallback_steps += 1;
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..80 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            bx.project(&mut trial);
            let gain: f64 = g.iter().zip(trial.iter().zip(&x)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if let Ok(ft) = obj.value(&trial) {
                if ft.is_finite() && ft >= f + 1e-4 * gain && ft >= f {
                    accepted = Some((trial, ft));
                    break;
                }
            }
            t *= 0.5;
        }
        match accepted {
            Some((xn, fnew)) => {
                let moved = xn.iter().zip(&x).any(|(a, b)| a != b);
                x = xn;
                let stalled = fnew - f <= 1e-15 * f.abs().max(1.0);
                f = fnew;
                if !moved || stalled {
                    // Progress is below rounding; accept if the gradient or
                    // the predicted Newton gain is at rounding level.
                    let g = obj.gradient(&x)?;
                    let (pg, free) = projected_gradient(bx, &x, &g);
                    pg_norm = norm(&pg);
                    converged = pg_norm <= opts.tol.max(1e-7 * (1.0 + norm(&g)))
                        || newton_gain(&obj.hessian(&x)?, &pg, &free) <= 1e-12 * f.abs().max(1.0);
                    break;
                }
            }
            None => {
                converged = pg_norm <= opts.tol.max(1e-7) || newton_gain(&h, &pg, &free) <= 1e-12 * f.abs().max(1.0);
                break;
            }
        }
    }
    if !converged && iterations >= opts.max_iter {
        let g = obj.gradient(&x)?;
        pg_norm = norm(&projected_gradient(bx, &x, &g).0);
        converged = pg_norm <= opts.tol;
    }
    let at_boundary = x.iter().zip(bx.lower.iter().zip(&bx.upper)).any(|(v, (l, u))| v <= l || v >= u);
    Ok(OptimResult { x, value: f, grad_norm: pg_norm, iterations, converged, fallback_steps, at_boundary })
}

/// A distinct local maximizer reached by at least one start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocalOptimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub starts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MultistartResult {
    pub best: OptimResult,
    pub optima: Vec<LocalOptimum>,
    /// More than one distinct maximizer was found.
    pub multimodal: bool,
    /// Largest objective gap between the best and any other local maximum.
    pub max_gap: f64,
}

/// Run [`maximize`] from every start and merge the results deterministically:
/// the highest value wins, near-ties go to the lexicographically smallest point.
pub fn multistart<O: Objective + ?Sized>(
    obj: &O,
    bx: &ParamBox,
    starts: &[Vec<f64>],
    opts: OptimOptions,
) -> Result<MultistartResult> {
    if starts.is_empty() {
        return Err(QlcError::InvalidInput("multistart needs at least one start".into()));
    }
    let mut runs = Vec::with_capacity(starts.len());
    let mut last_err = None;
    for s in starts {
        match maximize(obj, bx, s, opts) {
            Ok(r) => runs.push(r),
            Err(e) => last_err = Some(e),
        }
    }
    if runs.is_empty() {
        return Err(last_err.unwrap_or_else(|| QlcError::InvalidInput("no starts".into())));
    }
    let scale = bx
        .lower
        .iter()
        .zip(&bx.upper)
        .map(|(l, u)| if (u - l).is_finite() { u - l } else { 1.0 })
        .fold(1.0f64, f64::max);
    let same_point =
        |a: &[f64], b: &[f64]| norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>()) <= 1e-5 * scale;
    let mut optima: Vec<LocalOptimum> = Vec::new();
    for r in &runs {
        match optima.iter_mut().find(|o| same_point(&o.x, &r.x)) {
            Some(o) => {
                o.starts += 1;
                if r.value > o.value {
                    o.value = r.value;
                    o.x = r.x.clone();
                }
            }
            None => optima.push(LocalOptimum { x: r.x.clone(), value: r.value, starts: 1 }),
        }
    }
    let top = optima.iter().map(|o| o.value).fold(f64::NEG_INFINITY, f64::max);
    let tie = 1e-10 * top.abs().max(1.0);
    let best = runs
        .iter()
        .filter(|r| r.value >= top - tie)
        .min_by(|a, b| lex_cmp(&a.x, &b.x))
        .cloned()
        .expect("at least one run");
    let max_gap = optima.iter().map(|o| top - o.value).fold(0.0, f64::max);
    optima.sort_by(|a, b| b.value.total_cmp(&a.value).then_with(|| lex_cmp(&a.x, &b.x)));
    Ok(MultistartResult { best, multimodal: optima.len() > 1, optima, max_gap })
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            std::cmp::Ordering::Equal => continue,
            o => return o,
        }
    }
    std::cmp::Ordering::Equal
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Quad {
        center: Vec<f64>,
    }

    impl Objective for Quad {
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok(-x.iter().zip(&self.center).map(|(a, c)| (a - c).powi(2)).sum::<f64>())
        }
        fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(x.iter().zip(&self.center).map(|(a, c)| -2.0 * (a - c)).collect())
        }
        fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
            Ok(DMatrix::identity(x.len(), x.len()) * -2.0)
        }
    }

    /// Double well `-(x^2 - 1)^2`.
    struct Wells;

    impl Objective for Wells {
        fn value(&self, x: &[f64]) -> Result<f64> {
            Ok(-(x[0] * x[0] - 1.0).powi(2))
        }
        fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
            Ok(vec![-4.0 * x[0] * (x[0] * x[0] - 1.0)])
        }
        fn hessian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_element(1, 1, -(12.0 * x[0] * x[0] - 4.0)))
        }
    }

    #[test]
    fn interior_and_boundary() {
        let q = Quad { center: vec![0.3, 5.0] };
        let bx = ParamBox::new(vec![-1.0, -1.0], vec![1.0, 1.0]).unwrap();
        let r = maximize(&q, &bx, &[0.0, 0.0], OptimOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.at_boundary);
        assert_relative_eq!(r.x[0], 0.3, epsilon = 1e-12);
        assert_eq!(r.x[1], 1.0);
    }

    #[test]
    fn start_at_optimum_takes_no_steps() {
        let q = Quad { center: vec![0.3] };
        let r = maximize(&q, &ParamBox::unbounded(1), &[0.3], OptimOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn indefinite_start_falls_back() {
        let r = maximize(&Wells, &ParamBox::unbounded(1), &[0.1], OptimOptions::default()).unwrap();
        assert!(r.converged);
        assert!(r.fallback_steps > 0);
        assert_relative_eq!(r.x[0].abs(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn multistart_flags_two_wells() {
        let bx = ParamBox::new(vec![-2.0], vec![2.0]).unwrap();
        let m = multistart(&Wells, &bx, &bx.lattice3(), OptimOptions::default()).unwrap();
        assert!(m.multimodal);
        assert_eq!(m.optima.len(), 2);
        assert!(m.max_gap < 1e-12);
        assert_relative_eq!(m.best.x[0], -1.0, epsilon = 1e-9);
    }
}
