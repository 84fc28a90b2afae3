//! Parameter boxes and rectangular evaluation grids.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Axis-aligned box `[lower, upper]`; infinite bounds are allowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl ParamBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        let b = ParamBox { lower, upper };
        b.validate()?;
        Ok(b)
    }

    pub fn unbounded(dim: usize) -> Self {
        ParamBox { lower: vec![f64::NEG_INFINITY; dim], upper: vec![f64::INFINITY; dim] }
    }

    pub fn validate(&self) -> Result<()> {
        if self.lower.len() != self.upper.len() || self.lower.is_empty() {
            return invalid("box bounds must be non-empty and of equal length");
        }
        for (l, u) in self.lower.iter().zip(&self.upper) {
            if l.is_nan() || u.is_nan() || l > u {
                return invalid(format!("empty box axis [{l}, {u}]"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn is_bounded(&self) -> bool {
        self.lower.iter().chain(&self.upper).all(|v| v.is_finite())
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && x.iter().zip(self.lower.iter().zip(&self.upper)).all(|(v, (l, u))| v >= l && v <= u)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    /// All `2^p` corners in lexicographic order.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let p = self.dim();
        (0..1usize << p)
            .map(|mask| {
                (0..p).map(|k| if mask >> (p - 1 - k) & 1 == 1 { self.upper[k] } else { self.lower[k] }).collect()
            })
            .collect()
    }

    /// Start points of a 3^p lattice: interior thirds of each finite axis,
    /// `-1, 0, 1` on unbounded ones.
    pub fn lattice3(&self) -> Vec<Vec<f64>> {
        let axes: Vec<[f64; 3]> = self
            .lower
            .iter()
            .zip(&self.upper)
            .map(|(&l, &u)| {
                if l.is_finite() && u.is_finite() {
                    let w = u - l;
                    [l + w / 6.0, l + w / 2.0, l + 5.0 * w / 6.0]
                } else if l.is_finite() {
                    [l + 0.5, l + 1.0, l + 2.0]
                } else if u.is_finite() {
                    [u - 2.0, u - 1.0, u - 0.5]
                } else {
                    [-1.0, 0.0, 1.0]
                }
            })
            .collect();
        let p = axes.len();
        let total = 3usize.pow(p as u32);
        (0..total)
            .map(|mut idx| {
                let mut x = vec![0.0; p];
                for k in (0..p).rev() {
                    x[k] = axes[k][idx % 3];
                    idx /= 3;
                }
                x
            })
            .collect()
    }
}

/// Largest number of points a grid may hold.
pub const GRID_CAP: usize = 5_000_000;

/// Rectangular grid with endpoints included, enumerated in row-major order
/// (last axis fastest).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridDomain {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub points_per_axis: Vec<usize>,
}

impl GridDomain {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, points_per_axis: Vec<usize>) -> Result<Self> {
        let g = GridDomain { lower, upper, points_per_axis };
        g.validate()?;
        Ok(g)
    }

    /// Same number of points on every axis of `bx`.
    pub fn uniform(bx: &ParamBox, points: usize) -> Result<Self> {
        GridDomain::new(bx.lower.clone(), bx.upper.clone(), vec![points; bx.dim()])
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.lower.len();
        if p == 0 || self.upper.len() != p || self.points_per_axis.len() != p {
            return invalid("grid bounds and point counts must have equal, non-zero length");
        }
        for k in 0..p {
            let (l, u) = (self.lower[k], self.upper[k]);
            if !(l.is_finite() && u.is_finite() && l < u) {
                return invalid(format!("grid axis {k} needs finite bounds with lower < upper"));
            }
            if self.points_per_axis[k] < 2 {
                return invalid(format!("grid axis {k} needs at least 2 points"));
            }
        }
        let mut total: usize = 1;
        for &n in &self.points_per_axis {
            total = total
                .checked_mul(n)
                .filter(|&t| t <= GRID_CAP)
                .ok_or_else(|| crate::error::QlcError::InvalidInput(format!("grid exceeds {GRID_CAP} points")))?;
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn len(&self) -> usize {
        self.points_per_axis.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        (self.upper[axis] - self.lower[axis]) / (self.points_per_axis[axis] - 1) as f64
    }

    pub fn as_box(&self) -> ParamBox {
        ParamBox { lower: self.lower.clone(), upper: self.upper.clone() }
    }

    fn coord(&self, axis: usize, j: usize) -> f64 {
        let n = self.points_per_axis[axis];
        if j + 1 == n {
            self.upper[axis]
        } else {
            self.lower[axis] + j as f64 * self.spacing(axis)
        }
    }

    /// Multi-index of flat index `i`.
    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let p = self.dim();
        let mut idx = vec![0; p];
        for k in (0..p).rev() {
            idx[k] = i % self.points_per_axis[k];
            i /= self.points_per_axis[k];
        }
        idx
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.points_per_axis).fold(0, |acc, (&j, &n)| acc * n + j)
    }

    pub fn point(&self, i: usize) -> Vec<f64> {
        self.multi_index(i).iter().enumerate().map(|(k, &j)| self.coord(k, j)).collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Trapezoid weight of point `i`; the weights sum to the box volume.
    pub fn weight(&self, i: usize) -> f64 {
        self.multi_index(i)
            .iter()
            .enumerate()
            .map(|(k, &j)| {
                let h = self.spacing(k);
                if j == 0 || j + 1 == self.points_per_axis[k] {
                    0.5 * h
                } else {
                    h
                }
            })
            .product()
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.weight(i)).collect()
    }

    /// Halve the spacing on every axis; existing points are kept.
    pub fn refined(&self) -> Result<Self> {
        GridDomain::new(
            self.lower.clone(),
            self.upper.clone(),
            self.points_per_axis.iter().map(|&n| 2 * n - 1).collect(),
        )
    }

    /// Box twice as wide about the same center with the same spacing.
    pub fn widened(&self) -> Result<Self> {
        let p = self.dim();
        let mut lower = Vec::with_capacity(p);
        let mut upper = Vec::with_capacity(p);
        let mut pts = Vec::with_capacity(p);
        for k in 0..p {
            let n = self.points_per_axis[k] - 1;
            let extra = n.div_ceil(2);
            let h = self.spacing(k);
            lower.push(self.lower[k] - extra as f64 * h);
            upper.push(self.upper[k] + extra as f64 * h);
            pts.push(n + 2 * extra + 1);
        }
        GridDomain::new(lower, upper, pts)
    }

    /// Whether point `i` lies on a face of the box.
    pub fn on_boundary(&self, i: usize) -> bool {
        self.multi_index(i).iter().zip(&self.points_per_axis).any(|(&j, &n)| j == 0 || j + 1 == n)
    }

    /// Flat indices within `radii[k]` index steps of point `i` along every axis.
    pub fn window(&self, i: usize, radii: &[usize]) -> Vec<usize> {
        let center = self.multi_index(i);
        let p = self.dim();
        let lo: Vec<usize> = (0..p).map(|k| center[k].saturating_sub(radii[k])).collect();
        let hi: Vec<usize> = (0..p).map(|k| (center[k] + radii[k]).min(self.points_per_axis[k] - 1)).collect();
        let mut out = Vec::new();
        let mut idx = lo.clone();
        loop {
            out.push(self.flat_index(&idx));
            let mut k = p;
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                if idx[k] < hi[k] {
                    idx[k] += 1;
                    idx[k + 1..p].copy_from_slice(&lo[k + 1..p]);
                    break;
                }
            }
        }
    }

    /// Index of the grid point nearest to `x` (coordinates clamped to the box).
    pub fn nearest(&self, x: &[f64]) -> usize {
        let idx: Vec<usize> = (0..self.dim())
            .map(|k| {
                let t = ((x[k] - self.lower[k]) / self.spacing(k)).round();
                t.clamp(0.0, (self.points_per_axis[k] - 1) as f64) as usize
            })
            .collect();
        self.flat_index(&idx)
    }
}

/// Evaluate `f` on a grid and on its refinement, doubling until two
/// consecutive results agree to `rel_tol`. Returns the accepted value and the
/// grid that produced it.
pub fn refine_until_stable<F>(grid: &GridDomain, rel_tol: f64, max_doublings: usize, f: F) -> Result<(f64, GridDomain)>
where
    F: Fn(&GridDomain) -> Result<f64>,
{
    let mut g = grid.clone();
    let mut prev = f(&g)?;
    for _ in 0..max_doublings {
        let next_grid = g.refined()?;
        let next = f(&next_grid)?;
        let scale = prev.abs().max(next.abs());
        let agree = (next - prev).abs() <= rel_tol * scale || next == prev;
        g = next_grid;
        prev = next;
        if agree {
            return Ok((prev, g));
        }
    }
    Err(crate::error::QlcError::ConditionViolated(format!(
        "grid result not stable to {rel_tol} after {max_doublings} doublings"
    )))
}
