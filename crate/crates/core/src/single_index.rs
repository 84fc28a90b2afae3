//! Single-index models `Y_i ~ P_{g(X_i^T theta)}` with a known nonlinear link
//! `g` mapping into the canonical parameter.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::efc::{EfcFamily, NoiseLaw};
use crate::error::{invalid, QlcError, Result};
use crate::glm::{check_design, check_mu, linear_predictor};
use crate::grid::ParamBox;
use crate::linalg::weighted_gram;
use crate::optim::{multistart, LocalOptimum, Objective, OptimOptions};

/// Link library: `g`, `g'` and `g''` in closed form.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LinkFunction {
    Identity,
    Logistic,
    Tanh,
    Sin,
    /// `u^2`; even, so symmetric designs give mirrored maximizers.
    Square,
}

impl LinkFunction {
    pub fn g(&self, u: f64) -> f64 {
        match self {
            LinkFunction::Identity => u,
            LinkFunction::Logistic => 1.0 / (1.0 + (-u).exp()),
            LinkFunction::Tanh => u.tanh(),
            LinkFunction::Sin => u.sin(),
            LinkFunction::Square => u * u,
        }
    }

    pub fn g_dot(&self, u: f64) -> f64 {
        match self {
            LinkFunction::Identity => 1.0,
            LinkFunction::Logistic => {
                let s = self.g(u);
                s * (1.0 - s)
            }
            LinkFunction::Tanh => 1.0 - u.tanh().powi(2),
            LinkFunction::Sin => u.cos(),
            LinkFunction::Square => 2.0 * u,
        }
    }

    pub fn g_ddot(&self, u: f64) -> f64 {
        match self {
            LinkFunction::Identity => 0.0,
            LinkFunction::Logistic => {
                let s = self.g(u);
                s * (1.0 - s) * (1.0 - 2.0 * s)
            }
            LinkFunction::Tanh => {
                let t = u.tanh();
                -2.0 * t * (1.0 - t * t)
            }
            LinkFunction::Sin => -u.sin(),
            LinkFunction::Square => 2.0,
        }
    }
}

impl fmt::Display for LinkFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LinkFunction::Identity => "identity",
            LinkFunction::Logistic => "logistic",
            LinkFunction::Tanh => "tanh",
            LinkFunction::Sin => "sin",
            LinkFunction::Square => "square",
        })
    }
}

impl FromStr for LinkFunction {
    type Err = QlcError;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "identity" => Ok(LinkFunction::Identity),
            "logistic" => Ok(LinkFunction::Logistic),
            "tanh" => Ok(LinkFunction::Tanh),
            "sin" => Ok(LinkFunction::Sin),
            "square" => Ok(LinkFunction::Square),
            other => invalid(format!("unknown link '{other}'")),
        }
    }
}

impl Serialize for LinkFunction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for LinkFunction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiModel {
    pub design: DMatrix<f64>,
    pub responses: Vec<f64>,
    pub family: EfcFamily,
    pub link: LinkFunction,
    pub mu: f64,
    pub theta_box: ParamBox,
}

impl SiModel {
    pub fn new(
        design: DMatrix<f64>,
        responses: Vec<f64>,
        family: EfcFamily,
        link: LinkFunction,
        mu: f64,
        theta_box: ParamBox,
    ) -> Result<Self> {
        check_design(&design, &responses)?;
        check_mu(mu)?;
        theta_box.validate()?;
        if theta_box.dim() != design.ncols() {
            return invalid("parameter box dimension differs from the number of columns");
        }
        Ok(SiModel { design, responses, family, link, mu, theta_box })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    pub fn with_responses(&self, responses: Vec<f64>) -> Result<Self> {
        check_design(&self.design, &responses)?;
        Ok(SiModel { responses, ..self.clone() })
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.p() {
            return invalid(format!("theta has length {} but p = {}", theta.len(), self.p()));
        }
        Ok(())
    }

    fn check_truth(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n() {
            return invalid(format!("{} true canonical values for {} observations", f.len(), self.n()));
        }
        let dom = self.family.natural_domain();
        if let Some(v) = f.iter().find(|v| !dom.contains(**v)) {
            return Err(QlcError::Domain { value: *v, domain: dom.to_string() });
        }
        Ok(())
    }

    /// Canonical parameters `g(X_i^T theta)`.
    pub fn index_values(&self, theta: &[f64]) -> Vec<f64> {
        linear_predictor(&self.design, theta).into_iter().map(|u| self.link.g(u)).collect()
    }

    /// `mu * sum_i {Y_i g(X_i^T theta) - d(g(X_i^T theta))}`.
    pub fn quasi_loglik(&self, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(self.mu * self.objective(&self.responses).value(theta)?)
    }

    fn objective<'a>(&'a self, y: &'a [f64]) -> SiObjective<'a> {
        SiObjective { design: &self.design, y, family: self.family, link: self.link }
    }

    pub fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        Ok(self.objective(&self.responses).gradient(theta)?.into_iter().map(|g| self.mu * g).collect())
    }

    pub fn hessian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        Ok(self.objective(&self.responses).hessian(theta)? * self.mu)
    }
}

/// Unscaled objective `sum_i {y_i g - d(g)}`.
struct SiObjective<'a> {
    design: &'a DMatrix<f64>,
    y: &'a [f64],
    family: EfcFamily,
    link: LinkFunction,
}

impl Objective for SiObjective<'_> {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        let mut s = 0.0;
        for (i, u) in linear_predictor(self.design, theta).into_iter().enumerate() {
            let g = self.link.g(u);
            s += self.y[i] * g - self.family.log_partition(g)?;
        }
        Ok(s)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; theta.len()];
        for (i, u) in linear_predictor(self.design, theta).into_iter().enumerate() {
            let g = self.link.g(u);
            let w = (self.y[i] - self.family.d_dot(g)?) * self.link.g_dot(u);
            for (k, o) in out.iter_mut().enumerate() {
                *o += w * self.design[(i, k)];
            }
        }
        Ok(out)
    }

    fn hessian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let mut w = Vec::with_capacity(self.y.len());
        for (i, u) in linear_predictor(self.design, theta).into_iter().enumerate() {
            let g = self.link.g(u);
            let gd = self.link.g_dot(u);
            w.push(-self.family.d_ddot(g)? * gd * gd + (self.y[i] - self.family.d_dot(g)?) * self.link.g_ddot(u));
        }
        Ok(weighted_gram(self.design, &w))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiFitResult {
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub grad_norm: f64,
    pub converged: bool,
    pub at_boundary: bool,
    /// Distinct local maximizers in decreasing order of the objective.
    pub optima: Vec<LocalOptimum>,
    pub multimodal: bool,
    pub max_gap: f64,
}

fn run_multistart(model: &SiModel, y: &[f64], extra_starts: &[Vec<f64>], opts: OptimOptions) -> Result<SiFitResult> {
    let mut starts = model.theta_box.lattice3();
    for s in extra_starts {
        model.check_theta(s)?;
        starts.push(s.clone());
    }
    let m = multistart(&model.objective(y), &model.theta_box, &starts, opts)?;
    if !m.best.converged {
        return Err(QlcError::NonConvergence {
            iterations: m.best.iterations,
            grad_norm: m.best.grad_norm,
            last: m.best.x,
        });
    }
    Ok(SiFitResult {
        loglik: model.mu * m.best.value,
        theta: m.best.x,
        grad_norm: m.best.grad_norm,
        converged: m.best.converged,
        at_boundary: m.best.at_boundary,
        optima: m.optima.into_iter().map(|o| LocalOptimum { value: model.mu * o.value, ..o }).collect(),
        multimodal: m.multimodal,
        max_gap: model.mu * m.max_gap,
    })
}

/// Quasi-MLE by multistart Newton from a 3^p lattice over the box.
pub fn si_fit(model: &SiModel, opts: OptimOptions) -> Result<SiFitResult> {
    si_fit_with_starts(model, &[], opts)
}

/// [`si_fit`] with additional start points.
pub fn si_fit_with_starts(model: &SiModel, extra_starts: &[Vec<f64>], opts: OptimOptions) -> Result<SiFitResult> {
    run_multistart(model, &model.responses, extra_starts, opts)
}

/// Target `argmax sum_i {d'(f_i) g(X_i^T theta) - d(g(X_i^T theta))}` for true
/// canonical values `f`. `max_gap > tol` with `multimodal` set signals a
/// target that is not identified by a single basin.
pub fn si_target_theta0(model: &SiModel, f: &[f64], opts: OptimOptions) -> Result<SiFitResult> {
    model.check_truth(f)?;
    let means = f.iter().map(|v| model.family.d_dot(*v)).collect::<Result<Vec<_>>>()?;
    run_multistart(model, &means, &[], opts)
}

/// Noise laws for true canonical values `f`.
pub fn si_truth(family: EfcFamily, f: &[f64]) -> Vec<NoiseLaw> {
    f.iter().map(|&canonical| NoiseLaw::Efc { family, canonical }).collect()
}

/// `mu^2 sum_i s^2(f_i) g'(X_i^T theta)^2 X_i X_i^T` with sub-gaussian scales
/// `s(f_i)` at level `lambda1`.
pub fn si_v_matrix(model: &SiModel, f: &[f64], theta: &[f64], lambda1: f64) -> Result<DMatrix<f64>> {
    model.check_truth(f)?;
    model.check_theta(theta)?;
    let u = linear_predictor(&model.design, theta);
    let mut w = Vec::with_capacity(model.n());
    for i in 0..model.n() {
        let s = model.family.subgaussian_scale(f[i], lambda1)?;
        let gd = model.link.g_dot(u[i]);
        w.push(model.mu * model.mu * s * s * gd * gd);
    }
    Ok(weighted_gram(&model.design, &w))
}

struct RateParts {
    u: Vec<f64>,
    g: Vec<f64>,
    tilted: Vec<f64>,
}

fn rate_parts(model: &SiModel, theta: &[f64], theta0: &[f64], f: &[f64]) -> Result<RateParts> {
    model.check_truth(f)?;
    model.check_theta(theta)?;
    model.check_theta(theta0)?;
    let u = linear_predictor(&model.design, theta);
    let g: Vec<f64> = u.iter().map(|v| model.link.g(*v)).collect();
    let g0 = model.index_values(theta0);
    let tilted: Vec<f64> = (0..model.n()).map(|i| f[i] + model.mu * (g[i] - g0[i])).collect();
    let dom = model.family.natural_domain();
    if let Some(t) = tilted.iter().find(|t| !dom.contains(**t)) {
        return Err(QlcError::Domain { value: *t, domain: dom.to_string() });
    }
    Ok(RateParts { u, g, tilted })
}

/// `sum_i {d(f_i) - d(f_i + mu delta_i) + mu d(g(X_i^T theta)) - mu d(g(X_i^T theta0))}`
/// with `delta_i = g(X_i^T theta) - g(X_i^T theta0)`.
pub fn si_rate_function(model: &SiModel, theta: &[f64], theta0: &[f64], f: &[f64]) -> Result<f64> {
    let parts = rate_parts(model, theta, theta0, f)?;
    let g0 = model.index_values(theta0);
    let d = |v: f64| model.family.log_partition(v);
    let mut s = 0.0;
    for i in 0..model.n() {
        s += d(f[i])? - d(parts.tilted[i])? + model.mu * (d(parts.g[i])? - d(g0[i])?);
    }
    Ok(s)
}

/// `mu sum_i [d'(g) - d'(f_i + mu delta_i)] g' X_i`.
pub fn si_rate_gradient(model: &SiModel, theta: &[f64], theta0: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    let parts = rate_parts(model, theta, theta0, f)?;
    let mut out = vec![0.0; model.p()];
    for i in 0..model.n() {
        let w = model.mu
            * (model.family.d_dot(parts.g[i])? - model.family.d_dot(parts.tilted[i])?)
            * model.link.g_dot(parts.u[i]);
        for (k, o) in out.iter_mut().enumerate() {
            *o += w * model.design[(i, k)];
        }
    }
    Ok(out)
}

/// `sum_i mu {d''(g) g'^2 - mu d''(f_i + mu delta_i) g'^2 + [d'(g) - d'(f_i + mu delta_i)] g''} X_i X_i^T`.
pub fn si_rate_hessian(model: &SiModel, theta: &[f64], theta0: &[f64], f: &[f64]) -> Result<DMatrix<f64>> {
    let parts = rate_parts(model, theta, theta0, f)?;
    let fam = model.family;
    let mut w = Vec::with_capacity(model.n());
    for i in 0..model.n() {
        let (g, t, u) = (parts.g[i], parts.tilted[i], parts.u[i]);
        let gd = model.link.g_dot(u);
        let curv = fam.d_ddot(g)? * gd * gd - model.mu * fam.d_ddot(t)? * gd * gd;
        let drift = (fam.d_dot(g)? - fam.d_dot(t)?) * model.link.g_ddot(u);
        w.push(model.mu * (curv + drift));
    }
    Ok(weighted_gram(&model.design, &w))
}
