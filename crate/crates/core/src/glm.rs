//! Generalized linear models with a canonical link, fitted by quasi-maximum
//! likelihood, together with their deterministic target, rate function and
//! local geometry.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::efc::{EfcFamily, NoiseLaw};
use crate::error::{invalid, QlcError, Result};
use crate::grid::ParamBox;
use crate::linalg::{gen_eig_extremes, psd_pinv, quad_form, sym_eigen, weighted_gram};
use crate::optim::{maximize, Objective, OptimOptions};

#[derive(Clone, Debug, PartialEq)]
pub struct GlmModel {
    /// `n x p` design; row `i` is the feature vector of observation `i`.
    pub design: DMatrix<f64>,
    pub responses: Vec<f64>,
    pub family: EfcFamily,
    /// Scaling of the log-likelihood, `0 < mu <= 1`.
    pub mu: f64,
    pub theta_box: ParamBox,
}

pub(crate) fn check_design(design: &DMatrix<f64>, responses: &[f64]) -> Result<()> {
    if design.nrows() == 0 || design.ncols() == 0 {
        return invalid("design must have at least one row and one column");
    }
    if responses.len() != design.nrows() {
        return invalid(format!("design has {} rows but {} responses were given", design.nrows(), responses.len()));
    }
    if design.iter().chain(responses).any(|v| !v.is_finite()) {
        return invalid("design and responses must be finite");
    }
    Ok(())
}

pub(crate) fn check_mu(mu: f64) -> Result<()> {
    if !(mu > 0.0 && mu <= 1.0) {
        return invalid(format!("mu must lie in (0, 1], got {mu}"));
    }
    Ok(())
}

impl GlmModel {
    pub fn new(
        design: DMatrix<f64>,
        responses: Vec<f64>,
        family: EfcFamily,
        mu: f64,
        theta_box: ParamBox,
    ) -> Result<Self> {
        check_design(&design, &responses)?;
        check_mu(mu)?;
        theta_box.validate()?;
        if theta_box.dim() != design.ncols() {
            return invalid("parameter box dimension differs from the number of columns");
        }
        Ok(GlmModel { design, responses, family, mu, theta_box })
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn p(&self) -> usize {
        self.design.ncols()
    }

    /// Same model with new responses.
    pub fn with_responses(&self, responses: Vec<f64>) -> Result<Self> {
        check_design(&self.design, &responses)?;
        Ok(GlmModel { responses, ..self.clone() })
    }

    fn check_theta(&self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.p() {
            return invalid(format!("theta has length {} but p = {}", theta.len(), self.p()));
        }
        Ok(())
    }

    /// Linear predictors `Psi_i^T theta`.
    pub fn linear_predictor(&self, theta: &[f64]) -> Vec<f64> {
        linear_predictor(&self.design, theta)
    }

    /// `mu * sum_i {Y_i eta_i - d(eta_i)}`.
    pub fn quasi_loglik(&self, theta: &[f64]) -> Result<f64> {
        self.check_theta(theta)?;
        Ok(self.mu * objective(self).value(theta)?)
    }

    /// `L(theta) - L(theta0)`.
    pub fn loglik_ratio(&self, theta: &[f64], theta0: &[f64]) -> Result<f64> {
        Ok(self.quasi_loglik(theta)? - self.quasi_loglik(theta0)?)
    }

    pub fn score(&self, theta: &[f64]) -> Result<Vec<f64>> {
        self.check_theta(theta)?;
        Ok(objective(self).gradient(theta)?.into_iter().map(|g| self.mu * g).collect())
    }

    pub fn hessian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        self.check_theta(theta)?;
        Ok(objective(self).hessian(theta)? * self.mu)
    }
}

pub(crate) fn linear_predictor(design: &DMatrix<f64>, theta: &[f64]) -> Vec<f64> {
    (0..design.nrows()).map(|i| design.row(i).iter().zip(theta).map(|(a, b)| a * b).sum()).collect()
}

/// Unscaled objective `sum_i {y_i eta_i - d(eta_i)}`; its maximizer does not
/// depend on `mu`.
struct CanonicalObjective<'a> {
    design: &'a DMatrix<f64>,
    y: &'a [f64],
    family: EfcFamily,
}

fn objective(m: &GlmModel) -> CanonicalObjective<'_> {
    CanonicalObjective { design: &m.design, y: &m.responses, family: m.family }
}

impl Objective for CanonicalObjective<'_> {
    fn value(&self, theta: &[f64]) -> Result<f64> {
        let eta = linear_predictor(self.design, theta);
        let mut s = 0.0;
        for (e, y) in eta.iter().zip(self.y) {
            s += y * e - self.family.log_partition(*e)?;
        }
        Ok(s)
    }

    fn gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        let eta = linear_predictor(self.design, theta);
        let mut g = vec![0.0; theta.len()];
        for (i, e) in eta.iter().enumerate() {
            let r = self.y[i] - self.family.d_dot(*e)?;
            for (k, gk) in g.iter_mut().enumerate() {
                *gk += r * self.design[(i, k)];
            }
        }
        Ok(g)
    }

    fn hessian(&self, theta: &[f64]) -> Result<DMatrix<f64>> {
        let eta = linear_predictor(self.design, theta);
        let w = eta.iter().map(|e| self.family.d_ddot(*e).map(|v| -v)).collect::<Result<Vec<_>>>()?;
        Ok(weighted_gram(self.design, &w))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub theta: Vec<f64>,
    /// Scaled quasi log-likelihood at `theta`.
    pub loglik: f64,
    /// Projected gradient norm of the unscaled objective.
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub fallback_steps: usize,
    pub at_boundary: bool,
}

/// Relative curvature below which an unconstrained maximizer is taken to
/// have escaped to infinity (separation, all-zero counts).
const FLAT_CURVATURE: f64 = 1e-9;

fn check_curvature(model: &GlmModel, theta: &[f64]) -> Result<()> {
    let at_hat = sym_eigen(&(-model.hessian(theta)?)).eigenvalues;
    let at_zero = sym_eigen(&(-model.hessian(&vec![0.0; model.p()])?)).eigenvalues;
    let lo = at_hat.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = at_zero.iter().copied().fold(0.0, f64::max);
    if lo <= FLAT_CURVATURE * hi {
        return Err(QlcError::Divergent(format!(
            "the quasi-likelihood has no finite maximizer (estimate drifted to {theta:?})"
        )));
    }
    Ok(())
}

/// Quasi-maximum likelihood estimate over the model's parameter box.
pub fn fit_qmle(model: &GlmModel, init: Option<&[f64]>, opts: OptimOptions) -> Result<FitResult> {
    let start = match init {
        Some(x) => {
            model.check_theta(x)?;
            x.to_vec()
        }
        None => vec![0.0; model.p()],
    };
    let r = maximize(&objective(model), &model.theta_box, &start, opts)?;
    if !r.converged {
        return Err(QlcError::NonConvergence { iterations: r.iterations, grad_norm: r.grad_norm, last: r.x });
    }
    if !model.theta_box.is_bounded() {
        check_curvature(model, &r.x)?;
    }
    Ok(FitResult {
        loglik: model.mu * r.value,
        theta: r.x,
        grad_norm: r.grad_norm,
        iterations: r.iterations,
        converged: r.converged,
        fallback_steps: r.fallback_steps,
        at_boundary: r.at_boundary,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetResult {
    pub theta0: Vec<f64>,
    /// Norm of `sum_i (b_i - d'(eta_i)) Psi_i` at `theta0`.
    pub grad_residual: f64,
    pub iterations: usize,
}

/// Population target: the solution of `sum_i (b_i - d'(Psi_i^T theta)) Psi_i = 0`.
pub fn target_theta0(
    design: &DMatrix<f64>,
    family: EfcFamily,
    means: &[f64],
    opts: OptimOptions,
) -> Result<TargetResult> {
    check_design(design, means)?;
    let range = family.mean_range();
    if let Some(b) = means.iter().find(|b| !range.closure_contains(**b)) {
        return invalid(format!("true mean {b} is outside the attainable range {range}"));
    }
    let obj = CanonicalObjective { design, y: means, family };
    let r = maximize(&obj, &ParamBox::unbounded(design.ncols()), &vec![0.0; design.ncols()], opts)?;
    if !r.converged {
        return Err(QlcError::NonConvergence { iterations: r.iterations, grad_norm: r.grad_norm, last: r.x });
    }
    Ok(TargetResult { theta0: r.x, grad_residual: r.grad_norm, iterations: r.iterations })
}

/// Noise laws of a well-specified model with parameter `theta_star`.
pub fn well_specified_truth(design: &DMatrix<f64>, family: EfcFamily, theta_star: &[f64]) -> Vec<NoiseLaw> {
    linear_predictor(design, theta_star).into_iter().map(|canonical| NoiseLaw::Efc { family, canonical }).collect()
}

fn check_truth(model: &GlmModel, truth: &[NoiseLaw]) -> Result<()> {
    if truth.len() != model.n() {
        return invalid(format!("{} noise laws for {} observations", truth.len(), model.n()));
    }
    Ok(())
}

/// Rate function `M(theta, theta0) = -log E exp{L(theta) - L(theta0)}` under
/// the laws in `truth`.
pub fn rate_function(model: &GlmModel, theta: &[f64], theta0: &[f64], truth: &[NoiseLaw]) -> Result<f64> {
    model.check_theta(theta)?;
    model.check_theta(theta0)?;
    check_truth(model, truth)?;
    let eta = model.linear_predictor(theta);
    let eta0 = model.linear_predictor(theta0);
    let mut drift = 0.0;
    let mut cumulants = 0.0;
    for i in 0..model.n() {
        let delta = eta[i] - eta0[i];
        let b = truth[i].mean()?;
        drift += model.family.log_partition(eta[i])? - model.family.log_partition(eta0[i])? - delta * b;
        cumulants += truth[i].cumulant(model.mu * delta)?;
    }
    Ok(model.mu * drift - cumulants)
}

/// Gradient of [`rate_function`] in `theta`.
pub fn rate_gradient(model: &GlmModel, theta: &[f64], theta0: &[f64], truth: &[NoiseLaw]) -> Result<Vec<f64>> {
    check_truth(model, truth)?;
    let eta = model.linear_predictor(theta);
    let eta0 = model.linear_predictor(theta0);
    let mut g = vec![0.0; model.p()];
    for i in 0..model.n() {
        let delta = eta[i] - eta0[i];
        let b = truth[i].mean()?;
        let tilt = cumulant_slope(&truth[i], model.mu * delta)?;
        let w = model.mu * (model.family.d_dot(eta[i])? - b) - model.mu * tilt;
        for (k, gk) in g.iter_mut().enumerate() {
            *gk += w * model.design[(i, k)];
        }
    }
    Ok(g)
}

/// First derivative of the centered cumulant.
fn cumulant_slope(law: &NoiseLaw, t: f64) -> Result<f64> {
    match *law {
        NoiseLaw::Efc { family, canonical } => Ok(family.d_dot(canonical + t)? - family.d_dot(canonical)?),
        NoiseLaw::Gaussian { sd, .. } => Ok(sd * sd * t),
        NoiseLaw::Degenerate { .. } => Ok(0.0),
    }
}

/// Hessian of [`rate_function`] in `theta`.
pub fn rate_hessian(model: &GlmModel, theta: &[f64], theta0: &[f64], truth: &[NoiseLaw]) -> Result<DMatrix<f64>> {
    check_truth(model, truth)?;
    let eta = model.linear_predictor(theta);
    let eta0 = model.linear_predictor(theta0);
    let mut w = Vec::with_capacity(model.n());
    for i in 0..model.n() {
        let t = model.mu * (eta[i] - eta0[i]);
        w.push(model.mu * model.family.d_ddot(eta[i])? - model.mu * model.mu * truth[i].tilted_variance(t)?);
    }
    Ok(weighted_gram(&model.design, &w))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmGeometry {
    /// Sub-gaussian scales of the observations.
    pub scales: Vec<f64>,
    /// `sum_i s_i^2 Psi_i Psi_i^T`.
    pub v1: DMatrix<f64>,
    /// `mu^2 v1`.
    pub v: DMatrix<f64>,
    pub lambda1: f64,
}

pub fn glm_geometry(model: &GlmModel, truth: &[NoiseLaw], lambda1: f64) -> Result<GlmGeometry> {
    check_truth(model, truth)?;
    let scales = truth.iter().map(|l| l.subgaussian_scale(lambda1)).collect::<Result<Vec<_>>>()?;
    let sq: Vec<f64> = scales.iter().map(|s| s * s).collect();
    let v1 = weighted_gram(&model.design, &sq);
    let v = &v1 * (model.mu * model.mu);
    Ok(GlmGeometry { scales, v1, v, lambda1 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifiabilityReport {
    /// Largest `a1` with `(1/2) sum d''(eta_i) Psi_i Psi_i^T >= 2 a1 V1` on the checked points.
    pub a1: f64,
    /// Smallest `a^2` with `(1/2) sum s_i^2(theta) Psi_i Psi_i^T <= a^2 V1`.
    pub a_sq: f64,
    /// `1 - a1^2 / a^2`.
    pub s: f64,
    /// `a1 / a^2`, the largest admissible `mu`.
    pub mu_limit: f64,
    pub mu_admissible: bool,
    pub rank_deficient: bool,
    pub points_checked: usize,
}

/// Identifiability constants over the parameter points `points`; tilted
/// variances are taken under the laws in `truth` around `theta0`.
pub fn identifiability_constants(
    model: &GlmModel,
    geometry: &GlmGeometry,
    truth: &[NoiseLaw],
    theta0: &[f64],
    points: &[Vec<f64>],
) -> Result<IdentifiabilityReport> {
    check_truth(model, truth)?;
    if points.is_empty() {
        return invalid("identifiability needs at least one parameter point");
    }
    let eta0 = model.linear_predictor(theta0);
    let mut a1 = f64::INFINITY;
    let mut a_sq = 0.0f64;
    let mut rank_deficient = false;
    for theta in points {
        model.check_theta(theta)?;
        let eta = model.linear_predictor(theta);
        let curv = eta.iter().map(|e| model.family.d_ddot(*e)).collect::<Result<Vec<_>>>()?;
        let tilted = (0..model.n())
            .map(|i| truth[i].tilted_variance(model.mu * (eta[i] - eta0[i])))
            .collect::<Result<Vec<_>>>()?;
        let lo = gen_eig_extremes(&weighted_gram(&model.design, &curv), &geometry.v1)?;
        let hi = gen_eig_extremes(&weighted_gram(&model.design, &tilted), &geometry.v1)?;
        rank_deficient |= lo.rank_deficient;
        a1 = a1.min(lo.min / 4.0);
        a_sq = a_sq.max(hi.max / 2.0);
    }
    if !(a_sq > 0.0) {
        return Err(QlcError::ConditionViolated("tilted variances vanish; a^2 = 0".into()));
    }
    let s = 1.0 - a1 * a1 / a_sq;
    let mu_limit = a1 / a_sq;
    Ok(IdentifiabilityReport {
        a1,
        a_sq,
        s,
        mu_limit,
        mu_admissible: model.mu <= mu_limit,
        rank_deficient,
        points_checked: points.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlmConditionReport {
    /// `max_i mu s_i |Psi_i^T (theta - theta0)|` over the box corners.
    pub corner_max: f64,
    pub corners_ok: bool,
    /// `max_i sup_gamma s_i |gamma^T Psi_i| / sqrt(gamma^T V1 gamma)`.
    pub worst_ratio: f64,
    /// Largest `lambda*` for which the direction condition holds.
    pub lambda_star_max: f64,
    pub lambda_star: f64,
    pub direction_ok: bool,
}

/// Checks the two sub-gaussian range conditions of the model. The supremum
/// over directions is evaluated in closed form as `s_i sqrt(Psi_i^T V1^+ Psi_i)`.
pub fn check_glm_conditions(
    model: &GlmModel,
    geometry: &GlmGeometry,
    theta0: &[f64],
    lambda_star: f64,
) -> Result<GlmConditionReport> {
    model.check_theta(theta0)?;
    let lambda1 = geometry.lambda1;
    let mut corner_max = 0.0f64;
    if model.theta_box.is_bounded() {
        for c in model.theta_box.corners() {
            let eta = model.linear_predictor(&c);
            let eta0 = model.linear_predictor(theta0);
            for i in 0..model.n() {
                corner_max = corner_max.max(model.mu * geometry.scales[i] * (eta[i] - eta0[i]).abs());
            }
        }
    } else {
        corner_max = f64::INFINITY;
    }
    let pinv = psd_pinv(&geometry.v1);
    let mut worst_ratio = 0.0f64;
    for i in 0..model.n() {
        let psi: Vec<f64> = model.design.row(i).iter().copied().collect();
        worst_ratio = worst_ratio.max(geometry.scales[i] * quad_form(&pinv, &psi).max(0.0).sqrt());
    }
    let lambda_star_max = if worst_ratio > 0.0 { lambda1 / worst_ratio } else { f64::INFINITY };
    Ok(GlmConditionReport {
        corner_max,
        corners_ok: corner_max <= lambda1,
        worst_ratio,
        lambda_star_max,
        lambda_star,
        direction_ok: lambda_star <= lambda_star_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn gauss() -> EfcFamily {
        EfcFamily::gaussian(1.0).unwrap()
    }

    fn intercept_model(y: Vec<f64>, family: EfcFamily, mu: f64) -> GlmModel {
        let n = y.len();
        GlmModel::new(DMatrix::from_element(n, 1, 1.0), y, family, mu, ParamBox::unbounded(1)).unwrap()
    }

    #[test]
    fn gaussian_intercept_is_sample_mean() {
        let y = vec![1.0, 2.0, 4.5, -0.5];
        let m = intercept_model(y.clone(), gauss(), 1.0);
        let fit = fit_qmle(&m, None, OptimOptions::default()).unwrap();
        assert_relative_eq!(fit.theta[0], 1.75, epsilon = 1e-12);
    }

    #[test]
    fn poisson_intercept_is_log_mean() {
        let m = intercept_model(vec![1.0, 3.0, 0.0, 4.0], EfcFamily::Poisson, 1.0);
        let fit = fit_qmle(&m, None, OptimOptions::default()).unwrap();
        assert_relative_eq!(fit.theta[0], 2f64.ln(), epsilon = 1e-10);
    }

    #[test]
    fn rate_function_fixtures() {
        let m = intercept_model(vec![0.0; 4], gauss(), 0.5);
        let truth = well_specified_truth(&m.design, gauss(), &[0.0]);
        assert_relative_eq!(rate_function(&m, &[1.0], &[0.0], &truth).unwrap(), 0.5, epsilon = 1e-12);
        let m1 = intercept_model(vec![0.0; 4], EfcFamily::Poisson, 1.0);
        let truth = well_specified_truth(&m1.design, EfcFamily::Poisson, &[0.2]);
        assert!(rate_function(&m1, &[1.3], &[0.2], &truth).unwrap().abs() < 1e-10);
    }

    #[test]
    fn gaussian_identifiability_fixture() {
        let m = intercept_model(vec![0.0; 5], gauss(), 0.5);
        let truth = well_specified_truth(&m.design, gauss(), &[0.0]);
        let geo = glm_geometry(&m, &truth, f64::INFINITY).unwrap();
        let rep = identifiability_constants(&m, &geo, &truth, &[0.0], &[vec![-1.0], vec![2.0]]).unwrap();
        assert_relative_eq!(rep.a1, 0.25, epsilon = 1e-12);
        assert_relative_eq!(rep.a_sq, 0.5, epsilon = 1e-12);
        assert!(rep.mu_admissible);
        assert!(rep.s >= 0.0 && rep.s < 1.0);
    }

    #[test]
    fn single_observation_conditions() {
        let m = GlmModel::new(
            DMatrix::from_element(1, 1, 1.0),
            vec![0.0],
            gauss(),
            1.0,
            ParamBox::new(vec![-1.0], vec![1.0]).unwrap(),
        )
        .unwrap();
        let truth = well_specified_truth(&m.design, gauss(), &[0.0]);
        let geo = glm_geometry(&m, &truth, f64::INFINITY).unwrap();
        let rep = check_glm_conditions(&m, &geo, &[0.0], 1.0).unwrap();
        assert_relative_eq!(rep.worst_ratio, 1.0, epsilon = 1e-12);
        assert!(rep.corners_ok && rep.direction_ok);
    }

    #[test]
    fn rejects_bad_inputs() {
        let d = DMatrix::from_element(3, 1, 1.0);
        assert!(GlmModel::new(d.clone(), vec![0.0; 2], gauss(), 1.0, ParamBox::unbounded(1)).is_err());
        assert!(GlmModel::new(d.clone(), vec![0.0; 3], gauss(), 1.5, ParamBox::unbounded(1)).is_err());
        assert!(target_theta0(&d, EfcFamily::Bernoulli, &[0.5, 1.2, 0.1], OptimOptions::default()).is_err());
    }

    #[test]
    fn no_finite_maximizer_is_reported() {
        let d = DMatrix::from_element(3, 1, 1.0);
        let m = GlmModel::new(d.clone(), vec![0.0; 3], EfcFamily::Poisson, 1.0, ParamBox::unbounded(1)).unwrap();
        assert!(matches!(fit_qmle(&m, None, OptimOptions::default()), Err(QlcError::Divergent(_))));
        let sep = DMatrix::from_row_slice(4, 1, &[-1.0, -0.5, 0.5, 1.0]);
        let m =
            GlmModel::new(sep, vec![0.0, 0.0, 1.0, 1.0], EfcFamily::Bernoulli, 1.0, ParamBox::unbounded(1)).unwrap();
        assert!(fit_qmle(&m, None, OptimOptions::default()).is_err());
        let bx = ParamBox::new(vec![-3.0], vec![3.0]).unwrap();
        let m = GlmModel::new(d, vec![0.0; 3], EfcFamily::Poisson, 1.0, bx).unwrap();
        assert_eq!(fit_qmle(&m, None, OptimOptions::default()).unwrap().theta, vec![-3.0]);
    }

    fn design_and_theta() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
        (prop::collection::vec(-1.0f64..1.0, 12), prop::collection::vec(-0.5f64..0.5, 2), 0.1f64..1.0)
    }

    proptest! {
        #[test]
        fn mu_one_rate_is_zero((x, th, _mu) in design_and_theta(), dt in prop::collection::vec(-1.0f64..1.0, 2)) {
            let design = DMatrix::from_row_slice(6, 2, &x);
            for fam in [gauss(), EfcFamily::Poisson, EfcFamily::Bernoulli] {
                let m = GlmModel::new(design.clone(), vec![0.0; 6], fam, 1.0, ParamBox::unbounded(2)).unwrap();
                let truth = well_specified_truth(&design, fam, &th);
                let theta: Vec<f64> = th.iter().zip(&dt).map(|(a, b)| a + b).collect();
                prop_assert!(rate_function(&m, &theta, &th, &truth).unwrap().abs() < 1e-10);
            }
        }

        #[test]
        fn rate_vanishes_at_target_with_zero_gradient((x, th, mu) in design_and_theta()) {
            let design = DMatrix::from_row_slice(6, 2, &x);
            let m = GlmModel::new(design.clone(), vec![0.0; 6], EfcFamily::Poisson, mu, ParamBox::unbounded(2)).unwrap();
            let truth = well_specified_truth(&design, EfcFamily::Poisson, &th);
            prop_assert_eq!(rate_function(&m, &th, &th, &truth).unwrap(), 0.0);
            let g = rate_gradient(&m, &th, &th, &truth).unwrap();
            prop_assert!(g.iter().all(|v| v.abs() < 1e-12));
        }

        #[test]
        fn fit_is_invariant_to_mu(y in prop::collection::vec(0.0f64..5.0, 6), x in prop::collection::vec(-1.0f64..1.0, 12), c in 0.05f64..1.0) {
            let design = DMatrix::from_row_slice(6, 2, &x);
            let bx = ParamBox::new(vec![-3.0, -3.0], vec![3.0, 3.0]).unwrap();
            let a = GlmModel::new(design.clone(), y.clone(), EfcFamily::Poisson, 1.0, bx.clone()).unwrap();
            let b = GlmModel::new(design, y, EfcFamily::Poisson, c, bx).unwrap();
            let fa = fit_qmle(&a, None, OptimOptions::default()).unwrap();
            let fb = fit_qmle(&b, None, OptimOptions::default()).unwrap();
            for (u, v) in fa.theta.iter().zip(&fb.theta) {
                prop_assert!((u - v).abs() < 1e-10);
            }
        }

        #[test]
        fn fit_never_decreases_from_init(y in prop::collection::vec(0.0f64..1.0, 6), x in prop::collection::vec(-1.0f64..1.0, 12), init in prop::collection::vec(-2.0f64..2.0, 2)) {
            let design = DMatrix::from_row_slice(6, 2, &x);
            let bx = ParamBox::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
            let m = GlmModel::new(design, y, EfcFamily::Bernoulli, 0.7, bx).unwrap();
            let f = fit_qmle(&m, Some(&init), OptimOptions::default()).unwrap();
            prop_assert!(f.loglik >= m.quasi_loglik(&init).unwrap() - 1e-12);
        }

        #[test]
        fn rate_derivatives_match_differences((x, th, mu) in design_and_theta(), dt in prop::collection::vec(-0.5f64..0.5, 2)) {
            let design = DMatrix::from_row_slice(6, 2, &x);
            let m = GlmModel::new(design.clone(), vec![0.0; 6], EfcFamily::Bernoulli, mu, ParamBox::unbounded(2)).unwrap();
            let truth = well_specified_truth(&design, EfcFamily::Bernoulli, &th);
            let theta: Vec<f64> = th.iter().zip(&dt).map(|(a, b)| a + b).collect();
            let g = rate_gradient(&m, &theta, &th, &truth).unwrap();
            let h = rate_hessian(&m, &theta, &th, &truth).unwrap();
            let eps = 1e-5;
            for k in 0..2 {
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[k] += eps;
                dn[k] -= eps;
                let fd = (rate_function(&m, &up, &th, &truth).unwrap() - rate_function(&m, &dn, &th, &truth).unwrap()) / (2.0 * eps);
                prop_assert!((fd - g[k]).abs() < 1e-7);
                let gu = rate_gradient(&m, &up, &th, &truth).unwrap();
                let gd = rate_gradient(&m, &dn, &th, &truth).unwrap();
                for j in 0..2 {
                    prop_assert!(((gu[j] - gd[j]) / (2.0 * eps) - h[(j, k)]).abs() < 1e-6);
                }
            }
        }
    }
}
