//! The elliptic PDE testbed: synthetic truth and data, reference
//! solutions, and the problem-derived defaults for `"auto"` parameters.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use mlopt::descent::{L2TikhonovOracle, SmoothConvexSpec};
use mlopt::eki::teki_error;
use mlopt::forward::{LinearForwardMap, SineFemModel};
use mlopt::langevin::{coefficient_error, PosteriorSpec};
use mlopt::problem::InverseProblemSpec;
use mlopt::rng::{normal_vector, stream};
use mlopt::schedule::ConvergenceModel;

use crate::config::{AutoOr, InflationConfig, InflationShape, MethodKind, MethodSettings, ProblemConfig};
use crate::error::{HarnessError, Result};

/// `C₀ = diag(i^{−2β})`, `i = 1..n_x`.
pub fn prior_covariance(n_x: usize, exponent: f64) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_fn(n_x, |i, _| ((i + 1) as f64).powf(-2.0 * exponent)))
}

/// Generated problem instance shared by every replicate of a sweep.
#[derive(Debug, Clone)]
pub struct Testbed {
    pub config: ProblemConfig,
    pub model: Arc<SineFemModel<f64>>,
    pub problem: InverseProblemSpec<f64>,
    pub f_ref: Arc<DMatrix<f64>>,
}

fn problem_error(field: &str, e: mlopt::Error) -> HarnessError {
    HarnessError::config(format!("problem.{field}"), e.to_string())
}

/// Draws `x† ~ N(0, C₀)` from the truth seed and forms
/// `y = F_ref x† + γ η` (or `y = F_ref x†` without noise), `Γ = γ² I`.
pub fn generate_problem(config: &ProblemConfig) -> Result<Testbed> {
    let model = Arc::new(SineFemModel::equispaced(config.n_x, config.n_y).map_err(|e| problem_error("n_x", e))?);
    let f_ref = model
        .matrix(config.reference_level)
        .map_err(|e| problem_error("reference_level", e))?;
    let c0 = prior_covariance(config.n_x, config.prior_exponent);

    let eta: DVector<f64> = normal_vector(config.n_x, &mut stream(config.truth_seed, 0));
    let truth = eta.component_mul(&c0.diagonal().map(f64::sqrt));
    let mut y = f_ref.as_ref() * &truth;
    if !config.noise_free {
        let noise: DVector<f64> = normal_vector(config.n_y, &mut stream(config.truth_seed, 1));
        y += noise * config.noise_scale;
    }
    let gamma = DMatrix::identity(config.n_y, config.n_y) * config.noise_scale.powi(2);
    let problem = InverseProblemSpec::new(y, gamma, c0, config.lambda)
        .and_then(|p| p.with_truth(truth))
        .map_err(|e| problem_error("prior_exponent", e))?;
    Ok(Testbed {
        config: config.clone(),
        model,
        problem,
        f_ref,
    })
}

impl Testbed {
    pub fn map(&self) -> Arc<dyn LinearForwardMap<f64>> {
        self.model.clone()
    }

    pub fn reference_level(&self) -> f64 {
        self.config.reference_level
    }

    pub fn truth(&self) -> &DVector<f64> {
        self.problem.truth().expect("generated problems carry their truth")
    }

    pub fn gd_oracle(&self) -> Result<L2TikhonovOracle<f64>> {
        Ok(L2TikhonovOracle::new(
            self.map(),
            self.problem.y().clone(),
            self.problem.gamma_inv().clone(),
            self.problem.lambda(),
        )?)
    }

    pub fn gd_spec(&self) -> Result<SmoothConvexSpec<f64>> {
        Ok(self.gd_oracle()?.smooth_convex_spec(self.reference_level())?)
    }

    pub fn posterior(&self) -> Result<PosteriorSpec<f64>> {
        Ok(PosteriorSpec::new(self.map(), self.problem.clone())?)
    }

    /// Point the method's error is measured against. The sampler's
    /// reference is the posterior mean with unit regularization weight, so
    /// it agrees with the sampler's target only for `λ = 1`.
    pub fn reference_solution(&self, kind: MethodKind) -> Result<DVector<f64>> {
        Ok(match kind {
            MethodKind::Teki => self.problem.tikhonov_minimizer(&self.f_ref)?,
            MethodKind::Ils => self.problem.tikhonov_minimizer_with(&self.f_ref, 1.0)?,
            MethodKind::Eki => self.truth().clone(),
            MethodKind::Gd | MethodKind::Agd => self.gd_oracle()?.minimizer(self.reference_level())?,
        })
    }

    /// Error of an estimate `x` in the method's metric.
    pub fn error(&self, kind: MethodKind, x: &DVector<f64>, reference: &DVector<f64>) -> Result<f64> {
        Ok(match kind {
            MethodKind::Teki => teki_error(x, reference, &self.problem, &self.f_ref)?,
            MethodKind::Eki => {
                let r = self.f_ref.as_ref() * (x - reference);
                0.5 * r.dot(&(self.problem.gamma_inv() * &r))
            }
            MethodKind::Ils => coefficient_error(x, reference),
            MethodKind::Gd | MethodKind::Agd => L2TikhonovOracle::l2_distance(x, reference),
        })
    }
}

/// Method settings with every `"auto"` replaced by a number.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedMethod {
    pub settings: MethodSettings,
    pub c: f64,
    pub e0: f64,
    /// Inflation matrix for the inflated integrator.
    pub inflation: Option<DMatrix<f64>>,
    pub inflation_beta: Option<f64>,
}

impl ResolvedMethod {
    pub fn convergence_model(&self) -> Result<ConvergenceModel<f64>> {
        ConvergenceModel::with_bias(self.c, self.settings.alpha, self.e0, self.settings.bias_constant)
            .map_err(|e| HarnessError::config("method", e.to_string()))
    }
}

fn auto_c(testbed: &Testbed, s: &MethodSettings) -> Result<f64> {
    match s.kind {
        MethodKind::Ils => Ok((-2.0 * s.tau_interval).exp()),
        MethodKind::Gd => {
            let spec = testbed.gd_spec()?;
            Ok(1.0 - spec.eta() * spec.mu())
        }
        MethodKind::Agd => Ok(1.0 - testbed.gd_spec()?.tau_momentum()),
        MethodKind::Teki | MethodKind::Eki => match &s.inflation {
            Some(InflationConfig {
                beta: AutoOr::Value(beta),
                ..
            }) if *beta > 0.0 => Ok((-2.0 * testbed.problem.lambda() * beta * s.tau_interval).exp()),
            _ => Err(HarnessError::config(
                "method.c",
                "\"auto\" needs an explicit positive inflation beta for ensemble Kalman methods",
            )),
        },
    }
}

/// Replaces `"auto"` values using the testbed.
///
/// * `c`: `e^{−2τ}` for the sampler, `1 − ημ` for gradient descent,
///   `1 − √(μ/L)` for the accelerated variant, `e^{−2λβτ}` for the Kalman
///   methods with inflation `β`.
/// * `e0`: the error metric at the zero iterate.
/// * inflation `β`: `ln(1/c) / (2λτ)`.
pub fn resolve_method(testbed: &Testbed, settings: &MethodSettings) -> Result<ResolvedMethod> {
    let c = match settings.c.value() {
        Some(c) => c,
        None => auto_c(testbed, settings)?,
    };
    if !(c > 0.0 && c < 1.0) {
        return Err(HarnessError::config("method.c", format!("derived contraction {c} is outside (0, 1)")));
    }
    let e0 = match settings.e0.value() {
        Some(e0) => e0,
        None => {
            let reference = testbed.reference_solution(settings.kind)?;
            testbed.error(settings.kind, &DVector::zeros(testbed.config.n_x), &reference)?
        }
    };
    if !(e0 > 0.0) {
        return Err(HarnessError::config("method.e0", format!("derived initial error {e0} is not positive")));
    }
    let (inflation, inflation_beta) = match &settings.inflation {
        None => (None, None),
        Some(infl) => {
            let beta = infl
                .beta
                .value()
                .unwrap_or_else(|| (1.0 / c).ln() / (2.0 * testbed.problem.lambda() * settings.tau_interval));
            let n = testbed.config.n_x;
            let b = match infl.shape {
                InflationShape::Identity => DMatrix::identity(n, n) * beta,
                InflationShape::Prior => testbed.problem.c0() * beta,
            };
            (Some(b), Some(beta))
        }
    };
    Ok(ResolvedMethod {
        settings: settings.clone(),
        c,
        e0,
        inflation,
        inflation_beta,
    })
}
