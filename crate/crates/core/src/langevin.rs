//! Interacting Langevin sampler preconditioned by the ensemble covariance.
//!
//! Each particle follows
//! `v⁺ = v − h C(v) ∇ℓ(v) + √(2h) C(v)^{1/2} ξ`
//! where `C(v)` is the empirical covariance of the current ensemble and
//! `ℓ` the level-`l` regularized misfit. For linear models
//! `∇ℓ(v) = A_l v − b_l` with `A_l = F_lᵀΓ⁻¹F_l + λC₀⁻¹`, `b_l = F_lᵀΓ⁻¹y`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

use crate::eki::{inner_steps, Ensemble, DEFAULT_GUARD};
use crate::error::{check_dim, invalid, Error, Result};
use crate::forward::{self, LinearForwardMap};
use crate::problem::InverseProblemSpec;
use crate::rng::normal_matrix;
use crate::schedule::LevelSchedule;
use crate::Real;

/// Symmetric square root of a symmetric positive semidefinite matrix.
/// Negative eigenvalues (round-off) are clamped to zero.
pub fn psd_sqrt<T: Real>(c: &DMatrix<T>) -> Result<DMatrix<T>> {
    if !c.is_square() {
        return Err(invalid(format!("matrix must be square, got {}x{}", c.nrows(), c.ncols())));
    }
    if c.iter().any(|v| !v.finite()) {
        return Err(invalid("matrix has non-finite entries"));
    }
    let scale = c.amax();
    if (c - c.transpose()).amax() > T::lit(1e-10) * scale {
        return Err(invalid("matrix is not symmetric"));
    }
    let sym = (c + c.transpose()) * T::lit(0.5);
    let eig = sym.symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(T::zero()).sqrt());
    let q = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * roots[j]);
    let s = &scaled * q.transpose();
    Ok((&s + s.transpose()) * T::lit(0.5))
}

/// Quadratic potential `ℓ(v) = ½vᵀAv − bᵀv` (up to a constant).
#[derive(Debug, Clone)]
pub struct LevelPosterior<T: Real> {
    a: DMatrix<T>,
    b: DVector<T>,
}

impl<T: Real> LevelPosterior<T> {
    pub fn new(a: DMatrix<T>, b: DVector<T>) -> Result<Self> {
        if !a.is_square() {
            return Err(invalid("precision matrix must be square"));
        }
        check_dim("potential gradient offset", a.nrows(), b.len())?;
        Ok(Self { a, b })
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn precision(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn offset(&self) -> &DVector<T> {
        &self.b
    }

    /// Gradients of all particles, column by column.
    pub fn gradients(&self, particles: &DMatrix<T>) -> DMatrix<T> {
        let mut g = &self.a * particles;
        for mut col in g.column_iter_mut() {
            col -= &self.b;
        }
        g
    }
}

/// Tikhonov posterior on a leveled linear model.
#[derive(Clone)]
pub struct PosteriorSpec<T: Real> {
    map: Arc<dyn LinearForwardMap<T>>,
    problem: InverseProblemSpec<T>,
}

impl<T: Real> PosteriorSpec<T> {
    pub fn new(map: Arc<dyn LinearForwardMap<T>>, problem: InverseProblemSpec<T>) -> Result<Self> {
        check_dim("prior dimension", map.input_dim(), problem.n_x())?;
        check_dim("observation dimension", map.output_dim(), problem.n_y())?;
        if !(problem.lambda() > T::zero()) {
            return Err(invalid("the posterior needs a positive regularization weight"));
        }
        Ok(Self { map, problem })
    }

    pub fn problem(&self) -> &InverseProblemSpec<T> {
        &self.problem
    }

    pub fn map(&self) -> &Arc<dyn LinearForwardMap<T>> {
        &self.map
    }

    /// `ℓ_R^l(x) = ½‖Γ^{−1/2}(F_l x − y)‖² + (λ/2)‖C₀^{−1/2}x‖²`.
    pub fn potential(&self, x: &DVector<T>, level: T) -> Result<T> {
        forward::objective(self.map.as_ref(), x, level, &self.problem)
    }

    pub fn gradient(&self, x: &DVector<T>, level: T) -> Result<DVector<T>> {
        forward::gradient(self.map.as_ref(), x, level, &self.problem)
    }

    pub fn at_level(&self, level: T) -> Result<LevelPosterior<T>> {
        let f = self.map.matrix(level)?;
        let a = self.problem.normal_matrix(&f, self.problem.lambda());
        let b = f.tr_mul(&(self.problem.gamma_inv() * self.problem.y()));
        LevelPosterior::new(a, b)
    }

    /// `M` particles from `N(0, C₀/λ)`.
    pub fn prior_ensemble<R: RngCore + ?Sized>(&self, m: usize, rng: &mut R) -> Result<Ensemble<T>> {
        let cov = self.problem.c0() / self.problem.lambda();
        Ensemble::sample_gaussian(&DVector::zeros(self.problem.n_x()), &cov, m, rng)
    }
}

/// A factor `S` with `SSᵀ = C`. The Cholesky factor when `C` is positive
/// definite, the symmetric root otherwise; `Sξ` has the same law either way.
fn noise_factor<T: Real>(c: &DMatrix<T>) -> Result<DMatrix<T>> {
    match c.clone().cholesky() {
        Some(chol) => Ok(chol.unpack()),
        None => psd_sqrt(c),
    }
}

fn ils_step<T: Real>(
    ensemble: &Ensemble<T>,
    posterior: &LevelPosterior<T>,
    h: T,
    rng: Option<&mut dyn RngCore>,
    guard: T,
    iteration: usize,
) -> Result<Ensemble<T>> {
    if !(h > T::zero()) || !h.finite() {
        return Err(invalid(format!("step size must be positive, got {h}")));
    }
    check_dim("particle dimension", posterior.dim(), ensemble.dim())?;
    let c = ensemble.covariance();
    let grads = posterior.gradients(ensemble.particles());
    if grads.iter().any(|v| !v.finite()) {
        return Err(Error::Diverged {
            iteration,
            detail: "non-finite potential gradient".into(),
        });
    }
    let mut next = ensemble.particles() - &c * grads * h;
    if let Some(rng) = rng {
        let s = noise_factor(&c)?;
        let xi: DMatrix<T> = normal_matrix(ensemble.dim(), ensemble.size(), rng);
        next += s * xi * (T::lit(2.0) * h).sqrt();
    }
    let out = Ensemble::new(next).map_err(|_| Error::Diverged {
        iteration,
        detail: "non-finite particle".into(),
    })?;
    let norm = out.max_particle_norm();
    if norm > guard {
        return Err(Error::Diverged {
            iteration,
            detail: format!("particle norm {norm:e} exceeds {guard:e}; reduce the step size"),
        });
    }
    Ok(out)
}

/// One sampler step. Passing `None` for `rng` drops the diffusion.
pub fn ils_inner_step<T: Real>(
    ensemble: &Ensemble<T>,
    posterior: &LevelPosterior<T>,
    h: T,
    rng: Option<&mut dyn RngCore>,
) -> Result<Ensemble<T>> {
    ils_step(ensemble, posterior, h, rng, T::lit(DEFAULT_GUARD), 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlsConfig<T> {
    pub tau_interval: T,
    pub h: T,
    pub guard: T,
}

impl<T: Real> IlsConfig<T> {
    pub fn new(tau_interval: T, h: T) -> Self {
        Self {
            tau_interval,
            h,
            guard: T::lit(DEFAULT_GUARD),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IlsRun<T: Real> {
    /// Ensemble mean before the first and after every outer iteration.
    pub means: Vec<DVector<T>>,
    pub final_ensemble: Ensemble<T>,
    pub schedule_cost: T,
    pub work_units: T,
    pub inner_steps: usize,
}

pub type PosteriorBuilder<'a, T> = dyn Fn(T) -> Result<LevelPosterior<T>> + 'a;

/// Multilevel sampler: outer iteration `j` runs `N` steps targeting the
/// level-`l_j` posterior. `observer` receives the outer index and the
/// ensemble after every outer iteration.
pub fn run_ml_ils<T: Real>(
    schedule: &LevelSchedule<T>,
    posterior_at: &PosteriorBuilder<'_, T>,
    initial: Ensemble<T>,
    config: &IlsConfig<T>,
    mut rng: Option<&mut dyn RngCore>,
    mut observer: Option<&mut dyn FnMut(usize, &Ensemble<T>)>,
) -> Result<IlsRun<T>> {
    let n = inner_steps(config.tau_interval, config.h)?;
    let mut ensemble = initial;
    let mut means = vec![ensemble.mean()];
    let mut step = 0usize;
    for (j, &level) in schedule.levels.iter().enumerate() {
        let posterior = posterior_at(level)?;
        for _ in 0..n {
            let r = rng.as_mut().map(|r| &mut **r as &mut dyn RngCore);
            ensemble = ils_step(&ensemble, &posterior, config.h, r, config.guard, step)?;
            step += 1;
        }
        means.push(ensemble.mean());
        if let Some(obs) = observer.as_mut() {
            obs(j, &ensemble);
        }
    }
    let schedule_cost = schedule.total_cost();
    Ok(IlsRun {
        means,
        work_units: schedule_cost * T::from_count(ensemble.size() * n),
        final_ensemble: ensemble,
        schedule_cost,
        inner_steps: n,
    })
}

/// `½‖f(·, x̄) − f(·, x*)‖²_{L²} = ‖x̄ − x*‖² / (2π²)` for the ensemble mean `x̄`.
pub fn posterior_mean_error<T: Real>(ensemble: &Ensemble<T>, x_star: &DVector<T>) -> Result<T> {
    check_dim("reference mean", ensemble.dim(), x_star.len())?;
    Ok(coefficient_error(&ensemble.mean(), x_star))
}

pub fn coefficient_error<T: Real>(x: &DVector<T>, x_star: &DVector<T>) -> T {
    (x - x_star).norm_squared() / T::lit(2.0 * PI * PI)
}
