//! Gradient descent with inexact, leveled gradients.
//!
//! Each step evaluates the gradient at the level prescribed by a
//! [`LevelSchedule`] and charges that level to the accumulated cost.
//! Accelerated variants use the three-sequence form
//!
//! ```text
//! x_k     = (τ z_k + y_k) / (1 + τ)
//! y_{k+1} = x_k − g_l(x_k) / L
//! z_{k+1} = z_k + τ (x_k − z_k) − (τ/μ) g_l(x_k)
//! ```
//!
//! with `τ = √(μ/L)`.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::RngCore;
use thiserror::Error as ThisError;

use crate::error::{check_dim, invalid, Error, Result};
use crate::forward::LinearForwardMap;
use crate::rng::normal_vector;
use crate::schedule::LevelSchedule;
use crate::Real;

/// Strong convexity `μ`, smoothness `L`, step size `η` and momentum `τ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmoothConvexSpec<T> {
    mu: T,
    smoothness: T,
    eta: T,
    tau_momentum: T,
}

impl<T: Real> SmoothConvexSpec<T> {
    /// Step size `η = 1/L`.
    pub fn new(mu: T, smoothness: T) -> Result<Self> {
        if !(mu > T::zero()) || !(smoothness >= mu) || !smoothness.finite() {
            return Err(invalid(format!("need 0 < mu <= L, got mu={mu}, L={smoothness}")));
        }
        Ok(Self {
            mu,
            smoothness,
            eta: T::one() / smoothness,
            tau_momentum: (mu / smoothness).sqrt(),
        })
    }

    pub fn with_eta(mut self, eta: T) -> Result<Self> {
        let max = T::one() / self.smoothness;
        if !(eta > T::zero()) || eta > max * (T::one() + T::lit(1e-12)) {
            return Err(invalid(format!("step size must lie in (0, 1/L] = (0, {max}], got {eta}")));
        }
        self.eta = eta;
        Ok(self)
    }

    pub fn mu(&self) -> T {
        self.mu
    }

    pub fn smoothness(&self) -> T {
        self.smoothness
    }

    pub fn eta(&self) -> T {
        self.eta
    }

    pub fn tau_momentum(&self) -> T {
        self.tau_momentum
    }

    /// Per-step contraction `√(1 − ημ)` of exact gradient descent.
    pub fn gd_rate(&self) -> T {
        (T::one() - self.eta * self.mu).sqrt()
    }
}

/// Deterministic gradient approximation `g_l(x)`.
pub trait GradientOracle<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn gradient(&self, x: &DVector<T>, level: T) -> Result<DVector<T>>;
}

/// Random gradient approximation `G_l(x)` drawing from `rng`.
pub trait StochasticGradientOracle<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn sample_gradient(&self, x: &DVector<T>, level: T, rng: &mut dyn RngCore) -> Result<DVector<T>>;
}

/// A deterministic oracle viewed as a stochastic one with no noise.
#[derive(Debug, Clone)]
pub struct ZeroNoise<O>(pub O);

impl<T: Real, O: GradientOracle<T>> StochasticGradientOracle<T> for ZeroNoise<O> {
    fn dim(&self) -> usize {
        self.0.dim()
    }

    fn sample_gradient(&self, x: &DVector<T>, level: T, _rng: &mut dyn RngCore) -> Result<DVector<T>> {
        self.0.gradient(x, level)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdState<T: Real> {
    pub x: DVector<T>,
    pub iteration: usize,
    pub cost: T,
}

impl<T: Real> GdState<T> {
    pub fn new(x0: DVector<T>) -> Self {
        Self {
            x: x0,
            iteration: 0,
            cost: T::zero(),
        }
    }
}

/// Accelerated iterate; `y` is the output sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct AgdState<T: Real> {
    pub x: DVector<T>,
    pub y: DVector<T>,
    pub z: DVector<T>,
    pub iteration: usize,
    pub cost: T,
}

impl<T: Real> AgdState<T> {
    pub fn new(x0: DVector<T>) -> Self {
        Self {
            y: x0.clone(),
            z: x0.clone(),
            x: x0,
            iteration: 0,
            cost: T::zero(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DescentState<T: Real> {
    Plain(GdState<T>),
    Accelerated(AgdState<T>),
}

impl<T: Real> DescentState<T> {
    /// Current output iterate.
    pub fn iterate(&self) -> &DVector<T> {
        match self {
            Self::Plain(s) => &s.x,
            Self::Accelerated(s) => &s.y,
        }
    }

    pub fn cost(&self) -> T {
        match self {
            Self::Plain(s) => s.cost,
            Self::Accelerated(s) => s.cost,
        }
    }

    pub fn iteration(&self) -> usize {
        match self {
            Self::Plain(s) => s.iteration,
            Self::Accelerated(s) => s.iteration,
        }
    }
}

/// A failed step together with the last valid state.
#[derive(Debug, Clone, ThisError)]
#[error("{error}")]
pub struct DescentError<T: Real> {
    pub error: Error,
    pub last_state: DescentState<T>,
}

fn checked_gradient<T: Real>(
    g: Result<DVector<T>>,
    dim: usize,
    iteration: usize,
    last: impl FnOnce() -> DescentState<T>,
) -> Result<DVector<T>, DescentError<T>> {
    let fail = |error| DescentError {
        error,
        last_state: last(),
    };
    match g {
        Ok(g) if g.len() != dim => Err(fail(Error::DimensionMismatch {
            context: "gradient",
            expected: dim,
            actual: g.len(),
        })),
        Ok(g) if g.iter().any(|v| !v.finite()) => Err(fail(Error::Diverged {
            iteration,
            detail: "non-finite gradient".into(),
        })),
        Ok(g) => Ok(g),
        Err(e) => Err(fail(e)),
    }
}

fn plain_update<T: Real>(state: &GdState<T>, g: DVector<T>, level: T, spec: &SmoothConvexSpec<T>) -> GdState<T> {
    GdState {
        x: &state.x - g * spec.eta,
        iteration: state.iteration + 1,
        cost: state.cost + level,
    }
}

/// `x_{k+1} = x_k − η g_l(x_k)`.
pub fn gd_step<T: Real>(
    state: &GdState<T>,
    oracle: &dyn GradientOracle<T>,
    level: T,
    spec: &SmoothConvexSpec<T>,
) -> Result<GdState<T>, DescentError<T>> {
    let g = checked_gradient(oracle.gradient(&state.x, level), state.x.len(), state.iteration, || {
        DescentState::Plain(state.clone())
    })?;
    Ok(plain_update(state, g, level, spec))
}

/// `x_{k+1} = x_k − η G_l(x_k)`.
pub fn sgd_step<T: Real>(
    state: &GdState<T>,
    oracle: &dyn StochasticGradientOracle<T>,
    level: T,
    spec: &SmoothConvexSpec<T>,
    rng: &mut dyn RngCore,
) -> Result<GdState<T>, DescentError<T>> {
    let g = checked_gradient(
        oracle.sample_gradient(&state.x, level, rng),
        state.x.len(),
        state.iteration,
        || DescentState::Plain(state.clone()),
    )?;
    Ok(plain_update(state, g, level, spec))
}

fn momentum_point<T: Real>(state: &AgdState<T>, spec: &SmoothConvexSpec<T>) -> DVector<T> {
    let tau = spec.tau_momentum;
    (&state.z * tau + &state.y) / (T::one() + tau)
}

fn accelerated_update<T: Real>(
    state: &AgdState<T>,
    x: DVector<T>,
    g: DVector<T>,
    level: T,
    spec: &SmoothConvexSpec<T>,
) -> AgdState<T> {
    let tau = spec.tau_momentum;
    let y = &x - &g * (T::one() / spec.smoothness);
    let z = &state.z + (&x - &state.z) * tau - g * (tau / spec.mu);
    AgdState {
        x,
        y,
        z,
        iteration: state.iteration + 1,
        cost: state.cost + level,
    }
}

pub fn agd_step<T: Real>(
    state: &AgdState<T>,
    oracle: &dyn GradientOracle<T>,
    level: T,
    spec: &SmoothConvexSpec<T>,
) -> Result<AgdState<T>, DescentError<T>> {
    let x = momentum_point(state, spec);
    let g = checked_gradient(oracle.gradient(&x, level), x.len(), state.iteration, || {
        DescentState::Accelerated(state.clone())
    })?;
    Ok(accelerated_update(state, x, g, level, spec))
}

pub fn asgd_step<T: Real>(
    state: &AgdState<T>,
    oracle: &dyn StochasticGradientOracle<T>,
    level: T,
    spec: &SmoothConvexSpec<T>,
    rng: &mut dyn RngCore,
) -> Result<AgdState<T>, DescentError<T>> {
    let x = momentum_point(state, spec);
    let g = checked_gradient(oracle.sample_gradient(&x, level, rng), x.len(), state.iteration, || {
        DescentState::Accelerated(state.clone())
    })?;
    Ok(accelerated_update(state, x, g, level, spec))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Gd,
    Sgd,
    Agd,
    Asgd,
}

impl Algorithm {
    pub fn is_stochastic(self) -> bool {
        matches!(self, Self::Sgd | Self::Asgd)
    }

    pub fn is_accelerated(self) -> bool {
        matches!(self, Self::Agd | Self::Asgd)
    }
}

/// Oracle handed to [`run_multilevel_descent`].
pub enum DescentOracle<'a, T: Real> {
    Exact(&'a dyn GradientOracle<T>),
    Stochastic(&'a dyn StochasticGradientOracle<T>, &'a mut dyn RngCore),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord<T> {
    pub iteration: usize,
    pub level: T,
    pub cost: T,
    /// Distance to the supplied reference minimizer, if any.
    pub error: Option<T>,
}

#[derive(Debug, Clone)]
pub struct DescentRun<T: Real> {
    pub trajectory: Vec<IterationRecord<T>>,
    pub final_state: DescentState<T>,
}

/// Runs one step per schedule level, starting from `x0`.
pub fn run_multilevel_descent<T: Real>(
    algorithm: Algorithm,
    schedule: &LevelSchedule<T>,
    oracle: DescentOracle<'_, T>,
    spec: &SmoothConvexSpec<T>,
    x0: DVector<T>,
    reference: Option<&DVector<T>>,
) -> Result<DescentRun<T>, DescentError<T>> {
    let initial = if algorithm.is_accelerated() {
        DescentState::Accelerated(AgdState::new(x0))
    } else {
        DescentState::Plain(GdState::new(x0))
    };
    let fail = |error: Error, state: &DescentState<T>| DescentError {
        error,
        last_state: state.clone(),
    };
    if let Some(r) = reference {
        if r.len() != initial.iterate().len() {
            let e = Error::DimensionMismatch {
                context: "reference minimizer",
                expected: initial.iterate().len(),
                actual: r.len(),
            };
            return Err(fail(e, &initial));
        }
    }
    let mut oracle = oracle;
    let (dim, stochastic) = match &oracle {
        DescentOracle::Exact(o) => (o.dim(), false),
        DescentOracle::Stochastic(o, _) => (o.dim(), true),
    };
    if dim != initial.iterate().len() {
        let e = Error::DimensionMismatch {
            context: "oracle dimension",
            expected: initial.iterate().len(),
            actual: dim,
        };
        return Err(fail(e, &initial));
    }
    if stochastic != algorithm.is_stochastic() {
        let e = invalid(format!("{algorithm:?} needs a {} oracle", if stochastic { "deterministic" } else { "stochastic" }));
        return Err(fail(e, &initial));
    }

    let mut state = initial;
    let mut trajectory = Vec::with_capacity(schedule.levels.len());
    for &level in &schedule.levels {
        state = match (&mut oracle, state) {
            (DescentOracle::Exact(o), DescentState::Plain(s)) => DescentState::Plain(gd_step(&s, *o, level, spec)?),
            (DescentOracle::Exact(o), DescentState::Accelerated(s)) => {
                DescentState::Accelerated(agd_step(&s, *o, level, spec)?)
            }
            (DescentOracle::Stochastic(o, rng), DescentState::Plain(s)) => {
                DescentState::Plain(sgd_step(&s, *o, level, spec, &mut **rng)?)
            }
            (DescentOracle::Stochastic(o, rng), DescentState::Accelerated(s)) => {
                DescentState::Accelerated(asgd_step(&s, *o, level, spec, &mut **rng)?)
            }
        };
        trajectory.push(IterationRecord {
            iteration: state.iteration(),
            level,
            cost: state.cost(),
            error: reference.map(|r| (state.iterate() - r).norm()),
        });
    }
    Ok(DescentRun {
        trajectory,
        final_state: state,
    })
}

/// `g_l(x) = x − l^{−α}·1`, the gradient of `½‖x‖²` with a level-dependent
/// bias. Gradient descent with step `η` on it realizes
/// `x_{k+1} = (1−η) x_k + η l_k^{−α}` componentwise.
#[derive(Debug, Clone, Copy)]
pub struct ShiftedQuadraticOracle<T> {
    pub dim: usize,
    pub alpha: T,
}

impl<T: Real> GradientOracle<T> for ShiftedQuadraticOracle<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn gradient(&self, x: &DVector<T>, level: T) -> Result<DVector<T>> {
        check_dim("oracle input", self.dim, x.len())?;
        let shift = level.powf(-self.alpha);
        Ok(x.map(|v| v - shift))
    }
}

/// Exact gradient `A (x − x*)` of `½ (x − x*)ᵀ A (x − x*)`.
#[derive(Debug, Clone)]
pub struct QuadraticOracle<T: Real> {
    pub a: DMatrix<T>,
    pub minimizer: DVector<T>,
}

impl<T: Real> GradientOracle<T> for QuadraticOracle<T> {
    fn dim(&self) -> usize {
        self.minimizer.len()
    }

    fn gradient(&self, x: &DVector<T>, _level: T) -> Result<DVector<T>> {
        check_dim("oracle input", self.minimizer.len(), x.len())?;
        Ok(&self.a * (x - &self.minimizer))
    }
}

/// `G_l(x) = g(x) + σ l^{−p} ξ` with `ξ` standard Gaussian.
#[derive(Debug, Clone)]
pub struct GaussianNoiseOracle<O, T> {
    pub inner: O,
    pub sigma: T,
    pub decay: T,
}

impl<T: Real, O: GradientOracle<T>> StochasticGradientOracle<T> for GaussianNoiseOracle<O, T> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn sample_gradient(&self, x: &DVector<T>, level: T, rng: &mut dyn RngCore) -> Result<DVector<T>> {
        let g = self.inner.gradient(x, level)?;
        let xi: DVector<T> = normal_vector(g.len(), rng);
        Ok(g + xi * (self.sigma * level.powf(-self.decay)))
    }
}

/// Gradient of `E ½‖x − ζ‖²`, `ζ ~ N(m, σ² I)`, estimated from a batch of
/// `⌈l⌉` samples of `ζ`.
#[derive(Debug, Clone)]
pub struct BatchMeanOracle<T: Real> {
    pub mean: DVector<T>,
    pub sigma: T,
}

impl<T: Real> BatchMeanOracle<T> {
    pub fn exact_gradient(&self, x: &DVector<T>) -> DVector<T> {
        x - &self.mean
    }
}

impl<T: Real> StochasticGradientOracle<T> for BatchMeanOracle<T> {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn sample_gradient(&self, x: &DVector<T>, level: T, rng: &mut dyn RngCore) -> Result<DVector<T>> {
        check_dim("oracle input", self.mean.len(), x.len())?;
        let batch = level.ceil().as_f64();
        if !(batch >= 1.0) || !batch.is_finite() {
            return Err(invalid(format!("batch level must be >= 1, got {level}")));
        }
        let batch = batch as usize;
        let mut acc = DVector::zeros(x.len());
        for _ in 0..batch {
            acc += normal_vector::<T, _>(x.len(), rng);
        }
        let noise_mean = acc * (self.sigma / T::from_count(batch));
        Ok(x - &self.mean - noise_mean)
    }
}

/// Tikhonov objective on the sine-coefficient PDE model in the `L²`
/// geometry of the source term:
/// `Φ(f) = ½‖Γ^{−1/2}(F f − y)‖² + (λ/2)‖f‖²_{L²}`.
///
/// With `‖f‖_{L²} = ‖x‖/π` the `L²` gradient in coefficients is
/// `π² F_lᵀΓ⁻¹(F_l x − y) + λ x`, so `μ = λ` and
/// `L = π²‖F‖²‖Γ⁻¹‖ + λ`.
pub struct L2TikhonovOracle<T: Real> {
    map: Arc<dyn LinearForwardMap<T>>,
    y: DVector<T>,
    gamma_inv: DMatrix<T>,
    lambda: T,
}

impl<T: Real> L2TikhonovOracle<T> {
    pub fn new(map: Arc<dyn LinearForwardMap<T>>, y: DVector<T>, gamma_inv: DMatrix<T>, lambda: T) -> Result<Self> {
        check_dim("observations", map.output_dim(), y.len())?;
        check_dim("noise precision", map.output_dim(), gamma_inv.nrows())?;
        if !(lambda > T::zero()) {
            return Err(invalid(format!("regularization weight must be positive, got {lambda}")));
        }
        Ok(Self {
            map,
            y,
            gamma_inv,
            lambda,
        })
    }

    fn pi2() -> T {
        T::lit(PI * PI)
    }

    /// `μ = λ`, `L = π²‖F_ref‖₂²‖Γ⁻¹‖₂ + λ`.
    pub fn smooth_convex_spec(&self, reference_level: T) -> Result<SmoothConvexSpec<T>> {
        let f = self.map.matrix(reference_level)?;
        let f_norm = spectral_norm(&f);
        let g_norm = spectral_norm(&self.gamma_inv);
        SmoothConvexSpec::new(self.lambda, Self::pi2() * f_norm * f_norm * g_norm + self.lambda)
    }

    /// Exact minimizer of the level-`l` objective.
    pub fn minimizer(&self, level: T) -> Result<DVector<T>> {
        let f = self.map.matrix(level)?;
        let n = f.ncols();
        let a = f.transpose() * &self.gamma_inv * f.as_ref() + DMatrix::identity(n, n) * (self.lambda / Self::pi2());
        let rhs = f.tr_mul(&(&self.gamma_inv * &self.y));
        let chol = nalgebra::Cholesky::new(a).ok_or(Error::NotPositiveDefinite("L2 normal matrix"))?;
        Ok(chol.solve(&rhs))
    }

    /// `‖f(·,x) − f(·,x')‖_{L²}`.
    pub fn l2_distance(x: &DVector<T>, other: &DVector<T>) -> T {
        (x - other).norm() / Self::pi2().sqrt()
    }
}

impl<T: Real> GradientOracle<T> for L2TikhonovOracle<T> {
    fn dim(&self) -> usize {
        self.map.input_dim()
    }

    fn gradient(&self, x: &DVector<T>, level: T) -> Result<DVector<T>> {
        let r = self.map.evaluate(x, level)? - &self.y;
        let back = self.map.adjoint_apply(&(&self.gamma_inv * r), level)?;
        Ok(back * Self::pi2() + x * self.lambda)
    }
}

pub(crate) fn spectral_norm<T: Real>(m: &DMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.singular_values().max()
}

/// Minimal cost `(η/ε)^{1/α}` of any schedule that drives
/// `x_{k+1} = (1−η)x_k + η l_k^{−α}` from `x₀ ≥ 0` below `ε`.
pub fn sharpness_lower_bound<T: Real>(eta: T, alpha: T, epsilon: T) -> T {
    (eta / epsilon).powf(T::one() / alpha)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharpnessCheck<T> {
    pub final_value: T,
    pub steps: usize,
    pub reached: bool,
    pub cost: T,
    pub bound: T,
}

impl<T: Real> SharpnessCheck<T> {
    /// The bound constrains schedules that take at least one step and
    /// reach the tolerance.
    pub fn holds(&self) -> bool {
        !self.reached || self.steps == 0 || self.cost >= self.bound
    }
}

/// Runs the scalar recursion for `levels` and compares the cost with
/// [`sharpness_lower_bound`].
pub fn check_sharpness<T: Real>(eta: T, alpha: T, epsilon: T, x0: T, levels: &[T]) -> Result<SharpnessCheck<T>> {
    if !(eta > T::zero() && eta < T::one()) {
        return Err(invalid(format!("eta must lie in (0, 1), got {eta}")));
    }
    if !(x0 >= T::zero()) {
        return Err(invalid(format!("start must be nonnegative, got {x0}")));
    }
    let mut x = x0;
    let mut cost = T::zero();
    for &l in levels {
        x = (T::one() - eta) * x + eta * l.powf(-alpha);
        cost += l;
    }
    Ok(SharpnessCheck {
        final_value: x,
        steps: levels.len(),
        reached: x.abs() <= epsilon,
        cost,
        bound: sharpness_lower_bound(eta, alpha, epsilon),
    })
}
