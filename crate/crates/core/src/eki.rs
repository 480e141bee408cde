//! Ensemble Kalman inversion with leveled forward maps.
//!
//! Particles are stored as the columns of an `n_x × M` matrix. For a
//! linear observation map `H` the empirical moments are computed with
//! `1/M` normalization, and two time steppers are provided:
//!
//! * perturbed observations: `v⁺ = v + C^{vH}(C^{HH} + Σ/h)⁻¹(z^{(m)} − Hv)`
//!   with `z^{(m)} ~ N(z, Σ/h)`;
//! * Euler–Maruyama for the inflated dynamics:
//!   `v⁺ = v + h(C + B)HᵀΣ⁻¹(z − Hv) + √h C HᵀΣ^{−1/2} ξ`.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::RngCore;

use crate::error::{check_dim, invalid, Error, Result};
use crate::problem::{spd_cholesky, InverseProblemSpec};
use crate::rng::normal_matrix;
use crate::schedule::LevelSchedule;
use crate::Real;

/// Particle norm beyond which a run is declared divergent.
pub const DEFAULT_GUARD: f64 = 1e8;

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<T: Real> {
    particles: DMatrix<T>,
}

impl<T: Real> Ensemble<T> {
    /// Columns of `particles` are the ensemble members.
    pub fn new(particles: DMatrix<T>) -> Result<Self> {
        if particles.ncols() == 0 || particles.nrows() == 0 {
            return Err(invalid("ensemble needs at least one particle of positive dimension"));
        }
        if particles.iter().any(|v| !v.finite()) {
            return Err(invalid("ensemble contains non-finite values"));
        }
        Ok(Self { particles })
    }

    pub fn from_particles(particles: &[DVector<T>]) -> Result<Self> {
        let first = particles.first().ok_or_else(|| invalid("ensemble needs at least one particle"))?;
        for p in particles {
            check_dim("particle", first.len(), p.len())?;
        }
        Self::new(DMatrix::from_columns(particles))
    }

    /// `m` draws from `N(mean, cov)`.
    pub fn sample_gaussian<R: RngCore + ?Sized>(
        mean: &DVector<T>,
        cov: &DMatrix<T>,
        m: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_dim("covariance", mean.len(), cov.nrows())?;
        if m == 0 {
            return Err(invalid("ensemble size must be positive"));
        }
        let chol = spd_cholesky(cov, "sampling covariance")?;
        let xi: DMatrix<T> = normal_matrix(mean.len(), m, rng);
        let mut particles = chol.l() * xi;
        for mut col in particles.column_iter_mut() {
            col += mean;
        }
        Self::new(particles)
    }

    pub fn size(&self) -> usize {
        self.particles.ncols()
    }

    pub fn dim(&self) -> usize {
        self.particles.nrows()
    }

    pub fn particles(&self) -> &DMatrix<T> {
        &self.particles
    }

    pub fn into_particles(self) -> DMatrix<T> {
        self.particles
    }

    pub fn particle(&self, m: usize) -> DVector<T> {
        self.particles.column(m).into_owned()
    }

    pub fn mean(&self) -> DVector<T> {
        column_mean(&self.particles)
    }

    pub fn centered(&self) -> DMatrix<T> {
        centered(&self.particles)
    }

    /// Empirical covariance with `1/M` normalization.
    pub fn covariance(&self) -> DMatrix<T> {
        let c = self.centered();
        &c * c.transpose() / T::from_count(self.size())
    }

    pub fn max_particle_norm(&self) -> T {
        self.particles
            .column_iter()
            .map(|c| c.norm())
            .fold(T::zero(), |a, b| a.max(b))
    }
}

fn column_mean<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    m.column_sum() / T::from_count(m.ncols())
}

fn centered<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let mean = column_mean(m);
    let mut c = m.clone();
    for mut col in c.column_iter_mut() {
        col -= &mean;
    }
    c
}

/// Empirical means and (cross-)covariances of particles and their images.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMoments<T: Real> {
    pub mean: DVector<T>,
    pub h_mean: DVector<T>,
    pub c_vh: DMatrix<T>,
    pub c_hh: DMatrix<T>,
    pub c: DMatrix<T>,
}

/// `h_values` holds the image of particle `m` in column `m`.
pub fn empirical_moments<T: Real>(ensemble: &Ensemble<T>, h_values: &DMatrix<T>) -> Result<EmpiricalMoments<T>> {
    check_dim("images per particle", ensemble.size(), h_values.ncols())?;
    let m = T::from_count(ensemble.size());
    let vc = ensemble.centered();
    let hc = centered(h_values);
    Ok(EmpiricalMoments {
        mean: ensemble.mean(),
        h_mean: column_mean(h_values),
        c_vh: &vc * hc.transpose() / m,
        c_hh: &hc * hc.transpose() / m,
        c: &vc * vc.transpose() / m,
    })
}

/// Linear observation `H`, data `z`, noise covariance `Σ` and optional
/// inflation `B`.
#[derive(Debug, Clone)]
pub struct AugmentedSystem<T: Real> {
    h: DMatrix<T>,
    z: DVector<T>,
    sigma: DMatrix<T>,
    sigma_lower: DMatrix<T>,
    sigma_inv: DMatrix<T>,
    /// `Σ^{−1/2}` realized as `L^{−T}` with `L Lᵀ = Σ`.
    sigma_inv_sqrt: DMatrix<T>,
    inflation: Option<DMatrix<T>>,
}

impl<T: Real> AugmentedSystem<T> {
    pub fn from_parts(h: DMatrix<T>, z: DVector<T>, sigma: DMatrix<T>) -> Result<Self> {
        check_dim("data", h.nrows(), z.len())?;
        check_dim("noise covariance", h.nrows(), sigma.nrows())?;
        if h.iter().chain(z.iter()).any(|v| !v.finite()) {
            return Err(invalid("observation system contains non-finite values"));
        }
        let chol = spd_cholesky(&sigma, "noise covariance")?;
        let lower = chol.l();
        let n = lower.nrows();
        let sigma_inv_sqrt = lower
            .solve_lower_triangular(&DMatrix::identity(n, n))
            .ok_or(Error::NotPositiveDefinite("noise covariance"))?
            .transpose();
        Ok(Self {
            sigma_inv: chol.inverse(),
            sigma_lower: lower,
            sigma_inv_sqrt,
            h,
            z,
            sigma,
            inflation: None,
        })
    }

    /// Plain inversion: `H = F`, `z = y`, `Σ = Γ`.
    pub fn standard(f: DMatrix<T>, y: DVector<T>, gamma: DMatrix<T>) -> Result<Self> {
        Self::from_parts(f, y, gamma)
    }

    /// Tikhonov regularized inversion: `H = [F; I]`, `z = [y; 0]`,
    /// `Σ = diag(Γ, C₀/λ)`.
    pub fn tikhonov(f: &DMatrix<T>, y: &DVector<T>, gamma: &DMatrix<T>, c0: &DMatrix<T>, lambda: T) -> Result<Self> {
        if !(lambda > T::zero()) {
            return Err(invalid(format!("regularization weight must be positive, got {lambda}")));
        }
        let (n_y, n_x) = f.shape();
        check_dim("prior covariance", n_x, c0.nrows())?;
        let mut h = DMatrix::zeros(n_y + n_x, n_x);
        h.view_mut((0, 0), (n_y, n_x)).copy_from(f);
        h.view_mut((n_y, 0), (n_x, n_x)).fill_with_identity();
        let mut z = DVector::zeros(n_y + n_x);
        z.rows_mut(0, n_y).copy_from(y);
        let mut sigma = DMatrix::zeros(n_y + n_x, n_y + n_x);
        sigma.view_mut((0, 0), (n_y, n_y)).copy_from(gamma);
        sigma.view_mut((n_y, n_y), (n_x, n_x)).copy_from(&(c0 / lambda));
        Self::from_parts(h, z, sigma)
    }

    pub fn tikhonov_from_problem(f: &DMatrix<T>, problem: &InverseProblemSpec<T>) -> Result<Self> {
        Self::tikhonov(f, problem.y(), problem.gamma(), problem.c0(), problem.lambda())
    }

    /// Adds the inflation `B`, which must be symmetric positive
    /// semidefinite.
    pub fn with_inflation(mut self, b: DMatrix<T>) -> Result<Self> {
        check_dim("inflation", self.n_x(), b.nrows())?;
        check_dim("inflation", self.n_x(), b.ncols())?;
        let scale = b.amax();
        if (&b - b.transpose()).amax() > T::lit(1e-10) * scale {
            return Err(invalid("inflation matrix is not symmetric"));
        }
        let eig = b.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&v| v < -T::lit(1e-12) * scale * T::from_count(self.n_x())) {
            return Err(invalid("inflation matrix is not positive semidefinite"));
        }
        self.inflation = Some(b);
        Ok(self)
    }

    pub fn n_x(&self) -> usize {
        self.h.ncols()
    }

    pub fn n_z(&self) -> usize {
        self.h.nrows()
    }

    pub fn h(&self) -> &DMatrix<T> {
        &self.h
    }

    pub fn z(&self) -> &DVector<T> {
        &self.z
    }

    pub fn sigma(&self) -> &DMatrix<T> {
        &self.sigma
    }

    pub fn inflation(&self) -> Option<&DMatrix<T>> {
        self.inflation.as_ref()
    }

    fn check_ensemble(&self, ensemble: &Ensemble<T>) -> Result<()> {
        check_dim("particle dimension", self.n_x(), ensemble.dim())
    }

    fn residuals(&self, hv: &DMatrix<T>) -> DMatrix<T> {
        let mut r = -hv;
        for mut col in r.column_iter_mut() {
            col += &self.z;
        }
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Integrator {
    Perturbed,
    Inflated,
}

fn check_step<T: Real>(h: T) -> Result<()> {
    if h > T::zero() && h.finite() {
        Ok(())
    } else {
        Err(invalid(format!("step size must be positive, got {h}")))
    }
}

fn guarded<T: Real>(particles: DMatrix<T>, guard: T, iteration: usize) -> Result<Ensemble<T>> {
    let ensemble = Ensemble { particles };
    let norm = ensemble.max_particle_norm();
    if !norm.finite() || norm > guard {
        return Err(Error::Diverged {
            iteration,
            detail: format!("particle norm {norm:e} exceeds {guard:e}; reduce the step size"),
        });
    }
    Ok(ensemble)
}

fn perturbed_step<T: Real>(
    ensemble: &Ensemble<T>,
    system: &AugmentedSystem<T>,
    h: T,
    rng: Option<&mut dyn RngCore>,
    guard: T,
    iteration: usize,
) -> Result<Ensemble<T>> {
    check_step(h)?;
    system.check_ensemble(ensemble)?;
    if system.inflation.is_some() {
        return Err(invalid("the perturbed-observation step does not support inflation"));
    }
    let hv = &system.h * ensemble.particles();
    let moments = empirical_moments(ensemble, &hv)?;
    let gain_system = moments.c_hh + &system.sigma / h;
    let chol = Cholesky::new(gain_system).ok_or(Error::NotPositiveDefinite("Kalman gain system"))?;
    let mut innovation = system.residuals(&hv);
    if let Some(rng) = rng {
        let xi: DMatrix<T> = normal_matrix(system.n_z(), ensemble.size(), rng);
        innovation += &system.sigma_lower * xi / h.sqrt();
    }
    let update = moments.c_vh * chol.solve(&innovation);
    guarded(ensemble.particles() + update, guard, iteration)
}

fn inflated_step<T: Real>(
    ensemble: &Ensemble<T>,
    system: &AugmentedSystem<T>,
    h: T,
    rng: Option<&mut dyn RngCore>,
    guard: T,
    iteration: usize,
) -> Result<Ensemble<T>> {
    check_step(h)?;
    system.check_ensemble(ensemble)?;
    let hv = &system.h * ensemble.particles();
    let moments = empirical_moments(ensemble, &hv)?;
    // For linear H, C Hᵀ equals the cross covariance C^{vH}.
    let mut drift_gain = moments.c_vh.clone();
    if let Some(b) = &system.inflation {
        drift_gain += b * system.h.transpose();
    }
    let weighted = &system.sigma_inv * system.residuals(&hv);
    let mut next = ensemble.particles() + drift_gain * weighted * h;
    if let Some(rng) = rng {
        let xi: DMatrix<T> = normal_matrix(system.n_z(), ensemble.size(), rng);
        next += moments.c_vh * (&system.sigma_inv_sqrt * xi) * h.sqrt();
    }
    guarded(next, guard, iteration)
}

/// One perturbed-observation step. Passing `None` for `rng` replaces the
/// perturbed data by `z`.
pub fn eki_inner_step_perturbed<T: Real>(
    ensemble: &Ensemble<T>,
    system: &AugmentedSystem<T>,
    h: T,
    rng: Option<&mut dyn RngCore>,
) -> Result<Ensemble<T>> {
    perturbed_step(ensemble, system, h, rng, T::lit(DEFAULT_GUARD), 0)
}

/// One Euler–Maruyama step of the inflated dynamics. Passing `None` for
/// `rng` drops the diffusion term.
pub fn eki_inner_step_inflated<T: Real>(
    ensemble: &Ensemble<T>,
    system: &AugmentedSystem<T>,
    h: T,
    rng: Option<&mut dyn RngCore>,
) -> Result<Ensemble<T>> {
    inflated_step(ensemble, system, h, rng, T::lit(DEFAULT_GUARD), 0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EkiConfig<T> {
    /// Pseudo-time per outer iteration.
    pub tau_interval: T,
    /// Inner step size; `tau_interval / h` must be an integer.
    pub h: T,
    pub integrator: Integrator,
    pub guard: T,
}

impl<T: Real> EkiConfig<T> {
    pub fn new(tau_interval: T, h: T, integrator: Integrator) -> Self {
        Self {
            tau_interval,
            h,
            integrator,
            guard: T::lit(DEFAULT_GUARD),
        }
    }
}

/// `N = tau_interval / h`, which must be a positive integer up to rounding.
pub fn inner_steps<T: Real>(tau_interval: T, h: T) -> Result<usize> {
    check_step(h)?;
    if !(tau_interval > T::zero()) || !tau_interval.finite() {
        return Err(invalid(format!("time interval must be positive, got {tau_interval}")));
    }
    let ratio = (tau_interval / h).as_f64();
    let n = ratio.round();
    if n < 1.0 || (ratio - n).abs() > 1e-6 * n {
        return Err(invalid(format!(
            "time interval {tau_interval} is not an integer multiple of the step {h}"
        )));
    }
    Ok(n as usize)
}

#[derive(Debug, Clone)]
pub struct EkiRun<T: Real> {
    /// Ensemble mean before the first and after every outer iteration.
    pub means: Vec<DVector<T>>,
    pub final_ensemble: Ensemble<T>,
    pub schedule_cost: T,
    /// `M · N · Σ_j l_j`.
    pub work_units: T,
    pub inner_steps: usize,
}

/// Per-level system builder.
pub type SystemBuilder<'a, T> = dyn Fn(T) -> Result<AugmentedSystem<T>> + 'a;

/// Multilevel inversion: outer iteration `j` runs `N` inner steps with the
/// system of level `l_j`, warm starting from the previous ensemble.
/// `observer` sees the ensemble after every inner step.
pub fn run_ml_eki<T: Real>(
    schedule: &LevelSchedule<T>,
    system_at: &SystemBuilder<'_, T>,
    initial: Ensemble<T>,
    config: &EkiConfig<T>,
    mut rng: Option<&mut dyn RngCore>,
    mut observer: Option<&mut dyn FnMut(&Ensemble<T>)>,
) -> Result<EkiRun<T>> {
    let n = inner_steps(config.tau_interval, config.h)?;
    let mut ensemble = initial;
    let mut means = vec![ensemble.mean()];
    let mut step = 0usize;
    for &level in &schedule.levels {
        let system = system_at(level)?;
        for _ in 0..n {
            let r = rng.as_mut().map(|r| &mut **r as &mut dyn RngCore);
            ensemble = match config.integrator {
                Integrator::Perturbed => perturbed_step(&ensemble, &system, config.h, r, config.guard, step)?,
                Integrator::Inflated => inflated_step(&ensemble, &system, config.h, r, config.guard, step)?,
            };
            step += 1;
            if let Some(obs) = observer.as_mut() {
                obs(&ensemble);
            }
        }
        means.push(ensemble.mean());
    }
    let schedule_cost = schedule.total_cost();
    Ok(EkiRun {
        means,
        work_units: schedule_cost * T::from_count(ensemble.size() * n),
        final_ensemble: ensemble,
        schedule_cost,
        inner_steps: n,
    })
}

/// `½‖Γ^{−1/2}F(x − x*)‖² + (λ/2)‖C₀^{−1/2}(x − x*)‖²`.
pub fn teki_error<T: Real>(
    x: &DVector<T>,
    x_star: &DVector<T>,
    problem: &InverseProblemSpec<T>,
    f_ref: &DMatrix<T>,
) -> Result<T> {
    check_dim("iterate", problem.n_x(), x.len())?;
    check_dim("reference solution", problem.n_x(), x_star.len())?;
    check_dim("reference forward matrix", problem.n_x(), f_ref.ncols())?;
    let d = x - x_star;
    let fd = f_ref * &d;
    let half = T::lit(0.5);
    Ok(half * fd.dot(&(problem.gamma_inv() * &fd)) + half * problem.lambda() * d.dot(&(problem.c0_inv() * &d)))
}

/// Affine span of an initial ensemble.
#[derive(Debug, Clone)]
pub struct AffineSpan<T: Real> {
    origin: DVector<T>,
    basis: DMatrix<T>,
    spread: T,
}

impl<T: Real> AffineSpan<T> {
    pub fn new(ensemble: &Ensemble<T>) -> Self {
        let c = ensemble.centered();
        let spread = c.column_iter().map(|col| col.norm()).fold(T::zero(), |a, b| a.max(b));
        let svd = c.svd(true, false);
        let u = svd.u.expect("left singular vectors requested");
        let smax = svd.singular_values.max();
        let tol = smax * T::lit(1e-12) * T::from_count(ensemble.dim().max(ensemble.size()));
        let keep: Vec<usize> = (0..svd.singular_values.len())
            .filter(|&i| svd.singular_values[i] > tol)
            .collect();
        let basis = DMatrix::from_columns(&keep.iter().map(|&i| u.column(i).into_owned()).collect::<Vec<_>>());
        let basis = if keep.is_empty() {
            DMatrix::zeros(ensemble.dim(), 0)
        } else {
            basis
        };
        Self {
            origin: ensemble.mean(),
            basis,
            spread,
        }
    }

    pub fn dimension(&self) -> usize {
        self.basis.ncols()
    }

    /// Largest distance of a particle from the span, relative to the
    /// larger of its offset from the initial mean and the initial spread.
    pub fn relative_deviation(&self, ensemble: &Ensemble<T>) -> T {
        let mut worst = T::zero();
        for col in ensemble.particles().column_iter() {
            let d = col - &self.origin;
            let proj = &self.basis * self.basis.tr_mul(&d);
            let scale = d.norm().max(self.spread);
            if scale > T::zero() {
                worst = worst.max((d - proj).norm() / scale);
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_step_count() {
        assert_eq!(inner_steps(0.1, 0.001).unwrap(), 100);
        assert_eq!(inner_steps(0.1, 0.1).unwrap(), 1);
        assert!(inner_steps(0.1, 0.03).is_err());
        assert!(inner_steps(0.1, 0.0).is_err());
    }

    #[test]
    fn tikhonov_blocks() {
        let f = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let y = DVector::from_element(1, 3.0);
        let gamma = DMatrix::from_element(1, 1, 0.5);
        let c0 = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.25]));
        let s = AugmentedSystem::tikhonov(&f, &y, &gamma, &c0, 2.0).unwrap();
        assert_eq!(s.n_z(), 3);
        assert_eq!(s.h()[(1, 0)], 1.0);
        assert_eq!(s.h()[(2, 1)], 1.0);
        assert_eq!(s.z()[1], 0.0);
        assert_eq!(s.sigma()[(2, 2)], 0.125);
        assert_eq!(s.sigma()[(0, 0)], 0.5);
    }

    #[test]
    fn perturbed_step_rejects_inflation() {
        let s = AugmentedSystem::standard(DMatrix::identity(1, 1), DVector::zeros(1), DMatrix::identity(1, 1))
            .unwrap()
            .with_inflation(DMatrix::identity(1, 1))
            .unwrap();
        let e = Ensemble::new(DMatrix::from_row_slice(1, 2, &[0.0, 2.0])).unwrap();
        assert!(eki_inner_step_perturbed(&e, &s, 1.0, None).is_err());
    }

    #[test]
    fn guard_reports_divergence() {
        let s = AugmentedSystem::standard(DMatrix::identity(1, 1), DVector::from_element(1, 1e12), DMatrix::identity(1, 1))
            .unwrap();
        let e = Ensemble::new(DMatrix::from_row_slice(1, 2, &[0.0, 2.0])).unwrap();
        let err = eki_inner_step_inflated(&e, &s, 1.0, None).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }));
    }
}
