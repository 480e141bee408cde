//! Accuracy-level schedules for inexact iterative methods.
//!
//! An iteration run at level `l` is assumed to contract the error as
//! `e_{k+1} ≤ c·e_k + b·l^{-α}` and to cost `l`. Given a tolerance `ε`, the
//! schedules here pick the iteration count `K` and the levels so that the
//! recursive bound stays below `ε` at low total cost.

use crate::error::{invalid, Result};
use crate::Real;

/// Parameters of the error recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceModel<T> {
    c: T,
    alpha: T,
    e0: T,
    bias_constant: T,
}

impl<T: Real> ConvergenceModel<T> {
    pub fn new(c: T, alpha: T, e0: T) -> Result<Self> {
        Self::with_bias(c, alpha, e0, T::one())
    }

    pub fn with_bias(c: T, alpha: T, e0: T, bias_constant: T) -> Result<Self> {
        if !(c > T::zero() && c < T::one()) {
            return Err(invalid(format!("contraction factor c must lie in (0, 1), got {c}")));
        }
        if !(alpha > T::zero()) || !alpha.finite() {
            return Err(invalid(format!("alpha must be positive, got {alpha}")));
        }
        if !(e0 > T::zero()) || !e0.finite() {
            return Err(invalid(format!("e0 must be positive, got {e0}")));
        }
        if !(bias_constant >= T::one()) || !bias_constant.finite() {
            return Err(invalid(format!("bias constant must be at least 1, got {bias_constant}")));
        }
        Ok(Self {
            c,
            alpha,
            e0,
            bias_constant,
        })
    }

    pub fn c(&self) -> T {
        self.c
    }

    pub fn alpha(&self) -> T {
        self.alpha
    }

    pub fn e0(&self) -> T {
        self.e0
    }

    pub fn bias_constant(&self) -> T {
        self.bias_constant
    }

    /// Factor `b^{1/α}` applied to every level.
    fn level_scale(&self) -> T {
        self.bias_constant.powf(T::one() / self.alpha)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScheduleKind {
    SingleLevel,
    Multilevel,
}

impl ScheduleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScheduleKind::SingleLevel => "sl",
            ScheduleKind::Multilevel => "ml",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSchedule<T> {
    pub levels: Vec<T>,
    pub epsilon: T,
    pub kind: ScheduleKind,
}

impl<T: Real> LevelSchedule<T> {
    pub fn iterations(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn total_cost(&self) -> T {
        total_cost(self)
    }

    pub fn rounded(&self, policy: RoundingPolicy) -> Self {
        Self {
            levels: round_to_admissible(&self.levels, policy),
            epsilon: self.epsilon,
            kind: self.kind,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RoundingPolicy {
    #[default]
    Identity,
    NextPowerOfTwo,
}

fn check_epsilon<T: Real>(epsilon: T) -> Result<()> {
    if epsilon > T::zero() && epsilon.finite() {
        Ok(())
    } else {
        Err(invalid(format!("epsilon must be positive and finite, got {epsilon}")))
    }
}

/// Smallest `K` with `c^K e0 ≤ ε/2`; zero once `ε ≥ 2 e0`.
pub fn iteration_count<T: Real>(model: &ConvergenceModel<T>, epsilon: T) -> Result<usize> {
    check_epsilon(epsilon)?;
    let two = T::lit(2.0);
    if epsilon >= two * model.e0 {
        return Ok(0);
    }
    let ratio = (epsilon / (two * model.e0)).ln() / model.c.ln();
    let r = ratio.as_f64();
    // Snap when the ratio is an integer up to rounding, so that e.g.
    // ε/(2e0) = c^4 yields K = 4 and not 5.
    let nearest = r.round();
    let tol = 1e-10_f64.max(64.0 * T::default_epsilon().as_f64());
    let k = if (r - nearest).abs() <= tol * nearest.abs().max(1.0) {
        nearest
    } else {
        r.ceil()
    };
    Ok(k.max(0.0) as usize)
}

/// Constant-level schedule: `K` copies of
/// `l̄ = (2(1−c^K) / ((1−c) ε))^{1/α} · b^{1/α}`.
pub fn single_level_schedule<T: Real>(model: &ConvergenceModel<T>, epsilon: T) -> Result<LevelSchedule<T>> {
    let k = iteration_count(model, epsilon)?;
    let levels = if k == 0 {
        Vec::new()
    } else {
        let one = T::one();
        let geometric = (one - model.c.powi(k as i32)) / (one - model.c);
        let base = (T::lit(2.0) * geometric / epsilon).powf(one / model.alpha);
        vec![base * model.level_scale(); k]
    };
    Ok(LevelSchedule {
        levels,
        epsilon,
        kind: ScheduleKind::SingleLevel,
    })
}

/// Cost-minimizing geometric schedule under the constraint
/// `Σ_j c^{K−1−j} l_j^{−α} = ε/2`.
pub fn multilevel_schedule<T: Real>(model: &ConvergenceModel<T>, epsilon: T) -> Result<LevelSchedule<T>> {
    let k = iteration_count(model, epsilon)?;
    let one = T::one();
    let inv_alpha = one / model.alpha;
    let r = model.c.powf(one / (one + model.alpha));
    let bracket = (one - r.powi(k as i32)) / (one - r);
    let front = (epsilon / T::lit(2.0)).powf(-inv_alpha) * bracket.powf(inv_alpha) * model.level_scale();
    let levels = (0..k).map(|j| front * r.powi((k - 1 - j) as i32)).collect();
    Ok(LevelSchedule {
        levels,
        epsilon,
        kind: ScheduleKind::Multilevel,
    })
}

pub fn schedule<T: Real>(model: &ConvergenceModel<T>, epsilon: T, kind: ScheduleKind) -> Result<LevelSchedule<T>> {
    match kind {
        ScheduleKind::SingleLevel => single_level_schedule(model, epsilon),
        ScheduleKind::Multilevel => multilevel_schedule(model, epsilon),
    }
}

/// Closed-form cost `K·l̄` of [`single_level_schedule`].
pub fn single_level_cost<T: Real>(model: &ConvergenceModel<T>, epsilon: T) -> Result<T> {
    let k = iteration_count(model, epsilon)?;
    if k == 0 {
        return Ok(T::zero());
    }
    let one = T::one();
    let geometric = (one - model.c.powi(k as i32)) / (one - model.c);
    Ok(T::from_count(k) * (T::lit(2.0) * geometric / epsilon).powf(one / model.alpha) * model.level_scale())
}

/// Closed-form cost `(ε/2)^{−1/α} · S^{(1+α)/α} · b^{1/α}` of
/// [`multilevel_schedule`], with `S` the geometric sum of `c^{j/(1+α)}`.
pub fn multilevel_cost<T: Real>(model: &ConvergenceModel<T>, epsilon: T) -> Result<T> {
    let k = iteration_count(model, epsilon)?;
    let one = T::one();
    let r = model.c.powf(one / (one + model.alpha));
    let bracket = (one - r.powi(k as i32)) / (one - r);
    Ok((epsilon / T::lit(2.0)).powf(-one / model.alpha)
        * bracket.powf((one + model.alpha) / model.alpha)
        * model.level_scale())
}

/// Error bound after running `levels` in order:
/// `c^K e0 + b Σ_j c^{K−1−j} l_j^{−α}`.
pub fn bound_error<T: Real>(model: &ConvergenceModel<T>, levels: &[T]) -> Result<T> {
    if let Some(bad) = levels.iter().find(|l| !(**l > T::zero()) || !l.finite()) {
        return Err(invalid(format!("levels must be positive and finite, got {bad}")));
    }
    let mut e = model.e0;
    for &l in levels {
        e = model.c * e + model.bias_constant * l.powf(-model.alpha);
    }
    Ok(e)
}

pub fn total_cost<T: Real>(schedule: &LevelSchedule<T>) -> T {
    schedule.levels.iter().fold(T::zero(), |acc, &l| acc + l)
}

/// Smallest power of two `2^τ ≥ level`, with `τ ≥ 0`.
pub fn next_power_of_two<T: Real>(level: T) -> T {
    let mut p = T::one();
    while p < level {
        p *= T::lit(2.0);
    }
    p
}

pub fn round_to_admissible<T: Real>(levels: &[T], policy: RoundingPolicy) -> Vec<T> {
    match policy {
        RoundingPolicy::Identity => levels.to_vec(),
        RoundingPolicy::NextPowerOfTwo => levels.iter().map(|&l| next_power_of_two(l)).collect(),
    }
}
