//! One run of a method on the testbed for a given schedule.

use nalgebra::DVector;
use rand::RngCore;

use mlopt::descent::{agd_step, gd_step, AgdState, Algorithm, DescentState, GdState, L2TikhonovOracle, SmoothConvexSpec};
use mlopt::eki::{run_ml_eki, AugmentedSystem, EkiConfig, Ensemble, Integrator};
use mlopt::forward::LinearForwardMap;
use mlopt::langevin::{run_ml_ils, IlsConfig, PosteriorSpec};
use mlopt::rng::stream;
use mlopt::schedule::{schedule, LevelSchedule, RoundingPolicy, ScheduleKind};

use crate::config::{IntegratorChoice, MethodKind, RoundingChoice};
use crate::error::Result;
use crate::testbed::{ResolvedMethod, Testbed};

/// Error after an outer iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct TracePoint {
    /// Outer iterations completed; 0 is the initial state.
    pub iteration: usize,
    /// Level of the last completed iteration (0 initially).
    pub level: f64,
    /// Cumulative schedule cost.
    pub cost: f64,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub error: f64,
    pub schedule_cost: f64,
    pub work_units: f64,
    pub trace: Vec<TracePoint>,
}

enum Engine {
    Kalman { config: EkiConfig<f64>, tikhonov: bool },
    Langevin { config: IlsConfig<f64>, posterior: PosteriorSpec<f64> },
    Descent { algorithm: Algorithm, oracle: L2TikhonovOracle<f64>, spec: SmoothConvexSpec<f64> },
}

/// Everything needed to run replicates of one method.
pub struct MethodRunner<'a> {
    testbed: &'a Testbed,
    method: ResolvedMethod,
    reference: DVector<f64>,
    engine: Engine,
}

impl<'a> MethodRunner<'a> {
    pub fn new(testbed: &'a Testbed, method: ResolvedMethod) -> Result<Self> {
        let s = &method.settings;
        let engine = match s.kind {
            MethodKind::Teki | MethodKind::Eki => {
                let integrator = match s.integrator {
                    IntegratorChoice::Perturbed => Integrator::Perturbed,
                    IntegratorChoice::Inflated => Integrator::Inflated,
                };
                Engine::Kalman {
                    config: EkiConfig::new(s.tau_interval, s.step, integrator),
                    tikhonov: s.kind == MethodKind::Teki,
                }
            }
            MethodKind::Ils => Engine::Langevin {
                config: IlsConfig::new(s.tau_interval, s.step),
                posterior: testbed.posterior()?,
            },
            MethodKind::Gd | MethodKind::Agd => Engine::Descent {
                algorithm: if s.kind == MethodKind::Gd { Algorithm::Gd } else { Algorithm::Agd },
                oracle: testbed.gd_oracle()?,
                spec: testbed.gd_spec()?,
            },
        };
        Ok(Self {
            reference: testbed.reference_solution(s.kind)?,
            testbed,
            method,
            engine,
        })
    }

    pub fn method(&self) -> &ResolvedMethod {
        &self.method
    }

    pub fn reference(&self) -> &DVector<f64> {
        &self.reference
    }

    /// Gradient methods use no randomness; one replicate suffices.
    pub fn is_deterministic(&self) -> bool {
        matches!(self.engine, Engine::Descent { .. })
    }

    /// Level schedule for a tolerance, rounded by the configured policy.
    pub fn schedule(&self, epsilon: f64, kind: ScheduleKind) -> Result<LevelSchedule<f64>> {
        let model = self.method.convergence_model()?;
        let raw = schedule(&model, epsilon, kind)?;
        Ok(match self.method.settings.rounding {
            RoundingChoice::Identity => raw,
            RoundingChoice::NextPowerOfTwo => raw.rounded(RoundingPolicy::NextPowerOfTwo),
        })
    }

    fn error(&self, x: &DVector<f64>) -> Result<f64> {
        self.testbed.error(self.method.settings.kind, x, &self.reference)
    }

    fn trace(&self, schedule: &LevelSchedule<f64>, iterates: &[DVector<f64>]) -> Result<Vec<TracePoint>> {
        let mut cost = 0.0;
        let mut out = Vec::with_capacity(iterates.len());
        for (j, x) in iterates.iter().enumerate() {
            let level = if j == 0 { 0.0 } else { schedule.levels[j - 1] };
            cost += level;
            out.push(TracePoint {
                iteration: j,
                level,
                cost,
                error: self.error(x)?,
            });
        }
        Ok(out)
    }

    fn prior_ensemble(&self, rng: &mut dyn RngCore) -> Result<Ensemble<f64>> {
        let p = &self.testbed.problem;
        let cov = p.c0() / p.lambda();
        Ok(Ensemble::sample_gaussian(
            &DVector::zeros(p.n_x()),
            &cov,
            self.method.settings.ensemble_size,
            rng,
        )?)
    }

    /// Runs replicate `replicate` of the sweep seeded by `seed`. The random
    /// stream depends only on `(seed, replicate)`, so every tolerance and
    /// schedule kind sees the same initial ensemble and noise.
    pub fn run(&self, schedule: &LevelSchedule<f64>, seed: u64, replicate: u64, trace: bool) -> Result<RunOutcome> {
        let mut rng = stream(seed, replicate);
        let (iterates, schedule_cost, work_units) = match &self.engine {
            Engine::Kalman { config, tikhonov } => {
                let tb = self.testbed;
                let inflation = self.method.inflation.clone();
                let builder = move |level: f64| -> mlopt::Result<AugmentedSystem<f64>> {
                    let f = tb.model.matrix(level)?;
                    let p = &tb.problem;
                    let sys = if *tikhonov {
                        AugmentedSystem::tikhonov_from_problem(&f, p)?
                    } else {
                        AugmentedSystem::standard(f.as_ref().clone(), p.y().clone(), p.gamma().clone())?
                    };
                    match &inflation {
                        Some(b) => sys.with_inflation(b.clone()),
                        None => Ok(sys),
                    }
                };
                let initial = self.prior_ensemble(&mut rng)?;
                let run = run_ml_eki(schedule, &builder, initial, config, Some(&mut rng), None)?;
                (run.means, run.schedule_cost, run.work_units)
            }
            Engine::Langevin { config, posterior } => {
                let builder = |level: f64| posterior.at_level(level);
                let initial = self.prior_ensemble(&mut rng)?;
                let run = run_ml_ils(schedule, &builder, initial, config, Some(&mut rng), None)?;
                (run.means, run.schedule_cost, run.work_units)
            }
            Engine::Descent { algorithm, oracle, spec } => {
                let mut state = match algorithm {
                    Algorithm::Agd => DescentState::Accelerated(AgdState::new(DVector::zeros(self.testbed.config.n_x))),
                    _ => DescentState::Plain(GdState::new(DVector::zeros(self.testbed.config.n_x))),
                };
                let mut iterates = vec![state.iterate().clone()];
                for &level in &schedule.levels {
                    state = match state {
                        DescentState::Plain(s) => DescentState::Plain(gd_step(&s, oracle, level, spec).map_err(|e| e.error)?),
                        DescentState::Accelerated(s) => {
                            DescentState::Accelerated(agd_step(&s, oracle, level, spec).map_err(|e| e.error)?)
                        }
                    };
                    if trace {
                        iterates.push(state.iterate().clone());
                    }
                }
                if !trace {
                    iterates.push(state.iterate().clone());
                }
                let cost = schedule.total_cost();
                (iterates, cost, cost)
            }
        };
        let last = iterates.last().expect("at least the initial iterate");
        let error = self.error(last)?;
        let trace = if trace { self.trace(schedule, &iterates)? } else { Vec::new() };
        Ok(RunOutcome {
            error,
            schedule_cost,
            work_units,
            trace,
        })
    }
}
