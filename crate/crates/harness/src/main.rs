use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mlopt_harness::config::{ExperimentConfig, MethodKind, ScheduleChoice};
use mlopt_harness::error::{HarnessError, Result};
use mlopt_harness::plot::emit_plot;
use mlopt_harness::report::{format_forward_check, format_schedule_rows, forward_check, schedule_rows};
use mlopt_harness::runner::{MethodRunner, RunOutcome};
use mlopt_harness::sweep::{read_csv, run_sweep, write_csv};
use mlopt_harness::testbed::{generate_problem, resolve_method};

#[derive(Parser)]
#[command(name = "mlopt", version, about = "Multilevel optimization experiments on an elliptic inverse problem")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the sweep seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 0 uses one per core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
}

#[derive(Args, Clone)]
struct SingleRun {
    #[command(flatten)]
    common: Common,
    /// Tolerance; defaults to the last entry of the sweep grid.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Schedule kind; defaults to the first configured kind.
    #[arg(long, value_enum)]
    schedule: Option<Kind>,
    /// Replicate index within the seed's stream family.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Ml,
    Sl,
}

impl From<Kind> for ScheduleChoice {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Ml => ScheduleChoice::Ml,
            Kind::Sl => ScheduleChoice::Sl,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print level schedules and costs over the tolerance grid.
    Schedule(Common),
    /// Report the finite element convergence rate.
    ForwardCheck {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        min_exponent: i32,
        #[arg(long, default_value_t = 12)]
        max_exponent: i32,
        #[arg(long, default_value_t = 14)]
        reference_exponent: i32,
    },
    /// Single multilevel gradient descent run (gd or agd).
    Descent(SingleRun),
    /// Single ensemble Kalman inversion run (teki or eki).
    Eki(SingleRun),
    /// Single interacting Langevin sampler run.
    Ils(SingleRun),
    /// Full replicated sweep; writes CSV and SVG.
    Sweep(Common),
    /// Render a records CSV as SVG.
    Plot {
        #[command(flatten)]
        common: Common,
        /// Records CSV; defaults to the configured output path.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

enum Failure {
    Config(HarnessError),
    Divergence(HarnessError),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Self::Config(e)
    }
}

fn load(common: &Common, default_kind: MethodKind) -> Result<ExperimentConfig> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::for_method(default_kind),
    };
    if let Some(seed) = common.seed {
        config.sweep.seed = seed;
    }
    if let Some(out) = &common.out {
        config.output.dir = out.clone();
    }
    Ok(config)
}

fn schedule_report(common: &Common) -> Result<String> {
    let config = load(common, MethodKind::Teki)?;
    let settings = config.settings();
    let model = match (settings.c.value(), settings.e0.value()) {
        (Some(c), Some(e0)) => mlopt::ConvergenceModel::with_bias(c, settings.alpha, e0, settings.bias_constant)
            .map_err(|e| HarnessError::config("method", e.to_string()))?,
        _ => {
            let testbed = generate_problem(&config.problem)?;
            resolve_method(&testbed, &settings)?.convergence_model()?
        }
    };
    let kinds: Vec<_> = settings.schedules.iter().map(|s| s.kind()).collect();
    let rows = schedule_rows(&model, &config.sweep.epsilons, &kinds)?;
    Ok(format_schedule_rows(&model, &rows))
}

fn format_trace(outcome: &RunOutcome) -> String {
    let mut s = String::from("iteration,level,cost,error\n");
    for p in &outcome.trace {
        let _ = writeln!(s, "{},{},{},{}", p.iteration, p.level, p.cost, p.error);
    }
    s
}

fn single_run(run: &SingleRun, allowed: &[MethodKind], out: &mut String) -> Result<(), Failure> {
    let config = load(&run.common, allowed[0])?;
    let settings = config.settings();
    if !allowed.contains(&settings.kind) {
        let names: Vec<&str> = allowed.iter().map(|k| k.as_str()).collect();
        return Err(HarnessError::config(
            "method.kind",
            format!("this subcommand runs {}, not {}", names.join(" or "), settings.kind),
        )
        .into());
    }
    let epsilon = run.epsilon.unwrap_or(*config.sweep.epsilons.last().expect("validated nonempty"));
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(HarnessError::config("--epsilon", "must be positive").into());
    }
    let choice = run.schedule.map(ScheduleChoice::from).unwrap_or(settings.schedules[0]);
    let testbed = generate_problem(&config.problem)?;
    let method = resolve_method(&testbed, &settings)?;
    let runner = MethodRunner::new(&testbed, method)?;
    let schedule = runner.schedule(epsilon, choice.kind())?;
    let outcome = match runner.run(&schedule, config.sweep.seed, run.replicate, true) {
        Ok(o) => o,
        Err(e) if e.is_divergence() => return Err(Failure::Divergence(e)),
        Err(e) => return Err(e.into()),
    };
    let trace = format_trace(&outcome);
    let _ = writeln!(
        out,
        "# method {} schedule {} epsilon {} K {} c {} e0 {}",
        settings.kind,
        choice.as_str(),
        epsilon,
        schedule.iterations(),
        runner.method().c,
        runner.method().e0
    );
    out.push_str(&trace);
    let _ = writeln!(
        out,
        "# final error {:e} schedule_cost {} work_units {}",
        outcome.error, outcome.schedule_cost, outcome.work_units
    );
    if run.common.out.is_some() {
        let dir = &config.output.dir;
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        let path = dir.join(format!("{}_{}_trace.csv", settings.kind, choice.as_str()));
        fs::write(&path, trace).map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(())
}

fn sweep(common: &Common, out: &mut String) -> Result<()> {
    let config = load(common, MethodKind::Teki)?;
    let records = run_sweep(&config, common.workers)?;
    let csv_path = config.csv_path();
    write_csv(&records, &csv_path)?;
    emit_plot(&records, &config.svg_path())?;
    let _ = writeln!(out, "method algorithm epsilon K schedule_cost error_mean error_stderr failures");
    for r in &records {
        let _ = writeln!(
            out,
            "{} {} {:e} {} {:.4e} {:.4e} {:.2e} {}",
            r.method, r.algorithm, r.epsilon, r.k, r.schedule_cost, r.error_mean, r.error_stderr, r.failures
        );
    }
    let _ = writeln!(out, "wrote {}", csv_path.display());
    Ok(())
}

fn plot(common: &Common, input: Option<&Path>, out: &mut String) -> Result<()> {
    let config = load(common, MethodKind::Teki)?;
    let input = input.map(Path::to_path_buf).unwrap_or_else(|| config.csv_path());
    let records = read_csv(&input)?;
    let path = config.svg_path();
    if emit_plot(&records, &path)? {
        let _ = writeln!(out, "wrote {}", path.display());
    }
    Ok(())
}

fn dispatch(cli: &Cli, out: &mut String) -> Result<(), Failure> {
    match &cli.command {
        Command::Schedule(common) => out.push_str(&schedule_report(common)?),
        Command::ForwardCheck {
            common,
            min_exponent,
            max_exponent,
            reference_exponent,
        } => {
            let config = load(common, MethodKind::Teki)?;
            if !(0 <= *min_exponent && min_exponent <= max_exponent && max_exponent < reference_exponent) {
                return Err(HarnessError::config(
                    "--min-exponent",
                    "need 0 <= min <= max < reference exponent",
                )
                .into());
            }
            let levels: Vec<f64> = (*min_exponent..=*max_exponent).map(|t| 2f64.powi(t)).collect();
            let check = forward_check(config.problem.n_y, &levels, 2f64.powi(*reference_exponent))?;
            out.push_str(&format_forward_check(&check));
        }
        Command::Descent(run) => single_run(run, &[MethodKind::Gd, MethodKind::Agd], out)?,
        Command::Eki(run) => single_run(run, &[MethodKind::Teki, MethodKind::Eki], out)?,
        Command::Ils(run) => single_run(run, &[MethodKind::Ils], out)?,
        Command::Sweep(common) => sweep(common, out)?,
        Command::Plot { common, input } => plot(common, input.as_deref(), out)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = String::new();
    let result = dispatch(&cli, &mut out);
    print!("{out}");
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Divergence(e)) => {
            eprintln!("diverged: {e}");
            ExitCode::from(2)
        }
    }
}
