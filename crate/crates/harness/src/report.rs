//! Text reports for the `schedule` and `forward-check` subcommands, and the
//! least-squares fit they share with the sweep analysis.

use std::fmt::Write as _;

use nalgebra::DVector;

use mlopt::forward::{LeveledForwardMap, SineFemModel};
use mlopt::schedule::{bound_error, multilevel_cost, schedule, single_level_cost, ConvergenceModel, ScheduleKind};

use crate::error::Result;

/// Ordinary least-squares line `y ≈ slope·x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Fits a line; `None` with fewer than two points or constant `x`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LineFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Slope of `ln y` against `ln x`.
pub fn log_log_fit(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleRow {
    pub kind: ScheduleKind,
    pub epsilon: f64,
    pub k: usize,
    pub cost: f64,
    pub closed_form_cost: f64,
    pub bound: f64,
    pub levels: Vec<f64>,
}

pub fn schedule_rows(
    model: &ConvergenceModel<f64>,
    epsilons: &[f64],
    kinds: &[ScheduleKind],
) -> Result<Vec<ScheduleRow>> {
    let mut rows = Vec::new();
    for &kind in kinds {
        for &epsilon in epsilons {
            let s = schedule(model, epsilon, kind)?;
            let closed_form_cost = match kind {
                ScheduleKind::SingleLevel => single_level_cost(model, epsilon)?,
                ScheduleKind::Multilevel => multilevel_cost(model, epsilon)?,
            };
            rows.push(ScheduleRow {
                kind,
                epsilon,
                k: s.iterations(),
                cost: s.total_cost(),
                closed_form_cost,
                bound: bound_error(model, &s.levels)?,
                levels: s.levels,
            });
        }
    }
    Ok(rows)
}

pub fn format_schedule_rows(model: &ConvergenceModel<f64>, rows: &[ScheduleRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# c = {}, alpha = {}, e0 = {}, b = {}",
        model.c(),
        model.alpha(),
        model.e0(),
        model.bias_constant()
    );
    let _ = writeln!(s, "kind epsilon K cost closed_form_cost error_bound levels");
    for r in rows {
        let levels: Vec<String> = r.levels.iter().map(|l| format!("{l:.4e}")).collect();
        let _ = writeln!(
            s,
            "{} {:e} {} {:.6e} {:.6e} {:.6e} [{}]",
            r.kind.as_str(),
            r.epsilon,
            r.k,
            r.cost,
            r.closed_form_cost,
            r.bound,
            levels.join(", ")
        );
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCheck {
    pub reference_level: f64,
    /// `(l, ‖(F − F_l) e₁‖)`.
    pub rows: Vec<(f64, f64)>,
    /// Fitted decay rate, minus the log-log slope.
    pub rate: f64,
}

/// Observation error of the coarse models on the first sine mode against
/// a fine reference.
pub fn forward_check(n_y: usize, levels: &[f64], reference_level: f64) -> Result<ForwardCheck> {
    let model = SineFemModel::<f64>::equispaced(1, n_y)?;
    let e1 = DVector::from_element(1, 1.0);
    let reference = model.evaluate(&e1, reference_level)?;
    let mut rows = Vec::with_capacity(levels.len());
    for &l in levels {
        rows.push((l, (&reference - model.evaluate(&e1, l)?).norm()));
    }
    let (ls, es): (Vec<f64>, Vec<f64>) = rows.iter().copied().unzip();
    let rate = log_log_fit(&ls, &es).map_or(f64::NAN, |f| -f.slope);
    Ok(ForwardCheck {
        reference_level,
        rows,
        rate,
    })
}

pub fn format_forward_check(check: &ForwardCheck) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# reference level {}", check.reference_level);
    let _ = writeln!(s, "level error");
    for (l, e) in &check.rows {
        let _ = writeln!(s, "{l} {e:.6e}");
    }
    let _ = writeln!(s, "fitted rate {:.4}", check.rate);
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_a_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 - 0.5 * x).collect();
        let f = fit_line(&xs, &ys).unwrap();
        assert!((f.slope + 0.5).abs() < 1e-15 && (f.intercept - 2.0).abs() < 1e-15);
        assert!((f.r_squared - 1.0).abs() < 1e-15);
        assert!(fit_line(&[1.0], &[1.0]).is_none());
        assert!(fit_line(&[1.0, 1.0], &[1.0, 2.0]).is_none());
    }

    #[test]
    fn closed_forms_match_schedules() {
        let model = ConvergenceModel::new(0.5, 1.0, 1.0).unwrap();
        let rows = schedule_rows(
            &model,
            &[0.25, 0.0625],
            &[ScheduleKind::Multilevel, ScheduleKind::SingleLevel],
        )
        .unwrap();
        assert_eq!(rows.len(), 4);
        for r in &rows {
            assert!((r.cost - r.closed_form_cost).abs() <= 1e-12 * r.cost);
            assert!(r.bound <= r.epsilon * (1.0 + 1e-12));
        }
        let text = format_schedule_rows(&model, &rows);
        assert_eq!(text.lines().count(), 6);
    }

    #[test]
    fn forward_rate_is_at_least_one() {
        let levels: Vec<f64> = (4..=10).map(|t| 2f64.powi(t)).collect();
        let check = forward_check(15, &levels, 4096.0).unwrap();
        assert!(check.rate >= 1.0, "{}", check.rate);
        assert!(format_forward_check(&check).contains("fitted rate"));
    }
}
