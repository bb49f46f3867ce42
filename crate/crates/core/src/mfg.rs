//! Mean-field consistency as a damped Picard iteration of the map
//! T: curve -> best-response curve (backward value sweep against the frozen
//! curve, forward measure flow under the extracted feedback law). Convergence
//! is measured in sup-over-time total variation between successive iterates;
//! non-convergence is a reported outcome carrying the residual history, never
//! a panic or a silently returned artifact.

use std::io::Write as IoWrite;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::hjb::{solve_hjb, ValueGrid};
use crate::kinetic::solve_kinetic;
use crate::measures::MeasureCurve;
use crate::model::FeedbackControl;
use crate::scenario::ScenarioConfig;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct FixedPointConfig {
    /// Picard damping in (0, 1]: 1 replaces the iterate, smaller blends.
    pub damping: f64,
    pub max_iters: usize,
    /// Convergence threshold on sup-TV between successive iterates.
    pub tol: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            damping: 0.5,
            max_iters: 50,
            tol: 1e-6,
        }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(CoreError::invalid("damping", "must lie in (0, 1]"));
        }
        if self.max_iters == 0 {
            return Err(CoreError::invalid("max_iters", "must be at least 1"));
        }
        if !(self.tol > 0.0) {
            return Err(CoreError::invalid("tol", "must be > 0"));
        }
        Ok(())
    }
}

/// One row of the iteration log.
#[derive(Clone, Copy, Debug)]
pub struct ResidualEntry {
    pub iter: usize,
    pub residual: f64,
    pub theta: f64,
}

/// Fixed-point output: the equilibrium curve, the feedback law that is a best
/// response to it, the value grid behind that law, and the iteration record.
#[derive(Clone, Debug)]
pub struct EquilibriumSolution {
    pub curve: MeasureCurve,
    pub policy: FeedbackControl,
    pub value: ValueGrid,
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub history: Vec<ResidualEntry>,
}

impl EquilibriumSolution {
    pub fn write_residual_csv<W: IoWrite>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "iter,residual,theta")?;
        for e in &self.history {
            writeln!(out, "{},{},{}", e.iter, e.residual, e.theta)?;
        }
        Ok(())
    }
}

/// The best-response map T: solve the backward sweep against `curve`, then
/// push the scenario's initial measure forward under the extracted feedback.
/// The output always starts at the scenario initial measure exactly.
pub fn best_response(curve: &MeasureCurve, scenario: &ScenarioConfig) -> Result<MeasureCurve> {
    let mu0 = scenario.initial_measure()?;
    if curve.first().tv_distance(&mu0)? > 1e-9 {
        return Err(CoreError::invalid(
            "curve",
            "input curve must start at the scenario initial measure",
        ));
    }
    let vg = solve_hjb(curve, &scenario.cost, &scenario.kernel, &scenario.control)?;
    let gamma = vg.policy()?;
    solve_kinetic(
        &mu0,
        &gamma,
        &scenario.kernel,
        &scenario.kinetic,
        scenario.horizon,
    )
}

/// Damped Picard iteration curve <- (1 - theta) curve + theta T(curve),
/// stopping when successive iterates are within `cfg.tol` in sup-TV. Two
/// residual increases halve theta (oscillation damping). On max_iters the
/// best iterate seen is returned flagged as non-converged.
pub fn solve_equilibrium(
    scenario: &ScenarioConfig,
    cfg: &FixedPointConfig,
) -> Result<EquilibriumSolution> {
    scenario.validate()?;
    cfg.validate()?;

    let mu0 = scenario.initial_measure()?;
    let mut curve = MeasureCurve::constant(scenario.times(), mu0)?;
    let mut theta = cfg.damping;
    let mut history = Vec::new();
    let mut prev_residual = f64::INFINITY;
    let mut increases = 0usize;
    let mut best: Option<(f64, MeasureCurve)> = None;
    let mut converged = false;

    for iter in 1..=cfg.max_iters {
        let response = best_response(&curve, scenario)?;
        let next = curve.convex_combine(&response, theta)?;
        let residual = next.sup_tv(&curve)?;
        history.push(ResidualEntry {
            iter,
            residual,
            theta,
        });
        if residual > prev_residual {
            increases += 1;
            if increases >= 2 {
                theta *= 0.5;
                increases = 0;
            }
        }
        prev_residual = residual;
        curve = next;
        if best.as_ref().is_none_or(|(r, _)| residual < *r) {
            best = Some((residual, curve.clone()));
        }
        if residual <= cfg.tol {
            converged = true;
            break;
        }
    }

    let (residual, final_curve) = if converged {
        let last = history.last().unwrap();
        (last.residual, curve)
    } else {
        best.expect("max_iters >= 1 guarantees at least one iterate")
    };

    let value = solve_hjb(
        &final_curve,
        &scenario.cost,
        &scenario.kernel,
        &scenario.control,
    )?;
    let policy = value.policy()?;
    Ok(EquilibriumSolution {
        curve: final_curve,
        policy,
        value,
        residual,
        iterations: history.len(),
        converged,
        history,
    })
}
