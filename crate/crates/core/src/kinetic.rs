//! Forward solver for the measure flow d/dt mu_t = A*[t, mu_t, gamma] mu_t
//! on the lattice. Explicit time stepping with a stability guard tied to the
//! worst-case jump intensity; the nonlinearity enters only through the
//! population mean inside the destination density.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::measures::{GridMeasure, MeasureCurve};
use crate::model::{apply_adjoint, FeedbackControl, JumpKernelSpec};
use crate::timegrid::linspace;

/// Fraction of the mean holding time that one explicit step may cover.
const STABILITY_FRACTION: f64 = 0.5;
/// Absolute drift of total mass allowed per step.
const MASS_DRIFT_PER_STEP: f64 = 1e-9;
/// Total clipped negative mass allowed over a full solve.
const CLIP_BUDGET: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Integrator {
    Euler,
    Rk4,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KineticSolveConfig {
    pub t_steps: usize,
    pub integrator: Integrator,
    pub clip_negatives: bool,
}

impl Default for KineticSolveConfig {
    fn default() -> Self {
        KineticSolveConfig {
            t_steps: 200,
            integrator: Integrator::Rk4,
            clip_negatives: true,
        }
    }
}

impl KineticSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_steps < 10 {
            return Err(CoreError::invalid(
                "t_steps",
                format!("need at least 10 time steps, got {}", self.t_steps),
            ));
        }
        Ok(())
    }
}

fn check_stability(dt: f64, lambda_max: f64) -> Result<()> {
    if lambda_max <= 0.0 {
        return Ok(());
    }
    let required = STABILITY_FRACTION / lambda_max;
    if dt > required * (1.0 + 1e-12) {
        return Err(CoreError::StabilityGuard { dt, required });
    }
    Ok(())
}

/// d/dt of the weight vector at time `t` under control `gamma`.
fn rhs(
    kernel: &JumpKernelSpec,
    lattice: &crate::grid::Lattice,
    t: f64,
    weights: &[f64],
    gamma: &FeedbackControl,
) -> Result<Vec<f64>> {
    let m = GridMeasure::new(lattice.clone(), weights.to_vec())?;
    apply_adjoint(kernel, t, &m, gamma)
}

/// Advance the weight vector once, without clipping. Returns the new weights.
fn advance(
    kernel: &JumpKernelSpec,
    lattice: &crate::grid::Lattice,
    t: f64,
    dt: f64,
    weights: &[f64],
    gamma: &FeedbackControl,
    integrator: Integrator,
) -> Result<Vec<f64>> {
    let n = weights.len();
    match integrator {
        Integrator::Euler => {
            let k1 = rhs(kernel, lattice, t, weights, gamma)?;
            let mut out = weights.to_vec();
            for i in 0..n {
                out[i] += dt * k1[i];
            }
            Ok(out)
        }
        Integrator::Rk4 => {
            let k1 = rhs(kernel, lattice, t, weights, gamma)?;
            let mut stage = vec![0.0; n];
            for i in 0..n {
                stage[i] = weights[i] + 0.5 * dt * k1[i];
            }
            let k2 = rhs(kernel, lattice, t + 0.5 * dt, &stage, gamma)?;
            for i in 0..n {
                stage[i] = weights[i] + 0.5 * dt * k2[i];
            }
            let k3 = rhs(kernel, lattice, t + 0.5 * dt, &stage, gamma)?;
            for i in 0..n {
                stage[i] = weights[i] + dt * k3[i];
            }
            let k4 = rhs(kernel, lattice, t + dt, &stage, gamma)?;
            let mut out = weights.to_vec();
            for i in 0..n {
                out[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            Ok(out)
        }
    }
}

/// Zero out negative weights and rescale back to the pre-clip total mass.
/// Returns the amount of mass clipped.
fn clip_negatives(weights: &mut [f64]) -> f64 {
    let mass_before: f64 = weights.iter().sum();
    let mut clipped = 0.0;
    for w in weights.iter_mut() {
        if *w < 0.0 {
            clipped += -*w;
            *w = 0.0;
        }
    }
    if clipped > 0.0 {
        let mass_after: f64 = weights.iter().sum();
        if mass_after > 0.0 {
            let scale = mass_before / mass_after;
            for w in weights.iter_mut() {
                *w *= scale;
            }
        }
    }
    clipped
}

/// One explicit step of the measure flow. The stability guard rejects steps
/// longer than half the shortest mean holding time.
pub fn kinetic_step(
    m: &GridMeasure,
    t: f64,
    dt: f64,
    gamma: &FeedbackControl,
    kernel: &JumpKernelSpec,
    config: &KineticSolveConfig,
) -> Result<GridMeasure> {
    kernel.validate(gamma.control_set())?;
    check_stability(dt, kernel.lambda_max(gamma.control_set()))?;
    let mut weights = advance(
        kernel,
        m.lattice(),
        t,
        dt,
        m.weights(),
        gamma,
        config.integrator,
    )?;
    if config.clip_negatives {
        let clipped = clip_negatives(&mut weights);
        if clipped > CLIP_BUDGET {
            return Err(CoreError::ClippedMassBudget {
                total: clipped,
                budget: CLIP_BUDGET,
            });
        }
    }
    GridMeasure::new(m.lattice().clone(), weights)
}

/// Solve the measure flow on [0, T] from `mu0` and return the full curve,
/// sampled on the uniform grid with `config.t_steps` steps. `gamma` is read
/// by left lookup on its own time grid, so the control and solver grids need
/// not coincide.
pub fn solve_kinetic(
    mu0: &GridMeasure,
    gamma: &FeedbackControl,
    kernel: &JumpKernelSpec,
    config: &KineticSolveConfig,
    t_end: f64,
) -> Result<MeasureCurve> {
    config.validate()?;
    kernel.validate(gamma.control_set())?;
    if t_end < 0.0 || !t_end.is_finite() {
        return Err(CoreError::invalid(
            "t_end",
            format!("horizon must be finite and nonnegative, got {t_end}"),
        ));
    }
    let mass = mu0.total_mass();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(CoreError::invalid(
            "mu0",
            format!("initial measure must have unit mass, got {mass}"),
        ));
    }
    if mu0.weights().iter().any(|&w| w < -1e-12) {
        return Err(CoreError::invalid(
            "mu0",
            "initial measure must have nonnegative weights",
        ));
    }
    if t_end == 0.0 {
        return MeasureCurve::new(vec![0.0], vec![mu0.clone()]);
    }
    let times = linspace(t_end, config.t_steps);
    let dt = t_end / config.t_steps as f64;
    check_stability(dt, kernel.lambda_max(gamma.control_set()))?;

    let lattice = mu0.lattice().clone();
    let mut weights = mu0.weights().to_vec();
    let mut snapshots = Vec::with_capacity(times.len());
    snapshots.push(mu0.clone());
    let mut clipped_total = 0.0;
    for step in 0..config.t_steps {
        let mass_before: f64 = weights.iter().sum();
        weights = advance(
            kernel,
            &lattice,
            times[step],
            dt,
            &weights,
            gamma,
            config.integrator,
        )?;
        if config.clip_negatives {
            clipped_total += clip_negatives(&mut weights);
            if clipped_total > CLIP_BUDGET {
                return Err(CoreError::ClippedMassBudget {
                    total: clipped_total,
                    budget: CLIP_BUDGET,
                });
            }
        }
        let mass_after: f64 = weights.iter().sum();
        if (mass_after - mass_before).abs() > MASS_DRIFT_PER_STEP {
            return Err(CoreError::NonFinite(format!(
                "mass drifted by {:.3e} in one step at t={}",
                (mass_after - mass_before).abs(),
                times[step]
            )));
        }
        snapshots.push(GridMeasure::new(lattice.clone(), weights.clone())?);
    }
    let final_mass = snapshots.last().unwrap().total_mass();
    if (final_mass - mass).abs() > 1e-7 {
        return Err(CoreError::NonFinite(format!(
            "mass drifted by {:.3e} over the horizon",
            (final_mass - mass).abs()
        )));
    }
    MeasureCurve::new(times, snapshots)
}

/// Ratio of total-variation distances tv(mu_t, eta_t) / tv(mu_0, eta_0) along
/// two solves started from distinct initial measures, one entry per grid time.
/// Quantifies the continuous dependence of the flow on its initial condition.
pub fn initial_sensitivity_probe(
    mu0: &GridMeasure,
    eta0: &GridMeasure,
    gamma: &FeedbackControl,
    kernel: &JumpKernelSpec,
    config: &KineticSolveConfig,
    t_end: f64,
) -> Result<Vec<f64>> {
    let d0 = mu0.tv_distance(eta0)?;
    if d0 == 0.0 {
        return Err(CoreError::IdenticalInputs);
    }
    let mu = solve_kinetic(mu0, gamma, kernel, config, t_end)?;
    let eta = solve_kinetic(eta0, gamma, kernel, config, t_end)?;
    mu.snapshots()
        .iter()
        .zip(eta.snapshots())
        .map(|(a, b)| Ok(a.tv_distance(b)? / d0))
        .collect()
}
