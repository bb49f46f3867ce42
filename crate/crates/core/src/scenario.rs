//! Scenario bundle: box, discretization, model parameters, and initial data.
//! One validated struct travels through every solver and simulator entry
//! point, and serializes round-trip for config files.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::grid::Lattice;
use crate::kinetic::KineticSolveConfig;
use crate::measures::GridMeasure;
use crate::model::{ControlSet, CostSpec, JumpKernelSpec};
use crate::timegrid::linspace;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitialMeasureSpec {
    /// Gaussian density truncated to the box and renormalized on the lattice.
    Gaussian { center: Vec<f64>, std: f64 },
    /// Uniform probability on the lattice.
    Uniform,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub box_min: Vec<f64>,
    pub box_max: Vec<f64>,
    pub nodes_per_axis: usize,
    pub horizon: f64,
    pub kernel: JumpKernelSpec,
    pub cost: CostSpec,
    pub control: ControlSet,
    pub kinetic: KineticSolveConfig,
    pub init: InitialMeasureSpec,
    /// Start state of the tagged player in simulations.
    pub x0: Vec<f64>,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.box_min.is_empty() || self.box_min.len() != self.box_max.len() {
            return Err(CoreError::invalid(
                "box",
                "box_min and box_max must share a positive dimension",
            ));
        }
        for (lo, hi) in self.box_min.iter().zip(&self.box_max) {
            if !lo.is_finite() || !hi.is_finite() || lo >= hi {
                return Err(CoreError::invalid("box", "need finite box_min < box_max"));
            }
        }
        if self.nodes_per_axis < 2 {
            return Err(CoreError::invalid("nodes_per_axis", "need at least 2 nodes"));
        }
        if !self.horizon.is_finite() || self.horizon < 0.0 {
            return Err(CoreError::invalid("horizon", "must be finite and >= 0"));
        }
        self.control.validate()?;
        self.kernel.validate(&self.control)?;
        self.cost.validate()?;
        self.kinetic.validate()?;
        if self.x0.len() != self.box_min.len() {
            return Err(CoreError::invalid("x0", "dimension mismatch with the box"));
        }
        for ((x, lo), hi) in self.x0.iter().zip(&self.box_min).zip(&self.box_max) {
            if x < lo || x > hi {
                return Err(CoreError::invalid("x0", "start state must lie in the box"));
            }
        }
        match &self.init {
            InitialMeasureSpec::Gaussian { center, std } => {
                if center.len() != self.box_min.len() {
                    return Err(CoreError::invalid(
                        "init.center",
                        "dimension mismatch with the box",
                    ));
                }
                if !std.is_finite() || *std <= 0.0 {
                    return Err(CoreError::invalid("init.std", "must be finite and > 0"));
                }
            }
            InitialMeasureSpec::Uniform => {}
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.box_min.len()
    }

    pub fn lattice(&self) -> Result<Lattice> {
        Lattice::new(
            self.box_min.clone(),
            self.box_max.clone(),
            self.nodes_per_axis,
        )
    }

    pub fn initial_measure(&self) -> Result<GridMeasure> {
        let lattice = self.lattice()?;
        match &self.init {
            InitialMeasureSpec::Gaussian { center, std } => {
                let center = center.clone();
                let inv2s2 = 1.0 / (2.0 * std * std);
                GridMeasure::from_density(lattice, move |x| {
                    let dist2: f64 = x
                        .iter()
                        .zip(&center)
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (-dist2 * inv2s2).exp()
                })
            }
            InitialMeasureSpec::Uniform => Ok(GridMeasure::uniform(lattice)),
        }
    }

    /// Uniform solver time grid over the horizon.
    pub fn times(&self) -> Vec<f64> {
        linspace(self.horizon, self.kinetic.t_steps)
    }
}

/// Coupled reference scenario: mean-pulled destinations and congestion costs.
pub fn default_scenario() -> ScenarioConfig {
    ScenarioConfig {
        box_min: vec![0.0],
        box_max: vec![1.0],
        nodes_per_axis: 101,
        horizon: 1.0,
        kernel: JumpKernelSpec {
            lambda0: 1.0,
            lambda1: 2.0,
            kappa: 0.5,
            sigma: 0.15,
        },
        cost: CostSpec {
            a: 0.7,
            c_u: 1.0,
            beta: 0.5,
            beta_t: 0.25,
        },
        control: ControlSet {
            u_min: 0.0,
            u_max: 1.0,
            resolution: 101,
        },
        kinetic: KineticSolveConfig::default(),
        init: InitialMeasureSpec::Gaussian {
            center: vec![0.3],
            std: 0.1,
        },
        x0: vec![0.5],
    }
}

/// Same box and discretization with every mean-field coupling switched off:
/// destinations ignore the population and costs carry no congestion term.
pub fn decoupled_scenario() -> ScenarioConfig {
    let mut s = default_scenario();
    s.kernel.kappa = 0.0;
    s.cost.beta = 0.0;
    s.cost.beta_t = 0.0;
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_scenarios_validate() {
        default_scenario().validate().unwrap();
        decoupled_scenario().validate().unwrap();
    }

    #[test]
    fn initial_measure_is_a_probability() {
        let m = default_scenario().initial_measure().unwrap();
        assert!((m.total_mass() - 1.0).abs() < 1e-12);
        assert!(m.weights().iter().all(|&w| w >= 0.0));
        let mean = m.mean().unwrap();
        assert!((mean[0] - 0.3).abs() < 1e-3, "mean = {}", mean[0]);
    }

    #[test]
    fn validation_rejects_bad_fields() {
        let mut s = default_scenario();
        s.x0 = vec![2.0];
        assert!(s.validate().is_err());
        let mut s = default_scenario();
        s.box_max = vec![0.0];
        assert!(s.validate().is_err());
        let mut s = default_scenario();
        s.init = InitialMeasureSpec::Gaussian {
            center: vec![0.3, 0.3],
            std: 0.1,
        };
        assert!(s.validate().is_err());
        let mut s = default_scenario();
        s.horizon = f64::NAN;
        assert!(s.validate().is_err());
    }
}
