//! One TOML document drives every subcommand: the scenario itself, the
//! fixed-point knobs, and the experiment ladders. The parsed struct is
//! re-serialized and hashed so a results directory can be tied to the exact
//! inputs that produced it, independent of file formatting.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use jumpmfg::{default_scenario, FixedPointConfig, ScenarioConfig};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub experiments: ExperimentSection,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub damping: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let c = FixedPointConfig::default();
        SolverSection {
            damping: c.damping,
            max_iters: c.max_iters,
            tol: c.tol,
        }
    }
}

impl SolverSection {
    pub fn fixed_point(&self) -> FixedPointConfig {
        FixedPointConfig {
            damping: self.damping,
            max_iters: self.max_iters,
            tol: self.tol,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    /// System sizes for the gap ladders.
    pub n_list: Vec<usize>,
    /// Replica count a ladder point starts from; doubled until the standard
    /// error is small next to the gap or `max_reps` is reached.
    pub base_reps: usize,
    pub max_reps: usize,
    /// Constant control level used by the kinetic, hjb, and simulate
    /// subcommands, which probe the dynamics without solving the game.
    pub control_level: f64,
    pub sim_players: usize,
    pub sim_reps: usize,
    /// Sample pairs drawn by the structural-hypothesis probe.
    pub probe_samples: usize,
    /// Projection resolutions, kernel radii, and dimensions swept by the
    /// smoothing-bound report.
    pub bound_js: Vec<usize>,
    pub bound_deltas: Vec<f64>,
    pub bound_dims: Vec<usize>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            n_list: vec![10, 20, 40, 80],
            base_reps: 400,
            max_reps: 25600,
            control_level: 0.4,
            sim_players: 20,
            sim_reps: 200,
            probe_samples: 2000,
            bound_js: vec![4, 8, 16],
            bound_deltas: vec![0.1, 0.05, 0.01],
            bound_dims: vec![1, 2],
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scenario: default_scenario(),
            solver: SolverSection::default(),
            experiments: ExperimentSection::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.scenario.validate().map_err(|e| e.to_string())?;
        self.solver
            .fixed_point()
            .validate()
            .map_err(|e| e.to_string())?;
        let e = &self.experiments;
        if e.n_list.is_empty() || e.n_list.contains(&0) {
            return Err("experiments.n_list needs positive entries".into());
        }
        if e.base_reps < 2 || e.max_reps < e.base_reps {
            return Err("experiments replica budget needs 2 <= base_reps <= max_reps".into());
        }
        if !self.scenario.control.contains(e.control_level) {
            return Err("experiments.control_level lies outside the control set".into());
        }
        if e.sim_players == 0 || e.sim_reps < 2 {
            return Err("experiments.sim_players/sim_reps too small".into());
        }
        if e.probe_samples < 100 {
            return Err("experiments.probe_samples must be at least 100".into());
        }
        if e.bound_js.is_empty() || e.bound_deltas.is_empty() || e.bound_dims.is_empty() {
            return Err("experiments bound sweeps must be nonempty".into());
        }
        if e.bound_dims.iter().any(|&d| d == 0 || d > 2) {
            return Err("experiments.bound_dims supports dimensions 1 and 2".into());
        }
        Ok(())
    }

    /// Hash of the canonical serialization of the parsed config. Two files
    /// that parse to the same values hash identically regardless of
    /// formatting or comments.
    pub fn canonical_sha256(&self) -> String {
        let canonical = toml::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        let digest = hasher.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn load(path: Option<&std::path::Path>) -> Result<RunConfig, String> {
    let cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| format!("cannot read {}: {e}", p.display()))?;
            toml::from_str(&text).map_err(|e| format!("cannot parse {}: {e}", p.display()))?
        }
        None => RunConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}
