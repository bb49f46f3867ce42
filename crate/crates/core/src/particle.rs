//! Exact stochastic simulation of the n-player jump system, the tagged
//! deviator variant, and the single limit player driven by a frozen measure
//! curve. Events are generated by uniformization: candidates arrive at rate
//! n * lambda_max, a uniformly chosen player accepts with probability
//! lambda(gamma(t, X)) / lambda_max, and accepted jumps draw their destination
//! from the discrete node law q(. | x, mean) * cellweight. States live on
//! lattice nodes throughout, so the simulator and the deterministic solvers
//! share one discretized law.
//!
//! Every candidate event consumes a fixed quadruple of draws (holding time,
//! player, acceptance, destination) whether or not it is accepted. Paired
//! experiment arms that share a seed therefore stay aligned draw-for-draw no
//! matter where their trajectories diverge, which is what makes common random
//! number comparisons exact.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write as IoWrite;

use crate::error::{CoreError, Result};
use crate::grid::Lattice;
use crate::measures::{EmpiricalMeasure, MeasureCurve};
use crate::model::FeedbackControl;
use crate::rng::{stream, PURPOSE_LIMIT, PURPOSE_PLAYERS};
use crate::scenario::ScenarioConfig;
use crate::timegrid::floor_index;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum InitSampler {
    /// Independent draws from the initial measure per player.
    Iid,
    /// Inverse-CDF at jittered quantiles (i + U_i) / n: the empirical start
    /// tracks the initial measure at O(1/n) in pairings by construction.
    Stratified,
    /// Fixed node indices, one per player. Draws are still consumed so that
    /// runs with different samplers share downstream randomness.
    Fixed { nodes: Vec<usize> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_players: usize,
    pub reps: usize,
    pub seed: u64,
    /// Snapshot cadence in time units.
    pub record_dt: f64,
    pub sampler: InitSampler,
    /// Keep the tagged player's absolute jump times in each record.
    pub record_jump_times: bool,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_players == 0 {
            return Err(CoreError::invalid("n_players", "need at least one player"));
        }
        if self.reps == 0 {
            return Err(CoreError::invalid("reps", "need at least one replica"));
        }
        if !self.record_dt.is_finite() || self.record_dt <= 0.0 {
            return Err(CoreError::invalid("record_dt", "must be finite and > 0"));
        }
        if let InitSampler::Fixed { nodes } = &self.sampler {
            if nodes.len() != self.n_players {
                return Err(CoreError::invalid(
                    "sampler",
                    "fixed sampler needs one node per player",
                ));
            }
        }
        Ok(())
    }
}

/// One replica's sampled path data. States are lattice node indices; player 0
/// is the tagged player where that distinction exists.
#[derive(Clone, Debug, PartialEq)]
pub struct PathRecord {
    /// Snapshot times, from 0 to the horizon inclusive.
    pub times: Vec<f64>,
    /// Node index per (snapshot time, player).
    pub snapshots: Vec<Vec<u32>>,
    /// Integral of the running payoff per player.
    pub running_payoffs: Vec<f64>,
    /// Running integral plus terminal payoff per player.
    pub total_payoffs: Vec<f64>,
    pub jump_counts: Vec<u64>,
    /// Absolute jump times of player 0, when recording was requested.
    pub tagged_jump_times: Option<Vec<f64>>,
}

impl PathRecord {
    pub fn n_players(&self) -> usize {
        self.jump_counts.len()
    }

    /// Empirical measure of all players at snapshot index `idx`.
    pub fn empirical_at(&self, idx: usize, lattice: &Lattice) -> EmpiricalMeasure {
        let d = lattice.dim();
        let mut points = Vec::with_capacity(self.snapshots[idx].len() * d);
        for &node in &self.snapshots[idx] {
            points.extend_from_slice(&lattice.node_coords(node as usize));
        }
        EmpiricalMeasure::new(d, points).expect("snapshot nodes lie in the box")
    }

    pub fn terminal_empirical(&self, lattice: &Lattice) -> EmpiricalMeasure {
        self.empirical_at(self.snapshots.len() - 1, lattice)
    }

    pub fn tagged_terminal_node(&self) -> u32 {
        *self.snapshots.last().expect("at least one snapshot").first().expect("player 0")
    }
}

enum Coupling<'a> {
    /// Mean of the live empirical measure (the n-player system).
    Empirical,
    /// Frozen curve: barycenters precomputed per snapshot.
    Curve {
        times: &'a [f64],
        means: Vec<Vec<f64>>,
    },
}

struct Engine<'a> {
    scenario: &'a ScenarioConfig,
    lattice: Lattice,
    /// Node coordinates, flattened (node * dim + axis).
    coords: Vec<f64>,
    cellw: Vec<f64>,
    /// Per-node control reward factor sum_a (a - x_a).
    reward_sum: Vec<f64>,
    /// Initial-measure CDF over nodes.
    init_cdf: Vec<f64>,
    gamma: &'a FeedbackControl,
    gamma_tilde: &'a FeedbackControl,
    /// Union of the two policies' time grids: running payoffs are exact
    /// because the integrand is piecewise constant between these times.
    breakpoints: Vec<f64>,
    record_times: Vec<f64>,
    coupling: Coupling<'a>,
    cfg: &'a SimConfig,
    x0_override: Option<usize>,
    lambda_max: f64,
    purpose: u16,
}

fn merge_sorted(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len().max(b.len()));
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let v = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) if x < y => {
                i += 1;
                x
            }
            (Some(&x), Some(&y)) if y < x => {
                j += 1;
                y
            }
            (Some(&x), Some(_)) => {
                i += 1;
                j += 1;
                x
            }
            (Some(&x), None) => {
                i += 1;
                x
            }
            (None, Some(&y)) => {
                j += 1;
                y
            }
            (None, None) => unreachable!(),
        };
        if out.last().is_none_or(|&last| v > last) {
            out.push(v);
        }
    }
    out
}

fn record_grid(horizon: f64, record_dt: f64) -> Vec<f64> {
    let mut times = vec![0.0];
    let mut k = 1usize;
    loop {
        let t = k as f64 * record_dt;
        if t >= horizon - 1e-12 * horizon.max(1.0) {
            break;
        }
        times.push(t);
        k += 1;
    }
    if horizon > 0.0 {
        times.push(horizon);
    }
    times
}

/// Nearest lattice node to a point inside the box.
pub fn nearest_node(lattice: &Lattice, x: &[f64]) -> Result<usize> {
    if !lattice.contains(x) {
        return Err(CoreError::AtomOutsideBox { coord: x.to_vec() });
    }
    let mut multi = vec![0usize; lattice.dim()];
    for a in 0..lattice.dim() {
        let h = lattice.spacing(a);
        let idx = if h == 0.0 {
            0
        } else {
            (((x[a] - lattice.min()[a]) / h).round() as isize)
                .clamp(0, lattice.nodes_per_axis() as isize - 1) as usize
        };
        multi[a] = idx;
    }
    Ok(lattice.flat_index(&multi))
}

impl<'a> Engine<'a> {
    fn new(
        scenario: &'a ScenarioConfig,
        gamma: &'a FeedbackControl,
        gamma_tilde: &'a FeedbackControl,
        coupling: Coupling<'a>,
        cfg: &'a SimConfig,
        x0_override: Option<usize>,
        purpose: u16,
    ) -> Result<Self> {
        scenario.validate()?;
        cfg.validate()?;
        let lattice = scenario.lattice()?;
        if gamma.lattice() != &lattice || gamma_tilde.lattice() != &lattice {
            return Err(CoreError::LatticeMismatch);
        }
        let n = lattice.n_nodes();
        let d = lattice.dim();
        let mut coords = vec![0.0; n * d];
        let mut cellw = vec![0.0; n];
        let mut reward_sum = vec![0.0; n];
        for k in 0..n {
            lattice.write_coords(k, &mut coords[k * d..(k + 1) * d]);
            cellw[k] = lattice.cell_weight(k);
            reward_sum[k] = coords[k * d..(k + 1) * d]
                .iter()
                .map(|&xa| scenario.cost.a - xa)
                .sum();
        }
        let mu0 = scenario.initial_measure()?;
        let mut init_cdf = vec![0.0; n];
        let mut acc = 0.0;
        for (k, w) in mu0.weights().iter().enumerate() {
            acc += w;
            init_cdf[k] = acc;
        }
        if let InitSampler::Fixed { nodes } = &cfg.sampler {
            if let Some(&bad) = nodes.iter().find(|&&k| k >= n) {
                return Err(CoreError::invalid(
                    "sampler",
                    format!("fixed node {bad} outside the lattice"),
                ));
            }
        }
        Ok(Engine {
            scenario,
            lattice,
            coords,
            cellw,
            reward_sum,
            init_cdf,
            gamma,
            gamma_tilde,
            breakpoints: merge_sorted(gamma.times(), gamma_tilde.times()),
            record_times: record_grid(scenario.horizon, cfg.record_dt),
            coupling,
            cfg,
            x0_override,
            lambda_max: scenario.kernel.lambda_max(&scenario.control),
            purpose,
        })
    }

    fn node_coords(&self, node: usize) -> &[f64] {
        let d = self.lattice.dim();
        &self.coords[node * d..(node + 1) * d]
    }

    fn inverse_init_cdf(&self, target: f64) -> usize {
        let total = *self.init_cdf.last().unwrap();
        let t = target * total;
        self.init_cdf
            .partition_point(|&c| c < t)
            .min(self.init_cdf.len() - 1)
    }

    /// Coupling barycenter at time `t`. `emp_mean` is the live empirical mean.
    fn mean_at<'b>(&'b self, t: f64, emp_mean: &'b [f64]) -> &'b [f64] {
        match &self.coupling {
            Coupling::Empirical => emp_mean,
            Coupling::Curve { times, means } => &means[floor_index(times, t)],
        }
    }

    /// Running payoff of player `i` at node `node`, policy value `u`.
    fn running_rate(&self, i: usize, node: usize, t: f64, emp_mean: &[f64]) -> f64 {
        let slice = if i == 0 {
            self.gamma_tilde.values_at_time(t)
        } else {
            self.gamma.values_at_time(t)
        };
        let u = slice[node];
        let mean = self.mean_at(t, emp_mean);
        let x = self.node_coords(node);
        let mut congestion = 0.0;
        for (xa, ma) in x.iter().zip(mean) {
            let dx = xa - ma;
            congestion += dx * dx;
        }
        u * self.reward_sum[node] - 0.5 * self.scenario.cost.c_u * u * u
            - self.scenario.cost.beta * congestion
    }

    fn run_replica(&self, rep: u64) -> PathRecord {
        let n = self.cfg.n_players;
        let d = self.lattice.dim();
        let horizon = self.scenario.horizon;
        let mut rng = stream(self.cfg.seed, self.purpose, rep);

        // Initial states: one uniform per player is always consumed.
        let mut states: Vec<u32> = (0..n)
            .map(|i| {
                let u: f64 = rng.random();
                match &self.cfg.sampler {
                    InitSampler::Iid => self.inverse_init_cdf(u) as u32,
                    InitSampler::Stratified => {
                        self.inverse_init_cdf((i as f64 + u) / n as f64) as u32
                    }
                    InitSampler::Fixed { nodes } => nodes[i] as u32,
                }
            })
            .collect();
        if let Some(x0) = self.x0_override {
            states[0] = x0 as u32;
        }

        let mut emp_sums = vec![0.0; d];
        for &s in &states {
            for (a, v) in emp_sums.iter_mut().enumerate() {
                *v += self.coords[s as usize * d + a];
            }
        }
        let mut emp_mean = vec![0.0; d];
        let refresh_mean = |sums: &[f64], mean: &mut [f64]| {
            for (m, s) in mean.iter_mut().zip(sums) {
                *m = s / n as f64;
            }
        };
        refresh_mean(&emp_sums, &mut emp_mean);

        let mut running = vec![0.0; n];
        let mut jump_counts = vec![0u64; n];
        let mut jump_times = if self.cfg.record_jump_times {
            Some(Vec::new())
        } else {
            None
        };
        let mut snapshots: Vec<Vec<u32>> = Vec::with_capacity(self.record_times.len());
        let mut rec_idx = 0usize;
        let mut bp_idx = 0usize;
        let mut density = vec![0.0; self.lattice.n_nodes()];
        let mut t = 0.0;

        // Exact integral of the piecewise-constant payoff rate over (t0, t1],
        // split at policy breakpoints.
        macro_rules! integrate_to {
            ($t1:expr) => {{
                let t1: f64 = $t1;
                let mut s = t;
                while bp_idx < self.breakpoints.len() && self.breakpoints[bp_idx] <= s {
                    bp_idx += 1;
                }
                while bp_idx < self.breakpoints.len() && self.breakpoints[bp_idx] < t1 {
                    let b = self.breakpoints[bp_idx];
                    for i in 0..n {
                        running[i] +=
                            (b - s) * self.running_rate(i, states[i] as usize, s, &emp_mean);
                    }
                    s = b;
                    bp_idx += 1;
                }
                if t1 > s {
                    for i in 0..n {
                        running[i] +=
                            (t1 - s) * self.running_rate(i, states[i] as usize, s, &emp_mean);
                    }
                }
            }};
        }

        if self.lambda_max > 0.0 {
            let total_rate = n as f64 * self.lambda_max;
            loop {
                let u_dt: f64 = rng.random();
                let dt = -(1.0 - u_dt).ln() / total_rate;
                let t_next = t + dt;
                if t_next > horizon {
                    break;
                }
                while rec_idx < self.record_times.len() && self.record_times[rec_idx] <= t_next {
                    snapshots.push(states.clone());
                    rec_idx += 1;
                }
                integrate_to!(t_next);

                let player = rng.random_range(0..n);
                let u_accept: f64 = rng.random();
                let u_dest: f64 = rng.random();
                let node = states[player] as usize;
                let policy = if player == 0 {
                    self.gamma_tilde
                } else {
                    self.gamma
                };
                let u_ctrl = policy.values_at_time(t_next)[node];
                let lam = self.scenario.kernel.lambda0 + self.scenario.kernel.lambda1 * u_ctrl;
                if u_accept < lam / self.lambda_max {
                    let mean = self.mean_at(t_next, &emp_mean).to_vec();
                    self.scenario.kernel.destination_density_into(
                        &self.lattice,
                        self.node_coords(node),
                        &mean,
                        &mut density,
                    );
                    let mut acc = 0.0;
                    for (k, slot) in density.iter_mut().enumerate() {
                        acc += *slot * self.cellw[k];
                        *slot = acc;
                    }
                    let target = u_dest * acc;
                    let dest = density
                        .partition_point(|&c| c < target)
                        .min(self.lattice.n_nodes() - 1);
                    if let Coupling::Empirical = self.coupling {
                        for a in 0..d {
                            emp_sums[a] +=
                                self.coords[dest * d + a] - self.coords[node * d + a];
                        }
                        refresh_mean(&emp_sums, &mut emp_mean);
                    }
                    states[player] = dest as u32;
                    jump_counts[player] += 1;
                    if player == 0 {
                        if let Some(times) = jump_times.as_mut() {
                            times.push(t_next);
                        }
                    }
                }
                t = t_next;
            }
        }

        integrate_to!(horizon);
        while rec_idx < self.record_times.len() {
            snapshots.push(states.clone());
            rec_idx += 1;
        }

        let mean_t = self.mean_at(horizon, &emp_mean).to_vec();
        let total_payoffs: Vec<f64> = (0..n)
            .map(|i| {
                running[i]
                    + self
                        .scenario
                        .cost
                        .terminal(self.node_coords(states[i] as usize), &mean_t)
            })
            .collect();

        PathRecord {
            times: self.record_times.clone(),
            snapshots,
            running_payoffs: running,
            total_payoffs,
            jump_counts,
            tagged_jump_times: jump_times,
        }
    }

    fn run(&self) -> Vec<PathRecord> {
        (0..self.cfg.reps)
            .into_par_iter()
            .map(|rep| self.run_replica(rep as u64))
            .collect()
    }
}

/// Simulate the symmetric n-player system under the shared feedback law.
pub fn simulate_nplayer(
    scenario: &ScenarioConfig,
    gamma: &FeedbackControl,
    cfg: &SimConfig,
) -> Result<Vec<PathRecord>> {
    let engine = Engine::new(
        scenario,
        gamma,
        gamma,
        Coupling::Empirical,
        cfg,
        None,
        PURPOSE_PLAYERS,
    )?;
    Ok(engine.run())
}

/// Simulate the n-player system in which player 0 starts at `x0` and plays
/// `gamma_tilde` while everyone else plays `gamma`. Shares the randomness of
/// simulate_nplayer at equal seeds, draw for draw.
pub fn simulate_tagged(
    scenario: &ScenarioConfig,
    gamma: &FeedbackControl,
    gamma_tilde: &FeedbackControl,
    x0: &[f64],
    cfg: &SimConfig,
) -> Result<Vec<PathRecord>> {
    let lattice = scenario.lattice()?;
    let node = nearest_node(&lattice, x0)?;
    let engine = Engine::new(
        scenario,
        gamma,
        gamma_tilde,
        Coupling::Empirical,
        cfg,
        Some(node),
        PURPOSE_PLAYERS,
    )?;
    Ok(engine.run())
}

/// Simulate the single limit player: jumps and payoffs couple to a frozen
/// measure curve instead of an empirical measure. Starts at the scenario x0.
pub fn simulate_limit_player(
    scenario: &ScenarioConfig,
    curve: &MeasureCurve,
    gamma: &FeedbackControl,
    cfg: &SimConfig,
) -> Result<Vec<PathRecord>> {
    if cfg.n_players != 1 {
        return Err(CoreError::invalid(
            "n_players",
            "the limit player runs alone; set n_players = 1",
        ));
    }
    let lattice = scenario.lattice()?;
    if curve.lattice() != &lattice {
        return Err(CoreError::LatticeMismatch);
    }
    let node = nearest_node(&lattice, &scenario.x0)?;
    let means: Result<Vec<Vec<f64>>> = curve.snapshots().iter().map(|m| m.mean()).collect();
    let engine = Engine::new(
        scenario,
        gamma,
        gamma,
        Coupling::Curve {
            times: curve.times(),
            means: means?,
        },
        cfg,
        Some(node),
        PURPOSE_LIMIT,
    )?;
    Ok(engine.run())
}

/// Sample mean and standard error of player 0's terminal-inclusive payoff.
pub fn payoff_estimate(records: &[PathRecord]) -> Result<(f64, f64)> {
    if records.len() < 2 {
        return Err(CoreError::InsufficientData(
            "payoff estimation needs at least 2 replicas".into(),
        ));
    }
    let n = records.len() as f64;
    let mean = records.iter().map(|r| r.total_payoffs[0]).sum::<f64>() / n;
    let var = records
        .iter()
        .map(|r| {
            let d = r.total_payoffs[0] - mean;
            d * d
        })
        .sum::<f64>()
        / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Snapshot CSV `rep,time,player,state`; multi-dimensional states join their
/// coordinates with ';'.
pub fn write_paths_csv<W: IoWrite>(
    records: &[PathRecord],
    lattice: &Lattice,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "rep,time,player,state")?;
    for (rep, record) in records.iter().enumerate() {
        for (ti, t) in record.times.iter().enumerate() {
            for (player, &node) in record.snapshots[ti].iter().enumerate() {
                let coords = lattice.node_coords(node as usize);
                let state = coords
                    .iter()
                    .map(|c| c.to_string())
                    .collect::<Vec<_>>()
                    .join(";");
                writeln!(out, "{rep},{t},{player},{state}")?;
            }
        }
    }
    Ok(())
}

/// Per-replica payoff CSV `rep,payoff` for player 0.
pub fn write_payoffs_csv<W: IoWrite>(records: &[PathRecord], out: &mut W) -> std::io::Result<()> {
    writeln!(out, "rep,payoff")?;
    for (rep, record) in records.iter().enumerate() {
        writeln!(out, "{rep},{}", record.total_payoffs[0])?;
    }
    Ok(())
}
