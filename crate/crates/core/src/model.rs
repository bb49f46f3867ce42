//! Parametric model family: jump kernel, payoff, control set, feedback laws.
//!
//! The kernel factors as intensity times destination density,
//!
//! ```text
//! nu(t, x, mu, u, dy) = (lambda0 + lambda1 * u) * q(y | x, mean(mu)) dy
//! ```
//!
//! where q is a Gaussian centered at (1 - kappa) * x + kappa * mean(mu) with
//! width sigma, truncated to the box and renormalized under trapezoid
//! quadrature. The control enters the intensity only, so the stage problem in
//! u stays a concave quadratic with a closed-form maximizer (see the hjb
//! module). Running payoff is
//!
//! ```text
//! J(x, mu, u) = u * (a - x) - (c_u / 2) u^2 - beta * (x - mean(mu))^2
//! ```
//!
//! with terminal payoff -beta_T * (x - mean(mu))^2. Mass never leaves the box:
//! truncation plus renormalization keeps the family conservative by
//! construction, which the generator and adjoint inherit exactly.

use crate::error::{CoreError, Result};
use crate::grid::Lattice;
use crate::measures::GridMeasure;
use crate::timegrid::floor_index;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Tolerance for control-set membership checks.
const CONTROL_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JumpKernelSpec {
    /// Base jump rate (per unit time), active for u = 0.
    pub lambda0: f64,
    /// Intensity gain per unit of control.
    pub lambda1: f64,
    /// Mean-pull weight toward the population barycenter, in [0, 1].
    pub kappa: f64,
    /// Destination spread in state units.
    pub sigma: f64,
}

impl JumpKernelSpec {
    pub fn validate(&self, ctrl: &ControlSet) -> Result<()> {
        if !self.lambda0.is_finite() || self.lambda0 < 0.0 {
            return Err(CoreError::invalid("kernel.lambda0", "must be finite and >= 0"));
        }
        if !self.lambda1.is_finite() || self.lambda1 < 0.0 {
            return Err(CoreError::invalid("kernel.lambda1", "must be finite and >= 0"));
        }
        if self.lambda0 + self.lambda1 * ctrl.u_min < -CONTROL_TOL {
            return Err(CoreError::invalid(
                "kernel",
                "intensity lambda0 + lambda1*u must be nonnegative on the control set",
            ));
        }
        if !(0.0..=1.0).contains(&self.kappa) {
            return Err(CoreError::invalid("kernel.kappa", "must lie in [0, 1]"));
        }
        if !self.sigma.is_finite() || self.sigma <= 0.0 {
            return Err(CoreError::invalid("kernel.sigma", "must be finite and > 0"));
        }
        Ok(())
    }

    /// Total jump intensity lambda(u) = lambda0 + lambda1 * u.
    pub fn intensity(&self, u: f64, ctrl: &ControlSet) -> Result<f64> {
        if u < ctrl.u_min - CONTROL_TOL || u > ctrl.u_max + CONTROL_TOL {
            return Err(CoreError::ControlOutOfRange {
                u,
                lo: ctrl.u_min,
                hi: ctrl.u_max,
            });
        }
        Ok(self.lambda0 + self.lambda1 * u)
    }

    /// Dominating intensity over the control set.
    pub fn lambda_max(&self, ctrl: &ControlSet) -> f64 {
        self.lambda0 + self.lambda1 * ctrl.u_max
    }

    /// Destination density values on the lattice nodes for a jump from `x`
    /// when the population barycenter is `mean`. Renormalized so that the
    /// trapezoid quadrature sum is exactly 1.
    pub fn destination_density_into(
        &self,
        lattice: &Lattice,
        x: &[f64],
        mean: &[f64],
        out: &mut [f64],
    ) {
        debug_assert_eq!(out.len(), lattice.n_nodes());
        let d = lattice.dim();
        let inv2s2 = 1.0 / (2.0 * self.sigma * self.sigma);
        // Largest exponent is subtracted before exponentiation so narrow
        // kernels cannot underflow to an all-zero density.
        let mut max_e = f64::NEG_INFINITY;
        for (k, slot) in out.iter_mut().enumerate() {
            let mut dist2 = 0.0;
            for a in 0..d {
                let c = (1.0 - self.kappa) * x[a] + self.kappa * mean[a];
                let dy = lattice.coord(k, a) - c;
                dist2 += dy * dy;
            }
            let e = -dist2 * inv2s2;
            *slot = e;
            if e > max_e {
                max_e = e;
            }
        }
        let mut quad = 0.0;
        for (k, slot) in out.iter_mut().enumerate() {
            *slot = (*slot - max_e).exp();
            quad += *slot * lattice.cell_weight(k);
        }
        for slot in out.iter_mut() {
            *slot /= quad;
        }
    }

    /// Destination density for a jump from `x` given coupling measure `m`.
    pub fn jump_density(&self, x: &[f64], m: &GridMeasure) -> Result<Vec<f64>> {
        let mean = m.mean()?;
        let mut out = vec![0.0; m.lattice().n_nodes()];
        self.destination_density_into(m.lattice(), x, &mean, &mut out);
        Ok(out)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostSpec {
    /// Reward slope: the control is paid u * (a - x).
    pub a: f64,
    /// Quadratic control cost, must be positive (strict concavity in u).
    pub c_u: f64,
    /// Congestion weight on the squared distance to the population mean.
    pub beta: f64,
    /// Terminal congestion weight.
    pub beta_t: f64,
}

impl CostSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cost.a", self.a),
            ("cost.c_u", self.c_u),
            ("cost.beta", self.beta),
            ("cost.beta_t", self.beta_t),
        ] {
            if !v.is_finite() {
                return Err(CoreError::invalid(name, "must be finite"));
            }
        }
        if self.c_u <= 0.0 {
            return Err(CoreError::invalid("cost.c_u", "must be > 0"));
        }
        if self.beta < 0.0 || self.beta_t < 0.0 {
            return Err(CoreError::invalid("cost", "beta and beta_t must be >= 0"));
        }
        Ok(())
    }

    /// Running payoff J(x, mu, u); coordinates enter additively so the 1-d
    /// form is recovered exactly on scalar states.
    pub fn running(&self, x: &[f64], mean: &[f64], u: f64) -> f64 {
        let mut reward = 0.0;
        let mut congestion = 0.0;
        for (xa, ma) in x.iter().zip(mean) {
            reward += self.a - xa;
            let dx = xa - ma;
            congestion += dx * dx;
        }
        u * reward - 0.5 * self.c_u * u * u - self.beta * congestion
    }

    /// Terminal payoff.
    pub fn terminal(&self, x: &[f64], mean: &[f64]) -> f64 {
        let mut congestion = 0.0;
        for (xa, ma) in x.iter().zip(mean) {
            let dx = xa - ma;
            congestion += dx * dx;
        }
        -self.beta_t * congestion
    }
}

/// Compact control interval [u_min, u_max] with a diagnostic grid size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlSet {
    pub u_min: f64,
    pub u_max: f64,
    pub resolution: usize,
}

impl ControlSet {
    pub fn validate(&self) -> Result<()> {
        if !self.u_min.is_finite() || !self.u_max.is_finite() || self.u_min >= self.u_max {
            return Err(CoreError::invalid("control", "need finite u_min < u_max"));
        }
        if self.resolution < 2 {
            return Err(CoreError::invalid("control.resolution", "need >= 2 grid points"));
        }
        Ok(())
    }

    pub fn clamp(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.u_min - CONTROL_TOL && u <= self.u_max + CONTROL_TOL
    }

    /// Diagnostic evaluation grid over the interval.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.resolution;
        (0..n)
            .map(|i| self.u_min + (self.u_max - self.u_min) * i as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Feedback law gamma(t, x): one control value per (time, lattice node),
/// piecewise constant in t and multilinear in x between nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackControl {
    times: Vec<f64>,
    lattice: Lattice,
    values: Vec<Vec<f64>>,
    control: ControlSet,
}

impl FeedbackControl {
    pub fn new(
        times: Vec<f64>,
        lattice: Lattice,
        values: Vec<Vec<f64>>,
        control: ControlSet,
    ) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(CoreError::invalid(
                "feedback",
                "need equally many times and value slices, at least one",
            ));
        }
        for slice in &values {
            if slice.len() != lattice.n_nodes() {
                return Err(CoreError::invalid(
                    "feedback",
                    "value slice length must equal the node count",
                ));
            }
            if let Some(&bad) = slice.iter().find(|v| !control.contains(**v)) {
                return Err(CoreError::ControlOutOfRange {
                    u: bad,
                    lo: control.u_min,
                    hi: control.u_max,
                });
            }
        }
        Ok(FeedbackControl {
            times,
            lattice,
            values,
            control,
        })
    }

    /// Constant-in-(t, x) control.
    pub fn constant(times: Vec<f64>, lattice: Lattice, u: f64, control: ControlSet) -> Result<Self> {
        let n = lattice.n_nodes();
        let values = vec![vec![u; n]; times.len()];
        FeedbackControl::new(times, lattice, values, control)
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.control
    }

    /// Nodal values in effect at time t.
    pub fn values_at_time(&self, t: f64) -> &[f64] {
        &self.values[floor_index(&self.times, t)]
    }

    /// gamma(t, x) at an arbitrary state by multilinear interpolation.
    pub fn eval(&self, t: f64, x: &[f64]) -> Result<f64> {
        let v = self.lattice.interpolate(self.values_at_time(t), x)?;
        Ok(self.control.clamp(v))
    }

    /// Same law shifted by delta and clamped back into the control set.
    pub fn shifted(&self, delta: f64) -> FeedbackControl {
        let values = self
            .values
            .iter()
            .map(|slice| slice.iter().map(|v| self.control.clamp(v + delta)).collect())
            .collect();
        FeedbackControl {
            times: self.times.clone(),
            lattice: self.lattice.clone(),
            values,
            control: self.control,
        }
    }
}

/// One-player generator applied to a grid function:
/// (A f)(x) = lambda(gamma(t, x)) * (integral of f against the destination
/// density minus f(x)). Conservative: f constant maps to zero exactly.
pub fn apply_generator(
    kernel: &JumpKernelSpec,
    t: f64,
    m: &GridMeasure,
    gamma: &FeedbackControl,
    f: &[f64],
) -> Result<Vec<f64>> {
    let lattice = m.lattice();
    assert_eq!(f.len(), lattice.n_nodes(), "grid function length mismatch");
    let mean = m.mean()?;
    let gvals = gamma.values_at_time(t);
    let mut density = vec![0.0; lattice.n_nodes()];
    let mut coords = vec![0.0; lattice.dim()];
    let mut out = vec![0.0; lattice.n_nodes()];
    for k in 0..lattice.n_nodes() {
        lattice.write_coords(k, &mut coords);
        kernel.destination_density_into(lattice, &coords, &mean, &mut density);
        let mut integral = 0.0;
        for (j, &fj) in f.iter().enumerate() {
            integral += fj * density[j] * lattice.cell_weight(j);
        }
        let lam = kernel.intensity(gvals[k], gamma.control_set())?;
        out[k] = lam * (integral - f[k]);
    }
    Ok(out)
}

/// Adjoint action on node masses: influx from every source node minus the
/// outflux, returned as signed node masses. Satisfies the duality
/// (A f, mu) = (f, A* mu) on the lattice and sums to zero (mass conservation).
pub fn apply_adjoint(
    kernel: &JumpKernelSpec,
    t: f64,
    m: &GridMeasure,
    gamma: &FeedbackControl,
) -> Result<Vec<f64>> {
    let lattice = m.lattice();
    let mean = m.mean()?;
    let gvals = gamma.values_at_time(t);
    let mut density = vec![0.0; lattice.n_nodes()];
    let mut coords = vec![0.0; lattice.dim()];
    let mut out = vec![0.0; lattice.n_nodes()];
    for y in 0..lattice.n_nodes() {
        let w = m.weights()[y];
        let lam = kernel.intensity(gvals[y], gamma.control_set())?;
        if w == 0.0 {
            continue;
        }
        lattice.write_coords(y, &mut coords);
        kernel.destination_density_into(lattice, &coords, &mean, &mut density);
        let flow = lam * w;
        for (x, slot) in out.iter_mut().enumerate() {
            *slot += flow * density[x] * lattice.cell_weight(x);
        }
        out[y] -= flow;
    }
    Ok(out)
}

/// Empirical check of the structural assumptions: Lipschitz constants of the
/// kernel in x, in the measure (TV direction) and in u, plus the control
/// curvature of J. The measure constant feeds the Gronwall envelope
/// C = 2 * lambda_max + L_mu used by the kinetic sensitivity probe.
#[derive(Clone, Debug)]
pub struct HypothesisReport {
    pub lambda_max: f64,
    pub lip_x: f64,
    pub lip_mu: f64,
    pub lip_u: f64,
    pub uu_curvature: f64,
    pub gronwall_c: f64,
    pub pass: bool,
    pub failures: Vec<String>,
}

pub fn hypothesis_probe(
    kernel: &JumpKernelSpec,
    cost: &CostSpec,
    ctrl: &ControlSet,
    lattice: &Lattice,
    samples: usize,
    seed: u64,
) -> Result<HypothesisReport> {
    if samples < 100 {
        return Err(CoreError::invalid("samples", "need at least 100 probe samples"));
    }
    kernel.validate(ctrl)?;
    cost.validate()?;
    ctrl.validate()?;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let d = lattice.dim();
    let n = lattice.n_nodes();
    let lambda_max = kernel.lambda_max(ctrl);

    let random_point = |rng: &mut ChaCha12Rng| -> Vec<f64> {
        (0..d)
            .map(|a| rng.random_range(lattice.min()[a]..=lattice.max()[a]))
            .collect()
    };

    let mut qa = vec![0.0; n];
    let mut qb = vec![0.0; n];
    let tv_between = |qa: &[f64], qb: &[f64], lattice: &Lattice| -> f64 {
        qa.iter()
            .zip(qb)
            .enumerate()
            .map(|(k, (a, b))| (a - b).abs() * lattice.cell_weight(k))
            .sum()
    };

    // Lipschitz in x: ratio of kernel TV distance to source offset, sampled
    // over random pairs plus small local offsets.
    let mut lip_x: f64 = 0.0;
    for i in 0..samples {
        let x = random_point(&mut rng);
        let mut y = random_point(&mut rng);
        if i % 2 == 0 {
            // Local pair: short step along a random axis.
            y = x.clone();
            let a = rng.random_range(0..d);
            let h = 1e-3 * (lattice.max()[a] - lattice.min()[a]);
            y[a] = (y[a] + h).min(lattice.max()[a]);
        }
        let dist: f64 = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum();
        if dist == 0.0 {
            continue;
        }
        let mean = random_point(&mut rng);
        kernel.destination_density_into(lattice, &x, &mean, &mut qa);
        kernel.destination_density_into(lattice, &y, &mean, &mut qb);
        lip_x = lip_x.max(lambda_max * tv_between(&qa, &qb, lattice) / dist);
    }

    // Lipschitz in the measure: TV of the kernel against the TV of the
    // coupling measures. Extreme candidates (far-apart point masses) are
    // probed deterministically alongside random density pairs.
    let mut lip_mu: f64 = 0.0;
    {
        let mut probe_pair = |ma: &GridMeasure, mb: &GridMeasure, rng: &mut ChaCha12Rng| {
            let tv = ma.tv_distance(mb).expect("shared lattice");
            if tv == 0.0 {
                return;
            }
            let mean_a = ma.mean().expect("positive mass");
            let mean_b = mb.mean().expect("positive mass");
            let x = random_point(rng);
            kernel.destination_density_into(lattice, &x, &mean_a, &mut qa);
            kernel.destination_density_into(lattice, &x, &mean_b, &mut qb);
            lip_mu = lip_mu.max(lambda_max * tv_between(&qa, &qb, lattice) / tv);
        };
        let corners = [0usize, n - 1];
        for &i in &corners {
            for &j in &corners {
                if i != j {
                    let ma = GridMeasure::dirac_at_node(lattice.clone(), i);
                    let mb = GridMeasure::dirac_at_node(lattice.clone(), j);
                    probe_pair(&ma, &mb, &mut rng);
                }
            }
        }
        for _ in 0..samples {
            let wa: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
            let mut wb = wa.clone();
            let i = rng.random_range(0..n);
            let j = rng.random_range(0..n);
            let shift = rng.random_range(0.0..wa[i].max(1e-3));
            wb[i] = (wb[i] - shift).max(0.0);
            wb[j] += shift;
            let norm = |w: Vec<f64>| {
                let s: f64 = w.iter().sum();
                GridMeasure::new(lattice.clone(), w.into_iter().map(|v| v / s).collect()).unwrap()
            };
            let ma = norm(wa);
            let mb = norm(wb);
            probe_pair(&ma, &mb, &mut rng);
        }
    }

    // Lipschitz in u: the density does not depend on u, so the kernel TV is
    // |lambda(u) - lambda(u')| and the ratio is exactly lambda1.
    let mut lip_u: f64 = 0.0;
    for _ in 0..samples {
        let u = rng.random_range(ctrl.u_min..ctrl.u_max);
        let v = rng.random_range(ctrl.u_min..ctrl.u_max);
        if u == v {
            continue;
        }
        let du = (kernel.intensity(u, ctrl)? - kernel.intensity(v, ctrl)?).abs();
        lip_u = lip_u.max(du / (u - v).abs());
    }

    // Control curvature of J by a central second difference; J is exactly
    // quadratic in u so this recovers -c_u to roundoff.
    let uu_curvature = {
        let h = 0.01 * (ctrl.u_max - ctrl.u_min);
        let x = random_point(&mut rng);
        let mean = random_point(&mut rng);
        let u = 0.5 * (ctrl.u_min + ctrl.u_max);
        let j = |u: f64| cost.running(&x, &mean, u);
        (j(u + h) - 2.0 * j(u) + j(u - h)) / (h * h)
    };

    let mut failures = Vec::new();
    if !(lambda_max.is_finite() && lambda_max >= 0.0) {
        failures.push("lambda_max must be finite and nonnegative".to_string());
    }
    if uu_curvature > -0.5 * cost.c_u {
        failures.push(format!(
            "control curvature {uu_curvature} is not negative at scale c_u = {}",
            cost.c_u
        ));
    }
    for (name, v) in [("lip_x", lip_x), ("lip_mu", lip_mu), ("lip_u", lip_u)] {
        if !v.is_finite() {
            failures.push(format!("{name} estimate is not finite"));
        }
    }

    Ok(HypothesisReport {
        lambda_max,
        lip_x,
        lip_mu,
        lip_u,
        uu_curvature,
        gronwall_c: 2.0 * lambda_max + lip_mu,
        pass: failures.is_empty(),
        failures,
    })
}
