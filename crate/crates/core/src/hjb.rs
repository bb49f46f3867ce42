//! Backward value sweep along a frozen measure curve. The stage problem in u
//! is a concave quadratic (affine intensity, quadratic control cost), so the
//! per-node maximization is closed-form; a dense control grid exists only as a
//! test oracle. Cross-checks: a propagator-based reconstruction of the sweep
//! (duhamel_residual) and regularity probes of the resulting feedback law.

use std::io::Write as IoWrite;

use crate::error::{CoreError, Result};
use crate::grid::Lattice;
use crate::matrix::DenseMatrix;
use crate::measures::{GridMeasure, MeasureCurve};
use crate::model::{ControlSet, CostSpec, FeedbackControl, JumpKernelSpec};

/// Fraction of the mean holding time one backward step may cover.
const STABILITY_FRACTION: f64 = 0.5;

/// Value function and optimal feedback on the (time, node) grid.
#[derive(Clone, Debug)]
pub struct ValueGrid {
    times: Vec<f64>,
    lattice: Lattice,
    /// W slices in chronological order, one vector per time.
    values: Vec<Vec<f64>>,
    /// Maximizing control per (time, node).
    policy_values: Vec<Vec<f64>>,
    control: ControlSet,
}

impl ValueGrid {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    /// W(t_i, ·) for the i-th grid time.
    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn policy_values(&self) -> &[Vec<f64>] {
        &self.policy_values
    }

    pub fn control_set(&self) -> &ControlSet {
        &self.control
    }

    /// The feedback law gamma-hat as an interpolating control.
    pub fn policy(&self) -> Result<FeedbackControl> {
        FeedbackControl::new(
            self.times.clone(),
            self.lattice.clone(),
            self.policy_values.clone(),
            self.control,
        )
    }

    pub fn write_csv<W: IoWrite>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(out, "time,node_index,W,gamma")?;
        for (i, t) in self.times.iter().enumerate() {
            for k in 0..self.lattice.n_nodes() {
                writeln!(
                    out,
                    "{},{},{},{}",
                    t, k, self.values[i][k], self.policy_values[i][k]
                )?;
            }
        }
        Ok(())
    }
}

/// Diagnostic scan of the stage objective over the control grid at one
/// (time, node): values, argmax, and the local second difference there.
#[derive(Clone, Debug)]
pub struct HamiltonianReport {
    pub u_grid: Vec<f64>,
    pub thetas: Vec<f64>,
    pub argmax_index: usize,
    pub argmax_u: f64,
    pub curvature: f64,
}

struct StageContext<'a> {
    lattice: &'a Lattice,
    mean: Vec<f64>,
    kernel: &'a JumpKernelSpec,
    cost: &'a CostSpec,
    ctrl: &'a ControlSet,
}

impl<'a> StageContext<'a> {
    fn new(
        m: &'a GridMeasure,
        kernel: &'a JumpKernelSpec,
        cost: &'a CostSpec,
        ctrl: &'a ControlSet,
    ) -> Result<Self> {
        Ok(StageContext {
            lattice: m.lattice(),
            mean: m.mean()?,
            kernel,
            cost,
            ctrl,
        })
    }

    /// Expected value jump I = integral of W against the destination density
    /// minus W at the node. `density` and `coords` are scratch buffers.
    fn value_jump(
        &self,
        node: usize,
        w_t: &[f64],
        density: &mut [f64],
        coords: &mut [f64],
    ) -> f64 {
        self.lattice.write_coords(node, coords);
        self.kernel
            .destination_density_into(self.lattice, coords, &self.mean, density);
        let mut integral = 0.0;
        for (j, &wj) in w_t.iter().enumerate() {
            integral += wj * density[j] * self.lattice.cell_weight(j);
        }
        integral - w_t[node]
    }

    /// Closed-form maximizer of Theta(u) = J(x, mean, u) + lambda(u) * I.
    fn maximize(&self, node: usize, w_t: &[f64], density: &mut [f64], coords: &mut [f64]) -> (f64, f64) {
        let i_jump = self.value_jump(node, w_t, density, coords);
        let reward: f64 = coords.iter().map(|&xa| self.cost.a - xa).sum();
        let u_star = self
            .ctrl
            .clamp((reward + self.kernel.lambda1 * i_jump) / self.cost.c_u);
        let theta = self.cost.running(coords, &self.mean, u_star)
            + (self.kernel.lambda0 + self.kernel.lambda1 * u_star) * i_jump;
        (u_star, theta)
    }
}

/// Exact maximizer of the stage objective
/// Theta(u) = J(x, mean, u) + lambda(u) * (integral W dq - W(x)) at one node.
/// Returns (u*, Theta(u*)). Requires c_u > 0 for strict concavity.
pub fn maximize_hamiltonian(
    _t: f64,
    node: usize,
    m: &GridMeasure,
    w_t: &[f64],
    cost: &CostSpec,
    kernel: &JumpKernelSpec,
    ctrl: &ControlSet,
) -> Result<(f64, f64)> {
    if cost.c_u <= 0.0 {
        return Err(CoreError::NonConcave { c_u: cost.c_u });
    }
    if w_t.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::NonFinite("value slice has non-finite entries".into()));
    }
    let ctx = StageContext::new(m, kernel, cost, ctrl)?;
    let mut density = vec![0.0; m.lattice().n_nodes()];
    let mut coords = vec![0.0; m.lattice().dim()];
    Ok(ctx.maximize(node, w_t, &mut density, &mut coords))
}

/// Dense scan of the stage objective over the control grid, for diagnostics
/// and as the oracle against the closed-form maximizer.
pub fn hamiltonian_report(
    _t: f64,
    node: usize,
    m: &GridMeasure,
    w_t: &[f64],
    cost: &CostSpec,
    kernel: &JumpKernelSpec,
    ctrl: &ControlSet,
) -> Result<HamiltonianReport> {
    if cost.c_u <= 0.0 {
        return Err(CoreError::NonConcave { c_u: cost.c_u });
    }
    let ctx = StageContext::new(m, kernel, cost, ctrl)?;
    let mut density = vec![0.0; m.lattice().n_nodes()];
    let mut coords = vec![0.0; m.lattice().dim()];
    let i_jump = ctx.value_jump(node, w_t, &mut density, &mut coords);
    let u_grid = ctrl.grid();
    let thetas: Vec<f64> = u_grid
        .iter()
        .map(|&u| {
            cost.running(&coords, &ctx.mean, u) + (kernel.lambda0 + kernel.lambda1 * u) * i_jump
        })
        .collect();
    let argmax_index = thetas
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    let curvature = if argmax_index > 0 && argmax_index + 1 < thetas.len() {
        let h = u_grid[1] - u_grid[0];
        (thetas[argmax_index + 1] - 2.0 * thetas[argmax_index] + thetas[argmax_index - 1]) / (h * h)
    } else {
        -cost.c_u
    };
    Ok(HamiltonianReport {
        argmax_u: u_grid[argmax_index],
        u_grid,
        thetas,
        argmax_index,
        curvature,
    })
}

fn check_uniform_dt(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Ok(0.0);
    }
    let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
    let tol = 1e-9 * times[times.len() - 1].abs().max(1.0);
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > tol {
            return Err(CoreError::TimeGridMismatch(
                "value sweep requires a uniform time grid".into(),
            ));
        }
    }
    Ok(dt)
}

/// Backward sweep W(t - dt, x) = W(t, x) + dt * Theta*(t, x) along the curve,
/// from the exact terminal condition. Stores the maximizer at every grid time
/// (the initial slice gets one extra maximization against W(t_0)).
pub fn solve_hjb(
    curve: &MeasureCurve,
    cost: &CostSpec,
    kernel: &JumpKernelSpec,
    ctrl: &ControlSet,
) -> Result<ValueGrid> {
    cost.validate()?;
    ctrl.validate()?;
    kernel.validate(ctrl)?;
    let times = curve.times().to_vec();
    let lattice = curve.lattice().clone();
    let n = lattice.n_nodes();
    let n_t = times.len();
    let dt = check_uniform_dt(&times)?;
    let lambda_max = kernel.lambda_max(ctrl);
    if lambda_max > 0.0 && n_t >= 2 {
        let required = STABILITY_FRACTION / lambda_max;
        if dt > required * (1.0 + 1e-12) {
            return Err(CoreError::StabilityGuard { dt, required });
        }
    }

    let mut values = vec![vec![0.0; n]; n_t];
    let mut policy = vec![vec![0.0; n]; n_t];
    let mut coords = vec![0.0; lattice.dim()];
    let mut density = vec![0.0; n];

    let mean_t = curve.last().mean()?;
    for k in 0..n {
        lattice.write_coords(k, &mut coords);
        values[n_t - 1][k] = cost.terminal(&coords, &mean_t);
    }

    for i in (1..n_t).rev() {
        let ctx = StageContext::new(&curve.snapshots()[i], kernel, cost, ctrl)?;
        let (w_cur, w_prev) = {
            let (lo, hi) = values.split_at_mut(i);
            (&mut hi[0], &mut lo[i - 1])
        };
        for k in 0..n {
            let (u_star, theta) = ctx.maximize(k, w_cur, &mut density, &mut coords);
            policy[i][k] = u_star;
            let w_new = w_cur[k] + dt * theta;
            if !w_new.is_finite() {
                return Err(CoreError::NonFinite(format!(
                    "value diverged at t={} node {k}",
                    times[i - 1]
                )));
            }
            w_prev[k] = w_new;
        }
    }

    {
        let ctx = StageContext::new(curve.first(), kernel, cost, ctrl)?;
        for k in 0..n {
            let (u_star, _) = ctx.maximize(k, &values[0], &mut density, &mut coords);
            policy[0][k] = u_star;
        }
    }

    Ok(ValueGrid {
        times,
        lattice,
        values,
        policy_values: policy,
        control: *ctrl,
    })
}

/// Generator matrix for grid functions under the frozen slice policy:
/// row x is lambda(gamma(x)) * (q_x(j) * cellweight_j - delta_xj).
fn generator_matrix(
    kernel: &JumpKernelSpec,
    m: &GridMeasure,
    policy_slice: &[f64],
    ctrl: &ControlSet,
) -> Result<DenseMatrix> {
    let lattice = m.lattice();
    let n = lattice.n_nodes();
    let mean = m.mean()?;
    let mut coords = vec![0.0; lattice.dim()];
    let mut density = vec![0.0; n];
    let mut a = DenseMatrix::zeros(n);
    for x in 0..n {
        let lam = kernel.intensity(policy_slice[x], ctrl)?;
        lattice.write_coords(x, &mut coords);
        kernel.destination_density_into(lattice, &coords, &mean, &mut density);
        for j in 0..n {
            let mut entry = lam * density[j] * lattice.cell_weight(j);
            if j == x {
                entry -= lam;
            }
            a.set(x, j, entry);
        }
    }
    Ok(a)
}

/// Reconstruct the value by the propagator identity
/// W(t) = E(t, t+dt) W(t+dt) + quadrature of the propagated running payoff,
/// with per-step matrix exponentials of the frozen-policy generator, and
/// return the maximum absolute deviation from the stored sweep. Measures the
/// first-order consistency error of the explicit scheme.
pub fn duhamel_residual(
    vg: &ValueGrid,
    curve: &MeasureCurve,
    cost: &CostSpec,
    kernel: &JumpKernelSpec,
) -> Result<f64> {
    let times = vg.times();
    let n_t = times.len();
    if n_t < 2 {
        return Ok(0.0);
    }
    if curve.times().len() != n_t {
        return Err(CoreError::TimeGridMismatch(
            "curve and value grid must share the time grid".into(),
        ));
    }
    let dt = check_uniform_dt(times)?;
    let lattice = vg.lattice();
    let n = lattice.n_nodes();

    let running_slice = |i: usize| -> Result<Vec<f64>> {
        let mean = curve.snapshots()[i].mean()?;
        let mut out = vec![0.0; n];
        let mut c = vec![0.0; lattice.dim()];
        for k in 0..n {
            lattice.write_coords(k, &mut c);
            out[k] = cost.running(&c, &mean, vg.policy_values()[i][k]);
        }
        Ok(out)
    };

    let mut w_hat = vg.values()[n_t - 1].clone();
    let mut worst: f64 = 0.0;
    let mut j_next = running_slice(n_t - 1)?;
    for i in (0..n_t - 1).rev() {
        let a = generator_matrix(
            kernel,
            &curve.snapshots()[i + 1],
            &vg.policy_values()[i + 1],
            vg.control_set(),
        )?;
        let j_cur = running_slice(i)?;
        let propagated_w = a.expm_apply(dt, &w_hat);
        let propagated_j = a.expm_apply(dt, &j_next);
        for k in 0..n {
            w_hat[k] = propagated_w[k] + 0.5 * dt * (j_cur[k] + propagated_j[k]);
        }
        for k in 0..n {
            worst = worst.max((w_hat[k] - vg.values()[i][k]).abs());
        }
        j_next = j_cur;
    }
    Ok(worst)
}

/// Regularity diagnostics of the feedback law: the worst discrete Lipschitz
/// constant of x -> gamma-hat(t, x) over all times, and, when a second solve
/// is supplied, the sensitivity of the policy to the driving curve measured
/// as sup |gamma1 - gamma2| / sup_t tv(mu1_t, mu2_t).
#[derive(Clone, Debug)]
pub struct FeedbackRegularityReport {
    pub lip_x: f64,
    pub policy_deviation: Option<f64>,
    pub curve_distance: Option<f64>,
    pub sensitivity_ratio: Option<f64>,
}

pub fn feedback_regularity_probe(
    vg: &ValueGrid,
    other: Option<(&ValueGrid, &MeasureCurve, &MeasureCurve)>,
) -> Result<FeedbackRegularityReport> {
    let lattice = vg.lattice();
    let d = lattice.dim();
    let nodes = lattice.nodes_per_axis();
    let mut lip_x: f64 = 0.0;
    for slice in vg.policy_values() {
        for axis in 0..d {
            let h = lattice.spacing(axis);
            if h == 0.0 {
                continue;
            }
            let stride = nodes.pow(axis as u32);
            for k in 0..lattice.n_nodes() {
                if lattice.axis_index(k, axis) + 1 < nodes {
                    lip_x = lip_x.max((slice[k + stride] - slice[k]).abs() / h);
                }
            }
        }
    }

    let (mut policy_deviation, mut curve_distance, mut sensitivity_ratio) = (None, None, None);
    if let Some((vg2, curve1, curve2)) = other {
        if vg2.policy_values().len() != vg.policy_values().len() {
            return Err(CoreError::TimeGridMismatch(
                "policy grids must share the time grid".into(),
            ));
        }
        let mut dev: f64 = 0.0;
        for (s1, s2) in vg.policy_values().iter().zip(vg2.policy_values()) {
            for (a, b) in s1.iter().zip(s2) {
                dev = dev.max((a - b).abs());
            }
        }
        let dist = curve1.sup_tv(curve2)?;
        policy_deviation = Some(dev);
        curve_distance = Some(dist);
        if dist > 0.0 {
            sensitivity_ratio = Some(dev / dist);
        }
    }

    Ok(FeedbackRegularityReport {
        lip_x,
        policy_deviation,
        curve_distance,
        sensitivity_ratio,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kinetic::{solve_kinetic, KineticSolveConfig};
    use crate::model::FeedbackControl;

    fn ctrl() -> ControlSet {
        ControlSet {
            u_min: 0.0,
            u_max: 1.0,
            resolution: 101,
        }
    }

    fn cost() -> CostSpec {
        CostSpec {
            a: 0.7,
            c_u: 1.0,
            beta: 0.5,
            beta_t: 0.25,
        }
    }

    fn kernel() -> JumpKernelSpec {
        JumpKernelSpec {
            lambda0: 1.0,
            lambda1: 2.0,
            kappa: 0.5,
            sigma: 0.15,
        }
    }

    fn init_measure(lattice: &Lattice) -> GridMeasure {
        GridMeasure::from_density(lattice.clone(), |x| {
            (-0.5 * ((x[0] - 0.3) / 0.1).powi(2)).exp()
        })
        .unwrap()
    }

    fn frozen_curve(lattice: &Lattice, t_steps: usize) -> MeasureCurve {
        // Constant-in-time curve on a uniform grid, for solver-only tests.
        let times = crate::timegrid::linspace(1.0, t_steps);
        MeasureCurve::constant(times, init_measure(lattice)).unwrap()
    }

    #[test]
    fn maximizer_closed_form_corner_cases() {
        let lattice = Lattice::unit_interval(41);
        let m = init_measure(&lattice);
        let w = vec![0.0; 41];
        // lambda1 = 0 and a equal to the node coordinate: reward and coupling
        // both vanish, so the maximizer is the clamped zero.
        let k = JumpKernelSpec {
            lambda1: 0.0,
            ..kernel()
        };
        let node = 20; // x = 0.5
        let c = CostSpec {
            a: 0.5,
            ..cost()
        };
        let (u, _) = maximize_hamiltonian(0.0, node, &m, &w, &c, &k, &ctrl()).unwrap();
        assert_eq!(u, 0.0);

        // Unconstrained maximizer far above u_max clamps to u_max.
        let c = CostSpec {
            a: 10.0,
            ..cost()
        };
        let (u, _) = maximize_hamiltonian(0.0, node, &m, &w, &c, &k, &ctrl()).unwrap();
        assert_eq!(u, 1.0);
    }

    #[test]
    fn maximizer_rejects_non_concave_cost() {
        let lattice = Lattice::unit_interval(11);
        let m = init_measure(&lattice);
        let w = vec![0.0; 11];
        let c = CostSpec {
            c_u: 0.0,
            ..cost()
        };
        assert!(matches!(
            maximize_hamiltonian(0.0, 5, &m, &w, &c, &kernel(), &ctrl()),
            Err(CoreError::NonConcave { .. })
        ));
    }

    #[test]
    fn maximizer_matches_dense_control_grid() {
        let lattice = Lattice::unit_interval(41);
        let m = init_measure(&lattice);
        let w: Vec<f64> = (0..41).map(|k| (0.37 * k as f64).sin()).collect();
        let dense = ControlSet {
            resolution: 10_001,
            ..ctrl()
        };
        let cell = 1.0 / 10_000.0;
        for node in [0, 7, 20, 33, 40] {
            let (u_closed, theta_closed) =
                maximize_hamiltonian(0.0, node, &m, &w, &cost(), &kernel(), &ctrl()).unwrap();
            let report =
                hamiltonian_report(0.0, node, &m, &w, &cost(), &kernel(), &dense).unwrap();
            assert!(
                (u_closed - report.argmax_u).abs() <= cell + 1e-12,
                "node {node}: closed {u_closed} vs grid {}",
                report.argmax_u
            );
            assert!(theta_closed >= report.thetas[report.argmax_index] - 1e-12);
            assert!(report.curvature <= 0.0);
        }
    }

    #[test]
    fn terminal_slice_is_exact_and_policy_in_range() {
        let lattice = Lattice::unit_interval(31);
        let curve = frozen_curve(&lattice, 50);
        let vg = solve_hjb(&curve, &cost(), &kernel(), &ctrl()).unwrap();
        let mean = curve.last().mean().unwrap();
        let last = vg.times().len() - 1;
        for k in 0..31 {
            let expected = cost().terminal(&lattice.node_coords(k), &mean);
            assert_eq!(vg.values()[last][k], expected, "hjb must not touch W(T, .)");
        }
        for slice in vg.policy_values() {
            assert!(slice.iter().all(|&u| (0.0..=1.0).contains(&u)));
        }
    }

    #[test]
    fn frozen_dynamics_with_flat_reward_keeps_terminal_value() {
        // No jumps, a = 0 on [0, 1] and no congestion: the running maximum is
        // attained at u = 0 with value 0, so W never moves.
        let lattice = Lattice::unit_interval(31);
        let curve = frozen_curve(&lattice, 50);
        let k = JumpKernelSpec {
            lambda0: 0.0,
            lambda1: 0.0,
            ..kernel()
        };
        let c = CostSpec {
            a: 0.0,
            c_u: 1.0,
            beta: 0.0,
            beta_t: 0.25,
        };
        let vg = solve_hjb(&curve, &c, &k, &ctrl()).unwrap();
        let terminal = vg.values().last().unwrap().clone();
        for slice in vg.values() {
            for (a, b) in slice.iter().zip(&terminal) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_jump_solve_matches_analytic_value() {
        // Without jumps the sweep integrates the pointwise stage maximum, so
        // W(t, x) = V_T(x) + (T - t) * max_u J(x, u) in closed form.
        let lattice = Lattice::unit_interval(31);
        let t_steps = 50;
        let curve = frozen_curve(&lattice, t_steps);
        let k = JumpKernelSpec {
            lambda0: 0.0,
            lambda1: 0.0,
            ..kernel()
        };
        let c = CostSpec {
            a: 0.7,
            c_u: 1.0,
            beta: 0.0,
            beta_t: 0.25,
        };
        let u_set = ctrl();
        let vg = solve_hjb(&curve, &c, &k, &u_set).unwrap();
        let mean = curve.last().mean().unwrap();
        for (i, &t) in vg.times().iter().enumerate() {
            for knode in 0..31 {
                let x = lattice.coord(knode, 0);
                let u_star = u_set.clamp((c.a - x) / c.c_u);
                let analytic = c.terminal(&[x], &mean)
                    + (1.0 - t) * (u_star * (c.a - x) - 0.5 * c.c_u * u_star * u_star);
                assert!(
                    (vg.values()[i][knode] - analytic).abs() < 1e-6,
                    "t={t} x={x}: {} vs {analytic}",
                    vg.values()[i][knode]
                );
            }
        }
    }

    #[test]
    fn intensity_independent_policy_has_exact_lipschitz_constant() {
        // lambda1 = 0 decouples the maximizer from the value: gamma-hat is
        // clamp((a - x) / c_u) with discrete slope exactly 1 / c_u.
        let lattice = Lattice::unit_interval(41);
        let curve = frozen_curve(&lattice, 50);
        let k = JumpKernelSpec {
            lambda1: 0.0,
            ..kernel()
        };
        let vg = solve_hjb(&curve, &cost(), &k, &ctrl()).unwrap();
        for slice in vg.policy_values() {
            for knode in 0..41 {
                let x = lattice.coord(knode, 0);
                let expected = ctrl().clamp((cost().a - x) / cost().c_u);
                assert!((slice[knode] - expected).abs() < 1e-12);
            }
        }
        let report = feedback_regularity_probe(&vg, None).unwrap();
        assert!(
            (report.lip_x - 1.0 / cost().c_u).abs() < 1e-9,
            "lip_x = {}",
            report.lip_x
        );
    }

    #[test]
    fn duhamel_residual_vanishes_without_jumps() {
        let lattice = Lattice::unit_interval(31);
        let curve = frozen_curve(&lattice, 50);
        let k = JumpKernelSpec {
            lambda0: 0.0,
            lambda1: 0.0,
            ..kernel()
        };
        let vg = solve_hjb(&curve, &cost(), &k, &ctrl()).unwrap();
        let resid = duhamel_residual(&vg, &curve, &cost(), &k).unwrap();
        assert!(resid <= 1e-9, "residual {resid}");
    }

    #[test]
    fn regularity_probe_sees_zero_deviation_for_identical_curves() {
        let lattice = Lattice::unit_interval(21);
        let curve = frozen_curve(&lattice, 30);
        let vg = solve_hjb(&curve, &cost(), &kernel(), &ctrl()).unwrap();
        let report = feedback_regularity_probe(&vg, Some((&vg, &curve, &curve))).unwrap();
        assert_eq!(report.policy_deviation, Some(0.0));
        assert_eq!(report.curve_distance, Some(0.0));
        assert!(report.sensitivity_ratio.is_none());
    }

    #[test]
    fn sweep_rejects_unstable_steps_and_ragged_grids() {
        let lattice = Lattice::unit_interval(21);
        let coarse = MeasureCurve::constant(vec![0.0, 0.5, 1.0], init_measure(&lattice)).unwrap();
        // dt = 0.5 against lambda_max = 3 violates the guard.
        assert!(matches!(
            solve_hjb(&coarse, &cost(), &kernel(), &ctrl()),
            Err(CoreError::StabilityGuard { .. })
        ));
        let ragged =
            MeasureCurve::constant(vec![0.0, 0.02, 0.1], init_measure(&lattice)).unwrap();
        assert!(matches!(
            solve_hjb(&ragged, &cost(), &kernel(), &ctrl()),
            Err(CoreError::TimeGridMismatch(_))
        ));
    }

    #[test]
    fn policy_feeds_back_into_kinetic_solver() {
        // Smoke test of the forward-backward plumbing: the extracted policy
        // drives a kinetic solve on the same grid without error.
        let lattice = Lattice::unit_interval(21);
        let curve = frozen_curve(&lattice, 50);
        let vg = solve_hjb(&curve, &cost(), &kernel(), &ctrl()).unwrap();
        let gamma: FeedbackControl = vg.policy().unwrap();
        let cfg = KineticSolveConfig {
            t_steps: 50,
            ..Default::default()
        };
        let mu = solve_kinetic(&init_measure(&lattice), &gamma, &kernel(), &cfg, 1.0).unwrap();
        assert_eq!(mu.len(), 51);
    }

    #[test]
    fn csv_has_header_and_full_row_count() {
        let lattice = Lattice::unit_interval(11);
        let curve = frozen_curve(&lattice, 20);
        let vg = solve_hjb(&curve, &cost(), &kernel(), &ctrl()).unwrap();
        let mut buf = Vec::new();
        vg.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("time,node_index,W,gamma"));
        assert_eq!(lines.count(), 21 * 11);
    }
}
