//! Cross-checks of the forward measure solver against independently
//! assembled linear algebra: matrix-exponential propagation when the kernel
//! ignores the population, a stationary distribution from a dense null-space
//! solve, the scheme order under step refinement, and the exponential
//! sensitivity envelope with the constant taken from the structural probe.

use jumpmfg::matrix::DenseMatrix;
use jumpmfg::rng::{stream, PURPOSE_PROBE};
use jumpmfg::{
    default_scenario, hypothesis_probe, initial_sensitivity_probe, solve_hjb, solve_kinetic,
    ControlSet, FeedbackControl, GridMeasure, Integrator, JumpKernelSpec, Lattice,
    MeasureCurve, ScenarioConfig,
};
use rand::Rng;

/// Dense adjoint matrix for a frozen control value and frozen coupling mean:
/// column y holds the mass flow out of node y, entry (x, y) is
/// lambda * q_y(x) * cellweight(x) minus lambda on the diagonal.
fn adjoint_matrix(
    kernel: &JumpKernelSpec,
    lattice: &Lattice,
    u: f64,
    ctrl: &ControlSet,
    mean: &[f64],
) -> DenseMatrix {
    let n = lattice.n_nodes();
    let lam = kernel.intensity(u, ctrl).unwrap();
    let mut m = DenseMatrix::zeros(n);
    let mut density = vec![0.0; n];
    let mut coords = vec![0.0; lattice.dim()];
    for y in 0..n {
        lattice.write_coords(y, &mut coords);
        kernel.destination_density_into(lattice, &coords, mean, &mut density);
        for x in 0..n {
            let mut entry = lam * density[x] * lattice.cell_weight(x);
            if x == y {
                entry -= lam;
            }
            m.set(x, y, entry);
        }
    }
    m
}

/// Solve M w = b by Gaussian elimination with partial pivoting.
fn dense_solve(m: &DenseMatrix, b: &[f64]) -> Vec<f64> {
    let n = m.n();
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| m.get(i, j)).collect();
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        assert!(a[col][col].abs() > 1e-14, "singular system at column {col}");
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            if f != 0.0 {
                for j in col..=n {
                    a[row][j] -= f * a[col][j];
                }
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut acc = a[row][n];
        for j in (row + 1)..n {
            acc -= a[row][j] * x[j];
        }
        x[row] = acc / a[row][row];
    }
    x
}

fn population_independent_scenario() -> ScenarioConfig {
    let mut s = default_scenario();
    s.kernel.kappa = 0.0;
    s
}

fn constant_policy(s: &ScenarioConfig, u: f64) -> FeedbackControl {
    FeedbackControl::constant(
        vec![0.0, s.horizon],
        s.lattice().unwrap(),
        u,
        s.control,
    )
    .unwrap()
}

#[test]
fn solver_matches_the_matrix_exponential_for_population_independent_kernels() {
    let s = population_independent_scenario();
    let lattice = s.lattice().unwrap();
    let mu0 = s.initial_measure().unwrap();
    let gamma = constant_policy(&s, 0.4);
    let curve = solve_kinetic(&mu0, &gamma, &s.kernel, &s.kinetic, s.horizon).unwrap();

    let mean = mu0.mean().unwrap();
    let a = adjoint_matrix(&s.kernel, &lattice, 0.4, &s.control, &mean);
    for &t in &[0.25, 0.5, 1.0] {
        let oracle = a.expm_apply(t, mu0.weights());
        let snapshot = curve.at_time(t);
        let dev = oracle
            .iter()
            .zip(snapshot.weights())
            .fold(0.0_f64, |m, (o, w)| m.max((o - w).abs()));
        assert!(dev <= 1e-6, "deviation {dev:.3e} from the propagator at t={t}");
    }
}

#[test]
fn null_space_stationary_measure_is_held_fixed_by_the_flow() {
    let s = population_independent_scenario();
    let lattice = s.lattice().unwrap();
    let n = lattice.n_nodes();
    let mean = s.initial_measure().unwrap().mean().unwrap();
    let a = adjoint_matrix(&s.kernel, &lattice, 0.4, &s.control, &mean);

    // A* is rank n-1 (mass conservation); pin the free scale with a unit
    // total-mass row in place of the last equation.
    let mut system = DenseMatrix::zeros(n);
    let mut rhs = vec![0.0; n];
    for i in 0..n - 1 {
        for j in 0..n {
            system.set(i, j, a.get(i, j));
        }
    }
    for j in 0..n {
        system.set(n - 1, j, 1.0);
    }
    rhs[n - 1] = 1.0;
    let w = dense_solve(&system, &rhs);

    let residual = a
        .matvec(&w)
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(residual <= 1e-10, "null-space residual {residual:.3e}");
    assert!(w.iter().all(|&x| x > 0.0), "stationary weights not positive");

    let stationary = GridMeasure::new(lattice, w).unwrap();
    let gamma = constant_policy(&s, 0.4);
    let curve = solve_kinetic(&stationary, &gamma, &s.kernel, &s.kinetic, s.horizon).unwrap();
    for (i, snap) in curve.snapshots().iter().enumerate() {
        let tv = snap.tv_distance(&stationary).unwrap();
        assert!(tv <= 1e-5, "drifted {tv:.3e} from stationarity at step {i}");
    }
}

#[test]
fn euler_error_halves_when_the_step_halves() {
    let s = default_scenario();
    let mu0 = s.initial_measure().unwrap();
    let gamma = constant_policy(&s, 0.4);
    let mut cfg = s.kinetic;
    cfg.integrator = Integrator::Rk4;
    cfg.t_steps = 800;
    let reference = solve_kinetic(&mu0, &gamma, &s.kernel, &cfg, s.horizon).unwrap();
    let err = |steps: usize| -> f64 {
        let mut c = s.kinetic;
        c.integrator = Integrator::Euler;
        c.t_steps = steps;
        let curve = solve_kinetic(&mu0, &gamma, &s.kernel, &c, s.horizon).unwrap();
        curve.last().tv_distance(reference.last()).unwrap()
    };
    let coarse = err(200);
    let fine = err(400);
    let ratio = coarse / fine;
    assert!(
        (1.6..=2.6).contains(&ratio),
        "first-order refinement ratio {ratio:.3} (errors {coarse:.3e}, {fine:.3e})"
    );
}

#[test]
fn population_independent_sensitivity_stays_under_the_operator_norm_envelope() {
    let s = population_independent_scenario();
    let lattice = s.lattice().unwrap();
    let gamma = constant_policy(&s, 0.4);
    let lambda_max = s.kernel.lambda_max(&s.control);
    let mu0 = s.initial_measure().unwrap();
    let eta0 = GridMeasure::from_density(lattice, |x| {
        (-0.5 * ((x[0] - 0.7) / 0.12).powi(2)).exp()
    })
    .unwrap();
    let ratios =
        initial_sensitivity_probe(&mu0, &eta0, &gamma, &s.kernel, &s.kinetic, s.horizon).unwrap();
    let times = s.times();
    for (r, t) in ratios.iter().zip(&times) {
        let envelope = (2.0 * lambda_max * t).exp();
        assert!(
            *r <= envelope * (1.0 + 1e-9),
            "ratio {r:.6} above exp(2 lambda_max t) = {envelope:.6} at t={t}"
        );
    }
}

#[test]
fn sensitivity_envelope_holds_with_the_probed_constant_for_random_pairs() {
    let s = default_scenario();
    let lattice = s.lattice().unwrap();
    let report = hypothesis_probe(&s.kernel, &s.cost, &s.control, &lattice, 2000, 11).unwrap();
    assert!(report.pass, "structural probe failed: {:?}", report.failures);
    let c = report.gronwall_c;

    // Feedback from a genuine backward solve, so the envelope is exercised
    // under a state-dependent policy rather than a constant one.
    let mu0 = s.initial_measure().unwrap();
    let frozen = MeasureCurve::constant(s.times(), mu0).unwrap();
    let gamma = solve_hjb(&frozen, &s.cost, &s.kernel, &s.control)
        .unwrap()
        .policy()
        .unwrap();

    let times = s.times();
    let mut rng = stream(29, PURPOSE_PROBE, 0);
    for pair in 0..10 {
        let mut random_measure = || {
            let weights: Vec<f64> = (0..lattice.n_nodes())
                .map(|_| 0.05 + rng.random::<f64>())
                .collect();
            let total: f64 = weights.iter().sum();
            GridMeasure::new(
                lattice.clone(),
                weights.into_iter().map(|w| w / total).collect(),
            )
            .unwrap()
        };
        let mu = random_measure();
        let eta = random_measure();
        let ratios =
            initial_sensitivity_probe(&mu, &eta, &gamma, &s.kernel, &s.kinetic, s.horizon)
                .unwrap();
        for (r, t) in ratios.iter().zip(&times) {
            let envelope = (c * t).exp();
            assert!(
                *r <= envelope * (1.0 + 1e-9),
                "pair {pair}: ratio {r:.6} above exp(C t) = {envelope:.6} at t={t} (C={c:.3})"
            );
        }
    }
}
