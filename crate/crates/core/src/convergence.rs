//! Convergence experiments: how fast the n-player system approaches its
//! mean-field limit, and how little a tagged player can gain by deviating
//! from the equilibrium feedback law. Both are measured as gaps with Monte
//! Carlo standard errors and reduced to log-log decay rates by weighted
//! least squares with a parametric bootstrap confidence interval.

use std::io::Write as IoWrite;

use crate::error::{CoreError, Result};
use crate::kinetic::solve_kinetic;
use crate::measures::TestFunctional;
use crate::mfg::EquilibriumSolution;
use crate::model::FeedbackControl;
use crate::particle::{simulate_nplayer, simulate_tagged, InitSampler, SimConfig};
use crate::rng::{stream, PURPOSE_BOOTSTRAP};
use crate::scenario::ScenarioConfig;
use crate::stats::{fit_wls, mean_and_se, percentile, standard_normal};

/// One measured point of a gap-versus-n experiment.
#[derive(Clone, Copy, Debug)]
pub struct GapPoint {
    pub n_players: usize,
    pub reps: usize,
    pub gap: f64,
    pub se: f64,
}

/// Weighted log-log decay fit. The interval is the central 98% range of the
/// bootstrap slope distribution.
#[derive(Clone, Copy, Debug)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n_points: usize,
    pub dropped: usize,
}

const BOOTSTRAP_RESAMPLES: usize = 1000;
const CI_LO_Q: f64 = 0.01;
const CI_HI_Q: f64 = 0.99;
/// Adaptive-reps target: stop once se <= gap * this fraction.
pub const SE_GAP_FRACTION: f64 = 0.2;

fn terminal_sim_config(n_players: usize, reps: usize, seed: u64, horizon: f64) -> SimConfig {
    SimConfig {
        n_players,
        reps,
        seed,
        // Only the endpoint snapshot matters for gap estimates.
        record_dt: horizon.max(f64::MIN_POSITIVE),
        sampler: InitSampler::Iid,
        record_jump_times: false,
    }
}

/// Gap between the simulated n-player value of a test functional at the
/// horizon and its deterministic mean-field value, with the standard error of
/// the simulated side. The deterministic side is F applied to the terminal
/// measure of the kinetic flow started from the same initial law.
pub fn functional_gap(
    functional: &TestFunctional,
    n_players: usize,
    reps: usize,
    scenario: &ScenarioConfig,
    gamma: &FeedbackControl,
    seed: u64,
) -> Result<(f64, f64)> {
    scenario.validate()?;
    let lattice = scenario.lattice()?;
    if functional.g().len() != lattice.n_nodes() {
        return Err(CoreError::invalid(
            "functional",
            "test function sampled on a different lattice",
        ));
    }
    let curve = solve_kinetic(
        &scenario.initial_measure()?,
        gamma,
        &scenario.kernel,
        &scenario.kinetic,
        scenario.horizon,
    )?;
    let deterministic = functional.eval_grid(curve.last());

    let cfg = terminal_sim_config(n_players, reps, seed, scenario.horizon);
    let records = simulate_nplayer(scenario, gamma, &cfg)?;
    let values: Vec<f64> = records
        .iter()
        .map(|r| functional.eval_empirical(&r.terminal_empirical(&lattice), &lattice))
        .collect::<Result<_>>()?;
    let (mean, se) = mean_and_se(&values)?;
    Ok(((mean - deterministic).abs(), se))
}

/// Candidate deviations for the equilibrium check: constant controls on a
/// 5-point grid over the control set, plus the policy shifted by +-0.1
/// (clamped into range).
pub fn default_deviations(policy: &FeedbackControl) -> Result<Vec<FeedbackControl>> {
    let ctrl = *policy.control_set();
    let mut out = Vec::with_capacity(7);
    for k in 0..5 {
        let u = ctrl.u_min + (ctrl.u_max - ctrl.u_min) * k as f64 / 4.0;
        out.push(FeedbackControl::constant(
            policy.times().to_vec(),
            policy.lattice().clone(),
            u,
            ctrl,
        )?);
    }
    out.push(policy.shifted(0.1));
    out.push(policy.shifted(-0.1));
    Ok(out)
}

/// Best payoff improvement a tagged player can extract from the given
/// deviation candidates while everyone else follows the equilibrium policy.
/// Both arms of every comparison share the replica random streams, so the
/// per-replica payoff differences are exactly paired; the reported gap is the
/// largest mean difference, floored at zero, with its paired standard error.
pub fn nash_gap(
    n_players: usize,
    reps: usize,
    scenario: &ScenarioConfig,
    equilibrium: &EquilibriumSolution,
    deviations: &[FeedbackControl],
    seed: u64,
) -> Result<(f64, f64)> {
    if deviations.is_empty() {
        return Err(CoreError::invalid(
            "deviations",
            "need at least one candidate deviation",
        ));
    }
    let gamma = &equilibrium.policy;
    let cfg = terminal_sim_config(n_players, reps, seed, scenario.horizon);
    let x0 = &scenario.x0;
    let baseline = simulate_tagged(scenario, gamma, gamma, x0, &cfg)?;
    let base_payoffs: Vec<f64> = baseline.iter().map(|r| r.total_payoffs[0]).collect();

    let mut best: Option<(f64, f64)> = None;
    for deviation in deviations {
        let runs = simulate_tagged(scenario, gamma, deviation, x0, &cfg)?;
        let diffs: Vec<f64> = runs
            .iter()
            .zip(&base_payoffs)
            .map(|(r, b)| r.total_payoffs[0] - b)
            .collect();
        let (mean, se) = mean_and_se(&diffs)?;
        if best.is_none_or(|(m, _)| mean > m) {
            best = Some((mean, se));
        }
    }
    let (gap, se) = best.expect("nonempty deviations");
    Ok((gap.max(0.0), se))
}

fn adapt_reps<E>(base_reps: usize, max_reps: usize, mut estimate: E) -> Result<GapPoint>
where
    E: FnMut(usize) -> Result<(f64, f64)>,
{
    let mut reps = base_reps.max(2);
    loop {
        let (gap, se) = estimate(reps)?;
        if (gap > 0.0 && se <= gap * SE_GAP_FRACTION) || reps >= max_reps {
            return Ok(GapPoint {
                n_players: 0,
                reps,
                gap,
                se,
            });
        }
        reps = (reps * 2).min(max_reps);
    }
}

/// functional_gap over a ladder of system sizes, doubling the replica count
/// per size until the standard error is small next to the gap or the budget
/// cap is hit (the reached count is reported in the point).
pub fn functional_gap_scan(
    functional: &TestFunctional,
    ns: &[usize],
    scenario: &ScenarioConfig,
    gamma: &FeedbackControl,
    seed: u64,
    base_reps: usize,
    max_reps: usize,
) -> Result<Vec<GapPoint>> {
    ns.iter()
        .map(|&n| {
            let mut p = adapt_reps(base_reps, max_reps, |reps| {
                functional_gap(functional, n, reps, scenario, gamma, seed)
            })?;
            p.n_players = n;
            Ok(p)
        })
        .collect()
}

/// nash_gap over a ladder of system sizes with the same adaptive replica rule.
pub fn nash_gap_scan(
    ns: &[usize],
    scenario: &ScenarioConfig,
    equilibrium: &EquilibriumSolution,
    deviations: &[FeedbackControl],
    seed: u64,
    base_reps: usize,
    max_reps: usize,
) -> Result<Vec<GapPoint>> {
    ns.iter()
        .map(|&n| {
            let mut p = adapt_reps(base_reps, max_reps, |reps| {
                nash_gap(n, reps, scenario, equilibrium, deviations, seed)
            })?;
            p.n_players = n;
            Ok(p)
        })
        .collect()
}

/// Fit gap ~ C * n^slope by weighted least squares on (ln n, ln gap) with
/// weights (gap/se)^2, the delta-method precision of ln gap. Points with
/// non-positive gaps are dropped (counted in `dropped`); fewer than 4
/// survivors is an error. The confidence interval comes from a parametric
/// bootstrap: gaps are resampled as Normal(gap, se), truncated positive, and
/// refit with frozen weights.
pub fn rate_fit(points: &[GapPoint], seed: u64) -> Result<RateFit> {
    let surviving: Vec<&GapPoint> = points
        .iter()
        .filter(|p| p.gap > 0.0 && p.gap.is_finite() && p.se.is_finite() && p.se >= 0.0)
        .collect();
    let dropped = points.len() - surviving.len();
    if surviving.len() < 4 {
        return Err(CoreError::InsufficientData(format!(
            "rate fit needs at least 4 positive gaps, have {}",
            surviving.len()
        )));
    }
    let x: Vec<f64> = surviving
        .iter()
        .map(|p| (p.n_players as f64).ln())
        .collect();
    let y: Vec<f64> = surviving.iter().map(|p| p.gap.ln()).collect();
    let mut w: Vec<f64> = surviving
        .iter()
        .map(|p| {
            if p.se > 0.0 {
                (p.gap / p.se) * (p.gap / p.se)
            } else {
                0.0
            }
        })
        .collect();
    // Exact points (se = 0) get the largest finite precision present, or
    // uniform weights when every point is exact.
    let max_w = w.iter().cloned().fold(0.0, f64::max);
    for wi in &mut w {
        if *wi == 0.0 {
            *wi = if max_w > 0.0 { max_w } else { 1.0 };
        }
    }
    let (intercept, slope) = fit_wls(&x, &y, &w)?;

    let mut rng = stream(seed, PURPOSE_BOOTSTRAP, 0);
    let mut slopes = Vec::with_capacity(BOOTSTRAP_RESAMPLES);
    let mut y_star = vec![0.0; surviving.len()];
    for _ in 0..BOOTSTRAP_RESAMPLES {
        for (i, p) in surviving.iter().enumerate() {
            let mut g = p.gap + p.se * standard_normal(&mut rng);
            let mut tries = 0;
            while g <= 0.0 && tries < 64 {
                g = p.gap + p.se * standard_normal(&mut rng);
                tries += 1;
            }
            if g <= 0.0 {
                g = p.gap * 1e-9;
            }
            y_star[i] = g.ln();
        }
        let (_, b) = fit_wls(&x, &y_star, &w)?;
        slopes.push(b);
    }
    slopes.sort_by(|a, b| a.partial_cmp(b).expect("finite slopes"));
    Ok(RateFit {
        slope,
        intercept,
        ci_lo: percentile(&slopes, CI_LO_Q),
        ci_hi: percentile(&slopes, CI_HI_Q),
        n_points: surviving.len(),
        dropped,
    })
}

/// Experiment results CSV `experiment,N,gap,se,slope,ci_lo,ci_hi`. The fit
/// columns repeat on every row of the experiment; they are empty when no fit
/// was computed.
pub fn write_results_csv<W: IoWrite>(
    experiment: &str,
    points: &[GapPoint],
    fit: Option<&RateFit>,
    out: &mut W,
) -> std::io::Result<()> {
    writeln!(out, "experiment,N,gap,se,slope,ci_lo,ci_hi")?;
    let fit_cols = fit.map_or(",,".to_string(), |f| {
        format!("{},{},{}", f.slope, f.ci_lo, f.ci_hi)
    });
    for p in points {
        writeln!(
            out,
            "{},{},{},{},{}",
            experiment, p.n_players, p.gap, p.se, fit_cols
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mfg::{solve_equilibrium, FixedPointConfig};
    use crate::scenario::{decoupled_scenario, default_scenario, ScenarioConfig};

    fn small(scenario: &mut ScenarioConfig) {
        scenario.nodes_per_axis = 41;
        scenario.kinetic.t_steps = 60;
    }

    fn constant_one_functional(s: &ScenarioConfig) -> TestFunctional {
        TestFunctional::Linear {
            g: vec![1.0; s.lattice().unwrap().n_nodes()],
        }
    }

    #[test]
    fn constant_functional_has_zero_gap() {
        let mut s = default_scenario();
        small(&mut s);
        let f = constant_one_functional(&s);
        let gamma = FeedbackControl::constant(s.times(), s.lattice().unwrap(), 0.5, s.control)
            .unwrap();
        let (gap, se) = functional_gap(&f, 6, 20, &s, &gamma, 3).unwrap();
        assert!(gap < 1e-12, "gap {gap}");
        assert!(se < 1e-12, "se {se}");
    }

    #[test]
    fn linear_functional_of_decoupled_flow_is_unbiased() {
        let mut s = decoupled_scenario();
        small(&mut s);
        let lattice = s.lattice().unwrap();
        let g: Vec<f64> = (0..lattice.n_nodes()).map(|k| lattice.coord(k, 0)).collect();
        let f = TestFunctional::Linear { g };
        let gamma = FeedbackControl::constant(s.times(), lattice, 0.5, s.control).unwrap();
        let (gap, se) = functional_gap(&f, 8, 400, &s, &gamma, 5).unwrap();
        assert!(gap <= 3.0 * se.max(1e-4), "gap {gap}, se {se}");
    }

    #[test]
    fn null_deviation_has_exactly_zero_gap() {
        let mut s = decoupled_scenario();
        small(&mut s);
        let eq = solve_equilibrium(
            &s,
            &FixedPointConfig {
                damping: 1.0,
                ..FixedPointConfig::default()
            },
        )
        .unwrap();
        let devs = vec![eq.policy.clone()];
        let (gap, se) = nash_gap(4, 30, &s, &eq, &devs, 7).unwrap();
        assert_eq!((gap, se), (0.0, 0.0));
    }

    #[test]
    fn decoupled_equilibrium_resists_default_deviations() {
        let mut s = decoupled_scenario();
        small(&mut s);
        let eq = solve_equilibrium(
            &s,
            &FixedPointConfig {
                damping: 1.0,
                ..FixedPointConfig::default()
            },
        )
        .unwrap();
        let devs = default_deviations(&eq.policy).unwrap();
        let (gap, se) = nash_gap(5, 300, &s, &eq, &devs, 11).unwrap();
        assert!(gap <= 3.0 * se.max(1e-6), "gap {gap}, se {se}");
    }

    #[test]
    fn rate_fit_recovers_exact_power_laws() {
        let mk = |p: f64, se_frac: f64| -> Vec<GapPoint> {
            [10usize, 20, 40, 80, 160]
                .iter()
                .map(|&n| {
                    let gap = 3.0 * (n as f64).powf(-p);
                    GapPoint {
                        n_players: n,
                        reps: 100,
                        gap,
                        se: se_frac * gap,
                    }
                })
                .collect()
        };
        let fit = rate_fit(&mk(1.0, 0.05), 1).unwrap();
        assert!((fit.slope + 1.0).abs() < 1e-9, "slope {}", fit.slope);
        assert!(fit.ci_lo <= -1.0 && -1.0 <= fit.ci_hi);
        let fit = rate_fit(&mk(1.0 / 3.0, 0.0), 1).unwrap();
        assert!((fit.slope + 1.0 / 3.0).abs() < 1e-9);
        // All points exact: the bootstrap cannot move the fit.
        assert_eq!(fit.ci_lo, fit.ci_hi);
    }

    #[test]
    fn rate_fit_drops_bad_points_and_errors_below_four() {
        let mut points: Vec<GapPoint> = [10usize, 20, 40, 80]
            .iter()
            .map(|&n| GapPoint {
                n_players: n,
                reps: 10,
                gap: 1.0 / n as f64,
                se: 0.01,
            })
            .collect();
        points.push(GapPoint {
            n_players: 160,
            reps: 10,
            gap: 0.0,
            se: 0.01,
        });
        let fit = rate_fit(&points, 2).unwrap();
        assert_eq!((fit.n_points, fit.dropped), (4, 1));
        points.truncate(3);
        assert!(matches!(
            rate_fit(&points, 2),
            Err(CoreError::InsufficientData(_))
        ));
    }

    #[test]
    fn bootstrap_interval_covers_a_noisy_truth() {
        // Correctly specified noise model: the bootstrap resamples with the
        // same scale the data was drawn with, so the interval is calibrated.
        let truth = -1.0;
        let mut covered = 0;
        for trial in 0..40u64 {
            let mut rng = stream(100 + trial, 9, 0);
            let points: Vec<GapPoint> = [20usize, 40, 80, 160, 320]
                .iter()
                .map(|&n| {
                    let exact = 5.0 * (n as f64).powf(truth);
                    let se = 0.1 * exact;
                    GapPoint {
                        n_players: n,
                        reps: 100,
                        gap: (exact + se * standard_normal(&mut rng)).max(exact * 1e-6),
                        se,
                    }
                })
                .collect();
            let fit = rate_fit(&points, 1000 + trial).unwrap();
            if fit.ci_lo <= truth && truth <= fit.ci_hi {
                covered += 1;
            }
        }
        assert!(covered >= 38, "covered {covered}/40");
    }

    #[test]
    fn results_csv_shape() {
        let points = vec![
            GapPoint {
                n_players: 10,
                reps: 100,
                gap: 0.5,
                se: 0.01,
            },
            GapPoint {
                n_players: 20,
                reps: 100,
                gap: 0.25,
                se: 0.01,
            },
        ];
        let mut buf = Vec::new();
        write_results_csv("demo", &points, None, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("experiment,N,gap,se,slope,ci_lo,ci_hi"));
        assert_eq!(lines.next(), Some("demo,10,0.5,0.01,,,"));
        assert_eq!(lines.count(), 1);
    }
}
