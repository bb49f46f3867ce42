//! Subcommand bodies. Every runner validates before computing, writes its
//! outputs into the run directory, and reports the produced file names so the
//! caller can stamp them into the manifest.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use jumpmfg::{
    smoothing_bound_report, default_deviations, functional_gap_scan, hypothesis_probe,
    nash_gap_scan, rate_fit, simulate_nplayer, solve_equilibrium, solve_hjb, solve_kinetic,
    write_bounds_csv, write_paths_csv, write_payoffs_csv, write_results_csv, EquilibriumSolution,
    FeedbackControl, GapPoint, InitSampler, MeasureCurve, RateFit, SimConfig, TestFunctional,
};

use crate::config::RunConfig;

pub enum Failure {
    /// The configuration is unusable: parse error, failed validation, or a
    /// scenario that violates the standing structural hypotheses.
    Config(String),
    /// The fixed-point loop exhausted its iteration budget. Any files listed
    /// in `outputs` were still written for inspection.
    NonConverged { message: String, outputs: Vec<String> },
    Other(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::NonConverged { .. } => 3,
            Failure::Other(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Other(m) => m,
            Failure::NonConverged { message, .. } => message,
        }
    }
}

fn other(e: impl std::fmt::Display) -> Failure {
    Failure::Other(e.to_string())
}

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub seed: u64,
    pub out_dir: &'a Path,
}

impl Ctx<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn writer(&self, name: &str) -> Result<BufWriter<File>, Failure> {
        File::create(self.path(name))
            .map(BufWriter::new)
            .map_err(|e| Failure::Other(format!("cannot create {name}: {e}")))
    }

    fn constant_policy(&self) -> Result<FeedbackControl, Failure> {
        let s = &self.cfg.scenario;
        FeedbackControl::constant(
            vec![0.0, s.horizon],
            s.lattice().map_err(other)?,
            self.cfg.experiments.control_level,
            s.control,
        )
        .map_err(other)
    }

    fn frozen_curve(&self) -> Result<MeasureCurve, Failure> {
        let s = &self.cfg.scenario;
        solve_kinetic(
            &s.initial_measure().map_err(other)?,
            &self.constant_policy()?,
            &s.kernel,
            &s.kinetic,
            s.horizon,
        )
        .map_err(other)
    }

    fn equilibrium(&self) -> Result<EquilibriumSolution, Failure> {
        let sol =
            solve_equilibrium(&self.cfg.scenario, &self.cfg.solver.fixed_point()).map_err(other)?;
        if !sol.converged {
            return Err(Failure::NonConverged {
                message: format!(
                    "fixed point stalled at residual {:.3e} after {} iterations (tol {:.1e})",
                    sol.residual, sol.iterations, self.cfg.solver.tol
                ),
                outputs: Vec::new(),
            });
        }
        Ok(sol)
    }

    /// Squared first-coordinate barycenter, centered at the limit's terminal
    /// barycenter under the given policy. Centering puts the limit value near
    /// zero, so the simulated gap is essentially the empirical variance: a
    /// strictly positive 1/N signal whose relative standard error does not
    /// grow with the system size.
    fn gap_functional(&self, gamma: &FeedbackControl) -> Result<TestFunctional, Failure> {
        let s = &self.cfg.scenario;
        let lattice = s.lattice().map_err(other)?;
        let curve = solve_kinetic(
            &s.initial_measure().map_err(other)?,
            gamma,
            &s.kernel,
            &s.kinetic,
            s.horizon,
        )
        .map_err(other)?;
        let center = curve.last().mean().map_err(other)?[0];
        let g = (0..lattice.n_nodes())
            .map(|k| lattice.coord(k, 0) - center)
            .collect();
        Ok(TestFunctional::QuadraticOfLinear { g })
    }
}

pub fn hypcheck(ctx: &Ctx) -> Result<Vec<String>, Failure> {
    let s = &ctx.cfg.scenario;
    let report = hypothesis_probe(
        &s.kernel,
        &s.cost,
        &s.control,
        &s.lattice().map_err(other)?,
        ctx.cfg.experiments.probe_samples,
        ctx.seed,
    )
    .map_err(other)?;
    let json = serde_json::json!({
        "lambda_max": report.lambda_max,
        "lip_x": report.lip_x,
        "lip_mu": report.lip_mu,
        "lip_u": report.lip_u,
        "uu_curvature": report.uu_curvature,
        "gronwall_c": report.gronwall_c,
        "pass": report.pass,
        "failures": report.failures,
    });
    let mut w = ctx.writer("hypcheck.json")?;
    writeln!(w, "{}", serde_json::to_string_pretty(&json).map_err(other)?).map_err(other)?;
    println!(
        "lambda_max {:.4}  lip_x {:.4}  lip_mu {:.4}  lip_u {:.4}  curvature {:.4}  growth constant {:.4}",
        report.lambda_max,
        report.lip_x,
        report.lip_mu,
        report.lip_u,
        report.uu_curvature,
        report.gronwall_c
    );
    if !report.pass {
        for f in &report.failures {
            eprintln!("hypothesis violated: {f}");
        }
        return Err(Failure::Config(
            "scenario violates the standing structural hypotheses; see hypcheck.json".into(),
        ));
    }
    println!("all structural hypotheses hold");
    Ok(vec!["hypcheck.json".into()])
}

pub fn kinetic(ctx: &Ctx) -> Result<Vec<String>, Failure> {
    let curve = ctx.frozen_curve()?;
    let mut w = ctx.writer("curve.csv")?;
    curve.write_csv(&mut w).map_err(other)?;
    let mean = curve.last().mean().map_err(other)?;
    println!(
        "propagated {} snapshots; terminal barycenter {:?}",
        curve.times().len(),
        mean
    );
    Ok(vec!["curve.csv".into()])
}

pub fn hjb(ctx: &Ctx) -> Result<Vec<String>, Failure> {
    let s = &ctx.cfg.scenario;
    let curve = ctx.frozen_curve()?;
    let vg = solve_hjb(&curve, &s.cost, &s.kernel, &s.control).map_err(other)?;
    let mut w = ctx.writer("value.csv")?;
    vg.write_csv(&mut w).map_err(other)?;
    let start = jumpmfg::nearest_node(&s.lattice().map_err(other)?, &s.x0).map_err(other)?;
    println!("value at the start state: {:.6}", vg.values()[0][start]);
    Ok(vec!["value.csv".into()])
}

pub fn equilibrium(ctx: &Ctx) -> Result<Vec<String>, Failure> {
    let sol = solve_equilibrium(&ctx.cfg.scenario, &ctx.cfg.solver.fixed_point()).map_err(other)?;
    let outputs = vec![
        "residuals.csv".to_string(),
        "equilibrium_curve.csv".to_string(),
        "value.csv".to_string(),
    ];
    let mut w = ctx.writer("residuals.csv")?;
    sol.write_residual_csv(&mut w).map_err(other)?;
    let mut w = ctx.writer("equilibrium_curve.csv")?;
    sol.curve.write_csv(&mut w).map_err(other)?;
    let mut w = ctx.writer("value.csv")?;
    sol.value.write_csv(&mut w).map_err(other)?;
    println!(
        "{} after {} iterations, residual {:.3e}",
        if sol.converged { "converged" } else { "NOT CONVERGED" },
        sol.iterations,
        sol.residual
    );
    if !sol.converged {
        return Err(Failure::NonConverged {
            message: format!(
                "fixed point stalled at residual {:.3e} after {} iterations (tol {:.1e})",
                sol.residual, sol.iterations, ctx.cfg.solver.tol
            ),
            outputs,
        });
    }
    Ok(outputs)
}

pub fn simulate(
    ctx: &Ctx,
    players: Option<usize>,
    reps: Option<usize>,
) -> Result<Vec<String>, Failure> {
    let s = &ctx.cfg.scenario;
    let cfg = SimConfig {
        n_players: players.unwrap_or(ctx.cfg.experiments.sim_players),
        reps: reps.unwrap_or(ctx.cfg.experiments.sim_reps),
        seed: ctx.seed,
        record_dt: s.horizon / 20.0,
        sampler: InitSampler::Iid,
        record_jump_times: false,
    };
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    let records = simulate_nplayer(s, &ctx.constant_policy()?, &cfg).map_err(other)?;
    let lattice = s.lattice().map_err(other)?;
    let mut w = ctx.writer("paths.csv")?;
    write_paths_csv(&records, &lattice, &mut w).map_err(other)?;
    let mut w = ctx.writer("payoffs.csv")?;
    write_payoffs_csv(&records, &mut w).map_err(other)?;
    let jumps: u64 = records.iter().map(|r| r.jump_counts.iter().sum::<u64>()).sum();
    println!(
        "{} replicas of {} players, {} accepted jumps",
        records.len(),
        cfg.n_players,
        jumps
    );
    Ok(vec!["paths.csv".into(), "payoffs.csv".into()])
}

fn print_points(experiment: &str, points: &[GapPoint], fit: Option<&RateFit>) {
    for p in points {
        println!(
            "{experiment} N={:<4} gap {:.6e}  se {:.2e}  reps {}",
            p.n_players, p.gap, p.se, p.reps
        );
    }
    match fit {
        Some(f) => println!(
            "decay rate {:.3} with 98% interval [{:.3}, {:.3}] from {} points",
            f.slope, f.ci_lo, f.ci_hi, f.n_points
        ),
        None => println!("no decay fit: fewer than 4 positive gap points"),
    }
}

pub fn functional_gap(ctx: &Ctx, ns: Option<Vec<usize>>) -> Result<Vec<String>, Failure> {
    let sol = ctx.equilibrium()?;
    let ns = ns.unwrap_or_else(|| ctx.cfg.experiments.n_list.clone());
    let functional = ctx.gap_functional(&sol.policy)?;
    let points = functional_gap_scan(
        &functional,
        &ns,
        &ctx.cfg.scenario,
        &sol.policy,
        ctx.seed,
        ctx.cfg.experiments.base_reps,
        ctx.cfg.experiments.max_reps,
    )
    .map_err(other)?;
    let fit = rate_fit(&points, ctx.seed).ok();
    let mut w = ctx.writer("functional_gap.csv")?;
    write_results_csv("functional_gap", &points, fit.as_ref(), &mut w).map_err(other)?;
    print_points("functional_gap", &points, fit.as_ref());
    Ok(vec!["functional_gap.csv".into()])
}

pub fn nash_gap(ctx: &Ctx, ns: Option<Vec<usize>>) -> Result<Vec<String>, Failure> {
    let sol = ctx.equilibrium()?;
    let ns = ns.unwrap_or_else(|| ctx.cfg.experiments.n_list.clone());
    let deviations = default_deviations(&sol.policy).map_err(other)?;
    let points = nash_gap_scan(
        &ns,
        &ctx.cfg.scenario,
        &sol,
        &deviations,
        ctx.seed,
        ctx.cfg.experiments.base_reps,
        ctx.cfg.experiments.max_reps,
    )
    .map_err(other)?;
    let fit = rate_fit(&points, ctx.seed).ok();
    let mut w = ctx.writer("nash_gap.csv")?;
    write_results_csv("nash_gap", &points, fit.as_ref(), &mut w).map_err(other)?;
    print_points("nash_gap", &points, fit.as_ref());
    Ok(vec!["nash_gap.csv".into()])
}

pub fn mollify_check(ctx: &Ctx) -> Result<Vec<String>, Failure> {
    let e = &ctx.cfg.experiments;
    let rows =
        smoothing_bound_report(&e.bound_js, &e.bound_deltas, &e.bound_dims, ctx.seed)
            .map_err(other)?;
    let mut w = ctx.writer("bounds.csv")?;
    write_bounds_csv(&rows, &mut w).map_err(other)?;
    let violated: Vec<&str> = rows
        .iter()
        .filter(|r| !r.holds())
        .map(|r| r.name.as_str())
        .collect();
    println!("checked {} smoothing bounds, {} violated", rows.len(), violated.len());
    if !violated.is_empty() {
        return Err(Failure::Other(format!(
            "violated bounds: {}",
            violated.join(", ")
        )));
    }
    Ok(vec!["bounds.csv".into()])
}
