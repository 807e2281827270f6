//! Benchmark CLI: runs experiment configs, verifies the hard-instance
//! certificates, self-tests the library's analytic bounds, and prints
//! schedule tables.
//!
//! Exit codes: 0 success, 1 failed verification, 2 configuration or I/O
//! error.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use expstep::harness::{run_experiment, ExperimentConfig};
use expstep::lowerbounds::{
    constant_step_escape_check, interpolating_pair, misestimated_gd_check, poly_gd_gap_lower_bound,
    poly_gd_trajectory, simulate_online_sls, simulate_sls_neighbourhood,
    sls_correlated_expectation_path, sum_prod_identity_check,
};
use expstep::problems::{component_value_grad, full_gradient, minibatch_gradient, FiniteSumProblem};
use expstep::schedules::{
    damped_square_sum_bound, damped_sum_bound, exp_power_bound_holds, exp_sum_lower_bound,
    growth_diagnostic, reciprocal_log_bound_holds, Schedule,
};

const THREADS_ENV: &str = "EXPSTEP_THREADS";

#[derive(Parser)]
#[command(name = "expstep", about = "Step-size schedule benchmarks and verification", version)]
struct Cli {
    /// Worker threads (default: EXPSTEP_THREADS or all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write trace/aggregate CSVs
    Run(RunArgs),
    /// Check the closed-form hard-instance certificates and emit a verdict table
    VerifyLowerbounds(VerifyArgs),
    /// Run the library's analytic property suites
    Selftest,
    /// Print a schedule's decay factors and partial sums
    InspectSchedule(InspectArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a flat key = value config file
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config's `out`)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    /// Directory for the verdict CSV
    #[arg(long, default_value = "results")]
    out: PathBuf,
    /// Monte-Carlo seeds for the expectation-floor certification
    #[arg(long, default_value_t = 10_000)]
    seeds: usize,
}

#[derive(Args)]
struct InspectArgs {
    /// constant | poly | exp | kr20
    #[arg(long)]
    schedule: String,
    /// Horizon T
    #[arg(long, short = 'T', alias = "T")]
    horizon: usize,
    #[arg(long, default_value_t = 0.5)]
    delta: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// Smoothness L (kr20)
    #[arg(long, default_value_t = 1.0)]
    smoothness: f64,
    /// Strong convexity mu (kr20)
    #[arg(long, default_value_t = 0.01)]
    strong_convexity: f64,
    /// Growth constant rho (kr20)
    #[arg(long, default_value_t = 10.0)]
    growth: f64,
}

fn main() -> ExitCode {
    // die quietly when output is piped into a pager that exits early
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var(THREADS_ENV)
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: failed to configure {n} worker threads: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::VerifyLowerbounds(args) => cmd_verify(args),
        Command::Selftest => cmd_selftest(),
        Command::InspectSchedule(args) => cmd_inspect(args),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<bool> {
    let mut cfg = ExperimentConfig::from_file(&args.config)
        .with_context(|| format!("reading config {}", args.config.display()))?;
    if let Some(out) = args.out {
        cfg.out_dir = out;
    }
    let output = run_experiment(&cfg)?;
    for (i, agg) in output.aggregates.iter().enumerate() {
        let marker = if i == output.best { "  <- selected" } else { "" };
        println!(
            "rho {:>8}: final mean grad norm {:.6e}, diverged {}/{}{}",
            agg.growth.map_or("none".to_string(), |g| g.to_string()),
            agg.final_mean_grad_norm,
            agg.diverged_runs,
            cfg.seeds,
            marker,
        );
    }
    println!("wrote {} files to {}", output.files.len(), cfg.out_dir.display());
    Ok(true)
}

struct VerdictTable {
    rows: Vec<(String, String, bool)>,
}

impl VerdictTable {
    fn new() -> Self {
        Self { rows: Vec::new() }
    }

    fn push(&mut self, name: &str, detail: String, pass: bool) {
        println!("[{}] {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        self.rows.push((name.to_string(), detail, pass));
    }

    fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.2)
    }

    fn to_csv(&self) -> String {
        let mut out = String::from("check,detail,pass\n");
        for (name, detail, pass) in &self.rows {
            let _ = writeln!(out, "{name},\"{detail}\",{}", if *pass { 1 } else { 0 });
        }
        out
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<bool> {
    let mut table = VerdictTable::new();

    // exact 1/(T+1) law for the unit polynomial exponent
    {
        let mut worst = 0.0f64;
        for t in [10usize, 100, 1_000, 10_000] {
            let traj = poly_gd_trajectory(2.0, 0.0, 1.0, t, 1.0)?;
            let exact = 1.0 / (t as f64 + 1.0);
            worst = worst.max((traj.gap(t + 1) - exact).abs() / exact);
        }
        table.push(
            "poly-decay unit exponent exact law",
            format!("worst relative error {worst:.2e}"),
            worst <= 1e-12,
        );
    }

    // sub-unit exponents respect the closed-form lower bound
    {
        let mut ok = true;
        for &delta in &[0.25, 0.5, 0.75] {
            let threshold = 2.0f64.powf(1.0 / delta).floor() as usize;
            let traj = poly_gd_trajectory(2.0, 0.0, delta, 10_000, 1.0)?;
            for t in (threshold..=10_000).step_by(97) {
                ok &= traj.gap(t + 1) >= poly_gd_gap_lower_bound(delta, t)?;
            }
        }
        table.push(
            "poly-decay sub-unit exponent floor",
            "gap >= closed-form floor for delta in {0.25, 0.5, 0.75}, T <= 10^4".into(),
            ok,
        );
    }

    // constant-step escape on a 10^4 grid
    {
        let ok = (0..10_000).all(|i| {
            let w = -0.125 + (i as f64 + 0.5) * 0.25 / 10_000.0;
            constant_step_escape_check(w)
        });
        table.push(
            "constant-step ball escape",
            "both successors leave the 1/8-ball at 10^4 grid points".into(),
            ok,
        );
    }

    // misestimation amplification certificates
    {
        let mut ok = true;
        let mut detail = String::new();
        for &t in &[100usize, 1_000] {
            for &nu in &[5.0, 10.0, 100.0] {
                let rep = misestimated_gd_check(nu, 1.0, t, 1.0, 1.0, 0.0)?;
                ok &= rep.multipliers_below_minus_two && rep.amplification_certified;
                let _ = write!(detail, "nu={nu} T={t}: 2^{} ", rep.floor_threshold);
            }
        }
        table.push("misestimation amplification", detail.trim().to_string(), ok);
    }

    // telescoping identity
    {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst = 0.0f64;
        for _ in 0..1_000 {
            let len = rng.random_range(1..=200);
            let alphas: Vec<f64> = (0..len).map(|_| rng.random::<f64>()).collect();
            worst = worst.max(sum_prod_identity_check(&alphas));
        }
        table.push(
            "sum-product identity",
            format!("worst residual {worst:.2e} over 10^3 random sequences"),
            worst <= 1e-10,
        );
    }

    // expectation floor: recursion path and Monte-Carlo certification
    {
        let t = 1_000;
        let schedule = Schedule::exponential(1.0, t)?;
        let path = sls_correlated_expectation_path(1.0, 0.5, &schedule, t)?;
        let floor_ok = path.iter().all(|v| *v >= 0.375 - 1e-12);
        let recursion = *path.last().expect("non-empty path");
        table.push(
            "online-search expectation floor (recursion)",
            format!("min over path {:.6}", path.iter().cloned().fold(f64::INFINITY, f64::min)),
            floor_ok,
        );
        let (mc, se) = simulate_sls_neighbourhood(args.seeds, t, &schedule, 1.0)?;
        let ok = (mc - recursion).abs() <= 3.0 * se && mc >= 0.375 - 3.0 * se;
        table.push(
            "online-search expectation floor (monte-carlo)",
            format!("mean {mc:.6} vs recursion {recursion:.6} (se {se:.1e})"),
            ok,
        );
    }

    // interpolation control: the neighbourhood vanishes
    {
        let t = 1_000;
        let schedule = Schedule::exponential(1.0, t)?;
        let (mc, _) = simulate_online_sls(&interpolating_pair(), 1_000, t, &schedule, 5.0)?;
        table.push(
            "interpolating control converges",
            format!("mean final iterate {mc:.3e} (minimizer 1)"),
            (mc - 1.0).abs() <= 1e-6,
        );
    }

    std::fs::create_dir_all(&args.out)?;
    let csv_path = args.out.join("lowerbound_verdicts.csv");
    std::fs::write(&csv_path, table.to_csv())?;
    println!("verdict table written to {}", csv_path.display());
    Ok(table.all_pass())
}

fn cmd_selftest() -> Result<bool> {
    let mut table = VerdictTable::new();

    // summation bounds over the verification grid
    {
        let mut ok = true;
        for &t in &[100usize, 1_000, 10_000] {
            for &beta in &[1.0, 2.0, 10.0] {
                ok &= exp_sum_lower_bound(beta, t)?.holds;
                for &kappa in &[10.0, 100.0, 1_000.0] {
                    ok &= damped_square_sum_bound(beta, t, kappa)?.holds;
                    ok &= damped_sum_bound(beta, t, kappa)?.holds;
                }
            }
        }
        table.push("schedule summation bounds", "T x beta x kappa grid".into(), ok);
    }

    // helper inequalities on log-spaced sweeps
    {
        let mut ok = true;
        for i in 0..10_000 {
            let x = 10f64.powf(-6.0 + 12.0 * i as f64 / 9_999.0);
            ok &= reciprocal_log_bound_holds(1.0 + x);
        }
        for i in 0..100 {
            for j in 0..100 {
                let x = 10f64.powf(-6.0 + 9.0 * i as f64 / 99.0);
                let p = 10f64.powf(-6.0 + 9.0 * j as f64 / 99.0);
                ok &= exp_power_bound_holds(x, p);
            }
        }
        table.push("helper inequalities", "10^4-point sweeps".into(), ok);
    }

    // gradient oracles against central differences
    {
        let p = expstep::harness::synthetic_linear_model(
            30,
            4,
            expstep::Loss::Logistic,
            0.05,
            3.0,
            0.2,
            0.3,
            11,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut worst = 0.0f64;
        for _ in 0..100 {
            let w: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let i = rng.random_range(0..30);
            let (_, g) = component_value_grad(&p, i, &w)?;
            let h = 1e-5 * (1.0 + w.iter().map(|x| x * x).sum::<f64>().sqrt());
            for j in 0..4 {
                let mut hi = w.clone();
                let mut lo = w.clone();
                hi[j] += h;
                lo[j] -= h;
                let fd = (p.component_value(i, &hi) - p.component_value(i, &lo)) / (2.0 * h);
                worst = worst.max((g[j] - fd).abs() / g[j].abs().max(1.0));
            }
        }
        table.push(
            "analytic gradients vs central differences",
            format!("worst relative deviation {worst:.2e}"),
            worst <= 1e-6,
        );
    }

    // mini-batch unbiasedness (quick Monte-Carlo)
    {
        let p = expstep::QuadraticSum::new_1d(&[1.0, 2.0, 0.7, 1.3], &[0.3, -1.0, 2.0, 0.0]);
        let w = [1.1];
        let full = full_gradient(&p, &w)?[0];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let draws = 100_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..draws {
            let g = minibatch_gradient(&p, 2, &mut rng, &w)?[0];
            sum += g;
            sum_sq += g * g;
        }
        let mean = sum / draws as f64;
        let se = ((sum_sq / draws as f64 - mean * mean) / draws as f64).sqrt();
        table.push(
            "mini-batch unbiasedness",
            format!("|mean - full| = {:.2e} (3 se = {:.2e})", (mean - full).abs(), 3.0 * se),
            (mean - full).abs() <= 3.0 * se,
        );
    }

    // mini-batch noise bound on a seeded quadratic sum
    {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<f64> = (0..8).map(|_| rng.random_range(0.6..1.8)).collect();
        let ys: Vec<f64> = (0..8).map(|_| rng.random_range(-1.5..1.5)).collect();
        let p = expstep::QuadraticSum::new_1d(&xs, &ys);
        let mut ok = true;
        for b in [1usize, 2, 4, 8] {
            ok &= expstep::problems::minibatch_noise_check(&p, b, 20_000, &mut rng)?.holds;
        }
        table.push("mini-batch noise bound", "B in {1, 2, 4, 8}".into(), ok);
    }

    Ok(table.all_pass())
}

fn cmd_inspect(args: InspectArgs) -> Result<bool> {
    let schedule = match args.schedule.as_str() {
        "constant" => Schedule::constant(),
        "poly" => Schedule::polynomial(args.delta)?,
        "exp" => Schedule::exponential(args.beta, args.horizon)?,
        "kr20" => Schedule::kr20(
            args.smoothness,
            args.strong_convexity,
            args.growth,
            args.horizon,
        )?,
        other => bail!("unknown schedule '{other}' (expected constant|poly|exp|kr20)"),
    };
    let t = args.horizon;
    let step = (t / 20).max(1);
    let is_step_schedule = matches!(schedule, Schedule::Kr20 { .. });
    if is_step_schedule {
        println!("{:>8}  {:>24}", "k", "step_size");
        for k in (0..=t).step_by(step) {
            println!("{k:>8}  {:>24.16e}", schedule.kr20_step(k)?);
        }
        let last = schedule.kr20_step(t)?;
        println!("final step at T: {last:.16e}");
    } else {
        println!("{:>8}  {:>24}", "k", "alpha_k");
        for k in (0..=t).step_by(step) {
            println!("{k:>8}  {:>24.16e}", schedule.alpha_at(k)?);
        }
        let d = growth_diagnostic(&schedule, t)?;
        println!("sum alpha_k (k=1..T)   = {:.16e}", d.sum_alpha);
        println!("sum alpha_k^2 (k=1..T) = {:.16e}", d.sum_alpha_sq);
        println!(
            "linear-growth ratio sum/T = {:.3e}, root ratio sum_sq/sqrt(T) = {:.3e}",
            d.linear_ratio, d.root_ratio
        );
        println!("(a noise-adaptive convex schedule would need the first ratio bounded away from 0 and the second bounded; no fixed decay family achieves both)");
    }
    Ok(true)
}
