//! `rpts`: run seeded bandit experiments and analyze particle survival.
//!
//! Subcommands: `run` executes an experiment config and writes a run
//! directory; `envelope` prints the divergence diagram of a particle set;
//! `survive` scores recorded runs against the stationarity condition;
//! `approx-check` compares the closed-form netslice reward approximation
//! with quadrature and Monte-Carlo oracles.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use rpts_core::harness;
use rpts_core::netslice::{self, check};
use rpts_core::rng;

#[derive(Parser)]
#[command(name = "rpts", version, about = "Particle Thompson sampling experiment harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write its run directory.
    Run(RunArgs),
    /// Divergence diagram of a two-arm particle set: breakpoints, meeting
    /// particles, contraction-set membership.
    Envelope(EnvelopeArgs),
    /// Survival-condition reports for a recorded run directory.
    Survive(SurviveArgs),
    /// Netslice reward approximation versus quadrature and Monte-Carlo
    /// oracles on a grid of (mu1, mu2, mu3, d) rows.
    ApproxCheck(ApproxCheckArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the config's base_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's run count.
    #[arg(long)]
    runs: Option<usize>,
    /// Override the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for run execution (default: one per CPU).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Args)]
struct EnvelopeArgs {
    /// True arm means, e.g. 0.5,0.5.
    #[arg(long, value_parser = parse_theta_star)]
    theta_star: ThetaStar,
    /// Particle CSV: one particle per row, two coordinates.
    #[arg(long)]
    particles: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SurviveArgs {
    /// Run directory written by `rpts run` with particle snapshots recorded.
    #[arg(long)]
    run_dir: PathBuf,
    /// Slack for the stationarity check and the support cutoff.
    #[arg(long, default_value_t = 0.01)]
    tol: f64,
}

#[derive(Args)]
struct ApproxCheckArgs {
    /// Grid CSV with rows mu1,mu2,mu3,d (header optional).
    #[arg(long)]
    grid: PathBuf,
    /// Monte-Carlo sample count per row.
    #[arg(long, default_value_t = 100_000)]
    mc_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone)]
struct ThetaStar([f64; 2]);

fn parse_theta_star(s: &str) -> Result<ThetaStar, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected two comma-separated means, got `{s}`"));
    }
    let mut theta = [0.0; 2];
    for (slot, part) in theta.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse::<f64>()
            .map_err(|_| format!("invalid mean `{part}`"))?;
        if !(0.0..=1.0).contains(slot) {
            return Err(format!("mean {slot} outside [0, 1]"));
        }
    }
    Ok(ThetaStar(theta))
}

fn main() {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Envelope(args) => cmd_envelope(args),
        Command::Survive(args) => cmd_survive(args),
        Command::ApproxCheck(args) => cmd_approx_check(args),
    };
    if let Err(e) = outcome {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn cmd_run(args: RunArgs) -> anyhow::Result<()> {
    let mut cfg = harness::load_config(&args.config)
        .with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.base_seed = seed;
    }
    if let Some(runs) = args.runs {
        cfg.runs = runs;
    }
    if let Some(out) = args.out {
        cfg.output_dir = Some(out);
    }
    cfg.validate()?;
    let Some(out_dir) = cfg.output_dir.clone() else {
        bail!("no output directory: set output_dir in the config or pass --out");
    };

    let result = harness::run_experiment_with_workers(&cfg, args.workers)?;
    let agg = &result.aggregate;
    let last = agg.mean_cum_regret.len() - 1;
    println!(
        "{} on {}: {} runs, horizon {}",
        cfg.algorithm,
        cfg.env.name(),
        agg.runs,
        cfg.horizon
    );
    println!(
        "final cumulative regret {:.4} +/- {:.4} (stderr), final running average {:.6}",
        agg.mean_cum_regret[last], agg.stderr_cum_regret[last], agg.mean_avg_regret[last]
    );
    println!(
        "wall clock {:.2}s, artifacts in {}",
        agg.wall_clock.as_secs_f64(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_envelope(args: EnvelopeArgs) -> anyhow::Result<()> {
    let particles = harness::load_particles_csv(&args.particles)?;
    let rows = harness::envelope_report(&args.theta_star.0, &particles)?;
    match &args.out {
        Some(path) => {
            harness::write_envelope_csv(path, &rows)?;
            let in_set: Vec<String> = rows
                .iter()
                .filter(|r| r.in_contraction_set)
                .map(|r| format!("{}", r.breakpoint))
                .collect();
            println!(
                "{} breakpoints, contraction set {{{}}}, report in {}",
                rows.len(),
                in_set.join(", "),
                path.display()
            );
        }
        None => {
            println!("breakpoint,particle_a,particle_b,in_contraction_set");
            for row in &rows {
                println!(
                    "{},{},{},{}",
                    row.breakpoint,
                    row.particle_a,
                    row.particle_b.map_or_else(String::new, |p| p.to_string()),
                    row.in_contraction_set
                );
            }
        }
    }
    Ok(())
}

fn cmd_survive(args: SurviveArgs) -> anyhow::Result<()> {
    if !(args.tol > 0.0) {
        bail!("tol must be positive, got {}", args.tol);
    }
    let reports = harness::survival_reports_for_run_dir(&args.run_dir, args.tol)?;
    let out = args.run_dir.join("survival_report.csv");
    harness::write_survival_csv(&out, &reports)?;
    let held = reports.iter().filter(|(_, r)| r.holds()).count();
    for (run, report) in &reports {
        println!(
            "run {run}: {} ({} survivors at tol {})",
            if report.holds() { "holds" } else { "violated" },
            report.support.len(),
            report.tol
        );
    }
    println!(
        "survival condition holds in {held}/{} runs; report in {}",
        reports.len(),
        out.display()
    );
    Ok(())
}

fn load_grid(path: &Path) -> anyhow::Result<Vec<[f64; 4]>> {
    let rows = harness::load_particles_csv(path)
        .with_context(|| format!("loading grid {}", path.display()))?;
    let mut grid = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.len() != 4 {
            bail!(
                "{}: grid row {} has {} fields, expected mu1,mu2,mu3,d",
                path.display(),
                i + 1,
                row.len()
            );
        }
        let [mu1, mu2, mu3, d] = [row[0], row[1], row[2], row[3]];
        if row[..3].iter().any(|&m| m < 0.0) {
            bail!("{}: grid row {} has a negative mean", path.display(), i + 1);
        }
        if !(d > 0.0) {
            bail!(
                "{}: grid row {} needs a positive deadline, got {d}",
                path.display(),
                i + 1
            );
        }
        if row[..3].iter().all(|&m| m == 0.0) {
            bail!(
                "{}: grid row {} has all-zero means; the quadrature oracle needs positive variance",
                path.display(),
                i + 1
            );
        }
        grid.push([mu1, mu2, mu3, d]);
    }
    Ok(grid)
}

fn cmd_approx_check(args: ApproxCheckArgs) -> anyhow::Result<()> {
    if args.mc_samples == 0 {
        bail!("mc_samples must be at least 1");
    }
    let grid = load_grid(&args.grid)?;
    let mut rng = rng::seeded(args.seed);
    let mut lines = vec![
        "mu1,mu2,mu3,d,formula,quadrature,quad_gap,mc,mc_gap".to_string(),
    ];
    let mut max_quad_gap: f64 = 0.0;
    let mut max_mc_gap: f64 = 0.0;
    for &[mu1, mu2, mu3, d] in &grid {
        let means = [mu1, mu2, mu3];
        let formula = netslice::approx_expected_reward(&means, d);
        let mu: f64 = means.iter().sum();
        let sigma2: f64 = means.iter().map(|m| m * m).sum();
        let quadrature = check::quadrature_expected_reward(mu, sigma2, d);
        let mc = check::mc_hypoexponential_reward(&means, d, args.mc_samples, &mut rng);
        let quad_gap = (formula - quadrature).abs();
        let mc_gap = (formula - mc).abs();
        max_quad_gap = max_quad_gap.max(quad_gap);
        max_mc_gap = max_mc_gap.max(mc_gap);
        lines.push(format!(
            "{mu1},{mu2},{mu3},{d},{formula},{quadrature},{quad_gap},{mc},{mc_gap}"
        ));
    }
    match &args.out {
        Some(path) => {
            let mut text = lines.join("\n");
            text.push('\n');
            std::fs::write(path, text)
                .with_context(|| format!("writing {}", path.display()))?;
            println!(
                "{} rows checked: max |formula - quadrature| = {max_quad_gap:.3e}, max |formula - mc| = {max_mc_gap:.3e} ({} samples); report in {}",
                grid.len(),
                args.mc_samples,
                path.display()
            );
        }
        None => {
            for line in &lines {
                println!("{line}");
            }
            eprintln!(
                "max |formula - quadrature| = {max_quad_gap:.3e}, max |formula - mc| = {max_mc_gap:.3e}"
            );
        }
    }
    Ok(())
}
