//! Seeded run execution and cross-run aggregation.
//!
//! Run `i` of an experiment draws everything from one generator seeded with
//! `base_seed + i`, so a run is reproducible in isolation and the experiment
//! is identical under any scheduling of its runs. Aggregation is a
//! sequential reduction over runs in index order.

use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::bandit::{
    instantaneous_regret, Action, EnvironmentSpec, ParticleSystem, RegretTrace,
};
use crate::error::{Error, Result};
use crate::netslice::{
    contextual_regret, netslice_pts_step, netslice_rpts_step, sample_context, BlockParticles,
    LatencyModel,
};
use crate::rng;
use crate::samplers::{
    pts_step, rpts_step, ts_beta_step, ts_kalman_step, BetaPosterior, GaussianPosterior,
};
use crate::survival::{divergence_lines, drift_matrix, lower_envelope, survival_condition_check, SurvivalReport};

use super::config::{Algorithm, ExperimentConfig};

/// Downsampled weight trajectory of one run. Sampling times are every
/// `record_stride` steps plus the final step; the vectors that were not
/// requested stay empty.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightLog {
    pub times: Vec<u64>,
    /// Normalized log weights at each sampling time.
    pub log_weights: Vec<Vec<f64>>,
    /// Running frequency of arm-0 plays at each sampling time.
    pub arm0_freq: Vec<f64>,
}

/// Final state of one netslice block's particle system.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockSnapshot {
    pub domain: usize,
    pub block: usize,
    pub particles: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

/// Everything one run produces. Regret is always present; the particle
/// fields apply to pts/rpts, the block snapshot to contextual runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifacts {
    pub run_index: u64,
    pub seed: u64,
    pub regret: RegretTrace,
    /// Running-average weights `(1/(T+1)) sum_{tau=0..T} w_tau`, the
    /// empirical estimate of the stationary selection frequencies.
    pub avg_weights: Option<Vec<f64>>,
    pub final_log_weights: Option<Vec<f64>>,
    pub initial_particles: Option<Vec<Vec<f64>>>,
    pub final_particles: Option<Vec<Vec<f64>>>,
    pub weight_log: Option<WeightLog>,
    /// Steps at which rpts regenerated (any block, for contextual runs).
    pub regen_times: Vec<u64>,
    pub block_snapshots: Option<Vec<BlockSnapshot>>,
}

impl RunArtifacts {
    fn new(run_index: u64, seed: u64, regret: RegretTrace) -> Self {
        RunArtifacts {
            run_index,
            seed,
            regret,
            avg_weights: None,
            final_log_weights: None,
            initial_particles: None,
            final_particles: None,
            weight_log: None,
            regen_times: Vec::new(),
            block_snapshots: None,
        }
    }
}

/// Executes run `run_index` of the experiment. `fixed_particles`, when
/// given, replaces random particle generation with the same explicit set in
/// every run.
pub fn run_single(
    cfg: &ExperimentConfig,
    run_index: u64,
    fixed_particles: Option<&[Vec<f64>]>,
) -> Result<RunArtifacts> {
    let seed = cfg.base_seed.wrapping_add(run_index);
    let mut rng = rng::for_run(cfg.base_seed, run_index);
    match cfg.algorithm {
        Algorithm::TsBeta => {
            let mut posterior = BetaPosterior::new(cfg.env.arm_count());
            let mut regret = RegretTrace::new(seed, cfg.horizon as usize);
            for _ in 0..cfg.horizon {
                let (action, _) = ts_beta_step(&cfg.env, &mut posterior, &mut rng)?;
                regret.push(instantaneous_regret(&cfg.env, &action)?);
            }
            Ok(RunArtifacts::new(run_index, seed, regret))
        }
        Algorithm::TsKalman => {
            let mut posterior = GaussianPosterior::new(cfg.env.theta_dim());
            let mut regret = RegretTrace::new(seed, cfg.horizon as usize);
            for _ in 0..cfg.horizon {
                let (action, _) = ts_kalman_step(&cfg.env, &mut posterior, &mut rng)?;
                regret.push(instantaneous_regret(&cfg.env, &action)?);
            }
            Ok(RunArtifacts::new(run_index, seed, regret))
        }
        Algorithm::Pts | Algorithm::Rpts => {
            run_particle(cfg, run_index, seed, rng, fixed_particles)
        }
        Algorithm::CtxPts | Algorithm::CtxRpts => run_contextual(cfg, run_index, seed, rng),
    }
}

fn run_particle(
    cfg: &ExperimentConfig,
    run_index: u64,
    seed: u64,
    mut rng: rng::Rng,
    fixed_particles: Option<&[Vec<f64>]>,
) -> Result<RunArtifacts> {
    let mut ps = match fixed_particles {
        Some(p) => ParticleSystem::from_particles(&cfg.env, p.to_vec())?,
        None => ParticleSystem::generate(&cfg.env, cfg.particles, cfg.generation, &mut rng)?,
    };
    let initial_particles = ps.particles().to_vec();
    let mut avg_weights = ps.weights();
    let mut arm0_plays = 0u64;
    let stride = cfg.record.record_stride;
    let log_requested = cfg.record.log_weights || cfg.record.arm_frequency;
    let mut weight_log = log_requested.then(|| WeightLog {
        times: Vec::new(),
        log_weights: Vec::new(),
        arm0_freq: Vec::new(),
    });
    let mut regret = RegretTrace::new(seed, cfg.horizon as usize);
    let mut regen_times = Vec::new();

    for t in 1..=cfg.horizon {
        let action = if cfg.algorithm == Algorithm::Rpts {
            let (action, _, regenerated) = rpts_step(&cfg.env, &cfg.rpts, &mut ps, &mut rng)?;
            if regenerated {
                regen_times.push(t);
            }
            action
        } else {
            pts_step(&cfg.env, &mut ps, &mut rng)?.0
        };
        if action == Action::Arm(0) {
            arm0_plays += 1;
        }
        regret.push(instantaneous_regret(&cfg.env, &action)?);
        for (acc, lw) in avg_weights.iter_mut().zip(ps.log_weights()) {
            *acc += lw.exp();
        }
        if let Some(log) = weight_log.as_mut() {
            if t % stride == 0 || t == cfg.horizon {
                log.times.push(t);
                if cfg.record.log_weights {
                    log.log_weights.push(ps.log_weights().to_vec());
                }
                if cfg.record.arm_frequency {
                    log.arm0_freq.push(arm0_plays as f64 / t as f64);
                }
            }
        }
    }
    for acc in avg_weights.iter_mut() {
        *acc /= (cfg.horizon + 1) as f64;
    }

    let mut artifacts = RunArtifacts::new(run_index, seed, regret);
    artifacts.avg_weights = Some(avg_weights);
    artifacts.final_log_weights = Some(ps.log_weights().to_vec());
    artifacts.initial_particles = Some(initial_particles);
    artifacts.final_particles = Some(ps.particles().to_vec());
    artifacts.weight_log = weight_log;
    artifacts.regen_times = regen_times;
    Ok(artifacts)
}

fn run_contextual(
    cfg: &ExperimentConfig,
    run_index: u64,
    seed: u64,
    mut rng: rng::Rng,
) -> Result<RunArtifacts> {
    let EnvironmentSpec::NetSlice {
        theta_star,
        block_counts,
    } = &cfg.env
    else {
        return Err(Error::InvalidConfig(format!(
            "algorithm {} requires the netslice environment",
            cfg.algorithm
        )));
    };
    let star = LatencyModel::from_flat(block_counts, theta_star)?;
    let mut bp = BlockParticles::generate(block_counts, cfg.particles, &mut rng)?;
    let mut regret = RegretTrace::new(seed, cfg.horizon as usize);
    let mut regen_times = Vec::new();

    for t in 1..=cfg.horizon {
        let context = sample_context(&mut rng);
        let choice = if cfg.algorithm == Algorithm::CtxRpts {
            let (choice, _, regenerated) =
                netslice_rpts_step(&star, &mut bp, &cfg.rpts, &context, &mut rng)?;
            if regenerated > 0 {
                regen_times.push(t);
            }
            choice
        } else {
            netslice_pts_step(&star, &mut bp, &context, &mut rng)?.0
        };
        regret.push(contextual_regret(&star, &choice, &context));
    }

    let mut artifacts = RunArtifacts::new(run_index, seed, regret);
    artifacts.regen_times = regen_times;
    if cfg.record.particle_snapshots {
        let mut snapshots = Vec::new();
        for (domain, &count) in block_counts.iter().enumerate() {
            for block in 0..count {
                let system = bp.system(domain, block);
                snapshots.push(BlockSnapshot {
                    domain,
                    block,
                    particles: system.particles().to_vec(),
                    weights: system.weights(),
                });
            }
        }
        artifacts.block_snapshots = Some(snapshots);
    }
    Ok(artifacts)
}

/// Cross-run statistics, one entry per step: mean and standard error of the
/// running-average and cumulative regret.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub runs: usize,
    pub mean_avg_regret: Vec<f64>,
    pub stderr_avg_regret: Vec<f64>,
    pub mean_cum_regret: Vec<f64>,
    pub stderr_cum_regret: Vec<f64>,
    pub wall_clock: Duration,
}

/// Aggregates per-run traces in run order: sample mean and standard error
/// (sample standard deviation over sqrt(runs); zero for a single run).
pub fn aggregate(runs: &[RunArtifacts]) -> Result<AggregateResult> {
    if runs.is_empty() {
        return Err(Error::InvalidConfig("aggregate needs at least one run".into()));
    }
    let horizon = runs[0].regret.horizon();
    if runs.iter().any(|r| r.regret.horizon() != horizon) {
        return Err(Error::InvalidConfig(
            "aggregate needs equal-horizon runs".into(),
        ));
    }
    let n = runs.len() as f64;
    let mut result = AggregateResult {
        runs: runs.len(),
        mean_avg_regret: Vec::with_capacity(horizon),
        stderr_avg_regret: Vec::with_capacity(horizon),
        mean_cum_regret: Vec::with_capacity(horizon),
        stderr_cum_regret: Vec::with_capacity(horizon),
        wall_clock: Duration::ZERO,
    };
    for t in 0..horizon {
        let mut sum_avg = 0.0;
        let mut sum_cum = 0.0;
        for r in runs {
            sum_avg += r.regret.running_average[t];
            sum_cum += r.regret.cumulative[t];
        }
        let mean_avg = sum_avg / n;
        let mean_cum = sum_cum / n;
        let (mut var_avg, mut var_cum) = (0.0, 0.0);
        for r in runs {
            var_avg += (r.regret.running_average[t] - mean_avg).powi(2);
            var_cum += (r.regret.cumulative[t] - mean_cum).powi(2);
        }
        let stderr = |ss: f64| {
            if runs.len() > 1 {
                (ss / (n - 1.0)).sqrt() / n.sqrt()
            } else {
                0.0
            }
        };
        result.mean_avg_regret.push(mean_avg);
        result.stderr_avg_regret.push(stderr(var_avg));
        result.mean_cum_regret.push(mean_cum);
        result.stderr_cum_regret.push(stderr(var_cum));
    }
    Ok(result)
}

/// Aggregate statistics plus every run's artifacts, in run order.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub aggregate: AggregateResult,
    pub runs: Vec<RunArtifacts>,
}

/// Runs the whole experiment on the current rayon pool and, when the config
/// names an output directory, writes the run-directory artifacts.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    run_experiment_with_workers(cfg, None)
}

/// Same, with an explicit worker count (`None` uses the global pool). The
/// result is identical for every worker count.
pub fn run_experiment_with_workers(
    cfg: &ExperimentConfig,
    workers: Option<usize>,
) -> Result<ExperimentResult> {
    cfg.validate()?;
    let fixed = match &cfg.particles_file {
        Some(path) => Some(super::io::load_particles_csv(path)?),
        None => None,
    };
    let start = Instant::now();
    let execute = || -> Result<Vec<RunArtifacts>> {
        (0..cfg.runs as u64)
            .into_par_iter()
            .map(|i| run_single(cfg, i, fixed.as_deref()))
            .collect()
    };
    let runs = match workers {
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?
            .install(execute),
        None => execute(),
    }?;
    let mut agg = aggregate(&runs)?;
    agg.wall_clock = start.elapsed();
    let result = ExperimentResult {
        aggregate: agg,
        runs,
    };
    if let Some(dir) = &cfg.output_dir {
        super::io::write_experiment(dir, cfg, &result)?;
    }
    Ok(result)
}

/// One row of the envelope report: a breakpoint, the particle(s) meeting
/// there, and whether the breakpoint belongs to the contraction set.
/// Boundary breakpoints carry a single particle.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeRow {
    pub breakpoint: f64,
    pub particle_a: usize,
    pub particle_b: Option<usize>,
    pub in_contraction_set: bool,
}

/// Divergence-diagram report for a two-arm problem: one row per breakpoint.
pub fn envelope_report(theta_star: &[f64], particles: &[Vec<f64>]) -> Result<Vec<EnvelopeRow>> {
    let lines = divergence_lines(theta_star, particles)?;
    let diagram = lower_envelope(&lines)?;
    Ok(diagram
        .breakpoints
        .iter()
        .map(|bp| EnvelopeRow {
            breakpoint: bp.r,
            particle_a: bp.particles[0],
            particle_b: bp.particles.get(1).copied(),
            in_contraction_set: diagram.contraction_set.contains(&bp.r),
        })
        .collect())
}

/// Survival-condition report for a recorded run: drift matrix of the
/// particle set, scored against the run's running-average weights.
pub fn survival_report(
    env: &EnvironmentSpec,
    particles: Vec<Vec<f64>>,
    avg_weights: &[f64],
    tol: f64,
) -> Result<SurvivalReport> {
    let ps = ParticleSystem::from_particles(env, particles)?;
    let drift = drift_matrix(env, &ps, 0)?;
    survival_condition_check(avg_weights, &drift, tol)
}
