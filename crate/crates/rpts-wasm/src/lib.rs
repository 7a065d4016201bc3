//! Browser bindings for the demo page. Each export takes a JSON request
//! string and returns a JSON response string, so the page needs no typed
//! glue beyond `JSON.parse`. All randomness is seeded; repeated calls with
//! the same request return identical responses.
//!
//! Inputs are capped (horizon, particle count, run count) to keep a single
//! browser thread responsive; the caps are generous for demo scales.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use rpts_core::bandit::EnvironmentSpec;
use rpts_core::harness::{aggregate, run_single, Algorithm, ExperimentConfig};
use rpts_core::survival::{divergence_lines, lower_envelope};

const MAX_HORIZON: u64 = 200_000;
const MAX_PARTICLES: usize = 500;
const MAX_RUNS: usize = 100;

fn err(msg: impl std::fmt::Display) -> String {
    msg.to_string()
}

fn parse<'a, T: Deserialize<'a>>(json: &'a str) -> Result<T, String> {
    serde_json::from_str(json).map_err(|e| format!("bad request: {e}"))
}

fn respond<T: Serialize>(value: &T) -> Result<String, String> {
    serde_json::to_string(value).map_err(err)
}

#[derive(Deserialize)]
struct DiagramRequest {
    theta_star: [f64; 2],
    particles: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct LineOut {
    particle: usize,
    at_zero: f64,
    at_one: f64,
    optimal_arm: usize,
}

#[derive(Serialize)]
struct BreakpointOut {
    r: f64,
    particles: Vec<usize>,
}

#[derive(Serialize)]
struct DiagramResponse {
    lines: Vec<LineOut>,
    breakpoints: Vec<BreakpointOut>,
    dominant: Vec<usize>,
    contraction_set: Vec<f64>,
}

/// Divergence diagram of a two-arm particle set: every line, the lower
/// envelope's breakpoints and dominant particles, and the contraction set.
#[wasm_bindgen]
pub fn divergence_diagram(request: &str) -> Result<String, JsError> {
    divergence_diagram_impl(request).map_err(|m| JsError::new(&m))
}

pub fn divergence_diagram_impl(request: &str) -> Result<String, String> {
    let req: DiagramRequest = parse(request)?;
    if req.particles.is_empty() || req.particles.len() > MAX_PARTICLES {
        return Err(err(format!("particle count must be 1..={MAX_PARTICLES}")));
    }
    let particles: Vec<Vec<f64>> = req.particles.iter().map(|p| p.to_vec()).collect();
    let lines = divergence_lines(&req.theta_star, &particles).map_err(err)?;
    let diagram = lower_envelope(&lines).map_err(err)?;
    respond(&DiagramResponse {
        lines: diagram
            .lines
            .iter()
            .map(|l| LineOut {
                particle: l.particle,
                at_zero: l.at_zero,
                at_one: l.at_one,
                optimal_arm: l.optimal_arm,
            })
            .collect(),
        breakpoints: diagram
            .breakpoints
            .iter()
            .map(|bp| BreakpointOut {
                r: bp.r,
                particles: bp.particles.clone(),
            })
            .collect(),
        dominant: diagram.dominant.clone(),
        contraction_set: diagram.contraction_set.clone(),
    })
}

#[derive(Deserialize)]
struct DynamicsRequest {
    theta_star: [f64; 2],
    algorithm: String,
    /// Explicit particles; when absent, `n` are generated from the seed.
    particles: Option<Vec<[f64; 2]>>,
    n: Option<usize>,
    horizon: u64,
    seed: u64,
}

#[derive(Serialize)]
struct DynamicsResponse {
    times: Vec<u64>,
    /// Time-major: `weights[k][i]` is particle `i`'s weight at `times[k]`.
    weights: Vec<Vec<f64>>,
    arm0_freq: Vec<f64>,
    regen_times: Vec<u64>,
    initial_particles: Vec<Vec<f64>>,
    final_particles: Vec<Vec<f64>>,
}

fn parse_algorithm(name: &str) -> Result<Algorithm, String> {
    match name {
        "pts" => Ok(Algorithm::Pts),
        "rpts" => Ok(Algorithm::Rpts),
        other => Err(err(format!("unknown algorithm {other:?}; use pts or rpts"))),
    }
}

/// One seeded pts/rpts run on a two-arm Bernoulli bandit, recording the
/// weight trajectory, arm-0 frequency, and regeneration times at a stride
/// that keeps roughly 500 sample points.
#[wasm_bindgen]
pub fn weight_dynamics(request: &str) -> Result<String, JsError> {
    weight_dynamics_impl(request).map_err(|m| JsError::new(&m))
}

pub fn weight_dynamics_impl(request: &str) -> Result<String, String> {
    let req: DynamicsRequest = parse(request)?;
    if req.horizon == 0 || req.horizon > MAX_HORIZON {
        return Err(err(format!("horizon must be 1..={MAX_HORIZON}")));
    }
    let fixed: Option<Vec<Vec<f64>>> = req
        .particles
        .map(|ps| ps.iter().map(|p| p.to_vec()).collect());
    let n = match (&fixed, req.n) {
        (Some(ps), _) => ps.len(),
        (None, Some(n)) => n,
        (None, None) => return Err(err("provide either particles or n")),
    };
    if n == 0 || n > MAX_PARTICLES {
        return Err(err(format!("particle count must be 1..={MAX_PARTICLES}")));
    }

    let env = EnvironmentSpec::Bernoulli {
        theta_star: req.theta_star.to_vec(),
    };
    let mut cfg = ExperimentConfig::new(env, parse_algorithm(&req.algorithm)?, req.horizon);
    cfg.particles = n;
    cfg.runs = 1;
    cfg.base_seed = req.seed;
    cfg.record.log_weights = true;
    cfg.record.arm_frequency = true;
    cfg.record.record_stride = (req.horizon / 500).max(1);
    cfg.validate().map_err(err)?;

    let run = run_single(&cfg, 0, fixed.as_deref()).map_err(err)?;
    let log = run.weight_log.expect("log_weights flag fills the weight log");
    respond(&DynamicsResponse {
        times: log.times,
        weights: log
            .log_weights
            .iter()
            .map(|lw| lw.iter().map(|x| x.exp()).collect())
            .collect(),
        arm0_freq: log.arm0_freq,
        regen_times: run.regen_times,
        initial_particles: run.initial_particles.unwrap_or_default(),
        final_particles: run.final_particles.unwrap_or_default(),
    })
}

#[derive(Deserialize)]
struct RaceRequest {
    theta_star: Vec<f64>,
    n: usize,
    horizon: u64,
    runs: usize,
    seed: u64,
}

#[derive(Serialize)]
struct RaceSeries {
    mean_cum: Vec<f64>,
    stderr_cum: Vec<f64>,
}

#[derive(Serialize)]
struct RaceResponse {
    times: Vec<u64>,
    pts: RaceSeries,
    rpts: RaceSeries,
    ts_beta: RaceSeries,
}

/// Mean cumulative regret of pts, rpts, and exact Thompson sampling on one
/// Bernoulli environment, averaged over seeded runs and subsampled for
/// plotting.
#[wasm_bindgen]
pub fn regret_race(request: &str) -> Result<String, JsError> {
    regret_race_impl(request).map_err(|m| JsError::new(&m))
}

pub fn regret_race_impl(request: &str) -> Result<String, String> {
    let req: RaceRequest = parse(request)?;
    if req.horizon == 0 || req.horizon > MAX_HORIZON {
        return Err(err(format!("horizon must be 1..={MAX_HORIZON}")));
    }
    if req.runs == 0 || req.runs > MAX_RUNS {
        return Err(err(format!("runs must be 1..={MAX_RUNS}")));
    }
    if req.n == 0 || req.n > MAX_PARTICLES {
        return Err(err(format!("particle count must be 1..={MAX_PARTICLES}")));
    }

    let env = EnvironmentSpec::Bernoulli {
        theta_star: req.theta_star,
    };
    let stride = (req.horizon / 400).max(1) as usize;
    let times: Vec<u64> = (1..=req.horizon)
        .filter(|t| t % stride as u64 == 0 || *t == req.horizon)
        .collect();

    let mut series = Vec::new();
    for algorithm in [Algorithm::Pts, Algorithm::Rpts, Algorithm::TsBeta] {
        let mut cfg = ExperimentConfig::new(env.clone(), algorithm, req.horizon);
        cfg.particles = req.n;
        cfg.runs = req.runs;
        cfg.base_seed = req.seed;
        cfg.validate().map_err(err)?;
        let runs: Vec<_> = (0..req.runs as u64)
            .map(|i| run_single(&cfg, i, None))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        let agg = aggregate(&runs).map_err(err)?;
        let pick = |v: &[f64]| times.iter().map(|&t| v[(t - 1) as usize]).collect();
        series.push(RaceSeries {
            mean_cum: pick(&agg.mean_cum_regret),
            stderr_cum: pick(&agg.stderr_cum_regret),
        });
    }
    let ts_beta = series.pop().expect("three series");
    let rpts = series.pop().expect("three series");
    let pts = series.pop().expect("three series");
    respond(&RaceResponse {
        times,
        pts,
        rpts,
        ts_beta,
    })
}
