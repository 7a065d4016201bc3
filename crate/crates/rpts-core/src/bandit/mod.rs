//! Bandit environments: parameter spaces, actions, observations, rewards.
//!
//! Four observation models are built in:
//!
//! * `Bernoulli` — K independent arms, arm `a` pays 1 with probability
//!   `theta_star[a]`.
//! * `MaxBernoulli` — actions are subsets of `subset_size` arms; the subset
//!   succeeds unless every member fails, so the success probability is
//!   `1 - prod_{a in S} (1 - theta_star[a])`.
//! * `Linear` — actions are unit vectors, the observation is
//!   `<theta_star, a>` plus Gaussian noise with variance `sigma_w2`.
//! * `NetSlice` — a contextual model of slicing a resource across domains;
//!   its observation model depends on a per-step context, so the contextual
//!   operations live in [`crate::netslice`] and the context-free entry points
//!   here return [`Error::ContextRequired`].

mod particles;

pub(crate) use particles::uniform_cube;
pub use particles::{
    log_sum_exp, project_to_theta, sample_unit_ball, GenerationMethod, ParticleSystem,
    EPSILON_CLAMP,
};

use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Actions whose norm is within this tolerance of 1 are accepted as unit
/// vectors.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// An environment is a parameter point together with the shape data needed to
/// interpret it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvironmentSpec {
    Bernoulli {
        theta_star: Vec<f64>,
    },
    MaxBernoulli {
        theta_star: Vec<f64>,
        subset_size: usize,
    },
    Linear {
        theta_star: Vec<f64>,
        sigma_w2: f64,
    },
    #[serde(rename = "netslice")]
    NetSlice {
        theta_star: Vec<f64>,
        block_counts: Vec<usize>,
    },
}

/// One play of the bandit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    /// Arm index, 0-based.
    Arm(usize),
    /// Strictly increasing arm indices, length `subset_size`.
    Subset(Vec<usize>),
    /// Unit vector in R^K.
    Direction(Vec<f64>),
    /// One block index per domain, 0-based.
    BlockChoice(Vec<usize>),
}

/// What the environment reports back after a play.
#[derive(Debug, Clone, PartialEq)]
pub enum Observation {
    Binary(bool),
    Scalar(f64),
    /// One latency per domain.
    Latencies(Vec<f64>),
}

impl EnvironmentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EnvironmentSpec::Bernoulli { .. } => "bernoulli",
            EnvironmentSpec::MaxBernoulli { .. } => "max_bernoulli",
            EnvironmentSpec::Linear { .. } => "linear",
            EnvironmentSpec::NetSlice { .. } => "netslice",
        }
    }

    /// Number of arms (domains for netslice).
    pub fn arm_count(&self) -> usize {
        match self {
            EnvironmentSpec::Bernoulli { theta_star }
            | EnvironmentSpec::Linear { theta_star, .. }
            | EnvironmentSpec::MaxBernoulli { theta_star, .. } => theta_star.len(),
            EnvironmentSpec::NetSlice { block_counts, .. } => block_counts.len(),
        }
    }

    /// Dimension of the parameter space a particle lives in.
    pub fn theta_dim(&self) -> usize {
        match self {
            EnvironmentSpec::Bernoulli { theta_star }
            | EnvironmentSpec::Linear { theta_star, .. }
            | EnvironmentSpec::MaxBernoulli { theta_star, .. } => theta_star.len(),
            EnvironmentSpec::NetSlice { block_counts, .. } => {
                2 * block_counts.iter().sum::<usize>()
            }
        }
    }

    pub fn theta_star(&self) -> &[f64] {
        match self {
            EnvironmentSpec::Bernoulli { theta_star }
            | EnvironmentSpec::MaxBernoulli { theta_star, .. }
            | EnvironmentSpec::Linear { theta_star, .. }
            | EnvironmentSpec::NetSlice { theta_star, .. } => theta_star,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            EnvironmentSpec::Bernoulli { theta_star } => {
                if theta_star.is_empty() {
                    return Err(Error::InvalidEnvironment("bernoulli needs K >= 1".into()));
                }
                if !theta_star.iter().all(|&x| (0.0..=1.0).contains(&x)) {
                    return Err(Error::InvalidEnvironment(
                        "bernoulli theta_star coordinates must lie in [0, 1]".into(),
                    ));
                }
            }
            EnvironmentSpec::MaxBernoulli {
                theta_star,
                subset_size,
            } => {
                let k = theta_star.len();
                if !theta_star.iter().all(|&x| (0.0..=1.0).contains(&x)) {
                    return Err(Error::InvalidEnvironment(
                        "max_bernoulli theta_star coordinates must lie in [0, 1]".into(),
                    ));
                }
                if *subset_size < 1 || *subset_size >= k {
                    return Err(Error::InvalidEnvironment(format!(
                        "max_bernoulli needs 1 <= subset_size < K, got subset_size {subset_size} with K {k}"
                    )));
                }
            }
            EnvironmentSpec::Linear {
                theta_star,
                sigma_w2,
            } => {
                if theta_star.is_empty() || !finite(theta_star) {
                    return Err(Error::InvalidEnvironment(
                        "linear theta_star must be nonempty and finite".into(),
                    ));
                }
                if !(sigma_w2.is_finite() && *sigma_w2 > 0.0) {
                    return Err(Error::InvalidEnvironment(format!(
                        "linear needs sigma_w2 > 0, got {sigma_w2}"
                    )));
                }
            }
            EnvironmentSpec::NetSlice {
                theta_star,
                block_counts,
            } => {
                if block_counts.is_empty() || block_counts.iter().any(|&b| b == 0) {
                    return Err(Error::InvalidEnvironment(
                        "netslice needs at least one domain, each with at least one block".into(),
                    ));
                }
                let dim = 2 * block_counts.iter().sum::<usize>();
                if theta_star.len() != dim {
                    return Err(Error::InvalidEnvironment(format!(
                        "netslice theta_star must have 2 * sum(block_counts) = {dim} coordinates, got {}",
                        theta_star.len()
                    )));
                }
                if !theta_star.iter().all(|&x| (0.0..=1.0).contains(&x)) {
                    return Err(Error::InvalidEnvironment(
                        "netslice theta_star coordinates must lie in [0, 1]".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Checks that an action has the right shape for the environment.
pub fn validate_action(env: &EnvironmentSpec, action: &Action) -> Result<()> {
    let bad = |reason: String| Error::InvalidAction {
        env: env.name(),
        reason,
    };
    match (env, action) {
        (EnvironmentSpec::Bernoulli { theta_star }, Action::Arm(a)) => {
            if *a >= theta_star.len() {
                return Err(bad(format!(
                    "arm {a} out of range for K = {}",
                    theta_star.len()
                )));
            }
        }
        (
            EnvironmentSpec::MaxBernoulli {
                theta_star,
                subset_size,
            },
            Action::Subset(s),
        ) => {
            if s.len() != *subset_size {
                return Err(bad(format!(
                    "subset has {} arms, expected {subset_size}",
                    s.len()
                )));
            }
            if !s.windows(2).all(|w| w[0] < w[1]) {
                return Err(bad("subset indices must be strictly increasing".into()));
            }
            if s.last().is_some_and(|&last| last >= theta_star.len()) {
                return Err(bad(format!(
                    "subset index out of range for K = {}",
                    theta_star.len()
                )));
            }
        }
        (EnvironmentSpec::Linear { theta_star, .. }, Action::Direction(d)) => {
            if d.len() != theta_star.len() {
                return Err(bad(format!(
                    "direction has {} coordinates, expected {}",
                    d.len(),
                    theta_star.len()
                )));
            }
            let norm = norm2(d);
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(bad(format!("direction norm {norm} is not 1")));
            }
        }
        (EnvironmentSpec::NetSlice { block_counts, .. }, Action::BlockChoice(c)) => {
            if c.len() != block_counts.len() {
                return Err(bad(format!(
                    "block choice has {} entries, expected {}",
                    c.len(),
                    block_counts.len()
                )));
            }
            for (d, (&chosen, &avail)) in c.iter().zip(block_counts).enumerate() {
                if chosen >= avail {
                    return Err(bad(format!(
                        "domain {d} chooses block {chosen}, only {avail} available"
                    )));
                }
            }
        }
        _ => {
            return Err(bad("action variant does not match environment".into()));
        }
    }
    Ok(())
}

pub(crate) fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Success probability of a subset under the max-Bernoulli model.
fn subset_success(theta: &[f64], subset: &[usize]) -> f64 {
    1.0 - subset.iter().map(|&a| 1.0 - theta[a]).product::<f64>()
}

/// Draws one observation from the true model `P_{theta_star}(. | a)`.
pub fn sample_observation(env: &EnvironmentSpec, action: &Action, rng: &mut Rng) -> Result<Observation> {
    validate_action(env, action)?;
    match (env, action) {
        (EnvironmentSpec::Bernoulli { theta_star }, Action::Arm(a)) => {
            Ok(Observation::Binary(rng.gen::<f64>() < theta_star[*a]))
        }
        (EnvironmentSpec::MaxBernoulli { theta_star, .. }, Action::Subset(s)) => {
            Ok(Observation::Binary(
                rng.gen::<f64>() < subset_success(theta_star, s),
            ))
        }
        (
            EnvironmentSpec::Linear {
                theta_star,
                sigma_w2,
            },
            Action::Direction(d),
        ) => {
            let noise: f64 = rng.sample(StandardNormal);
            Ok(Observation::Scalar(
                dot(theta_star, d) + sigma_w2.sqrt() * noise,
            ))
        }
        (EnvironmentSpec::NetSlice { .. }, _) => Err(Error::ContextRequired("sample_observation")),
        _ => unreachable!("validate_action admits only matching pairs"),
    }
}

/// Gaussian density, used by the linear model's likelihood.
pub(crate) fn gaussian_density(y: f64, mean: f64, variance: f64) -> f64 {
    let z = (y - mean) * (y - mean) / (2.0 * variance);
    (-z).exp() / (2.0 * std::f64::consts::PI * variance).sqrt()
}

/// Probability (or density) of observing `y` after playing `a` when the
/// parameter is `theta`. Strictly positive whenever `theta` comes from a
/// clamped particle system.
pub fn likelihood(env: &EnvironmentSpec, theta: &[f64], y: &Observation, action: &Action) -> Result<f64> {
    validate_action(env, action)?;
    if theta.len() != env.theta_dim() {
        return Err(Error::InvalidParticles(format!(
            "theta has {} coordinates, environment needs {}",
            theta.len(),
            env.theta_dim()
        )));
    }
    match (env, action, y) {
        (EnvironmentSpec::Bernoulli { .. }, Action::Arm(a), Observation::Binary(hit)) => {
            Ok(if *hit { theta[*a] } else { 1.0 - theta[*a] })
        }
        (EnvironmentSpec::MaxBernoulli { .. }, Action::Subset(s), Observation::Binary(hit)) => {
            let p = subset_success(theta, s);
            Ok(if *hit { p } else { 1.0 - p })
        }
        (EnvironmentSpec::Linear { sigma_w2, .. }, Action::Direction(d), Observation::Scalar(v)) => {
            Ok(gaussian_density(*v, dot(theta, d), *sigma_w2))
        }
        (EnvironmentSpec::NetSlice { .. }, _, _) => Err(Error::ContextRequired("likelihood")),
        _ => Err(Error::InvalidAction {
            env: env.name(),
            reason: "observation variant does not match environment".into(),
        }),
    }
}

/// Expected reward of playing `a` when the parameter is `theta`.
pub fn expected_reward(env: &EnvironmentSpec, theta: &[f64], action: &Action) -> Result<f64> {
    validate_action(env, action)?;
    match (env, action) {
        (EnvironmentSpec::Bernoulli { .. }, Action::Arm(a)) => Ok(theta[*a]),
        (EnvironmentSpec::MaxBernoulli { .. }, Action::Subset(s)) => Ok(subset_success(theta, s)),
        (EnvironmentSpec::Linear { .. }, Action::Direction(d)) => Ok(dot(theta, d)),
        (EnvironmentSpec::NetSlice { .. }, _) => Err(Error::ContextRequired("expected_reward")),
        _ => unreachable!("validate_action admits only matching pairs"),
    }
}

/// The action a Thompson step plays when it believes the parameter is
/// `theta`. Ties break to the lowest index (lexicographically smallest
/// subset); a zero linear parameter maps to the first basis vector.
pub fn optimal_action(env: &EnvironmentSpec, theta: &[f64]) -> Result<Action> {
    if theta.len() != env.theta_dim() {
        return Err(Error::InvalidParticles(format!(
            "theta has {} coordinates, environment needs {}",
            theta.len(),
            env.theta_dim()
        )));
    }
    match env {
        EnvironmentSpec::Bernoulli { .. } => Ok(Action::Arm(argmax(theta))),
        EnvironmentSpec::MaxBernoulli { subset_size, .. } => {
            // The reward 1 - prod(1 - theta_a) is maximized by the M largest
            // coordinates; preferring lower indices among ties yields the
            // lexicographically smallest maximizer.
            let mut order: Vec<usize> = (0..theta.len()).collect();
            order.sort_by(|&i, &j| theta[j].partial_cmp(&theta[i]).unwrap().then(i.cmp(&j)));
            let mut subset: Vec<usize> = order[..*subset_size].to_vec();
            subset.sort_unstable();
            Ok(Action::Subset(subset))
        }
        EnvironmentSpec::Linear { .. } => {
            let norm = norm2(theta);
            if norm == 0.0 {
                let mut e1 = vec![0.0; theta.len()];
                e1[0] = 1.0;
                return Ok(Action::Direction(e1));
            }
            Ok(Action::Direction(theta.iter().map(|x| x / norm).collect()))
        }
        EnvironmentSpec::NetSlice { .. } => Err(Error::ContextRequired("optimal_action")),
    }
}

/// Index of the largest value, lowest index on ties.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// The best achievable expected reward `R*` under the true parameter.
pub fn best_reward(env: &EnvironmentSpec) -> Result<f64> {
    match env {
        EnvironmentSpec::Linear { theta_star, .. } => Ok(norm2(theta_star)),
        _ => {
            let a = optimal_action(env, env.theta_star())?;
            expected_reward(env, env.theta_star(), &a)
        }
    }
}

/// Expected one-step regret of playing `a`: `R* - E_{theta_star}[R | a]`.
pub fn instantaneous_regret(env: &EnvironmentSpec, action: &Action) -> Result<f64> {
    match env {
        EnvironmentSpec::NetSlice { .. } => Err(Error::ContextRequired("instantaneous_regret")),
        _ => Ok(best_reward(env)? - expected_reward(env, env.theta_star(), action)?),
    }
}

/// Per-step regret of one run, with its cumulative and running-average views.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretTrace {
    pub seed: u64,
    pub instantaneous: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub running_average: Vec<f64>,
}

impl RegretTrace {
    pub fn new(seed: u64, horizon: usize) -> Self {
        RegretTrace {
            seed,
            instantaneous: Vec::with_capacity(horizon),
            cumulative: Vec::with_capacity(horizon),
            running_average: Vec::with_capacity(horizon),
        }
    }

    /// Appends the regret of step `t = len() + 1`.
    pub fn push(&mut self, regret: f64) {
        let cum = self.cumulative.last().copied().unwrap_or(0.0) + regret;
        self.instantaneous.push(regret);
        self.cumulative.push(cum);
        self.running_average.push(cum / self.instantaneous.len() as f64);
    }

    pub fn horizon(&self) -> usize {
        self.instantaneous.len()
    }
}
