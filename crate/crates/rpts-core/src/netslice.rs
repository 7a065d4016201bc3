//! Contextual bandit for slicing a network across resource domains.
//!
//! A slice request arrives as a context `(c1, c2)`: scaled offered load and
//! inverse scaled latency requirement. The controller picks one block per
//! domain; each chosen block `(i, j)` produces an exponential latency with
//! mean `c1 * theta_ij1 + theta_ij2`, and the slice earns `g_d(sum_i Y_i)`
//! with `d = c2`, the SLA reward that pays `y / d` up to the deadline and
//! nothing beyond it.
//!
//! Expected reward under a parameter hypothesis is approximated by treating
//! the latency sum as Gaussian with matched mean and variance; the
//! [`check`] submodule carries quadrature and Monte-Carlo oracles for that
//! approximation.
//!
//! Learning state is one particle system per block. A step samples one
//! particle from every block, selects the action that maximizes the
//! approximate expected reward for the assembled parameter, and reweights
//! only the chosen blocks; regeneration runs per block inside `[0,1]^2`.

use crate::bandit::{uniform_cube, ParticleSystem, EPSILON_CLAMP};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::samplers::{rpts_condition, rpts_regenerate_with, RptsConfig};
use rand::Rng as _;
use rand_distr::Exp1;

/// Exponential means are floored here before density evaluation so clamped
/// or zero parameters keep log-likelihoods finite.
pub const MEAN_FLOOR: f64 = 1e-9;

/// A slice request: `load` is the scaled offered load `c1 in [0, 1]`,
/// `sla` the inverse scaled latency requirement `c2 in (0, 1]` that acts as
/// the reward deadline `d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SliceContext {
    pub load: f64,
    pub sla: f64,
}

impl SliceContext {
    pub fn new(load: f64, sla: f64) -> Result<Self> {
        if !(load.is_finite() && (0.0..=1.0).contains(&load)) {
            return Err(Error::InvalidConfig(format!(
                "slice context needs load c1 in [0, 1], got {load}"
            )));
        }
        if !(sla.is_finite() && 0.0 < sla && sla <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "slice context needs sla c2 in (0, 1], got {sla}"
            )));
        }
        Ok(SliceContext { load, sla })
    }
}

/// Context stream for simulations: `c1 ~ U[0, 1]`, `c2 ~ U[0.2, 1.0]`. The
/// lower cutoff on `c2` keeps the deadline away from the degenerate `d = 0`.
pub fn sample_context(rng: &mut Rng) -> SliceContext {
    SliceContext {
        load: rng.gen::<f64>(),
        sla: 0.2 + 0.8 * rng.gen::<f64>(),
    }
}

/// Per-block latency parameters: block `(i, j)` holds
/// `(theta_ij1, theta_ij2)`, the rate at which latency scales with load and
/// the baseline latency.
#[derive(Debug, Clone, PartialEq)]
pub struct LatencyModel {
    block_counts: Vec<usize>,
    offsets: Vec<usize>,
    params: Vec<[f64; 2]>,
}

impl LatencyModel {
    /// Builds a model from the flat parameter layout used by environments
    /// and per-system particles: domain-major, block-minor,
    /// `(theta_1, theta_2)` innermost.
    pub fn from_flat(block_counts: &[usize], flat: &[f64]) -> Result<Self> {
        if block_counts.is_empty() || block_counts.iter().any(|&b| b == 0) {
            return Err(Error::InvalidEnvironment(
                "netslice needs at least one domain, each with at least one block".into(),
            ));
        }
        let blocks: usize = block_counts.iter().sum();
        if flat.len() != 2 * blocks {
            return Err(Error::InvalidEnvironment(format!(
                "netslice parameter needs 2 * sum(block_counts) = {} coordinates, got {}",
                2 * blocks,
                flat.len()
            )));
        }
        if !flat.iter().all(|&x| (0.0..=1.0).contains(&x)) {
            return Err(Error::InvalidEnvironment(
                "netslice parameter coordinates must lie in [0, 1]".into(),
            ));
        }
        let params = flat.chunks_exact(2).map(|p| [p[0], p[1]]).collect();
        Ok(LatencyModel {
            offsets: offsets_of(block_counts),
            block_counts: block_counts.to_vec(),
            params,
        })
    }

    pub fn block_counts(&self) -> &[usize] {
        &self.block_counts
    }

    pub fn domains(&self) -> usize {
        self.block_counts.len()
    }

    pub fn params(&self, domain: usize, block: usize) -> [f64; 2] {
        self.params[self.offsets[domain] + block]
    }

    /// Expected latency of block `(domain, block)` under the context:
    /// `c1 * theta_1 + theta_2`.
    pub fn mean(&self, domain: usize, block: usize, c: &SliceContext) -> f64 {
        let [rate, base] = self.params(domain, block);
        c.load * rate + base
    }

    /// Expected latency per domain for a full block choice.
    pub fn action_means(&self, choice: &[usize], c: &SliceContext) -> Vec<f64> {
        choice
            .iter()
            .enumerate()
            .map(|(i, &j)| self.mean(i, j, c))
            .collect()
    }
}

fn offsets_of(block_counts: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(block_counts.len());
    let mut acc = 0;
    for &b in block_counts {
        offsets.push(acc);
        acc += b;
    }
    offsets
}

/// SLA reward: `y / d` for latencies meeting the deadline, zero beyond it.
pub fn g_reward(d: f64, y: f64) -> f64 {
    if (0.0..=d).contains(&y) {
        y / d
    } else {
        0.0
    }
}

/// Standard normal CDF.
fn phi(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Expected SLA reward under a Gaussian approximation of the latency sum:
/// with `mu = sum mu_i` and `sigma^2 = sum mu_i^2` (an exponential's variance
/// is its squared mean),
///
/// `E[g_d(Y)] ~ (sigma / (d sqrt(2 pi))) (e^{-mu^2 / 2 sigma^2} -
/// e^{-(d - mu)^2 / 2 sigma^2}) + (mu / d) (Phi((d - mu) / sigma) -
/// Phi(-mu / sigma))`.
///
/// `sigma = 0` degenerates to the deterministic reward `g_d(mu)`. The result
/// is floored at zero; rounding can otherwise leak a tiny negative value.
pub fn approx_expected_reward(means: &[f64], d: f64) -> f64 {
    let mu: f64 = means.iter().sum();
    let sigma2: f64 = means.iter().map(|m| m * m).sum();
    if sigma2 == 0.0 {
        return g_reward(d, mu);
    }
    let sigma = sigma2.sqrt();
    let tail = (-mu * mu / (2.0 * sigma2)).exp() - (-(d - mu) * (d - mu) / (2.0 * sigma2)).exp();
    let density_term = sigma / (d * (2.0 * std::f64::consts::PI).sqrt()) * tail;
    let mass_term = mu / d * (phi((d - mu) / sigma) - phi(-mu / sigma));
    (density_term + mass_term).max(0.0)
}

/// Runs `f` on every block choice in lexicographic order.
fn for_each_choice(block_counts: &[usize], mut f: impl FnMut(&[usize])) {
    let mut choice = vec![0usize; block_counts.len()];
    loop {
        f(&choice);
        let mut domain = block_counts.len();
        loop {
            if domain == 0 {
                return;
            }
            domain -= 1;
            choice[domain] += 1;
            if choice[domain] < block_counts[domain] {
                break;
            }
            choice[domain] = 0;
        }
    }
}

/// Enumerates every block choice and returns the one maximizing the
/// approximate expected reward; ties keep the lexicographically smallest
/// tuple.
pub fn select_action(model: &LatencyModel, c: &SliceContext) -> Vec<usize> {
    let mut best_choice = vec![0usize; model.domains()];
    let mut best_reward = f64::NEG_INFINITY;
    for_each_choice(&model.block_counts, |choice| {
        let reward = approx_expected_reward(&model.action_means(choice, c), c.sla);
        if reward > best_reward {
            best_reward = reward;
            best_choice.copy_from_slice(choice);
        }
    });
    best_choice
}

/// Draws one latency per domain: independent exponentials with mean
/// `c1 * theta_1 + theta_2` for the chosen blocks. A zero mean yields a zero
/// latency deterministically, consuming no randomness.
pub fn slicing_observe(
    model: &LatencyModel,
    choice: &[usize],
    c: &SliceContext,
    rng: &mut Rng,
) -> Vec<f64> {
    choice
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let mean = model.mean(i, j, c);
            if mean <= 0.0 {
                0.0
            } else {
                mean * rng.sample::<f64, _>(Exp1)
            }
        })
        .collect()
}

/// Log density of an exponential with the given mean at `y`, with the mean
/// floored at [`MEAN_FLOOR`].
pub fn log_density(mean: f64, y: f64) -> f64 {
    let m = mean.max(MEAN_FLOOR);
    -m.ln() - y / m
}

/// Joint log likelihood of a latency vector: the domains are independent, so
/// the per-domain exponential log densities add.
pub fn log_likelihood(
    model: &LatencyModel,
    choice: &[usize],
    latencies: &[f64],
    c: &SliceContext,
) -> f64 {
    choice
        .iter()
        .zip(latencies)
        .enumerate()
        .map(|(i, (&j, &y))| log_density(model.mean(i, j, c), y))
        .sum()
}

/// Per-step regret against the best action for the realized context, with
/// the approximate expected reward on both sides so the gap measures
/// decision quality rather than approximation error.
pub fn contextual_regret(star: &LatencyModel, choice: &[usize], c: &SliceContext) -> f64 {
    let mut best = f64::NEG_INFINITY;
    for_each_choice(&star.block_counts, |candidate| {
        best = best.max(approx_expected_reward(&star.action_means(candidate, c), c.sla));
    });
    let played = approx_expected_reward(&star.action_means(choice, c), c.sla);
    (best - played).max(0.0)
}

/// One particle system per block, each over `[0, 1]^2` with coordinates
/// clamped to `[EPSILON_CLAMP, 1 - EPSILON_CLAMP]`. The effective number of
/// per-system hypotheses is `N^(sum_i B_i)` block combinations.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockParticles {
    block_counts: Vec<usize>,
    offsets: Vec<usize>,
    systems: Vec<ParticleSystem>,
}

impl BlockParticles {
    /// `n` uniform particles per block with uniform weights.
    pub fn generate(block_counts: &[usize], n: usize, rng: &mut Rng) -> Result<Self> {
        if block_counts.is_empty() || block_counts.iter().any(|&b| b == 0) {
            return Err(Error::InvalidEnvironment(
                "netslice needs at least one domain, each with at least one block".into(),
            ));
        }
        if n == 0 {
            return Err(Error::InvalidParticles("need at least one particle".into()));
        }
        let blocks: usize = block_counts.iter().sum();
        let systems = (0..blocks)
            .map(|_| {
                ParticleSystem::with_uniform_weights(
                    uniform_cube(n, 2, EPSILON_CLAMP, rng),
                    EPSILON_CLAMP,
                )
            })
            .collect();
        Ok(BlockParticles {
            offsets: offsets_of(block_counts),
            block_counts: block_counts.to_vec(),
            systems,
        })
    }

    pub fn block_counts(&self) -> &[usize] {
        &self.block_counts
    }

    pub fn particles_per_block(&self) -> usize {
        self.systems[0].len()
    }

    pub fn system(&self, domain: usize, block: usize) -> &ParticleSystem {
        &self.systems[self.offsets[domain] + block]
    }

    pub fn system_mut(&mut self, domain: usize, block: usize) -> &mut ParticleSystem {
        &mut self.systems[self.offsets[domain] + block]
    }

    /// Samples one particle per block by weight (domain-major order) and
    /// assembles the full latency model.
    pub fn sample_model(&self, rng: &mut Rng) -> LatencyModel {
        let params = self
            .systems
            .iter()
            .map(|ps| {
                let p = ps.particle(ps.sample_index(rng));
                [p[0], p[1]]
            })
            .collect();
        LatencyModel {
            block_counts: self.block_counts.clone(),
            offsets: self.offsets.clone(),
            params,
        }
    }

    /// Reweights the chosen block of each domain by the exponential density
    /// of its observed latency and renormalizes that block alone; every
    /// other block is untouched.
    pub fn per_block_update(&mut self, choice: &[usize], latencies: &[f64], c: &SliceContext) {
        for (domain, (&block, &y)) in choice.iter().zip(latencies).enumerate() {
            let ps = self.system_mut(domain, block);
            let load = c.load;
            ps.update_log_weights(|_, p| log_density(load * p[0] + p[1], y));
        }
    }
}

/// One contextual PTS step in per-block mode: sample a model, act, observe,
/// reweight the chosen blocks.
pub fn netslice_pts_step(
    star: &LatencyModel,
    bp: &mut BlockParticles,
    c: &SliceContext,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<f64>)> {
    if star.block_counts != bp.block_counts {
        return Err(Error::InvalidConfig(format!(
            "particle blocks {:?} do not match the environment blocks {:?}",
            bp.block_counts, star.block_counts
        )));
    }
    let sampled = bp.sample_model(rng);
    let choice = select_action(&sampled, c);
    let latencies = slicing_observe(star, &choice, c, rng);
    bp.per_block_update(&choice, &latencies, c);
    Ok((choice, latencies))
}

/// One contextual RPTS step: a PTS step, then the regeneration condition per
/// chosen block, each within its own `[0, 1]^2` space. Returns the number of
/// blocks regenerated. Blocks whose weights did not change this step keep
/// their previous condition outcome, so only chosen blocks are checked.
pub fn netslice_rpts_step(
    star: &LatencyModel,
    bp: &mut BlockParticles,
    cfg: &RptsConfig,
    c: &SliceContext,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<f64>, usize)> {
    let (choice, latencies) = netslice_pts_step(star, bp, c, rng)?;
    let mut regenerated = 0;
    for (domain, &block) in choice.iter().enumerate() {
        let ps = bp.system_mut(domain, block);
        if rpts_condition(cfg, ps) {
            let eps = ps.epsilon_clamp();
            rpts_regenerate_with(cfg, ps, rng, |point| {
                for x in point.iter_mut() {
                    *x = x.clamp(eps, 1.0 - eps);
                }
            })?;
            regenerated += 1;
        }
    }
    Ok((choice, latencies, regenerated))
}

/// Oracles for the Gaussian reward approximation: quadrature of the same
/// Gaussian integral the closed form evaluates, and Monte Carlo of the true
/// hypoexponential expectation.
pub mod check {
    use super::g_reward;
    use crate::rng::Rng;
    use rand::Rng as _;
    use rand_distr::Exp1;

    /// `E[g_d(Y)]` for `Y ~ N(mu, sigma2)` by adaptive Simpson quadrature of
    /// `int_0^d (y / d) N(y; mu, sigma2) dy`.
    pub fn quadrature_expected_reward(mu: f64, sigma2: f64, d: f64) -> f64 {
        assert!(sigma2 > 0.0, "quadrature needs a nondegenerate Gaussian");
        let f = |y: f64| {
            let z = y - mu;
            y / d * (-z * z / (2.0 * sigma2)).exp() / (2.0 * std::f64::consts::PI * sigma2).sqrt()
        };
        adaptive_simpson(&f, 0.0, d, 1e-13, 60)
    }

    fn simpson(f: &impl Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }

    fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
        let fa = f(a);
        let fb = f(b);
        let (whole, m, fm) = simpson(f, a, fa, b, fb);
        recurse(f, a, fa, b, fb, m, fm, whole, tol, depth)
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &impl Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, tol / 2.0, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, tol / 2.0, depth - 1)
    }

    /// `E[g_d(sum_i Y_i)]` with independent `Y_i ~ Exp(mean mu_i)` by plain
    /// Monte Carlo.
    pub fn mc_hypoexponential_reward(mu: &[f64], d: f64, samples: usize, rng: &mut Rng) -> f64 {
        let mut acc = 0.0;
        for _ in 0..samples {
            let y: f64 = mu.iter().map(|m| m * rng.sample::<f64, _>(Exp1)).sum();
            acc += g_reward(d, y);
        }
        acc / samples as f64
    }

    /// A pool of standard exponential draws shared across grid points, so
    /// estimates use common random numbers and one pool allocation.
    pub struct ExpPool {
        draws: Vec<Vec<f64>>,
    }

    impl ExpPool {
        pub fn draw(domains: usize, samples: usize, rng: &mut Rng) -> Self {
            let draws = (0..domains)
                .map(|_| (0..samples).map(|_| rng.sample::<f64, _>(Exp1)).collect())
                .collect();
            ExpPool { draws }
        }

        pub fn samples(&self) -> usize {
            self.draws[0].len()
        }

        /// Reward estimates for one mean vector at several deadlines in a
        /// single pass over the pool.
        pub fn rewards(&self, mu: &[f64], ds: &[f64]) -> Vec<f64> {
            assert_eq!(mu.len(), self.draws.len());
            let n = self.samples();
            let mut acc = vec![0.0; ds.len()];
            for s in 0..n {
                let y: f64 = mu
                    .iter()
                    .zip(&self.draws)
                    .map(|(m, col)| m * col[s])
                    .sum();
                for (a, &d) in acc.iter_mut().zip(ds) {
                    *a += g_reward(d, y);
                }
            }
            for a in &mut acc {
                *a /= n as f64;
            }
            acc
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    fn model(block_counts: &[usize], flat: &[f64]) -> LatencyModel {
        LatencyModel::from_flat(block_counts, flat).unwrap()
    }

    fn ctx(load: f64, sla: f64) -> SliceContext {
        SliceContext::new(load, sla).unwrap()
    }

    #[test]
    fn context_validation() {
        assert!(SliceContext::new(0.0, 1.0).is_ok());
        assert!(SliceContext::new(1.0, 0.2).is_ok());
        assert!(SliceContext::new(-0.1, 0.5).is_err());
        assert!(SliceContext::new(1.1, 0.5).is_err());
        // c2 = 0 makes the deadline degenerate.
        assert!(SliceContext::new(0.5, 0.0).is_err());
        assert!(SliceContext::new(0.5, 1.2).is_err());
    }

    #[test]
    fn sampled_contexts_stay_in_range() {
        let mut rng = rng::seeded(1);
        for _ in 0..10_000 {
            let c = sample_context(&mut rng);
            assert!((0.0..=1.0).contains(&c.load));
            assert!((0.2..=1.0).contains(&c.sla));
        }
    }

    #[test]
    fn latency_model_layout_and_means() {
        let flat = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0];
        let m = model(&[2, 3], &flat);
        assert_eq!(m.domains(), 2);
        assert_eq!(m.params(0, 1), [0.3, 0.4]);
        assert_eq!(m.params(1, 0), [0.5, 0.6]);
        assert_eq!(m.params(1, 2), [0.9, 1.0]);
        let c = ctx(0.5, 0.5);
        assert_abs_diff_eq!(m.mean(0, 0, &c), 0.5 * 0.1 + 0.2, epsilon = 1e-15);
        // c1 = 0 leaves only the baseline term.
        let idle = ctx(0.0, 0.5);
        assert_abs_diff_eq!(m.mean(1, 1, &idle), 0.8, epsilon = 1e-15);
        let means = m.action_means(&[1, 2], &c);
        assert_abs_diff_eq!(means[0], 0.5 * 0.3 + 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(means[1], 0.5 * 0.9 + 1.0, epsilon = 1e-15);
    }

    #[test]
    fn latency_model_rejects_bad_shapes() {
        assert!(LatencyModel::from_flat(&[], &[]).is_err());
        assert!(LatencyModel::from_flat(&[2, 0], &[0.1; 8]).is_err());
        assert!(LatencyModel::from_flat(&[2], &[0.1; 3]).is_err());
        assert!(LatencyModel::from_flat(&[1], &[0.1, 1.5]).is_err());
    }

    #[test]
    fn g_reward_branches() {
        assert_abs_diff_eq!(g_reward(0.5, 0.25), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(g_reward(0.5, 0.6), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g_reward(0.5, 0.5), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g_reward(0.5, 0.0), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn observe_zero_mean_is_deterministic_and_free() {
        let m = model(&[1, 1], &[0.4, 0.0, 0.3, 0.2]);
        let c = ctx(0.0, 0.5);
        let mut rng_a = rng::seeded(5);
        let mut rng_b = rng::seeded(5);
        // Domain 0 has mean 0 under zero load; domain 1 does not.
        let y = slicing_observe(&m, &[0, 0], &c, &mut rng_a);
        assert_eq!(y[0], 0.0);
        assert!(y[1] > 0.0);
        // The zero-mean domain consumed no randomness: one manual draw from
        // the twin stream reproduces the other domain's latency.
        let manual = 0.2 * rng_b.sample::<f64, _>(Exp1);
        assert_abs_diff_eq!(y[1], manual, epsilon = 1e-15);
        assert_eq!(rng_a.gen::<u64>(), rng_b.gen::<u64>());
    }

    #[test]
    fn observed_latencies_match_exponential_moments() {
        // c1 = 1 with theta = (0.3, 0.2): mean 0.5, variance 0.25.
        let m = model(&[1], &[0.3, 0.2]);
        let c = ctx(1.0, 0.5);
        let mut rng = rng::seeded(7);
        let n = 1_000_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let y = slicing_observe(&m, &[0], &c, &mut rng)[0];
            assert!(y >= 0.0);
            sum += y;
            sum_sq += y * y;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        // Three standard errors of the mean.
        assert_abs_diff_eq!(mean, 0.5, epsilon = 3.0 * 0.5 / 1e3);
        assert_abs_diff_eq!(var / (mean * mean), 1.0, epsilon = 0.01);
    }

    #[test]
    fn log_likelihood_factorizes_over_domains() {
        let m = model(&[2, 1, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 0.3]);
        let c = ctx(0.7, 0.5);
        let choice = [1, 0, 1];
        let y = [0.3, 0.9, 0.05];
        let joint = log_likelihood(&m, &choice, &y, &c);
        let by_hand: f64 = (0..3)
            .map(|i| {
                let mean = m.mean(i, choice[i], &c);
                -(mean.ln()) - y[i] / mean
            })
            .sum();
        assert_abs_diff_eq!(joint, by_hand, epsilon = 1e-12);
    }

    #[test]
    fn log_density_floors_the_mean() {
        let at_zero = log_density(0.0, 0.5);
        assert!(at_zero.is_finite());
        assert_abs_diff_eq!(at_zero, -(MEAN_FLOOR.ln()) - 0.5 / MEAN_FLOOR, epsilon = 1e-3);
    }

    #[test]
    fn approx_reward_deterministic_limit() {
        // Tiny means: sigma -> 0 and the value approaches g_d(mu) = mu / d.
        let means = [0.12e-9, 0.1e-9, 0.08e-9];
        let mu: f64 = means.iter().sum();
        let d = 0.5;
        assert_abs_diff_eq!(approx_expected_reward(&means, d), mu / d, epsilon = 1e-6);
        // Exactly zero variance short-circuits to the deterministic reward.
        assert_abs_diff_eq!(approx_expected_reward(&[0.0, 0.0], 0.5), 0.0, epsilon = 0.0);
    }

    #[test]
    fn approx_reward_matches_gaussian_quadrature() {
        let means = [0.1, 0.1, 0.1];
        let d = 0.5;
        let exact = check::quadrature_expected_reward(0.3, 0.03, d);
        assert_abs_diff_eq!(approx_expected_reward(&means, d), exact, epsilon = 1e-9);
    }

    #[test]
    fn approx_reward_near_true_hypoexponential_expectation() {
        // Approximation-quality report, not a tight correctness bound.
        let means = [0.1, 0.1, 0.1];
        let d = 0.5;
        let mut rng = rng::seeded(11);
        let mc = check::mc_hypoexponential_reward(&means, d, 10_000_000, &mut rng);
        assert_abs_diff_eq!(approx_expected_reward(&means, d), mc, epsilon = 0.05);
    }

    #[test]
    fn approx_reward_stays_in_unit_range_and_smooth() {
        let grid = [0.02, 0.1, 0.3, 0.6, 0.9];
        let deadlines = [0.2, 0.5, 1.0];
        for &a in &grid {
            for &b in &grid {
                for &c in &grid {
                    for &d in &deadlines {
                        let means = [a, b, c];
                        let f = approx_expected_reward(&means, d);
                        assert!((0.0..=1.0 + 1e-6).contains(&f), "f({means:?}, {d}) = {f}");
                        for i in 0..3 {
                            let mut bumped = means;
                            bumped[i] += 1e-6;
                            let g = approx_expected_reward(&bumped, d);
                            assert!((f - g).abs() < 1e-3);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn pooled_mc_agrees_with_plain_mc() {
        // Means small next to the deadline, where the Gaussian surrogate is
        // close to the true hypoexponential expectation.
        let mu = [0.16, 0.24, 0.08];
        let d = 0.6;
        let pool = check::ExpPool::draw(3, 200_000, &mut rng::seeded(13));
        let pooled = pool.rewards(&mu, &[d])[0];
        let plain = check::mc_hypoexponential_reward(&mu, d, 200_000, &mut rng::seeded(14));
        assert_abs_diff_eq!(pooled, plain, epsilon = 0.01);
        // And both sit near the quadrature of the Gaussian surrogate.
        let exact = approx_expected_reward(&mu, d);
        assert_abs_diff_eq!(pooled, exact, epsilon = 0.05);
    }

    #[test]
    fn select_action_enumerates_lexicographically() {
        // Single block everywhere: the only tuple.
        let m = model(&[1, 1, 1], &[0.1, 0.1, 0.2, 0.2, 0.3, 0.3]);
        assert_eq!(select_action(&m, &ctx(0.5, 0.5)), vec![0, 0, 0]);

        // All blocks identical: ties resolve to the smallest tuple.
        let m = model(&[2, 2], &[0.3, 0.1, 0.3, 0.1, 0.2, 0.2, 0.2, 0.2]);
        assert_eq!(select_action(&m, &ctx(0.5, 0.5)), vec![0, 0]);
    }

    #[test]
    fn select_action_matches_brute_force() {
        let mut rng = rng::seeded(17);
        let counts = [3usize, 3, 3];
        for _ in 0..50 {
            let flat: Vec<f64> = (0..18).map(|_| rng.gen::<f64>()).collect();
            let m = model(&counts, &flat);
            let c = ctx(rng.gen(), 0.2 + 0.8 * rng.gen::<f64>());
            let fast = select_action(&m, &c);

            let mut candidates = Vec::new();
            for_each_choice(&counts, |t| candidates.push(t.to_vec()));
            assert_eq!(candidates.len(), 27);
            let best = candidates
                .iter()
                .max_by(|a, b| {
                    let ra = approx_expected_reward(&m.action_means(a, &c), c.sla);
                    let rb = approx_expected_reward(&m.action_means(b, &c), c.sla);
                    // max_by keeps the later of equal elements, so order by
                    // reward then by reversed lexicographic rank.
                    ra.partial_cmp(&rb).unwrap().then(b.cmp(a))
                })
                .unwrap();
            assert_eq!(&fast, best);
        }
    }

    #[test]
    fn select_action_invariant_under_reward_rescaling() {
        let mut rng = rng::seeded(19);
        let counts = [2usize, 3];
        for _ in 0..20 {
            let flat: Vec<f64> = (0..10).map(|_| rng.gen::<f64>()).collect();
            let m = model(&counts, &flat);
            let c = ctx(rng.gen(), 0.2 + 0.8 * rng.gen::<f64>());
            let chosen = select_action(&m, &c);
            for scale in [1e-6, 0.5, 3.0, 1e7] {
                let mut best = vec![0usize; 2];
                let mut best_reward = f64::NEG_INFINITY;
                for_each_choice(&counts, |t| {
                    let r = scale * approx_expected_reward(&m.action_means(t, &c), c.sla);
                    if r > best_reward {
                        best_reward = r;
                        best.copy_from_slice(t);
                    }
                });
                assert_eq!(chosen, best);
            }
        }
    }

    #[test]
    fn contextual_regret_is_zero_at_the_best_action() {
        let mut rng = rng::seeded(23);
        let flat: Vec<f64> = (0..12).map(|_| rng.gen::<f64>()).collect();
        let star = model(&[2, 2, 2], &flat);
        let c = ctx(0.4, 0.7);
        let best = select_action(&star, &c);
        assert_abs_diff_eq!(contextual_regret(&star, &best, &c), 0.0, epsilon = 1e-15);
        let worst = vec![1, 1, 1];
        assert!(contextual_regret(&star, &worst, &c) >= 0.0);
    }

    #[test]
    fn block_particles_layout_and_bounds() {
        let mut rng = rng::seeded(29);
        let bp = BlockParticles::generate(&[2, 3], 50, &mut rng).unwrap();
        assert_eq!(bp.particles_per_block(), 50);
        for domain in 0..2 {
            for block in 0..bp.block_counts()[domain] {
                let ps = bp.system(domain, block);
                assert_eq!(ps.len(), 50);
                assert_eq!(ps.dim(), 2);
                for p in ps.particles() {
                    for &x in p {
                        assert!((EPSILON_CLAMP..=1.0 - EPSILON_CLAMP).contains(&x));
                    }
                }
            }
        }
        assert!(BlockParticles::generate(&[0], 10, &mut rng).is_err());
        assert!(BlockParticles::generate(&[2], 0, &mut rng).is_err());
    }

    #[test]
    fn sample_model_mixes_blocks_independently() {
        // Two particles per block across three blocks: all 2^3 = 8
        // combinations appear, the per-system count the per-block layout
        // affords.
        let mut rng = rng::seeded(31);
        let bp = BlockParticles::generate(&[1, 1, 1], 2, &mut rng).unwrap();
        let mut seen = std::collections::HashSet::new();
        for _ in 0..300 {
            let m = bp.sample_model(&mut rng);
            let key: Vec<u64> = (0..3).map(|i| m.params(i, 0)[0].to_bits()).collect();
            seen.insert(key);
        }
        assert_eq!(seen.len(), 8);
        assert_eq!(
            (bp.particles_per_block() as u64).pow(3),
            8,
            "N^(sum B_i) distinct combinations"
        );
    }

    #[test]
    fn per_block_update_touches_only_chosen_blocks() {
        let mut rng = rng::seeded(37);
        let mut bp = BlockParticles::generate(&[2, 2], 20, &mut rng).unwrap();
        let untouched_a = bp.system(0, 1).clone();
        let untouched_b = bp.system(1, 0).clone();
        let c = ctx(0.5, 0.5);
        bp.per_block_update(&[0, 1], &[0.4, 0.2], &c);
        assert_eq!(bp.system(0, 1), &untouched_a);
        assert_eq!(bp.system(1, 0), &untouched_b);
        for (domain, block) in [(0usize, 0usize), (1, 1)] {
            let w = bp.system(domain, block).weights();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            // The update moved mass around.
            assert!(w.iter().any(|&x| (x - 0.05).abs() > 1e-9));
        }
    }

    #[test]
    fn per_block_update_is_bayes_on_each_block() {
        let mut rng = rng::seeded(41);
        let mut bp = BlockParticles::generate(&[1], 2, &mut rng).unwrap();
        let c = ctx(1.0, 0.5);
        let y = 0.3;
        let ps = bp.system(0, 0);
        let means: Vec<f64> = ps.particles().iter().map(|p| p[0] + p[1]).collect();
        let lik: Vec<f64> = means.iter().map(|m| (1.0 / m) * (-y / m).exp()).collect();
        let expected = [lik[0] / (lik[0] + lik[1]), lik[1] / (lik[0] + lik[1])];
        bp.per_block_update(&[0], &[y], &c);
        let w = bp.system(0, 0).weights();
        assert_abs_diff_eq!(w[0], expected[0], epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], expected[1], epsilon = 1e-12);
    }

    #[test]
    fn single_block_chain_still_learns_weights() {
        // One domain, one block: only one action exists, yet latency
        // evidence still reshapes the block's weights.
        let star = model(&[1], &[0.3, 0.2]);
        let mut rng = rng::seeded(43);
        let mut bp = BlockParticles::generate(&[1], 30, &mut rng).unwrap();
        let uniform = bp.system(0, 0).weights();
        for _ in 0..50 {
            let c = sample_context(&mut rng);
            let (choice, _) = netslice_pts_step(&star, &mut bp, &c, &mut rng).unwrap();
            assert_eq!(choice, vec![0]);
        }
        let w = bp.system(0, 0).weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w
            .iter()
            .zip(&uniform)
            .any(|(a, b)| (a - b).abs() > 1e-3));
    }

    #[test]
    fn rpts_step_without_condition_equals_pts_step() {
        let mut flat = Vec::new();
        let mut seed_rng = rng::seeded(47);
        for _ in 0..18 {
            flat.push(seed_rng.gen::<f64>());
        }
        let star = model(&[3, 3, 3], &flat);
        let cfg = RptsConfig {
            w_inact: 1e-300,
            w_new: 1e-299,
            ..RptsConfig::default()
        };
        let mut bp_pts = BlockParticles::generate(&[3, 3, 3], 40, &mut rng::seeded(53)).unwrap();
        let mut bp_rpts = bp_pts.clone();
        let mut rng_a = rng::seeded(59);
        let mut rng_b = rng::seeded(59);
        let mut ctx_rng = rng::seeded(61);
        for _ in 0..300 {
            let c = sample_context(&mut ctx_rng);
            let (a1, y1) = netslice_pts_step(&star, &mut bp_pts, &c, &mut rng_a).unwrap();
            let (a2, y2, regen) =
                netslice_rpts_step(&star, &mut bp_rpts, &cfg, &c, &mut rng_b).unwrap();
            assert_eq!(regen, 0);
            assert_eq!(a1, a2);
            assert_eq!(y1, y2);
        }
        assert_eq!(bp_pts, bp_rpts);
    }

    #[test]
    fn regeneration_is_scoped_to_its_block() {
        // Force one block into the inactive condition and verify the others
        // are bit-identical afterwards.
        let mut rng = rng::seeded(67);
        let mut bp = BlockParticles::generate(&[2], 10, &mut rng).unwrap();
        let cfg = RptsConfig::default();
        // Crush the weights of block (0, 0) by hand.
        {
            let ps = bp.system_mut(0, 0);
            let n = ps.len();
            let mut target: Vec<f64> = vec![1e-6; n];
            target[0] = 1.0 - 9e-6;
            let current = ps.weights();
            let deltas: Vec<f64> = target
                .iter()
                .zip(&current)
                .map(|(t, c)| t.ln() - c.ln())
                .collect();
            ps.update_log_weights(|i, _| deltas[i]);
            assert!(rpts_condition(&cfg, ps));
        }
        let other = bp.system(0, 1).clone();
        let ps = bp.system_mut(0, 0);
        rpts_regenerate_with(&cfg, ps, &mut rng, |p| {
            for x in p.iter_mut() {
                *x = x.clamp(EPSILON_CLAMP, 1.0 - EPSILON_CLAMP);
            }
        })
        .unwrap();
        assert_eq!(bp.system(0, 1), &other);
        for p in bp.system(0, 0).particles() {
            for &x in p {
                assert!((EPSILON_CLAMP..=1.0 - EPSILON_CLAMP).contains(&x));
            }
        }
    }

    #[test]
    fn frequently_chosen_blocks_concentrate_on_the_truth() {
        // After 10^4 steps at a fixed context, the top-weight particle of
        // each frequently chosen block should imply a mean near the truth.
        let c = ctx(0.5, 0.5);
        let t = 10_000;
        let runs = 20;
        let mut good_runs = 0;
        for run in 0..runs {
            let mut rng = rng::for_run(71, run);
            let flat: Vec<f64> = (0..18).map(|_| rng.gen::<f64>()).collect();
            let star = model(&[3, 3, 3], &flat);
            let mut bp = BlockParticles::generate(&[3, 3, 3], 100, &mut rng).unwrap();
            let mut counts = vec![vec![0usize; 3]; 3];
            for _ in 0..t {
                let (choice, _) = netslice_pts_step(&star, &mut bp, &c, &mut rng).unwrap();
                for (domain, &block) in choice.iter().enumerate() {
                    counts[domain][block] += 1;
                }
            }
            let mut run_ok = true;
            for domain in 0..3 {
                for block in 0..3 {
                    if counts[domain][block] < t / 10 {
                        continue;
                    }
                    let ps = bp.system(domain, block);
                    let w = ps.weights();
                    let top = (0..ps.len())
                        .max_by(|&i, &j| w[i].partial_cmp(&w[j]).unwrap())
                        .unwrap();
                    let p = ps.particle(top);
                    let implied = c.load * p[0] + p[1];
                    let truth = star.mean(domain, block, &c);
                    if (implied - truth).abs() > 0.05 {
                        run_ok = false;
                    }
                }
            }
            if run_ok {
                good_runs += 1;
            }
        }
        assert!(
            good_runs * 10 >= runs * 9,
            "only {good_runs}/{runs} runs concentrated"
        );
    }
}
