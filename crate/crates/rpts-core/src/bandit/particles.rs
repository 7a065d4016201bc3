//! Weighted particle systems over a parameter space.
//!
//! Weights are held in log space and renormalized with log-sum-exp after
//! every update, so likelihood products never underflow to exact zero even
//! over horizons of 10^6 steps.

use super::EnvironmentSpec;
use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Bernoulli-family particle coordinates are clamped to
/// `[EPSILON_CLAMP, 1 - EPSILON_CLAMP]` so likelihood ratios stay bounded.
pub const EPSILON_CLAMP: f64 = 1e-6;

/// How an initial particle set is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMethod {
    /// N i.i.d. draws from the uniform distribution over the parameter space.
    #[default]
    WholeParticle,
    /// Cartesian product of sqrt(N) i.i.d. values per coordinate. Only
    /// defined for two-arm Bernoulli parameter spaces with N a perfect
    /// square.
    CoordinateWise,
}

/// Particles with normalized log weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleSystem {
    particles: Vec<Vec<f64>>,
    log_weights: Vec<f64>,
    epsilon_clamp: f64,
}

/// Projects a point onto the parameter space of the environment:
/// Bernoulli-family coordinates clamp to `[eps, 1 - eps]`, linear parameters
/// rescale onto the unit ball, netslice coordinates clamp to `[0, 1]`.
pub fn project_to_theta(env: &EnvironmentSpec, point: &mut [f64], eps: f64) {
    match env {
        EnvironmentSpec::Bernoulli { .. } | EnvironmentSpec::MaxBernoulli { .. } => {
            for x in point.iter_mut() {
                *x = x.clamp(eps, 1.0 - eps);
            }
        }
        EnvironmentSpec::Linear { .. } => {
            let norm = super::norm2(point);
            if norm > 1.0 {
                for x in point.iter_mut() {
                    *x /= norm;
                }
            }
        }
        EnvironmentSpec::NetSlice { .. } => {
            for x in point.iter_mut() {
                *x = x.clamp(0.0, 1.0);
            }
        }
    }
}

/// N i.i.d. uniform draws from `[eps, 1 - eps]^dim` (clamped uniforms).
pub(crate) fn uniform_cube(n: usize, dim: usize, eps: f64, rng: &mut Rng) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| {
            (0..dim)
                .map(|_| rng.gen::<f64>().clamp(eps, 1.0 - eps))
                .collect()
        })
        .collect()
}

/// Uniform draw from the unit ball in R^k. Rejection from the enclosing cube
/// is cheap in low dimension; above k = 20 the acceptance rate collapses, so
/// a Gaussian direction scaled by a Beta-distributed radius is used instead.
pub fn sample_unit_ball(k: usize, rng: &mut Rng) -> Vec<f64> {
    if k <= 20 {
        loop {
            let point: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            if point.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                return point;
            }
        }
    }
    let direction: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let norm = super::norm2(&direction);
    let radius = rng.gen::<f64>().powf(1.0 / k as f64);
    direction.iter().map(|x| radius * x / norm).collect()
}

impl ParticleSystem {
    /// Draws `n` particles from the environment's initial distribution with
    /// uniform weights.
    pub fn generate(
        env: &EnvironmentSpec,
        n: usize,
        method: GenerationMethod,
        rng: &mut Rng,
    ) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParticles("need at least one particle".into()));
        }
        let eps = EPSILON_CLAMP;
        let particles = match (env, method) {
            (
                EnvironmentSpec::Bernoulli { .. } | EnvironmentSpec::MaxBernoulli { .. },
                GenerationMethod::WholeParticle,
            ) => uniform_cube(n, env.theta_dim(), eps, rng),
            (EnvironmentSpec::Bernoulli { theta_star }, GenerationMethod::CoordinateWise) => {
                if theta_star.len() != 2 {
                    return Err(Error::InvalidParticles(
                        "coordinate-wise generation is defined for two-arm Bernoulli spaces".into(),
                    ));
                }
                let side = (n as f64).sqrt().round() as usize;
                if side * side != n {
                    return Err(Error::InvalidParticles(format!(
                        "coordinate-wise generation needs a perfect square particle count, got {n}"
                    )));
                }
                let xs: Vec<f64> = (0..side)
                    .map(|_| rng.gen::<f64>().clamp(eps, 1.0 - eps))
                    .collect();
                let ys: Vec<f64> = (0..side)
                    .map(|_| rng.gen::<f64>().clamp(eps, 1.0 - eps))
                    .collect();
                let mut particles = Vec::with_capacity(n);
                for &x in &xs {
                    for &y in &ys {
                        particles.push(vec![x, y]);
                    }
                }
                particles
            }
            (EnvironmentSpec::Linear { theta_star, .. }, GenerationMethod::WholeParticle) => {
                let k = theta_star.len();
                (0..n).map(|_| sample_unit_ball(k, rng)).collect()
            }
            (EnvironmentSpec::NetSlice { .. }, GenerationMethod::WholeParticle) => {
                uniform_cube(n, env.theta_dim(), eps, rng)
            }
            (_, GenerationMethod::CoordinateWise) => {
                return Err(Error::InvalidParticles(
                    "coordinate-wise generation is defined for two-arm Bernoulli spaces".into(),
                ));
            }
        };
        Ok(Self::with_uniform_weights(particles, eps))
    }

    /// Wraps explicit particles with uniform weights, projecting each onto
    /// the environment's parameter space.
    pub fn from_particles(env: &EnvironmentSpec, mut particles: Vec<Vec<f64>>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::InvalidParticles("need at least one particle".into()));
        }
        let dim = env.theta_dim();
        for p in &mut particles {
            if p.len() != dim {
                return Err(Error::InvalidParticles(format!(
                    "particle has {} coordinates, environment needs {dim}",
                    p.len()
                )));
            }
            if !p.iter().all(|x| x.is_finite()) {
                return Err(Error::InvalidParticles("particle coordinates must be finite".into()));
            }
            project_to_theta(env, p, EPSILON_CLAMP);
        }
        Ok(Self::with_uniform_weights(particles, EPSILON_CLAMP))
    }

    pub(crate) fn with_uniform_weights(particles: Vec<Vec<f64>>, eps: f64) -> Self {
        let n = particles.len();
        let logw = -(n as f64).ln();
        ParticleSystem {
            particles,
            log_weights: vec![logw; n],
            epsilon_clamp: eps,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.particles[0].len()
    }

    pub fn epsilon_clamp(&self) -> f64 {
        self.epsilon_clamp
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.particles[i]
    }

    pub fn particles(&self) -> &[Vec<f64>] {
        &self.particles
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    /// Normalized weights in linear space. A particle whose log weight has
    /// decayed below about -745 comes back as exactly 0.0 here; the log-space
    /// state it is computed from stays finite.
    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    /// Samples a particle index from the normalized weights.
    pub fn sample_index(&self, rng: &mut Rng) -> usize {
        let weights = self.weights();
        let total: f64 = weights.iter().sum();
        let mut u = rng.gen::<f64>() * total;
        for (i, w) in weights.iter().enumerate() {
            u -= w;
            if u <= 0.0 {
                return i;
            }
        }
        self.len() - 1
    }

    /// Adds `delta(i, particle_i)` to each log weight, then renormalizes.
    pub fn update_log_weights(&mut self, delta: impl Fn(usize, &[f64]) -> f64) {
        for (i, lw) in self.log_weights.iter_mut().enumerate() {
            *lw += delta(i, &self.particles[i]);
        }
        self.normalize();
    }

    /// Renormalizes so the weights sum to one (log-sum-exp in log space).
    pub fn normalize(&mut self) {
        let lse = log_sum_exp(&self.log_weights);
        for lw in &mut self.log_weights {
            *lw -= lse;
        }
    }

    /// Overwrites particle `i` and its log weight. The caller renormalizes.
    pub fn set_particle(&mut self, i: usize, point: Vec<f64>, log_weight: f64) {
        self.particles[i] = point;
        self.log_weights[i] = log_weight;
    }

    /// Weighted mean of the particles.
    pub fn weighted_mean(&self) -> Vec<f64> {
        let weights = self.weights();
        let mut mean = vec![0.0; self.dim()];
        for (p, w) in self.particles.iter().zip(&weights) {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += w * x;
            }
        }
        mean
    }

    /// Trace of the weighted covariance via the second-moment identity
    /// `tr(Sigma) = sum_i w_i |theta_i|^2 - |mu|^2`, clamped at zero against
    /// rounding.
    pub fn weighted_cov_trace(&self) -> f64 {
        let weights = self.weights();
        let second: f64 = self
            .particles
            .iter()
            .zip(&weights)
            .map(|(p, w)| w * p.iter().map(|x| x * x).sum::<f64>())
            .sum();
        let mean = self.weighted_mean();
        (second - mean.iter().map(|x| x * x).sum::<f64>()).max(0.0)
    }
}

/// log(sum_i exp(v_i)), stable under large negative entries.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = v.iter().map(|x| (x - m).exp()).sum();
    m + sum.ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    fn two_arm() -> EnvironmentSpec {
        EnvironmentSpec::Bernoulli {
            theta_star: vec![0.5, 0.5],
        }
    }

    #[test]
    fn whole_particle_generation_stays_in_bounds() {
        let env = EnvironmentSpec::Bernoulli {
            theta_star: vec![0.5; 5],
        };
        let mut rng = rng::seeded(3);
        let ps = ParticleSystem::generate(&env, 20_000, GenerationMethod::WholeParticle, &mut rng)
            .unwrap();
        assert_eq!(ps.len(), 20_000);
        for p in ps.particles() {
            assert_eq!(p.len(), 5);
            for &x in p {
                assert!((EPSILON_CLAMP..=1.0 - EPSILON_CLAMP).contains(&x));
            }
        }
        let w = ps.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_abs_diff_eq!(w[0], 1.0 / 20_000.0, epsilon = 1e-18);
    }

    #[test]
    fn coordinate_wise_generation_builds_a_grid() {
        let mut rng = rng::seeded(4);
        let ps =
            ParticleSystem::generate(&two_arm(), 16, GenerationMethod::CoordinateWise, &mut rng)
                .unwrap();
        assert_eq!(ps.len(), 16);
        let mut xs: Vec<f64> = ps.particles().iter().map(|p| p[0]).collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        xs.dedup();
        assert_eq!(xs.len(), 4);
        for x in xs {
            let count = ps.particles().iter().filter(|p| p[0] == x).count();
            assert_eq!(count, 4);
        }
    }

    #[test]
    fn coordinate_wise_generation_rejects_bad_inputs() {
        let mut rng = rng::seeded(4);
        assert!(
            ParticleSystem::generate(&two_arm(), 15, GenerationMethod::CoordinateWise, &mut rng)
                .is_err()
        );
        let env3 = EnvironmentSpec::Bernoulli {
            theta_star: vec![0.5; 3],
        };
        assert!(
            ParticleSystem::generate(&env3, 16, GenerationMethod::CoordinateWise, &mut rng)
                .is_err()
        );
    }

    #[test]
    fn unit_ball_samples_are_uniform() {
        // Mean norm of a uniform draw from the K-ball is K/(K+1); in K = 2
        // that is 2/3. Checked for both sampling branches.
        let mut rng = rng::seeded(5);
        for k in [2usize, 25] {
            let n = 100_000;
            let mut mean_norm = 0.0;
            for _ in 0..n {
                let p = sample_unit_ball(k, &mut rng);
                let norm = p.iter().map(|x| x * x).sum::<f64>().sqrt();
                assert!(norm <= 1.0 + 1e-12);
                mean_norm += norm;
            }
            mean_norm /= n as f64;
            assert_abs_diff_eq!(mean_norm, k as f64 / (k + 1) as f64, epsilon = 2e-3);
        }
    }

    #[test]
    fn linear_generation_draws_from_the_ball() {
        let env = EnvironmentSpec::Linear {
            theta_star: vec![0.0; 3],
            sigma_w2: 1.0,
        };
        let mut rng = rng::seeded(6);
        let ps = ParticleSystem::generate(&env, 10_000, GenerationMethod::WholeParticle, &mut rng)
            .unwrap();
        for p in ps.particles() {
            assert!(p.iter().map(|x| x * x).sum::<f64>() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn projection_clamps_and_rescales() {
        let env = two_arm();
        let mut p = vec![1.3, -0.2];
        project_to_theta(&env, &mut p, EPSILON_CLAMP);
        assert_eq!(p, vec![1.0 - EPSILON_CLAMP, EPSILON_CLAMP]);

        let lin = EnvironmentSpec::Linear {
            theta_star: vec![0.0, 0.0],
            sigma_w2: 1.0,
        };
        let mut p = vec![3.0, 4.0];
        project_to_theta(&lin, &mut p, EPSILON_CLAMP);
        assert_abs_diff_eq!(p[0], 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.8, epsilon = 1e-12);
        let mut inside = vec![0.3, 0.1];
        project_to_theta(&lin, &mut inside, EPSILON_CLAMP);
        assert_eq!(inside, vec![0.3, 0.1]);

        let ns = EnvironmentSpec::NetSlice {
            theta_star: vec![0.5, 0.5],
            block_counts: vec![1],
        };
        let mut p = vec![-0.4, 1.7];
        project_to_theta(&ns, &mut p, EPSILON_CLAMP);
        assert_eq!(p, vec![0.0, 1.0]);
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let env = EnvironmentSpec::Bernoulli {
            theta_star: vec![0.5; 10],
        };
        let a = ParticleSystem::generate(
            &env,
            100,
            GenerationMethod::WholeParticle,
            &mut rng::seeded(42),
        )
        .unwrap();
        let b = ParticleSystem::generate(
            &env,
            100,
            GenerationMethod::WholeParticle,
            &mut rng::seeded(42),
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn update_keeps_weights_normalized() {
        let env = two_arm();
        let mut ps = ParticleSystem::from_particles(&env, vec![vec![0.2, 0.3], vec![0.8, 0.7]])
            .unwrap();
        ps.update_log_weights(|_, p| p[0].ln());
        let w = ps.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_abs_diff_eq!(w[0], 0.2 / (0.2 + 0.8), epsilon = 1e-12);
    }

    #[test]
    fn weighted_moments_match_direct_computation() {
        let env = two_arm();
        let mut ps = ParticleSystem::from_particles(
            &env,
            vec![vec![0.1, 0.2], vec![0.5, 0.6], vec![0.9, 0.4]],
        )
        .unwrap();
        ps.update_log_weights(|i, _| [0.0f64, 1.0, 2.0][i]);
        let w = ps.weights();
        let mean = ps.weighted_mean();
        let mut direct = [0.0, 0.0];
        for (p, wi) in ps.particles().iter().zip(&w) {
            direct[0] += wi * p[0];
            direct[1] += wi * p[1];
        }
        assert_abs_diff_eq!(mean[0], direct[0], epsilon = 1e-15);
        assert_abs_diff_eq!(mean[1], direct[1], epsilon = 1e-15);

        let mut trace = 0.0;
        for (p, wi) in ps.particles().iter().zip(&w) {
            trace += wi * ((p[0] - mean[0]).powi(2) + (p[1] - mean[1]).powi(2));
        }
        assert_abs_diff_eq!(ps.weighted_cov_trace(), trace, epsilon = 1e-12);
    }

    #[test]
    fn sampling_follows_the_weights() {
        let env = two_arm();
        let mut ps = ParticleSystem::from_particles(&env, vec![vec![0.2, 0.3], vec![0.8, 0.7]])
            .unwrap();
        // weights 0.9 / 0.1
        ps.update_log_weights(|i, _| [0.9f64.ln(), 0.1f64.ln()][i]);
        let mut rng = rng::seeded(8);
        let n = 100_000;
        let picked: usize = (0..n).map(|_| ps.sample_index(&mut rng)).sum();
        let frac_second = picked as f64 / n as f64;
        assert_abs_diff_eq!(frac_second, 0.1, epsilon = 3e-3);
    }

    #[test]
    fn single_particle_weight_stays_one() {
        let env = two_arm();
        let mut ps = ParticleSystem::from_particles(&env, vec![vec![0.4, 0.6]]).unwrap();
        for _ in 0..100 {
            ps.update_log_weights(|_, p| p[0].ln());
            assert_abs_diff_eq!(ps.weights()[0], 1.0, epsilon = 1e-15);
        }
    }
}
