//! Sampling algorithms: particle Thompson sampling, its regenerative
//! variant, and exact conjugate baselines.
//!
//! A PTS step samples a particle index from the weights, plays that
//! particle's optimal action, and multiplies each weight by the likelihood of
//! the observation under that particle. RPTS additionally watches for weight
//! collapse: when the lowest-weighted `ceil(f_del * N)` particles hold at
//! most `w_inact` of the total mass, they are deleted and resampled from a
//! spherical Gaussian matched to the current weighted mean and covariance
//! trace of the whole system.

mod exact;

pub use exact::{ts_beta_step, ts_kalman_step, BetaPosterior, GaussianPosterior};

use crate::bandit::{
    likelihood, optimal_action, project_to_theta, sample_observation, Action, EnvironmentSpec,
    Observation, ParticleSystem,
};
use crate::error::{Error, Result};
use crate::netslice::{self, LatencyModel, SliceContext};
use crate::rng::Rng;
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Regeneration hyperparameters. `w_new > w_inact` keeps a freshly
/// regenerated system from immediately satisfying the deletion condition
/// again.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RptsConfig {
    /// Fraction of particles deleted per regeneration.
    pub f_del: f64,
    /// Total weight below which the deletable particles count as inactive.
    pub w_inact: f64,
    /// Total weight assigned to the regenerated particles before the final
    /// renormalization.
    pub w_new: f64,
}

impl Default for RptsConfig {
    fn default() -> Self {
        RptsConfig {
            f_del: 0.8,
            w_inact: 0.001,
            w_new: 0.01,
        }
    }
}

impl RptsConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |x: f64| x.is_finite() && 0.0 < x && x < 1.0;
        if !in_unit(self.f_del) {
            return Err(Error::InvalidConfig(format!(
                "rpts f_del must lie in (0, 1), got {}",
                self.f_del
            )));
        }
        if !in_unit(self.w_inact) || !in_unit(self.w_new) {
            return Err(Error::InvalidConfig(format!(
                "rpts w_inact and w_new must lie in (0, 1), got {} and {}",
                self.w_inact, self.w_new
            )));
        }
        if self.w_new <= self.w_inact {
            return Err(Error::InvalidConfig(format!(
                "rpts needs w_new > w_inact, got w_new {} <= w_inact {}",
                self.w_new, self.w_inact
            )));
        }
        Ok(())
    }

    /// Number of particles a regeneration replaces: `ceil(f_del * n)`.
    /// The small bias guards against `f_del * n` landing one ulp above an
    /// integer.
    pub fn deletion_count(&self, n: usize) -> usize {
        (self.f_del * n as f64 - 1e-9).ceil().max(0.0) as usize
    }

    /// Checks the config against a concrete particle count: at least one
    /// particle must be deleted and at least one must survive.
    pub fn validate_for(&self, n: usize) -> Result<()> {
        self.validate()?;
        let m = self.deletion_count(n);
        if m == 0 {
            return Err(Error::InvalidConfig(format!(
                "rpts deletes no particles with f_del {} and N {n}",
                self.f_del
            )));
        }
        if m >= n {
            return Err(Error::InvalidConfig(format!(
                "rpts would delete all {n} particles (f_del {}); no survivor would remain",
                self.f_del
            )));
        }
        Ok(())
    }
}

/// One particle Thompson sampling step; the system's weights are updated in
/// place and stay normalized.
pub fn pts_step(
    env: &EnvironmentSpec,
    ps: &mut ParticleSystem,
    rng: &mut Rng,
) -> Result<(Action, Observation)> {
    let idx = ps.sample_index(rng);
    let action = optimal_action(env, ps.particle(idx))?;
    let observation = sample_observation(env, &action, rng)?;
    // Particles are clamped, so every likelihood is strictly positive and
    // the log update stays finite.
    let mut deltas = Vec::with_capacity(ps.len());
    for i in 0..ps.len() {
        deltas.push(likelihood(env, ps.particle(i), &observation, &action)?.ln());
    }
    ps.update_log_weights(|i, _| deltas[i]);
    Ok((action, observation))
}

/// True when the total weight of the `ceil(f_del * N)` lowest-weighted
/// particles is at most `w_inact`.
pub fn rpts_condition(cfg: &RptsConfig, ps: &ParticleSystem) -> bool {
    let mut weights = ps.weights();
    weights.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = cfg.deletion_count(ps.len());
    weights[..m].iter().sum::<f64>() <= cfg.w_inact
}

/// Deletes the lowest-weighted particles and redraws them from
/// `N(mean, (tr Sigma / dim) I)` with `project` mapping each draw back onto
/// the parameter space. Kept particles keep their current weights, the new
/// ones share `w_new`, and the whole vector is normalized once. Returns the
/// number of particles replaced.
pub fn rpts_regenerate_with(
    cfg: &RptsConfig,
    ps: &mut ParticleSystem,
    rng: &mut Rng,
    mut project: impl FnMut(&mut [f64]),
) -> Result<usize> {
    cfg.validate_for(ps.len())?;
    let n = ps.len();
    let m = cfg.deletion_count(n);

    let weights = ps.weights();
    // Ascending weight, ties broken by deleting the lower index first.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| weights[i].partial_cmp(&weights[j]).unwrap().then(i.cmp(&j)));
    let mut deleted = order[..m].to_vec();
    deleted.sort_unstable();

    // Exploration distribution over the full current system, computed before
    // any particle is replaced.
    let mean = ps.weighted_mean();
    let sd = (ps.weighted_cov_trace() / ps.dim() as f64).sqrt();

    let new_log_weight = (cfg.w_new / m as f64).ln();
    for &i in &deleted {
        let mut point: Vec<f64> = mean
            .iter()
            .map(|&mu| mu + sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        project(&mut point);
        ps.set_particle(i, point, new_log_weight);
    }
    ps.normalize();
    Ok(m)
}

/// [`rpts_regenerate_with`] projecting onto the environment's parameter
/// space.
pub fn rpts_regenerate(
    env: &EnvironmentSpec,
    cfg: &RptsConfig,
    ps: &mut ParticleSystem,
    rng: &mut Rng,
) -> Result<usize> {
    let eps = ps.epsilon_clamp();
    rpts_regenerate_with(cfg, ps, rng, |point| project_to_theta(env, point, eps))
}

/// One RPTS step: a PTS step followed by regeneration when the inactivity
/// condition holds. Returns `true` in the last slot when a regeneration
/// fired, so a run with the condition never triggered is bit-identical to
/// PTS under the same seed.
pub fn rpts_step(
    env: &EnvironmentSpec,
    cfg: &RptsConfig,
    ps: &mut ParticleSystem,
    rng: &mut Rng,
) -> Result<(Action, Observation, bool)> {
    let (action, observation) = pts_step(env, ps, rng)?;
    let regenerated = rpts_condition(cfg, ps);
    if regenerated {
        rpts_regenerate(env, cfg, ps, rng)?;
    }
    Ok((action, observation, regenerated))
}

/// One contextual PTS step in per-system mode: the particles parameterize
/// the whole slicing system and every weight is updated with the joint
/// likelihood of the observed latency vector. Per-block mode lives in
/// [`crate::netslice`].
pub fn contextual_pts_step(
    env: &EnvironmentSpec,
    ps: &mut ParticleSystem,
    context: &SliceContext,
    rng: &mut Rng,
) -> Result<(Action, Observation)> {
    let EnvironmentSpec::NetSlice {
        theta_star,
        block_counts,
    } = env
    else {
        return Err(Error::InvalidConfig(format!(
            "contextual_pts_step needs a netslice environment, got {}",
            env.name()
        )));
    };
    let star = LatencyModel::from_flat(block_counts, theta_star)?;
    let idx = ps.sample_index(rng);
    let sampled = LatencyModel::from_flat(block_counts, ps.particle(idx))?;
    let choice = netslice::select_action(&sampled, context);
    let latencies = netslice::slicing_observe(&star, &choice, context, rng);

    let mut deltas = Vec::with_capacity(ps.len());
    for i in 0..ps.len() {
        let model = LatencyModel::from_flat(block_counts, ps.particle(i))?;
        deltas.push(netslice::log_likelihood(&model, &choice, &latencies, context));
    }
    ps.update_log_weights(|i, _| deltas[i]);
    Ok((
        Action::BlockChoice(choice),
        Observation::Latencies(latencies),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::GenerationMethod;
    use crate::rng;
    use approx::assert_abs_diff_eq;

    fn two_arm(theta: [f64; 2]) -> EnvironmentSpec {
        EnvironmentSpec::Bernoulli {
            theta_star: theta.to_vec(),
        }
    }

    fn system(env: &EnvironmentSpec, particles: &[[f64; 2]]) -> ParticleSystem {
        ParticleSystem::from_particles(env, particles.iter().map(|p| p.to_vec()).collect())
            .unwrap()
    }

    #[test]
    fn config_validation() {
        RptsConfig::default().validate_for(100).unwrap();
        assert!(RptsConfig {
            w_new: 0.0005,
            ..RptsConfig::default()
        }
        .validate()
        .is_err());
        assert!(RptsConfig {
            f_del: 1.0,
            ..RptsConfig::default()
        }
        .validate()
        .is_err());
        // ceil(0.8 N) = N for every N <= 4: no survivor would remain.
        assert!(RptsConfig::default().validate_for(2).is_err());
        assert!(RptsConfig::default().validate_for(3).is_err());
        assert!(RptsConfig::default().validate_for(4).is_err());
        RptsConfig::default().validate_for(5).unwrap();
    }

    #[test]
    fn deletion_count_matches_ceil() {
        let cfg = RptsConfig::default();
        assert_eq!(cfg.deletion_count(10), 8);
        assert_eq!(cfg.deletion_count(100), 80);
        assert_eq!(cfg.deletion_count(3), 3); // ceil(2.4)
        let half = RptsConfig {
            f_del: 0.5,
            ..RptsConfig::default()
        };
        assert_eq!(half.deletion_count(5), 3); // ceil(2.5)
        assert_eq!(half.deletion_count(4), 2);
    }

    #[test]
    fn pts_weight_update_is_bayes_rule() {
        // Two particles at equal weight; likelihoods (0.9, 0.1) for the
        // realized pull give posterior weights (0.9, 0.1).
        let env = two_arm([1.0, 0.5]);
        // Both particles prefer arm 0; that arm always pays 1 under theta*.
        let mut ps = system(&env, &[[0.9, 0.1], [0.1, 0.05]]);
        let mut rng = rng::seeded(2);
        let (action, observation) = pts_step(&env, &mut ps, &mut rng).unwrap();
        assert_eq!(action, Action::Arm(0));
        assert_eq!(observation, Observation::Binary(true));
        let w = ps.weights();
        assert_abs_diff_eq!(w[0], 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(w[1], 0.1, epsilon = 1e-12);
    }

    #[test]
    fn pts_update_is_order_independent() {
        let env = two_arm([0.6, 0.4]);
        let obs = [
            (Action::Arm(0), Observation::Binary(true)),
            (Action::Arm(1), Observation::Binary(false)),
            (Action::Arm(0), Observation::Binary(false)),
        ];
        let apply = |order: &[usize]| {
            let mut ps = system(&env, &[[0.2, 0.6], [0.7, 0.3], [0.5, 0.5]]);
            for &k in order {
                let (a, y) = &obs[k];
                let mut deltas = Vec::new();
                for i in 0..ps.len() {
                    deltas.push(likelihood(&env, ps.particle(i), y, a).unwrap().ln());
                }
                ps.update_log_weights(|i, _| deltas[i]);
            }
            ps.weights()
        };
        let forward = apply(&[0, 1, 2]);
        let backward = apply(&[2, 1, 0]);
        for (a, b) in forward.iter().zip(&backward) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn weights_stay_normalized_over_long_horizons() {
        let env = two_arm([0.7, 0.4]);
        let mut ps = system(&env, &[[0.71, 0.41], [0.2, 0.9], [0.45, 0.44], [0.05, 0.02], [0.99, 0.98]]);
        let mut rng = rng::seeded(77);
        for t in 0..1_000_000u64 {
            pts_step(&env, &mut ps, &mut rng).unwrap();
            if t % 10_000 == 0 {
                let w = ps.weights();
                assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        // Log-space state stays finite even though linear weights underflow.
        for &lw in ps.log_weights() {
            assert!(lw.is_finite());
        }
        let w = ps.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn single_particle_system_is_a_fixed_point() {
        let env = two_arm([0.3, 0.8]);
        let mut ps = system(&env, &[[0.25, 0.75]]);
        let mut rng = rng::seeded(5);
        for _ in 0..100 {
            let (action, _) = pts_step(&env, &mut ps, &mut rng).unwrap();
            assert_eq!(action, Action::Arm(1));
            assert_abs_diff_eq!(ps.weights()[0], 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn condition_fires_exactly_at_the_mass_threshold() {
        let env = two_arm([0.5, 0.5]);
        let cfg = RptsConfig::default();
        // Ten particles; the eight smallest weights sum to 0.0008 <= 0.001.
        let mut ps = system(&env, &[[0.5, 0.5]; 10]);
        let mut logw: Vec<f64> = vec![(0.0001f64).ln(); 8];
        logw.push((0.2f64).ln());
        logw.push((0.7992f64).ln());
        let deltas: Vec<f64> = logw
            .iter()
            .zip(ps.log_weights())
            .map(|(t, c)| t - c)
            .collect();
        ps.update_log_weights(|i, _| deltas[i]);
        assert!(rpts_condition(&cfg, &ps));

        // Raise the small weights so they sum to 0.008 > 0.001.
        let mut ps2 = system(&env, &[[0.5, 0.5]; 10]);
        let mut logw2: Vec<f64> = vec![(0.001f64).ln(); 8];
        logw2.push((0.2f64).ln());
        logw2.push((0.792f64).ln());
        let deltas2: Vec<f64> = logw2
            .iter()
            .zip(ps2.log_weights())
            .map(|(t, c)| t - c)
            .collect();
        ps2.update_log_weights(|i, _| deltas2[i]);
        assert!(!rpts_condition(&cfg, &ps2));

        // A fresh uniform system is never regenerated.
        let uniform = system(&env, &[[0.5, 0.5]; 10]);
        assert!(!rpts_condition(&cfg, &uniform));
    }

    #[test]
    fn regeneration_replaces_the_lightest_particles() {
        let env = two_arm([0.5, 0.5]);
        let cfg = RptsConfig::default();
        let mut ps = system(
            &env,
            &[
                [0.11, 0.21],
                [0.12, 0.22],
                [0.13, 0.23],
                [0.14, 0.24],
                [0.15, 0.25],
                [0.16, 0.26],
                [0.17, 0.27],
                [0.18, 0.28],
                [0.31, 0.41],
                [0.32, 0.42],
            ],
        );
        // Indices 8 and 9 carry nearly all the mass.
        let target: Vec<f64> = vec![
            1e-5, 1e-5, 1e-5, 1e-5, 1e-5, 1e-5, 1e-5, 1e-5, 0.3, 0.69992,
        ];
        let deltas: Vec<f64> = target
            .iter()
            .zip(ps.log_weights())
            .map(|(t, c)| t.ln() - c)
            .collect();
        ps.update_log_weights(|i, _| deltas[i]);
        assert!(rpts_condition(&cfg, &ps));

        let kept_8 = ps.particle(8).to_vec();
        let kept_9 = ps.particle(9).to_vec();
        let w_before = ps.weights();
        let ratio_before = w_before[8] / w_before[9];

        let mut rng = rng::seeded(9);
        let replaced = rpts_regenerate(&env, &cfg, &mut ps, &mut rng).unwrap();
        assert_eq!(replaced, 8);
        assert_eq!(ps.particle(8), kept_8.as_slice());
        assert_eq!(ps.particle(9), kept_9.as_slice());

        let w = ps.weights();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Survivors keep their relative ratio.
        assert_abs_diff_eq!(w[8] / w[9], ratio_before, epsilon = 1e-12);
        // New particles share w_new / m each, then one normalization: with
        // kept mass >= 1 - w_inact the regenerated block holds at most
        // w_new / (w_new + 1 - w_inact) of the final mass.
        let new_mass: f64 = (0..8).map(|i| w[i]).sum();
        assert!(new_mass <= 0.01 / (0.01 + 0.999) + 1e-12);
        for i in 0..7 {
            assert_abs_diff_eq!(w[i], w[i + 1], epsilon = 1e-15);
        }
        // Regenerated coordinates live in the clamped square.
        for i in 0..8 {
            for &x in ps.particle(i) {
                assert!((1e-6..=1.0 - 1e-6).contains(&x));
            }
        }
    }

    #[test]
    fn regeneration_tie_break_deletes_lower_indices_first() {
        let env = two_arm([0.5, 0.5]);
        let cfg = RptsConfig {
            f_del: 0.5,
            ..RptsConfig::default()
        };
        // Four particles with exactly equal weights: indices 0 and 1 go.
        let mut ps = system(&env, &[[0.1, 0.1], [0.2, 0.2], [0.3, 0.3], [0.4, 0.4]]);
        let p2 = ps.particle(2).to_vec();
        let p3 = ps.particle(3).to_vec();
        let mut rng = rng::seeded(11);
        rpts_regenerate(&env, &cfg, &mut ps, &mut rng).unwrap();
        assert_eq!(ps.particle(2), p2.as_slice());
        assert_eq!(ps.particle(3), p3.as_slice());
        assert_ne!(ps.particle(0), [0.1, 0.1].as_slice());
        assert_ne!(ps.particle(1), [0.2, 0.2].as_slice());
    }

    #[test]
    fn degenerate_regeneration_collapses_to_the_survivor() {
        // All particles at the same point: the covariance trace vanishes up
        // to rounding, so regenerated particles sit at the weighted mean.
        let env = two_arm([0.5, 0.5]);
        let cfg = RptsConfig::default();
        let mut ps = system(&env, &[[0.42, 0.37]; 5]);
        let mut rng = rng::seeded(13);
        rpts_regenerate(&env, &cfg, &mut ps, &mut rng).unwrap();
        for i in 0..5 {
            assert_abs_diff_eq!(ps.particle(i)[0], 0.42, epsilon = 1e-7);
            assert_abs_diff_eq!(ps.particle(i)[1], 0.37, epsilon = 1e-7);
        }
    }

    #[test]
    fn rpts_without_regeneration_equals_pts() {
        // w_inact so small the condition never fires over the horizon.
        let env = two_arm([0.7, 0.4]);
        let cfg = RptsConfig {
            w_inact: 1e-300,
            w_new: 1e-299,
            ..RptsConfig::default()
        };
        let build = || {
            ParticleSystem::generate(
                &env,
                25,
                GenerationMethod::WholeParticle,
                &mut rng::seeded(21),
            )
            .unwrap()
        };
        let mut pts = build();
        let mut rpts = build();
        let mut rng_a = rng::seeded(22);
        let mut rng_b = rng::seeded(22);
        for _ in 0..2000 {
            let (a1, y1) = pts_step(&env, &mut pts, &mut rng_a).unwrap();
            let (a2, y2, regen) = rpts_step(&env, &cfg, &mut rpts, &mut rng_b).unwrap();
            assert!(!regen);
            assert_eq!(a1, a2);
            assert_eq!(y1, y2);
        }
        assert_eq!(pts, rpts);
    }

    #[test]
    fn steps_are_seed_deterministic() {
        let env = two_arm([0.7, 0.4]);
        let cfg = RptsConfig::default();
        let run = || {
            let mut ps = ParticleSystem::generate(
                &env,
                16,
                GenerationMethod::CoordinateWise,
                &mut rng::seeded(31),
            )
            .unwrap();
            let mut rng = rng::seeded(32);
            let mut actions = Vec::new();
            for _ in 0..500 {
                let (a, _, _) = rpts_step(&env, &cfg, &mut ps, &mut rng).unwrap();
                actions.push(a);
            }
            (actions, ps)
        };
        let (a1, ps1) = run();
        let (a2, ps2) = run();
        assert_eq!(a1, a2);
        assert_eq!(ps1, ps2);
    }
}
