//! Exact Thompson sampling through conjugate posteriors: Beta-Bernoulli for
//! finite-arm bandits and a Kalman filter for the linear-Gaussian bandit.

use crate::bandit::{sample_observation, Action, EnvironmentSpec, Observation};
use crate::error::{Error, Result};
use crate::rng::Rng;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Beta, Distribution as _, StandardNormal};

/// Independent Beta(alpha_a, beta_a) posteriors per arm, starting from the
/// uniform prior Beta(1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct BetaPosterior {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BetaPosterior {
    pub fn new(arms: usize) -> Self {
        BetaPosterior {
            alpha: vec![1.0; arms],
            beta: vec![1.0; arms],
        }
    }

    /// Total evidence absorbed so far: `sum_a (alpha_a + beta_a - 2)` equals
    /// the number of updates.
    pub fn updates(&self) -> f64 {
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(a, b)| a + b - 2.0)
            .sum()
    }

    pub fn mean(&self, arm: usize) -> f64 {
        self.alpha[arm] / (self.alpha[arm] + self.beta[arm])
    }

    fn sample_all(&self, rng: &mut Rng) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(&self.beta)
            .map(|(&a, &b)| Beta::new(a, b).expect("positive shape parameters").sample(rng))
            .collect()
    }

    pub fn observe(&mut self, arm: usize, hit: bool) {
        if hit {
            self.alpha[arm] += 1.0;
        } else {
            self.beta[arm] += 1.0;
        }
    }
}

/// One exact Thompson step on a Bernoulli bandit: sample a mean per arm from
/// its Beta posterior, play the argmax (lowest index on ties), update the
/// pulled arm's posterior.
pub fn ts_beta_step(
    env: &EnvironmentSpec,
    posterior: &mut BetaPosterior,
    rng: &mut Rng,
) -> Result<(Action, Observation)> {
    let EnvironmentSpec::Bernoulli { theta_star } = env else {
        return Err(Error::InvalidConfig(format!(
            "ts_beta_step needs a bernoulli environment, got {}",
            env.name()
        )));
    };
    if posterior.alpha.len() != theta_star.len() {
        return Err(Error::InvalidConfig(format!(
            "posterior covers {} arms, environment has {}",
            posterior.alpha.len(),
            theta_star.len()
        )));
    }
    let sampled = posterior.sample_all(rng);
    let arm = crate::bandit::argmax(&sampled);
    let action = Action::Arm(arm);
    let observation = sample_observation(env, &action, rng)?;
    let Observation::Binary(hit) = observation else {
        unreachable!("bernoulli environments emit binary observations")
    };
    posterior.observe(arm, hit);
    Ok((action, observation))
}

/// Multivariate Gaussian posterior over the linear bandit parameter,
/// maintained by rank-one Kalman updates from the prior N(0, I).
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianPosterior {
    pub fn new(dim: usize) -> Self {
        GaussianPosterior {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.mean.iter().copied().collect()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Largest symmetry defect `max_ij |cov_ij - cov_ji|`.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.dim();
        let mut defect: f64 = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                defect = defect.max((self.cov[(i, j)] - self.cov[(j, i)]).abs());
            }
        }
        defect
    }

    /// Draws from the posterior via the Cholesky factor; errors if the
    /// covariance has lost positive definiteness.
    pub fn sample(&self, rng: &mut Rng) -> Result<Vec<f64>> {
        let chol = self.cholesky()?;
        let z = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)),
        );
        let x = &self.mean + chol.l() * z;
        Ok(x.iter().copied().collect())
    }

    fn cholesky(&self) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        Cholesky::new(self.cov.clone()).ok_or_else(|| {
            Error::InvalidConfig("gaussian posterior covariance is not positive definite".into())
        })
    }

    /// Conditions on one observation `y = <theta, a> + noise` with noise
    /// variance `sigma_w2`:
    /// `Sigma' = Sigma - Sigma a a^T Sigma / (sigma_w2 + a^T Sigma a)`,
    /// `mu' = mu + Sigma a (y - a^T mu) / (sigma_w2 + a^T Sigma a)`.
    pub fn observe(&mut self, a: &[f64], y: f64, sigma_w2: f64) {
        let a = DVector::from_column_slice(a);
        let sa = &self.cov * &a;
        let denom = sigma_w2 + a.dot(&sa);
        let gain = (y - a.dot(&self.mean)) / denom;
        self.cov -= &sa * sa.transpose() / denom;
        self.mean += sa * gain;
    }
}

/// One exact Thompson step on the linear bandit: sample a parameter from the
/// Gaussian posterior, play its direction, condition the filter on the
/// observation.
pub fn ts_kalman_step(
    env: &EnvironmentSpec,
    posterior: &mut GaussianPosterior,
    rng: &mut Rng,
) -> Result<(Action, Observation)> {
    let EnvironmentSpec::Linear {
        theta_star,
        sigma_w2,
    } = env
    else {
        return Err(Error::InvalidConfig(format!(
            "ts_kalman_step needs a linear environment, got {}",
            env.name()
        )));
    };
    if posterior.dim() != theta_star.len() {
        return Err(Error::InvalidConfig(format!(
            "posterior dimension {} does not match environment dimension {}",
            posterior.dim(),
            theta_star.len()
        )));
    }
    let sampled = posterior.sample(rng)?;
    let action = crate::bandit::optimal_action(env, &sampled)?;
    let observation = sample_observation(env, &action, rng)?;
    let (Action::Direction(dir), Observation::Scalar(y)) = (&action, &observation) else {
        unreachable!("linear environments use directions and scalars")
    };
    posterior.observe(dir, *y, *sigma_w2);
    Ok((action, observation))
}
