//! Which particles survive, and why.
//!
//! The central objects are the drift matrix and, for two-arm Bernoulli
//! problems, the divergence diagram. Entry `(i, j)` of the drift matrix is
//! the expected one-step change of particle `j`'s log weight while particle
//! `i` is being played: the negated KL divergence from the true observation
//! law under action `A(i)` to particle `j`'s. A weight vector `pi` can only
//! be stable if the particles it supports maximize `pi D` exactly on that
//! support; [`survival_condition_check`] tests this with finite-run slack.
//!
//! In the two-arm diagram each particle becomes the line
//! `D_i(r) = r d(theta*_0 || theta^i_0) + (1 - r) d(theta*_1 || theta^i_1)`
//! over the arm-0 play frequency `r`. The lower envelope of those lines
//! determines the long-run fate of the play-frequency process: its
//! breakpoints, the dominant particle of each interval, counter- and
//! self-reinforcing pairs, and the contraction set of candidate limits for
//! `r_t`.
//!
//! Arms are indexed 0 and 1 throughout; `r` is the frequency of arm 0.

use crate::bandit::{argmax, dot, optimal_action, Action, EnvironmentSpec, ParticleSystem};
use crate::error::{Error, Result};
use crate::netslice::{self, LatencyModel, SliceContext, MEAN_FLOOR};

/// Tolerance for the geometric predicates: duplicate lines, concurrency,
/// crossing comparisons.
pub const GEOM_TOL: f64 = 1e-12;

/// KL divergence between Bernoulli distributions,
/// `x ln(x/y) + (1-x) ln((1-x)/(1-y))`, with `0 ln 0 = 0`. `y` on the
/// boundary would make the divergence infinite and is rejected; particle
/// clamping keeps it away in practice.
pub fn kl_bernoulli(x: f64, y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::KlUndefined(format!("x = {x} outside [0, 1]")));
    }
    if !(y > 0.0 && y < 1.0) {
        return Err(Error::KlUndefined(format!("y = {y} outside (0, 1)")));
    }
    let mut kl = 0.0;
    if x > 0.0 {
        kl += x * (x / y).ln();
    }
    if x < 1.0 {
        kl += (1.0 - x) * ((1.0 - x) / (1.0 - y)).ln();
    }
    Ok(kl.max(0.0))
}

/// KL divergence between exponential distributions given by their means:
/// `ln(m2/m1) + m1/m2 - 1`. Means are floored like the likelihood code.
fn kl_exponential_means(m1: f64, m2: f64) -> f64 {
    let m1 = m1.max(MEAN_FLOOR);
    let m2 = m2.max(MEAN_FLOOR);
    ((m2 / m1).ln() + m1 / m2 - 1.0).max(0.0)
}

/// Expected per-step log-weight drifts: `entries[i][j]` is the drift of
/// particle `j` while particle `i`'s action is played, always `<= 0` and
/// zero exactly when particle `j` reproduces the true observation law under
/// that action.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftMatrix {
    pub entries: Vec<Vec<f64>>,
    pub row_actions: Vec<Action>,
}

impl DriftMatrix {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// `v = pi D`, the stationary score of each particle under selection
    /// frequencies `pi`.
    pub fn scores(&self, pi: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut v = vec![0.0; n];
        for (i, row) in self.entries.iter().enumerate() {
            for (j, d) in row.iter().enumerate() {
                v[j] += pi[i] * d;
            }
        }
        v
    }
}

/// Builds the drift matrix in closed form. All four built-in observation
/// models have analytic divergences; `_mc_samples` is reserved for models
/// that would need Monte-Carlo estimation. The contextual netslice model is
/// evaluated at the fixed reference context `(c1, c2) = (1, 1)`.
pub fn drift_matrix(
    env: &EnvironmentSpec,
    ps: &ParticleSystem,
    _mc_samples: usize,
) -> Result<DriftMatrix> {
    env.validate()?;
    let n = ps.len();
    let mut row_actions = Vec::with_capacity(n);
    let mut entries = Vec::with_capacity(n);

    // Per-row data that only depends on the row action is computed once.
    match env {
        EnvironmentSpec::Bernoulli { theta_star } => {
            for i in 0..n {
                let action = optimal_action(env, ps.particle(i))?;
                let &Action::Arm(a) = &action else { unreachable!() };
                let mut row = Vec::with_capacity(n);
                for j in 0..n {
                    row.push(-kl_bernoulli(theta_star[a], ps.particle(j)[a])?);
                }
                entries.push(row);
                row_actions.push(action);
            }
        }
        EnvironmentSpec::MaxBernoulli { theta_star, .. } => {
            let success = |theta: &[f64], subset: &[usize]| -> f64 {
                1.0 - subset.iter().map(|&a| 1.0 - theta[a]).product::<f64>()
            };
            for i in 0..n {
                let action = optimal_action(env, ps.particle(i))?;
                let Action::Subset(ref subset) = action else { unreachable!() };
                let p_star = success(theta_star, subset);
                let mut row = Vec::with_capacity(n);
                for j in 0..n {
                    row.push(-kl_bernoulli(p_star, success(ps.particle(j), subset))?);
                }
                entries.push(row);
                row_actions.push(action);
            }
        }
        EnvironmentSpec::Linear {
            theta_star,
            sigma_w2,
        } => {
            // Equal-variance Gaussians: KL = (mean gap)^2 / (2 sigma^2).
            for i in 0..n {
                let action = optimal_action(env, ps.particle(i))?;
                let Action::Direction(ref dir) = action else { unreachable!() };
                let mut row = Vec::with_capacity(n);
                for j in 0..n {
                    let gap: f64 = dot(theta_star, dir) - dot(ps.particle(j), dir);
                    row.push(-gap * gap / (2.0 * sigma_w2));
                }
                entries.push(row);
                row_actions.push(action);
            }
        }
        EnvironmentSpec::NetSlice {
            theta_star,
            block_counts,
        } => {
            let reference = SliceContext::new(1.0, 1.0)?;
            let star = LatencyModel::from_flat(block_counts, theta_star)?;
            let models: Vec<LatencyModel> = (0..n)
                .map(|j| LatencyModel::from_flat(block_counts, ps.particle(j)))
                .collect::<Result<_>>()?;
            for model_i in &models {
                let choice = netslice::select_action(model_i, &reference);
                let star_means = star.action_means(&choice, &reference);
                let mut row = Vec::with_capacity(n);
                for model_j in &models {
                    let kl: f64 = star_means
                        .iter()
                        .zip(model_j.action_means(&choice, &reference))
                        .map(|(&ms, mj)| kl_exponential_means(ms, mj))
                        .sum();
                    row.push(-kl);
                }
                entries.push(row);
                row_actions.push(Action::BlockChoice(choice));
            }
        }
    }
    Ok(DriftMatrix {
        entries,
        row_actions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurvivalVerdict {
    Holds,
    Violated,
}

/// Outcome of the stationarity check, with per-particle diagnostics.
#[derive(Debug, Clone)]
pub struct SurvivalReport {
    pub verdict: SurvivalVerdict,
    /// Empirical support: particles with `pi_i > tol`.
    pub support: Vec<usize>,
    /// `v = pi D`.
    pub scores: Vec<f64>,
    /// `max(v) - v_i` per particle.
    pub gaps: Vec<f64>,
    pub tol: f64,
}

impl SurvivalReport {
    pub fn holds(&self) -> bool {
        self.verdict == SurvivalVerdict::Holds
    }
}

/// Checks the stationarity condition `argmax(pi D) = supp(pi)` with slack:
/// the support must reach within `tol` of the global maximum of `v = pi D`,
/// and every particle outside the support must sit strictly more than `tol`
/// below it.
pub fn survival_condition_check(
    pi: &[f64],
    drift: &DriftMatrix,
    tol: f64,
) -> Result<SurvivalReport> {
    if pi.len() != drift.len() {
        return Err(Error::InvalidConfig(format!(
            "weight vector has {} entries, drift matrix has {}",
            pi.len(),
            drift.len()
        )));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidConfig(format!(
            "survival check needs tol > 0, got {tol}"
        )));
    }
    if pi.iter().any(|&p| !(0.0..=1.0 + 1e-9).contains(&p))
        || (pi.iter().sum::<f64>() - 1.0).abs() > 1e-6
    {
        return Err(Error::InvalidConfig(
            "weight vector must be a probability vector".into(),
        ));
    }
    let scores = drift.scores(pi);
    let support: Vec<usize> = (0..pi.len()).filter(|&i| pi[i] > tol).collect();
    let global_max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let support_max = support
        .iter()
        .map(|&i| scores[i])
        .fold(f64::NEG_INFINITY, f64::max);
    let support_reaches_max = support_max >= global_max - tol;
    let outsiders_below = (0..pi.len())
        .filter(|i| !support.contains(i))
        .all(|i| scores[i] < global_max - tol);
    let verdict = if support_reaches_max && outsiders_below {
        SurvivalVerdict::Holds
    } else {
        SurvivalVerdict::Violated
    };
    let gaps = scores.iter().map(|&v| global_max - v).collect();
    Ok(SurvivalReport {
        verdict,
        support,
        scores,
        gaps,
        tol,
    })
}

/// One particle's line in the divergence diagram:
/// `D(r) = r * at_one + (1 - r) * at_zero` with
/// `at_one = d(theta*_0 || theta_0)` and `at_zero = d(theta*_1 || theta_1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceLine {
    pub particle: usize,
    pub at_zero: f64,
    pub at_one: f64,
    /// The particle's optimal arm, 0 or 1; ties prefer arm 0.
    pub optimal_arm: usize,
}

impl DivergenceLine {
    pub fn eval(&self, r: f64) -> f64 {
        self.at_zero + (self.at_one - self.at_zero) * r
    }

    pub fn slope(&self) -> f64 {
        self.at_one - self.at_zero
    }
}

/// Builds the divergence line of one particle of a two-arm Bernoulli
/// problem. Particle coordinates on the boundary make a divergence infinite
/// and error; clamp upstream.
pub fn divergence_line(theta_star: &[f64], particle: &[f64], index: usize) -> Result<DivergenceLine> {
    if theta_star.len() != 2 || particle.len() != 2 {
        return Err(Error::InvalidConfig(
            "divergence diagrams are defined for two-arm problems".into(),
        ));
    }
    Ok(DivergenceLine {
        particle: index,
        at_zero: kl_bernoulli(theta_star[1], particle[1])?,
        at_one: kl_bernoulli(theta_star[0], particle[0])?,
        optimal_arm: argmax(particle),
    })
}

/// Divergence lines for a whole particle set, indexed by position.
pub fn divergence_lines(theta_star: &[f64], particles: &[Vec<f64>]) -> Result<Vec<DivergenceLine>> {
    particles
        .iter()
        .enumerate()
        .map(|(i, p)| divergence_line(theta_star, p, i))
        .collect()
}

/// A breakpoint of the lower envelope: the boundary points carry the single
/// particle dominating just inside, interior crossings carry both particles.
#[derive(Debug, Clone, PartialEq)]
pub struct Breakpoint {
    pub r: f64,
    pub particles: Vec<usize>,
}

/// The lower envelope `min_i D_i(r)` of a set of divergence lines, with the
/// structure that determines where the play-frequency process can settle.
#[derive(Debug, Clone, PartialEq)]
pub struct DivergenceDiagram {
    pub lines: Vec<DivergenceLine>,
    /// Sorted; always includes 0 and 1.
    pub breakpoints: Vec<Breakpoint>,
    /// `dominant[k]` is the particle achieving the envelope on the interval
    /// between breakpoints `k` and `k + 1`.
    pub dominant: Vec<usize>,
    /// Breakpoint values in the contraction set.
    pub contraction_set: Vec<f64>,
}

impl DivergenceDiagram {
    /// Index of the interval containing `r`.
    fn interval_of(&self, r: f64) -> usize {
        let last = self.dominant.len() - 1;
        self.breakpoints[1..]
            .iter()
            .position(|bp| r < bp.r)
            .unwrap_or(last)
    }

    /// The dominant particle at `r` (either one at a breakpoint).
    pub fn dominant_at(&self, r: f64) -> usize {
        self.dominant[self.interval_of(r)]
    }

    /// Envelope value at `r`.
    pub fn value(&self, r: f64) -> f64 {
        let line = &self.lines[self.line_position(self.dominant_at(r))];
        line.eval(r)
    }

    fn line_position(&self, particle: usize) -> usize {
        self.lines
            .iter()
            .position(|l| l.particle == particle)
            .expect("dominant particle is one of the diagram's lines")
    }
}

/// Computes the lower envelope by marching from `r = 0`, switching lines at
/// each earliest crossing. Duplicate lines and three lines meeting at one
/// envelope point violate the genericity the breakpoint structure needs and
/// are rejected.
pub fn lower_envelope(lines: &[DivergenceLine]) -> Result<DivergenceDiagram> {
    if lines.is_empty() {
        return Err(Error::InvalidConfig(
            "lower envelope needs at least one line".into(),
        ));
    }
    for line in lines {
        if !(line.at_zero.is_finite() && line.at_one.is_finite())
            || line.at_zero < 0.0
            || line.at_one < 0.0
        {
            return Err(Error::InvalidConfig(format!(
                "line of particle {} has invalid endpoints ({}, {})",
                line.particle, line.at_zero, line.at_one
            )));
        }
    }
    for (i, a) in lines.iter().enumerate() {
        for b in &lines[i + 1..] {
            if (a.at_zero - b.at_zero).abs() <= GEOM_TOL && (a.at_one - b.at_one).abs() <= GEOM_TOL
            {
                return Err(Error::DuplicateLines {
                    i: a.particle,
                    j: b.particle,
                });
            }
        }
    }

    // Start with the line strictly lowest just inside r = 0: smallest value
    // at 0, ties by smaller slope.
    let mut current = 0;
    for (i, line) in lines.iter().enumerate() {
        let cur = &lines[current];
        if line.at_zero < cur.at_zero - GEOM_TOL
            || ((line.at_zero - cur.at_zero).abs() <= GEOM_TOL && line.slope() < cur.slope())
        {
            current = i;
        }
    }

    let mut breakpoints = vec![Breakpoint {
        r: 0.0,
        particles: vec![lines[current].particle],
    }];
    let mut dominant_pos = Vec::new();
    let mut r_cur = 0.0;
    loop {
        // Earliest takeover: a line of smaller slope crossing the current
        // one strictly inside (r_cur, 1).
        let mut best_r = f64::INFINITY;
        let mut takers: Vec<usize> = Vec::new();
        for (j, line) in lines.iter().enumerate() {
            if j == current {
                continue;
            }
            let slope_gap = lines[current].slope() - line.slope();
            if slope_gap <= GEOM_TOL {
                continue;
            }
            let r_star = (line.at_zero - lines[current].at_zero) / slope_gap;
            if r_star <= r_cur + GEOM_TOL || r_star >= 1.0 - GEOM_TOL {
                continue;
            }
            if r_star < best_r - GEOM_TOL {
                best_r = r_star;
                takers = vec![j];
            } else if r_star <= best_r + GEOM_TOL {
                best_r = best_r.min(r_star);
                takers.push(j);
            }
        }
        dominant_pos.push(current);
        match takers.len() {
            0 => {
                breakpoints.push(Breakpoint {
                    r: 1.0,
                    particles: vec![lines[current].particle],
                });
                break;
            }
            1 => {
                let next = takers[0];
                breakpoints.push(Breakpoint {
                    r: best_r,
                    particles: vec![lines[current].particle, lines[next].particle],
                });
                current = next;
                r_cur = best_r;
            }
            _ => {
                return Err(Error::ConcurrentLines {
                    i: lines[current].particle,
                    j: lines[takers[0]].particle,
                    k: lines[takers[1]].particle,
                    r: best_r,
                });
            }
        }
    }

    // Contraction set: r = 0 enters when the left-edge particle plays arm 1,
    // r = 1 when the right-edge particle plays arm 0, and an interior
    // breakpoint when its two particles form a CR pair, which in envelope
    // terms means the left-dominant line plays arm 0 and the right-dominant
    // line plays arm 1.
    let mut contraction_set = Vec::new();
    if lines[dominant_pos[0]].optimal_arm == 1 {
        contraction_set.push(0.0);
    }
    for k in 1..breakpoints.len() - 1 {
        let left = &lines[dominant_pos[k - 1]];
        let right = &lines[dominant_pos[k]];
        if left.optimal_arm == 0 && right.optimal_arm == 1 {
            contraction_set.push(breakpoints[k].r);
        }
    }
    if lines[*dominant_pos.last().unwrap()].optimal_arm == 0 {
        contraction_set.push(1.0);
    }

    Ok(DivergenceDiagram {
        lines: lines.to_vec(),
        breakpoints,
        dominant: dominant_pos.iter().map(|&p| lines[p].particle).collect(),
        contraction_set,
    })
}

/// The contraction set of a diagram: candidate limits of the play-frequency
/// process.
pub fn contraction_set(diagram: &DivergenceDiagram) -> &[f64] {
    &diagram.contraction_set
}

/// How two particles' lines relate on the diagram.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PairClass {
    /// Lines cross; the left-dominant particle plays arm 0 and the
    /// right-dominant plays arm 1, so each pulls the play frequency back
    /// toward the crossing.
    Cr,
    /// Lines cross with the arms reversed; each particle reinforces itself
    /// and one of the two eventually takes all the weight.
    Sr,
    /// One line lies below the other on all of [0, 1].
    Dominated,
    /// Lines cross but both particles prefer the same arm.
    SameArm,
}

impl PairClass {
    pub fn name(self) -> &'static str {
        match self {
            PairClass::Cr => "cr",
            PairClass::Sr => "sr",
            PairClass::Dominated => "dominated",
            PairClass::SameArm => "same_arm",
        }
    }
}

/// Classifies a particle pair. Equal divergences at an endpoint put the pair
/// on a decision boundary of the classification and are rejected; callers
/// with such inputs should perturb them.
pub fn classify_pair(theta_star: &[f64], p1: &[f64], p2: &[f64]) -> Result<PairClass> {
    let l1 = divergence_line(theta_star, p1, 0)?;
    let l2 = divergence_line(theta_star, p2, 1)?;
    let gap_zero = l1.at_zero - l2.at_zero;
    let gap_one = l1.at_one - l2.at_one;
    if gap_zero.abs() <= GEOM_TOL && gap_one.abs() <= GEOM_TOL {
        return Err(Error::DegeneratePair(
            "the particles' divergence lines coincide".into(),
        ));
    }
    if gap_zero.abs() <= GEOM_TOL || gap_one.abs() <= GEOM_TOL {
        return Err(Error::DegeneratePair(
            "equal divergences at an endpoint leave the crossing undefined".into(),
        ));
    }
    if gap_zero.signum() == gap_one.signum() {
        return Ok(PairClass::Dominated);
    }
    let (left, right) = if gap_zero < 0.0 { (&l1, &l2) } else { (&l2, &l1) };
    Ok(match (left.optimal_arm, right.optimal_arm) {
        (0, 1) => PairClass::Cr,
        (1, 0) => PairClass::Sr,
        _ => PairClass::SameArm,
    })
}

/// Crossing point `rbar` of a CR pair, the attractor of the play-frequency
/// process: with the pair labeled so particle 1 dominates on the left,
/// `f(r) = D_2(r) - D_1(r) = alpha r + beta` has `alpha < 0 < beta` and
/// `rbar = -beta / alpha` lies in (0, 1).
pub fn cr_crossing(theta_star: &[f64], p1: &[f64], p2: &[f64]) -> Result<f64> {
    let class = classify_pair(theta_star, p1, p2)?;
    if class != PairClass::Cr {
        return Err(Error::NotCrPair(class.name()));
    }
    let l1 = divergence_line(theta_star, p1, 0)?;
    let l2 = divergence_line(theta_star, p2, 1)?;
    let (left, right) = if l1.at_zero < l2.at_zero { (&l1, &l2) } else { (&l2, &l1) };
    let alpha = right.slope() - left.slope();
    let beta = right.at_zero - left.at_zero;
    Ok(-beta / alpha)
}

/// Exact action-optimality: the particle's preferred arm loses nothing
/// under the true parameter. With equal true arm means every particle
/// qualifies.
pub fn is_action_optimal(theta_star: &[f64], particle: &[f64]) -> Result<bool> {
    if theta_star.len() != 2 || particle.len() != 2 {
        return Err(Error::InvalidConfig(
            "action-optimality is defined for two-arm problems".into(),
        ));
    }
    let best = theta_star[argmax(theta_star)];
    Ok(theta_star[argmax(particle)] == best)
}

/// Sufficient divergence thresholds for action-optimality:
/// `dbar_a = d(theta*_a || (theta*_0 + theta*_1) / 2)`. Undefined when the
/// true arm means coincide.
pub fn action_optimal_thresholds(theta_star: &[f64]) -> Result<(f64, f64)> {
    if theta_star.len() != 2 {
        return Err(Error::InvalidConfig(
            "action-optimality is defined for two-arm problems".into(),
        ));
    }
    if theta_star[0] == theta_star[1] {
        return Err(Error::InvalidConfig(
            "threshold test needs distinct true arm means".into(),
        ));
    }
    let mid = 0.5 * (theta_star[0] + theta_star[1]);
    Ok((
        kl_bernoulli(theta_star[0], mid)?,
        kl_bernoulli(theta_star[1], mid)?,
    ))
}

/// Threshold variant of the action-optimality test: true whenever both arm
/// divergences fall below their thresholds. Sufficient, not necessary.
pub fn is_action_optimal_threshold(theta_star: &[f64], particle: &[f64]) -> Result<bool> {
    let (dbar_0, dbar_1) = action_optimal_thresholds(theta_star)?;
    Ok(kl_bernoulli(theta_star[0], particle[0])? < dbar_0
        && kl_bernoulli(theta_star[1], particle[1])? < dbar_1)
}

/// Observed versus predicted log-weight gap growth for two particles.
#[derive(Debug, Clone, PartialEq)]
pub struct GapRateSeries {
    pub times: Vec<u64>,
    /// `(ln w_{t,i} - ln w_{t,j}) / t`; normalization shifts cancel in the
    /// difference, so normalized log weights match the unnormalized form.
    pub gap_rate: Vec<f64>,
    /// `D_j(r_t) - D_i(r_t)` from the recorded arm frequencies.
    pub predicted: Vec<f64>,
}

/// Builds the gap-rate series of particle `i` against particle `j` from a
/// recorded run: log weights and arm-0 frequencies sampled at the given
/// times.
pub fn log_weight_gap_rates(
    times: &[u64],
    log_weights_i: &[f64],
    log_weights_j: &[f64],
    arm0_freq: &[f64],
    line_i: &DivergenceLine,
    line_j: &DivergenceLine,
) -> Result<GapRateSeries> {
    let n = times.len();
    if log_weights_i.len() != n || log_weights_j.len() != n || arm0_freq.len() != n {
        return Err(Error::InvalidConfig(
            "gap-rate series need equally long time, weight and frequency records".into(),
        ));
    }
    if times.iter().any(|&t| t == 0) {
        return Err(Error::InvalidConfig(
            "gap rates divide by t and need times >= 1".into(),
        ));
    }
    let mut gap_rate = Vec::with_capacity(n);
    let mut predicted = Vec::with_capacity(n);
    for k in 0..n {
        gap_rate.push((log_weights_i[k] - log_weights_j[k]) / times[k] as f64);
        predicted.push(line_j.eval(arm0_freq[k]) - line_i.eval(arm0_freq[k]));
    }
    Ok(GapRateSeries {
        times: times.to_vec(),
        gap_rate,
        predicted,
    })
}
