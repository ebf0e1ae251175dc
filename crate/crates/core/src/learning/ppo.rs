use rand::prelude::*;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::cooccurrence::shaping_loss_single;
use crate::error::{Error, Result};
use crate::policy::{
    action_log_prob, policy_backward_into, policy_forward, value_backward_into, value_forward,
    PolicyModel, PolicyParameters, StateLayout, Upstream, ValueParameters, DEFAULT_HIDDEN, MIN_PROB,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub epochs_per_update: usize,
    pub minibatch: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Weight of the shaping loss.
    pub alpha: f64,
    /// Environment rounds collected between updates.
    pub n_s: usize,
    pub lr_policy: f64,
    pub lr_value: f64,
    pub total_epochs: usize,
    /// Rounds per training episode.
    pub horizon: usize,
    /// Candidates proposed per round.
    pub n_actions: usize,
    /// Captions drawn as the initial query of a training episode.
    pub initial_queries: usize,
    pub hidden: usize,
    pub state_layout: StateLayout,
    pub state_top_k: usize,
    pub normalize_advantages: bool,
    /// Pay the target similarity only on the last round of an episode.
    pub terminal_reward_only: bool,
    /// Held-out targets evaluated after each epoch; 0 disables evaluation.
    pub eval_targets: usize,
    pub eval_rounds: usize,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            clip_epsilon: 0.2,
            gamma: 0.95,
            gae_lambda: 0.95,
            epochs_per_update: 4,
            minibatch: 64,
            value_coef: 0.5,
            entropy_coef: 0.01,
            alpha: 1000.0,
            n_s: 600,
            lr_policy: 3e-4,
            lr_value: 1e-3,
            total_epochs: 500,
            horizon: 20,
            n_actions: 10,
            initial_queries: 1,
            hidden: DEFAULT_HIDDEN,
            state_layout: StateLayout::TextMeanPlusDist,
            state_top_k: crate::policy::DEFAULT_STATE_TOP_K,
            normalize_advantages: true,
            terminal_reward_only: false,
            eval_targets: 100,
            eval_rounds: 10,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.into()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if !(self.alpha >= 0.0) || !(self.value_coef >= 0.0) || !(self.entropy_coef >= 0.0) {
            return bad("loss coefficients must be non-negative");
        }
        if !(self.lr_policy > 0.0) || !(self.lr_value > 0.0) {
            return bad("learning rates must be positive");
        }
        if self.epochs_per_update == 0 || self.minibatch == 0 || self.n_s == 0 {
            return bad("epochs_per_update, minibatch and n_s must be positive");
        }
        if self.horizon == 0 || self.n_actions == 0 || self.initial_queries == 0 || self.hidden == 0 {
            return bad("horizon, n_actions, initial_queries and hidden must be positive");
        }
        if self.state_top_k == 0 {
            return bad("state_top_k must be positive");
        }
        Ok(())
    }
}

/// One environment round as seen by the learner.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub actions: Vec<usize>,
    pub log_prob_old: f64,
    pub reward: f64,
    pub value_old: f64,
    pub done: bool,
    /// `P(a | Q_t)` at this state.
    pub shaping: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrajectoryBuffer {
    episodes: Vec<Vec<Step>>,
    horizon: usize,
}

impl TrajectoryBuffer {
    pub fn new(horizon: usize) -> Self {
        TrajectoryBuffer { episodes: Vec::new(), horizon }
    }

    /// Adds a finished episode, rejecting empty, over-long or non-finite ones.
    pub fn push_episode(&mut self, steps: Vec<Step>) -> Result<()> {
        if steps.is_empty() {
            return Err(Error::EmptyEpisode);
        }
        if steps.len() > self.horizon {
            return Err(Error::InvalidConfig(format!(
                "episode of {} rounds exceeds the horizon of {}",
                steps.len(),
                self.horizon
            )));
        }
        for (t, s) in steps.iter().enumerate() {
            let finite = s.reward.is_finite()
                && s.value_old.is_finite()
                && s.log_prob_old.is_finite()
                && s.state.iter().chain(&s.shaping).all(|x| x.is_finite());
            if !finite {
                return Err(Error::NonFiniteLoss { step: t });
            }
        }
        self.episodes.push(steps);
        Ok(())
    }

    pub fn episodes(&self) -> &[Vec<Step>] {
        &self.episodes
    }

    /// Environment rounds held.
    pub fn rounds(&self) -> usize {
        self.episodes.iter().map(Vec::len).sum()
    }

    pub fn clear(&mut self) {
        self.episodes.clear();
    }
}

/// GAE advantages and returns for one episode, bootstrapping 0 after the end.
pub fn compute_advantages(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.is_empty() {
        return Err(Error::EmptyEpisode);
    }
    if rewards.len() != values.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} rewards against {} values",
            rewards.len(),
            values.len()
        )));
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { values[t + 1] } else { 0.0 };
        let delta = rewards[t] + gamma * next - values[t];
        gae = delta + gamma * lambda * gae;
        adv[t] = gae;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Shifts and scales to zero mean and unit variance; constant input becomes zeros.
pub fn normalize(values: &mut [f64]) {
    if values.is_empty() {
        return;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for x in values.iter_mut() {
        *x = if std > 1e-12 { (*x - mean) / std } else { 0.0 };
    }
}

/// Per-net Adam state carried across updates.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizers {
    pub policy: AdamState,
    pub value: AdamState,
}

impl Optimizers {
    pub fn new(model: &PolicyModel) -> Self {
        Optimizers { policy: AdamState::new(&model.policy), value: AdamState::new(&model.value) }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub steps: usize,
    /// Mean over minibatches of the clipped surrogate plus weighted value and entropy terms.
    pub loss_ppo: f64,
    /// Mean over minibatches of the unweighted shaping loss.
    pub loss_shaping: f64,
    pub loss_value: f64,
    pub entropy: f64,
    /// Largest `|ratio − 1|` over the buffer before the first parameter step.
    pub initial_ratio_deviation: f64,
    pub clip_fraction: f64,
    pub optimizer_steps: usize,
}

/// A flattened buffer entry with its advantage and return.
struct Sample<'a> {
    step: &'a Step,
    advantage: f64,
    ret: f64,
}

#[derive(Default)]
struct Partial {
    policy: Option<PolicyParameters>,
    value: Option<ValueParameters>,
    clip: f64,
    value_loss: f64,
    entropy: f64,
    shaping: f64,
    clipped: usize,
}

/// Gradient of `n · mean log π(A|s)` with respect to the logits: `Σ onehot − n·p`.
fn log_prob_logit_grad(probs: &[f64], actions: &[usize]) -> Vec<f64> {
    let n = actions.len() as f64;
    let mut g: Vec<f64> = probs.iter().map(|p| -n * p).collect();
    for &a in actions {
        g[a] += 1.0;
    }
    g
}

fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Loss terms and accumulated gradients for a contiguous chunk of a minibatch.
fn chunk_gradients(
    chunk: &[&Sample<'_>],
    batch: f64,
    model: &PolicyModel,
    config: &PpoConfig,
) -> Result<Partial> {
    let mut pg = model.policy.zeros_like();
    let mut vg = model.value.zeros_like();
    let mut out = Partial::default();
    for s in chunk {
        let step = s.step;
        let (probs, pcache) = policy_forward(&step.state, &model.policy)?;
        let log_prob = action_log_prob(&probs, &step.actions);
        let ratio = (log_prob - step.log_prob_old).exp();
        let clipped_ratio = ratio.clamp(1.0 - config.clip_epsilon, 1.0 + config.clip_epsilon);
        let unclipped = ratio * s.advantage;
        let clipped = clipped_ratio * s.advantage;
        out.clip -= unclipped.min(clipped) / batch;
        if clipped_ratio != ratio {
            out.clipped += 1;
        }

        let mut dlogits = vec![0.0; probs.len()];
        if unclipped <= clipped {
            let coeff = -ratio * s.advantage / batch;
            for (d, g) in dlogits.iter_mut().zip(log_prob_logit_grad(&probs, &step.actions)) {
                *d += coeff * g;
            }
        }
        let h = entropy(&probs);
        out.entropy += h / batch;
        if config.entropy_coef > 0.0 {
            let c = config.entropy_coef / batch;
            for (d, &p) in dlogits.iter_mut().zip(&probs) {
                // d(−c·H)/dz_k = c·p_k(ln p_k + H)
                *d += c * p * (p.max(MIN_PROB).ln() + h);
            }
        }
        pg_accumulate(&pcache, model, &mut dlogits, &probs, &step.shaping, config.alpha, &mut out, &mut pg)?;

        let (value, vcache) = value_forward(&step.state, &model.value)?;
        let err = value - s.ret;
        out.value_loss += err * err / batch;
        value_backward_into(&vcache, &model.value, config.value_coef * 2.0 * err / batch, &mut vg)?;
    }
    out.policy = Some(pg);
    out.value = Some(vg);
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn pg_accumulate(
    cache: &crate::policy::PolicyCache,
    model: &PolicyModel,
    dlogits: &mut [f64],
    probs: &[f64],
    shaping: &[f64],
    alpha: f64,
    out: &mut Partial,
    grads: &mut PolicyParameters,
) -> Result<()> {
    if shaping.len() != probs.len() {
        return Err(Error::ShapeMismatch(format!(
            "shaping target of length {} for a policy over {} objects",
            shaping.len(),
            probs.len()
        )));
    }
    let (loss, dprobs) = shaping_loss_single(shaping, probs);
    out.shaping += loss;
    if alpha > 0.0 {
        let inner: f64 = probs.iter().zip(&dprobs).map(|(p, g)| p * g).sum();
        for ((d, &p), g) in dlogits.iter_mut().zip(probs).zip(&dprobs) {
            *d += alpha * p * (g - inner);
        }
    }
    policy_backward_into(cache, &model.policy, Upstream::Logits(dlogits), grads)
}

const CHUNK: usize = 8;

fn add_into(acc: &mut [&mut Vec<f64>], part: &[&Vec<f64>]) {
    for (a, p) in acc.iter_mut().zip(part) {
        for (x, y) in a.iter_mut().zip(p.iter()) {
            *x += y;
        }
    }
}

/// Loss terms and gradients of the combined objective over `batch`.
///
/// Work is split into fixed-size chunks whose results are summed in order, so
/// the outcome does not depend on thread scheduling.
fn minibatch_gradients(
    batch: &[&Sample<'_>],
    model: &PolicyModel,
    config: &PpoConfig,
) -> Result<(PolicyParameters, ValueParameters, Partial)> {
    use crate::policy::Tensors;
    let size = batch.len() as f64;
    let parts = batch
        .par_chunks(CHUNK)
        .map(|chunk| chunk_gradients(chunk, size, model, config))
        .collect::<Result<Vec<_>>>()?;
    let mut pg = model.policy.zeros_like();
    let mut vg = model.value.zeros_like();
    let mut total = Partial::default();
    for part in parts {
        add_into(&mut pg.tensors_mut(), &part.policy.as_ref().expect("set").tensors());
        add_into(&mut vg.tensors_mut(), &part.value.as_ref().expect("set").tensors());
        total.clip += part.clip;
        total.value_loss += part.value_loss;
        total.entropy += part.entropy;
        total.shaping += part.shaping;
        total.clipped += part.clipped;
    }
    Ok((pg, vg, total))
}

/// Largest `|ratio − 1|` over every step of `buffer` under `policy`.
pub fn max_ratio_deviation(buffer: &TrajectoryBuffer, policy: &PolicyParameters) -> Result<f64> {
    let steps: Vec<&Step> = buffer.episodes().iter().flatten().collect();
    let devs = steps
        .par_iter()
        .map(|s| {
            let (probs, _) = policy_forward(&s.state, policy)?;
            Ok(((action_log_prob(&probs, &s.actions) - s.log_prob_old).exp() - 1.0).abs())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(devs.into_iter().fold(0.0, f64::max))
}

/// Clipped-surrogate PPO with the shaping term on the same minibatches.
///
/// The buffer is cleared on success and left intact on error.
pub fn ppo_update<R: Rng + ?Sized>(
    buffer: &mut TrajectoryBuffer,
    model: &mut PolicyModel,
    optimizers: &mut Optimizers,
    config: &PpoConfig,
    rng: &mut R,
) -> Result<UpdateStats> {
    let have = buffer.rounds();
    if have < config.n_s {
        return Err(Error::InsufficientData { have, need: config.n_s });
    }
    let mut samples = Vec::with_capacity(have);
    for episode in buffer.episodes() {
        let rewards: Vec<f64> = episode.iter().map(|s| s.reward).collect();
        let values: Vec<f64> = episode.iter().map(|s| s.value_old).collect();
        let (adv, ret) = compute_advantages(&rewards, &values, config.gamma, config.gae_lambda)?;
        for ((step, advantage), ret) in episode.iter().zip(adv).zip(ret) {
            samples.push(Sample { step, advantage, ret });
        }
    }
    if config.normalize_advantages {
        let mut adv: Vec<f64> = samples.iter().map(|s| s.advantage).collect();
        normalize(&mut adv);
        for (s, a) in samples.iter_mut().zip(adv) {
            s.advantage = a;
        }
    }

    let mut stats = UpdateStats {
        steps: samples.len(),
        initial_ratio_deviation: max_ratio_deviation(buffer, &model.policy)?,
        ..Default::default()
    };
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut minibatches = 0usize;
    let mut clipped = 0usize;
    for _ in 0..config.epochs_per_update {
        order.shuffle(rng);
        for idx in order.chunks(config.minibatch) {
            let batch: Vec<&Sample<'_>> = idx.iter().map(|&i| &samples[i]).collect();
            let (pg, vg, part) = minibatch_gradients(&batch, model, config)?;
            let shaping_mean = part.shaping / batch.len() as f64;
            let loss = part.clip + config.value_coef * part.value_loss - config.entropy_coef * part.entropy
                + config.alpha * part.shaping;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { step: stats.optimizer_steps });
            }
            optimizers.policy.step(&mut model.policy, &pg, config.lr_policy)?;
            optimizers.value.step(&mut model.value, &vg, config.lr_value)?;
            stats.optimizer_steps += 1;
            minibatches += 1;
            clipped += part.clipped;
            stats.loss_ppo += part.clip + config.value_coef * part.value_loss - config.entropy_coef * part.entropy;
            stats.loss_value += part.value_loss;
            stats.entropy += part.entropy;
            stats.loss_shaping += shaping_mean;
        }
    }
    let mb = minibatches.max(1) as f64;
    stats.loss_ppo /= mb;
    stats.loss_value /= mb;
    stats.entropy /= mb;
    stats.loss_shaping /= mb;
    stats.clip_fraction = clipped as f64 / (samples.len() * config.epochs_per_update).max(1) as f64;
    buffer.clear();
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn advantage_examples() {
        let (_, ret) = compute_advantages(&[1.0, 1.0, 1.0], &[0.0; 3], 1.0, 1.0).unwrap();
        assert_eq!(ret, vec![3.0, 2.0, 1.0]);
        let (adv, _) = compute_advantages(&[0.0; 4], &[0.0; 4], 0.95, 0.95).unwrap();
        assert!(adv.iter().all(|&a| a == 0.0));
        assert!(matches!(compute_advantages(&[], &[], 0.9, 0.9), Err(Error::EmptyEpisode)));
    }

    #[test]
    fn advantages_match_recursive_definition() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rewards: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (gamma, lambda) = (0.9, 0.8);
        // A_t = Σ_l (γλ)^l δ_{t+l}, written as an explicit double sum
        let delta = |t: usize| {
            let next = if t + 1 < 5 { values[t + 1] } else { 0.0 };
            rewards[t] + gamma * next - values[t]
        };
        let (adv, ret) = compute_advantages(&rewards, &values, gamma, lambda).unwrap();
        for t in 0..5 {
            let expected: f64 = (t..5).map(|k| (gamma * lambda).powi((k - t) as i32) * delta(k)).sum();
            assert!((adv[t] - expected).abs() < 1e-12);
            assert!((ret[t] - (expected + values[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn normalize_gives_zero_mean_unit_variance() {
        let mut x = vec![1.0, 2.0, 3.0, 10.0];
        normalize(&mut x);
        let mean: f64 = x.iter().sum::<f64>() / 4.0;
        let var: f64 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
        assert!(mean.abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        let mut c = vec![2.0; 3];
        normalize(&mut c);
        assert_eq!(c, vec![0.0; 3]);
    }

    #[test]
    fn buffer_rejects_bad_episodes() {
        let step = Step {
            state: vec![0.0],
            actions: vec![0],
            log_prob_old: 0.0,
            reward: 0.5,
            value_old: 0.0,
            done: true,
            shaping: vec![1.0],
        };
        let mut buf = TrajectoryBuffer::new(2);
        assert!(matches!(buf.push_episode(vec![]), Err(Error::EmptyEpisode)));
        assert!(buf.push_episode(vec![step.clone(); 3]).is_err());
        let mut nan = step.clone();
        nan.reward = f64::NAN;
        assert!(buf.push_episode(vec![nan]).is_err());
        buf.push_episode(vec![step.clone(), step]).unwrap();
        assert_eq!(buf.rounds(), 2);
    }

    #[test]
    fn config_validation() {
        assert!(PpoConfig::default().validate().is_ok());
        assert!(PpoConfig { clip_epsilon: 1.0, ..Default::default() }.validate().is_err());
        assert!(PpoConfig { gamma: 0.0, ..Default::default() }.validate().is_err());
        assert!(PpoConfig { alpha: -1.0, ..Default::default() }.validate().is_err());
    }
}
