use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cooccurrence::{build_cooccurrence, CooccurrenceMatrix};
use super::ppo::{ppo_update, Optimizers, PpoConfig, Step, TrajectoryBuffer, UpdateStats};
use crate::error::{Error, Result};
use crate::gallery::{Dataset, Split};
use crate::interaction::{
    derive_seed, oracle_confirm, run_episode, sample_initial_queries, Episode, EpisodeConfig,
    PolicySource, RetrievalEnv,
};
use crate::policy::{policy_forward, select_candidates, value_forward, PolicyModel, SelectionMode};
use crate::ranker::{mean_rank, recall_at_k, RankerKind};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_reward: f64,
    pub loss_ppo: f64,
    pub loss_shaping: f64,
    pub r_at_10_eval: Option<f64>,
    pub mean_rank_eval: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
}

impl TrainingLog {
    /// Line-delimited JSON, one record per epoch.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
            .collect()
    }
}

pub struct TrainOutput {
    pub model: PolicyModel,
    pub log: TrainingLog,
    pub updates: Vec<UpdateStats>,
}

/// Training and evaluation galleries.
///
/// With split tags, training uses the train images and evaluation the test
/// images (or the train images when there is no test split). Untagged
/// datasets use every image for both.
pub fn training_split(dataset: &Dataset) -> Result<(Dataset, Dataset)> {
    if dataset.images.iter().all(|img| img.split.is_none()) {
        return Ok((dataset.clone(), dataset.clone()));
    }
    let train = dataset.subset(Split::Train)?;
    let eval = dataset.subset(Split::Test).unwrap_or_else(|_| train.clone());
    Ok((train, eval))
}

pub fn train(dataset: &Dataset, config: &PpoConfig, seed: u64) -> Result<TrainOutput> {
    train_with(dataset, config, seed, |_| {})
}

/// [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    dataset: &Dataset,
    config: &PpoConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutput> {
    config.validate()?;
    let (train_set, eval_set) = training_split(dataset)?;
    let cooccurrence = build_cooccurrence(&train_set)?;
    let env = RetrievalEnv::new(train_set)?;
    let eval_env = if config.eval_targets > 0 { Some(RetrievalEnv::new(eval_set)?) } else { None };

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 0));
    let mut model = PolicyModel::init(
        config.state_layout,
        env.dataset().feature_dim,
        env.vocab_size(),
        config.hidden,
        &mut init_rng,
    );
    let mut optimizers = Optimizers::new(&model);
    let mut log = TrainingLog::default();
    let mut updates = Vec::with_capacity(config.total_epochs);

    for epoch in 1..=config.total_epochs {
        let buffer = collect_rounds(&env, &model, &cooccurrence, config, derive_seed(seed, epoch as u64, 1))?;
        let mut buffer = buffer;
        let steps: Vec<&Step> = buffer.episodes().iter().flatten().collect();
        let mean_reward = steps.iter().map(|s| s.reward).sum::<f64>() / steps.len() as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, epoch as u64, 2));
        let stats = ppo_update(&mut buffer, &mut model, &mut optimizers, config, &mut rng)?;
        let (r10, mr) = match &eval_env {
            Some(eval) => {
                let (r10, mr) =
                    quick_eval(eval, &model, &cooccurrence, config, derive_seed(seed, epoch as u64, 3))?;
                (Some(r10), Some(mr))
            }
            None => (None, None),
        };
        let record = EpochRecord {
            epoch,
            mean_reward,
            loss_ppo: stats.loss_ppo,
            loss_shaping: stats.loss_shaping,
            r_at_10_eval: r10,
            mean_rank_eval: mr,
        };
        tracing::debug!(epoch, mean_reward, loss_ppo = stats.loss_ppo, loss_shaping = stats.loss_shaping, "epoch done");
        on_epoch(&record);
        log.records.push(record);
        updates.push(stats);
    }
    Ok(TrainOutput { model, log, updates })
}

/// Runs episodes with the current policy until at least `n_s` rounds are held.
///
/// Episodes are seeded by their index and gathered in index order, so the
/// buffer is the same however the work is scheduled.
pub fn collect_rounds(
    env: &RetrievalEnv,
    model: &PolicyModel,
    cooccurrence: &CooccurrenceMatrix,
    config: &PpoConfig,
    seed: u64,
) -> Result<TrajectoryBuffer> {
    let mut buffer = TrajectoryBuffer::new(config.horizon);
    let mut next = 0u64;
    while buffer.rounds() < config.n_s {
        let missing = config.n_s - buffer.rounds();
        let batch = missing.div_ceil(config.horizon).max(1) as u64;
        let episodes = (next..next + batch)
            .into_par_iter()
            .map(|i| collect_episode(env, model, cooccurrence, config, derive_seed(seed, i, 0)))
            .collect::<Result<Vec<_>>>()?;
        for steps in episodes {
            buffer.push_episode(steps)?;
        }
        next += batch;
    }
    Ok(buffer)
}

fn collect_episode(
    env: &RetrievalEnv,
    model: &PolicyModel,
    cooccurrence: &CooccurrenceMatrix,
    config: &PpoConfig,
    seed: u64,
) -> Result<Vec<Step>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rng.random_range(0..env.num_images());
    let image = env.image(target);
    let queries = sample_initial_queries(image, config.initial_queries.min(image.captions.len()), &mut rng)?;
    let episode_config = EpisodeConfig {
        rounds: config.horizon,
        n_candidates: config.n_actions,
        mode: SelectionMode::Stochastic,
        ranker: RankerKind::Sscan,
        accumulate_negatives: true,
        state_top_k: config.state_top_k,
    };
    let mut episode = Episode::start(env, queries, Some(target), &episode_config)?;
    let mut steps = Vec::with_capacity(config.horizon);
    for _ in 0..config.horizon {
        if episode.unasked().is_empty() {
            break;
        }
        let state = episode.policy_state(model.layout, Some(cooccurrence))?;
        let shaping = episode.shaping_target(cooccurrence);
        let (probs, _) = policy_forward(&state.vector, &model.policy)?;
        let (value, _) = value_forward(&state.vector, &model.value)?;
        let action =
            select_candidates(&probs, config.n_actions, SelectionMode::Stochastic, &episode.state().asked, &mut rng)?;
        episode.record_proposal(&action);
        let (positives, negatives) = oracle_confirm(&action.objects, image);
        episode.confirm(&positives, &negatives)?;
        let reward = episode.target_similarity().expect("training episodes have a target");
        steps.push(Step {
            state: state.vector,
            actions: action.objects,
            log_prob_old: action.log_prob,
            reward,
            value_old: value,
            done: false,
            shaping,
        });
    }
    let last = steps.len().checked_sub(1).ok_or(Error::EmptyEpisode)?;
    steps[last].done = true;
    if config.terminal_reward_only {
        for s in &mut steps[..last] {
            s.reward = 0.0;
        }
    }
    Ok(steps)
}

/// R@10 and mean rank of the greedy policy on the first `eval_targets` images.
fn quick_eval(
    env: &RetrievalEnv,
    model: &PolicyModel,
    cooccurrence: &CooccurrenceMatrix,
    config: &PpoConfig,
    seed: u64,
) -> Result<(f64, f64)> {
    let n = config.eval_targets.min(env.num_images());
    let episode_config = EpisodeConfig {
        rounds: config.eval_rounds,
        n_candidates: config.n_actions,
        mode: SelectionMode::Greedy,
        ranker: RankerKind::Sscan,
        accumulate_negatives: true,
        state_top_k: config.state_top_k,
    };
    let policy = PolicySource::Learned { model, cooccurrence: Some(cooccurrence) };
    let ranks = (0..n)
        .into_par_iter()
        .map(|pos| {
            let image = env.image(pos);
            let queries = config.initial_queries.min(image.captions.len());
            run_episode(env, &image.id, queries, &policy, &episode_config, derive_seed(seed, pos as u64, 0))
                .map(|trace| trace.final_rank())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((recall_at_k(&ranks, 10)?, mean_rank(&ranks)?))
}
