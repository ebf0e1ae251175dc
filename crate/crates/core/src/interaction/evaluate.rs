use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::episode::{run_episode, sample_initial_queries, EpisodeConfig, EpisodeTrace, RetrievalEnv};
use super::{derive_seed, PolicySource};
use crate::encoders::encode_text;
use crate::error::{Error, Result};
use crate::policy::SelectionMode;
use crate::ranker::{mean_rank, rank_positions_for, recall_at_k, RankerKind};

/// Initial caption count and candidates per round.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalSetting {
    pub n_q: usize,
    pub n_a: usize,
}

impl EvalSetting {
    pub const STANDARD: [EvalSetting; 3] = [
        EvalSetting { n_q: 1, n_a: 10 },
        EvalSetting { n_q: 2, n_a: 5 },
        EvalSetting { n_q: 4, n_a: 3 },
    ];
}

impl std::str::FromStr for EvalSetting {
    type Err = String;

    /// Parses `q1a10` style names.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let lower = s.trim().to_ascii_lowercase();
        let bad = || format!("setting {s:?} is not of the form q<N>a<N>");
        let rest = lower.strip_prefix('q').ok_or_else(bad)?;
        let (q, a) = rest.split_once('a').ok_or_else(bad)?;
        let n_q: usize = q.parse().map_err(|_| bad())?;
        let n_a: usize = a.parse().map_err(|_| bad())?;
        if n_q == 0 || n_a == 0 {
            return Err(bad());
        }
        Ok(EvalSetting { n_q, n_a })
    }
}

impl std::fmt::Display for EvalSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "q{}a{}", self.n_q, self.n_a)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub t: usize,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub mr: f64,
}

impl RoundMetrics {
    pub fn from_ranks(t: usize, ranks: &[usize]) -> Result<Self> {
        Ok(RoundMetrics {
            t,
            r1: recall_at_k(ranks, 1)?,
            r5: recall_at_k(ranks, 5)?,
            r10: recall_at_k(ranks, 10)?,
            mr: mean_rank(ranks)?,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SettingReport {
    pub n_q: usize,
    pub n_a: usize,
    pub rounds: Vec<RoundMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub settings: Vec<SettingReport>,
    pub seeds: Vec<u64>,
    pub policy_type: String,
}

/// Oracle-driven greedy episodes for every image of `env` under each setting
/// and seed, summarized per round.
///
/// A target's initial captions depend only on the seed, the target and the
/// setting, so every policy starts from the same round-0 ranking.
pub fn evaluate(
    env: &RetrievalEnv,
    policy: &PolicySource<'_>,
    settings: &[EvalSetting],
    rounds: usize,
    seeds: &[u64],
    ranker: RankerKind,
) -> Result<Report> {
    if env.num_images() == 0 || seeds.is_empty() || settings.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut reports = Vec::with_capacity(settings.len());
    for setting in settings {
        let config = EpisodeConfig {
            rounds,
            n_candidates: setting.n_a,
            mode: SelectionMode::Greedy,
            ranker,
            ..Default::default()
        };
        let jobs: Vec<(u64, usize)> =
            seeds.iter().flat_map(|&s| (0..env.num_images()).map(move |pos| (s, pos))).collect();
        let traces = jobs
            .par_iter()
            .map(|&(seed, pos)| {
                let image = env.image(pos);
                let n_q = setting.n_q.min(image.captions.len());
                let seed = derive_seed(seed, pos as u64, setting.n_q as u64);
                run_episode(env, &image.id, n_q, policy, &config, seed)
            })
            .collect::<Result<Vec<EpisodeTrace>>>()?;
        let per_round = (0..=rounds)
            .map(|t| {
                let ranks: Vec<usize> = traces.iter().map(|tr| tr.rank_at(t)).collect();
                RoundMetrics::from_ranks(t, &ranks)
            })
            .collect::<Result<Vec<_>>>()?;
        reports.push(SettingReport { n_q: setting.n_q, n_a: setting.n_a, rounds: per_round });
    }
    Ok(Report { settings: reports, seeds: seeds.to_vec(), policy_type: policy.name().to_owned() })
}

/// 1-based rank of the image at `target` for a set of query strings.
fn rank_for_queries(env: &RetrievalEnv, ranker: RankerKind, queries: &[String], target: usize) -> Result<usize> {
    let scorer = env.scorer(ranker)?;
    let per_query = queries
        .iter()
        .map(|q| scorer.score_query(&encode_text(q, env.dataset())))
        .collect::<Result<Vec<_>>>()?;
    let scores = scorer.combine(&per_query)?;
    Ok(rank_positions_for(&scores, env.dataset(), Some(target)).target_rank.expect("target is set"))
}

fn captions_for(env: &RetrievalEnv, pos: usize, n: usize, seed: u64) -> Result<Vec<String>> {
    let image = env.image(pos);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, pos as u64, n as u64));
    sample_initial_queries(image, n.min(image.captions.len()), &mut rng)
}

/// Retrieval quality against the number of captions in the query, without
/// interaction: for each count `c` in `1..=max_captions`, every image is
/// queried with `c` of its own captions.
pub fn partial_query_curve(
    env: &RetrievalEnv,
    ranker: RankerKind,
    max_captions: usize,
    seed: u64,
) -> Result<Vec<(usize, RoundMetrics)>> {
    if env.num_images() == 0 || max_captions == 0 {
        return Err(Error::EmptyInput);
    }
    (1..=max_captions)
        .map(|c| {
            let ranks = (0..env.num_images())
                .into_par_iter()
                .map(|pos| rank_for_queries(env, ranker, &captions_for(env, pos, c, seed)?, pos))
                .collect::<Result<Vec<_>>>()?;
            Ok((c, RoundMetrics::from_ranks(c, &ranks)?))
        })
        .collect()
}

/// Metrics for one-caption queries before and after appending every object
/// word of the target.
pub fn object_uplift(env: &RetrievalEnv, ranker: RankerKind, seed: u64) -> Result<(RoundMetrics, RoundMetrics)> {
    if env.num_images() == 0 {
        return Err(Error::EmptyInput);
    }
    let pairs = (0..env.num_images())
        .into_par_iter()
        .map(|pos| {
            let mut queries = captions_for(env, pos, 1, seed)?;
            let before = rank_for_queries(env, ranker, &queries, pos)?;
            queries.extend(env.image(pos).objects.iter().map(|&a| env.word(a).to_owned()));
            let after = rank_for_queries(env, ranker, &queries, pos)?;
            Ok((before, after))
        })
        .collect::<Result<Vec<(usize, usize)>>>()?;
    let (before, after): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
    Ok((RoundMetrics::from_ranks(0, &before)?, RoundMetrics::from_ranks(1, &after)?))
}
