//! The propose / confirm / re-rank loop.
//!
//! Each round the candidate generator proposes objects, the user (or the
//! ground-truth oracle) splits them into present and absent, present objects
//! are appended to the queries as one-word descriptions, absent ones are
//! accumulated as negatives, and the gallery is re-ranked with every image
//! that contains a negative damped by [`REFINE_FACTOR`](crate::ranker::REFINE_FACTOR).

mod baselines;
mod episode;
mod evaluate;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{
    baseline_qacohe, baseline_qasim, baseline_random, build_joint_cooccurrence, qasim_scores,
    JointCooccurrence,
};
pub use episode::{
    oracle_confirm, run_episode, sample_initial_queries, EnvHandle, Episode, EpisodeConfig,
    EpisodeState, EpisodeTrace, RetrievalEnv, RoundRecord,
};
pub use evaluate::{
    evaluate, object_uplift, partial_query_curve, EvalSetting, Report, RoundMetrics, SettingReport,
};

use crate::error::Result;
use crate::learning::CooccurrenceMatrix;
use crate::policy::{policy_forward, select_candidates, ActionSet, PolicyModel, SelectionMode, State};

/// Where the candidates of each round come from.
#[derive(Clone, Copy)]
pub enum PolicySource<'a> {
    Learned {
        model: &'a PolicyModel,
        /// Needed only by the dual-distribution state layout.
        cooccurrence: Option<&'a CooccurrenceMatrix>,
    },
    Random,
    QaSim,
    QaCohe(&'a JointCooccurrence),
}

impl PolicySource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySource::Learned { .. } => "learned",
            PolicySource::Random => "random",
            PolicySource::QaSim => "qasim",
            PolicySource::QaCohe(_) => "qacohe",
        }
    }

    /// Chooses the next candidates for `episode` without mutating it.
    pub fn propose<R: Rng + ?Sized>(
        &self,
        episode: &Episode<'_>,
        n: usize,
        mode: SelectionMode,
        rng: &mut R,
    ) -> Result<ActionSet> {
        let env = episode.env();
        let state = episode.state();
        match *self {
            PolicySource::Learned { model, cooccurrence } => {
                let (_, probs) = learned_distribution(episode, model, cooccurrence)?;
                select_candidates(&probs, n, mode, &state.asked, rng)
            }
            PolicySource::Random => baseline_random(env.vocab_size(), &state.asked, n, rng),
            PolicySource::QaSim => {
                baseline_qasim(&state.query_features, env.object_features(), &state.asked, n)
            }
            PolicySource::QaCohe(joint) => baseline_qacohe(
                &state.query_features,
                joint,
                env.object_features(),
                &state.asked,
                n,
                rng,
            ),
        }
    }
}

/// Current policy state and the network's object distribution for it.
pub fn learned_distribution(
    episode: &Episode<'_>,
    model: &PolicyModel,
    cooccurrence: Option<&CooccurrenceMatrix>,
) -> Result<(State, Vec<f64>)> {
    let state = episode.policy_state(model.layout, cooccurrence)?;
    let (probs, _) = policy_forward(&state.vector, &model.policy)?;
    Ok((state, probs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    Learned,
    Random,
    Qasim,
    Qacohe,
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "learned" => Ok(PolicyKind::Learned),
            "random" => Ok(PolicyKind::Random),
            "qasim" => Ok(PolicyKind::Qasim),
            "qacohe" => Ok(PolicyKind::Qacohe),
            other => Err(format!("unknown policy type {other:?}")),
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PolicyKind::Learned => "learned",
            PolicyKind::Random => "random",
            PolicyKind::Qasim => "qasim",
            PolicyKind::Qacohe => "qacohe",
        })
    }
}

/// Stable 64-bit seed for a sub-stream, so parallel work stays reproducible.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(base) ^ a) ^ b.rotate_left(17))
}
