use std::collections::BTreeSet;
use std::ops::Deref;
use std::sync::Arc;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::PolicySource;
use crate::encoders::{encode_object_word, encode_text, TextFeature};
use crate::error::{Error, Result};
use crate::gallery::{build_object_index, Dataset, GalleryImage, ObjectPresenceIndex};
use crate::learning::{shaping_target, CooccurrenceMatrix};
use crate::policy::{
    unasked, ActionSet, SelectionMode, State, StateBuilder, StateLayout, DEFAULT_STATE_TOP_K,
};
use crate::ranker::{
    rank_positions_for, refine_similarities, GalleryScorer, RankedList, RankerKind, SimilarityVector,
};

/// A gallery prepared for interactive search: object index, both scorers and
/// the encoded vocabulary.
pub struct RetrievalEnv {
    dataset: Dataset,
    index: ObjectPresenceIndex,
    sscan: GalleryScorer,
    tcmpl: Option<GalleryScorer>,
    degenerate: Option<String>,
    object_features: Vec<TextFeature>,
}

impl RetrievalEnv {
    pub fn new(dataset: Dataset) -> Result<Self> {
        let index = build_object_index(&dataset);
        let sscan = GalleryScorer::new(&dataset, RankerKind::Sscan)?;
        let (tcmpl, degenerate) = match GalleryScorer::new(&dataset, RankerKind::Tcmpl) {
            Ok(s) => (Some(s), None),
            Err(Error::DegenerateImage(id)) => (None, Some(id)),
            Err(e) => return Err(e),
        };
        let object_features = (0..dataset.vocab_size())
            .map(|a| encode_object_word(a, &dataset))
            .collect::<Result<Vec<_>>>()?;
        Ok(RetrievalEnv { dataset, index, sscan, tcmpl, degenerate, object_features })
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn index(&self) -> &ObjectPresenceIndex {
        &self.index
    }

    pub fn vocab_size(&self) -> usize {
        self.dataset.vocab_size()
    }

    pub fn num_images(&self) -> usize {
        self.dataset.num_images()
    }

    pub fn object_features(&self) -> &[TextFeature] {
        &self.object_features
    }

    pub fn scorer(&self, kind: RankerKind) -> Result<&GalleryScorer> {
        match kind {
            RankerKind::Sscan => Ok(&self.sscan),
            RankerKind::Tcmpl => self
                .tcmpl
                .as_ref()
                .ok_or_else(|| Error::DegenerateImage(self.degenerate.clone().unwrap_or_default())),
        }
    }

    pub fn position(&self, image_id: &str) -> Result<usize> {
        self.dataset.image_position(image_id).ok_or_else(|| Error::UnknownTarget(image_id.into()))
    }

    pub fn image(&self, pos: usize) -> &GalleryImage {
        &self.dataset.images[pos]
    }

    pub fn word(&self, object: usize) -> &str {
        &self.dataset.vocab[object]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeConfig {
    /// Maximum number of propose/confirm rounds.
    pub rounds: usize,
    pub n_candidates: usize,
    pub mode: SelectionMode,
    pub ranker: RankerKind,
    /// Apply every negative confirmed so far (true) or only the latest round's.
    pub accumulate_negatives: bool,
    pub state_top_k: usize,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        EpisodeConfig {
            rounds: 10,
            n_candidates: 10,
            mode: SelectionMode::Greedy,
            ranker: RankerKind::Sscan,
            accumulate_negatives: true,
            state_top_k: DEFAULT_STATE_TOP_K,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EpisodeState {
    /// Completed confirmation rounds.
    pub round: usize,
    pub query_texts: Vec<String>,
    pub query_features: Vec<TextFeature>,
    /// Every object proposed and not skipped.
    pub asked: BTreeSet<usize>,
    /// Proposal awaiting confirmation.
    pub pending: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: BTreeSet<usize>,
    pub round_negatives: BTreeSet<usize>,
    pub unrefined: SimilarityVector,
    pub refined: SimilarityVector,
    pub ranked: RankedList,
    pub target: Option<usize>,
    pub ranker: RankerKind,
}

/// Borrowed or shared access to a [`RetrievalEnv`].
#[derive(Clone)]
pub enum EnvHandle<'e> {
    Borrowed(&'e RetrievalEnv),
    Shared(Arc<RetrievalEnv>),
}

impl Deref for EnvHandle<'_> {
    type Target = RetrievalEnv;

    fn deref(&self) -> &RetrievalEnv {
        match self {
            EnvHandle::Borrowed(env) => env,
            EnvHandle::Shared(env) => env,
        }
    }
}

impl<'e> From<&'e RetrievalEnv> for EnvHandle<'e> {
    fn from(env: &'e RetrievalEnv) -> Self {
        EnvHandle::Borrowed(env)
    }
}

impl From<Arc<RetrievalEnv>> for EnvHandle<'static> {
    fn from(env: Arc<RetrievalEnv>) -> Self {
        EnvHandle::Shared(env)
    }
}

/// One search session over a [`RetrievalEnv`].
pub struct Episode<'e> {
    env: EnvHandle<'e>,
    state: EpisodeState,
    query_scores: Vec<Vec<f64>>,
    accumulate_negatives: bool,
    state_top_k: usize,
}

impl<'e> Episode<'e> {
    pub fn start(
        env: impl Into<EnvHandle<'e>>,
        queries: Vec<String>,
        target: Option<usize>,
        config: &EpisodeConfig,
    ) -> Result<Self> {
        let env = env.into();
        if queries.is_empty() {
            return Err(Error::EmptyQuerySet);
        }
        if let Some(t) = target {
            if t >= env.num_images() {
                return Err(Error::IndexOutOfRange { what: "gallery", index: t, len: env.num_images() });
            }
        }
        let scorer = env.scorer(config.ranker)?;
        let query_features: Vec<TextFeature> =
            queries.iter().map(|q| encode_text(q, env.dataset())).collect();
        let query_scores =
            query_features.iter().map(|f| scorer.score_query(f)).collect::<Result<Vec<_>>>()?;
        let unrefined = scorer.combine(&query_scores)?;
        let ranked = rank_positions_for(&unrefined, env.dataset(), target);
        let state = EpisodeState {
            round: 0,
            query_texts: queries,
            query_features,
            asked: BTreeSet::new(),
            pending: Vec::new(),
            positives: Vec::new(),
            negatives: BTreeSet::new(),
            round_negatives: BTreeSet::new(),
            refined: unrefined.clone(),
            unrefined,
            ranked,
            target,
            ranker: config.ranker,
        };
        Ok(Episode {
            env,
            state,
            query_scores,
            accumulate_negatives: config.accumulate_negatives,
            state_top_k: config.state_top_k,
        })
    }

    pub fn env(&self) -> &RetrievalEnv {
        &self.env
    }

    pub fn state(&self) -> &EpisodeState {
        &self.state
    }

    pub fn unasked(&self) -> Vec<usize> {
        unasked(self.env.vocab_size(), &self.state.asked)
    }

    pub fn target_rank(&self) -> Option<usize> {
        self.state.ranked.target_rank
    }

    /// Unrefined query-set similarity of the target: the per-round reward.
    pub fn target_similarity(&self) -> Option<f64> {
        self.state.target.map(|t| self.state.unrefined.scores[t])
    }

    /// Whether refinement has damped the target's score this round.
    pub fn target_penalized(&self) -> bool {
        self.state
            .target
            .is_some_and(|t| self.state.refined.scores[t] != self.state.unrefined.scores[t])
    }

    /// Shaping distribution `P(a | Q_t)` for the current queries.
    pub fn shaping_target(&self, cooccurrence: &CooccurrenceMatrix) -> Vec<f64> {
        shaping_target(&self.state.query_texts, cooccurrence)
    }

    pub fn policy_state(
        &self,
        layout: StateLayout,
        cooccurrence: Option<&CooccurrenceMatrix>,
    ) -> Result<State> {
        let builder = StateBuilder { layout, top_k: self.state_top_k };
        let shaping = match (layout, cooccurrence) {
            (StateLayout::DualDist, Some(c)) => Some(self.shaping_target(c)),
            _ => None,
        };
        builder.build(&self.state.query_features, &self.state.ranked, self.env.index(), shaping.as_deref())
    }

    /// Registers a proposal; its objects count as asked until confirmed or skipped.
    pub fn record_proposal(&mut self, proposal: &ActionSet) {
        self.state.asked.extend(proposal.objects.iter().copied());
        self.state.pending = proposal.objects.clone();
    }

    /// Applies feedback on the pending proposal and re-ranks.
    ///
    /// Pending objects in neither list are skipped and become askable again.
    pub fn confirm(&mut self, positives: &[usize], negatives: &[usize]) -> Result<()> {
        let pending: BTreeSet<usize> = self.state.pending.iter().copied().collect();
        for &a in positives.iter().chain(negatives) {
            if !pending.contains(&a) {
                return Err(Error::InvalidFeedback(format!(
                    "object {:?} was not among the last candidates",
                    self.env.word(a.min(self.env.vocab_size().saturating_sub(1)))
                )));
            }
        }
        let pos: BTreeSet<usize> = positives.iter().copied().collect();
        let neg: BTreeSet<usize> = negatives.iter().copied().collect();
        if let Some(&a) = pos.intersection(&neg).next() {
            return Err(Error::InvalidFeedback(format!(
                "object {:?} is marked both present and absent",
                self.env.word(a)
            )));
        }

        let scorer = self.env.scorer(self.state.ranker)?;
        let pending = std::mem::take(&mut self.state.pending);
        for &a in &pending {
            if pos.contains(&a) {
                let word = self.env.word(a).to_owned();
                let feature = self.env.object_features()[a].clone();
                self.query_scores.push(scorer.score_query(&feature)?);
                self.state.query_texts.push(word);
                self.state.query_features.push(feature);
                self.state.positives.push(a);
            } else if !neg.contains(&a) {
                self.state.asked.remove(&a);
            }
        }
        self.state.negatives.extend(neg.iter().copied());
        self.state.round_negatives = neg;
        self.state.round += 1;
        self.rerank()
    }

    fn rerank(&mut self) -> Result<()> {
        let scorer = self.env.scorer(self.state.ranker)?;
        let unrefined = scorer.combine(&self.query_scores)?;
        let negatives =
            if self.accumulate_negatives { &self.state.negatives } else { &self.state.round_negatives };
        let refined = refine_similarities(&unrefined, negatives, self.env.index());
        self.state.ranked = rank_positions_for(&refined, self.env.dataset(), self.state.target);
        self.state.unrefined = unrefined;
        self.state.refined = refined;
        Ok(())
    }
}

/// Splits candidates into those present in the target and the rest.
pub fn oracle_confirm(candidates: &[usize], target: &GalleryImage) -> (Vec<usize>, Vec<usize>) {
    candidates.iter().partition(|&&a| target.contains_object(a))
}

/// `n` distinct captions of `image`, drawn uniformly.
pub fn sample_initial_queries<R: Rng + ?Sized>(
    image: &GalleryImage,
    n: usize,
    rng: &mut R,
) -> Result<Vec<String>> {
    if n == 0 || n > image.captions.len() {
        return Err(Error::InvalidConfig(format!(
            "cannot draw {n} initial queries from the {} captions of {}",
            image.captions.len(),
            image.id
        )));
    }
    Ok(image.captions.choose_multiple(rng, n).cloned().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub proposed: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
    pub target_rank: usize,
    pub reward: f64,
    pub target_penalized: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub target_id: String,
    pub initial_queries: Vec<String>,
    pub initial_rank: usize,
    pub rounds: Vec<RoundRecord>,
    /// Ended early because every object had been asked.
    pub exhausted: bool,
}

impl EpisodeTrace {
    pub fn final_rank(&self) -> usize {
        self.rounds.last().map_or(self.initial_rank, |r| r.target_rank)
    }

    /// Rank after `t` rounds, holding the last rank once the episode ended.
    pub fn rank_at(&self, t: usize) -> usize {
        if t == 0 {
            return self.initial_rank;
        }
        self.rounds.get(t - 1).map_or(self.final_rank(), |r| r.target_rank)
    }

    pub fn hit_at(&self, k: usize) -> bool {
        self.final_rank() <= k
    }
}

/// Runs one oracle-driven episode.
pub fn run_episode(
    env: &RetrievalEnv,
    target_id: &str,
    initial_queries: usize,
    policy: &PolicySource<'_>,
    config: &EpisodeConfig,
    seed: u64,
) -> Result<EpisodeTrace> {
    let target = env.position(target_id)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let queries = sample_initial_queries(env.image(target), initial_queries, &mut rng)?;
    let mut episode = Episode::start(env, queries.clone(), Some(target), config)?;
    let mut trace = EpisodeTrace {
        target_id: target_id.to_owned(),
        initial_queries: queries,
        initial_rank: episode.target_rank().expect("target is set"),
        rounds: Vec::with_capacity(config.rounds),
        exhausted: false,
    };
    for round in 1..=config.rounds {
        if episode.unasked().is_empty() {
            trace.exhausted = true;
            break;
        }
        let proposal = policy.propose(&episode, config.n_candidates, config.mode, &mut rng)?;
        episode.record_proposal(&proposal);
        let (positives, negatives) = oracle_confirm(&proposal.objects, env.image(target));
        episode.confirm(&positives, &negatives)?;
        trace.rounds.push(RoundRecord {
            round,
            proposed: proposal.objects,
            positives,
            negatives,
            target_rank: episode.target_rank().expect("target is set"),
            reward: episode.target_similarity().expect("target is set"),
            target_penalized: episode.target_penalized(),
        });
    }
    Ok(trace)
}
