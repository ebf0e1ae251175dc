use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ApiError, ServiceConfig};
use crate::error::{Error, Result};
use crate::interaction::{Episode, EpisodeConfig, PolicySource, RetrievalEnv};
use crate::policy::SelectionMode;
use crate::ranker::RankerKind;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionMode {
    #[default]
    Live,
    Demo,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRequest {
    pub queries: Vec<String>,
    #[serde(default)]
    pub ranker: Option<String>,
    #[serde(default)]
    pub n_candidates: Option<usize>,
    #[serde(default)]
    pub mode: SessionMode,
    #[serde(default)]
    pub target_id: Option<String>,
    /// Seeds the draws of stochastic baselines.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfirmRequest {
    #[serde(default)]
    pub positive: Vec<String>,
    #[serde(default)]
    pub negative: Vec<String>,
    /// Round being answered; a mismatch means the request was already applied.
    #[serde(default)]
    pub round: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopImage {
    pub id: String,
    pub objects: Vec<String>,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageView {
    pub id: String,
    pub objects: Vec<String>,
    pub captions: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub url: Option<String>,
}

impl ImageView {
    pub(crate) fn new(env: &RetrievalEnv, pos: usize) -> Self {
        let img = env.image(pos);
        ImageView {
            id: img.id.clone(),
            objects: img.objects.iter().map(|&a| env.word(a).to_owned()).collect(),
            captions: img.captions.clone(),
            url: img.url.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub mode: SessionMode,
    pub round: usize,
    pub max_rounds: usize,
    pub ranker: RankerKind,
    pub queries: Vec<String>,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub candidates: Vec<String>,
    pub top_images: Vec<TopImage>,
    /// Demo sessions only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_rank: Option<usize>,
    pub finished: bool,
}

pub(crate) struct Session {
    id: String,
    episode: Episode<'static>,
    mode: SessionMode,
    n_candidates: usize,
    rng: ChaCha8Rng,
    touched: Instant,
}

fn map_core_error(err: Error) -> ApiError {
    match err {
        Error::InvalidFeedback(msg) => ApiError::bad_request("InvalidFeedback", msg),
        Error::EmptyQuerySet => ApiError::bad_request("EmptyQuery", err.to_string()),
        Error::UnknownTarget(_) => ApiError::bad_request("UnknownTarget", err.to_string()),
        Error::DegenerateImage(_) => ApiError::bad_request("BadRanker", err.to_string()),
        other => ApiError::internal(other.to_string()),
    }
}

impl Session {
    pub(crate) fn create(
        id: String,
        env: Arc<RetrievalEnv>,
        policy: &PolicySource<'_>,
        config: &ServiceConfig,
        request: CreateRequest,
    ) -> std::result::Result<Self, ApiError> {
        let queries: Vec<String> =
            request.queries.into_iter().filter(|q| !q.trim().is_empty()).collect();
        if queries.is_empty() {
            return Err(ApiError::bad_request("EmptyQuery", "at least one non-empty query is required"));
        }
        let ranker: RankerKind = match request.ranker.as_deref() {
            None => RankerKind::Sscan,
            Some(name) => name.parse().map_err(|_| {
                ApiError::bad_request("BadRanker", format!("unknown ranker {name:?}; expected sscan or tcmpl"))
            })?,
        };
        let n_candidates = request.n_candidates.unwrap_or(config.default_candidates);
        if n_candidates == 0 || n_candidates > env.vocab_size() {
            return Err(ApiError::bad_request(
                "BadRequest",
                format!("n_candidates must lie in 1..={}", env.vocab_size()),
            ));
        }
        let target = match (request.mode, request.target_id) {
            (SessionMode::Demo, Some(id)) => Some(
                env.dataset()
                    .image_position(&id)
                    .ok_or_else(|| ApiError::bad_request("UnknownTarget", format!("no image {id}")))?,
            ),
            (SessionMode::Demo, None) => {
                return Err(ApiError::bad_request("UnknownTarget", "demo sessions need a target_id"))
            }
            (SessionMode::Live, Some(_)) => {
                return Err(ApiError::bad_request("BadRequest", "target_id is only accepted in demo mode"))
            }
            (SessionMode::Live, None) => None,
        };
        let episode_config = EpisodeConfig {
            rounds: config.max_rounds,
            n_candidates,
            mode: SelectionMode::Greedy,
            ranker,
            ..Default::default()
        };
        let episode = Episode::start(env, queries, target, &episode_config).map_err(map_core_error)?;
        let mut session = Session {
            id,
            episode,
            mode: request.mode,
            n_candidates,
            rng: ChaCha8Rng::seed_from_u64(request.seed.unwrap_or(0)),
            touched: Instant::now(),
        };
        session.propose(policy, config)?;
        Ok(session)
    }

    pub(crate) fn idle(&self) -> Duration {
        self.touched.elapsed()
    }

    fn propose(&mut self, policy: &PolicySource<'_>, config: &ServiceConfig) -> std::result::Result<(), ApiError> {
        if self.episode.state().round >= config.max_rounds || self.episode.unasked().is_empty() {
            return Ok(());
        }
        let proposal = policy
            .propose(&self.episode, self.n_candidates, SelectionMode::Greedy, &mut self.rng)
            .map_err(map_core_error)?;
        self.episode.record_proposal(&proposal);
        Ok(())
    }

    pub(crate) fn confirm(
        &mut self,
        policy: &PolicySource<'_>,
        config: &ServiceConfig,
        request: ConfirmRequest,
    ) -> std::result::Result<(), ApiError> {
        self.touched = Instant::now();
        let round = self.episode.state().round;
        if let Some(r) = request.round {
            if r != round {
                return Err(ApiError::conflict(
                    "RoundConflict",
                    format!("round {r} was already confirmed; the session is at round {round}"),
                ));
            }
        }
        if round >= config.max_rounds {
            return Err(ApiError::conflict("MaxRoundsReached", format!("session ended after {round} rounds")));
        }
        let pending = &self.episode.state().pending;
        if pending.is_empty() {
            return Err(ApiError::conflict("NoCandidates", "every object has already been asked"));
        }
        let env = self.episode.env();
        let lookup = |words: &[String]| -> std::result::Result<Vec<usize>, ApiError> {
            words
                .iter()
                .map(|w| {
                    pending.iter().copied().find(|&a| env.word(a) == w).ok_or_else(|| {
                        ApiError::bad_request("InvalidFeedback", format!("{w:?} is not among the last candidates"))
                    })
                })
                .collect()
        };
        let positives = lookup(&request.positive)?;
        let negatives = lookup(&request.negative)?;
        self.episode.confirm(&positives, &negatives).map_err(map_core_error)?;
        self.propose(policy, config)
    }

    pub(crate) fn view(&self, config: &ServiceConfig) -> SessionView {
        let env = self.episode.env();
        let state = self.episode.state();
        let words = |objs: &mut dyn Iterator<Item = usize>| objs.map(|a| env.word(a).to_owned()).collect();
        let top_images = state
            .ranked
            .order
            .iter()
            .zip(&state.ranked.scores)
            .take(config.top_images)
            .map(|(&pos, &score)| {
                let img = env.image(pos);
                TopImage {
                    id: img.id.clone(),
                    objects: img.objects.iter().map(|&a| env.word(a).to_owned()).collect(),
                    score,
                    url: img.url.clone(),
                }
            })
            .collect();
        SessionView {
            session_id: self.id.clone(),
            mode: self.mode,
            round: state.round,
            max_rounds: config.max_rounds,
            ranker: state.ranker,
            queries: state.query_texts.clone(),
            positives: words(&mut state.positives.iter().copied()),
            negatives: words(&mut state.negatives.iter().copied()),
            candidates: words(&mut state.pending.iter().copied()),
            top_images,
            target_rank: match self.mode {
                SessionMode::Demo => self.episode.target_rank(),
                SessionMode::Live => None,
            },
            finished: state.pending.is_empty(),
        }
    }
}

/// Append-only JSONL record of session events.
pub(crate) struct SessionLog {
    file: Mutex<File>,
}

#[derive(Serialize)]
struct LogLine<'a> {
    event: &'a str,
    unix_time: u64,
    session: &'a SessionView,
}

impl SessionLog {
    pub(crate) fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| Error::Io { path: path.to_owned(), source })?;
        Ok(SessionLog { file: Mutex::new(file) })
    }

    pub(crate) fn record(&self, event: &str, view: &SessionView) {
        let unix_time = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        let line = serde_json::to_string(&LogLine { event, unix_time, session: view }).expect("views serialize");
        let mut file = self.file.lock().expect("session log poisoned");
        if let Err(e) = writeln!(file, "{line}") {
            tracing::warn!(error = %e, "could not append to the session log");
        }
    }
}
