//! C interface to the retrieval loop.
//!
//! Every function returns an `ICR_*` status code and writes results through
//! out-pointers. On failure the message is kept per thread and can be read
//! with [`icr_last_error_message`]. Handles are opaque and must be released
//! with their `_free` function; a session keeps its gallery alive on its own,
//! so handles may be freed in any order.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use icr::gallery::{generate_synthetic, load_dataset, SyntheticConfig};
use icr::interaction::{Episode, EpisodeConfig, RetrievalEnv};
use icr::policy::{load_policy, PolicyModel, SelectionMode};
use icr::ranker::RankerKind;
use icr::service::ServicePolicy;
use icr::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const ICR_OK: i32 = 0;
pub const ICR_ERR_NULL_POINTER: i32 = 1;
pub const ICR_ERR_INVALID_ARGUMENT: i32 = 2;
pub const ICR_ERR_IO: i32 = 3;
pub const ICR_ERR_PARSE: i32 = 4;
pub const ICR_ERR_INCOMPATIBLE: i32 = 5;
pub const ICR_ERR_UNKNOWN_TARGET: i32 = 6;
pub const ICR_ERR_INVALID_FEEDBACK: i32 = 7;
/// The session has used all its rounds or asked every object.
pub const ICR_ERR_FINISHED: i32 = 8;
pub const ICR_ERR_BUFFER_TOO_SMALL: i32 = 9;
/// The target rank was requested from a session without a target.
pub const ICR_ERR_NO_TARGET: i32 = 10;
pub const ICR_ERR_INTERNAL: i32 = 99;

pub const ICR_RANKER_SSCAN: i32 = 0;
pub const ICR_RANKER_TCMPL: i32 = 1;

pub const ICR_POLICY_LEARNED: i32 = 0;
pub const ICR_POLICY_RANDOM: i32 = 1;
pub const ICR_POLICY_QASIM: i32 = 2;
pub const ICR_POLICY_QACOHE: i32 = 3;

/// A loaded gallery.
pub struct IcrDataset {
    env: Arc<RetrievalEnv>,
}

/// A trained candidate policy.
pub struct IcrPolicy {
    model: PolicyModel,
}

/// One interactive retrieval session.
pub struct IcrSession {
    episode: Episode<'static>,
    policy: ServicePolicy,
    n_candidates: usize,
    max_rounds: usize,
    rng: ChaCha8Rng,
}

/// Parameters for [`icr_dataset_generate`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct IcrSyntheticConfig {
    pub n_images: usize,
    pub vocab_size: usize,
    pub dim: usize,
    pub regions_per_image: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    pub captions_per_image: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(i32, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } => ICR_ERR_IO,
            Error::Parse(_) | Error::Schema { .. } => ICR_ERR_PARSE,
            Error::DimensionMismatch { .. } | Error::ShapeMismatch(_) => ICR_ERR_INCOMPATIBLE,
            Error::UnknownTarget(_) => ICR_ERR_UNKNOWN_TARGET,
            Error::InvalidFeedback(_) => ICR_ERR_INVALID_FEEDBACK,
            Error::AllExcluded => ICR_ERR_FINISHED,
            Error::InvalidConfig(_) | Error::EmptyQuerySet | Error::EmptyInput | Error::IndexOutOfRange { .. } => {
                ICR_ERR_INVALID_ARGUMENT
            }
            _ => ICR_ERR_INTERNAL,
        };
        Failure(code, e.to_string())
    }
}

fn fail(code: i32, msg: impl Into<String>) -> Failure {
    Failure(code, msg.into())
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> i32 {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "panic".into());
        Err(fail(ICR_ERR_INTERNAL, format!("internal error: {msg}")))
    });
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| e.borrow_mut().clear());
            ICR_OK
        }
        Err(Failure(code, msg)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = msg);
            code
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(ICR_ERR_NULL_POINTER, format!("{what} is null")))
}

unsafe fn as_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(ICR_ERR_NULL_POINTER, format!("{what} is null")))
}

unsafe fn as_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(ICR_ERR_NULL_POINTER, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(ICR_ERR_INVALID_ARGUMENT, format!("{what} is not UTF-8")))
}

unsafe fn as_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(ICR_ERR_NULL_POINTER, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Copies `s` with a trailing NUL into `buf`. `needed` always receives the
/// full size including the NUL, so callers can retry with a larger buffer.
unsafe fn write_string(s: &str, buf: *mut c_char, buf_len: usize, needed: *mut usize) -> Result<(), Failure> {
    let size = s.len() + 1;
    if let Some(n) = needed.as_mut() {
        *n = size;
    }
    if buf_len < size || buf.is_null() {
        return Err(fail(ICR_ERR_BUFFER_TOO_SMALL, format!("string needs {size} bytes")));
    }
    ptr::copy_nonoverlapping(s.as_ptr(), buf.cast::<u8>(), s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

unsafe fn write_usizes(values: &[usize], out: *mut usize, cap: usize, out_len: *mut usize) -> Result<(), Failure> {
    *as_mut(out_len, "out_len")? = values.len();
    if cap < values.len() {
        return Err(fail(ICR_ERR_BUFFER_TOO_SMALL, format!("{} slots needed", values.len())));
    }
    if !values.is_empty() {
        if out.is_null() {
            return Err(fail(ICR_ERR_NULL_POINTER, "output array is null"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    }
    Ok(())
}

/// Copies the calling thread's last error message into `buf`.
///
/// # Safety
/// `buf` must be valid for `buf_len` bytes; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn icr_last_error_message(buf: *mut c_char, buf_len: usize, needed: *mut usize) -> i32 {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match write_string(&msg, buf, buf_len, needed) {
        Ok(()) => ICR_OK,
        Err(Failure(code, _)) => code,
    }
}

/// Loads a gallery JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icr_dataset_load(path: *const c_char, out: *mut *mut IcrDataset) -> i32 {
    guard(|| {
        let out = as_mut(out, "out")?;
        let dataset = load_dataset(as_str(path, "path")?)?;
        let env = RetrievalEnv::new(dataset)?;
        *out = Box::into_raw(Box::new(IcrDataset { env: Arc::new(env) }));
        Ok(())
    })
}

/// Fills `config` with the benchmark gallery parameters.
///
/// # Safety
/// `config` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icr_synthetic_config_default(config: *mut IcrSyntheticConfig) -> i32 {
    guard(|| {
        let b = SyntheticConfig::benchmark();
        *as_mut(config, "config")? = IcrSyntheticConfig {
            n_images: b.n_images,
            vocab_size: b.vocab_size,
            dim: b.dim,
            regions_per_image: b.regions_per_image,
            min_objects: b.objects_per_image.0,
            max_objects: b.objects_per_image.1,
            captions_per_image: b.captions_per_image,
            noise_sigma: b.noise_sigma,
            seed: b.seed,
        };
        Ok(())
    })
}

/// Generates a synthetic gallery in memory.
///
/// # Safety
/// `config` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn icr_dataset_generate(config: *const IcrSyntheticConfig, out: *mut *mut IcrDataset) -> i32 {
    guard(|| {
        let c = *as_ref(config, "config")?;
        let out = as_mut(out, "out")?;
        let dataset = generate_synthetic(&SyntheticConfig {
            n_images: c.n_images,
            vocab_size: c.vocab_size,
            dim: c.dim,
            regions_per_image: c.regions_per_image,
            objects_per_image: (c.min_objects, c.max_objects),
            captions_per_image: c.captions_per_image,
            noise_sigma: c.noise_sigma,
            seed: c.seed,
        })?;
        *out = Box::into_raw(Box::new(IcrDataset { env: Arc::new(RetrievalEnv::new(dataset)?) }));
        Ok(())
    })
}

/// Number of images, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn icr_dataset_num_images(dataset: *const IcrDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.env.num_images())
}

/// Number of object words, or 0 for a null handle.
///
/// # Safety
/// `dataset` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn icr_dataset_vocab_size(dataset: *const IcrDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.env.vocab_size())
}

/// Id of the image at `position`.
///
/// # Safety
/// `dataset` must be a live handle, `buf` valid for `buf_len` bytes and
/// `needed` null or valid.
#[no_mangle]
pub unsafe extern "C" fn icr_dataset_image_id(
    dataset: *const IcrDataset,
    position: usize,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> i32 {
    guard(|| {
        let env = &as_ref(dataset, "dataset")?.env;
        if position >= env.num_images() {
            return Err(fail(ICR_ERR_INVALID_ARGUMENT, format!("no image at position {position}")));
        }
        write_string(&env.image(position).id, buf, buf_len, needed)
    })
}

/// Object word with index `object`.
///
/// # Safety
/// As for [`icr_dataset_image_id`].
#[no_mangle]
pub unsafe extern "C" fn icr_dataset_word(
    dataset: *const IcrDataset,
    object: usize,
    buf: *mut c_char,
    buf_len: usize,
    needed: *mut usize,
) -> i32 {
    guard(|| {
        let env = &as_ref(dataset, "dataset")?.env;
        if object >= env.vocab_size() {
            return Err(fail(ICR_ERR_INVALID_ARGUMENT, format!("no object {object}")));
        }
        write_string(env.word(object), buf, buf_len, needed)
    })
}

/// # Safety
/// `dataset` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn icr_dataset_free(dataset: *mut IcrDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Loads a policy JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icr_policy_load(path: *const c_char, out: *mut *mut IcrPolicy) -> i32 {
    guard(|| {
        let out = as_mut(out, "out")?;
        let model = load_policy(as_str(path, "path")?)?;
        *out = Box::into_raw(Box::new(IcrPolicy { model }));
        Ok(())
    })
}

/// # Safety
/// `policy` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn icr_policy_free(policy: *mut IcrPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Options for [`icr_session_new`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct IcrSessionOptions {
    /// One of the `ICR_POLICY_*` constants.
    pub policy_kind: i32,
    /// One of the `ICR_RANKER_*` constants.
    pub ranker: i32,
    pub n_candidates: usize,
    pub max_rounds: usize,
    /// Seeds the draws of the random and co-occurrence baselines.
    pub seed: u64,
}

/// Fills `options` with the defaults: learned policy, sscan, 10 candidates,
/// 10 rounds, seed 0.
///
/// # Safety
/// `options` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn icr_session_options_default(options: *mut IcrSessionOptions) -> i32 {
    guard(|| {
        *as_mut(options, "options")? = IcrSessionOptions {
            policy_kind: ICR_POLICY_LEARNED,
            ranker: ICR_RANKER_SSCAN,
            n_candidates: 10,
            max_rounds: 10,
            seed: 0,
        };
        Ok(())
    })
}

impl IcrSession {
    fn propose(&mut self) -> Result<(), Failure> {
        if self.episode.state().round >= self.max_rounds || self.episode.unasked().is_empty() {
            return Ok(());
        }
        let source = self.policy.source().ok_or_else(|| fail(ICR_ERR_INTERNAL, "no policy"))?;
        let proposal = source.propose(&self.episode, self.n_candidates, SelectionMode::Greedy, &mut self.rng)?;
        self.episode.record_proposal(&proposal);
        Ok(())
    }
}

/// Starts a session from `n_queries` initial descriptions and proposes the
/// first candidates. `policy` is required for `ICR_POLICY_LEARNED` and ignored
/// otherwise. `target_id` may be null; when set, [`icr_session_target_rank`]
/// reports that image's rank.
///
/// # Safety
/// Handles must be live, `queries` must hold `n_queries` NUL-terminated
/// strings, `options` and `out` must be valid and `target_id` null or a
/// NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn icr_session_new(
    dataset: *const IcrDataset,
    policy: *const IcrPolicy,
    queries: *const *const c_char,
    n_queries: usize,
    target_id: *const c_char,
    options: *const IcrSessionOptions,
    out: *mut *mut IcrSession,
) -> i32 {
    guard(|| {
        let env = as_ref(dataset, "dataset")?.env.clone();
        let options = *as_ref(options, "options")?;
        let out = as_mut(out, "out")?;
        let queries = as_slice(queries, n_queries, "queries")?
            .iter()
            .map(|&q| as_str(q, "query").map(str::to_owned))
            .collect::<Result<Vec<_>, _>>()?;
        let ranker = match options.ranker {
            ICR_RANKER_SSCAN => RankerKind::Sscan,
            ICR_RANKER_TCMPL => RankerKind::Tcmpl,
            other => return Err(fail(ICR_ERR_INVALID_ARGUMENT, format!("unknown ranker {other}"))),
        };
        let policy = match options.policy_kind {
            ICR_POLICY_LEARNED => {
                let model = as_ref(policy, "policy")?.model.clone();
                ServicePolicy::learned(model, env.dataset())?
            }
            ICR_POLICY_RANDOM => ServicePolicy::Random,
            ICR_POLICY_QASIM => ServicePolicy::QaSim,
            ICR_POLICY_QACOHE => ServicePolicy::qacohe(env.dataset())?,
            other => return Err(fail(ICR_ERR_INVALID_ARGUMENT, format!("unknown policy kind {other}"))),
        };
        if options.n_candidates == 0 || options.n_candidates > env.vocab_size() {
            return Err(fail(ICR_ERR_INVALID_ARGUMENT, format!("n_candidates must lie in 1..={}", env.vocab_size())));
        }
        let target = if target_id.is_null() { None } else { Some(env.position(as_str(target_id, "target_id")?)?) };
        let config = EpisodeConfig {
            rounds: options.max_rounds,
            n_candidates: options.n_candidates,
            mode: SelectionMode::Greedy,
            ranker,
            ..Default::default()
        };
        let episode = Episode::start(env, queries, target, &config)?;
        let mut session = IcrSession {
            episode,
            policy,
            n_candidates: options.n_candidates,
            max_rounds: options.max_rounds,
            rng: ChaCha8Rng::seed_from_u64(options.seed),
        };
        session.propose()?;
        *out = Box::into_raw(Box::new(session));
        Ok(())
    })
}

/// Object indices awaiting confirmation; empty once the session is finished.
///
/// # Safety
/// `session` must be live, `objects` valid for `capacity` elements and
/// `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn icr_session_candidates(
    session: *const IcrSession,
    objects: *mut usize,
    capacity: usize,
    out_len: *mut usize,
) -> i32 {
    guard(|| {
        let session = as_ref(session, "session")?;
        write_usizes(&session.episode.state().pending, objects, capacity, out_len)
    })
}

/// Answers the pending candidates and proposes the next ones. Candidates in
/// neither list count as skipped and may be proposed again.
///
/// # Safety
/// `session` must be live; `positive` and `negative` must hold `n_positive`
/// and `n_negative` elements.
#[no_mangle]
pub unsafe extern "C" fn icr_session_confirm(
    session: *mut IcrSession,
    positive: *const usize,
    n_positive: usize,
    negative: *const usize,
    n_negative: usize,
) -> i32 {
    guard(|| {
        let session = as_mut(session, "session")?;
        let positive = as_slice(positive, n_positive, "positive")?;
        let negative = as_slice(negative, n_negative, "negative")?;
        if session.episode.state().pending.is_empty() {
            return Err(fail(ICR_ERR_FINISHED, "the session has no pending candidates"));
        }
        session.episode.confirm(positive, negative)?;
        session.propose()
    })
}

/// Completed rounds, or 0 for a null handle.
///
/// # Safety
/// `session` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn icr_session_round(session: *const IcrSession) -> usize {
    session.as_ref().map_or(0, |s| s.episode.state().round)
}

/// 1-based rank of the session target.
///
/// # Safety
/// `session` must be live and `rank` valid.
#[no_mangle]
pub unsafe extern "C" fn icr_session_target_rank(session: *const IcrSession, rank: *mut usize) -> i32 {
    guard(|| {
        let session = as_ref(session, "session")?;
        let rank = as_mut(rank, "rank")?;
        *rank = session
            .episode
            .target_rank()
            .ok_or_else(|| fail(ICR_ERR_NO_TARGET, "the session was started without a target"))?;
        Ok(())
    })
}

/// Gallery positions and scores of the best `k` images, best first. Fewer
/// are written when the gallery is smaller; `out_len` gets the count.
///
/// # Safety
/// `session` must be live, `positions` and `scores` valid for `k` elements
/// (`scores` may be null) and `out_len` valid.
#[no_mangle]
pub unsafe extern "C" fn icr_session_top(
    session: *const IcrSession,
    k: usize,
    positions: *mut usize,
    scores: *mut f64,
    out_len: *mut usize,
) -> i32 {
    guard(|| {
        let ranked = &as_ref(session, "session")?.episode.state().ranked;
        let n = k.min(ranked.order.len());
        write_usizes(&ranked.order[..n], positions, n, out_len)?;
        if !scores.is_null() && n > 0 {
            ptr::copy_nonoverlapping(ranked.scores.as_ptr(), scores, n);
        }
        Ok(())
    })
}

/// # Safety
/// `session` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn icr_session_free(session: *mut IcrSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}
