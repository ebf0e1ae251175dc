use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use icr::gallery::{generate_synthetic, save_dataset, SyntheticConfig};
use icr::interaction::{run_episode, EpisodeConfig, PolicySource, RetrievalEnv};
use icr::learning::{train, PpoConfig};
use icr::policy::save_policy;
use icr_ffi::*;

fn last_error() -> String {
    let mut buf = [0 as c_char; 512];
    let mut needed = 0;
    unsafe {
        assert_eq!(icr_last_error_message(buf.as_mut_ptr(), buf.len(), &mut needed), ICR_OK);
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn small_config(seed: u64) -> IcrSyntheticConfig {
    let mut c = unsafe { std::mem::zeroed::<IcrSyntheticConfig>() };
    unsafe { assert_eq!(icr_synthetic_config_default(&mut c), ICR_OK) };
    let s = SyntheticConfig::small(seed);
    IcrSyntheticConfig {
        n_images: s.n_images,
        vocab_size: s.vocab_size,
        dim: s.dim,
        regions_per_image: s.regions_per_image,
        min_objects: s.objects_per_image.0,
        max_objects: s.objects_per_image.1,
        captions_per_image: s.captions_per_image,
        noise_sigma: s.noise_sigma,
        seed: s.seed,
        ..c
    }
}

unsafe fn options(kind: i32) -> IcrSessionOptions {
    let mut o = std::mem::zeroed();
    assert_eq!(icr_session_options_default(&mut o), ICR_OK);
    IcrSessionOptions { policy_kind: kind, n_candidates: 3, ..o }
}

unsafe fn image_id(ds: *const IcrDataset, pos: usize) -> String {
    let mut needed = 0;
    assert_eq!(icr_dataset_image_id(ds, pos, ptr::null_mut(), 0, &mut needed), ICR_ERR_BUFFER_TOO_SMALL);
    let mut buf = vec![0 as c_char; needed];
    assert_eq!(icr_dataset_image_id(ds, pos, buf.as_mut_ptr(), buf.len(), &mut needed), ICR_OK);
    CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
}

/// Drives a C-side session with oracle answers and returns the rank after
/// every round, starting with round 0.
unsafe fn drive(
    ds: *const IcrDataset,
    policy: *const IcrPolicy,
    kind: i32,
    target: &str,
    queries: &[String],
    objects: &[usize],
) -> Vec<usize> {
    let c_queries: Vec<CString> = queries.iter().map(|q| CString::new(q.as_str()).unwrap()).collect();
    let ptrs: Vec<*const c_char> = c_queries.iter().map(|q| q.as_ptr()).collect();
    let target = CString::new(target).unwrap();
    let opts = options(kind);
    let mut session = ptr::null_mut();
    let code = icr_session_new(ds, policy, ptrs.as_ptr(), ptrs.len(), target.as_ptr(), &opts, &mut session);
    assert_eq!(code, ICR_OK, "{}", last_error());
    let mut ranks = Vec::new();
    loop {
        let mut rank = 0;
        assert_eq!(icr_session_target_rank(session, &mut rank), ICR_OK);
        ranks.push(rank);
        let mut pending = [0usize; 16];
        let mut n = 0;
        assert_eq!(icr_session_candidates(session, pending.as_mut_ptr(), pending.len(), &mut n), ICR_OK);
        if n == 0 {
            break;
        }
        let (pos, neg): (Vec<usize>, Vec<usize>) = pending[..n].iter().partition(|a| objects.contains(a));
        assert_eq!(icr_session_confirm(session, pos.as_ptr(), pos.len(), neg.as_ptr(), neg.len()), ICR_OK);
    }
    assert_eq!(icr_session_confirm(session, ptr::null(), 0, ptr::null(), 0), ICR_ERR_FINISHED);
    icr_session_free(session);
    ranks
}

#[test]
fn sessions_replay_run_episode() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = generate_synthetic(&SyntheticConfig::small(21)).unwrap();
    let model = train(&dataset, &PpoConfig { total_epochs: 1, n_s: 40, hidden: 16, eval_targets: 0, ..Default::default() }, 3)
        .unwrap()
        .model;
    let data_path = dir.path().join("g.json");
    let policy_path = dir.path().join("p.json");
    save_dataset(&dataset, &data_path).unwrap();
    save_policy(&model, &policy_path).unwrap();

    let env = RetrievalEnv::new(dataset.clone()).unwrap();
    let cooc = icr::learning::build_cooccurrence(&dataset).unwrap();
    let config = EpisodeConfig { n_candidates: 3, ..Default::default() };
    unsafe {
        let mut ds = ptr::null_mut();
        let path = CString::new(data_path.to_str().unwrap()).unwrap();
        assert_eq!(icr_dataset_load(path.as_ptr(), &mut ds), ICR_OK);
        assert_eq!(icr_dataset_num_images(ds), dataset.num_images());
        assert_eq!(icr_dataset_vocab_size(ds), dataset.vocab_size());
        let mut policy = ptr::null_mut();
        let path = CString::new(policy_path.to_str().unwrap()).unwrap();
        assert_eq!(icr_policy_load(path.as_ptr(), &mut policy), ICR_OK);

        for pos in [0, 7, 19, 33] {
            let id = image_id(ds, pos);
            let objects = &dataset.images[pos].objects;
            let sources = [
                (ICR_POLICY_LEARNED, PolicySource::Learned { model: &model, cooccurrence: Some(&cooc) }),
                (ICR_POLICY_QASIM, PolicySource::QaSim),
            ];
            for (kind, source) in sources {
                let trace = run_episode(&env, &id, 2, &source, &config, pos as u64).unwrap();
                let expected: Vec<usize> = (0..=trace.rounds.len()).map(|t| trace.rank_at(t)).collect();
                let got = drive(ds, policy, kind, &id, &trace.initial_queries, objects);
                assert_eq!(got, expected, "image {id}, policy {kind}");
            }
        }
        icr_policy_free(policy);
        icr_dataset_free(ds);
    }
}

#[test]
fn session_outlives_its_handles() {
    unsafe {
        let mut ds = ptr::null_mut();
        assert_eq!(icr_dataset_generate(&small_config(5), &mut ds), ICR_OK);
        let q = CString::new("man tree").unwrap();
        let qs = [q.as_ptr()];
        let opts = options(ICR_POLICY_RANDOM);
        let mut session = ptr::null_mut();
        assert_eq!(icr_session_new(ds, ptr::null(), qs.as_ptr(), 1, ptr::null(), &opts, &mut session), ICR_OK);
        icr_dataset_free(ds);

        let mut rank = 0;
        assert_eq!(icr_session_target_rank(session, &mut rank), ICR_ERR_NO_TARGET);
        let mut top = [0usize; 5];
        let mut scores = [0f64; 5];
        let mut n = 0;
        assert_eq!(icr_session_top(session, 5, top.as_mut_ptr(), scores.as_mut_ptr(), &mut n), ICR_OK);
        assert_eq!(n, 5);
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
        let mut pending = [0usize; 3];
        assert_eq!(icr_session_candidates(session, pending.as_mut_ptr(), 3, &mut n), ICR_OK);
        assert_eq!(icr_session_confirm(session, ptr::null(), 0, pending.as_ptr(), n), ICR_OK);
        assert_eq!(icr_session_round(session), 1);
        icr_session_free(session);
    }
}

#[test]
fn errors_map_to_codes() {
    unsafe {
        let mut ds = ptr::null_mut();
        let missing = CString::new("/nonexistent/gallery.json").unwrap();
        assert_eq!(icr_dataset_load(missing.as_ptr(), &mut ds), ICR_ERR_IO);
        assert!(last_error().contains("/nonexistent/gallery.json"));
        assert_eq!(icr_dataset_load(ptr::null(), &mut ds), ICR_ERR_NULL_POINTER);
        assert!(ds.is_null());

        assert_eq!(icr_dataset_generate(&small_config(1), &mut ds), ICR_OK);
        assert_eq!(last_error(), "");
        let q = CString::new("man").unwrap();
        let qs = [q.as_ptr()];
        let mut session = ptr::null_mut();
        let opts = options(ICR_POLICY_LEARNED);
        assert_eq!(icr_session_new(ds, ptr::null(), qs.as_ptr(), 1, ptr::null(), &opts, &mut session), ICR_ERR_NULL_POINTER);
        let opts = IcrSessionOptions { ranker: 7, ..options(ICR_POLICY_QASIM) };
        assert_eq!(icr_session_new(ds, ptr::null(), qs.as_ptr(), 1, ptr::null(), &opts, &mut session), ICR_ERR_INVALID_ARGUMENT);
        let opts = options(ICR_POLICY_QACOHE);
        let nobody = CString::new("img99999").unwrap();
        assert_eq!(icr_session_new(ds, ptr::null(), qs.as_ptr(), 1, nobody.as_ptr(), &opts, &mut session), ICR_ERR_UNKNOWN_TARGET);
        assert_eq!(icr_session_new(ds, ptr::null(), qs.as_ptr(), 0, ptr::null(), &opts, &mut session), ICR_ERR_INVALID_ARGUMENT);
        assert!(session.is_null());

        assert_eq!(icr_session_new(ds, ptr::null(), qs.as_ptr(), 1, ptr::null(), &opts, &mut session), ICR_OK);
        let mut pending = [0usize; 1];
        let mut n = 0;
        assert_eq!(icr_session_candidates(session, pending.as_mut_ptr(), 1, &mut n), ICR_ERR_BUFFER_TOO_SMALL);
        assert_eq!(n, 3);
        let stranger = [icr_dataset_vocab_size(ds) + 4];
        assert_eq!(icr_session_confirm(session, stranger.as_ptr(), 1, ptr::null(), 0), ICR_ERR_INVALID_FEEDBACK);
        assert_eq!(icr_session_round(session), 0);

        let mut buf = [0 as c_char; 64];
        assert_eq!(icr_dataset_word(ds, 0, buf.as_mut_ptr(), buf.len(), ptr::null_mut()), ICR_OK);
        assert_eq!(CStr::from_ptr(buf.as_ptr()).to_str().unwrap(), "man");
        assert_eq!(icr_dataset_word(ds, 10_000, buf.as_mut_ptr(), buf.len(), ptr::null_mut()), ICR_ERR_INVALID_ARGUMENT);

        icr_session_free(session);
        icr_dataset_free(ds);
        icr_dataset_free(ptr::null_mut());
        assert_eq!(icr_dataset_num_images(ptr::null()), 0);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/icr.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["icr_session_new", "icr_last_error_message", "ICR_ERR_FINISHED", "IcrSessionOptions"] {
        assert!(text.contains(name), "{name} missing from the header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, format!("#include \"{}\"\nint main(void) {{ return ICR_OK; }}\n", header.display())).unwrap();
    match Command::new("cc").args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only"]).arg(&src).status() {
        Ok(status) => assert!(status.success()),
        Err(e) => eprintln!("skipping the C compile: {e}"),
    }
}
