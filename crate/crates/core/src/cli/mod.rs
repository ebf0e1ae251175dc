//! The `icr` command line.
//!
//! Usage problems (bad flags, bad config files) exit with status 2, failures
//! while reading data or running a command exit with 1.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::RunConfig;

use crate::error::Error;
use crate::gallery::{generate_synthetic, load_dataset, save_dataset, write_atomic, Dataset, SyntheticConfig};
use crate::interaction::{
    build_joint_cooccurrence, evaluate, partial_query_curve, run_episode, EpisodeConfig, EvalSetting,
    JointCooccurrence, PolicyKind, PolicySource, Report, RetrievalEnv,
};
use crate::learning::{build_cooccurrence, train_with, training_split, CooccurrenceMatrix, PpoConfig};
use crate::policy::{load_policy, save_policy, PolicyModel, SelectionMode};
use crate::ranker::RankerKind;
use crate::service::{AppState, ServiceConfig, ServicePolicy};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Parser, Debug)]
#[command(name = "icr", version, about = "Interactive text-to-image retrieval with object confirmation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic gallery.
    GenData(GenDataArgs),
    /// Train the candidate policy.
    Train(TrainArgs),
    /// Evaluate candidate policies with the simulated user.
    Eval(EvalArgs),
    /// Print one simulated episode.
    Simulate(SimulateArgs),
    /// Serve the session API.
    Serve(ServeArgs),
    /// Retrieval quality against the number of captions in the query.
    Degradation(DegradationArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Benchmark,
    Small,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long, value_enum, default_value = "benchmark")]
    pub preset: Preset,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub images: Option<usize>,
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub regions: Option<usize>,
    #[arg(long)]
    pub captions: Option<usize>,
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Images held out as the test split (last ones in id order). Defaults to
    /// 400 for the benchmark preset and none for the small one.
    #[arg(long)]
    pub test: Option<usize>,
}

/// Flags shared by the commands that read a gallery.
#[derive(Args, Debug, Default)]
pub struct Common {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub ranker: Option<RankerKind>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Where the trained policy is written.
    #[arg(long)]
    pub out: PathBuf,
    /// Line-delimited training log; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub actions: Option<usize>,
    /// Episode horizon.
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub queries: Option<usize>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Policies to compare; defaults to every baseline plus the learned
    /// policy when one is given.
    #[arg(long = "policy-type", value_delimiter = ',')]
    pub policy_types: Vec<PolicyKind>,
    #[arg(long, value_delimiter = ',')]
    pub settings: Vec<EvalSetting>,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    /// Number of evaluation seeds, counted up from `--seed`.
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    /// JSON array of reports, one per policy.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long = "policy-type")]
    pub policy_type: Option<PolicyKind>,
    /// Target image id; a test image is drawn from the seed when absent.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub queries: usize,
    #[arg(long, default_value_t = 10)]
    pub actions: usize,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub policy: Option<PathBuf>,
    #[arg(long = "policy-type")]
    pub policy_type: Option<PolicyKind>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, default_value_t = 10)]
    pub rounds: usize,
    #[arg(long, default_value_t = 10)]
    pub actions: usize,
    #[arg(long)]
    pub session_log: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DegradationArgs {
    #[command(flatten)]
    pub common: Common,
    /// Largest caption count; defaults to the fewest captions of any image.
    #[arg(long)]
    pub max_captions: Option<usize>,
    /// CSV destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command, returning the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::GenData(a) => cmd_gen_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a).map(|reports| print!("{}", report_table(&reports))),
        Command::Simulate(a) => cmd_simulate(a).map(|text| print!("{text}")),
        Command::Serve(a) => cmd_serve(a),
        Command::Degradation(a) => cmd_degradation(a),
    }
}

/// Config file values with flags applied on top.
struct Resolved {
    data: PathBuf,
    policy: Option<PathBuf>,
    seed: u64,
    ranker: RankerKind,
    ppo: PpoConfig,
}

fn resolve(common: &Common, policy_flag: Option<&PathBuf>) -> CliResult<Resolved> {
    let file = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let data = common
        .data
        .clone()
        .or(file.data)
        .ok_or_else(|| CliError::Usage("no gallery given; pass --data or set `data` in the config".into()))?;
    Ok(Resolved {
        data,
        policy: policy_flag.cloned().or(file.policy),
        seed: common.seed.or(file.seed).unwrap_or(0),
        ranker: common.ranker.or(file.ranker).unwrap_or_default(),
        ppo: file.ppo.unwrap_or_default(),
    })
}

fn cmd_gen_data(args: GenDataArgs) -> CliResult<()> {
    let (mut config, default_test) = match args.preset {
        Preset::Benchmark => (SyntheticConfig::benchmark(), 400),
        Preset::Small => (SyntheticConfig::small(0), 0),
    };
    if let Some(v) = args.seed {
        config.seed = v;
    }
    if let Some(v) = args.images {
        config.n_images = v;
    }
    if let Some(v) = args.vocab {
        config.vocab_size = v;
    }
    if let Some(v) = args.dim {
        config.dim = v;
    }
    if let Some(v) = args.regions {
        config.regions_per_image = v;
    }
    if let Some(v) = args.captions {
        config.captions_per_image = v;
    }
    if let Some(v) = args.sigma {
        config.noise_sigma = v;
    }
    let mut dataset = generate_synthetic(&config)?;
    let test = args.test.unwrap_or(default_test);
    if test > 0 {
        dataset.assign_holdout(test)?;
    }
    save_dataset(&dataset, &args.out)?;
    eprintln!("wrote {} images over {} objects to {}", dataset.num_images(), dataset.vocab_size(), args.out.display());
    Ok(())
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let resolved = resolve(&args.common, None)?;
    let mut ppo = resolved.ppo;
    if let Some(v) = args.epochs {
        ppo.total_epochs = v;
    }
    if let Some(v) = args.alpha {
        ppo.alpha = v;
    }
    if let Some(v) = args.actions {
        ppo.n_actions = v;
    }
    if let Some(v) = args.rounds {
        ppo.horizon = v;
    }
    if let Some(v) = args.queries {
        ppo.initial_queries = v;
    }
    ppo.validate()?;
    let dataset = load_dataset(&resolved.data)?;
    let output = train_with(&dataset, &ppo, resolved.seed, |r| {
        tracing::info!(
            epoch = r.epoch,
            reward = r.mean_reward,
            loss_ppo = r.loss_ppo,
            loss_shaping = r.loss_shaping,
            r10 = r.r_at_10_eval,
            mr = r.mean_rank_eval,
            "epoch"
        );
    })?;
    save_policy(&output.model, &args.out)?;
    let log_path = args.log.unwrap_or_else(|| args.out.with_extension("log.jsonl"));
    let log = output.log.to_jsonl();
    write_atomic(&log_path, |w| w.write_all(log.as_bytes()))?;
    eprintln!("wrote {} and {}", args.out.display(), log_path.display());
    Ok(())
}

/// Everything a policy source borrows from.
struct Sources {
    model: Option<PolicyModel>,
    cooccurrence: CooccurrenceMatrix,
    joint: JointCooccurrence,
}

impl Sources {
    fn new(dataset: &Dataset, policy: Option<&Path>) -> CliResult<Self> {
        let (train, _) = training_split(dataset)?;
        let model = match policy {
            Some(path) => {
                let model = load_policy(path)?;
                model.check_compatible(dataset.feature_dim, dataset.vocab_size())?;
                Some(model)
            }
            None => None,
        };
        Ok(Sources { model, cooccurrence: build_cooccurrence(&train)?, joint: build_joint_cooccurrence(&train)? })
    }

    fn get(&self, kind: PolicyKind) -> CliResult<PolicySource<'_>> {
        Ok(match kind {
            PolicyKind::Learned => PolicySource::Learned {
                model: self
                    .model
                    .as_ref()
                    .ok_or_else(|| CliError::Usage("the learned policy needs --policy".into()))?,
                cooccurrence: Some(&self.cooccurrence),
            },
            PolicyKind::Random => PolicySource::Random,
            PolicyKind::Qasim => PolicySource::QaSim,
            PolicyKind::Qacohe => PolicySource::QaCohe(&self.joint),
        })
    }
}

fn eval_env(dataset: &Dataset) -> CliResult<RetrievalEnv> {
    let (_, eval) = training_split(dataset)?;
    Ok(RetrievalEnv::new(eval)?)
}

/// Runs the evaluation and returns the reports written to `--out`.
pub fn cmd_eval(args: EvalArgs) -> CliResult<Vec<Report>> {
    let resolved = resolve(&args.common, args.policy.as_ref())?;
    let kinds = if args.policy_types.is_empty() {
        let mut kinds = vec![PolicyKind::Random, PolicyKind::Qasim, PolicyKind::Qacohe];
        if resolved.policy.is_some() {
            kinds.insert(0, PolicyKind::Learned);
        }
        kinds
    } else {
        args.policy_types.clone()
    };
    if kinds.contains(&PolicyKind::Learned) && resolved.policy.is_none() {
        return Err(CliError::Usage("--policy-type learned needs --policy".into()));
    }
    let settings = if args.settings.is_empty() { EvalSetting::STANDARD.to_vec() } else { args.settings.clone() };
    if args.repeats == 0 {
        return Err(CliError::Usage("--repeats must be positive".into()));
    }
    let seeds: Vec<u64> = (0..args.repeats).map(|i| resolved.seed.wrapping_add(i)).collect();

    let dataset = load_dataset(&resolved.data)?;
    let sources = Sources::new(&dataset, resolved.policy.as_deref())?;
    let env = eval_env(&dataset)?;
    let mut reports = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let source = sources.get(kind)?;
        reports.push(evaluate(&env, &source, &settings, args.rounds, &seeds, resolved.ranker)?);
    }
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
        write_atomic(out, |w| w.write_all(json.as_bytes()))?;
    }
    Ok(reports)
}

pub fn report_table(reports: &[Report]) -> String {
    let mut out = format!("{:<8} {:<7} {:>3} {:>7} {:>7} {:>7} {:>8}\n", "policy", "setting", "t", "R@1", "R@5", "R@10", "MR");
    for report in reports {
        for s in &report.settings {
            let setting = EvalSetting { n_q: s.n_q, n_a: s.n_a };
            for m in &s.rounds {
                let _ = writeln!(
                    out,
                    "{:<8} {:<7} {:>3} {:>7.2} {:>7.2} {:>7.2} {:>8.2}",
                    report.policy_type,
                    setting.to_string(),
                    m.t,
                    m.r1,
                    m.r5,
                    m.r10,
                    m.mr
                );
            }
        }
    }
    out
}

fn policy_kind(flag: Option<PolicyKind>, policy: Option<&PathBuf>) -> Option<PolicyKind> {
    flag.or(policy.map(|_| PolicyKind::Learned))
}

/// Runs one greedy episode and renders it round by round.
pub fn cmd_simulate(args: SimulateArgs) -> CliResult<String> {
    let resolved = resolve(&args.common, args.policy.as_ref())?;
    let kind = policy_kind(args.policy_type, resolved.policy.as_ref()).unwrap_or(PolicyKind::Qasim);
    let dataset = load_dataset(&resolved.data)?;
    let sources = Sources::new(&dataset, resolved.policy.as_deref())?;
    let source = sources.get(kind)?;
    let env = eval_env(&dataset)?;
    let target = match &args.target {
        Some(id) => id.clone(),
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(resolved.seed);
            env.image(rng.random_range(0..env.num_images())).id.clone()
        }
    };
    let config = EpisodeConfig {
        rounds: args.rounds,
        n_candidates: args.actions,
        mode: SelectionMode::Greedy,
        ranker: resolved.ranker,
        ..Default::default()
    };
    let trace = run_episode(&env, &target, args.queries, &source, &config, resolved.seed)?;
    let words = |objs: &[usize]| objs.iter().map(|&a| env.word(a)).collect::<Vec<_>>().join(", ");
    let pos = env.position(&target)?;
    let mut out = String::new();
    let _ = writeln!(out, "target {} [{}]", target, words(&env.image(pos).objects));
    let _ = writeln!(out, "policy {}, ranker {}, {} images", source.name(), resolved.ranker, env.num_images());
    for q in &trace.initial_queries {
        let _ = writeln!(out, "query: {q}");
    }
    let _ = writeln!(out, "round  0  rank {}", trace.initial_rank);
    for r in &trace.rounds {
        let _ = writeln!(out, "round {:>2}  rank {}", r.round, r.target_rank);
        let _ = writeln!(out, "  asked: {}", words(&r.proposed));
        let _ = writeln!(out, "  yes:   {}", words(&r.positives));
        let _ = writeln!(out, "  no:    {}", words(&r.negatives));
    }
    if trace.exhausted {
        let _ = writeln!(out, "every object has been asked");
    }
    Ok(out)
}

fn cmd_serve(args: ServeArgs) -> CliResult<()> {
    let resolved = resolve(&args.common, args.policy.as_ref())?;
    let dataset = load_dataset(&resolved.data)?;
    let policy = match policy_kind(args.policy_type, resolved.policy.as_ref()) {
        Some(PolicyKind::Learned) => {
            let path = resolved.policy.as_ref().ok_or_else(|| CliError::Usage("the learned policy needs --policy".into()))?;
            ServicePolicy::learned(load_policy(path)?, &dataset)?
        }
        Some(PolicyKind::Random) => ServicePolicy::Random,
        Some(PolicyKind::Qasim) => ServicePolicy::QaSim,
        Some(PolicyKind::Qacohe) => ServicePolicy::qacohe(&dataset)?,
        None => {
            tracing::warn!("no policy configured; session creation will answer 503");
            ServicePolicy::None
        }
    };
    let config = ServiceConfig {
        max_rounds: args.rounds,
        default_candidates: args.actions,
        session_log: args.session_log.clone(),
        ..Default::default()
    };
    let state = Arc::new(AppState::new(dataset, policy, config)?);
    let addr = SocketAddr::new(args.host, args.port);
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Data(e.to_string()))?;
    runtime
        .block_on(crate::service::serve(state, addr))
        .map_err(|e| CliError::Data(format!("server on {addr}: {e}")))
}

pub fn degradation_csv(rows: &[(usize, crate::interaction::RoundMetrics)]) -> String {
    let mut out = String::from("captions,r1,r5,r10,mr\n");
    for (c, m) in rows {
        let _ = writeln!(out, "{c},{},{},{},{}", m.r1, m.r5, m.r10, m.mr);
    }
    out
}

fn cmd_degradation(args: DegradationArgs) -> CliResult<()> {
    let resolved = resolve(&args.common, None)?;
    let dataset = load_dataset(&resolved.data)?;
    let env = eval_env(&dataset)?;
    let fewest = (0..env.num_images()).map(|p| env.image(p).captions.len()).min().unwrap_or(0);
    let max = args.max_captions.unwrap_or(fewest);
    if max == 0 {
        return Err(CliError::Usage("--max-captions must be positive".into()));
    }
    let csv = degradation_csv(&partial_query_curve(&env, resolved.ranker, max, resolved.seed)?);
    match &args.out {
        Some(out) => write_atomic(out, |w| w.write_all(csv.as_bytes()))?,
        None => print!("{csv}"),
    }
    Ok(())
}
