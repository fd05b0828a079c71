//! Command-line layer: key=value configuration with per-field provenance,
//! dispatch into the training and evaluation entry points, and learning-
//! curve CSV emission for external plotting.
//!
//! The configuration format is plain `key = value` lines; `#` starts a
//! comment. Values come from three sources with increasing precedence:
//! built-in defaults, a config file, then command-line flags. The fully
//! resolved config is echoed into the run directory with the source of
//! every field, and `parse_config(emit_config(c)) == c`.

use crate::envs::{make_env, EnvError, ScriptKind};
use crate::eval::{
    enumerate_game, evaluate_winrate, exploitability, mix64, train_exploiter, EvalError,
    EvalReport, NetworkProfile, SampledProfile, UniformProfile,
};
use crate::metrics::{read_probes, CsvFile, MetricsError, ProbeRow, METRICS_HEADER};
use crate::nn::{ArchSpec, PolicyHead};
use crate::rl::{Hyperparams, RlError};
use crate::train::{
    load_checkpoint, pretrain_transfer, run_nfsp, run_selfplay, save_checkpoint, AgentBundle,
    ExploitSetup, Mode, Opponent, RunDir, TrainError, TrainSetup, TransferMode,
};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// First line of every emitted config file.
pub const CONFIG_VERSION: &str = "nfsp config v1";
/// Header of the curve CSV written by the `curve` command.
pub const CURVE_HEADER: &str = "games_experienced,win_vs_simple,win_vs_random,nashconv";
/// Environment variable naming the default output root for run directories.
pub const OUT_ENV_VAR: &str = "NFSP_OUT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("unknown config key '{0}'")]
    UnknownKey(String),
    #[error("config key '{key}' expects {expected}, got '{got}'")]
    BadValue { key: String, expected: &'static str, got: String },
    #[error("line {line} of {path} is not 'key = value': '{text}'")]
    BadLine { path: String, line: usize, text: String },
    #[error("cannot read config file {path}: {source}")]
    ConfigFile { path: String, source: std::io::Error },
    #[error("no checkpoint found at {0}")]
    MissingCheckpoint(String),
    #[error("command '{command}' needs {what}")]
    MissingInput { command: &'static str, what: &'static str },
    #[error("{0} has no probe rows to build a curve from")]
    EmptyCurveSource(String),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 for configuration problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::UnknownKey(_)
            | CliError::BadValue { .. }
            | CliError::BadLine { .. }
            | CliError::ConfigFile { .. }
            | CliError::MissingCheckpoint(_)
            | CliError::MissingInput { .. }
            | CliError::Rl(_)
            | CliError::Train(TrainError::Config(_))
            | CliError::Train(TrainError::NoCheckpoint(_))
            | CliError::Eval(EvalError::Unenumerable(_)) => 1,
            _ => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Pretrain,
    Eval,
    Exploit,
    Curve,
    Nashconv,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Pretrain => "pretrain",
            Command::Eval => "eval",
            Command::Exploit => "exploit",
            Command::Curve => "curve",
            Command::Nashconv => "nashconv",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "train" => Command::Train,
            "pretrain" => Command::Pretrain,
            "eval" => Command::Eval,
            "exploit" => Command::Exploit,
            "curve" => Command::Curve,
            "nashconv" => Command::Nashconv,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Default,
    File,
    Flag,
}

impl Provenance {
    pub fn label(self) -> &'static str {
        match self {
            Provenance::Default => "default",
            Provenance::File => "file",
            Provenance::Flag => "flag",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadChoice {
    /// Average-strategy head when the checkpoint has SL updates, RL head
    /// otherwise.
    Auto,
    Rl,
    Sl,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OpponentChoice {
    Uniform,
    Random,
    Simple,
    HitAndRun,
}

/// Fully resolved run configuration. Defaults reproduce the reference
/// training settings; everything is overridable by file or flag.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub command: Command,
    pub env: String,
    pub mode: Mode,
    pub h: Hyperparams,
    pub width: usize,
    pub hidden: usize,
    pub shared: bool,
    pub seed: u64,
    pub process_seeds: [u64; 2],
    /// Updates to run in this invocation; a resumed run adds them on top
    /// of the checkpointed count.
    pub updates: u64,
    pub probe_every: u64,
    pub probe_games: u64,
    pub checkpoint_every: u64,
    /// Games for headline evaluations (eval, exploit reports).
    pub games: u64,
    pub out: Option<PathBuf>,
    pub resume: bool,
    pub target: Option<PathBuf>,
    pub bundle: usize,
    pub head: HeadChoice,
    pub opponent: OpponentChoice,
    pub transfer: TransferMode,
    pub pretrain_updates: u64,
    pub run: Option<PathBuf>,
}

impl RunConfig {
    pub fn defaults(command: Command) -> Self {
        RunConfig {
            command,
            env: "kuhn".to_string(),
            mode: Mode::Nfsp,
            h: Hyperparams::default(),
            width: 64,
            hidden: 1,
            shared: true,
            seed: 7,
            process_seeds: [101, 202],
            updates: 500,
            probe_every: 50,
            probe_games: 200,
            checkpoint_every: 100,
            games: 1000,
            out: None,
            resume: false,
            target: None,
            bundle: 0,
            head: HeadChoice::Auto,
            opponent: OpponentChoice::Uniform,
            transfer: TransferMode::BothHeads,
            pretrain_updates: 200,
            run: None,
        }
    }
}

/// Every accepted key with the expected form of its value; doubles as the
/// emission order and the documentation table.
pub const KEYS: &[(&str, &str)] = &[
    ("command", "train | pretrain | eval | exploit | curve | nashconv"),
    ("env", "kuhn | pennies | matching-pennies | rps | microrts"),
    ("mode", "nfsp | selfplay"),
    ("gamma", "a real in (0, 1]"),
    ("gae_k", "a real in (0, 1]"),
    ("clip_eps", "a real > 0"),
    ("value_clip", "a real > 0"),
    ("entropy_coef", "a real >= 0"),
    ("value_coef", "a real >= 0"),
    ("rl_lr", "a real > 0"),
    ("sl_lr", "a real > 0"),
    ("eta", "a real in [0, 1]"),
    ("max_grad_norm", "a real > 0"),
    ("ppo_epochs", "a positive integer"),
    ("batch_size", "a positive integer"),
    ("batch_time", "a positive integer"),
    ("frame_skip", "a positive integer"),
    ("games_per_process", "a positive integer"),
    ("reservoir_capacity", "a positive integer"),
    ("sl_sample", "a positive integer"),
    ("width", "a positive integer"),
    ("hidden", "a positive integer"),
    ("shared", "true | false"),
    ("seed", "an unsigned integer"),
    ("process_seeds", "two unsigned integers 'a,b'"),
    ("updates", "an unsigned integer"),
    ("probe_every", "an unsigned integer (0 disables probes)"),
    ("probe_games", "a positive integer"),
    ("checkpoint_every", "an unsigned integer (0 keeps only the final checkpoint)"),
    ("games", "a positive integer"),
    ("pretrain_updates", "a positive integer"),
    ("transfer", "both | rl-only"),
    ("head", "auto | rl | sl"),
    ("opponent", "uniform | random | simple | hitandrun"),
    ("bundle", "an unsigned integer"),
    ("resume", "true | false"),
    ("out", "a directory path"),
    ("target", "a checkpoint or run directory path"),
    ("run", "a run directory path"),
];

fn bad(key: &str, expected: &'static str, got: &str) -> CliError {
    CliError::BadValue { key: key.to_string(), expected, got: got.to_string() }
}

fn req_f64(key: &str, v: &str) -> Result<f64, CliError> {
    v.parse().map_err(|_| bad(key, "a real number", v))
}

fn req_u64(key: &str, v: &str) -> Result<u64, CliError> {
    v.parse().map_err(|_| bad(key, "an unsigned integer", v))
}

fn req_usize(key: &str, v: &str) -> Result<usize, CliError> {
    v.parse().map_err(|_| bad(key, "an unsigned integer", v))
}

fn req_positive(key: &str, v: &str) -> Result<usize, CliError> {
    let n = req_usize(key, v)?;
    if n == 0 {
        return Err(bad(key, "a positive integer", v));
    }
    Ok(n)
}

fn req_bool(key: &str, v: &str) -> Result<bool, CliError> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(bad(key, "true | false", v)),
    }
}

fn set_key(cfg: &mut RunConfig, key: &str, value: &str) -> Result<(), CliError> {
    match key {
        "command" => {
            cfg.command = Command::parse(value)
                .ok_or_else(|| bad(key, "train | pretrain | eval | exploit | curve | nashconv", value))?
        }
        "env" => {
            if !["kuhn", "pennies", "matching-pennies", "rps", "microrts"].contains(&value) {
                return Err(bad(key, "kuhn | pennies | matching-pennies | rps | microrts", value));
            }
            cfg.env = value.to_string();
        }
        "mode" => {
            cfg.mode = match value {
                "nfsp" => Mode::Nfsp,
                "selfplay" => Mode::Selfplay,
                _ => return Err(bad(key, "nfsp | selfplay", value)),
            }
        }
        "gamma" => cfg.h.gamma = req_f64(key, value)?,
        "gae_k" => cfg.h.gae_k = req_f64(key, value)?,
        "clip_eps" => cfg.h.clip_eps = req_f64(key, value)?,
        "value_clip" => cfg.h.value_clip = req_f64(key, value)?,
        "entropy_coef" => cfg.h.entropy_coef = req_f64(key, value)?,
        "value_coef" => cfg.h.value_coef = req_f64(key, value)?,
        "rl_lr" => cfg.h.rl_lr = req_f64(key, value)?,
        "sl_lr" => cfg.h.sl_lr = req_f64(key, value)?,
        "eta" => cfg.h.eta = req_f64(key, value)?,
        "max_grad_norm" => cfg.h.max_grad_norm = req_f64(key, value)?,
        "ppo_epochs" => cfg.h.ppo_epochs = req_positive(key, value)?,
        "batch_size" => cfg.h.batch_size = req_positive(key, value)?,
        "batch_time" => cfg.h.batch_time = req_positive(key, value)?,
        "frame_skip" => cfg.h.frame_skip = req_positive(key, value)?,
        "games_per_process" => cfg.h.games_per_process = req_positive(key, value)?,
        "reservoir_capacity" => cfg.h.reservoir_capacity = req_positive(key, value)?,
        "sl_sample" => cfg.h.sl_sample = req_positive(key, value)?,
        "width" => cfg.width = req_positive(key, value)?,
        "hidden" => cfg.hidden = req_positive(key, value)?,
        "shared" => cfg.shared = req_bool(key, value)?,
        "seed" => cfg.seed = req_u64(key, value)?,
        "process_seeds" => {
            let parts: Vec<&str> = value.split(',').map(str::trim).collect();
            if parts.len() != 2 {
                return Err(bad(key, "two unsigned integers 'a,b'", value));
            }
            cfg.process_seeds = [req_u64(key, parts[0])?, req_u64(key, parts[1])?];
        }
        "updates" => cfg.updates = req_u64(key, value)?,
        "probe_every" => cfg.probe_every = req_u64(key, value)?,
        "probe_games" => cfg.probe_games = req_positive(key, value)? as u64,
        "checkpoint_every" => cfg.checkpoint_every = req_u64(key, value)?,
        "games" => cfg.games = req_positive(key, value)? as u64,
        "pretrain_updates" => cfg.pretrain_updates = req_positive(key, value)? as u64,
        "transfer" => {
            cfg.transfer = match value {
                "both" => TransferMode::BothHeads,
                "rl-only" => TransferMode::RlOnly,
                _ => return Err(bad(key, "both | rl-only", value)),
            }
        }
        "head" => {
            cfg.head = match value {
                "auto" => HeadChoice::Auto,
                "rl" => HeadChoice::Rl,
                "sl" => HeadChoice::Sl,
                _ => return Err(bad(key, "auto | rl | sl", value)),
            }
        }
        "opponent" => {
            cfg.opponent = match value {
                "uniform" => OpponentChoice::Uniform,
                "random" => OpponentChoice::Random,
                "simple" => OpponentChoice::Simple,
                "hitandrun" => OpponentChoice::HitAndRun,
                _ => return Err(bad(key, "uniform | random | simple | hitandrun", value)),
            }
        }
        "bundle" => cfg.bundle = req_usize(key, value)?,
        "resume" => cfg.resume = req_bool(key, value)?,
        "out" => cfg.out = Some(PathBuf::from(value)),
        "target" => cfg.target = Some(PathBuf::from(value)),
        "run" => cfg.run = Some(PathBuf::from(value)),
        _ => return Err(CliError::UnknownKey(key.to_string())),
    }
    Ok(())
}

fn get_key(cfg: &RunConfig, key: &str) -> Option<String> {
    Some(match key {
        "command" => cfg.command.name().to_string(),
        "env" => cfg.env.clone(),
        "mode" => match cfg.mode {
            Mode::Nfsp => "nfsp".to_string(),
            Mode::Selfplay => "selfplay".to_string(),
        },
        "gamma" => cfg.h.gamma.to_string(),
        "gae_k" => cfg.h.gae_k.to_string(),
        "clip_eps" => cfg.h.clip_eps.to_string(),
        "value_clip" => cfg.h.value_clip.to_string(),
        "entropy_coef" => cfg.h.entropy_coef.to_string(),
        "value_coef" => cfg.h.value_coef.to_string(),
        "rl_lr" => cfg.h.rl_lr.to_string(),
        "sl_lr" => cfg.h.sl_lr.to_string(),
        "eta" => cfg.h.eta.to_string(),
        "max_grad_norm" => cfg.h.max_grad_norm.to_string(),
        "ppo_epochs" => cfg.h.ppo_epochs.to_string(),
        "batch_size" => cfg.h.batch_size.to_string(),
        "batch_time" => cfg.h.batch_time.to_string(),
        "frame_skip" => cfg.h.frame_skip.to_string(),
        "games_per_process" => cfg.h.games_per_process.to_string(),
        "reservoir_capacity" => cfg.h.reservoir_capacity.to_string(),
        "sl_sample" => cfg.h.sl_sample.to_string(),
        "width" => cfg.width.to_string(),
        "hidden" => cfg.hidden.to_string(),
        "shared" => cfg.shared.to_string(),
        "seed" => cfg.seed.to_string(),
        "process_seeds" => format!("{},{}", cfg.process_seeds[0], cfg.process_seeds[1]),
        "updates" => cfg.updates.to_string(),
        "probe_every" => cfg.probe_every.to_string(),
        "probe_games" => cfg.probe_games.to_string(),
        "checkpoint_every" => cfg.checkpoint_every.to_string(),
        "games" => cfg.games.to_string(),
        "pretrain_updates" => cfg.pretrain_updates.to_string(),
        "transfer" => match cfg.transfer {
            TransferMode::BothHeads => "both".to_string(),
            TransferMode::RlOnly => "rl-only".to_string(),
        },
        "head" => match cfg.head {
            HeadChoice::Auto => "auto".to_string(),
            HeadChoice::Rl => "rl".to_string(),
            HeadChoice::Sl => "sl".to_string(),
        },
        "opponent" => match cfg.opponent {
            OpponentChoice::Uniform => "uniform".to_string(),
            OpponentChoice::Random => "random".to_string(),
            OpponentChoice::Simple => "simple".to_string(),
            OpponentChoice::HitAndRun => "hitandrun".to_string(),
        },
        "bundle" => cfg.bundle.to_string(),
        "resume" => cfg.resume.to_string(),
        "out" => cfg.out.as_ref()?.display().to_string(),
        "target" => cfg.target.as_ref()?.display().to_string(),
        "run" => cfg.run.as_ref()?.display().to_string(),
        _ => return None,
    })
}

/// A parsed configuration with the source of every field.
#[derive(Clone, Debug)]
pub struct Resolved {
    pub config: RunConfig,
    pub provenance: BTreeMap<String, Provenance>,
}

/// Resolve defaults, then the config file, then flags, in that order of
/// precedence. `command` (from the CLI subcommand) counts as a flag.
pub fn parse_config(
    command: Option<Command>,
    file: Option<&Path>,
    flags: &[(String, String)],
) -> Result<Resolved, CliError> {
    let mut cfg = RunConfig::defaults(command.unwrap_or(Command::Train));
    let mut provenance: BTreeMap<String, Provenance> =
        KEYS.iter().map(|(k, _)| (k.to_string(), Provenance::Default)).collect();

    if let Some(path) = file {
        let text = fs::read_to_string(path).map_err(|source| CliError::ConfigFile {
            path: path.display().to_string(),
            source,
        })?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split(" #").next().unwrap_or(raw).trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| CliError::BadLine {
                path: path.display().to_string(),
                line: i + 1,
                text: raw.trim().to_string(),
            })?;
            let key = key.trim();
            set_key(&mut cfg, key, value.trim())?;
            provenance.insert(key.to_string(), Provenance::File);
        }
    }

    if let Some(c) = command {
        cfg.command = c;
        provenance.insert("command".to_string(), Provenance::Flag);
    }
    for (key, value) in flags {
        set_key(&mut cfg, key, value)?;
        provenance.insert(key.clone(), Provenance::Flag);
    }

    cfg.h.validate()?;
    Ok(Resolved { config: cfg, provenance })
}

/// Render the full configuration as parseable `key = value` lines.
pub fn emit_config(cfg: &RunConfig) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# {CONFIG_VERSION}");
    for (key, _) in KEYS {
        if let Some(value) = get_key(cfg, key) {
            let _ = writeln!(out, "{key} = {value}");
        }
    }
    out
}

/// Write the resolved config with the source of every field as a trailing
/// comment; the file reparses to the same configuration.
pub fn write_config_snapshot(path: &Path, resolved: &Resolved) -> Result<(), CliError> {
    let mut out = String::new();
    let _ = writeln!(out, "# {CONFIG_VERSION}");
    for (key, _) in KEYS {
        if let Some(value) = get_key(&resolved.config, key) {
            let source = resolved.provenance.get(*key).copied().unwrap_or(Provenance::Default);
            let _ = writeln!(out, "{key} = {value}  # {}", source.label());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// What a dispatched command produced, for programmatic callers; `run`
/// prints the human-readable rendering.
#[derive(Debug)]
pub enum Outcome {
    Trained {
        run_dir: PathBuf,
        start_update: u64,
        updates_run: u64,
        games_played: Vec<u64>,
        final_probe: Option<ProbeRow>,
    },
    Evaluated {
        report: EvalReport,
        run_dir: Option<PathBuf>,
    },
    Exploited {
        report: EvalReport,
        run_dir: Option<PathBuf>,
    },
    Curve {
        path: PathBuf,
        rows: usize,
    },
    Nashconv {
        env: String,
        profile: String,
        value: f64,
    },
}

fn default_root() -> PathBuf {
    std::env::var_os(OUT_ENV_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn run_dir_for(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| {
        let mode = get_key(cfg, "mode").unwrap_or_default();
        default_root().join(format!("{}-{}-{}-s{}", cfg.command.name(), cfg.env, mode, cfg.seed))
    })
}

/// Probe the environment once to size the network: input width from the
/// observation features, output width from the action mask.
fn arch_for(cfg: &RunConfig) -> Result<ArchSpec, CliError> {
    let mut env = make_env(&cfg.env, 1)?;
    let obs = env.reset(0);
    let first = obs.first().ok_or_else(|| {
        bad("env", "an environment with an initial decision point", &cfg.env)
    })?;
    Ok(ArchSpec::mlp(first.features.len(), cfg.width, cfg.hidden, first.legal.len()))
}

fn scripted_opponent(choice: OpponentChoice) -> Opponent<'static> {
    match choice {
        OpponentChoice::Uniform => Opponent::Uniform,
        OpponentChoice::Random => Opponent::Scripted(ScriptKind::Random),
        OpponentChoice::Simple => Opponent::Scripted(ScriptKind::Simple),
        OpponentChoice::HitAndRun => Opponent::Scripted(ScriptKind::HitAndRun),
    }
}

fn resolve_head(choice: HeadChoice, bundle: &AgentBundle) -> PolicyHead {
    match choice {
        HeadChoice::Rl => PolicyHead::Rl,
        HeadChoice::Sl => PolicyHead::Sl,
        HeadChoice::Auto => {
            if bundle.sl_updates > 0 {
                PolicyHead::Sl
            } else {
                PolicyHead::Rl
            }
        }
    }
}

fn load_target(cfg: &RunConfig, command: &'static str) -> Result<Vec<AgentBundle>, CliError> {
    let path = cfg.target.as_ref().ok_or(CliError::MissingInput {
        command,
        what: "a checkpoint (target=PATH)",
    })?;
    if !path.exists() {
        return Err(CliError::MissingCheckpoint(path.display().to_string()));
    }
    let (bundles, _) = load_checkpoint(path, &cfg.h)?;
    Ok(bundles)
}

fn target_bundle<'a>(cfg: &RunConfig, bundles: &'a [AgentBundle]) -> Result<&'a AgentBundle, CliError> {
    bundles.get(cfg.bundle).ok_or_else(|| {
        bad("bundle", "an index below the checkpoint's bundle count", &cfg.bundle.to_string())
    })
}

fn probe_json(row: &ProbeRow) -> serde_json::Value {
    serde_json::json!({
        "update": row.update,
        "games": row.games,
        "nashconv": row.nashconv,
        "win_vs_simple": row.win_vs_simple,
        "win_vs_random": row.win_vs_random,
    })
}

fn train_setup(cfg: &RunConfig, root: &Path, resume: Option<PathBuf>) -> Result<TrainSetup, CliError> {
    Ok(TrainSetup {
        env: cfg.env.clone(),
        arch: arch_for(cfg)?,
        h: cfg.h.clone(),
        shared: cfg.shared,
        net_seed: cfg.seed,
        process_seeds: cfg.process_seeds,
        updates: cfg.updates,
        probe_every: cfg.probe_every,
        probe_games: cfg.probe_games,
        checkpoint_every: cfg.checkpoint_every,
        out: Some(root.to_path_buf()),
        resume,
    })
}

fn write_train_report(
    dir: &RunDir,
    cfg: &RunConfig,
    outcome: &crate::train::RunOutcome,
) -> Result<(), CliError> {
    let report = serde_json::json!({
        "schema": "nfsp report v1",
        "command": cfg.command.name(),
        "env": cfg.env,
        "mode": get_key(cfg, "mode"),
        "start_update": outcome.start_update,
        "updates_run": cfg.updates,
        "games_played": outcome.bundles.iter().map(|b| b.games_played).collect::<Vec<_>>(),
        "final_probe": outcome.probes.last().map(probe_json),
    });
    fs::write(dir.report_path(), serde_json::to_string_pretty(&report)?)?;
    Ok(())
}

fn cmd_train(resolved: &Resolved) -> Result<Outcome, CliError> {
    let cfg = &resolved.config;
    let root = run_dir_for(cfg);
    let dir = RunDir::create(&root)?;
    write_config_snapshot(&dir.config_path(), resolved)?;
    let resume = cfg.resume.then(|| root.clone());
    let setup = train_setup(cfg, &root, resume)?;
    let outcome = match cfg.mode {
        Mode::Nfsp => run_nfsp(&setup)?,
        Mode::Selfplay => run_selfplay(&setup)?,
    };
    write_train_report(&dir, cfg, &outcome)?;
    Ok(Outcome::Trained {
        run_dir: root,
        start_update: outcome.start_update,
        updates_run: cfg.updates,
        games_played: outcome.bundles.iter().map(|b| b.games_played).collect(),
        final_probe: outcome.probes.last().cloned(),
    })
}

fn cmd_pretrain(resolved: &Resolved) -> Result<Outcome, CliError> {
    let cfg = &resolved.config;
    let root = run_dir_for(cfg);
    let dir = RunDir::create(&root)?;
    write_config_snapshot(&dir.config_path(), resolved)?;

    let source_setup = ExploitSetup {
        env: cfg.env.clone(),
        arch: arch_for(cfg)?,
        h: cfg.h.clone(),
        seed: mix64(cfg.seed ^ mix64(0x7072_6574)),
        updates: cfg.pretrain_updates,
    };
    let opp = scripted_opponent(cfg.opponent);
    let (source, _) = crate::train::run_exploiter(&source_setup, &opp)?;

    let count = if cfg.shared { 1 } else { 2 };
    let mut bundles = Vec::new();
    for b in 0..count {
        bundles.push(pretrain_transfer(
            &source,
            cfg.transfer,
            mix64(cfg.seed ^ mix64(0x7472_616e + b as u64)),
        )?);
    }
    let seed_ckpt = dir.checkpoint_dir(0);
    save_checkpoint(&seed_ckpt, &bundles, 0)?;

    let setup = train_setup(cfg, &root, Some(seed_ckpt))?;
    let outcome = run_nfsp(&setup)?;
    write_train_report(&dir, cfg, &outcome)?;
    Ok(Outcome::Trained {
        run_dir: root,
        start_update: outcome.start_update,
        updates_run: cfg.updates,
        games_played: outcome.bundles.iter().map(|b| b.games_played).collect(),
        final_probe: outcome.probes.last().cloned(),
    })
}

fn cmd_eval(resolved: &Resolved) -> Result<Outcome, CliError> {
    let cfg = &resolved.config;
    let bundles = load_target(cfg, "eval")?;
    let bundle = target_bundle(cfg, &bundles)?;
    let head = resolve_head(cfg.head, bundle);
    let profile = NetworkProfile::new(&bundle.net, head);
    let mut agent = SampledProfile { profile: &profile };
    let mut opp = scripted_opponent(cfg.opponent);
    let label = opp.label();
    let report = evaluate_winrate(
        &mut agent,
        &mut opp,
        &cfg.env,
        cfg.h.frame_skip,
        cfg.games,
        mix64(cfg.seed ^ mix64(0x6576_616c)),
        label,
    )?;
    let run_dir = match &cfg.out {
        Some(root) => {
            let dir = RunDir::create(root)?;
            write_config_snapshot(&dir.config_path(), resolved)?;
            fs::write(dir.report_path(), serde_json::to_string_pretty(&report)?)?;
            Some(root.clone())
        }
        None => None,
    };
    Ok(Outcome::Evaluated { report, run_dir })
}

fn cmd_exploit(resolved: &Resolved) -> Result<Outcome, CliError> {
    let cfg = &resolved.config;
    let loaded = match &cfg.target {
        Some(path) => {
            if !path.exists() {
                return Err(CliError::MissingCheckpoint(path.display().to_string()));
            }
            Some(load_checkpoint(path, &cfg.h)?.0)
        }
        None => None,
    };
    let opp = match &loaded {
        Some(bundles) => {
            let bundle = target_bundle(cfg, bundles)?;
            match resolve_head(cfg.head, bundle) {
                PolicyHead::Sl => Opponent::SlSnapshot(&bundle.net),
                PolicyHead::Rl => Opponent::RlSnapshot(&bundle.net),
            }
        }
        None => scripted_opponent(cfg.opponent),
    };
    let setup = ExploitSetup {
        env: cfg.env.clone(),
        arch: arch_for(cfg)?,
        h: cfg.h.clone(),
        seed: cfg.seed,
        updates: cfg.updates,
    };
    let run = train_exploiter(&setup, &opp, cfg.games, mix64(cfg.seed ^ mix64(0x6578_706c)))?;
    let run_dir = match &cfg.out {
        Some(root) => {
            let dir = RunDir::create(root)?;
            write_config_snapshot(&dir.config_path(), resolved)?;
            let mut csv = CsvFile::create(&dir.metrics_path(), METRICS_HEADER)?;
            for row in &run.metrics {
                csv.push_metrics(row)?;
            }
            fs::write(dir.report_path(), serde_json::to_string_pretty(&run.report)?)?;
            Some(root.clone())
        }
        None => None,
    };
    Ok(Outcome::Exploited { report: run.report, run_dir })
}

/// Pick log-spaced probe rows between 10^3 games (or the first probe,
/// whichever is later) and the full budget, Fig. 2 style.
pub fn curve_rows(probes: &[ProbeRow]) -> Vec<ProbeRow> {
    const POINTS: usize = 25;
    let budget = probes.iter().map(|p| p.games).max().unwrap_or(0).max(1) as f64;
    let lo = (probes.first().map(|p| p.games).unwrap_or(1).max(1) as f64).max(1e3).min(budget);
    let mut out: Vec<ProbeRow> = Vec::new();
    for i in 0..POINTS {
        let t = i as f64 / (POINTS - 1) as f64;
        let g = lo * (budget / lo).powf(t);
        let pick = probes
            .iter()
            .min_by(|a, b| {
                let da = (a.games as f64 - g).abs();
                let db = (b.games as f64 - g).abs();
                da.partial_cmp(&db).unwrap().then(a.update.cmp(&b.update))
            })
            .unwrap();
        if out.last().map_or(true, |prev| prev.update != pick.update) {
            out.push(pick.clone());
        }
    }
    out
}

fn cmd_curve(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let root = cfg
        .run
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or(CliError::MissingInput { command: "curve", what: "a run directory (run=PATH)" })?;
    let dir = RunDir::create(&root)?;
    let probes = read_probes(&dir.probes_path())?;
    if probes.is_empty() {
        return Err(CliError::EmptyCurveSource(dir.probes_path().display().to_string()));
    }
    let rows = curve_rows(&probes);
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let mut text = String::new();
    let _ = writeln!(text, "{CURVE_HEADER}");
    for row in &rows {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            row.games,
            cell(row.win_vs_simple),
            cell(row.win_vs_random),
            cell(row.nashconv)
        );
    }
    let path = root.join("curve.csv");
    fs::write(&path, text)?;
    Ok(Outcome::Curve { path, rows: rows.len() })
}

fn cmd_nashconv(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let game = enumerate_game(&cfg.env)?;
    let (profile_label, value) = match &cfg.target {
        Some(_) => {
            let bundles = load_target(cfg, "nashconv")?;
            let bundle = target_bundle(cfg, &bundles)?;
            let head = resolve_head(cfg.head, bundle);
            let profile = NetworkProfile::new(&bundle.net, head);
            let label = match head {
                PolicyHead::Rl => "network:rl",
                PolicyHead::Sl => "network:sl",
            };
            (label.to_string(), exploitability(&game, &profile)?)
        }
        None => ("uniform".to_string(), exploitability(&game, &UniformProfile)?),
    };
    Ok(Outcome::Nashconv { env: cfg.env.clone(), profile: profile_label, value })
}

/// Route a resolved configuration to its command implementation.
pub fn dispatch(resolved: &Resolved) -> Result<Outcome, CliError> {
    match resolved.config.command {
        Command::Train => cmd_train(resolved),
        Command::Pretrain => cmd_pretrain(resolved),
        Command::Eval => cmd_eval(resolved),
        Command::Exploit => cmd_exploit(resolved),
        Command::Curve => cmd_curve(&resolved.config),
        Command::Nashconv => cmd_nashconv(&resolved.config),
    }
}

fn print_outcome(outcome: &Outcome) {
    match outcome {
        Outcome::Trained { run_dir, start_update, updates_run, games_played, final_probe } => {
            println!(
                "trained updates {}..{} ({} games total); artifacts in {}",
                start_update,
                start_update + updates_run,
                games_played.iter().sum::<u64>(),
                run_dir.display()
            );
            if let Some(probe) = final_probe {
                println!(
                    "final probe: {}",
                    serde_json::to_string(&probe_json(probe)).unwrap_or_default()
                );
            }
        }
        Outcome::Evaluated { report, run_dir } | Outcome::Exploited { report, run_dir } => {
            println!("{}", serde_json::to_string_pretty(report).unwrap_or_default());
            if let Some(dir) = run_dir {
                println!("artifacts in {}", dir.display());
            }
        }
        Outcome::Curve { path, rows } => {
            println!("wrote {rows} curve rows to {}", path.display());
        }
        Outcome::Nashconv { env, profile, value } => {
            println!(
                "{}",
                serde_json::json!({ "env": env, "profile": profile, "nashconv": value })
            );
        }
    }
}

/// Parse, dispatch, print, and map errors to exit codes: 0 success,
/// 1 configuration error, 2 runtime error.
pub fn run(command: Command, file: Option<&Path>, flags: &[(String, String)]) -> i32 {
    let resolved = match parse_config(Some(command), file, flags) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    match dispatch(&resolved) {
        Ok(outcome) => {
            print_outcome(&outcome);
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
