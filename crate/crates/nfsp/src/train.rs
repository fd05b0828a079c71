//! Training orchestration: actor functions, persistent rollout lanes, the
//! NFSP and plain self-play loops, exploiter training, pretraining
//! transfer, and run-directory artifacts.
//!
//! The loop is organized in iterations of a parallel phase executed on a
//! fixed serial schedule. Within one iteration every process collects its
//! batch against the same parameter snapshot, RL gradients are evaluated
//! at that snapshot, clipped per process and summed before the single
//! shared step, and reservoir offers from all processes are merged in a
//! canonical content order before insertion. Swapping the two process
//! seeds therefore swaps the per-process metrics streams exactly while
//! the shared bundle evolves identically.

use std::cmp::Ordering;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::scripted::{scripted_policy, ScriptKind};
use crate::envs::{make_env, EnvError, GameEnv, Observation};
use crate::eval::best_response::{enumerate_game, exploitability};
use crate::eval::{
    evaluate_winrate, masked_distribution, mix64, sample_index, EvalError, MatchPolicy,
    NetworkProfile, SampledProfile, ScriptedSeat, StrategyProfile, TableProfile,
};
use crate::metrics::{CsvFile, MetricsRow, ProbeRow, METRICS_HEADER, PROBES_HEADER};
use crate::nn::checkpoint::{load_network, save_network};
use crate::nn::{
    build_network, clip_global_norm, sgd_step, ArchSpec, HeadSet, Network, NnError, PolicyHead,
};
use crate::rl::{
    ppo_gradient, ppo_update, prepare_batch, Hyperparams, Lane, RlError, TrajectoryBatch,
    UpdateMetrics,
};
use crate::sl::{
    load_buffer, reservoir_insert, save_buffer, sl_update, ReservoirBuffer, SlError, StoredItem,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Sl(#[from] SlError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error("bad training setup: {0}")]
    Config(String),
    #[error("lane {lane} faulted {attempts} times in a row; last error: {last}")]
    LaneFault { lane: usize, attempts: u32, last: String },
    #[error("no checkpoint found under {0}")]
    NoCheckpoint(String),
}

/// One agent's trainable state: the two-tower network, its reservoir of
/// (state, pi_RL) behaviour tuples, and lifetime counters.
pub struct AgentBundle {
    pub net: Network,
    pub buffer: ReservoirBuffer,
    pub h: Hyperparams,
    pub rl_updates: u64,
    pub sl_updates: u64,
    pub games_played: u64,
}

impl AgentBundle {
    pub fn new(arch: &ArchSpec, h: &Hyperparams, seed: u64) -> Result<Self, TrainError> {
        h.validate()?;
        let net = build_network(arch, mix64(seed ^ mix64(1)))?;
        let buffer = ReservoirBuffer::new(h.reservoir_capacity, mix64(seed ^ mix64(2)))?;
        Ok(AgentBundle { net, buffer, h: h.clone(), rl_updates: 0, sl_updates: 0, games_played: 0 })
    }
}

/// Result of one acting call through the RL tower.
#[derive(Clone, Debug)]
pub struct ActorChoice {
    pub action: usize,
    /// Raw full policy row, before legality masking. This is what gets
    /// stored with the state in trajectories and reservoir offers.
    pub pi: Vec<f64>,
    pub value: f64,
    /// The masked distribution had no support, so the action was drawn
    /// uniformly from the legal set.
    pub fallback: bool,
}

/// Sample an action from pi_RL restricted to the legal set, and return the
/// raw distribution plus the state value for trajectory records.
pub fn rl_actor(
    net: &Network,
    obs: &Observation,
    rng: &mut ChaCha20Rng,
) -> Result<ActorChoice, TrainError> {
    let out = net.forward(std::slice::from_ref(&obs.features), HeadSet::rl())?;
    let pi = out.pi_rl.unwrap().pop().unwrap();
    let value = out.v_rl.unwrap()[0];
    let (masked, fallback) = masked_distribution(&pi, &obs.legal);
    let action = sample_index(&masked, rng);
    Ok(ActorChoice { action, pi, value, fallback })
}

/// Sample an action from the average-strategy head, masked to legality.
pub fn sl_actor(
    net: &Network,
    obs: &Observation,
    rng: &mut ChaCha20Rng,
) -> Result<(usize, bool), TrainError> {
    let pi = net.policy_row(PolicyHead::Sl, &obs.features)?;
    let (masked, fallback) = masked_distribution(&pi, &obs.legal);
    Ok((sample_index(&masked, rng), fallback))
}

/// A fixed opposing policy for rollout lanes and exploiter training.
pub enum Opponent<'a> {
    /// Average-strategy head of a frozen network snapshot.
    SlSnapshot(&'a Network),
    /// Best-response head of a frozen network snapshot.
    RlSnapshot(&'a Network),
    Scripted(ScriptKind),
    Table(&'a TableProfile),
    Uniform,
}

impl Opponent<'_> {
    pub fn act(
        &self,
        obs: &Observation,
        rng: &mut ChaCha20Rng,
    ) -> Result<(usize, bool), TrainError> {
        match self {
            Opponent::SlSnapshot(net) => sl_actor(net, obs, rng),
            Opponent::RlSnapshot(net) => {
                let c = rl_actor(net, obs, rng)?;
                Ok((c.action, c.fallback))
            }
            Opponent::Scripted(kind) => Ok((scripted_policy(*kind, obs, rng)?, false)),
            Opponent::Table(profile) => {
                let dist = profile.policy(obs)?;
                let (masked, fallback) = masked_distribution(&dist, &obs.legal);
                Ok((sample_index(&masked, rng), fallback))
            }
            Opponent::Uniform => {
                let n = obs.legal.len();
                let (masked, fallback) = masked_distribution(&vec![1.0 / n as f64; n], &obs.legal);
                Ok((sample_index(&masked, rng), fallback))
            }
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Opponent::SlSnapshot(_) => "sl-snapshot",
            Opponent::RlSnapshot(_) => "rl-snapshot",
            Opponent::Scripted(ScriptKind::Simple) => "scripted-simple",
            Opponent::Scripted(ScriptKind::HitAndRun) => "scripted-hitandrun",
            Opponent::Scripted(ScriptKind::Random) => "scripted-random",
            Opponent::Table(_) => "table",
            Opponent::Uniform => "uniform",
        }
    }
}

impl Opponent<'_> {
    fn eval_act(&self, obs: &Observation, rng: &mut ChaCha20Rng) -> Result<usize, EvalError> {
        match Opponent::act(self, obs, rng) {
            Ok((a, _)) => Ok(a),
            Err(TrainError::Env(e)) => Err(EvalError::Env(e)),
            Err(TrainError::Nn(e)) => Err(EvalError::Nn(e)),
            Err(TrainError::Eval(e)) => Err(e),
            Err(other) => Err(EvalError::BadProfile(other.to_string())),
        }
    }
}

impl MatchPolicy for Opponent<'_> {
    fn act(&mut self, obs: &Observation, rng: &mut ChaCha20Rng) -> Result<usize, EvalError> {
        self.eval_act(obs, rng)
    }
}

impl MatchPolicy for &Opponent<'_> {
    fn act(&mut self, obs: &Observation, rng: &mut ChaCha20Rng) -> Result<usize, EvalError> {
        self.eval_act(obs, rng)
    }
}

/// One persistent concurrent game owned by a process. The lane keeps its
/// own action RNG and draws each episode seed from it, so a process's
/// entire experience stream is a function of (process seed, lane index).
pub struct LaneDriver {
    env: Box<dyn GameEnv + Send>,
    rng: ChaCha20Rng,
    seat: usize,
    fresh: bool,
}

impl LaneDriver {
    pub fn new(
        env_name: &str,
        frame_skip: usize,
        seat: usize,
        seed: u64,
    ) -> Result<Self, TrainError> {
        let env = make_env(env_name, frame_skip)?;
        Ok(LaneDriver { env, rng: ChaCha20Rng::seed_from_u64(seed), seat, fresh: true })
    }

    pub fn seat(&self) -> usize {
        self.seat
    }

    fn reset(&mut self) {
        let seed = self.rng.gen::<u64>();
        self.env.reset(seed);
    }
}

fn lane_bank(
    env_name: &str,
    frame_skip: usize,
    count: usize,
    process_seed: u64,
    seat_of: impl Fn(usize) -> usize,
) -> Result<Vec<LaneDriver>, TrainError> {
    (0..count)
        .map(|l| {
            let seed = mix64(process_seed ^ mix64(0x4c41_4e45 + l as u64));
            LaneDriver::new(env_name, frame_skip, seat_of(l), seed)
        })
        .collect()
}

/// Play opponent-only decision points until the lane's learner seat must
/// act or the episode ends. Returns the learner reward accumulated on the
/// way and whether a terminal was reached.
fn advance_opponents(
    lane: &mut LaneDriver,
    opp: &Opponent,
    fallbacks: &mut u64,
) -> Result<(f64, bool), TrainError> {
    let mut acc = 0.0;
    loop {
        if lane.env.is_terminal() {
            return Ok((acc, true));
        }
        let acting = lane.env.acting_players();
        if acting.contains(&lane.seat) {
            return Ok((acc, false));
        }
        let mut actions = [None, None];
        for &p in &acting {
            let obs = lane.env.observe(p)?;
            let (a, fb) = opp.act(&obs, &mut lane.rng)?;
            if fb {
                *fallbacks += 1;
            }
            actions[p] = Some(a);
        }
        let step = lane.env.step(actions)?;
        acc += step.rewards[lane.seat];
    }
}

/// Reset the lane and park it at the learner's first decision point.
/// Rewards emitted before the learner's first decision of an episode have
/// no record to attach to; every bundled environment emits zero there.
fn park_fresh(lane: &mut LaneDriver, opp: &Opponent, fallbacks: &mut u64) -> Result<(), TrainError> {
    for _ in 0..64 {
        lane.reset();
        let (_, terminal) = advance_opponents(lane, opp, fallbacks)?;
        if !terminal {
            lane.fresh = false;
            return Ok(());
        }
    }
    Err(TrainError::Config("environment keeps terminating before the learner acts".into()))
}

struct RecordOut {
    state: Vec<f64>,
    action: usize,
    pi: Vec<f64>,
    value: f64,
    reward: f64,
    terminal: bool,
    fallback: bool,
    finished: Option<f64>,
}

/// One learner decision plus everything up to the learner's next decision
/// point. On exit the lane is parked at a learner decision point again
/// (in the next episode if this one ended).
fn collect_record(
    lane: &mut LaneDriver,
    rl_net: &Network,
    opp: &Opponent,
    fallbacks: &mut u64,
) -> Result<RecordOut, TrainError> {
    let obs = lane.env.observe(lane.seat)?;
    let choice = rl_actor(rl_net, &obs, &mut lane.rng)?;
    let acting = lane.env.acting_players();
    let mut actions = [None, None];
    for &p in &acting {
        if p == lane.seat {
            actions[p] = Some(choice.action);
        } else {
            let o = lane.env.observe(p)?;
            let (a, fb) = opp.act(&o, &mut lane.rng)?;
            if fb {
                *fallbacks += 1;
            }
            actions[p] = Some(a);
        }
    }
    let step = lane.env.step(actions)?;
    let mut reward = step.rewards[lane.seat];
    let mut terminal = step.terminal;
    if !terminal {
        let (more, term) = advance_opponents(lane, opp, fallbacks)?;
        reward += more;
        terminal = term;
    }
    let finished = if terminal {
        park_fresh(lane, opp, fallbacks)?;
        Some(reward)
    } else {
        None
    };
    Ok(RecordOut {
        state: obs.features,
        action: choice.action,
        pi: choice.pi,
        value: choice.value,
        reward,
        terminal,
        fallback: choice.fallback,
        finished,
    })
}

/// Everything one process produced in one collection window.
pub struct RolloutOut {
    pub batch: TrajectoryBatch,
    /// Learner-seat (state, pi_RL) tuples, in collection order. Empty when
    /// offer collection is off (self-play, exploiter training).
    pub offers: Vec<StoredItem>,
    pub fallbacks: u64,
    pub incidents: u64,
    pub games_finished: u64,
    pub reward_sum: f64,
}

/// Step every lane until it holds `t` learner decisions, recording
/// (S, A, Pi, R) per decision and the value estimates GAE needs, with a
/// bootstrap value at the window edge when an episode is still running.
/// A lane that faults is restarted in place and the incident counted; its
/// previous record is marked terminal so the advantage stream is cut.
pub fn accumulate_rollouts(
    lanes: &mut [LaneDriver],
    rl_net: &Network,
    opp: &Opponent,
    t: usize,
    collect_offers: bool,
) -> Result<RolloutOut, TrainError> {
    if lanes.is_empty() || t == 0 {
        return Err(TrainError::Config("rollouts need at least one lane and one step".into()));
    }
    let mut offers = Vec::new();
    let mut fallbacks = 0u64;
    let mut incidents = 0u64;
    let mut games_finished = 0u64;
    let mut reward_sum = 0.0;
    let mut out_lanes = Vec::with_capacity(lanes.len());
    for (l, lane) in lanes.iter_mut().enumerate() {
        if lane.fresh {
            park_fresh(lane, opp, &mut fallbacks)?;
        }
        let mut rec = Lane {
            states: Vec::with_capacity(t),
            actions: Vec::with_capacity(t),
            pis: Vec::with_capacity(t),
            rewards: Vec::with_capacity(t),
            values: Vec::with_capacity(t + 1),
            terminals: Vec::with_capacity(t),
        };
        while rec.actions.len() < t {
            let mut attempts = 0u32;
            let r = loop {
                match collect_record(lane, rl_net, opp, &mut fallbacks) {
                    Ok(r) => break r,
                    Err(TrainError::Env(e)) if attempts < 3 => {
                        attempts += 1;
                        incidents += 1;
                        if let Some(last) = rec.terminals.last_mut() {
                            *last = true;
                        }
                        lane.fresh = true;
                        park_fresh(lane, opp, &mut fallbacks).map_err(|_| {
                            TrainError::LaneFault { lane: l, attempts, last: e.to_string() }
                        })?;
                    }
                    Err(TrainError::Env(e)) => {
                        return Err(TrainError::LaneFault {
                            lane: l,
                            attempts,
                            last: e.to_string(),
                        })
                    }
                    Err(other) => return Err(other),
                }
            };
            if r.fallback {
                fallbacks += 1;
            }
            if collect_offers {
                offers.push((r.state.clone(), r.pi.clone()));
            }
            if let Some(final_reward) = r.finished {
                games_finished += 1;
                reward_sum += final_reward;
            }
            rec.states.push(r.state);
            rec.actions.push(r.action);
            rec.pis.push(r.pi);
            rec.rewards.push(r.reward);
            rec.values.push(r.value);
            rec.terminals.push(r.terminal);
        }
        let bootstrap = if *rec.terminals.last().unwrap() {
            0.0
        } else {
            let obs = lane.env.observe(lane.seat)?;
            let out = rl_net.forward(std::slice::from_ref(&obs.features), HeadSet::rl())?;
            out.v_rl.unwrap()[0]
        };
        rec.values.push(bootstrap);
        out_lanes.push(rec);
    }
    Ok(RolloutOut {
        batch: TrajectoryBatch { lanes: out_lanes },
        offers,
        fallbacks,
        incidents,
        games_finished,
        reward_sum,
    })
}

fn bits_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.len().cmp(&b.len()).then_with(|| {
        for (x, y) in a.iter().zip(b) {
            match x.to_bits().cmp(&y.to_bits()) {
                Ordering::Equal => {}
                other => return other,
            }
        }
        Ordering::Equal
    })
}

/// Merge per-process offer lists into one canonically ordered stream. The
/// order is a pure function of the offered multiset, so relabeling the
/// producing processes cannot change what the reservoir sees.
pub fn merge_offers(parts: Vec<Vec<StoredItem>>) -> Vec<StoredItem> {
    let mut all: Vec<StoredItem> = parts.into_iter().flatten().collect();
    all.sort_unstable_by(|a, b| bits_cmp(&a.0, &b.0).then_with(|| bits_cmp(&a.1, &b.1)));
    all
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Mode {
    Nfsp,
    Selfplay,
}

/// Configuration for one training run. `process_seeds` drive the two
/// collection processes; everything else that draws randomness is derived
/// from `net_seed`.
#[derive(Clone, Debug)]
pub struct TrainSetup {
    pub env: String,
    pub arch: ArchSpec,
    pub h: Hyperparams,
    /// Symmetric mode trains one shared bundle from both processes;
    /// otherwise each process trains its own bundle against the other's
    /// average strategy.
    pub shared: bool,
    pub net_seed: u64,
    pub process_seeds: [u64; 2],
    pub updates: u64,
    /// Probe cadence in updates; 0 disables probing.
    pub probe_every: u64,
    pub probe_games: u64,
    /// Checkpoint cadence in updates; 0 keeps only the final checkpoint.
    pub checkpoint_every: u64,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

impl TrainSetup {
    pub fn desk(env: &str) -> Self {
        let mut h = Hyperparams::default();
        h.batch_size = 32;
        h.batch_time = 8;
        h.reservoir_capacity = 40_000;
        h.sl_sample = 128;
        let arch = match env {
            "microrts" => ArchSpec::mlp(1400, 64, 1, 9),
            "kuhn" => ArchSpec::mlp(9, 32, 1, 3),
            _ => ArchSpec::mlp(3, 16, 1, 2),
        };
        TrainSetup {
            env: env.to_string(),
            arch,
            h,
            shared: true,
            net_seed: 7,
            process_seeds: [101, 202],
            updates: 100,
            probe_every: 0,
            probe_games: 200,
            checkpoint_every: 0,
            out: None,
            resume: None,
        }
    }
}

pub struct RunOutcome {
    pub bundles: Vec<AgentBundle>,
    pub metrics: Vec<MetricsRow>,
    pub probes: Vec<ProbeRow>,
    /// First update index executed by this invocation (nonzero on resume).
    pub start_update: u64,
}

/// Train with the full NFSP machinery: reservoir offers and average-policy
/// updates alongside the summed RL step.
pub fn run_nfsp(setup: &TrainSetup) -> Result<RunOutcome, TrainError> {
    run_loop(setup, Mode::Nfsp)
}

/// Plain self-play ablation: both seats act from pi_RL and the average-
/// strategy machinery is never touched.
pub fn run_selfplay(setup: &TrainSetup) -> Result<RunOutcome, TrainError> {
    run_loop(setup, Mode::Selfplay)
}

fn deployed_head(mode: Mode) -> PolicyHead {
    match mode {
        Mode::Nfsp => PolicyHead::Sl,
        Mode::Selfplay => PolicyHead::Rl,
    }
}

fn run_probe(
    setup: &TrainSetup,
    net: &Network,
    mode: Mode,
    update: u64,
    games: u64,
) -> Result<ProbeRow, TrainError> {
    let head = deployed_head(mode);
    let mut row = ProbeRow {
        update,
        games,
        nashconv: None,
        win_vs_simple: None,
        win_vs_random: None,
    };
    match enumerate_game(&setup.env) {
        Ok(game) => {
            let profile = NetworkProfile { net, head };
            row.nashconv = Some(exploitability(&game, &profile)?);
        }
        Err(_) => {
            let profile = NetworkProfile { net, head };
            let seed = mix64(setup.net_seed ^ mix64(0x70726f_u64 + update));
            for (kind, slot) in [(ScriptKind::Simple, 0), (ScriptKind::Random, 1)] {
                let mut agent = SampledProfile { profile: &profile };
                let mut opp = ScriptedSeat(kind);
                let report = evaluate_winrate(
                    &mut agent,
                    &mut opp,
                    &setup.env,
                    setup.h.frame_skip,
                    setup.probe_games,
                    mix64(seed ^ mix64(slot)),
                    "probe",
                )?;
                match kind {
                    ScriptKind::Simple => row.win_vs_simple = Some(report.rate),
                    _ => row.win_vs_random = Some(report.rate),
                }
            }
        }
    }
    Ok(row)
}

fn run_loop(setup: &TrainSetup, mode: Mode) -> Result<RunOutcome, TrainError> {
    let h = &setup.h;
    h.validate()?;
    if setup.updates == 0 {
        return Err(TrainError::Config("a run needs at least one update".into()));
    }
    let bundle_count = if setup.shared { 1 } else { 2 };
    let (mut bundles, start_update) = match &setup.resume {
        Some(dir) => load_checkpoint(dir, h)?,
        None => {
            let mut v = Vec::new();
            for b in 0..bundle_count {
                v.push(AgentBundle::new(&setup.arch, h, mix64(setup.net_seed ^ mix64(b as u64)))?);
            }
            (v, 0)
        }
    };
    if bundles.len() != bundle_count {
        return Err(TrainError::Config(format!(
            "checkpoint holds {} bundles but the setup wants {bundle_count}",
            bundles.len()
        )));
    }

    let mut lane_banks: Vec<Vec<LaneDriver>> = Vec::new();
    for p in 0..2 {
        let shared = setup.shared;
        let seed = mix64(setup.process_seeds[p] ^ mix64(start_update));
        lane_banks.push(lane_bank(
            &setup.env,
            h.frame_skip,
            h.batch_size,
            seed,
            move |l| if shared { l % 2 } else { p },
        )?);
    }

    let mut metrics_csv = None;
    let mut probes_csv = None;
    if let Some(root) = &setup.out {
        let dir = RunDir::create(root)?;
        metrics_csv = Some(CsvFile::append(&dir.metrics_path(), METRICS_HEADER)?);
        probes_csv = Some(CsvFile::append(&dir.probes_path(), PROBES_HEADER)?);
    }

    let mut metrics = Vec::new();
    let mut probes = Vec::new();
    let end = start_update + setup.updates;
    for update in start_update..end {
        let snapshots: Vec<Network> = bundles.iter().map(|b| b.net.clone()).collect();
        let mut outs = Vec::with_capacity(2);
        for p in 0..2 {
            let own = if setup.shared { 0 } else { p };
            let other = if setup.shared { 0 } else { 1 - p };
            let opp = match mode {
                Mode::Nfsp => Opponent::SlSnapshot(&snapshots[other]),
                Mode::Selfplay => Opponent::RlSnapshot(&snapshots[other]),
            };
            outs.push(accumulate_rollouts(
                &mut lane_banks[p],
                &snapshots[own],
                &opp,
                h.batch_time,
                mode == Mode::Nfsp,
            )?);
        }

        let mut rl_metrics: Vec<UpdateMetrics> = Vec::with_capacity(2);
        let mut clipped = Vec::with_capacity(2);
        for (p, out) in outs.iter().enumerate() {
            let own = if setup.shared { 0 } else { p };
            let prep = prepare_batch(&out.batch, h)?;
            let (g, mut m) = ppo_gradient(&bundles[own].net, &prep, h)?;
            let gc = clip_global_norm(&g, h.max_grad_norm)?;
            m.grad_norm = gc.norm();
            rl_metrics.push(m);
            clipped.push(gc);
        }
        if setup.shared {
            let total = clipped[0].add(&clipped[1])?;
            sgd_step(&mut bundles[0].net, &total, h.rl_lr)?;
            bundles[0].rl_updates += 1;
        } else {
            for (p, gc) in clipped.iter().enumerate() {
                sgd_step(&mut bundles[p].net, gc, h.rl_lr)?;
                bundles[p].rl_updates += 1;
            }
        }

        let mut sl_metrics = vec![None, None];
        if mode == Mode::Nfsp {
            if setup.shared {
                let parts = outs.iter_mut().map(|o| std::mem::take(&mut o.offers)).collect();
                for item in merge_offers(parts) {
                    reservoir_insert(&mut bundles[0].buffer, item.0, item.1)?;
                }
            } else {
                for (p, out) in outs.iter_mut().enumerate() {
                    let parts = vec![std::mem::take(&mut out.offers)];
                    for item in merge_offers(parts) {
                        reservoir_insert(&mut bundles[p].buffer, item.0, item.1)?;
                    }
                }
            }
            for p in 0..2 {
                let own = if setup.shared { 0 } else { p };
                let b = &mut bundles[own];
                let m = sl_update(&mut b.net, &mut b.buffer, h)?;
                if m.l_sl.is_some() {
                    b.sl_updates += 1;
                }
                sl_metrics[p] = m.l_sl;
            }
        }

        for p in 0..2 {
            let own = if setup.shared { 0 } else { p };
            bundles[own].games_played += outs[p].games_finished;
        }
        for p in 0..2 {
            let own = if setup.shared { 0 } else { p };
            let out = &outs[p];
            let m = &rl_metrics[p];
            let row = MetricsRow {
                update,
                process: p,
                games: bundles[own].games_played,
                l_policy: m.l_policy,
                l_entropy: m.l_entropy,
                l_value: m.l_value,
                grad_norm: m.grad_norm,
                mean_abs_adv: m.mean_abs_adv,
                mean_ratio: m.mean_ratio,
                l_sl: sl_metrics[p],
                fallbacks: out.fallbacks,
                incidents: out.incidents,
                mean_reward: out.reward_sum / (out.games_finished.max(1) as f64),
            };
            if let Some(csv) = metrics_csv.as_mut() {
                csv.push_metrics(&row)?;
            }
            metrics.push(row);
        }

        let last = update + 1 == end;
        if setup.probe_every > 0 && ((update + 1) % setup.probe_every == 0 || last) {
            let row = run_probe(setup, &bundles[0].net, mode, update, bundles[0].games_played)?;
            if let Some(csv) = probes_csv.as_mut() {
                csv.push_probe(&row)?;
            }
            probes.push(row);
        }
        if let Some(root) = &setup.out {
            let due = setup.checkpoint_every > 0 && (update + 1) % setup.checkpoint_every == 0;
            if due || last {
                let dir = RunDir::create(root)?;
                save_checkpoint(&dir.checkpoint_dir(update + 1), &bundles, update + 1)?;
            }
        }
    }

    Ok(RunOutcome { bundles, metrics, probes, start_update })
}

/// How pretraining parameters seed a transfer run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferMode {
    /// RL tower is copied and the average-strategy tower is initialized
    /// from the same parameters, so pi_SL starts equal to pi_RL.
    BothHeads,
    /// RL tower is copied; the average-strategy tower keeps its fresh
    /// initialization.
    RlOnly,
}

/// Build a fresh bundle seeded with a pretrained network. The reservoir
/// always starts empty: the average strategy must be re-estimated from
/// post-transfer behaviour.
pub fn pretrain_transfer(
    source: &AgentBundle,
    mode: TransferMode,
    seed: u64,
) -> Result<AgentBundle, TrainError> {
    let mut target = AgentBundle::new(source.net.arch(), &source.h, seed)?;
    let lay = source.net.layout.clone();
    let src = source.net.params().to_vec();
    let dst = target.net.params_mut();
    dst[lay.rl_tower.clone()].copy_from_slice(&src[lay.rl_tower.clone()]);
    if mode == TransferMode::BothHeads {
        let rl_body = lay.rl_tower.start..lay.pi_rl.w.start;
        let sl_body = lay.sl_tower.start..lay.pi_sl.w.start;
        debug_assert_eq!(rl_body.len(), sl_body.len());
        dst.copy_within(rl_body, sl_body.start);
        let rl_head = lay.pi_rl.w.start..lay.pi_rl.b.end;
        debug_assert_eq!(rl_head.len(), (lay.pi_sl.w.start..lay.pi_sl.b.end).len());
        dst.copy_within(rl_head, lay.pi_sl.w.start);
    }
    Ok(target)
}

/// Exploiter training setup: a single PPO learner against one frozen
/// opponent, alternating seats across lanes.
#[derive(Clone, Debug)]
pub struct ExploitSetup {
    pub env: String,
    pub arch: ArchSpec,
    pub h: Hyperparams,
    pub seed: u64,
    pub updates: u64,
}

/// Train a best-response approximation against a fixed policy and return
/// the learner bundle with its metrics stream.
pub fn run_exploiter(
    setup: &ExploitSetup,
    opponent: &Opponent,
) -> Result<(AgentBundle, Vec<MetricsRow>), TrainError> {
    let h = &setup.h;
    h.validate()?;
    if setup.updates == 0 {
        return Err(TrainError::Config("a run needs at least one update".into()));
    }
    let mut bundle = AgentBundle::new(&setup.arch, h, mix64(setup.seed ^ mix64(0xe9)))?;
    let mut lanes = lane_bank(
        &setup.env,
        h.frame_skip,
        h.batch_size,
        mix64(setup.seed ^ mix64(0xa1)),
        |l| l % 2,
    )?;
    let mut metrics = Vec::new();
    for update in 0..setup.updates {
        let snapshot = bundle.net.clone();
        let out = accumulate_rollouts(&mut lanes, &snapshot, opponent, h.batch_time, false)?;
        let m = ppo_update(&mut bundle.net, &out.batch, h)?;
        bundle.rl_updates += 1;
        bundle.games_played += out.games_finished;
        metrics.push(MetricsRow {
            update,
            process: 0,
            games: bundle.games_played,
            l_policy: m.l_policy,
            l_entropy: m.l_entropy,
            l_value: m.l_value,
            grad_norm: m.grad_norm,
            mean_abs_adv: m.mean_abs_adv,
            mean_ratio: m.mean_ratio,
            l_sl: None,
            fallbacks: out.fallbacks,
            incidents: out.incidents,
            mean_reward: out.reward_sum / (out.games_finished.max(1) as f64),
        });
    }
    Ok((bundle, metrics))
}

/// Filesystem layout of one run directory.
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self, TrainError> {
        fs::create_dir_all(root)?;
        Ok(RunDir { root: root.to_path_buf() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config_path(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn probes_path(&self) -> PathBuf {
        self.root.join("probes.csv")
    }

    pub fn report_path(&self) -> PathBuf {
        self.root.join("report.json")
    }

    pub fn checkpoint_dir(&self, update: u64) -> PathBuf {
        self.root.join(format!("ckpt_{update:08}"))
    }

    /// Most recent checkpoint directory under this run, by update number.
    pub fn latest_checkpoint(&self) -> Option<PathBuf> {
        let mut best: Option<(u64, PathBuf)> = None;
        let entries = fs::read_dir(&self.root).ok()?;
        for entry in entries.flatten() {
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if let Some(num) = name.strip_prefix("ckpt_") {
                if let Ok(update) = num.parse::<u64>() {
                    if best.as_ref().map_or(true, |(u, _)| update > *u) {
                        best = Some((update, entry.path()));
                    }
                }
            }
        }
        best.map(|(_, p)| p)
    }
}

#[derive(Serialize, Deserialize)]
struct BundleCounters {
    rl_updates: u64,
    sl_updates: u64,
    games_played: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointState {
    update: u64,
    bundles: Vec<BundleCounters>,
}

pub fn save_checkpoint(
    dir: &Path,
    bundles: &[AgentBundle],
    update: u64,
) -> Result<(), TrainError> {
    fs::create_dir_all(dir)?;
    let mut counters = Vec::new();
    for (i, b) in bundles.iter().enumerate() {
        save_network(&b.net, &dir.join(format!("net_{i}.bin")))?;
        save_buffer(&b.buffer, &dir.join(format!("buffer_{i}.bin")))?;
        counters.push(BundleCounters {
            rl_updates: b.rl_updates,
            sl_updates: b.sl_updates,
            games_played: b.games_played,
        });
    }
    let state = CheckpointState { update, bundles: counters };
    fs::write(dir.join("state.json"), serde_json::to_string_pretty(&state)?)?;
    Ok(())
}

/// Load a checkpoint directory, or the latest checkpoint when handed a run
/// directory root.
pub fn load_checkpoint(
    dir: &Path,
    h: &Hyperparams,
) -> Result<(Vec<AgentBundle>, u64), TrainError> {
    let dir = if dir.join("state.json").exists() {
        dir.to_path_buf()
    } else {
        RunDir::create(dir)?
            .latest_checkpoint()
            .ok_or_else(|| TrainError::NoCheckpoint(dir.display().to_string()))?
    };
    let text = fs::read_to_string(dir.join("state.json"))
        .map_err(|_| TrainError::NoCheckpoint(dir.display().to_string()))?;
    let state: CheckpointState = serde_json::from_str(&text)?;
    let mut bundles = Vec::new();
    for (i, c) in state.bundles.iter().enumerate() {
        let net = load_network(&dir.join(format!("net_{i}.bin")))?;
        let buffer = load_buffer(&dir.join(format!("buffer_{i}.bin")))?;
        bundles.push(AgentBundle {
            net,
            buffer,
            h: h.clone(),
            rl_updates: c.rl_updates,
            sl_updates: c.sl_updates,
            games_played: c.games_played,
        });
    }
    Ok((bundles, state.update))
}
