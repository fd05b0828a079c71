//! Evaluation: strategy profiles, exact best response and NashConv on
//! enumerable games, and seeded Monte Carlo win-rate estimation with
//! Wilson confidence intervals.

pub mod best_response;

pub use best_response::{
    enumerate_game, exact_best_response, expected_values, exploitability, infoset_key,
    EnumGame, TreeNode,
};

use crate::envs::{make_env, scripted_policy, EnvError, Observation, ScriptKind};
use crate::nn::{Network, NnError, PolicyHead};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("'{0}' has too many states to enumerate; use train_exploiter for an empirical lower bound")]
    Unenumerable(String),
    #[error("profile has no distribution for an information set of player {player}")]
    MissingInfoset { player: usize },
    #[error("bad profile: {0}")]
    BadProfile(String),
    #[error("evaluation needs at least one game")]
    NoGames,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// A per-player mapping from observations (information sets) to action
/// distributions over the full action id range.
pub trait StrategyProfile {
    fn policy(&self, obs: &Observation) -> Result<Vec<f64>, EvalError>;
}

/// Restrict `dist` to the legal actions and renormalize. A masked
/// distribution with no mass left falls back to uniform over legal
/// actions; the flag reports that fallback.
pub fn masked_distribution(dist: &[f64], legal: &[bool]) -> (Vec<f64>, bool) {
    let mut out: Vec<f64> = dist
        .iter()
        .zip(legal)
        .map(|(&p, &l)| if l { p } else { 0.0 })
        .collect();
    let sum: f64 = out.iter().sum();
    if sum > 0.0 && sum.is_finite() {
        out.iter_mut().for_each(|p| *p /= sum);
        (out, false)
    } else {
        let n = legal.iter().filter(|&&l| l).count().max(1);
        for (p, &l) in out.iter_mut().zip(legal) {
            *p = if l { 1.0 / n as f64 } else { 0.0 };
        }
        (out, true)
    }
}

/// Uniform over whatever is legal.
pub struct UniformProfile;

impl StrategyProfile for UniformProfile {
    fn policy(&self, obs: &Observation) -> Result<Vec<f64>, EvalError> {
        let n = obs.legal.iter().filter(|&&l| l).count().max(1);
        Ok(obs
            .legal
            .iter()
            .map(|&l| if l { 1.0 / n as f64 } else { 0.0 })
            .collect())
    }
}

/// Explicit table over information sets; the realization of small-game
/// strategies and best responses.
#[derive(Clone, Debug, Default)]
pub struct TableProfile {
    map: HashMap<Vec<u64>, Vec<f64>>,
}

impl TableProfile {
    pub fn new() -> Self {
        TableProfile::default()
    }

    pub fn set(&mut self, obs: &Observation, dist: Vec<f64>) {
        self.map.insert(infoset_key(obs), dist);
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl StrategyProfile for TableProfile {
    fn policy(&self, obs: &Observation) -> Result<Vec<f64>, EvalError> {
        self.map
            .get(&infoset_key(obs))
            .cloned()
            .ok_or(EvalError::MissingInfoset { player: obs.player })
    }
}

/// A network head read as a strategy: the raw head distribution masked to
/// legal actions and renormalized.
pub struct NetworkProfile<'a> {
    pub net: &'a Network,
    pub head: PolicyHead,
}

impl<'a> NetworkProfile<'a> {
    pub fn new(net: &'a Network, head: PolicyHead) -> Self {
        NetworkProfile { net, head }
    }
}

impl StrategyProfile for NetworkProfile<'_> {
    fn policy(&self, obs: &Observation) -> Result<Vec<f64>, EvalError> {
        let raw = self.net.policy_row(self.head, &obs.features)?;
        let (masked, _) = masked_distribution(&raw, &obs.legal);
        Ok(masked)
    }
}

/// Dispatch to a different profile per seat, which turns two one-seat
/// policies into a single profile an enumerated tree can value.
pub struct SeatProfiles<'a> {
    pub seats: [&'a dyn StrategyProfile; 2],
}

impl StrategyProfile for SeatProfiles<'_> {
    fn policy(&self, obs: &Observation) -> Result<Vec<f64>, EvalError> {
        self.seats
            .get(obs.player)
            .ok_or(EvalError::BadProfile(format!("no seat {}", obs.player)))?
            .policy(obs)
    }
}

/// An acting policy for match play; the RNG is owned by the evaluation
/// seat, not the policy, so evaluations stay seed-exact under side swaps.
pub trait MatchPolicy {
    fn act(&mut self, obs: &Observation, rng: &mut ChaCha20Rng) -> Result<usize, EvalError>;
}

/// Sample actions from any strategy profile.
pub struct SampledProfile<'a> {
    pub profile: &'a dyn StrategyProfile,
}

impl MatchPolicy for SampledProfile<'_> {
    fn act(&mut self, obs: &Observation, rng: &mut ChaCha20Rng) -> Result<usize, EvalError> {
        let dist = self.profile.policy(obs)?;
        let (masked, _) = masked_distribution(&dist, &obs.legal);
        Ok(sample_index(&masked, rng))
    }
}

/// A scripted MicroRTS-lite opponent in a match seat.
pub struct ScriptedSeat(pub ScriptKind);

impl MatchPolicy for ScriptedSeat {
    fn act(&mut self, obs: &Observation, rng: &mut ChaCha20Rng) -> Result<usize, EvalError> {
        Ok(scripted_policy(self.0, obs, rng)?)
    }
}

pub fn sample_index(dist: &[f64], rng: &mut ChaCha20Rng) -> usize {
    let draw: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > 0.0 {
            last = i;
            acc += p;
            if draw < acc {
                return i;
            }
        }
    }
    last
}

/// Win-rate evaluation result; draws count half a win so that swapping
/// the two seats maps the rate r to exactly 1 - r.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct EvalReport {
    pub opponent: String,
    pub games: u64,
    pub wins: u64,
    pub losses: u64,
    pub draws: u64,
    pub rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub seed: u64,
    pub excluded: u64,
}

impl EvalReport {
    /// Headline numbers need at least 1000 games.
    pub fn headline(&self) -> bool {
        self.games >= 1000
    }
}

/// Wilson 95% score interval for a proportion.
pub fn wilson_ci(successes: f64, n: f64) -> (f64, f64) {
    if n <= 0.0 {
        return (0.0, 1.0);
    }
    let z = 1.959963984540054_f64;
    let p = successes / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

pub(crate) fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seeded Monte Carlo evaluation of `agent` against `opponent` over
/// `games` episodes, alternating seats every game. Paired games share the
/// episode seed and per-seat RNG streams, so exchanging the two policies
/// replays identical episodes with the seats swapped. A fault inside an
/// episode excludes that game and is counted in the report.
pub fn evaluate_winrate(
    agent: &mut dyn MatchPolicy,
    opponent: &mut dyn MatchPolicy,
    env_name: &str,
    frame_skip: usize,
    games: u64,
    seed: u64,
    opponent_label: &str,
) -> Result<EvalReport, EvalError> {
    if games == 0 {
        return Err(EvalError::NoGames);
    }
    let mut wins = 0u64;
    let mut losses = 0u64;
    let mut draws = 0u64;
    let mut excluded = 0u64;
    let mut env = make_env(env_name, frame_skip)?;
    for g in 0..games {
        let episode = g / 2;
        let agent_seat = (g % 2) as usize;
        let env_seed = mix64(seed ^ mix64(episode.wrapping_mul(3).wrapping_add(2)));
        let mut seat_rngs = [
            ChaCha20Rng::seed_from_u64(mix64(seed ^ mix64(episode.wrapping_mul(3)))),
            ChaCha20Rng::seed_from_u64(mix64(seed ^ mix64(episode.wrapping_mul(3).wrapping_add(1)))),
        ];
        env.reset(env_seed);
        let outcome = loop {
            if env.is_terminal() {
                break Ok([0.0, 0.0]);
            }
            let mut actions = [None, None];
            let mut fault = None;
            for p in env.acting_players() {
                let obs = match env.observe(p) {
                    Ok(o) => o,
                    Err(e) => {
                        fault = Some(EvalError::Env(e));
                        break;
                    }
                };
                let result = if p == agent_seat {
                    agent.act(&obs, &mut seat_rngs[p])
                } else {
                    opponent.act(&obs, &mut seat_rngs[p])
                };
                match result {
                    Ok(a) => actions[p] = Some(a),
                    Err(e) => {
                        fault = Some(e);
                        break;
                    }
                }
            }
            if let Some(e) = fault {
                break Err(e);
            }
            match env.step(actions) {
                Ok(step) if step.terminal => break Ok(step.rewards),
                Ok(_) => {}
                Err(e) => break Err(EvalError::Env(e)),
            }
        };
        match outcome {
            Ok(rewards) => {
                let r = rewards[agent_seat];
                if r > 0.0 {
                    wins += 1;
                } else if r < 0.0 {
                    losses += 1;
                } else {
                    draws += 1;
                }
            }
            Err(_) => excluded += 1,
        }
    }
    let counted = wins + losses + draws;
    let successes = wins as f64 + 0.5 * draws as f64;
    let rate = if counted > 0 { successes / counted as f64 } else { 0.0 };
    let (ci_low, ci_high) = wilson_ci(successes, counted as f64);
    Ok(EvalReport {
        opponent: opponent_label.to_string(),
        games: counted,
        wins,
        losses,
        draws,
        rate,
        ci_low,
        ci_high,
        seed,
        excluded,
    })
}

/// Outcome of an empirical exploitation run: the trained response agent,
/// its training metrics, and the final seeded match report.
pub struct ExploiterRun {
    pub report: EvalReport,
    pub bundle: crate::train::AgentBundle,
    pub metrics: Vec<crate::metrics::MetricsRow>,
}

/// Empirical exploitability: train a fresh agent against a frozen target
/// and measure the win rate it reaches. The rate only ever underestimates
/// what the exact best response achieves, so it works as a lower-bound
/// probe on games too large for `exploitability`.
pub fn train_exploiter(
    setup: &crate::train::ExploitSetup,
    target: &crate::train::Opponent,
    eval_games: u64,
    eval_seed: u64,
) -> Result<ExploiterRun, crate::train::TrainError> {
    let (bundle, metrics) = crate::train::run_exploiter(setup, target)?;
    let profile = NetworkProfile::new(&bundle.net, PolicyHead::Rl);
    let mut agent = SampledProfile { profile: &profile };
    let mut seat = target;
    let report = evaluate_winrate(
        &mut agent,
        &mut seat,
        &setup.env,
        setup.h.frame_skip,
        eval_games,
        eval_seed,
        target.label(),
    )?;
    Ok(ExploiterRun { report, bundle, metrics })
}
