//! Two-player zero-sum imperfect-information environments behind one trait:
//! Kuhn poker, one-shot matrix games (biased matching pennies, matching
//! pennies, rock-paper-scissors), and MicroRTS-lite, plus scripted MicroRTS
//! opponents and a replay log.

pub mod kuhn;
pub mod matrix;
pub mod microrts;
pub mod replay;
pub mod scripted;

pub use kuhn::KuhnEnv;
pub use matrix::MatrixEnv;
pub use microrts::{encode_observation, MicroRtsEnv, MicroRtsState};
pub use scripted::{scripted_policy, ScriptKind};

use crate::nn::InputShape;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("player {player} action {action} is illegal here")]
    IllegalAction { player: usize, action: usize },
    #[error("step called on a terminal episode")]
    StepAfterTerminal,
    #[error("unknown player id {0}")]
    UnknownPlayer(usize),
    #[error("player {player} must act this step but no action was given")]
    MissingAction { player: usize },
    #[error("player {player} is not to act this step")]
    UnexpectedAction { player: usize },
    #[error("unknown environment '{0}' (expected kuhn, pennies, matching-pennies, rps, or microrts)")]
    UnknownEnv(String),
    #[error("scripted policies play MicroRTS-lite only, observation came from '{0}'")]
    NotMicroRts(String),
    #[error("replay: {0}")]
    Replay(String),
    #[error("replay io: {0}")]
    Io(#[from] std::io::Error),
    #[error("replay json: {0}")]
    Json(#[from] serde_json::Error),
}

/// What one player sees. `features` is the flattened encoding of the
/// player's information set and nothing else: two true states the player
/// cannot distinguish encode identically.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub env_id: &'static str,
    pub player: usize,
    pub tick: u64,
    pub features: Vec<f64>,
    pub legal: Vec<bool>,
}

impl Observation {
    pub fn legal_count(&self) -> usize {
        self.legal.iter().filter(|&&l| l).count()
    }
}

/// Result of one decision step.
#[derive(Clone, Debug)]
pub struct Step {
    pub observations: Vec<Observation>,
    pub rewards: [f64; 2],
    pub terminal: bool,
}

/// A two-player zero-sum episodic game. All randomness is drawn at
/// `reset(seed)`; from there (seed, action sequence) fully determines the
/// episode.
pub trait GameEnv {
    fn id(&self) -> &'static str;
    fn num_actions(&self) -> usize;
    fn obs_shape(&self) -> InputShape;
    /// Start a fresh episode and return both players' observations.
    fn reset(&mut self, seed: u64) -> Vec<Observation>;
    fn is_terminal(&self) -> bool;
    fn tick(&self) -> u64;
    /// Players that must submit an action on the next `step`.
    fn acting_players(&self) -> Vec<usize>;
    fn legal_actions(&self, player: usize) -> Result<Vec<bool>, EnvError>;
    fn observe(&self, player: usize) -> Result<Observation, EnvError>;
    /// Advance one decision. Exactly the acting players' slots must be
    /// `Some`; for MicroRTS-lite one decision spans `frame_skip` engine
    /// ticks.
    fn step(&mut self, actions: [Option<usize>; 2]) -> Result<Step, EnvError>;
}

/// Construct an environment by name. `frame_skip` applies to MicroRTS-lite
/// only.
pub fn make_env(name: &str, frame_skip: usize) -> Result<Box<dyn GameEnv + Send>, EnvError> {
    match name {
        "kuhn" => Ok(Box::new(KuhnEnv::new())),
        "pennies" => Ok(Box::new(MatrixEnv::biased_pennies())),
        "matching-pennies" => Ok(Box::new(MatrixEnv::matching_pennies())),
        "rps" => Ok(Box::new(MatrixEnv::rps())),
        "microrts" => Ok(Box::new(MicroRtsEnv::new(frame_skip))),
        other => Err(EnvError::UnknownEnv(other.to_string())),
    }
}

pub(crate) fn check_player(player: usize) -> Result<(), EnvError> {
    if player < 2 {
        Ok(())
    } else {
        Err(EnvError::UnknownPlayer(player))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn factory_builds_each_env() {
        for name in ["kuhn", "pennies", "matching-pennies", "rps", "microrts"] {
            let env = make_env(name, 50).unwrap();
            assert_eq!(env.id(), name);
        }
        assert!(matches!(make_env("poker", 50), Err(EnvError::UnknownEnv(_))));
    }

    fn random_playout(env: &mut dyn GameEnv, seed: u64) -> [f64; 2] {
        let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        env.reset(seed);
        let mut totals = [0.0, 0.0];
        let mut guard = 0;
        while !env.is_terminal() {
            let mut actions = [None, None];
            for p in env.acting_players() {
                let legal = env.legal_actions(p).unwrap();
                let choices: Vec<usize> =
                    (0..legal.len()).filter(|&a| legal[a]).collect();
                actions[p] = Some(choices[rng.gen_range(0..choices.len())]);
            }
            let step = env.step(actions).unwrap();
            totals[0] += step.rewards[0];
            totals[1] += step.rewards[1];
            guard += 1;
            assert!(guard < 10_000, "episode did not terminate");
        }
        totals
    }

    #[test]
    fn zero_sum_across_random_play() {
        for name in ["kuhn", "pennies", "rps", "microrts"] {
            let episodes = if name == "microrts" { 20 } else { 300 };
            for ep in 0..episodes {
                let mut env = make_env(name, 50).unwrap();
                let totals = random_playout(env.as_mut(), ep as u64);
                assert!(
                    (totals[0] + totals[1]).abs() < 1e-12,
                    "{name} episode {ep}: {totals:?}"
                );
            }
        }
    }

    #[test]
    fn seed_and_actions_determine_episode() {
        for name in ["kuhn", "pennies", "microrts"] {
            let mut a = make_env(name, 50).unwrap();
            let mut b = make_env(name, 50).unwrap();
            let oa = a.reset(77);
            let ob = b.reset(77);
            assert_eq!(oa, ob, "{name} reset mismatch");
            let mut rng = ChaCha20Rng::seed_from_u64(5);
            let mut guard = 0;
            while !a.is_terminal() {
                let mut actions = [None, None];
                for p in a.acting_players() {
                    let legal = a.legal_actions(p).unwrap();
                    let choices: Vec<usize> =
                        (0..legal.len()).filter(|&x| legal[x]).collect();
                    actions[p] = Some(choices[rng.gen_range(0..choices.len())]);
                }
                let sa = a.step(actions).unwrap();
                let sb = b.step(actions).unwrap();
                assert_eq!(sa.observations, sb.observations);
                assert_eq!(sa.rewards, sb.rewards);
                assert_eq!(sa.terminal, sb.terminal);
                guard += 1;
                assert!(guard < 10_000);
            }
            assert!(b.is_terminal());
        }
    }

    #[test]
    fn step_after_terminal_errors() {
        let mut env = make_env("pennies", 1).unwrap();
        env.reset(0);
        env.step([Some(0), Some(0)]).unwrap();
        assert!(matches!(
            env.step([Some(0), Some(0)]),
            Err(EnvError::StepAfterTerminal)
        ));
    }
}
