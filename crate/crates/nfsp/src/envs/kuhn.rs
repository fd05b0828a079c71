//! Kuhn poker: three cards, one ante each, one bet of one chip. The
//! classic smallest poker with a known mixed equilibrium, used here as an
//! oracle-checkable imperfect-information game.

use super::{check_player, EnvError, GameEnv, Observation, Step};
use crate::nn::InputShape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const FOLD: usize = 0;
pub const CHECK_CALL: usize = 1;
pub const BET: usize = 2;
pub const NUM_ACTIONS: usize = 3;
pub const OBS_LEN: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Move {
    Check,
    Bet,
    Call,
    Fold,
}

/// The six equally likely deals (player 0 card, player 1 card); cards are
/// 0 = Jack, 1 = Queen, 2 = King.
pub fn deals() -> [(usize, usize); 6] {
    [(0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1)]
}

#[derive(Clone, Debug)]
pub struct KuhnEnv {
    cards: [usize; 2],
    history: Vec<Move>,
    started: bool,
}

impl KuhnEnv {
    pub fn new() -> Self {
        KuhnEnv { cards: [0, 1], history: Vec::new(), started: false }
    }

    /// Fixed-deal constructor for exhaustive tree enumeration.
    pub fn with_deal(c0: usize, c1: usize) -> Self {
        assert!(c0 < 3 && c1 < 3 && c0 != c1);
        KuhnEnv { cards: [c0, c1], history: Vec::new(), started: true }
    }

    pub fn history(&self) -> &[Move] {
        &self.history
    }

    pub fn cards(&self) -> [usize; 2] {
        self.cards
    }

    fn facing_bet(&self) -> bool {
        matches!(self.history.last(), Some(Move::Bet))
    }

    fn to_act(&self) -> usize {
        self.history.len() % 2
    }

    fn terminal_rewards(&self) -> Option<[f64; 2]> {
        use Move::*;
        let showdown = |stake: f64| {
            if self.cards[0] > self.cards[1] {
                [stake, -stake]
            } else {
                [-stake, stake]
            }
        };
        match self.history.as_slice() {
            [Check, Check] => Some(showdown(1.0)),
            [Bet, Call] => Some(showdown(2.0)),
            [Bet, Fold] => Some([1.0, -1.0]),
            [Check, Bet, Call] => Some(showdown(2.0)),
            [Check, Bet, Fold] => Some([-1.0, 1.0]),
            _ => None,
        }
    }

    fn mask(&self) -> Vec<bool> {
        if self.is_terminal() {
            vec![false; NUM_ACTIONS]
        } else if self.facing_bet() {
            vec![true, true, false]
        } else {
            vec![false, true, true]
        }
    }

    fn obs(&self, player: usize) -> Observation {
        let mut features = vec![0.0; OBS_LEN];
        features[self.cards[player]] = 1.0;
        features[3 + player] = 1.0;
        use Move::*;
        let context = match self.history.as_slice() {
            [] => Some(5),
            [Check] => Some(6),
            [Bet] => Some(7),
            [Check, Bet] => Some(8),
            _ => None,
        };
        if let Some(c) = context {
            features[c] = 1.0;
        }
        let legal = if player == self.to_act() && !self.is_terminal() {
            self.mask()
        } else {
            vec![false; NUM_ACTIONS]
        };
        Observation {
            env_id: "kuhn",
            player,
            tick: self.history.len() as u64,
            features,
            legal,
        }
    }
}

impl Default for KuhnEnv {
    fn default() -> Self {
        KuhnEnv::new()
    }
}

impl GameEnv for KuhnEnv {
    fn id(&self) -> &'static str {
        "kuhn"
    }

    fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    fn obs_shape(&self) -> InputShape {
        InputShape::Flat(OBS_LEN)
    }

    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        self.cards = {
            let d = deals()[rng.gen_range(0..6)];
            [d.0, d.1]
        };
        self.history.clear();
        self.started = true;
        vec![self.obs(0), self.obs(1)]
    }

    fn is_terminal(&self) -> bool {
        !self.started || self.terminal_rewards().is_some()
    }

    fn tick(&self) -> u64 {
        self.history.len() as u64
    }

    fn acting_players(&self) -> Vec<usize> {
        if self.is_terminal() {
            vec![]
        } else {
            vec![self.to_act()]
        }
    }

    fn legal_actions(&self, player: usize) -> Result<Vec<bool>, EnvError> {
        check_player(player)?;
        if player == self.to_act() && !self.is_terminal() {
            Ok(self.mask())
        } else {
            Ok(vec![false; NUM_ACTIONS])
        }
    }

    fn observe(&self, player: usize) -> Result<Observation, EnvError> {
        check_player(player)?;
        Ok(self.obs(player))
    }

    fn step(&mut self, actions: [Option<usize>; 2]) -> Result<Step, EnvError> {
        if self.is_terminal() {
            return Err(EnvError::StepAfterTerminal);
        }
        let actor = self.to_act();
        let action = actions[actor].ok_or(EnvError::MissingAction { player: actor })?;
        if actions[1 - actor].is_some() {
            return Err(EnvError::UnexpectedAction { player: 1 - actor });
        }
        if action >= NUM_ACTIONS || !self.mask()[action] {
            return Err(EnvError::IllegalAction { player: actor, action });
        }
        let mv = match (action, self.facing_bet()) {
            (CHECK_CALL, false) => Move::Check,
            (CHECK_CALL, true) => Move::Call,
            (BET, false) => Move::Bet,
            (FOLD, true) => Move::Fold,
            _ => unreachable!("masked above"),
        };
        self.history.push(mv);
        let rewards = self.terminal_rewards();
        Ok(Step {
            observations: vec![self.obs(0), self.obs(1)],
            rewards: rewards.unwrap_or([0.0, 0.0]),
            terminal: rewards.is_some(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn play(env: &mut KuhnEnv, actions: &[usize]) -> Step {
        let mut last = None;
        for &a in actions {
            let actor = env.to_act();
            let mut slot = [None, None];
            slot[actor] = Some(a);
            last = Some(env.step(slot).unwrap());
        }
        last.unwrap()
    }

    #[test]
    fn deal_frequencies_pass_chi_square() {
        let mut counts = [0u32; 6];
        let mut env = KuhnEnv::new();
        let trials = 60_000;
        for seed in 0..trials {
            env.reset(seed);
            let pos = deals().iter().position(|&(a, b)| [a, b] == env.cards()).unwrap();
            counts[pos] += 1;
        }
        let expected = trials as f64 / 6.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // df = 5, critical value at significance 0.01
        assert!(chi2 < 15.086, "chi2 = {chi2}, counts {counts:?}");
    }

    #[test]
    fn all_terminal_payoffs_hand_checked() {
        // King (2) vs Jack (0)
        let base = KuhnEnv::with_deal(2, 0);

        let mut e = base.clone();
        assert_eq!(play(&mut e, &[CHECK_CALL, CHECK_CALL]).rewards, [1.0, -1.0]);

        let mut e = base.clone();
        assert_eq!(play(&mut e, &[BET, CHECK_CALL]).rewards, [2.0, -2.0]);

        let mut e = base.clone();
        assert_eq!(play(&mut e, &[BET, FOLD]).rewards, [1.0, -1.0]);

        let mut e = base.clone();
        assert_eq!(play(&mut e, &[CHECK_CALL, BET, CHECK_CALL]).rewards, [2.0, -2.0]);

        let mut e = base.clone();
        assert_eq!(play(&mut e, &[CHECK_CALL, BET, FOLD]).rewards, [-1.0, 1.0]);

        // losing showdown from player 0's side
        let mut e = KuhnEnv::with_deal(0, 2);
        assert_eq!(play(&mut e, &[BET, CHECK_CALL]).rewards, [-2.0, 2.0]);
    }

    #[test]
    fn opening_offers_exactly_check_and_bet() {
        let env = KuhnEnv::with_deal(0, 1);
        assert_eq!(env.legal_actions(0).unwrap(), vec![false, true, true]);
        assert_eq!(env.legal_actions(1).unwrap(), vec![false, false, false]);
    }

    #[test]
    fn facing_bet_offers_fold_and_call() {
        let mut env = KuhnEnv::with_deal(0, 1);
        play(&mut env, &[BET]);
        assert_eq!(env.legal_actions(1).unwrap(), vec![true, true, false]);
        assert!(matches!(
            env.step([None, Some(BET)]),
            Err(EnvError::IllegalAction { player: 1, action: BET })
        ));
    }

    #[test]
    fn raise_line_check_bet_reaches_player_zero() {
        let mut env = KuhnEnv::with_deal(1, 2);
        play(&mut env, &[CHECK_CALL, BET]);
        assert_eq!(env.acting_players(), vec![0]);
        assert_eq!(env.legal_actions(0).unwrap(), vec![true, true, false]);
    }

    #[test]
    fn encoding_is_a_function_of_card_and_history() {
        // exhaustive: same (card, history) across different opponent cards
        // must encode identically for every prefix of every playline
        let lines: [&[usize]; 5] = [
            &[CHECK_CALL, CHECK_CALL],
            &[CHECK_CALL, BET, CHECK_CALL],
            &[CHECK_CALL, BET, FOLD],
            &[BET, CHECK_CALL],
            &[BET, FOLD],
        ];
        for player in 0..2usize {
            for line in lines {
                for cut in 0..line.len() {
                    let mut groups: std::collections::HashMap<usize, Vec<f64>> =
                        std::collections::HashMap::new();
                    for (c0, c1) in deals() {
                        let mut env = KuhnEnv::with_deal(c0, c1);
                        play_prefix(&mut env, &line[..cut]);
                        let card = env.cards()[player];
                        let obs = env.observe(player).unwrap();
                        if let Some(prev) = groups.get(&card) {
                            assert_eq!(prev, &obs.features, "player {player} card {card}");
                        } else {
                            groups.insert(card, obs.features);
                        }
                    }
                }
            }
        }

        fn play_prefix(env: &mut KuhnEnv, actions: &[usize]) {
            for &a in actions {
                let actor = env.to_act();
                let mut slot = [None, None];
                slot[actor] = Some(a);
                env.step(slot).unwrap();
            }
        }
    }

    #[test]
    fn observation_hides_opponent_card() {
        let a = KuhnEnv::with_deal(2, 0).observe(0).unwrap();
        let b = KuhnEnv::with_deal(2, 1).observe(0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn wrong_player_action_rejected() {
        let mut env = KuhnEnv::with_deal(0, 1);
        assert!(matches!(
            env.step([None, Some(CHECK_CALL)]),
            Err(EnvError::MissingAction { player: 0 })
        ));
        assert!(matches!(
            env.step([Some(CHECK_CALL), Some(CHECK_CALL)]),
            Err(EnvError::UnexpectedAction { player: 1 })
        ));
    }
}
