//! One-shot two-player matrix games played simultaneously. Payoffs are
//! stated for the row player; the column player receives the negation.

use super::{check_player, EnvError, GameEnv, Observation, Step};
use crate::nn::InputShape;

/// Biased matching pennies equilibrium: both players play heads with
/// probability 0.4 and the row player's value is 0.2.
pub const BIASED_PENNIES_EQ_P: f64 = 0.4;
pub const BIASED_PENNIES_EQ_VALUE: f64 = 0.2;

#[derive(Clone, Debug)]
pub struct MatrixEnv {
    id: &'static str,
    payoff: Vec<Vec<f64>>,
    moves: Option<(usize, usize)>,
    started: bool,
}

impl MatrixEnv {
    pub fn new(id: &'static str, payoff: Vec<Vec<f64>>) -> Self {
        assert!(!payoff.is_empty() && payoff.iter().all(|r| r.len() == payoff.len()));
        MatrixEnv { id, payoff, moves: None, started: false }
    }

    /// Heads/heads pays the row player 2 instead of 1, shifting the mixed
    /// equilibrium away from uniform.
    pub fn biased_pennies() -> Self {
        MatrixEnv::new("pennies", vec![vec![2.0, -1.0], vec![-1.0, 1.0]])
    }

    pub fn matching_pennies() -> Self {
        MatrixEnv::new("matching-pennies", vec![vec![1.0, -1.0], vec![-1.0, 1.0]])
    }

    pub fn rps() -> Self {
        MatrixEnv::new(
            "rps",
            vec![
                vec![0.0, -1.0, 1.0],
                vec![1.0, 0.0, -1.0],
                vec![-1.0, 1.0, 0.0],
            ],
        )
    }

    pub fn payoff(&self) -> &[Vec<f64>] {
        &self.payoff
    }

    fn obs(&self, player: usize) -> Observation {
        let mut features = vec![1.0, 0.0, 0.0];
        features[1 + player] = 1.0;
        Observation {
            env_id: self.id,
            player,
            tick: self.tick(),
            features,
            legal: vec![true; self.payoff.len()],
        }
    }
}

impl GameEnv for MatrixEnv {
    fn id(&self) -> &'static str {
        self.id
    }

    fn num_actions(&self) -> usize {
        self.payoff.len()
    }

    fn obs_shape(&self) -> InputShape {
        InputShape::Flat(3)
    }

    fn reset(&mut self, _seed: u64) -> Vec<Observation> {
        self.moves = None;
        self.started = true;
        vec![self.obs(0), self.obs(1)]
    }

    fn is_terminal(&self) -> bool {
        self.moves.is_some() || !self.started
    }

    fn tick(&self) -> u64 {
        self.moves.is_some() as u64
    }

    fn acting_players(&self) -> Vec<usize> {
        if self.is_terminal() {
            vec![]
        } else {
            vec![0, 1]
        }
    }

    fn legal_actions(&self, player: usize) -> Result<Vec<bool>, EnvError> {
        check_player(player)?;
        Ok(vec![true; self.payoff.len()])
    }

    fn observe(&self, player: usize) -> Result<Observation, EnvError> {
        check_player(player)?;
        Ok(self.obs(player))
    }

    fn step(&mut self, actions: [Option<usize>; 2]) -> Result<Step, EnvError> {
        if self.is_terminal() {
            return Err(EnvError::StepAfterTerminal);
        }
        let a0 = actions[0].ok_or(EnvError::MissingAction { player: 0 })?;
        let a1 = actions[1].ok_or(EnvError::MissingAction { player: 1 })?;
        for (p, a) in [(0usize, a0), (1, a1)] {
            if a >= self.payoff.len() {
                return Err(EnvError::IllegalAction { player: p, action: a });
            }
        }
        self.moves = Some((a0, a1));
        let r0 = self.payoff[a0][a1];
        Ok(Step {
            observations: vec![self.obs(0), self.obs(1)],
            rewards: [r0, -r0],
            terminal: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn biased_pennies_payoffs() {
        let mut env = MatrixEnv::biased_pennies();
        for (a0, a1, want) in [(0, 0, 2.0), (0, 1, -1.0), (1, 0, -1.0), (1, 1, 1.0)] {
            env.reset(0);
            let step = env.step([Some(a0), Some(a1)]).unwrap();
            assert_eq!(step.rewards, [want, -want]);
            assert!(step.terminal);
        }
    }

    #[test]
    fn equilibrium_constants_make_both_sides_indifferent() {
        let env = MatrixEnv::biased_pennies();
        let p = BIASED_PENNIES_EQ_P;
        let q = BIASED_PENNIES_EQ_P;
        let row_h: f64 = q * env.payoff()[0][0] + (1.0 - q) * env.payoff()[0][1];
        let row_t: f64 = q * env.payoff()[1][0] + (1.0 - q) * env.payoff()[1][1];
        assert!((row_h - row_t).abs() < 1e-12);
        assert!((row_h - BIASED_PENNIES_EQ_VALUE).abs() < 1e-12);
        let col_h: f64 = -(p * env.payoff()[0][0] + (1.0 - p) * env.payoff()[1][0]);
        let col_t: f64 = -(p * env.payoff()[0][1] + (1.0 - p) * env.payoff()[1][1]);
        assert!((col_h - col_t).abs() < 1e-12);
    }

    #[test]
    fn observations_identical_across_deals_and_distinct_across_players() {
        let mut env = MatrixEnv::biased_pennies();
        let a = env.reset(1);
        let b = env.reset(999);
        assert_eq!(a, b);
        assert_ne!(a[0].features, a[1].features);
    }

    #[test]
    fn missing_action_is_an_error() {
        let mut env = MatrixEnv::rps();
        env.reset(0);
        assert!(matches!(
            env.step([Some(0), None]),
            Err(EnvError::MissingAction { player: 1 })
        ));
    }

    #[test]
    fn out_of_range_action_names_player() {
        let mut env = MatrixEnv::matching_pennies();
        env.reset(0);
        match env.step([Some(0), Some(5)]) {
            Err(EnvError::IllegalAction { player: 1, action: 5 }) => {}
            other => panic!("{other:?}"),
        }
    }
}
