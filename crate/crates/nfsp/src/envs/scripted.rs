//! Rule-based MicroRTS-lite opponents. Each policy is a pure function of
//! the current observation (plus an RNG for the random baseline), so
//! scripted players honor fog-of-war exactly like learned ones.

use super::microrts::{
    Command, CELLS, CH_OWN_BARRACK, CH_OWN_MELEE, CH_OWN_RANGE, CH_OWN_WORKER,
    DEFAULT_FRAME_SKIP,
};
use super::{EnvError, Observation};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScriptKind {
    /// Build an economy, five attackers, then attack relentlessly.
    Simple,
    /// Build a small ranged squad and harass, alternating attack-in-range
    /// with hit-and-run.
    HitAndRun,
    /// Uniform over the legal mask.
    Random,
}

impl FromStr for ScriptKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "simple" => Ok(ScriptKind::Simple),
            "hitandrun" | "hit-and-run" => Ok(ScriptKind::HitAndRun),
            "random" => Ok(ScriptKind::Random),
            other => Err(format!("unknown script '{other}' (simple, hit-and-run, random)")),
        }
    }
}

fn channel_sum(obs: &Observation, ch: usize) -> f64 {
    obs.features[ch * CELLS..(ch + 1) * CELLS].iter().sum()
}

/// Pick the scripted action for `obs`. Errors when the observation is not
/// from MicroRTS-lite.
pub fn scripted_policy(
    kind: ScriptKind,
    obs: &Observation,
    rng: &mut ChaCha20Rng,
) -> Result<usize, EnvError> {
    if obs.env_id != "microrts" {
        return Err(EnvError::NotMicroRts(obs.env_id.to_string()));
    }
    let legal = |c: Command| obs.legal[c.index()];
    let workers = channel_sum(obs, CH_OWN_WORKER);
    let barrack = channel_sum(obs, CH_OWN_BARRACK) > 0.0;
    let melee = channel_sum(obs, CH_OWN_MELEE);
    let ranged = channel_sum(obs, CH_OWN_RANGE);
    let army = melee + ranged;
    let action = match kind {
        ScriptKind::Simple => {
            if army >= 5.0 {
                Command::Attack
            } else if barrack && legal(Command::BuildMelee) {
                Command::BuildMelee
            } else if !barrack && legal(Command::BuildBarrack) {
                Command::BuildBarrack
            } else if workers < 2.0 && legal(Command::BuildWorker) {
                Command::BuildWorker
            } else {
                Command::Idle
            }
        }
        ScriptKind::HitAndRun => {
            if ranged >= 2.0 {
                if (obs.tick / DEFAULT_FRAME_SKIP as u64) % 2 == 0 {
                    Command::AttackInRange
                } else {
                    Command::HitAndRun
                }
            } else if barrack && legal(Command::BuildRange) {
                Command::BuildRange
            } else if !barrack && legal(Command::BuildBarrack) {
                Command::BuildBarrack
            } else if workers < 2.0 && legal(Command::BuildWorker) {
                Command::BuildWorker
            } else {
                Command::Idle
            }
        }
        ScriptKind::Random => {
            let choices: Vec<usize> =
                (0..obs.legal.len()).filter(|&a| obs.legal[a]).collect();
            return Ok(choices[rng.gen_range(0..choices.len())]);
        }
    };
    Ok(action.index())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::microrts::{
        encode_observation, MicroRtsState, UnitKind, NUM_ACTIONS,
    };
    use crate::envs::{GameEnv, KuhnEnv};
    use rand::SeedableRng;

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(0)
    }

    #[test]
    fn simple_with_barrack_builds_attackers() {
        let mut s = MicroRtsState::initial(0);
        let base = s.base(0).unwrap().pos;
        s.spawn(0, UnitKind::Barrack, base);
        s.resources[0] = 6;
        let obs = encode_observation(&s, 0);
        let a = scripted_policy(ScriptKind::Simple, &obs, &mut rng()).unwrap();
        assert_eq!(a, Command::BuildMelee.index());
    }

    #[test]
    fn simple_with_five_attackers_attacks() {
        let mut s = MicroRtsState::initial(0);
        let base = s.base(0).unwrap().pos;
        s.spawn(0, UnitKind::Barrack, base);
        for _ in 0..5 {
            s.spawn(0, UnitKind::Melee, base);
        }
        let obs = encode_observation(&s, 0);
        let a = scripted_policy(ScriptKind::Simple, &obs, &mut rng()).unwrap();
        assert_eq!(a, Command::Attack.index());
    }

    #[test]
    fn simple_opens_with_barrack_then_worker() {
        let s = MicroRtsState::initial(0);
        let obs = encode_observation(&s, 0);
        let a = scripted_policy(ScriptKind::Simple, &obs, &mut rng()).unwrap();
        assert_eq!(a, Command::BuildBarrack.index());

        let mut broke = s.clone();
        broke.resources[0] = 1;
        let obs = encode_observation(&broke, 0);
        let a = scripted_policy(ScriptKind::Simple, &obs, &mut rng()).unwrap();
        assert_eq!(a, Command::BuildWorker.index());
    }

    #[test]
    fn hit_and_run_alternates_harassment() {
        let mut s = MicroRtsState::initial(0);
        let base = s.base(0).unwrap().pos;
        s.spawn(0, UnitKind::Range, base);
        s.spawn(0, UnitKind::Range, base);
        let obs = encode_observation(&s, 0);
        let a0 = scripted_policy(ScriptKind::HitAndRun, &obs, &mut rng()).unwrap();
        assert_eq!(a0, Command::AttackInRange.index());
        s.tick = DEFAULT_FRAME_SKIP as u64;
        let obs = encode_observation(&s, 0);
        let a1 = scripted_policy(ScriptKind::HitAndRun, &obs, &mut rng()).unwrap();
        assert_eq!(a1, Command::HitAndRun.index());
    }

    #[test]
    fn random_matches_legal_frequencies() {
        let s = MicroRtsState::initial(0);
        let obs = encode_observation(&s, 0);
        let legal: Vec<usize> = (0..NUM_ACTIONS).filter(|&a| obs.legal[a]).collect();
        let mut counts = vec![0u32; NUM_ACTIONS];
        let mut r = rng();
        let draws = 100_000;
        for _ in 0..draws {
            counts[scripted_policy(ScriptKind::Random, &obs, &mut r).unwrap()] += 1;
        }
        for a in 0..NUM_ACTIONS {
            if !legal.contains(&a) {
                assert_eq!(counts[a], 0, "illegal action {a} drawn");
            }
        }
        let p = 1.0 / legal.len() as f64;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for &a in &legal {
            assert!(
                (counts[a] as f64 - draws as f64 * p).abs() < 3.0 * sigma,
                "action {a}: {}",
                counts[a]
            );
        }
    }

    #[test]
    fn deterministic_under_fixed_seed() {
        let s = MicroRtsState::initial(1);
        let obs = encode_observation(&s, 1);
        let a = scripted_policy(ScriptKind::Random, &obs, &mut rng()).unwrap();
        let b = scripted_policy(ScriptKind::Random, &obs, &mut rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_non_microrts_observations() {
        let mut kuhn = KuhnEnv::new();
        let obs = kuhn.reset(0).remove(0);
        match scripted_policy(ScriptKind::Simple, &obs, &mut rng()) {
            Err(EnvError::NotMicroRts(id)) => assert_eq!(id, "kuhn"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn script_names_parse() {
        assert_eq!("simple".parse::<ScriptKind>().unwrap(), ScriptKind::Simple);
        assert_eq!("hit-and-run".parse::<ScriptKind>().unwrap(), ScriptKind::HitAndRun);
        assert_eq!("random".parse::<ScriptKind>().unwrap(), ScriptKind::Random);
        assert!("tank".parse::<ScriptKind>().is_err());
    }
}
