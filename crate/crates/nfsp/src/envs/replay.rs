//! Episode replay logs: one JSON record per decision, carrying enough to
//! re-run the episode and confirm the engine produced the same
//! observations and rewards.

use super::{EnvError, GameEnv, Observation};
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplayRecord {
    pub tick: u64,
    pub player: usize,
    pub obs_hash: String,
    pub action: usize,
    pub reward: f64,
}

/// FNV-1a over the observation's bit patterns; stable across runs.
pub fn obs_hash(obs: &Observation) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |byte: u8| {
        h ^= byte as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for b in obs.tick.to_le_bytes() {
        eat(b);
    }
    eat(obs.player as u8);
    for x in &obs.features {
        for b in x.to_bits().to_le_bytes() {
            eat(b);
        }
    }
    for &l in &obs.legal {
        eat(l as u8);
    }
    format!("{h:016x}")
}

/// Play one episode, calling `act` for every acting player, and collect
/// the replay records alongside total rewards.
pub fn record_episode(
    env: &mut dyn GameEnv,
    seed: u64,
    mut act: impl FnMut(&Observation) -> usize,
) -> Result<(Vec<ReplayRecord>, [f64; 2]), EnvError> {
    env.reset(seed);
    let mut records = Vec::new();
    let mut totals = [0.0, 0.0];
    while !env.is_terminal() {
        let mut actions = [None, None];
        let mut pending = Vec::new();
        for p in env.acting_players() {
            let obs = env.observe(p)?;
            let action = act(&obs);
            pending.push((env.tick(), p, obs_hash(&obs), action));
            actions[p] = Some(action);
        }
        let step = env.step(actions)?;
        totals[0] += step.rewards[0];
        totals[1] += step.rewards[1];
        for (tick, player, hash, action) in pending {
            records.push(ReplayRecord {
                tick,
                player,
                obs_hash: hash,
                action,
                reward: step.rewards[player],
            });
        }
    }
    Ok((records, totals))
}

/// Re-run `records` against a fresh episode and confirm every tick,
/// observation hash, and reward matches.
pub fn verify_replay(
    env: &mut dyn GameEnv,
    seed: u64,
    records: &[ReplayRecord],
) -> Result<(), EnvError> {
    env.reset(seed);
    let mut i = 0;
    while !env.is_terminal() {
        let mut actions = [None, None];
        let mut claimed = Vec::new();
        for p in env.acting_players() {
            let rec = records
                .get(i)
                .ok_or_else(|| EnvError::Replay(format!("log ends early at record {i}")))?;
            i += 1;
            if rec.player != p {
                return Err(EnvError::Replay(format!(
                    "record {i}: expected player {p}, log has {}",
                    rec.player
                )));
            }
            if rec.tick != env.tick() {
                return Err(EnvError::Replay(format!(
                    "record {i}: expected tick {}, log has {}",
                    env.tick(),
                    rec.tick
                )));
            }
            let obs = env.observe(p)?;
            if obs_hash(&obs) != rec.obs_hash {
                return Err(EnvError::Replay(format!(
                    "record {i}: observation hash mismatch for player {p} at tick {}",
                    rec.tick
                )));
            }
            actions[p] = Some(rec.action);
            claimed.push((p, rec.reward));
        }
        let step = env.step(actions)?;
        for (p, reward) in claimed {
            if step.rewards[p] != reward {
                return Err(EnvError::Replay(format!(
                    "player {p} reward mismatch: engine {}, log {reward}",
                    step.rewards[p]
                )));
            }
        }
    }
    if i != records.len() {
        return Err(EnvError::Replay(format!(
            "{} records left after the episode ended",
            records.len() - i
        )));
    }
    Ok(())
}

pub fn write_replay(path: &Path, records: &[ReplayRecord]) -> Result<(), EnvError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_replay(path: &Path) -> Result<Vec<ReplayRecord>, EnvError> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    Ok(records)
}
