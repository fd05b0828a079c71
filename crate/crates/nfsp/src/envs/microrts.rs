//! MicroRTS-lite: a 10×10 tick-driven real-time strategy microcosm.
//!
//! Each player owns a base, gathers from a resource node, builds workers,
//! one barrack, and melee/range attackers, and steers the whole army with
//! nine global strategic commands. Observations are channelized unit
//! counts under fog-of-war; player 1's view is rotated 180° so both
//! players see the board from the same perspective.
//!
//! The engine is deterministic after `reset`: all randomness is the
//! seeded initial placement, mirrored through the map center so the game
//! is exactly symmetric under player swap.

use super::{check_player, EnvError, GameEnv, Observation, Step};
use crate::nn::InputShape;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

pub const MAP: i32 = 10;
pub const CELLS: usize = (MAP * MAP) as usize;
pub const CHANNELS: usize = 14;
pub const OBS_LEN: usize = CHANNELS * CELLS;
pub const NUM_ACTIONS: usize = 9;
pub const VISION_RADIUS: i32 = 3;
pub const TICK_LIMIT: u64 = 3000;
pub const DEFAULT_FRAME_SKIP: usize = 50;

pub const START_RESOURCES: i32 = 5;
pub const NODE_SUPPLY: i32 = 30;
pub const WORKER_COST: i32 = 1;
pub const BARRACK_COST: i32 = 4;
pub const ATTACKER_COST: i32 = 3;
pub const WORKER_BUILD_TIME: u32 = 20;
pub const BARRACK_BUILD_TIME: u32 = 40;
pub const ATTACKER_BUILD_TIME: u32 = 30;
pub const GATHER_PERIOD: u32 = 12;
pub const MOVE_PERIOD: u32 = 3;
pub const WORKER_CAP: usize = 4;
pub const ARMY_CAP: usize = 7;

pub const CH_OWN_BASE: usize = 0;
pub const CH_OWN_BARRACK: usize = 1;
pub const CH_OWN_WORKER: usize = 2;
pub const CH_OWN_MELEE: usize = 3;
pub const CH_OWN_RANGE: usize = 4;
pub const CH_ENEMY_BASE: usize = 5;
pub const CH_ENEMY_BARRACK: usize = 6;
pub const CH_ENEMY_WORKER: usize = 7;
pub const CH_ENEMY_MELEE: usize = 8;
pub const CH_ENEMY_RANGE: usize = 9;
pub const CH_RESOURCE: usize = 10;
pub const CH_VISIBLE: usize = 11;
pub const CH_OWN_HP: usize = 12;
pub const CH_ENEMY_HP: usize = 13;

/// The nine global strategic commands.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    BuildWorker,
    BuildBarrack,
    BuildMelee,
    BuildRange,
    Attack,
    AttackInRange,
    HitAndRun,
    AllDefend,
    Idle,
}

pub const COMMANDS: [Command; NUM_ACTIONS] = [
    Command::BuildWorker,
    Command::BuildBarrack,
    Command::BuildMelee,
    Command::BuildRange,
    Command::Attack,
    Command::AttackInRange,
    Command::HitAndRun,
    Command::AllDefend,
    Command::Idle,
];

impl Command {
    pub fn index(self) -> usize {
        COMMANDS.iter().position(|&c| c == self).unwrap()
    }

    pub fn from_index(i: usize) -> Option<Command> {
        COMMANDS.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitKind {
    Base,
    Barrack,
    Worker,
    Melee,
    Range,
}

impl UnitKind {
    pub fn max_hp(self) -> i32 {
        match self {
            UnitKind::Base => 40,
            UnitKind::Barrack => 20,
            UnitKind::Worker => 4,
            UnitKind::Melee => 12,
            UnitKind::Range => 6,
        }
    }

    pub fn attack(self) -> i32 {
        match self {
            UnitKind::Melee => 3,
            UnitKind::Range => 2,
            _ => 0,
        }
    }

    pub fn attack_range(self) -> i32 {
        match self {
            UnitKind::Melee => 1,
            UnitKind::Range => 3,
            _ => 0,
        }
    }

    fn attack_period(self) -> u32 {
        match self {
            UnitKind::Melee => 10,
            UnitKind::Range => 15,
            _ => 0,
        }
    }

    fn mobile(self) -> bool {
        matches!(self, UnitKind::Melee | UnitKind::Range)
    }

    // lower is preferred when several targets are in range
    fn target_priority(self) -> u8 {
        match self {
            UnitKind::Melee => 0,
            UnitKind::Range => 1,
            UnitKind::Worker => 2,
            UnitKind::Barrack => 3,
            UnitKind::Base => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub id: u32,
    pub owner: usize,
    pub kind: UnitKind,
    pub pos: (i32, i32),
    pub hp: i32,
    pub attack_cd: u32,
    pub move_cd: u32,
    pub gather_cd: u32,
}

/// Full true state; observations are derived views under fog.
#[derive(Clone, Debug, PartialEq)]
pub struct MicroRtsState {
    pub tick: u64,
    pub units: Vec<Unit>,
    pub resources: [i32; 2],
    pub node_pos: [(i32, i32); 2],
    pub node_supply: [i32; 2],
    pub base_queue: [Option<u32>; 2],
    pub barrack_build: [Option<u32>; 2],
    pub barrack_queue: [Option<(UnitKind, u32)>; 2],
    pub next_unit_id: u32,
}

impl MicroRtsState {
    /// Seeded start: player 0's base lands in a small home region, player
    /// 1's base and node are the 180° mirror, so spawns never see each
    /// other through fog.
    pub fn initial(seed: u64) -> MicroRtsState {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let r = rng.gen_range(1..=2);
        let c = rng.gen_range(1..=4);
        let base0 = (r, c);
        let base1 = mirror(base0);
        let node0 = (r - 1, c);
        let node1 = mirror(node0);
        let mut s = MicroRtsState {
            tick: 0,
            units: Vec::new(),
            resources: [START_RESOURCES; 2],
            node_pos: [node0, node1],
            node_supply: [NODE_SUPPLY; 2],
            base_queue: [None; 2],
            barrack_build: [None; 2],
            barrack_queue: [None; 2],
            next_unit_id: 0,
        };
        for (p, base) in [(0usize, base0), (1, base1)] {
            s.spawn(p, UnitKind::Base, base);
            s.spawn(p, UnitKind::Worker, base);
        }
        s
    }

    pub fn spawn(&mut self, owner: usize, kind: UnitKind, pos: (i32, i32)) -> u32 {
        let id = self.next_unit_id;
        self.next_unit_id += 1;
        self.units.push(Unit {
            id,
            owner,
            kind,
            pos,
            hp: kind.max_hp(),
            attack_cd: 0,
            move_cd: 0,
            gather_cd: if kind == UnitKind::Worker { GATHER_PERIOD } else { 0 },
        });
        id
    }

    pub fn base(&self, player: usize) -> Option<&Unit> {
        self.units.iter().find(|u| u.owner == player && u.kind == UnitKind::Base)
    }

    pub fn barrack(&self, player: usize) -> Option<&Unit> {
        self.units.iter().find(|u| u.owner == player && u.kind == UnitKind::Barrack)
    }

    pub fn count(&self, player: usize, kind: UnitKind) -> usize {
        self.units.iter().filter(|u| u.owner == player && u.kind == kind).count()
    }

    pub fn army(&self, player: usize) -> usize {
        self.count(player, UnitKind::Melee) + self.count(player, UnitKind::Range)
    }
}

pub fn mirror(pos: (i32, i32)) -> (i32, i32) {
    (MAP - 1 - pos.0, MAP - 1 - pos.1)
}

fn chebyshev(a: (i32, i32), b: (i32, i32)) -> i32 {
    (a.0 - b.0).abs().max((a.1 - b.1).abs())
}

fn clamp(pos: (i32, i32)) -> (i32, i32) {
    (pos.0.clamp(0, MAP - 1), pos.1.clamp(0, MAP - 1))
}

fn step_toward(from: (i32, i32), to: (i32, i32)) -> (i32, i32) {
    clamp((from.0 + (to.0 - from.0).signum(), from.1 + (to.1 - from.1).signum()))
}

fn step_away(from: (i32, i32), threat: (i32, i32)) -> (i32, i32) {
    clamp((from.0 - (threat.0 - from.0).signum(), from.1 - (threat.1 - from.1).signum()))
}

fn visible_from(units: &[Unit], player: usize, pos: (i32, i32)) -> bool {
    units
        .iter()
        .any(|u| u.owner == player && chebyshev(u.pos, pos) <= VISION_RADIUS)
}

// units spawn one step toward the map center from their building
fn spawn_offset(pos: (i32, i32), owner: usize) -> (i32, i32) {
    let d = if owner == 0 { 1 } else { -1 };
    clamp((pos.0 + d, pos.1 + d))
}

/// Nine-slot legality mask: builds gated by prerequisites, resources, a
/// free production slot, and unit caps; tactical commands and Idle are
/// always legal.
pub fn legal_mask(s: &MicroRtsState, player: usize) -> Vec<bool> {
    let base = s.base(player).is_some();
    let barrack = s.barrack(player).is_some();
    let res = s.resources[player];
    let workers = s.count(player, UnitKind::Worker) + s.base_queue[player].is_some() as usize;
    let army = s.army(player) + s.barrack_queue[player].is_some() as usize;
    let mut m = vec![true; NUM_ACTIONS];
    m[Command::BuildWorker.index()] =
        base && s.base_queue[player].is_none() && res >= WORKER_COST && workers < WORKER_CAP;
    m[Command::BuildBarrack.index()] =
        base && !barrack && s.barrack_build[player].is_none() && res >= BARRACK_COST;
    let attacker_ok = |_k: UnitKind| {
        barrack && s.barrack_queue[player].is_none() && res >= ATTACKER_COST && army < ARMY_CAP
    };
    m[Command::BuildMelee.index()] = attacker_ok(UnitKind::Melee);
    m[Command::BuildRange.index()] = attacker_ok(UnitKind::Range);
    m
}

/// Fog-of-war encoding of `player`'s information set: own units in full,
/// enemy units only inside the union of own vision radii, resource nodes
/// and a visibility mask, plus per-cell HP fractions. Player 1's board is
/// rotated 180°.
pub fn encode_observation(s: &MicroRtsState, player: usize) -> Observation {
    let mut features = vec![0.0; OBS_LEN];
    let enc = |pos: (i32, i32)| -> usize {
        let (r, c) = if player == 0 { pos } else { mirror(pos) };
        (r * MAP + c) as usize
    };
    let own_channel = |k: UnitKind| match k {
        UnitKind::Base => CH_OWN_BASE,
        UnitKind::Barrack => CH_OWN_BARRACK,
        UnitKind::Worker => CH_OWN_WORKER,
        UnitKind::Melee => CH_OWN_MELEE,
        UnitKind::Range => CH_OWN_RANGE,
    };
    for u in &s.units {
        let cell = enc(u.pos);
        let frac = u.hp as f64 / u.kind.max_hp() as f64;
        if u.owner == player {
            features[own_channel(u.kind) * CELLS + cell] += 1.0;
            features[CH_OWN_HP * CELLS + cell] += frac;
        } else if visible_from(&s.units, player, u.pos) {
            features[(own_channel(u.kind) + CH_ENEMY_BASE) * CELLS + cell] += 1.0;
            features[CH_ENEMY_HP * CELLS + cell] += frac;
        }
    }
    for p in 0..2 {
        if s.node_supply[p] > 0 {
            features[CH_RESOURCE * CELLS + enc(s.node_pos[p])] = 1.0;
        }
    }
    for r in 0..MAP {
        for c in 0..MAP {
            if visible_from(&s.units, player, (r, c)) {
                features[CH_VISIBLE * CELLS + enc((r, c))] = 1.0;
            }
        }
    }
    Observation {
        env_id: "microrts",
        player,
        tick: s.tick,
        features,
        legal: legal_mask(s, player),
    }
}

fn apply_build(s: &mut MicroRtsState, p: usize, cmd: Command) {
    if !legal_mask(s, p)[cmd.index()] {
        return;
    }
    match cmd {
        Command::BuildWorker => {
            s.resources[p] -= WORKER_COST;
            s.base_queue[p] = Some(WORKER_BUILD_TIME);
        }
        Command::BuildBarrack => {
            s.resources[p] -= BARRACK_COST;
            s.barrack_build[p] = Some(BARRACK_BUILD_TIME);
        }
        Command::BuildMelee => {
            s.resources[p] -= ATTACKER_COST;
            s.barrack_queue[p] = Some((UnitKind::Melee, ATTACKER_BUILD_TIME));
        }
        Command::BuildRange => {
            s.resources[p] -= ATTACKER_COST;
            s.barrack_queue[p] = Some((UnitKind::Range, ATTACKER_BUILD_TIME));
        }
        _ => {}
    }
}

enum Micro {
    Hold,
    MoveTo((i32, i32)),
    Flee((i32, i32)),
    Strike(u32),
}

fn pick_target<'a>(candidates: &[&'a Unit]) -> Option<&'a Unit> {
    candidates
        .iter()
        .min_by_key(|u| (u.kind.target_priority(), u.id))
        .copied()
}

fn nearest<'a>(candidates: &[&'a Unit], from: (i32, i32)) -> Option<&'a Unit> {
    candidates.iter().min_by_key(|u| (chebyshev(from, u.pos), u.id)).copied()
}

fn micro_decision(snap: &[Unit], u: &Unit, cmd: Command) -> Micro {
    let p = u.owner;
    let range = u.kind.attack_range();
    let enemies: Vec<&Unit> = snap.iter().filter(|e| e.owner == 1 - p).collect();
    let in_range: Vec<&Unit> =
        enemies.iter().filter(|e| chebyshev(u.pos, e.pos) <= range).copied().collect();
    let ready = u.attack_cd == 0;
    match cmd {
        Command::Attack => {
            let base = enemies.iter().find(|e| e.kind == UnitKind::Base).copied();
            if let Some(b) = base {
                if ready && chebyshev(u.pos, b.pos) <= range {
                    return Micro::Strike(b.id);
                }
            }
            if ready {
                if let Some(t) = pick_target(&in_range) {
                    return Micro::Strike(t.id);
                }
            }
            if !in_range.is_empty() {
                return Micro::Hold;
            }
            match base {
                Some(b) => Micro::MoveTo(b.pos),
                None => Micro::Hold,
            }
        }
        Command::AttackInRange => {
            let visible: Vec<&Unit> = enemies
                .iter()
                .filter(|e| visible_from(snap, p, e.pos))
                .copied()
                .collect();
            match nearest(&visible, u.pos) {
                None => Micro::Hold,
                Some(t) if chebyshev(u.pos, t.pos) <= range => {
                    if ready {
                        Micro::Strike(t.id)
                    } else {
                        Micro::Hold
                    }
                }
                Some(t) => Micro::MoveTo(t.pos),
            }
        }
        Command::HitAndRun => {
            let visible: Vec<&Unit> = enemies
                .iter()
                .filter(|e| visible_from(snap, p, e.pos))
                .copied()
                .collect();
            match nearest(&visible, u.pos) {
                None => Micro::Hold,
                Some(t) => {
                    let d = chebyshev(u.pos, t.pos);
                    if ready && d <= range {
                        Micro::Strike(t.id)
                    } else if !ready && d <= t.kind.attack_range() + 1 {
                        Micro::Flee(t.pos)
                    } else if d > range {
                        Micro::MoveTo(t.pos)
                    } else {
                        Micro::Hold
                    }
                }
            }
        }
        Command::AllDefend => {
            if ready {
                if let Some(t) = pick_target(&in_range) {
                    return Micro::Strike(t.id);
                }
            }
            if !in_range.is_empty() {
                return Micro::Hold;
            }
            match snap.iter().find(|e| e.owner == p && e.kind == UnitKind::Base) {
                Some(b) if chebyshev(u.pos, b.pos) > 1 => Micro::MoveTo(b.pos),
                _ => Micro::Hold,
            }
        }
        // builds and Idle: stand ground, retaliate in range
        _ => {
            if ready {
                if let Some(t) = pick_target(&in_range) {
                    return Micro::Strike(t.id);
                }
            }
            Micro::Hold
        }
    }
}

/// One engine tick. Returns terminal rewards once a base falls or the
/// tick limit is reached.
fn tick_once(s: &mut MicroRtsState, cmds: [Command; 2]) -> Option<[f64; 2]> {
    // production timers
    for p in 0..2 {
        if let Some(rem) = s.base_queue[p] {
            let base_pos = s.base(p).map(|b| b.pos);
            match base_pos {
                None => s.base_queue[p] = None,
                Some(pos) if rem <= 1 => {
                    s.spawn(p, UnitKind::Worker, pos);
                    s.base_queue[p] = None;
                }
                Some(_) => s.base_queue[p] = Some(rem - 1),
            }
        }
        if let Some(rem) = s.barrack_build[p] {
            if rem <= 1 {
                if let Some(pos) = s.base(p).map(|b| b.pos) {
                    let at = spawn_offset(pos, p);
                    s.spawn(p, UnitKind::Barrack, at);
                }
                s.barrack_build[p] = None;
            } else {
                s.barrack_build[p] = Some(rem - 1);
            }
        }
        if let Some((kind, rem)) = s.barrack_queue[p] {
            let barrack_pos = s.barrack(p).map(|b| b.pos);
            match barrack_pos {
                None => s.barrack_queue[p] = None,
                Some(pos) if rem <= 1 => {
                    let at = spawn_offset(pos, p);
                    s.spawn(p, kind, at);
                    s.barrack_queue[p] = None;
                }
                Some(_) => s.barrack_queue[p] = Some((kind, rem - 1)),
            }
        }
    }
    // the strategic command re-applies every tick while legal
    for p in 0..2 {
        apply_build(s, p, cmds[p]);
    }
    // economy: each worker trickles resources from its node
    for i in 0..s.units.len() {
        if s.units[i].kind != UnitKind::Worker {
            continue;
        }
        let p = s.units[i].owner;
        if s.units[i].gather_cd == 0 {
            if s.node_supply[p] > 0 {
                s.node_supply[p] -= 1;
                s.resources[p] += 1;
                s.units[i].gather_cd = GATHER_PERIOD;
            }
        } else {
            s.units[i].gather_cd -= 1;
        }
    }
    // combat and movement, decided from a start-of-tick snapshot and
    // applied simultaneously
    let snap = s.units.clone();
    let mut damage: Vec<(u32, i32)> = Vec::new();
    for i in 0..s.units.len() {
        if !s.units[i].kind.mobile() {
            continue;
        }
        let u = snap.iter().find(|x| x.id == s.units[i].id).unwrap();
        match micro_decision(&snap, u, cmds[u.owner]) {
            Micro::Strike(target) => {
                damage.push((target, u.kind.attack()));
                s.units[i].attack_cd = u.kind.attack_period();
                s.units[i].move_cd = s.units[i].move_cd.saturating_sub(1);
            }
            Micro::MoveTo(to) => {
                if s.units[i].move_cd == 0 {
                    s.units[i].pos = step_toward(u.pos, to);
                    s.units[i].move_cd = MOVE_PERIOD;
                } else {
                    s.units[i].move_cd -= 1;
                }
                s.units[i].attack_cd = s.units[i].attack_cd.saturating_sub(1);
            }
            Micro::Flee(threat) => {
                if s.units[i].move_cd == 0 {
                    s.units[i].pos = step_away(u.pos, threat);
                    s.units[i].move_cd = MOVE_PERIOD;
                } else {
                    s.units[i].move_cd -= 1;
                }
                s.units[i].attack_cd = s.units[i].attack_cd.saturating_sub(1);
            }
            Micro::Hold => {
                s.units[i].attack_cd = s.units[i].attack_cd.saturating_sub(1);
                s.units[i].move_cd = s.units[i].move_cd.saturating_sub(1);
            }
        }
    }
    for (target, dmg) in damage {
        if let Some(v) = s.units.iter_mut().find(|x| x.id == target) {
            v.hp -= dmg;
        }
    }
    s.units.retain(|u| u.hp > 0);
    s.tick += 1;
    let alive = [s.base(0).is_some(), s.base(1).is_some()];
    match alive {
        [false, false] => Some([0.0, 0.0]),
        [false, true] => Some([-1.0, 1.0]),
        [true, false] => Some([1.0, -1.0]),
        [true, true] => {
            if s.tick >= TICK_LIMIT {
                Some([0.0, 0.0])
            } else {
                None
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct MicroRtsEnv {
    state: MicroRtsState,
    frame_skip: usize,
    started: bool,
    terminal: bool,
    result: [f64; 2],
}

impl MicroRtsEnv {
    pub fn new(frame_skip: usize) -> Self {
        MicroRtsEnv {
            state: MicroRtsState::initial(0),
            frame_skip: frame_skip.max(1),
            started: false,
            terminal: false,
            result: [0.0, 0.0],
        }
    }

    pub fn state(&self) -> &MicroRtsState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut MicroRtsState {
        &mut self.state
    }

    pub fn frame_skip(&self) -> usize {
        self.frame_skip
    }
}

impl GameEnv for MicroRtsEnv {
    fn id(&self) -> &'static str {
        "microrts"
    }

    fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    fn obs_shape(&self) -> InputShape {
        InputShape::Spatial { channels: CHANNELS, height: MAP as usize, width: MAP as usize }
    }

    fn reset(&mut self, seed: u64) -> Vec<Observation> {
        self.state = MicroRtsState::initial(seed);
        self.started = true;
        self.terminal = false;
        self.result = [0.0, 0.0];
        vec![encode_observation(&self.state, 0), encode_observation(&self.state, 1)]
    }

    fn is_terminal(&self) -> bool {
        self.terminal || !self.started
    }

    fn tick(&self) -> u64 {
        self.state.tick
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
        Ok(legal_mask(&self.state, player))
    }

    fn observe(&self, player: usize) -> Result<Observation, EnvError> {
        check_player(player)?;
        Ok(encode_observation(&self.state, player))
    }

    fn step(&mut self, actions: [Option<usize>; 2]) -> Result<Step, EnvError> {
        if self.is_terminal() {
            return Err(EnvError::StepAfterTerminal);
        }
        let mut cmds = [Command::Idle; 2];
        for p in 0..2 {
            let a = actions[p].ok_or(EnvError::MissingAction { player: p })?;
            let legal = legal_mask(&self.state, p);
            if a >= NUM_ACTIONS || !legal[a] {
                return Err(EnvError::IllegalAction { player: p, action: a });
            }
            cmds[p] = Command::from_index(a).unwrap();
        }
        for _ in 0..self.frame_skip {
            if let Some(result) = tick_once(&mut self.state, cmds) {
                self.terminal = true;
                self.result = result;
                break;
            }
        }
        Ok(Step {
            observations: vec![
                encode_observation(&self.state, 0),
                encode_observation(&self.state, 1),
            ],
            rewards: if self.terminal { self.result } else { [0.0, 0.0] },
            terminal: self.terminal,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel_sum(obs: &Observation, ch: usize) -> f64 {
        obs.features[ch * CELLS..(ch + 1) * CELLS].iter().sum()
    }

    #[test]
    fn spawns_are_point_mirrored() {
        for seed in 0..20 {
            let s = MicroRtsState::initial(seed);
            let b0 = s.base(0).unwrap().pos;
            let b1 = s.base(1).unwrap().pos;
            assert_eq!(b1, mirror(b0));
            assert_eq!(s.node_pos[1], mirror(s.node_pos[0]));
        }
    }

    #[test]
    fn initial_observation_hides_opponent_base() {
        for seed in 0..20 {
            let s = MicroRtsState::initial(seed);
            for p in 0..2 {
                let obs = encode_observation(&s, p);
                assert_eq!(channel_sum(&obs, CH_ENEMY_BASE), 0.0);
                assert_eq!(channel_sum(&obs, CH_ENEMY_WORKER), 0.0);
                assert_eq!(channel_sum(&obs, CH_OWN_BASE), 1.0);
                assert_eq!(channel_sum(&obs, CH_OWN_WORKER), 1.0);
            }
        }
    }

    #[test]
    fn own_worker_encodes_at_its_cell() {
        let s = MicroRtsState::initial(3);
        let obs = encode_observation(&s, 0);
        let (r, c) = s.base(0).unwrap().pos;
        let cell = (r * MAP + c) as usize;
        assert_eq!(obs.features[CH_OWN_WORKER * CELLS + cell], 1.0);
        assert_eq!(obs.features[CH_OWN_BASE * CELLS + cell], 1.0);
    }

    #[test]
    fn fogged_enemy_mutation_leaves_encoding_unchanged() {
        let mut s = MicroRtsState::initial(5);
        // enemy melee far outside player 0's vision
        s.spawn(1, UnitKind::Melee, (8, 8));
        let before = encode_observation(&s, 0);
        assert_eq!(channel_sum(&before, CH_ENEMY_MELEE), 0.0);
        let idx = s.units.len() - 1;
        s.units[idx].hp = 1;
        s.units[idx].pos = (9, 9);
        let after = encode_observation(&s, 0);
        assert_eq!(before.features, after.features);
    }

    #[test]
    fn enemy_entering_vision_radius_becomes_visible() {
        let mut s = MicroRtsState::initial(5);
        let home = s.base(0).unwrap().pos;
        let id = s.spawn(1, UnitKind::Melee, (9, 9));
        assert_eq!(channel_sum(&encode_observation(&s, 0), CH_ENEMY_MELEE), 0.0);
        let u = s.units.iter_mut().find(|u| u.id == id).unwrap();
        u.pos = (home.0 + VISION_RADIUS, home.1);
        let obs = encode_observation(&s, 0);
        assert_eq!(channel_sum(&obs, CH_ENEMY_MELEE), 1.0);
        assert_eq!(channel_sum(&obs, CH_ENEMY_HP), 1.0);
    }

    #[test]
    fn builds_masked_without_prerequisites() {
        let s = MicroRtsState::initial(0);
        let m = legal_mask(&s, 0);
        assert!(m[Command::BuildWorker.index()]);
        assert!(m[Command::BuildBarrack.index()]);
        assert!(!m[Command::BuildMelee.index()], "no barrack yet");
        assert!(!m[Command::BuildRange.index()]);
        assert!(m[Command::Idle.index()]);

        let mut poor = s.clone();
        poor.resources[0] = 0;
        let m = legal_mask(&poor, 0);
        assert!(!m[Command::BuildWorker.index()]);
        assert!(!m[Command::BuildBarrack.index()]);
        assert!(m[Command::Attack.index()]);
        assert!(m[Command::Idle.index()]);
    }

    #[test]
    fn idle_forever_draws_at_tick_limit() {
        let mut env = MicroRtsEnv::new(DEFAULT_FRAME_SKIP);
        env.reset(1);
        let idle = Command::Idle.index();
        let mut last = None;
        while !env.is_terminal() {
            last = Some(env.step([Some(idle), Some(idle)]).unwrap());
        }
        let step = last.unwrap();
        assert_eq!(step.rewards, [0.0, 0.0]);
        assert_eq!(env.tick(), TICK_LIMIT);
    }

    #[test]
    fn one_decision_spans_frame_skip_ticks() {
        let mut env = MicroRtsEnv::new(50);
        env.reset(2);
        env.step([Some(Command::Idle.index()), Some(Command::Idle.index())]).unwrap();
        assert_eq!(env.tick(), 50);
    }

    #[test]
    fn mirrored_commands_preserve_mirror_symmetry() {
        let mut env = MicroRtsEnv::new(50);
        env.reset(7);
        let script = [
            Command::BuildWorker,
            Command::BuildBarrack,
            Command::BuildMelee,
            Command::BuildMelee,
            Command::BuildRange,
            Command::Attack,
            Command::Attack,
            Command::AllDefend,
            Command::HitAndRun,
            Command::Attack,
        ];
        for cmd in script {
            if env.is_terminal() {
                break;
            }
            let mask = legal_mask(env.state(), 0);
            let a = if mask[cmd.index()] { cmd.index() } else { Command::Idle.index() };
            env.step([Some(a), Some(a)]).unwrap();
            let s = env.state();
            let mine: Vec<_> = s
                .units
                .iter()
                .filter(|u| u.owner == 0)
                .map(|u| (u.kind, u.pos, u.hp))
                .collect();
            let theirs: Vec<_> = s
                .units
                .iter()
                .filter(|u| u.owner == 1)
                .map(|u| (u.kind, mirror(u.pos), u.hp))
                .collect();
            assert_eq!(mine, theirs);
            assert_eq!(s.resources[0], s.resources[1]);
            let o0 = encode_observation(s, 0);
            let o1 = encode_observation(s, 1);
            assert_eq!(o0.features, o1.features);
            assert_eq!(o0.legal, o1.legal);
        }
    }

    #[test]
    fn build_order_rush_beats_idle_opponent() {
        let mut env = MicroRtsEnv::new(50);
        env.reset(4);
        let idle = Command::Idle.index();
        let mut result = None;
        for _ in 0..40 {
            let s = env.state();
            let mask = legal_mask(s, 0);
            let choice = if mask[Command::BuildWorker.index()]
                && s.count(0, UnitKind::Worker) < 3
            {
                Command::BuildWorker
            } else if mask[Command::BuildBarrack.index()] {
                Command::BuildBarrack
            } else if mask[Command::BuildMelee.index()] && s.army(0) < 5 {
                Command::BuildMelee
            } else if s.army(0) >= 5 {
                Command::Attack
            } else {
                Command::Idle
            };
            let step = env.step([Some(choice.index()), Some(idle)]).unwrap();
            if step.terminal {
                result = Some(step.rewards);
                break;
            }
        }
        assert_eq!(result, Some([1.0, -1.0]), "rush should destroy the idle base");
    }

    #[test]
    fn illegal_build_names_player_and_action() {
        let mut env = MicroRtsEnv::new(50);
        env.reset(0);
        let melee = Command::BuildMelee.index();
        match env.step([Some(melee), Some(Command::Idle.index())]) {
            Err(EnvError::IllegalAction { player: 0, action }) => assert_eq!(action, melee),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn production_chain_unlocks_attackers() {
        let mut env = MicroRtsEnv::new(50);
        env.reset(9);
        let idle = Command::Idle.index();
        env.step([Some(Command::BuildBarrack.index()), Some(idle)]).unwrap();
        // barrack takes 40 ticks: done within the first window
        assert_eq!(env.state().count(0, UnitKind::Barrack), 1);
        assert!(legal_mask(env.state(), 0)[Command::BuildMelee.index()]);
        env.step([Some(Command::BuildMelee.index()), Some(idle)]).unwrap();
        assert!(env.state().army(0) >= 1);
    }
}
