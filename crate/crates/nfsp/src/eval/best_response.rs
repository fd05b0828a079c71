//! Exact best response and NashConv on enumerable game trees.
//!
//! The tree walk handles imperfect information: the responder's decision
//! nodes are grouped by information set, each set picks one action by
//! argmax of child values weighted by opponent-and-chance reach, and sets
//! are resolved deepest first so every child subtree is already pure.

use super::{masked_distribution, EvalError, StrategyProfile, TableProfile};
use crate::envs::kuhn::{deals, KuhnEnv};
use crate::envs::{GameEnv, MatrixEnv, Observation};
use std::collections::HashMap;

#[derive(Clone, Debug)]
pub enum TreeNode {
    Chance { children: Vec<(f64, usize)> },
    Decision { player: usize, obs: Observation, actions: Vec<usize>, children: Vec<usize>, depth: usize },
    Terminal { rewards: [f64; 2] },
}

/// A fully enumerated two-player zero-sum game tree.
#[derive(Clone, Debug)]
pub struct EnumGame {
    pub nodes: Vec<TreeNode>,
    pub root: usize,
}

/// Enumerate a named environment, or explain that it cannot be done.
pub fn enumerate_game(name: &str) -> Result<EnumGame, EvalError> {
    match name {
        "kuhn" => Ok(kuhn_game()),
        "pennies" => Ok(matrix_game(&MatrixEnv::biased_pennies())),
        "matching-pennies" => Ok(matrix_game(&MatrixEnv::matching_pennies())),
        "rps" => Ok(matrix_game(&MatrixEnv::rps())),
        other => Err(EvalError::Unenumerable(other.to_string())),
    }
}

/// Kuhn poker: a uniform chance node over the six deals, then the betting
/// tree of each deal, sharing observations across deals exactly as the
/// environment encodes them.
pub fn kuhn_game() -> EnumGame {
    fn build(nodes: &mut Vec<TreeNode>, env: &KuhnEnv, depth: usize) -> usize {
        let player = env.acting_players()[0];
        let obs = env.observe(player).unwrap();
        let actions: Vec<usize> = (0..obs.legal.len()).filter(|&a| obs.legal[a]).collect();
        let mut children = Vec::with_capacity(actions.len());
        for &a in &actions {
            let mut next = env.clone();
            let mut slots = [None, None];
            slots[player] = Some(a);
            let step = next.step(slots).unwrap();
            if step.terminal {
                nodes.push(TreeNode::Terminal { rewards: step.rewards });
                children.push(nodes.len() - 1);
            } else {
                children.push(build(nodes, &next, depth + 1));
            }
        }
        nodes.push(TreeNode::Decision { player, obs, actions, children, depth });
        nodes.len() - 1
    }

    let mut nodes = Vec::new();
    let mut children = Vec::with_capacity(6);
    for (c0, c1) in deals() {
        let env = KuhnEnv::with_deal(c0, c1);
        children.push((1.0 / 6.0, build(&mut nodes, &env, 1)));
    }
    nodes.push(TreeNode::Chance { children });
    let root = nodes.len() - 1;
    EnumGame { nodes, root }
}

/// A one-shot simultaneous matrix game serialized into two sequential
/// decisions; the second player's observation is identical across the
/// first player's choices, which is exactly the information set.
pub fn matrix_game(matrix: &MatrixEnv) -> EnumGame {
    let mut env = matrix.clone();
    env.reset(0);
    let obs0 = env.observe(0).unwrap();
    let obs1 = env.observe(1).unwrap();
    let n = matrix.payoff().len();
    let actions: Vec<usize> = (0..n).collect();
    let mut nodes = Vec::new();
    let mut top_children = Vec::with_capacity(n);
    for a0 in 0..n {
        let mut children = Vec::with_capacity(n);
        for a1 in 0..n {
            let r0 = matrix.payoff()[a0][a1];
            nodes.push(TreeNode::Terminal { rewards: [r0, -r0] });
            children.push(nodes.len() - 1);
        }
        nodes.push(TreeNode::Decision {
            player: 1,
            obs: obs1.clone(),
            actions: actions.clone(),
            children,
            depth: 1,
        });
        top_children.push(nodes.len() - 1);
    }
    nodes.push(TreeNode::Decision {
        player: 0,
        obs: obs0,
        actions,
        children: top_children,
        depth: 0,
    });
    let root = nodes.len() - 1;
    EnumGame { nodes, root }
}

// per-node opponent/chance-facing action distribution aligned to
// node.actions; None for chance, terminal, and responder nodes
fn node_distributions(
    game: &EnumGame,
    profile: &dyn StrategyProfile,
    skip_player: Option<usize>,
) -> Result<Vec<Option<Vec<f64>>>, EvalError> {
    let mut dists = vec![None; game.nodes.len()];
    for (i, node) in game.nodes.iter().enumerate() {
        if let TreeNode::Decision { player, obs, actions, .. } = node {
            if skip_player == Some(*player) {
                continue;
            }
            let full = profile.policy(obs)?;
            if full.len() != obs.legal.len() {
                return Err(EvalError::BadProfile(format!(
                    "profile returned {} probabilities for {} actions",
                    full.len(),
                    obs.legal.len()
                )));
            }
            if full.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(EvalError::BadProfile(
                    "negative or non-finite action probability".to_string(),
                ));
            }
            let (masked, _) = masked_distribution(&full, &obs.legal);
            dists[i] = Some(actions.iter().map(|&a| masked[a]).collect());
        }
    }
    Ok(dists)
}

fn node_value(
    game: &EnumGame,
    dists: &[Option<Vec<f64>>],
    choices: &HashMap<Vec<u64>, usize>,
    player: usize,
    node: usize,
) -> f64 {
    match &game.nodes[node] {
        TreeNode::Terminal { rewards } => rewards[player],
        TreeNode::Chance { children } => children
            .iter()
            .map(|&(p, c)| p * node_value(game, dists, choices, player, c))
            .sum(),
        TreeNode::Decision { player: p, obs, children, .. } => {
            if *p == player {
                let key = infoset_key(obs);
                let k = choices[&key];
                node_value(game, dists, choices, player, children[k])
            } else {
                let dist = dists[node].as_ref().unwrap();
                dist.iter()
                    .zip(children)
                    .map(|(&w, &c)| w * node_value(game, dists, choices, player, c))
                    .sum()
            }
        }
    }
}

/// Identity of an information set: the acting player and the exact bit
/// pattern of the observation encoding.
pub fn infoset_key(obs: &Observation) -> Vec<u64> {
    let mut key = Vec::with_capacity(obs.features.len() + obs.legal.len() + 1);
    key.push(obs.player as u64);
    key.extend(obs.features.iter().map(|x| x.to_bits()));
    key.extend(obs.legal.iter().map(|&l| l as u64));
    key
}

/// Exact best response of `player` against the rest of `profile`.
/// Returns the best-response value and the pure best-response strategy as
/// a table over the player's information sets.
pub fn exact_best_response(
    game: &EnumGame,
    profile: &dyn StrategyProfile,
    player: usize,
) -> Result<(f64, TableProfile), EvalError> {
    let dists = node_distributions(game, profile, Some(player))?;

    // opponent-and-chance reach of every node; the responder's own
    // choices do not discount reach
    let mut reach = vec![0.0; game.nodes.len()];
    let mut stack = vec![(game.root, 1.0)];
    while let Some((node, r)) = stack.pop() {
        reach[node] += r;
        match &game.nodes[node] {
            TreeNode::Terminal { .. } => {}
            TreeNode::Chance { children } => {
                for &(p, c) in children {
                    stack.push((c, r * p));
                }
            }
            TreeNode::Decision { player: p, children, .. } => {
                if *p == player {
                    for &c in children {
                        stack.push((c, r));
                    }
                } else {
                    let dist = dists[node].as_ref().unwrap();
                    for (&w, &c) in dist.iter().zip(children) {
                        stack.push((c, r * w));
                    }
                }
            }
        }
    }

    // group the responder's nodes by information set
    let mut groups: HashMap<Vec<u64>, (usize, Vec<usize>)> = HashMap::new();
    for (i, node) in game.nodes.iter().enumerate() {
        if let TreeNode::Decision { player: p, obs, depth, .. } = node {
            if *p == player {
                let entry = groups.entry(infoset_key(obs)).or_insert((*depth, Vec::new()));
                debug_assert_eq!(entry.0, *depth, "information set spans depths");
                entry.1.push(i);
            }
        }
    }
    let mut ordered: Vec<(Vec<u64>, (usize, Vec<usize>))> = groups.into_iter().collect();
    ordered.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then_with(|| a.0.cmp(&b.0)));

    let mut choices: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut table = TableProfile::new();
    for (key, (_, members)) in &ordered {
        let (actions, obs) = match &game.nodes[members[0]] {
            TreeNode::Decision { actions, obs, .. } => (actions.clone(), obs.clone()),
            _ => unreachable!(),
        };
        let mut best = (0usize, f64::NEG_INFINITY);
        for k in 0..actions.len() {
            let mut score = 0.0;
            for &m in members {
                let child = match &game.nodes[m] {
                    TreeNode::Decision { children, .. } => children[k],
                    _ => unreachable!(),
                };
                score += reach[m] * node_value(game, &dists, &choices, player, child);
            }
            if score > best.1 {
                best = (k, score);
            }
        }
        choices.insert(key.clone(), best.0);
        let mut pure = vec![0.0; obs.legal.len()];
        pure[actions[best.0]] = 1.0;
        table.set(&obs, pure);
    }

    let value = node_value(game, &dists, &choices, player, game.root);
    Ok((value, table))
}

/// Expected payoff of both players when everyone follows `profile`.
pub fn expected_values(
    game: &EnumGame,
    profile: &dyn StrategyProfile,
) -> Result<[f64; 2], EvalError> {
    let dists = node_distributions(game, profile, None)?;
    fn walk(game: &EnumGame, dists: &[Option<Vec<f64>>], node: usize) -> [f64; 2] {
        match &game.nodes[node] {
            TreeNode::Terminal { rewards } => *rewards,
            TreeNode::Chance { children } => {
                let mut v = [0.0, 0.0];
                for &(p, c) in children {
                    let cv = walk(game, dists, c);
                    v[0] += p * cv[0];
                    v[1] += p * cv[1];
                }
                v
            }
            TreeNode::Decision { children, .. } => {
                let dist = dists[node].as_ref().unwrap();
                let mut v = [0.0, 0.0];
                for (&w, &c) in dist.iter().zip(children) {
                    let cv = walk(game, dists, c);
                    v[0] += w * cv[0];
                    v[1] += w * cv[1];
                }
                v
            }
        }
    }
    Ok(walk(game, &dists, game.root))
}

/// NashConv: the total incentive to deviate, zero exactly at equilibrium.
pub fn exploitability(game: &EnumGame, profile: &dyn StrategyProfile) -> Result<f64, EvalError> {
    let achieved = expected_values(game, profile)?;
    let (b0, _) = exact_best_response(game, profile, 0)?;
    let (b1, _) = exact_best_response(game, profile, 1)?;
    Ok((b0 - achieved[0]) + (b1 - achieved[1]))
}
