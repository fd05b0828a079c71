//! PPO best-response learner.
//!
//! Losses exist in two forms: plain scalar functions over slices (used by
//! tests and metrics) and tape graphs (used by [`ppo_update`] to obtain
//! gradients). Both call the same kernels and agree bit for bit.

use crate::nn::graph::{self, Shape, Tape};
use crate::nn::{clip_global_norm, sgd_step, GradientSet, Network, NnError, PolicyHead};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RlError {
    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch { what: &'static str, expected: usize, actual: usize },
    #[error("advantage batch needs at least 2 elements, got {0}")]
    BatchTooSmall(usize),
    #[error("stored policy probability for the taken action is not positive at row {row}")]
    ZeroOldProb { row: usize },
    #[error("invalid distribution at row {row}: {msg}")]
    BadDistribution { row: usize, msg: String },
    #[error("hyperparameter {field}: {msg}")]
    InvalidHyper { field: &'static str, msg: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// All scalar knobs in one place.
///
/// `eta` is the anticipatory mixing probability of the original formulation;
/// the process-role scheme used here keeps it for configuration completeness
/// but never reads it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Policy ratio clip ε.
    pub clip_eps: f64,
    /// Value clip ε_v.
    pub value_clip: f64,
    /// Entropy coefficient α.
    pub entropy_coef: f64,
    /// Value loss coefficient β.
    pub value_coef: f64,
    /// Discount γ.
    pub gamma: f64,
    /// Advantage decay k.
    pub gae_k: f64,
    pub rl_lr: f64,
    pub sl_lr: f64,
    /// Lanes per trajectory batch.
    pub batch_size: usize,
    /// Decisions per lane per batch (T).
    pub batch_time: usize,
    /// Engine ticks per decision.
    pub frame_skip: usize,
    pub games_per_process: usize,
    pub reservoir_capacity: usize,
    pub sl_sample: usize,
    pub eta: f64,
    pub max_grad_norm: f64,
    /// Gradient passes over one batch; 1 matches the single optimize call
    /// per accumulated batch.
    pub ppo_epochs: usize,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            clip_eps: 0.2,
            value_clip: 0.1,
            entropy_coef: 0.01,
            value_coef: 0.5,
            gamma: 0.99,
            gae_k: 0.95,
            rl_lr: 0.01,
            sl_lr: 0.001,
            batch_size: 128,
            batch_time: 50,
            frame_skip: 50,
            games_per_process: 512,
            reservoir_capacity: 1 << 17,
            sl_sample: 512,
            eta: 0.1,
            max_grad_norm: 0.5,
            ppo_epochs: 1,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<(), RlError> {
        let positive: [(&'static str, f64); 5] = [
            ("clip_eps", self.clip_eps),
            ("value_clip", self.value_clip),
            ("rl_lr", self.rl_lr),
            ("sl_lr", self.sl_lr),
            ("max_grad_norm", self.max_grad_norm),
        ];
        for (field, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(RlError::InvalidHyper { field, msg: format!("must be > 0, got {v}") });
            }
        }
        for (field, v) in [("gamma", self.gamma), ("gae_k", self.gae_k)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(RlError::InvalidHyper {
                    field,
                    msg: format!("must lie in (0, 1], got {v}"),
                });
            }
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(RlError::InvalidHyper {
                field: "eta",
                msg: format!("must lie in [0, 1], got {}", self.eta),
            });
        }
        for (field, v) in [("entropy_coef", self.entropy_coef), ("value_coef", self.value_coef)] {
            if !v.is_finite() || v < 0.0 {
                return Err(RlError::InvalidHyper { field, msg: format!("must be >= 0, got {v}") });
            }
        }
        let counts: [(&'static str, usize); 7] = [
            ("batch_size", self.batch_size),
            ("batch_time", self.batch_time),
            ("frame_skip", self.frame_skip),
            ("games_per_process", self.games_per_process),
            ("reservoir_capacity", self.reservoir_capacity),
            ("sl_sample", self.sl_sample),
            ("ppo_epochs", self.ppo_epochs),
        ];
        for (field, v) in counts {
            if v == 0 {
                return Err(RlError::InvalidHyper { field, msg: "must be >= 1".into() });
            }
        }
        Ok(())
    }
}

/// One lane of rollout data over a batch window.
///
/// `values` has one extra trailing entry: the bootstrap value of the state
/// after the last decision (0 if that decision ended the episode).
#[derive(Clone, Debug, Default)]
pub struct Lane {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    /// Full policy distribution at decision time.
    pub pis: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    pub terminals: Vec<bool>,
}

impl Lane {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Per-process rollout: {S, A, Π, R} sequences per lane plus value
/// predictions of the collecting network.
#[derive(Clone, Debug, Default)]
pub struct TrajectoryBatch {
    pub lanes: Vec<Lane>,
}

impl TrajectoryBatch {
    pub fn total_steps(&self) -> usize {
        self.lanes.iter().map(Lane::len).sum()
    }

    pub fn validate(&self) -> Result<(), RlError> {
        if self.lanes.is_empty() || self.total_steps() == 0 {
            return Err(RlError::EmptyBatch);
        }
        let mut row = 0usize;
        for lane in &self.lanes {
            let t = lane.len();
            for (what, len) in [
                ("lane states", lane.states.len()),
                ("lane pis", lane.pis.len()),
                ("lane rewards", lane.rewards.len()),
                ("lane terminals", lane.terminals.len()),
            ] {
                if len != t {
                    return Err(RlError::LengthMismatch { what, expected: t, actual: len });
                }
            }
            if lane.values.len() != t + 1 {
                return Err(RlError::LengthMismatch {
                    what: "lane values",
                    expected: t + 1,
                    actual: lane.values.len(),
                });
            }
            for (i, pi) in lane.pis.iter().enumerate() {
                check_distribution(pi, row + i)?;
                if !(pi[lane.actions[i]] > 0.0) {
                    return Err(RlError::ZeroOldProb { row: row + i });
                }
            }
            row += t;
        }
        Ok(())
    }
}

fn check_distribution(pi: &[f64], row: usize) -> Result<(), RlError> {
    if pi.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(RlError::BadDistribution { row, msg: "negative or non-finite entry".into() });
    }
    let s: f64 = pi.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(RlError::BadDistribution { row, msg: format!("sums to {s}") });
    }
    Ok(())
}

/// Truncated advantage estimate: Â_t = Σ_l k^l δ_{t+l} with
/// δ_t = r_t + γ V(s_{t+1}) − V(s_t), cut at terminals, and targets
/// V_target = Â + V. `values` carries the bootstrap entry at the end.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    terminals: &[bool],
    gamma: f64,
    k: f64,
) -> Result<(Vec<f64>, Vec<f64>), RlError> {
    let t = rewards.len();
    if terminals.len() != t {
        return Err(RlError::LengthMismatch { what: "terminals", expected: t, actual: terminals.len() });
    }
    if values.len() != t + 1 {
        return Err(RlError::LengthMismatch { what: "values", expected: t + 1, actual: values.len() });
    }
    let mut adv = vec![0.0; t];
    let mut carry = 0.0;
    for i in (0..t).rev() {
        let next_v = if terminals[i] { 0.0 } else { values[i + 1] };
        let delta = rewards[i] + gamma * next_v - values[i];
        carry = delta + if terminals[i] { 0.0 } else { k * carry };
        adv[i] = carry;
    }
    let targets = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, targets))
}

/// Batch standardization: (Â − mean) / (std + 1e-8) with population std.
pub fn normalize_advantages(adv: &[f64]) -> Result<Vec<f64>, RlError> {
    if adv.len() < 2 {
        return Err(RlError::BatchTooSmall(adv.len()));
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n;
    let denom = var.sqrt() + 1e-8;
    Ok(adv.iter().map(|a| (a - mean) / denom).collect())
}

/// Clipped surrogate, negated for minimization:
/// −mean_t[min(r_t Â_t, clip(r_t, 1−ε, 1+ε) Â_t)], r_t from stored old
/// probabilities.
pub fn ppo_policy_loss(
    new_dists: &[Vec<f64>],
    old_dists: &[Vec<f64>],
    actions: &[usize],
    adv: &[f64],
    eps: f64,
) -> Result<f64, RlError> {
    let n = new_dists.len();
    for (what, len) in
        [("old_dists", old_dists.len()), ("actions", actions.len()), ("advantages", adv.len())]
    {
        if len != n {
            return Err(RlError::LengthMismatch { what, expected: n, actual: len });
        }
    }
    if n == 0 {
        return Err(RlError::EmptyBatch);
    }
    let mut acc = 0.0;
    for i in 0..n {
        let a = actions[i];
        let old = old_dists[i][a];
        if !(old > 0.0) {
            return Err(RlError::ZeroOldProb { row: i });
        }
        let r = new_dists[i][a] / old;
        let unclipped = r * adv[i];
        let clipped = r.clamp(1.0 - eps, 1.0 + eps) * adv[i];
        acc += unclipped.min(clipped);
    }
    Ok(-(acc / n as f64))
}

/// Mean over the batch of Σ_a π log π; zero probabilities contribute zero.
pub fn entropy_term(dists: &[Vec<f64>]) -> f64 {
    if dists.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0;
    for row in dists {
        for &p in row {
            acc += p * p.max(graph::LOG_FLOOR).ln();
        }
    }
    acc / dists.len() as f64
}

/// mean(max((V_new − V_target)², (V_clip − V_target)²)) with
/// V_clip = clip(V_new − V_old, ±ε_v) + V_old.
pub fn clipped_value_loss(
    v_new: &[f64],
    v_old: &[f64],
    v_target: &[f64],
    eps_v: f64,
) -> Result<f64, RlError> {
    let n = v_new.len();
    for (what, len) in [("v_old", v_old.len()), ("v_target", v_target.len())] {
        if len != n {
            return Err(RlError::LengthMismatch { what, expected: n, actual: len });
        }
    }
    if n == 0 {
        return Err(RlError::EmptyBatch);
    }
    let mut acc = 0.0;
    for i in 0..n {
        let clipped = (v_new[i] - v_old[i]).clamp(-eps_v, eps_v) + v_old[i];
        let e_plain = (v_new[i] - v_target[i]).powi(2);
        let e_clip = (clipped - v_target[i]).powi(2);
        acc += e_plain.max(e_clip);
    }
    Ok(acc / n as f64)
}

/// Flattened view of a [`TrajectoryBatch`] with advantages and targets
/// resolved; shared by the update and by rollout consumers.
pub struct PreparedBatch {
    pub states: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub old_pis: Vec<Vec<f64>>,
    pub old_values: Vec<f64>,
    pub advantages: Vec<f64>,
    pub raw_advantages: Vec<f64>,
    pub value_targets: Vec<f64>,
}

pub fn prepare_batch(batch: &TrajectoryBatch, h: &Hyperparams) -> Result<PreparedBatch, RlError> {
    batch.validate()?;
    let total = batch.total_steps();
    let mut out = PreparedBatch {
        states: Vec::with_capacity(total),
        actions: Vec::with_capacity(total),
        old_pis: Vec::with_capacity(total),
        old_values: Vec::with_capacity(total),
        advantages: Vec::new(),
        raw_advantages: Vec::with_capacity(total),
        value_targets: Vec::with_capacity(total),
    };
    for lane in &batch.lanes {
        let (adv, targets) = compute_gae(&lane.rewards, &lane.values, &lane.terminals, h.gamma, h.gae_k)?;
        out.states.extend(lane.states.iter().cloned());
        out.actions.extend(lane.actions.iter().copied());
        out.old_pis.extend(lane.pis.iter().cloned());
        out.old_values.extend(lane.values[..lane.len()].iter().copied());
        out.raw_advantages.extend(adv);
        out.value_targets.extend(targets);
    }
    out.advantages = normalize_advantages(&out.raw_advantages)?;
    Ok(out)
}

/// Loss components and gradient diagnostics of one update.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct UpdateMetrics {
    pub l_policy: f64,
    pub l_entropy: f64,
    pub l_value: f64,
    pub grad_norm: f64,
    /// Mean |Â| before normalization.
    pub mean_abs_adv: f64,
    pub mean_ratio: f64,
}

/// Gradient of the combined objective L_policy + α L_entropy + β L_value
/// through the RL tower at the network's current parameters. No step is
/// taken and no clipping is applied; `grad_norm` in the returned metrics
/// is the raw norm, callers overwrite it after clipping.
pub fn ppo_gradient(
    net: &Network,
    prep: &PreparedBatch,
    h: &Hyperparams,
) -> Result<(GradientSet, UpdateMetrics), RlError> {
    let rows = prep.states.len();
    let mut tape = Tape::new();
    let body = graph::body_graph(&mut tape, net, graph::Tower::Rl, &prep.states);
    let pi = graph::policy_graph(&mut tape, net, PolicyHead::Rl, body);
    let v = graph::value_graph(&mut tape, net, body);

    let inv_old: Vec<f64> =
        (0..rows).map(|i| 1.0 / prep.old_pis[i][prep.actions[i]]).collect();
    let col = |v: Vec<f64>| Shape::Mat { rows: v.len(), cols: 1 };
    let shape_inv = col(inv_old.clone());
    let c_inv_old = tape.value(inv_old, shape_inv);
    let c_adv = tape.value(prep.advantages.clone(), Shape::Mat { rows, cols: 1 });
    let picked = tape.gather_cols(pi, &prep.actions);
    let ratio = tape.mul(picked, c_inv_old);
    let unclipped = tape.mul(ratio, c_adv);
    let rclip = tape.clip_const(ratio, 1.0 - h.clip_eps, 1.0 + h.clip_eps);
    let clipped = tape.mul(rclip, c_adv);
    let surr = tape.min(unclipped, clipped);
    let surr_mean = tape.mean_all(surr);
    let l_policy = tape.scale(surr_mean, -1.0);

    let logp = tape.log_floor(pi);
    let plogp = tape.mul(pi, logp);
    let ent_rows = tape.sum_rows(plogp);
    let l_entropy = tape.mean_all(ent_rows);

    let c_vold = tape.value(prep.old_values.clone(), Shape::Mat { rows, cols: 1 });
    let c_vtarget = tape.value(prep.value_targets.clone(), Shape::Mat { rows, cols: 1 });
    let dv = tape.sub(v, c_vold);
    let dv_clip = tape.clip_const(dv, -h.value_clip, h.value_clip);
    let v_clip = tape.add(dv_clip, c_vold);
    let err_plain = tape.sub(v, c_vtarget);
    let err_plain = tape.square(err_plain);
    let err_clip = tape.sub(v_clip, c_vtarget);
    let err_clip = tape.square(err_clip);
    let worst = tape.max(err_plain, err_clip);
    let l_value = tape.mean_all(worst);

    let ent_scaled = tape.scale(l_entropy, h.entropy_coef);
    let val_scaled = tape.scale(l_value, h.value_coef);
    let partial = tape.add(ent_scaled, val_scaled);
    let total = tape.add(l_policy, partial);

    let grads = tape.backward(net, total)?;
    let mean_ratio = tape.val(ratio).iter().sum::<f64>() / rows as f64;
    let mean_abs_adv = prep.raw_advantages.iter().map(|a| a.abs()).sum::<f64>() / rows as f64;
    let metrics = UpdateMetrics {
        l_policy: tape.scalar(l_policy),
        l_entropy: tape.scalar(l_entropy),
        l_value: tape.scalar(l_value),
        grad_norm: grads.norm(),
        mean_abs_adv,
        mean_ratio,
    };
    Ok((grads, metrics))
}

/// One combined gradient step on L_policy + α L_entropy + β L_value through
/// the RL tower, repeated for `ppo_epochs` epochs over the same batch.
/// Reported metrics come from the first gradient evaluation.
pub fn ppo_update(
    net: &mut Network,
    batch: &TrajectoryBatch,
    h: &Hyperparams,
) -> Result<UpdateMetrics, RlError> {
    h.validate()?;
    let prep = prepare_batch(batch, h)?;
    let mut metrics = UpdateMetrics::default();
    for epoch in 0..h.ppo_epochs {
        let (grads, m) = ppo_gradient(net, &prep, h)?;
        let clipped_grads = clip_global_norm(&grads, h.max_grad_norm)?;
        if epoch == 0 {
            metrics = m;
            metrics.grad_norm = clipped_grads.norm();
        }
        sgd_step(net, &clipped_grads, h.rl_lr)?;
    }
    Ok(metrics)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, ArchSpec};

    fn row(v: &[f64]) -> Vec<Vec<f64>> {
        vec![v.to_vec()]
    }

    #[test]
    fn gae_zero_case() {
        let (adv, tgt) = compute_gae(&[0.0; 4], &[0.0; 5], &[false; 4], 0.99, 0.95).unwrap();
        assert!(adv.iter().all(|&a| a == 0.0));
        assert!(tgt.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn gae_single_terminal_step() {
        let (adv, tgt) = compute_gae(&[1.0], &[0.0, 0.0], &[true], 0.99, 0.95).unwrap();
        assert!((adv[0] - 1.0).abs() < 1e-15);
        assert!((tgt[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gae_two_step_hand_case() {
        // δ0 = 0 + 0.5 − 0.5 = 0, δ1 = 1 + 0 − 0.5 = 0.5, Â = (0.5, 0.5)
        let (adv, tgt) =
            compute_gae(&[0.0, 1.0], &[0.5, 0.5, 0.0], &[false, false], 1.0, 1.0).unwrap();
        assert!((adv[0] - 0.5).abs() < 1e-15);
        assert!((adv[1] - 0.5).abs() < 1e-15);
        assert!((tgt[0] - 1.0).abs() < 1e-15);
        assert!((tgt[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gae_k_zero_is_one_step_td() {
        let rewards = [0.3, -0.2, 1.0, 0.0];
        let values = [0.1, -0.4, 0.2, 0.9, 0.5];
        let terminals = [false, false, true, false];
        let (adv, _) = compute_gae(&rewards, &values, &terminals, 0.9, 0.0).unwrap();
        for i in 0..4 {
            let next = if terminals[i] { 0.0 } else { values[i + 1] };
            let delta = rewards[i] + 0.9 * next - values[i];
            assert!((adv[i] - delta).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_k_one_gamma_one_telescopes() {
        // with k = γ = 1 and no terminal, Â_t = Σ future rewards + bootstrap − V_t
        let rewards = [0.5, -1.0, 2.0];
        let values = [0.3, 0.1, -0.2, 0.7];
        let (adv, _) = compute_gae(&rewards, &values, &[false; 3], 1.0, 1.0).unwrap();
        for t in 0..3 {
            let ret: f64 = rewards[t..].iter().sum::<f64>() + values[3];
            assert!((adv[t] - (ret - values[t])).abs() < 1e-12);
        }
    }

    #[test]
    fn gae_matches_direct_summation() {
        // brute-force Σ_l k^l δ_{t+l} against the recursion, random inputs
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(99);
        for _ in 0..50 {
            let t = rng.gen_range(1..=50);
            let rewards: Vec<f64> = (0..t).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let values: Vec<f64> = (0..=t).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let terminals: Vec<bool> = (0..t).map(|_| rng.gen_bool(0.2)).collect();
            let gamma = rng.gen_range(0.5..1.0);
            let k = rng.gen_range(0.0..1.0f64);
            let (adv, _) = compute_gae(&rewards, &values, &terminals, gamma, k).unwrap();
            for start in 0..t {
                let mut expect = 0.0;
                let mut weight = 1.0;
                for i in start..t {
                    let next = if terminals[i] { 0.0 } else { values[i + 1] };
                    expect += weight * (rewards[i] + gamma * next - values[i]);
                    if terminals[i] {
                        break;
                    }
                    weight *= k;
                }
                assert!((adv[start] - expect).abs() < 1e-10, "t={start}");
            }
        }
    }

    #[test]
    fn gae_rejects_bad_lengths() {
        assert!(compute_gae(&[1.0], &[0.0], &[true], 0.9, 0.9).is_err());
        assert!(compute_gae(&[1.0], &[0.0, 0.0], &[true, false], 0.9, 0.9).is_err());
    }

    #[test]
    fn normalize_hand_cases() {
        let out = normalize_advantages(&[1.0, -1.0]).unwrap();
        // mean 0, std 1, epsilon guard shifts by 1e-8
        let expect = 1.0 / (1.0 + 1e-8);
        assert!((out[0] - expect).abs() < 1e-15);
        assert!((out[1] + expect).abs() < 1e-15);

        let out = normalize_advantages(&[2.0, 4.0]).unwrap();
        assert!((out[0] + expect).abs() < 1e-15);
        assert!((out[1] - expect).abs() < 1e-15);
        assert!((out[0] + 1.0).abs() < 1e-6 && (out[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn normalize_constant_batch_is_zero() {
        let out = normalize_advantages(&[3.0, 3.0, 3.0]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_statistics() {
        let adv: Vec<f64> = (0..100).map(|i| (i as f64) * 0.37 - 5.0).collect();
        let out = normalize_advantages(&adv).unwrap();
        let n = out.len() as f64;
        let mean = out.iter().sum::<f64>() / n;
        let std = (out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        assert!(mean.abs() <= 1e-9);
        assert!((std - 1.0).abs() <= 1e-6);
    }

    #[test]
    fn normalize_rejects_singleton() {
        assert!(normalize_advantages(&[1.0]).is_err());
    }

    #[test]
    fn policy_loss_identity_ratio() {
        let dist = row(&[0.4, 0.6]);
        let l = ppo_policy_loss(&dist, &dist, &[1], &[0.7], 0.2).unwrap();
        assert!((l + 0.7).abs() < 1e-12);
    }

    #[test]
    fn policy_loss_clips_high_ratio() {
        // r = 1.5, ε = 0.2, Â = 1 → min(1.5, 1.2) = 1.2
        let new = row(&[0.75, 0.25]);
        let old = row(&[0.5, 0.5]);
        let l = ppo_policy_loss(&new, &old, &[0], &[1.0], 0.2).unwrap();
        assert!((l + 1.2).abs() < 1e-12);
    }

    #[test]
    fn policy_loss_clips_low_ratio_negative_adv() {
        // r = 0.5, ε = 0.2, Â = −1 → min(−0.5, −0.8) = −0.8
        let new = row(&[0.25, 0.75]);
        let old = row(&[0.5, 0.5]);
        let l = ppo_policy_loss(&new, &old, &[0], &[-1.0], 0.2).unwrap();
        assert!((l - 0.8).abs() < 1e-12);
    }

    #[test]
    fn policy_loss_invariant_inside_clip_region() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(5);
        for _ in 0..100 {
            let old_p = rng.gen_range(0.3..0.7);
            let ratio = rng.gen_range(0.85..1.15);
            let new_p: f64 = old_p * ratio;
            let new = row(&[new_p, 1.0 - new_p]);
            let old = row(&[old_p, 1.0 - old_p]);
            let adv = rng.gen_range(-2.0..2.0);
            let clipped = ppo_policy_loss(&new, &old, &[0], &[adv], 0.2).unwrap();
            assert!((clipped + ratio * adv).abs() < 1e-9);
        }
    }

    #[test]
    fn policy_loss_rejects_zero_old_prob() {
        let new = row(&[0.5, 0.5]);
        let old = row(&[0.0, 1.0]);
        assert!(matches!(
            ppo_policy_loss(&new, &old, &[0], &[1.0], 0.2),
            Err(RlError::ZeroOldProb { row: 0 })
        ));
    }

    #[test]
    fn entropy_closed_forms() {
        let one_hot = row(&[0.0, 1.0, 0.0]);
        assert_eq!(entropy_term(&one_hot), 0.0);

        let uniform9 = row(&[1.0 / 9.0; 9]);
        assert!((entropy_term(&uniform9) + (9.0f64).ln()).abs() < 1e-12);

        let half = row(&[0.5, 0.5]);
        assert!((entropy_term(&half) + (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_is_nonpositive() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(17);
        for _ in 0..200 {
            let mut p: Vec<f64> = (0..5).map(|_| rng.gen_range(0.001..1.0)).collect();
            let s: f64 = p.iter().sum();
            for v in &mut p {
                *v /= s;
            }
            assert!(entropy_term(&[p]) <= 0.0);
        }
    }

    #[test]
    fn value_loss_zero_case() {
        let l = clipped_value_loss(&[1.0, -0.5], &[1.0, -0.5], &[1.0, -0.5], 0.1).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn value_loss_hand_case() {
        // V_old = 0, V_new = 0.5, ε_v = 0.1, target = 1:
        // plain err (0.5−1)² = 0.25; clip err (0.1−1)² = 0.81 → 0.81
        let l = clipped_value_loss(&[0.5], &[0.0], &[1.0], 0.1).unwrap();
        assert!((l - 0.81).abs() < 1e-12);
    }

    #[test]
    fn value_loss_clip_inactive_region() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(23);
        for _ in 0..100 {
            let v_old = rng.gen_range(-1.0..1.0);
            let v_new = v_old + rng.gen_range(-0.1..0.1);
            let tgt = rng.gen_range(-1.0..1.0);
            let l = clipped_value_loss(&[v_new], &[v_old], &[tgt], 0.1).unwrap();
            assert!((l - (v_new - tgt) * (v_new - tgt)).abs() < 1e-12);
        }
    }

    #[test]
    fn value_loss_dominates_min_of_branches() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(29);
        for _ in 0..200 {
            let v_old = rng.gen_range(-1.0..1.0);
            let v_new = rng.gen_range(-1.5..1.5);
            let tgt = rng.gen_range(-1.5..1.5);
            let eps_v = 0.1;
            let l = clipped_value_loss(&[v_new], &[v_old], &[tgt], eps_v).unwrap();
            let plain = (v_new - tgt) * (v_new - tgt);
            let vc = (v_new - v_old).clamp(-eps_v, eps_v) + v_old;
            let cl = (vc - tgt) * (vc - tgt);
            assert!(l >= plain.min(cl) - 1e-12);
            if (v_new - v_old).abs() <= eps_v {
                assert!((l - plain).abs() < 1e-12);
            }
        }
    }

    fn toy_batch(net: &Network, t: usize, seed: u64) -> TrajectoryBatch {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
        let mut lane = Lane::default();
        for _ in 0..t {
            let s: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pi = net.policy_row(PolicyHead::Rl, &s).unwrap();
            let v = net.forward(&[s.clone()], crate::nn::HeadSet::rl()).unwrap().v_rl.unwrap()[0];
            let a = if rng.gen_bool(pi[0]) { 0 } else { 1 };
            lane.states.push(s);
            lane.actions.push(a);
            lane.pis.push(pi);
            lane.rewards.push(rng.gen_range(-1.0..1.0));
            lane.values.push(v);
            lane.terminals.push(rng.gen_bool(0.3));
        }
        lane.values.push(0.0);
        TrajectoryBatch { lanes: vec![lane] }
    }

    #[test]
    fn ppo_update_composite_matches_hand_sum() {
        let spec = ArchSpec::mlp(4, 8, 1, 2);
        let mut net = build_network(&spec, 3).unwrap();
        let h = Hyperparams { batch_size: 1, batch_time: 8, ..Default::default() };
        let batch = toy_batch(&net, 8, 11);
        let prep = prepare_batch(&batch, &h).unwrap();
        let out = net.forward(&prep.states, crate::nn::HeadSet::rl()).unwrap();
        let new_dists = out.pi_rl.unwrap();
        let v_new = out.v_rl.unwrap();
        let lp = ppo_policy_loss(&new_dists, &prep.old_pis, &prep.actions, &prep.advantages, h.clip_eps)
            .unwrap();
        let le = entropy_term(&new_dists);
        let lv = clipped_value_loss(&v_new, &prep.old_values, &prep.value_targets, h.value_clip)
            .unwrap();
        let m = ppo_update(&mut net, &batch, &h).unwrap();
        assert!((m.l_policy - lp).abs() < 1e-12);
        assert!((m.l_entropy - le).abs() < 1e-12);
        assert!((m.l_value - lv).abs() < 1e-12);
        // batch collected at the current parameters: every ratio is exactly 1
        assert!((m.mean_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ppo_update_moves_only_rl_tower() {
        let spec = ArchSpec::mlp(4, 8, 2, 2);
        let mut net = build_network(&spec, 21).unwrap();
        let before = net.params().to_vec();
        let batch = toy_batch(&net, 6, 31);
        let h = Hyperparams::default();
        ppo_update(&mut net, &batch, &h).unwrap();
        let sl = net.sl_tower_range();
        assert_eq!(&net.params()[sl.clone()], &before[sl]);
        let rl = net.rl_tower_range();
        assert_ne!(&net.params()[rl.clone()], &before[rl]);
    }

    #[test]
    fn ppo_update_direction_matches_finite_differences() {
        // single effective parameter: freeze everything except one weight and
        // compare the update sign with a central-difference slope
        let spec = ArchSpec::mlp(4, 0, 0, 2);
        let mut net = build_network(&spec, 7).unwrap();
        let batch = toy_batch(&net, 10, 13);
        let h = Hyperparams { rl_lr: 1e-3, ..Default::default() };
        let prep = prepare_batch(&batch, &h).unwrap();
        let loss_at = |n: &Network| {
            let out = n.forward(&prep.states, crate::nn::HeadSet::rl()).unwrap();
            let pi = out.pi_rl.unwrap();
            let v = out.v_rl.unwrap();
            let lp =
                ppo_policy_loss(&pi, &prep.old_pis, &prep.actions, &prep.advantages, h.clip_eps)
                    .unwrap();
            let le = entropy_term(&pi);
            let lv =
                clipped_value_loss(&v, &prep.old_values, &prep.value_targets, h.value_clip).unwrap();
            lp + h.entropy_coef * le + h.value_coef * lv
        };
        let fd = crate::nn::graph::finite_difference(&net, loss_at, 1e-5);
        let before = net.params().to_vec();
        ppo_update(&mut net, &batch, &h).unwrap();
        let mut checked = 0;
        for i in 0..net.param_count() {
            let delta = net.params()[i] - before[i];
            if fd[i].abs() > 1e-6 && delta != 0.0 {
                assert_eq!(delta.signum(), -fd[i].signum(), "param {i}");
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn clipped_gradient_equals_plain_policy_gradient_at_unit_ratio() {
        // when every ratio is 1 the clipped surrogate and the plain
        // −mean(r·Â) estimator have identical gradients
        let spec = ArchSpec::mlp(4, 6, 1, 3);
        let net = build_network(&spec, 15).unwrap();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(44);
        let states: Vec<Vec<f64>> =
            (0..12).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let actions: Vec<usize> = (0..12).map(|_| rng.gen_range(0..3)).collect();
        let adv: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let old = net.forward(&states, crate::nn::HeadSet::pi_rl()).unwrap().pi_rl.unwrap();

        let mut tape = Tape::new();
        let body = graph::body_graph(&mut tape, &net, graph::Tower::Rl, &states);
        let pi = graph::policy_graph(&mut tape, &net, PolicyHead::Rl, body);
        let inv: Vec<f64> = (0..12).map(|i| 1.0 / old[i][actions[i]]).collect();
        let c_inv = tape.value(inv.clone(), Shape::Mat { rows: 12, cols: 1 });
        let c_adv = tape.value(adv.clone(), Shape::Mat { rows: 12, cols: 1 });
        let picked = tape.gather_cols(pi, &actions);
        let ratio = tape.mul(picked, c_inv);
        let unclipped = tape.mul(ratio, c_adv);
        let rclip = tape.clip_const(ratio, 0.8, 1.2);
        let clipped = tape.mul(rclip, c_adv);
        let surr = tape.min(unclipped, clipped);
        let m = tape.mean_all(surr);
        let l_clip = tape.scale(m, -1.0);
        let g_clip = tape.backward(&net, l_clip).unwrap();

        let mut tape = Tape::new();
        let body = graph::body_graph(&mut tape, &net, graph::Tower::Rl, &states);
        let pi = graph::policy_graph(&mut tape, &net, PolicyHead::Rl, body);
        let c_inv = tape.value(inv, Shape::Mat { rows: 12, cols: 1 });
        let c_adv = tape.value(adv, Shape::Mat { rows: 12, cols: 1 });
        let picked = tape.gather_cols(pi, &actions);
        let ratio = tape.mul(picked, c_inv);
        let weighted = tape.mul(ratio, c_adv);
        let m = tape.mean_all(weighted);
        let l_plain = tape.scale(m, -1.0);
        let g_plain = tape.backward(&net, l_plain).unwrap();

        for (a, b) in g_clip.values().iter().zip(g_plain.values()) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn hyperparams_validation() {
        assert!(Hyperparams::default().validate().is_ok());
        let mut h = Hyperparams::default();
        h.gamma = 1.5;
        let err = h.validate().unwrap_err();
        assert!(err.to_string().contains("gamma"));
        let mut h = Hyperparams::default();
        h.clip_eps = 0.0;
        assert!(h.validate().is_err());
        let mut h = Hyperparams::default();
        h.eta = -0.1;
        assert!(h.validate().is_err());
        let mut h = Hyperparams::default();
        h.batch_size = 0;
        assert!(h.validate().is_err());
    }

    #[test]
    fn batch_validation_catches_misalignment() {
        let mut batch = TrajectoryBatch::default();
        let mut lane = Lane::default();
        lane.states.push(vec![0.0; 4]);
        lane.actions.push(0);
        lane.pis.push(vec![0.5, 0.5]);
        lane.rewards.push(0.0);
        lane.terminals.push(false);
        lane.values.push(0.0);
        batch.lanes.push(lane);
        // missing bootstrap value entry
        assert!(batch.validate().is_err());
        batch.lanes[0].values.push(0.0);
        assert!(batch.validate().is_ok());
        batch.lanes[0].pis[0] = vec![0.9, 0.3];
        assert!(batch.validate().is_err());
    }
}
