//! Average-strategy learner.
//!
//! A reservoir buffer keeps a uniform sample of every (state, Π) pair the
//! RL policy has produced; the SL head is trained toward those stored
//! distributions by cross-entropy, which makes it track the average of the
//! past RL strategies.

use crate::nn::graph::{self, Shape, Tape, LOG_FLOOR};
use crate::nn::{clip_global_norm, sgd_step, Network, NnError, PolicyHead};
use crate::rl::Hyperparams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SlError {
    #[error("reservoir capacity must be >= 1")]
    ZeroCapacity,
    #[error("sample from an empty reservoir buffer; skip the update")]
    EmptyBuffer,
    #[error("item distribution invalid: {0}")]
    BadDistribution(String),
    #[error("{what}: expected length {expected}, got {actual}")]
    LengthMismatch { what: &'static str, expected: usize, actual: usize },
    #[error("snapshot io: {0}")]
    Io(#[from] std::io::Error),
    #[error("snapshot format: {0}")]
    Format(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// One stored experience: state features and the full RL distribution.
pub type StoredItem = (Vec<f64>, Vec<f64>);

/// Fixed-capacity uniform sample over an unbounded offer stream.
#[derive(Clone, Debug)]
pub struct ReservoirBuffer {
    capacity: usize,
    offered: u64,
    items: Vec<StoredItem>,
    rng: ChaCha20Rng,
}

impl ReservoirBuffer {
    pub fn new(capacity: usize, seed: u64) -> Result<Self, SlError> {
        if capacity == 0 {
            return Err(SlError::ZeroCapacity);
        }
        Ok(ReservoirBuffer {
            capacity,
            offered: 0,
            items: Vec::new(),
            rng: ChaCha20Rng::seed_from_u64(seed),
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of offers seen (M).
    pub fn offered(&self) -> u64 {
        self.offered
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[StoredItem] {
        &self.items
    }
}

fn check_distribution(pi: &[f64]) -> Result<(), SlError> {
    if pi.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(SlError::BadDistribution("negative or non-finite entry".into()));
    }
    let s: f64 = pi.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(SlError::BadDistribution(format!("sums to {s}")));
    }
    Ok(())
}

/// Offer one item. While the buffer is below capacity every offer is kept;
/// afterwards the offer replaces a uniformly random resident with
/// probability capacity / offers, so each past offer stays resident with
/// equal probability.
pub fn reservoir_insert(
    buf: &mut ReservoirBuffer,
    state: Vec<f64>,
    pi: Vec<f64>,
) -> Result<bool, SlError> {
    check_distribution(&pi)?;
    buf.offered += 1;
    if buf.items.len() < buf.capacity {
        buf.items.push((state, pi));
        return Ok(true);
    }
    // one uniform draw in [0, M) decides both acceptance (j < N, probability
    // N/M) and the evicted slot (uniform over residents given acceptance)
    let j = buf.rng.gen_range(0..buf.offered);
    if (j as usize) < buf.capacity {
        buf.items[j as usize] = (state, pi);
        Ok(true)
    } else {
        Ok(false)
    }
}

/// Draw `n` residents uniformly with replacement.
pub fn reservoir_sample(buf: &mut ReservoirBuffer, n: usize) -> Result<Vec<StoredItem>, SlError> {
    if buf.items.is_empty() {
        return Err(SlError::EmptyBuffer);
    }
    let len = buf.items.len();
    Ok((0..n).map(|_| buf.items[buf.rng.gen_range(0..len)].clone()).collect())
}

/// Mean cross-entropy −Σ_a target(a) · log pred(a) over aligned rows.
pub fn sl_loss(targets: &[Vec<f64>], preds: &[Vec<f64>]) -> Result<f64, SlError> {
    if targets.len() != preds.len() {
        return Err(SlError::LengthMismatch {
            what: "preds",
            expected: targets.len(),
            actual: preds.len(),
        });
    }
    if targets.is_empty() {
        return Err(SlError::EmptyBuffer);
    }
    let mut acc = 0.0;
    for (t, p) in targets.iter().zip(preds) {
        if t.len() != p.len() {
            return Err(SlError::LengthMismatch { what: "pred row", expected: t.len(), actual: p.len() });
        }
        for (ti, pi) in t.iter().zip(p) {
            acc -= ti * pi.max(LOG_FLOOR).ln();
        }
    }
    Ok(acc / targets.len() as f64)
}

/// Metrics of one SL update; `l_sl` is absent when the buffer was empty and
/// the update was skipped.
#[derive(Clone, Copy, Debug, Default)]
pub struct SlMetrics {
    pub l_sl: Option<f64>,
    pub grad_norm: Option<f64>,
    pub sampled: usize,
}

/// One gradient step of the SL tower on a reservoir sample. An empty buffer
/// is a warning no-op, not an error.
pub fn sl_update(
    net: &mut Network,
    buf: &mut ReservoirBuffer,
    h: &Hyperparams,
) -> Result<SlMetrics, SlError> {
    if buf.is_empty() {
        return Ok(SlMetrics::default());
    }
    let sample = reservoir_sample(buf, h.sl_sample)?;
    sl_update_on(net, &sample, h)
}

/// The gradient step itself, on an explicit sample.
pub fn sl_update_on(
    net: &mut Network,
    sample: &[StoredItem],
    h: &Hyperparams,
) -> Result<SlMetrics, SlError> {
    if sample.is_empty() {
        return Ok(SlMetrics::default());
    }
    let states: Vec<Vec<f64>> = sample.iter().map(|(s, _)| s.clone()).collect();
    let actions = sample[0].1.len();
    let rows = sample.len();
    let targets_flat: Vec<f64> = sample.iter().flat_map(|(_, pi)| pi.iter().copied()).collect();
    let mut tape = Tape::new();
    let body = graph::body_graph(&mut tape, net, graph::Tower::Sl, &states);
    let pi = graph::policy_graph(&mut tape, net, PolicyHead::Sl, body);
    let c_targets = tape.value(targets_flat, Shape::Mat { rows, cols: actions });
    let logp = tape.log_floor(pi);
    let weighted = tape.mul(c_targets, logp);
    let row_sums = tape.sum_rows(weighted);
    let mean = tape.mean_all(row_sums);
    let loss = tape.scale(mean, -1.0);
    let l_sl = tape.scalar(loss);
    let grads = tape.backward(net, loss)?;
    let clipped = clip_global_norm(&grads, h.max_grad_norm)?;
    let norm = clipped.norm();
    sgd_step(net, &clipped, h.sl_lr)?;
    Ok(SlMetrics { l_sl: Some(l_sl), grad_norm: Some(norm), sampled: rows })
}

pub const SNAPSHOT_MAGIC: &[u8; 8] = b"NFSPBUF\0";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Buffer snapshot layout: magic, u32 version, u64 capacity, u64 offered,
/// RNG state (32-byte seed, u64 stream, u128 word position), u64 resident
/// count, then residents as (u32 len, f64 LE words) for state and
/// distribution in turn.
pub fn save_buffer(buf: &ReservoirBuffer, path: &Path) -> Result<(), SlError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&SNAPSHOT_VERSION.to_le_bytes())?;
    w.write_all(&(buf.capacity as u64).to_le_bytes())?;
    w.write_all(&buf.offered.to_le_bytes())?;
    w.write_all(&buf.rng.get_seed())?;
    w.write_all(&buf.rng.get_stream().to_le_bytes())?;
    w.write_all(&buf.rng.get_word_pos().to_le_bytes())?;
    w.write_all(&(buf.items.len() as u64).to_le_bytes())?;
    let mut write_vec = |w: &mut BufWriter<File>, v: &[f64]| -> std::io::Result<()> {
        w.write_all(&(v.len() as u32).to_le_bytes())?;
        for x in v {
            w.write_all(&x.to_le_bytes())?;
        }
        Ok(())
    };
    for (state, pi) in &buf.items {
        write_vec(&mut w, state)?;
        write_vec(&mut w, pi)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_buffer(path: &Path) -> Result<ReservoirBuffer, SlError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(SlError::Format(format!("bad magic in {}", path.display())));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    let version = u32::from_le_bytes(b4);
    if version != SNAPSHOT_VERSION {
        return Err(SlError::Format(format!(
            "unsupported snapshot version {version}, expected {SNAPSHOT_VERSION}"
        )));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let capacity = u64::from_le_bytes(b8) as usize;
    r.read_exact(&mut b8)?;
    let offered = u64::from_le_bytes(b8);
    let mut seed = [0u8; 32];
    r.read_exact(&mut seed)?;
    r.read_exact(&mut b8)?;
    let stream = u64::from_le_bytes(b8);
    let mut b16 = [0u8; 16];
    r.read_exact(&mut b16)?;
    let word_pos = u128::from_le_bytes(b16);
    let mut rng = ChaCha20Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);
    r.read_exact(&mut b8)?;
    let count = u64::from_le_bytes(b8) as usize;
    if capacity == 0 || count > capacity {
        return Err(SlError::Format(format!("{count} residents exceed capacity {capacity}")));
    }
    let mut read_vec = |r: &mut BufReader<File>| -> Result<Vec<f64>, SlError> {
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        let len = u32::from_le_bytes(b4) as usize;
        let mut v = Vec::with_capacity(len);
        let mut b8 = [0u8; 8];
        for _ in 0..len {
            r.read_exact(&mut b8)?;
            v.push(f64::from_le_bytes(b8));
        }
        Ok(v)
    };
    let mut items = Vec::with_capacity(count);
    for _ in 0..count {
        let state = read_vec(&mut r)?;
        let pi = read_vec(&mut r)?;
        items.push((state, pi));
    }
    Ok(ReservoirBuffer { capacity, offered, items, rng })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{build_network, ArchSpec};

    fn item(tag: f64) -> StoredItem {
        (vec![tag], vec![0.5, 0.5])
    }

    #[test]
    fn fills_to_capacity_then_stays() {
        let mut buf = ReservoirBuffer::new(512, 1).unwrap();
        for i in 0..512 {
            assert!(reservoir_insert(&mut buf, vec![i as f64], vec![1.0, 0.0]).unwrap());
        }
        assert_eq!(buf.len(), 512);
        for i in 512..10_000 {
            reservoir_insert(&mut buf, vec![i as f64], vec![1.0, 0.0]).unwrap();
            assert_eq!(buf.len(), 512);
        }
        assert_eq!(buf.offered(), 10_000);
    }

    #[test]
    fn capacity_one_second_offer_replaces_half_the_time() {
        let mut hits = 0u32;
        let trials = 100_000;
        for t in 0..trials {
            let mut buf = ReservoirBuffer::new(1, t as u64).unwrap();
            reservoir_insert(&mut buf, item(0.0).0, item(0.0).1).unwrap();
            reservoir_insert(&mut buf, vec![1.0], vec![0.5, 0.5]).unwrap();
            if buf.items()[0].0[0] == 1.0 {
                hits += 1;
            }
        }
        // binomial(1e5, 0.5): σ ≈ 158
        let sigma = (trials as f64 * 0.25).sqrt();
        assert!((hits as f64 - trials as f64 * 0.5).abs() < 3.0 * sigma, "{hits}");
    }

    #[test]
    fn inclusion_probability_uniform_over_stream() {
        // N = 32, M = 1024: each offer resident with probability 1/32
        let n = 32usize;
        let m = 1024usize;
        let reps = 2000;
        let mut counts = vec![0u32; m];
        for rep in 0..reps {
            let mut buf = ReservoirBuffer::new(n, 7_000 + rep as u64).unwrap();
            for i in 0..m {
                reservoir_insert(&mut buf, vec![i as f64], vec![1.0, 0.0]).unwrap();
            }
            for (state, _) in buf.items() {
                counts[state[0] as usize] += 1;
            }
        }
        let p = n as f64 / m as f64;
        let sigma = (reps as f64 * p * (1.0 - p)).sqrt();
        let expected = reps as f64 * p;
        let outliers =
            counts.iter().filter(|&&c| (c as f64 - expected).abs() > 3.0 * sigma).count();
        // ~0.27% of 1024 items expected outside 3σ
        assert!(outliers <= 12, "{outliers} items outside 3σ");
    }

    #[test]
    fn sample_single_resident() {
        let mut buf = ReservoirBuffer::new(8, 3).unwrap();
        reservoir_insert(&mut buf, vec![7.0], vec![0.25, 0.75]).unwrap();
        let s = reservoir_sample(&mut buf, 5).unwrap();
        assert_eq!(s.len(), 5);
        assert!(s.iter().all(|(st, _)| st[0] == 7.0));
    }

    #[test]
    fn sample_zero_is_empty() {
        let mut buf = ReservoirBuffer::new(8, 3).unwrap();
        reservoir_insert(&mut buf, vec![1.0], vec![1.0, 0.0]).unwrap();
        assert!(reservoir_sample(&mut buf, 0).unwrap().is_empty());
    }

    #[test]
    fn sample_empty_buffer_errors() {
        let mut buf = ReservoirBuffer::new(8, 3).unwrap();
        assert!(matches!(reservoir_sample(&mut buf, 1), Err(SlError::EmptyBuffer)));
    }

    #[test]
    fn sample_with_replacement_is_uniform() {
        let mut buf = ReservoirBuffer::new(512, 11).unwrap();
        for i in 0..512 {
            reservoir_insert(&mut buf, vec![i as f64], vec![1.0, 0.0]).unwrap();
        }
        let draws = 200_000;
        let mut counts = vec![0u32; 512];
        for (state, _) in reservoir_sample(&mut buf, draws).unwrap() {
            counts[state[0] as usize] += 1;
        }
        let p = 1.0 / 512.0;
        let expected = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        let outliers =
            counts.iter().filter(|&&c| (c as f64 - expected).abs() > 3.0 * sigma).count();
        assert!(outliers <= 6, "{outliers} slots outside 3σ");
    }

    #[test]
    fn rejects_invalid_distribution() {
        let mut buf = ReservoirBuffer::new(8, 3).unwrap();
        assert!(reservoir_insert(&mut buf, vec![0.0], vec![0.9, 0.3]).is_err());
        assert!(reservoir_insert(&mut buf, vec![0.0], vec![-0.1, 1.1]).is_err());
    }

    #[test]
    fn loss_closed_forms() {
        let u9 = vec![1.0 / 9.0; 9];
        let l = sl_loss(&[u9.clone()], &[u9]).unwrap();
        assert!((l - (9.0f64).ln()).abs() < 1e-12);

        let one_hot = vec![1.0, 0.0];
        let l = sl_loss(&[one_hot.clone()], &[one_hot]).unwrap();
        assert_eq!(l, 0.0);

        let l = sl_loss(&[vec![1.0, 0.0]], &[vec![0.5, 0.5]]).unwrap();
        assert!((l - (2.0f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn loss_at_least_target_entropy() {
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha20Rng::seed_from_u64(31);
        for _ in 0..100 {
            let norm = |mut v: Vec<f64>| {
                let s: f64 = v.iter().sum();
                v.iter_mut().for_each(|x| *x /= s);
                v
            };
            let t = norm((0..4).map(|_| rng.gen_range(0.01..1.0)).collect());
            let p = norm((0..4).map(|_| rng.gen_range(0.01..1.0)).collect());
            let ce = sl_loss(&[t.clone()], &[p.clone()]).unwrap();
            let h = -t.iter().map(|&x| x * x.ln()).sum::<f64>();
            assert!(ce >= h - 1e-12);
            let ce_self = sl_loss(&[t.clone()], &[t]).unwrap();
            assert!(ce_self <= ce + 1e-12);
        }
    }

    #[test]
    fn update_converges_to_stored_distribution() {
        let spec = ArchSpec::mlp(3, 8, 1, 3);
        let mut net = build_network(&spec, 2).unwrap();
        let state = vec![0.2, -0.5, 0.9];
        let target = vec![0.7, 0.2, 0.1];
        let sample = vec![(state.clone(), target.clone())];
        let h = Hyperparams { sl_lr: 0.05, ..Default::default() };
        let kl = |net: &Network| {
            let p = net.policy_row(PolicyHead::Sl, &state).unwrap();
            target
                .iter()
                .zip(&p)
                .map(|(&t, &q)| if t > 0.0 { t * (t / q).ln() } else { 0.0 })
                .sum::<f64>()
        };
        let mut prev = kl(&net);
        let first = prev;
        for _ in 0..300 {
            let m = sl_update_on(&mut net, &sample, &h).unwrap();
            assert!(m.l_sl.is_some());
            let now = kl(&net);
            assert!(now <= prev + 1e-9, "KL increased: {prev} -> {now}");
            prev = now;
        }
        assert!(prev < first * 0.05, "KL barely moved: {first} -> {prev}");
    }

    #[test]
    fn update_reports_loss_of_drawn_sample() {
        let spec = ArchSpec::mlp(2, 4, 1, 2);
        let mut net = build_network(&spec, 9).unwrap();
        let sample = vec![(vec![0.1, 0.2], vec![0.3, 0.7]), (vec![-0.4, 0.5], vec![0.9, 0.1])];
        let preds: Vec<Vec<f64>> = sample
            .iter()
            .map(|(s, _)| net.policy_row(PolicyHead::Sl, s).unwrap())
            .collect();
        let targets: Vec<Vec<f64>> = sample.iter().map(|(_, t)| t.clone()).collect();
        let expect = sl_loss(&targets, &preds).unwrap();
        let m = sl_update_on(&mut net, &sample, &Hyperparams::default()).unwrap();
        assert!((m.l_sl.unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn update_leaves_rl_tower_untouched() {
        let spec = ArchSpec::mlp(2, 4, 2, 2);
        let mut net = build_network(&spec, 4).unwrap();
        let before = net.params().to_vec();
        let sample = vec![(vec![0.1, -0.1], vec![0.8, 0.2])];
        sl_update_on(&mut net, &sample, &Hyperparams::default()).unwrap();
        let rl = net.rl_tower_range();
        assert_eq!(&net.params()[rl.clone()], &before[rl]);
        let sl = net.sl_tower_range();
        assert_ne!(&net.params()[sl.clone()], &before[sl]);
    }

    #[test]
    fn empty_buffer_update_is_warning_noop() {
        let spec = ArchSpec::mlp(2, 4, 1, 2);
        let mut net = build_network(&spec, 4).unwrap();
        let before = net.params().to_vec();
        let mut buf = ReservoirBuffer::new(8, 0).unwrap();
        let m = sl_update(&mut net, &mut buf, &Hyperparams::default()).unwrap();
        assert!(m.l_sl.is_none());
        assert_eq!(net.params(), &before[..]);
    }

    #[test]
    fn snapshot_round_trip_preserves_future_draws() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("buf.bin");
        let mut buf = ReservoirBuffer::new(16, 42).unwrap();
        for i in 0..200 {
            reservoir_insert(&mut buf, vec![i as f64, 0.5], vec![0.25, 0.75]).unwrap();
        }
        save_buffer(&buf, &path).unwrap();
        let mut loaded = load_buffer(&path).unwrap();
        assert_eq!(loaded.capacity(), buf.capacity());
        assert_eq!(loaded.offered(), buf.offered());
        assert_eq!(loaded.items(), buf.items());
        // identical continuation: same inserts and samples on both copies
        for i in 200..400 {
            let a = reservoir_insert(&mut buf, vec![i as f64, 0.5], vec![0.25, 0.75]).unwrap();
            let b = reservoir_insert(&mut loaded, vec![i as f64, 0.5], vec![0.25, 0.75]).unwrap();
            assert_eq!(a, b);
        }
        assert_eq!(loaded.items(), buf.items());
        let sa = reservoir_sample(&mut buf, 32).unwrap();
        let sb = reservoir_sample(&mut loaded, 32).unwrap();
        assert_eq!(sa, sb);
    }

    #[test]
    fn snapshot_rejects_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("buf.bin");
        std::fs::write(&path, b"garbage here").unwrap();
        assert!(load_buffer(&path).is_err());
    }
}
