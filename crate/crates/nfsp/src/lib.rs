//! Neural fictitious self-play with a PPO-style best-response learner.
//!
//! The crate is organized around a small set of building blocks:
//!
//! - [`nn`]: a reverse-mode-differentiable network (shared body, three heads)
//!   with plain SGD and global gradient-norm clipping.
//! - [`envs`]: two-player zero-sum imperfect-information games behind one
//!   interface (Kuhn poker, matrix games, MicroRTS-lite) plus scripted bots.
//! - [`rl`]: GAE advantages, the clipped PPO surrogate, entropy bonus and
//!   clipped value loss, and the combined update.
//! - [`sl`]: reservoir buffer over (state, policy) pairs and the
//!   cross-entropy update of the average-strategy head.
//! - [`train`]: orchestration of the N-process self-play loop, raw self-play
//!   mode, and pretraining transfer between the two.
//! - [`eval`]: exact best response / NashConv for enumerable games, win-rate
//!   estimation with confidence intervals, and exploiter training.
//! - [`cli`]: key=value run configuration, dispatch, and learning-curve CSV
//!   emission for the thin `nfsp` binary.
//!
//! The `examples/` directory is the front door: each example exercises one
//! capability end to end with a small budget.

pub mod cli;
pub mod envs;
pub mod eval;
pub mod metrics;
pub mod nn;
pub mod rl;
pub mod sl;
pub mod train;
