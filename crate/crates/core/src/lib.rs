//! Continual learning with an expanding subnet search space.
//!
//! The working network is a dense MLP whose hidden units are split into `G`
//! groups. Training proceeds task by task:
//!
//! * [`schedule`] decides how many groups are trainable during each task,
//!   growing the space along a cosine-annealed curve;
//! * at every task boundary [`cns`] picks a small subnet whose logits track
//!   the full network and snapshots the weights as a teacher;
//! * [`rnd`] distills the teacher's view of pooled subnets back into the
//!   working network;
//! * [`scer`] keeps a replay buffer whose insertion rate is damped by the
//!   relative size of the active subnet.
//!
//! [`trainer`] ties these together, and [`harness`] provides configuration,
//! checkpoints, multi-seed runs and reports.

pub mod autodiff;
pub mod cns;
mod codec;
pub mod data;
pub mod error;
pub mod harness;
pub mod loss;
pub mod matrix;
pub mod metrics;
pub mod network;
pub mod rnd;
pub mod scer;
pub mod schedule;
pub mod subnet;
pub mod trainer;

pub use error::{Error, Result};
pub use matrix::Matrix;
pub use network::Network;
