//! Multi-agent auto-bidding in second-price ad auctions.
//!
//! The crate is organized bottom-up:
//!
//! - [`auction`]: winner determination, payments and budget-constrained
//!   episode stepping.
//! - [`rewards`]: softmax credit assignment, the bar gate and the two-agent
//!   cooperation threshold.
//! - [`learner`]: a small Q network, RMSprop, episode replay and
//!   epsilon-greedy exploration.
//! - [`meanfield`]: objective groups, mean-agent bids and the synthetic
//!   impression log.
//! - [`market`]: the environment interface shared by the trainers.
//! - [`agents`]: the method roster (MSB, DQN-S, CM-IL, CO-IL, MIX-IL, MAAB,
//!   MAAB-fix).
//! - [`harness`]: training loop, evaluation, budget construction, sweeps and
//!   CSV reports.

pub mod agents;
pub mod auction;
pub mod error;
pub mod harness;
pub mod learner;
pub mod market;
pub mod meanfield;
pub mod rewards;

pub use error::{Error, Result};
