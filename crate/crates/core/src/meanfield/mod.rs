//! Mean-agent grouping: an impression log, one group per objective, and a
//! market where each group's mean bid is scaled per member by value advantage.

mod env;
pub mod groups;
pub mod log;

pub use env::{Candidate, EpisodeData, EpisodeOrder, GroupedMarket, LogIndex, TimestepData};
pub use groups::{advantage, derive_bid, group_by_objective, GroupSpec, MeanValue, ADVANTAGE_CLIP};
pub use log::{generate_log, read_log, write_log, ImpressionLog, ImpressionRecord, LogConfig, Objective};
