//! Engagement-based query ranking: synthetic search logs, query-level
//! behavioral, financial and catalog features, engagement labels, tree and
//! linear regressors, and ranking metrics.

pub mod datagen;
pub mod eval;
pub mod events;
pub mod features;
pub mod labels;
pub mod linear;
pub mod model;
pub mod pipeline;
pub mod seed;
pub mod trees;
