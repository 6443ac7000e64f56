//! Resumable orchestration of a narrative-to-animation agent workflow.
//!
//! The crate is organised bottom-up: [`script`] and [`prompt`] are pure
//! data and parsing, [`providers`] abstracts the generative services,
//! [`metrics`] and [`curation`] score and select candidates, and
//! [`pipeline`] sequences the six stages over a checkpointed workspace.

pub mod color;
pub mod curation;
pub mod exec;
pub mod metrics;
pub mod pipeline;
pub mod prompt;
pub mod providers;
pub mod script;

pub use exec::Exec;
