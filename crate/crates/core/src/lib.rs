//! Slotted simulation of wireless computing networks under distributed
//! backpressure control with broadcast-approach coding, plus an LP oracle
//! for the capacity region.
//!
//! The pipeline of one run:
//!
//! ```text
//! Scenario (model) -> Controller (control) -> Engine (engine) -> RunMetrics
//!                   \-> CapacityInstance (capacity) -> LP bound
//! ```

pub mod capacity;
pub mod channel;
pub mod cli;
pub mod coding;
pub mod control;
pub mod engine;
pub mod model;
pub mod queueing;
pub mod rng;

pub use model::{load_config, ConfigError, Scenario};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/model.md")]
    mod model {}
    #[doc = include_str!("../../../book/src/channel.md")]
    mod channel {}
    #[doc = include_str!("../../../book/src/coding.md")]
    mod coding {}
    #[doc = include_str!("../../../book/src/control.md")]
    mod control {}
    #[doc = include_str!("../../../book/src/engine.md")]
    mod engine {}
    #[doc = include_str!("../../../book/src/capacity.md")]
    mod capacity {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
