//! Decentralized multi-agent navigation in 2D and 3D.
//!
//! The crate provides a seeded kinematic simulator ([`env`]), a force-based
//! planner ([`fmp`]), a discrete-action actor-critic policy ([`policy`])
//! trained with a shaped reward ([`reward`], [`trainer`]), a controller that
//! switches between the two ([`hybrid`]), and a benchmark harness
//! ([`bench`]).

pub mod bench;
pub mod cli;
pub mod domain;
pub mod env;
pub mod fmp;
pub mod hybrid;
pub mod planner;
pub mod policy;
pub mod reward;
pub mod trainer;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/simulation.md")]
    pub struct Simulation;
    #[doc = include_str!("../../../book/src/rewards.md")]
    pub struct Rewards;
    #[doc = include_str!("../../../book/src/fmp.md")]
    pub struct Fmp;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/hybrid.md")]
    pub struct Hybrid;
    #[doc = include_str!("../../../book/src/benchmark.md")]
    pub struct Benchmark;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
