//! mdbook cannot run listings that depend on workspace crates, so each
//! chapter is pulled in as module docs and `cargo test --doc` checks it.

#[doc = include_str!("src/intro.md")]
pub mod intro {}
#[doc = include_str!("src/kinematics.md")]
pub mod kinematics {}
#[doc = include_str!("src/rula.md")]
pub mod rula {}
#[doc = include_str!("src/dula.md")]
pub mod dula {}
#[doc = include_str!("src/estimation.md")]
pub mod estimation {}
#[doc = include_str!("src/optimization.md")]
pub mod optimization {}
#[doc = include_str!("src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
