//! The chapters of the guide in `book/`, compiled as documentation so
//! their examples run with `cargo test`.
#![doc = include_str!("../../../book/src/introduction.md")]

#[doc = include_str!("../../../book/src/model.md")]
pub mod model {}

#[doc = include_str!("../../../book/src/features.md")]
pub mod features {}

#[doc = include_str!("../../../book/src/sgd.md")]
pub mod sgd {}

#[doc = include_str!("../../../book/src/mcmc.md")]
pub mod mcmc {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
