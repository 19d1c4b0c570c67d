//! Doc-tests for the guide. Each chapter is included verbatim, so its code
//! blocks run under `cargo test`.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/pipeline.md")]
pub mod pipeline {}
#[doc = include_str!("../../../book/src/configuration.md")]
pub mod configuration {}
#[doc = include_str!("../../../book/src/dynamics.md")]
pub mod dynamics {}
#[doc = include_str!("../../../book/src/control.md")]
pub mod control {}
#[doc = include_str!("../../../book/src/env.md")]
pub mod env {}
#[doc = include_str!("../../../book/src/simopt.md")]
pub mod simopt {}
#[doc = include_str!("../../../book/src/learn.md")]
pub mod learn {}
#[doc = include_str!("../../../book/src/reproducibility.md")]
pub mod reproducibility {}
