//! The guide in `book/` pulled in as documentation so `cargo test` runs
//! every Rust listing against the current library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/ellipsoids.md")]
pub mod ellipsoids {}

#[doc = include_str!("../../../book/src/language.md")]
pub mod language {}

#[doc = include_str!("../../../book/src/forward.md")]
pub mod forward {}

#[doc = include_str!("../../../book/src/backward.md")]
pub mod backward {}

#[doc = include_str!("../../../book/src/lead-lag.md")]
pub mod lead_lag {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
