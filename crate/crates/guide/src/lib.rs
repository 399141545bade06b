//! Code listings of the book, compiled and run as doctests.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/panel.md")]
pub mod panel {}

#[doc = include_str!("../../../book/src/personality.md")]
pub mod personality {}

#[doc = include_str!("../../../book/src/demand.md")]
pub mod demand {}

#[doc = include_str!("../../../book/src/tests.md")]
pub mod tests {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/inequality.md")]
pub mod inequality {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
