//! Compiles every chapter of the guide in `book/` so its listings run as
//! doctests. One module per chapter keeps failures traceable.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/welfare.md")]
pub mod welfare {}

#[doc = include_str!("../../../book/src/hindsight.md")]
pub mod hindsight {}

#[doc = include_str!("../../../book/src/online.md")]
pub mod online {}

#[doc = include_str!("../../../book/src/arrivals.md")]
pub mod arrivals {}

#[doc = include_str!("../../../book/src/diagnostics.md")]
pub mod diagnostics {}

#[doc = include_str!("../../../book/src/experiments.md")]
pub mod experiments {}
