//! The guide under `book/` compiled as doctests, so its examples stay in step with the library.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/indexing.md")]
pub mod indexing {}

#[doc = include_str!("../../../book/src/factorizations.md")]
pub mod factorizations {}

#[doc = include_str!("../../../book/src/initialization.md")]
pub mod initialization {}

#[doc = include_str!("../../../book/src/gradients.md")]
pub mod gradients {}

#[doc = include_str!("../../../book/src/cells.md")]
pub mod cells {}

#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}

#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
