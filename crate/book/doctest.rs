//! Each chapter of the guide is a module so that `cargo test --doc` runs its
//! listings and a failure names the chapter.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/tgam.md")]
pub mod tgam {}
#[doc = include_str!("src/features.md")]
pub mod features {}
#[doc = include_str!("src/topology.md")]
pub mod topology {}
#[doc = include_str!("src/model.md")]
pub mod model {}
#[doc = include_str!("src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("src/explanations.md")]
pub mod explanations {}
#[doc = include_str!("src/synthetic.md")]
pub mod synthetic {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
