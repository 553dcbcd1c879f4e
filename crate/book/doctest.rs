// mdbook cannot link listings against workspace crates, so every chapter is
// pulled in as the docs of an empty module and `cargo test --doc` runs them.

#[doc = include_str!("src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("src/gpcm.md")]
pub mod gpcm {}
#[doc = include_str!("src/fitting.md")]
pub mod fitting {}
#[doc = include_str!("src/preference-pairs.md")]
pub mod preference_pairs {}
#[doc = include_str!("src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("src/difficulty.md")]
pub mod difficulty {}
#[doc = include_str!("src/metrics.md")]
pub mod metrics {}
#[doc = include_str!("src/folds.md")]
pub mod folds {}
#[doc = include_str!("src/cli.md")]
pub mod cli {}
