//! Problem generators.

pub mod grid;
pub mod random;

pub use grid::{build_spiders_and_flies, GridMode, GridSpec};
pub use random::{build_random_comdp, RandomMode, RandomSpec};
