//! Repeated Stackelberg games in which the follower does not see the
//! leader's mixed strategy and instead best-responds to an estimate built
//! from the leader's logged actions.

pub mod bounds;
pub mod dynamic;
pub mod error;
pub mod experiments;
pub mod followers;
pub mod game;
pub mod inference;
pub mod optimize;
pub mod parametric;
pub mod simulate;

pub use error::{Error, Result};
pub use followers::{FollowerModel, TieBreak, TypeSet};
pub use game::{BimatrixGame, MixedStrategy};
