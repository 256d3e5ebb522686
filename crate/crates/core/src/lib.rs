//! Learned UAV navigation in a 2D low-altitude airspace and Monte Carlo
//! estimation of how many such vehicles the airspace can carry.

pub mod airspace;
pub mod config;
pub mod ddpg;
pub mod error;
pub mod evaluation;
pub mod geometry;
pub mod nn;
pub mod optim;
pub mod rewards;
pub mod seeding;
pub mod training;
pub mod trajectory;

pub use error::{Error, Result};
pub use geometry::Vec2;
