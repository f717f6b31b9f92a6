//! Design optimization of a planar legged robot with a meta-learned,
//! design-conditioned locomotion policy.
//!
//! The crate is organized bottom-up: [`morphology`] and [`terrain`] define
//! the robot and its world, [`sim`] integrates the dynamics, [`env`] wraps
//! them into an MDP, [`nn`] and [`ppo`] provide the learner, [`maml`]
//! meta-trains it across designs, and [`designopt`] searches the design space
//! with CMA-ES using the adapted policy as the evaluator.

pub mod designopt;
pub mod env;
pub mod error;
pub mod maml;
pub mod morphology;
pub mod nn;
pub mod ppo;
pub mod seed;
pub mod sim;
pub mod terrain;

pub use error::{Error, Result};
