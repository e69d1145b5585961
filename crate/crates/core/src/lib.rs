//! Desk-scale workbench for the fruit-and-tools emergent-communication game.
//!
//! - [`dataset`]: category table, instance sampling, utilities, splits.
//! - [`autodiff`]: reverse-mode tape, RMSProp, clipping, checkpoints.
//! - [`agent`]: the symmetric agent network.
//! - [`game`]: the episode engine and ablations.
//! - [`trainer`]: REINFORCE with a learned baseline.
//! - [`causal`]: Message Effect and the test-time protocol.
//! - [`probe`]: conversation classifiers, self-play and inverted roles.
//! - [`config`]: flat experiment configuration and hashing.

pub mod agent;
pub mod autodiff;
pub mod causal;
pub mod config;
pub mod dataset;
pub mod game;
pub mod probe;
pub mod rng;
pub mod trainer;
