//! Event-time Markov model of a large-tick limit order book, the
//! single-share order-placement MDP built on it, and the analyses around
//! them: flow estimation, the nested multinomial test, strategy simulation
//! and the imbalance-signal study.

pub mod config;
pub mod error;
pub mod events;
pub mod fixture;
pub mod flow;
pub mod imbalance;
pub mod lobsim;
pub mod mdp;
pub mod sampling;
pub mod strategies;

pub use error::{Error, Result};
pub use events::{BookState, L1Event, OrderType, ReducedState, Side};
pub use flow::{FlowModel, GlrtResult, IntensityTable};
