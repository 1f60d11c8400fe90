//! Order-level financial market simulation.
//!
//! The crate is organised around a simulated clearing house ([`book`]) that
//! matches generated, replayed and agent-injected orders. Order flow comes
//! from pluggable conditional generators ([`flow`]) operating on a discrete
//! token space ([`codec`]) and minute-level order images ([`order_image`]).
//! [`sim`] runs sessions and parallel rollouts, [`agents`] provides TWAP and
//! policy-gradient execution agents, and [`analytics`] / [`impact`] turn
//! trajectories into stylized facts, forecasts, anomaly scores and
//! market-impact fits. [`io`] holds ingestion, the scenario filter and
//! shared persistence helpers.

pub mod book;
pub mod codec;
pub mod flow;
pub mod order_image;
pub mod sim;
pub mod agents;
pub mod analytics;
pub mod impact;
pub mod io;
