//! Conditional order-flow generation.
//!
//! Every flow backend implements [`OrderFlowModel`]: given the realized book
//! state, the recent order history and an optional minute-level target image
//! it proposes the next order. Three backends ship here:
//!
//! * [`CountFlow`]: an n-gram count model over order tokens with backoff,
//!   feasibility masking and ensemble reweighting toward the target image;
//! * [`ReplayFlow`]: replays a historical log verbatim;
//! * [`SyntheticFlow`]: a stochastic zero-intelligence style generator used to
//!   produce synthetic "historical" sessions and as a reference backend.
//!
//! Minute-level order batches are proposed by [`BatchModel`] and filtered
//! against a [`ControlSignal`] with [`select_batch`].

mod batch;
mod context;
mod control;
mod count;
mod persist;
mod replay;
mod synthetic;

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::book::{BookError, LimitOrderBook, MidPrice, Order, Price};
use crate::codec::CodecError;

pub use batch::{
    generate_candidates, BatchEntry, BatchModel, MinuteSummary, PerturbationKernel,
};
pub use context::{tokenize_orders, CoarseLobState, TokenContext, TokenEvent, TrendTracker, LOB_STATES, SPREAD_BUCKETS};
pub use control::{ensemble_reweight, select_batch, ControlKind, ControlSignal, EnsembleTarget};
pub use count::{cell_gate, fit_count_model, CountFlow, CountModel, CountModelConfig};
pub use persist::CountModelManifest;
pub use replay::ReplayFlow;
pub use synthetic::{SyntheticFlow, SyntheticFlowConfig};

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("batch library is empty")]
    EmptyLibrary,
    #[error("every token is infeasible in the current book state")]
    AllMasked,
    #[error("candidate count must be at least 1")]
    NoCandidates,
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Book(#[from] BookError),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file: {0}")]
    Format(String),
}

/// What a generator sees when asked for the next order.
#[derive(Clone, Copy, Debug)]
pub struct MarketView<'a> {
    pub book: &'a LimitOrderBook,
    pub clock_ms: u64,
    pub mid: MidPrice,
    /// Price used when the book has no quotes and no trade has printed.
    pub reference: Price,
    /// Sign of the mid-price move over the trailing minute.
    pub trend: i8,
}

/// A flow backend. Fitted models are immutable and shared across rollouts;
/// per-rollout state lives in the generator returned by [`start`](Self::start).
pub trait OrderFlowModel: Send + Sync {
    fn name(&self) -> &'static str;

    /// A generator positioned after the starting sequence.
    fn start(self: Arc<Self>) -> Box<dyn OrderGenerator>;

    /// Whether generated orders may be conditioned on a target image.
    fn supports_targets(&self) -> bool {
        false
    }
}

pub trait OrderGenerator: Send {
    /// The next order, or `None` when the flow is exhausted. Orders from
    /// non-replay backends carry id 0; the session assigns ids.
    fn next_order(
        &mut self,
        view: &MarketView<'_>,
        target: Option<&EnsembleTarget>,
        rng: &mut ChaCha8Rng,
    ) -> Result<Option<Order>, FlowError>;

    /// Called for every order that reached the book, with the mid just before it.
    fn observe(&mut self, _order: &Order, _mid_before: MidPrice) {}
}
