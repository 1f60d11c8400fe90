use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use super::control::EnsembleTarget;
use super::{FlowError, MarketView, OrderFlowModel, OrderGenerator};
use crate::book::{Order, OrderSource};

/// Replays a recorded order sequence verbatim, keeping ids and intervals.
#[derive(Clone, Debug, Default)]
pub struct ReplayFlow {
    orders: Vec<Order>,
}

impl ReplayFlow {
    pub fn new(orders: Vec<Order>) -> Self {
        Self { orders }
    }

    pub fn orders(&self) -> &[Order] {
        &self.orders
    }
}

impl OrderFlowModel for ReplayFlow {
    fn name(&self) -> &'static str {
        "replay"
    }

    fn start(self: Arc<Self>) -> Box<dyn OrderGenerator> {
        Box::new(ReplayGenerator { flow: self, next: 0 })
    }
}

struct ReplayGenerator {
    flow: Arc<ReplayFlow>,
    next: usize,
}

impl OrderGenerator for ReplayGenerator {
    fn next_order(
        &mut self,
        _view: &MarketView<'_>,
        _target: Option<&EnsembleTarget>,
        _rng: &mut ChaCha8Rng,
    ) -> Result<Option<Order>, FlowError> {
        let order = self.flow.orders.get(self.next).cloned();
        self.next += 1;
        Ok(order.map(|o| o.with_source(OrderSource::Replay)))
    }
}
