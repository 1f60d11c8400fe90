use std::sync::Arc;

use rayon::prelude::*;

use super::{Session, SessionConfig, SimError, Trajectory};
use crate::agents::Agent;
use crate::book::Order;
use crate::flow::{BatchModel, OrderFlowModel};

type AgentFactory = dyn Fn(u64) -> Vec<Box<dyn Agent>> + Send + Sync;

/// Everything needed to build a session for any seed. Models and the
/// starting sequence are shared; agents are built fresh per rollout.
#[derive(Clone)]
pub struct SessionSpec {
    pub config: SessionConfig,
    pub flow: Arc<dyn OrderFlowModel>,
    pub batch: Option<Arc<BatchModel>>,
    pub starting: Arc<Vec<Order>>,
    pub agents: Option<Arc<AgentFactory>>,
}

impl SessionSpec {
    pub fn new(config: SessionConfig, flow: Arc<dyn OrderFlowModel>) -> Self {
        Self { config, flow, batch: None, starting: Arc::new(Vec::new()), agents: None }
    }

    pub fn with_batch(mut self, batch: Arc<BatchModel>) -> Self {
        self.batch = Some(batch);
        self
    }

    pub fn with_starting(mut self, starting: Vec<Order>) -> Self {
        self.starting = Arc::new(starting);
        self
    }

    /// `factory` receives the rollout seed.
    pub fn with_agents(mut self, factory: impl Fn(u64) -> Vec<Box<dyn Agent>> + Send + Sync + 'static) -> Self {
        self.agents = Some(Arc::new(factory));
        self
    }

    pub fn without_agents(&self) -> Self {
        Self { agents: None, ..self.clone() }
    }

    pub fn session(&self, seed: u64) -> Result<Session, SimError> {
        let config = SessionConfig { seed, ..self.config.clone() };
        let agents = self.agents.as_ref().map(|f| f(seed)).unwrap_or_default();
        Session::new(config, self.flow.clone(), self.batch.clone(), &self.starting, agents)
    }

    pub fn run(&self, seed: u64) -> Result<Trajectory, SimError> {
        self.session(seed)?.run()
    }
}

/// Worker count from `MARS_THREADS`, if set to a positive integer.
pub fn rollout_thread_count() -> Option<usize> {
    std::env::var("MARS_THREADS").ok()?.trim().parse().ok().filter(|&n: &usize| n > 0)
}

/// Runs rollouts with seeds `base_seed + i` in parallel. Results are in index
/// order and a failing rollout does not affect its siblings.
pub fn run_rollouts(spec: &SessionSpec, n: usize, base_seed: u64) -> Vec<Result<Trajectory, SimError>> {
    let work = || (0..n).into_par_iter().map(|i| spec.run(base_seed.wrapping_add(i as u64))).collect();
    match rollout_thread_count().and_then(|t| rayon::ThreadPoolBuilder::new().num_threads(t).build().ok()) {
        Some(pool) => pool.install(work),
        None => work(),
    }
}

pub fn run_rollouts_serial(spec: &SessionSpec, n: usize, base_seed: u64) -> Vec<Result<Trajectory, SimError>> {
    (0..n).map(|i| spec.run(base_seed.wrapping_add(i as u64))).collect()
}
