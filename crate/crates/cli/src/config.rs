//! The `simulate` config document and what it takes to turn one into a
//! runnable [`SessionSpec`].

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use mars_core::agents::{Agent, TwapAgent, TwapConfig};
use mars_core::book::{orders_from_records, read_binary_log, read_csv_log, LogRecord, Order};
use mars_core::flow::{BatchModel, CountFlow, CountModel, OrderFlowModel, PerturbationKernel, ReplayFlow, SyntheticFlow, SyntheticFlowConfig};
use mars_core::sim::{keyed_rng, SessionConfig, SessionSpec, Trajectory};
use serde::{Deserialize, Serialize};

/// RNG purpose key for the opening ladder, apart from every key the engine uses.
const OPENING_LADDER_PURPOSE: u64 = 0x6c61_6464_6572;

fn default_opening_levels() -> usize {
    10
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FlowSpec {
    Synthetic {
        #[serde(default)]
        params: SyntheticFlowConfig,
        #[serde(default = "default_opening_levels")]
        opening_levels: usize,
    },
    /// Replays a recorded log; its first `opening` records seed the book.
    Replay {
        log: PathBuf,
        #[serde(default)]
        opening: usize,
    },
    Count {
        model: PathBuf,
        #[serde(default = "default_opening_levels")]
        opening_levels: usize,
    },
}

impl Default for FlowSpec {
    fn default() -> Self {
        FlowSpec::Synthetic { params: SyntheticFlowConfig::default(), opening_levels: default_opening_levels() }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub version: u32,
    pub session: SessionConfig,
    pub flow: FlowSpec,
    /// Trajectory directories whose minutes become the batch model used for
    /// control signals.
    pub batch_history: Vec<PathBuf>,
    pub agent: Option<TwapConfig>,
    /// Also run every seed without the agent, for impact measurement.
    pub paired: bool,
}

impl SimulateConfig {
    /// Paths inside the config are relative to the config file.
    pub fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.flow {
            FlowSpec::Replay { log, .. } => join(log),
            FlowSpec::Count { model, .. } => join(model),
            FlowSpec::Synthetic { .. } => {}
        }
        self.batch_history.iter_mut().for_each(join);
    }

    /// Paths the run reads, which the config hash covers by content.
    pub fn inputs(&self) -> Vec<PathBuf> {
        let mut out = match &self.flow {
            FlowSpec::Replay { log, .. } => vec![log.clone()],
            FlowSpec::Count { model, .. } => vec![model.clone()],
            FlowSpec::Synthetic { .. } => Vec::new(),
        };
        out.extend(self.batch_history.iter().cloned());
        out
    }

    /// The session without agents.
    pub fn build_spec(&self) -> Result<SessionSpec> {
        self.session.validate().context("session config")?;
        let (flow, starting): (Arc<dyn OrderFlowModel>, Vec<Order>) = match &self.flow {
            FlowSpec::Synthetic { params, opening_levels } => {
                let flow = SyntheticFlow::new(params.clone());
                let ladder = self.opening_ladder(&flow, *opening_levels);
                (Arc::new(flow), ladder)
            }
            FlowSpec::Replay { log, opening } => {
                let records = read_log(log)?;
                if *opening > records.len() {
                    bail!("opening count {opening} exceeds the {} records in {}", records.len(), log.display());
                }
                let mut orders = orders_from_records(&records, self.session.start_ms);
                let flow = orders.split_off(*opening);
                (Arc::new(ReplayFlow::new(flow)), orders)
            }
            FlowSpec::Count { model, opening_levels } => {
                let file = File::open(model).with_context(|| format!("opening {}", model.display()))?;
                let model = CountModel::read_from(BufReader::new(file)).context("reading count model")?;
                let ladder = self.opening_ladder(&SyntheticFlow::default(), *opening_levels);
                (Arc::new(CountFlow::new(model, self.session.codec.clone())), ladder)
            }
        };
        let mut spec = SessionSpec::new(self.session.clone(), flow).with_starting(starting);
        if !self.batch_history.is_empty() {
            let sessions = self
                .batch_history
                .iter()
                .map(|dir| {
                    let traj = Trajectory::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
                    Ok(traj.minute_images(&self.session.codec))
                })
                .collect::<Result<Vec<_>>>()?;
            let batch = BatchModel::from_sessions(&sessions, PerturbationKernel::default()).context("building batch model")?;
            spec = spec.with_batch(Arc::new(batch));
        }
        Ok(spec)
    }

    /// The session with the configured agent, if any.
    pub fn build_spec_with_agent(&self) -> Result<SessionSpec> {
        let spec = self.build_spec()?;
        let Some(cfg) = self.agent.clone() else { return Ok(spec) };
        TwapAgent::new(cfg.clone()).context("agent config")?;
        Ok(spec.with_agents(move |_| {
            vec![Box::new(TwapAgent::new(cfg.clone()).expect("validated above")) as Box<dyn Agent>]
        }))
    }

    fn opening_ladder(&self, flow: &SyntheticFlow, levels: usize) -> Vec<Order> {
        let mut rng = keyed_rng(self.session.seed, OPENING_LADDER_PURPOSE, 0);
        let mut ladder = flow.opening_orders(self.session.reference_price, levels, &mut rng);
        for (i, o) in ladder.iter_mut().enumerate() {
            o.id = i as u64 + 1;
        }
        ladder
    }
}

/// Reads a binary log when the extension is `.bin`, a CSV log otherwise.
pub fn read_log(path: &Path) -> Result<Vec<LogRecord>> {
    let file = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    let records = if path.extension().is_some_and(|e| e == "bin") { read_binary_log(file) } else { read_csv_log(file) };
    records.with_context(|| format!("reading log {}", path.display()))
}
