//! Deterministic stage-and-channel dataflow engine.
//!
//! A design graph wires loaders, decoders, compute units, reduction circuits
//! and unloaders through unbounded FIFO channels. Stages fire in topological
//! rounds until quiescence; the reference execution is single-threaded and
//! serves as the determinism baseline. Streams are terminated with an
//! explicit end-of-stream token so stateful stages know when to flush.

use crate::inverse::InverseError;
use crate::reduction::{PartialSum, ReductionError, ReductionEvent};
use serde::Serialize;
use std::collections::{BTreeMap, VecDeque};
use thiserror::Error;

/// One element travelling through a channel.
#[derive(Clone, Debug, PartialEq)]
pub enum Item {
    /// A bare number: an x entry, a product, or a block sum.
    Value(f64),
    /// A matrix stream slot: value plus its recorded packed index.
    Entry { value: f64, col: usize },
    /// A decoded dense row index for one slot.
    Row(usize),
    /// A structure stream element (segment length or blocks-per-row count).
    Structure(usize),
    /// A partial sum in flight between reduction levels.
    Partial(PartialSum),
    /// A decoded block row plus its same-row-as-previous-machine flag.
    RowFlag { row: usize, same_as_prev: bool },
    /// A whole buffered vector handed over at once.
    Vector(Vec<f64>),
    /// End of stream.
    Done,
}

impl Item {
    pub fn kind(&self) -> &'static str {
        match self {
            Item::Value(_) => "value",
            Item::Entry { .. } => "entry",
            Item::Row(_) => "row",
            Item::Structure(_) => "structure",
            Item::Partial(_) => "partial",
            Item::RowFlag { .. } => "row_flag",
            Item::Vector(_) => "vector",
            Item::Done => "done",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Loader,
    Decoder,
    Compute,
    Reducer,
    Unloader,
}

#[derive(Debug, Error)]
pub enum StageError {
    #[error("expected {expected} item, found {found}")]
    UnexpectedItem {
        expected: &'static str,
        found: String,
    },
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Inverse(#[from] InverseError),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("graph construction: {0}")]
    Graph(String),
    #[error("deadlock: {0}")]
    Deadlock(String),
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: StageError,
    },
}

/// Behaviour of one stage. A firing may consume any prefix of its input
/// queues and append to its output queues; progress is measured by the
/// engine, so a stage that is waiting simply consumes nothing.
pub trait StageLogic {
    fn fire(
        &mut self,
        inputs: &mut [VecDeque<Item>],
        outputs: &mut [VecDeque<Item>],
        events: &mut Vec<ReductionEvent>,
    ) -> Result<(), StageError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChannelId(usize);

struct Channel {
    name: String,
    queue: VecDeque<Item>,
    producer: Option<usize>,
    consumer: Option<usize>,
    done_enqueued: bool,
}

struct Stage {
    name: String,
    kind: StageKind,
    inputs: Vec<ChannelId>,
    outputs: Vec<ChannelId>,
    logic: Box<dyn StageLogic>,
}

/// Encoding facts carried into the trace for stats reporting.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct EncodingSummary {
    pub machines: usize,
    pub stream_length: usize,
    pub nnz: usize,
}

/// A wired design graph ready to run.
pub struct PipelineGraph {
    stages: Vec<Stage>,
    channels: Vec<Channel>,
    summary: EncodingSummary,
}

impl PipelineGraph {
    pub fn new(summary: EncodingSummary) -> Self {
        PipelineGraph {
            stages: Vec::new(),
            channels: Vec::new(),
            summary,
        }
    }

    pub fn channel(&mut self, name: impl Into<String>) -> ChannelId {
        let id = ChannelId(self.channels.len());
        self.channels.push(Channel {
            name: name.into(),
            queue: VecDeque::new(),
            producer: None,
            consumer: None,
            done_enqueued: false,
        });
        id
    }

    pub fn stage(
        &mut self,
        name: impl Into<String>,
        kind: StageKind,
        inputs: Vec<ChannelId>,
        outputs: Vec<ChannelId>,
        logic: Box<dyn StageLogic>,
    ) -> Result<(), SimError> {
        let name = name.into();
        let idx = self.stages.len();
        for &ChannelId(c) in &inputs {
            let ch = &mut self.channels[c];
            if ch.consumer.is_some() {
                return Err(SimError::Graph(format!(
                    "channel {} already has a consumer",
                    ch.name
                )));
            }
            ch.consumer = Some(idx);
        }
        for &ChannelId(c) in &outputs {
            let ch = &mut self.channels[c];
            if ch.producer.is_some() {
                return Err(SimError::Graph(format!(
                    "channel {} already has a producer",
                    ch.name
                )));
            }
            ch.producer = Some(idx);
        }
        self.stages.push(Stage {
            name,
            kind,
            inputs,
            outputs,
            logic,
        });
        Ok(())
    }

    pub fn stage_names(&self) -> Vec<(&str, StageKind)> {
        self.stages.iter().map(|s| (s.name.as_str(), s.kind)).collect()
    }

    /// Producer-to-consumer topological order; rejects cycles and channels
    /// with no producer.
    fn topo_order(&self) -> Result<Vec<usize>, SimError> {
        for ch in &self.channels {
            if ch.producer.is_none() {
                return Err(SimError::Graph(format!(
                    "channel {} has no producer",
                    ch.name
                )));
            }
        }
        let n = self.stages.len();
        let mut in_degree = vec![0usize; n];
        let mut edges: Vec<Vec<usize>> = vec![Vec::new(); n];
        for ch in &self.channels {
            if let (Some(p), Some(c)) = (ch.producer, ch.consumer) {
                edges[p].push(c);
                in_degree[c] += 1;
            }
        }
        let mut ready: VecDeque<usize> = (0..n).filter(|&s| in_degree[s] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(s) = ready.pop_front() {
            order.push(s);
            for &t in &edges[s] {
                in_degree[t] -= 1;
                if in_degree[t] == 0 {
                    ready.push_back(t);
                }
            }
        }
        if order.len() != n {
            return Err(SimError::Graph("stage graph contains a cycle".into()));
        }
        Ok(order)
    }
}

/// One stage firing that moved data.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEvent {
    pub round: usize,
    pub stage: String,
    pub consumed: usize,
    pub produced: usize,
}

/// A reduction-circuit event attributed to its stage.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CircuitEvent {
    pub stage: String,
    #[serde(flatten)]
    pub event: ReductionEvent,
}

/// Deterministic log of a run: replaying the same inputs yields an
/// identical trace.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct Trace {
    pub rounds: usize,
    pub summary: EncodingSummary,
    pub events: Vec<TraceEvent>,
    pub circuit_events: Vec<CircuitEvent>,
}

impl Trace {
    /// Stage firings as CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("round,stage,consumed,produced\n");
        for e in &self.events {
            out.push_str(&format!(
                "{},{},{},{}\n",
                e.round, e.stage, e.consumed, e.produced
            ));
        }
        out
    }

    /// Reduction-circuit events as CSV.
    pub fn circuit_csv(&self) -> String {
        let mut out = String::from("stage,step,machine,row,value,emitted\n");
        for c in &self.circuit_events {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                c.stage, c.event.step, c.event.machine, c.event.row, c.event.value, c.event.emitted
            ));
        }
        out
    }
}

/// Everything a finished run hands back: items drained from consumer-less
/// channels, keyed by channel name, plus the trace.
pub struct SimRun {
    pub outputs: BTreeMap<String, Vec<Item>>,
    pub trace: Trace,
}

/// Runs a graph to quiescence: stages fire in topological order each round
/// until a round moves no items, then channel conservation is checked.
pub fn run(mut graph: PipelineGraph) -> Result<SimRun, SimError> {
    let order = graph.topo_order()?;
    let mut trace = Trace {
        rounds: 0,
        summary: graph.summary,
        events: Vec::new(),
        circuit_events: Vec::new(),
    };

    loop {
        let mut moved = 0usize;
        for &s in &order {
            let stage = &mut graph.stages[s];
            let mut in_queues: Vec<VecDeque<Item>> = stage
                .inputs
                .iter()
                .map(|&ChannelId(c)| std::mem::take(&mut graph.channels[c].queue))
                .collect();
            let mut out_queues: Vec<VecDeque<Item>> = stage
                .outputs
                .iter()
                .map(|&ChannelId(c)| std::mem::take(&mut graph.channels[c].queue))
                .collect();
            let before_in: usize = in_queues.iter().map(VecDeque::len).sum();
            let before_out: usize = out_queues.iter().map(VecDeque::len).sum();

            let mut events = Vec::new();
            let fired = stage
                .logic
                .fire(&mut in_queues, &mut out_queues, &mut events);

            let consumed = before_in - in_queues.iter().map(VecDeque::len).sum::<usize>();
            let produced = out_queues.iter().map(VecDeque::len).sum::<usize>() - before_out;
            for (&ChannelId(c), q) in stage.inputs.iter().zip(in_queues) {
                graph.channels[c].queue = q;
            }
            for (&ChannelId(c), q) in stage.outputs.iter().zip(out_queues) {
                if q.iter().any(|i| *i == Item::Done) {
                    graph.channels[c].done_enqueued = true;
                }
                graph.channels[c].queue = q;
            }
            let stage_name = stage.name.clone();
            fired.map_err(|source| SimError::Stage {
                stage: stage_name.clone(),
                source,
            })?;

            if consumed + produced > 0 {
                trace.events.push(TraceEvent {
                    round: trace.rounds,
                    stage: stage_name.clone(),
                    consumed,
                    produced,
                });
                moved += consumed + produced;
            }
            trace.circuit_events.extend(events.into_iter().map(|event| CircuitEvent {
                stage: stage_name.clone(),
                event,
            }));
        }
        trace.rounds += 1;
        if moved == 0 {
            break;
        }
    }

    // Conservation at quiescence: consumers drained everything, every
    // producer terminated its stream.
    let mut outputs = BTreeMap::new();
    for ch in &mut graph.channels {
        match ch.consumer {
            Some(_) => {
                if !ch.queue.is_empty() {
                    return Err(SimError::Deadlock(format!(
                        "channel {} still holds {} items at quiescence",
                        ch.name,
                        ch.queue.len()
                    )));
                }
            }
            None => {
                let items: Vec<Item> = ch.queue.drain(..).filter(|i| *i != Item::Done).collect();
                outputs.insert(ch.name.clone(), items);
            }
        }
        if !ch.done_enqueued {
            return Err(SimError::Deadlock(format!(
                "channel {} never saw end-of-stream; its producer stalled",
                ch.name
            )));
        }
    }
    Ok(SimRun { outputs, trace })
}

/// Per-stage item totals.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct StageStats {
    pub stage: String,
    pub consumed: usize,
    pub produced: usize,
}

/// Proxy metrics for a run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub machines: usize,
    pub stream_length: usize,
    pub nnz: usize,
    pub padded_slots: usize,
    pub utilization: f64,
    /// True when the encoding carries no values at all, so utilization is
    /// reported as 0 rather than a ratio.
    pub degenerate: bool,
    pub per_stage: Vec<StageStats>,
}

/// Summarizes a trace: stream length, padding overhead, utilization, and
/// per-stage item counts.
pub fn stats(trace: &Trace) -> Stats {
    let EncodingSummary {
        machines,
        stream_length,
        nnz,
    } = trace.summary;
    let total_slots = machines * stream_length;
    let degenerate = total_slots == 0;
    let utilization = if degenerate {
        0.0
    } else {
        nnz as f64 / total_slots as f64
    };
    let mut totals: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for e in &trace.events {
        let t = totals.entry(&e.stage).or_insert((0, 0));
        t.0 += e.consumed;
        t.1 += e.produced;
    }
    Stats {
        machines,
        stream_length,
        nnz,
        padded_slots: total_slots - nnz,
        utilization,
        degenerate,
        per_stage: totals
            .into_iter()
            .map(|(stage, (consumed, produced))| StageStats {
                stage: stage.to_string(),
                consumed,
                produced,
            })
            .collect(),
    }
}
