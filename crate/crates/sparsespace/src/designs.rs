//! The two shipped SpMV designs as parameterized, ready-to-run graphs.
//!
//! Both stream matrix values per machine and recover dense row indices with
//! a structure decoder. The first interleaves whole CSR rows across machine
//! streams and reduces products with fused accumulators; the second streams
//! fixed-size row blocks, sums each block in an adder tree, pairs the
//! machines' block sums under decoder control, and finishes rows in a
//! linear-array reduction circuit.

use crate::inverse::{decoded_slot_rows, streaming_block_decoder, InverseError};
use crate::matrix::{DenseMatrix, DenseVector};
use crate::reduction::{
    find_continuity_violation, find_distinctness_violation, fused_accumulator_traced,
    linear_array_reduce_traced, tree_levels_needed, tree_reduce, PartialSum, PropertyViolation,
    ReductionError, ReductionEvent,
};
use crate::sim::{
    run, EncodingSummary, Item, PipelineGraph, SimError, StageError, StageKind, StageLogic, Trace,
};
use crate::transform::{encode, EncodedMatrix, RepresentationSpec, Structure, TransformError};
use std::collections::VecDeque;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DesignError {
    #[error("unknown design `{0}` (available: cisr, blocked)")]
    UnknownDesign(String),
    #[error("bad parameters: {0}")]
    BadParameters(String),
    #[error("x has length {x_len} but the matrix has {n_cols} columns")]
    DimensionMismatch { x_len: usize, n_cols: usize },
    #[error(transparent)]
    Transform(#[from] TransformError),
    #[error(transparent)]
    Reduction(#[from] ReductionError),
    #[error(transparent)]
    Inverse(#[from] InverseError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Row-interleaved design: `machines` value streams reduced by `adders`
/// fused accumulators, each serving `machines / adders` streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CisrDesignParams {
    pub machines: usize,
    pub adders: usize,
}

impl Default for CisrDesignParams {
    fn default() -> Self {
        CisrDesignParams {
            machines: 4,
            adders: 2,
        }
    }
}

impl CisrDesignParams {
    pub fn validate(&self) -> Result<(), DesignError> {
        if self.machines == 0 || self.adders == 0 {
            return Err(DesignError::BadParameters(
                "machines and adders must be at least 1".into(),
            ));
        }
        if !self.machines.is_multiple_of(self.adders) {
            return Err(DesignError::BadParameters(format!(
                "adders ({}) must divide machines ({})",
                self.adders, self.machines
            )));
        }
        Ok(())
    }
}

/// Blocked design: rows split into blocks of k/2 values, each machine owning
/// k/2 multipliers and an adder tree, finished by a linear-array circuit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockedDesignParams {
    pub k: usize,
    pub machines: usize,
    pub linear_array_levels: usize,
}

impl Default for BlockedDesignParams {
    fn default() -> Self {
        BlockedDesignParams {
            k: 4,
            machines: 2,
            linear_array_levels: 4,
        }
    }
}

impl BlockedDesignParams {
    pub fn block_factor(&self) -> usize {
        self.k / 2
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        if self.k < 2 || !self.k.is_multiple_of(2) {
            return Err(DesignError::BadParameters(format!(
                "k must be even and at least 2, got {}",
                self.k
            )));
        }
        if self.machines == 0 {
            return Err(DesignError::BadParameters(
                "machines must be at least 1".into(),
            ));
        }
        if self.linear_array_levels == 0 {
            return Err(DesignError::BadParameters(
                "linear array needs at least one level".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DesignKind {
    Cisr,
    Blocked,
}

impl FromStr for DesignKind {
    type Err = DesignError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "cisr" => Ok(DesignKind::Cisr),
            "blocked" => Ok(DesignKind::Blocked),
            other => Err(DesignError::UnknownDesign(other.to_string())),
        }
    }
}

/// A shipped design plus its parameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DesignDescriptor {
    Cisr(CisrDesignParams),
    Blocked(BlockedDesignParams),
}

impl DesignDescriptor {
    pub fn validate(&self) -> Result<(), DesignError> {
        match self {
            DesignDescriptor::Cisr(p) => p.validate(),
            DesignDescriptor::Blocked(p) => p.validate(),
        }
    }

    /// The representation chain this design consumes.
    pub fn representation(&self) -> RepresentationSpec {
        match self {
            DesignDescriptor::Cisr(p) => RepresentationSpec::cisr(p.machines),
            DesignDescriptor::Blocked(p) => {
                RepresentationSpec::blocked(p.block_factor(), p.machines)
            }
        }
    }

    pub fn machines(&self) -> usize {
        match self {
            DesignDescriptor::Cisr(p) => p.machines,
            DesignDescriptor::Blocked(p) => p.machines,
        }
    }
}

fn pop_value(q: &mut VecDeque<Item>) -> Result<f64, StageError> {
    match q.pop_front() {
        Some(Item::Value(v)) => Ok(v),
        Some(other) => Err(StageError::UnexpectedItem {
            expected: "value",
            found: other.kind().into(),
        }),
        None => Err(StageError::UnexpectedItem {
            expected: "value",
            found: "empty channel".into(),
        }),
    }
}

/// Emits fixed item streams once, one per output channel.
struct Loader {
    per_output: Vec<Vec<Item>>,
    sent: bool,
}

impl Loader {
    fn new(per_output: Vec<Vec<Item>>) -> Self {
        Loader {
            per_output,
            sent: false,
        }
    }
}

impl StageLogic for Loader {
    fn fire(
        &mut self,
        _inputs: &mut [VecDeque<Item>],
        outputs: &mut [VecDeque<Item>],
        _events: &mut Vec<ReductionEvent>,
    ) -> Result<(), StageError> {
        if !self.sent {
            for (out, items) in outputs.iter_mut().zip(self.per_output.drain(..)) {
                out.extend(items);
                out.push_back(Item::Done);
            }
            self.sent = true;
        }
        Ok(())
    }
}

/// Buffers the x stream and hands the whole vector to every consumer.
struct XFeeder {
    collected: Vec<f64>,
    finished: bool,
}

impl XFeeder {
    fn new() -> Self {
        XFeeder {
            collected: Vec::new(),
            finished: false,
        }
    }
}

impl StageLogic for XFeeder {
    fn fire(
        &mut self,
        inputs: &mut [VecDeque<Item>],
        outputs: &mut [VecDeque<Item>],
        _events: &mut Vec<ReductionEvent>,
    ) -> Result<(), StageError> {
        if self.finished {
            return Ok(());
        }
        while let Some(item) = inputs[0].pop_front() {
            match item {
                Item::Value(v) => self.collected.push(v),
                Item::Done => {
                    for out in outputs.iter_mut() {
                        out.push_back(Item::Vector(self.collected.clone()));
                        out.push_back(Item::Done);
                    }
                    self.finished = true;
                    return Ok(());
                }
                other => {
                    return Err(StageError::UnexpectedItem {
                        expected: "value",
                        found: other.kind().into(),
                    })
                }
            }
        }
        Ok(())
    }
}

/// Replays the line scheduler over the collected segment-length streams and
/// emits each machine's per-slot row indices.
struct RowDecoderStage {
    collected: Vec<Vec<usize>>,
    done: Vec<bool>,
    n_rows: usize,
    emitted: bool,
}

impl RowDecoderStage {
    fn new(machines: usize, n_rows: usize) -> Self {
        RowDecoderStage {
            collected: vec![Vec::new(); machines],
            done: vec![false; machines],
            n_rows,
            emitted: false,
        }
    }
}

impl StageLogic for RowDecoderStage {
    fn fire(
        &mut self,
        inputs: &mut [VecDeque<Item>],
        outputs: &mut [VecDeque<Item>],
        _events: &mut Vec<ReductionEvent>,
    ) -> Result<(), StageError> {
        if self.emitted {
            return Ok(());
        }
        for (m, input) in inputs.iter_mut().enumerate() {
            while let Some(item) = input.pop_front() {
                match item {
                    Item::Structure(len) => self.collected[m].push(len),
                    Item::Done => self.done[m] = true,
                    other => {
                        return Err(StageError::UnexpectedItem {
                            expected: "structure",
                            found: other.kind().into(),
                        })
                    }
                }
            }
        }
        if self.done.iter().all(|&d| d) {
            let rows = crate::inverse::streaming_row_decoder(&self.collected, self.n_rows)?;
            for (out, stream) in outputs.iter_mut().zip(rows) {
                out.extend(stream.into_iter().map(Item::Row));
                out.push_back(Item::Done);
            }
            self.emitted = true;
        }
        Ok(())
    }
}

/// Decodes block rows from the global blocks-per-row stream and emits, per
/// machine, one row-plus-pairing-flag record per block.
struct BlockDecoderStage {
    collected: Vec<usize>,
    done: bool,
    factor: usize,
    machines: usize,
    expected_padded_blocks: usize,
    emitted: bool,
}

impl BlockDecoderStage {
    fn new(factor: usize, machines: usize, expected_padded_blocks: usize) -> Self {
        BlockDecoderStage {
            collected: Vec::new(),
            done: false,
            factor,
            machines,
            expected_padded_blocks,
            emitted: false,
        }
    }
}

impl StageLogic for BlockDecoderStage {
    fn fire(
        &mut self,
        inputs: &mut [VecDeque<Item>],
        outputs: &mut [VecDeque<Item>],
        _events: &mut Vec<ReductionEvent>,
    ) -> Result<(), StageError> {
        if self.emitted {
            return Ok(());
        }
        while let Some(item) = inputs[0].pop_front() {
            match item {
                Item::Structure(count) => self.collected.push(count),
                Item::Done => self.done = true,
                other => {
                    return Err(StageError::UnexpectedItem {
                        expected: "structure",
                        found: other.kind().into(),
                    })
                }
            }
        }
        if self.done {
            let real_total: usize = self.collected.iter().sum();
            let decodes =
                streaming_block_decoder(&self.collected, self.factor, self.machines, real_total)?;
            if decodes.len() != self.expected_padded_blocks {
                return Err(StageError::Inverse(InverseError::InconsistentBlockCount {
                    sum: decodes.len(),
                    declared: self.expected_padded_blocks,
                }));
            }
            for d in &decodes {
                outputs[d.machine].push_back(Item::RowFlag {
                    row: d.row,
                    same_as_prev: d.same_row_as_previous_machine,
                });
            }
            for out in outputs.iter_mut() {
                out.push_back(Item::Done);
            }
            self.emitted = true;
        }
        Ok(())
    }
}

/// One machine's multiplier in the row-interleaved design: pairs each matrix
/// slot with its decoded row and multiplies by the buffered x entry.
struct CisrMultiplier {
    x: Option<Vec<f64>>,
}

impl CisrMultiplier {
    fn new() -> Self {
        CisrMultiplier { x: None }
    }
}

impl StageLogic for CisrMultiplier {
    fn fire(
        &mut self,
        inputs: &mut [VecDeque<Item>],
        outputs: &mut [VecDeque<Item>],
        _events: &mut Vec<ReductionEvent>,
    ) -> Result<(), StageError> {
        if self.x.is_none() {
            if let Some(item) = inputs[2].pop_front() {
                match item {
                    Item::Vector(x) => self.x = Some(x),
                    other => {
                        return Err(StageError::UnexpectedItem {
                            expected: "vector",
                            found: other.kind().into(),
                        })
                    }
                }
            }
        }
        let Some(x) = &self.x else { return Ok(()) };
        loop {
            match (inputs[0].front(), inputs[1].front()) {
                (None, _) | (_, None) => return Ok(()),
                (Some(Item::Done), Some(Item::Done)) => {
                    inputs[0].pop_front();
                    inputs[1].pop_front();
                    inputs[2].pop_front(); // the feeder's end-of-stream
                    outputs[0].push_back(Item::Done);
                    return Ok(());
                }
                // One stream ended early; the leftover surfaces as a
                // deadlock at quiescence.
                (Some(Item::Done), _) | (_, Some(Item::Done)) => return Ok(()),
                (Some(Item::Entry { .. }), Some(Item::Row(_))) => {
                    let Some(Item::Entry { value, col }) = inputs[0].pop_front() else {
                        unreachable!()
                    };
                    let Some(Item::Row(row)) = inputs[1].pop_front() else {
                        unreachable!()
                    };
                    outputs[0].push_back(Item::Partial(PartialSum::new(row, value * x[col])));
                }
                (Some(Item::Entry { .. }), Some(other)) => {
                    return Err(StageError::UnexpectedItem {
                        expected: "row",
                        found: other.kind().into(),
                    })
                }
                (Some(other), _) => {
                    return Err(StageError::UnexpectedItem {
                        expected: "entry",
                        found: other.kind().into(),
                    })
                }
            }
        }
    }
}

/// One machine's multiplier bank in the blocked design: every slot value
/// times its x entry, rows attached later under decoder control.
struct BlockMultipliers {
    x: Option<Vec<f64>>,
}

impl BlockMultipliers {
    fn new() -> Self {
        BlockMultipliers { x: None }
    }
}

impl StageLogic for BlockMultipliers {
    fn fire(
        &mut self,
        inputs: &mut [VecDeque<Item>],
        outputs: &mut [VecDeque<Item>],
        _events: &mut Vec<ReductionEvent>,
    ) -> Result<(), StageError> {
        if self.x.is_none() {
            if let Some(item) = inputs[1].pop_front() {
                match item {
                    Item::Vector(x) => self.x = Some(x),
                    other => {
                        return Err(StageError::UnexpectedItem {
                            expected: "vector",
                            found: other.kind().into(),
                        })
                    }
                }
            }
        }
        let Some(x) = &self.x else { return Ok(()) };
        while let Some(item) = inputs[0].pop_front() {
            match item {
                Item::Entry { value, col } => {
                    outputs[0].push_back(Item::Value(value * x[col]));
                }
                Item::Done => {
                    inputs[1].pop_front();
                    outputs[0].push_back(Item::Done);
                    return Ok(());
                }
                other => {
                    return Err(StageError::UnexpectedItem {
                        expected: "entry",
                        found: other.kind().into(),
                    })
                }
            }
        }
        Ok(())
    }
}

/// Sums each group of `factor` products in a balanced adder tree, emitting
/// one block sum per block.
struct AdderTree {
    factor: usize,
    pending: Vec<f64>,
}

impl AdderTree {
    fn new(factor: usize) -> Self {
        AdderTree {
            factor,
            pending: Vec::new(),
        }
    }
}

impl StageLogic for AdderTree {
    fn fire(
        &mut self,
        inputs: &mut [VecDeque<Item>],
        outputs: &mut [VecDeque<Item>],
        _events: &mut Vec<ReductionEvent>,
    ) -> Result<(), StageError> {
        while let Some(item) = inputs[0].pop_front() {
            match item {
                Item::Value(v) => {
                    self.pending.push(v);
                    if self.pending.len() == self.factor {
                        let sum = tree_reduce(&self.pending, tree_levels_needed(self.factor))?;
                        self.pending.clear();
                        outputs[0].push_back(Item::Value(sum));
                    }
                }
                Item::Done => {
                    if !self.pending.is_empty() {
                        let sum = tree_reduce(&self.pending, tree_levels_needed(self.factor))?;
                        self.pending.clear();
                        outputs[0].push_back(Item::Value(sum));
                    }
                    outputs[0].push_back(Item::Done);
                    return Ok(());
                }
                other => {
                    return Err(StageError::UnexpectedItem {
                        expected: "value",
                        found: other.kind().into(),
                    })
                }
            }
        }
        Ok(())
    }
}

/// Cross-machine adder driven by the block decoder: per step, block sums of
/// machines flagged as sharing a row are added; each run hands one partial
/// sum downstream, first row before second within the step.
struct PairingAdder {
    machines: usize,
}

impl StageLogic for PairingAdder {
    fn fire(
        &mut self,
        inputs: &mut [VecDeque<Item>],
        outputs: &mut [VecDeque<Item>],
        _events: &mut Vec<ReductionEvent>,
    ) -> Result<(), StageError> {
        let m = self.machines;
        loop {
            let sums_ready = (0..m).all(|q| !inputs[q].is_empty());
            let flags_ready = (0..m).all(|q| !inputs[m + q].is_empty());
            if !sums_ready || !flags_ready {
                return Ok(());
            }
            let all_done = (0..2 * m).all(|c| inputs[c].front() == Some(&Item::Done));
            if all_done {
                for input in inputs.iter_mut() {
                    input.pop_front();
                }
                outputs[0].push_back(Item::Done);
                return Ok(());
            }
            let mut current: Option<(usize, f64)> = None;
            for q in 0..m {
                let sum = pop_value(&mut inputs[q])?;
                let (row, same) = match inputs[m + q].pop_front() {
                    Some(Item::RowFlag { row, same_as_prev }) => (row, same_as_prev),
                    Some(other) => {
                        return Err(StageError::UnexpectedItem {
                            expected: "row_flag",
                            found: other.kind().into(),
                        })
                    }
                    None => unreachable!("readiness checked above"),
                };
                match current {
                    Some((r, acc)) if same => current = Some((r, acc + sum)),
                    Some((r, acc)) => {
                        outputs[0].push_back(Item::Partial(PartialSum::new(r, acc)));
                        current = Some((row, sum));
                    }
                    None => current = Some((row, sum)),
                }
            }
            if let Some((r, acc)) = current {
                outputs[0].push_back(Item::Partial(PartialSum::new(r, acc)));
            }
        }
    }
}

/// Linear-array reduction circuit over the combined partial-sum stream.
struct LinearArrayStage {
    levels: usize,
    collected: Vec<PartialSum>,
    emitted: bool,
}

impl LinearArrayStage {
    fn new(levels: usize) -> Self {
        LinearArrayStage {
            levels,
            collected: Vec::new(),
            emitted: false,
        }
    }
}

impl StageLogic for LinearArrayStage {
    fn fire(
        &mut self,
        inputs: &mut [VecDeque<Item>],
        outputs: &mut [VecDeque<Item>],
        events: &mut Vec<ReductionEvent>,
    ) -> Result<(), StageError> {
        if self.emitted {
            return Ok(());
        }
        while let Some(item) = inputs[0].pop_front() {
            match item {
                Item::Partial(p) => self.collected.push(p),
                Item::Done => {
                    let (finished, trace) =
                        linear_array_reduce_traced(&self.collected, self.levels)?;
                    events.extend(trace.events);
                    outputs[0].extend(finished.into_iter().map(Item::Partial));
                    outputs[0].push_back(Item::Done);
                    self.emitted = true;
                    return Ok(());
                }
                other => {
                    return Err(StageError::UnexpectedItem {
                        expected: "partial",
                        found: other.kind().into(),
                    })
                }
            }
        }
        Ok(())
    }
}

/// One fused accumulator serving a contiguous group of product streams.
struct FusedAccumulatorStage {
    base_machine: usize,
    n_rows: usize,
    collected: Vec<Vec<(usize, f64)>>,
    done: Vec<bool>,
    emitted: bool,
}

impl FusedAccumulatorStage {
    fn new(streams: usize, base_machine: usize, n_rows: usize) -> Self {
        FusedAccumulatorStage {
            base_machine,
            n_rows,
            collected: vec![Vec::new(); streams],
            done: vec![false; streams],
            emitted: false,
        }
    }
}

impl StageLogic for FusedAccumulatorStage {
    fn fire(
        &mut self,
        inputs: &mut [VecDeque<Item>],
        outputs: &mut [VecDeque<Item>],
        events: &mut Vec<ReductionEvent>,
    ) -> Result<(), StageError> {
        if self.emitted {
            return Ok(());
        }
        for (s, input) in inputs.iter_mut().enumerate() {
            while let Some(item) = input.pop_front() {
                match item {
                    Item::Partial(p) => self.collected[s].push((p.row, p.value)),
                    Item::Done => self.done[s] = true,
                    other => {
                        return Err(StageError::UnexpectedItem {
                            expected: "partial",
                            found: other.kind().into(),
                        })
                    }
                }
            }
        }
        if self.done.iter().all(|&d| d) {
            let (groups, trace) = fused_accumulator_traced(&self.collected, 1, self.n_rows)?;
            events.extend(trace.events.into_iter().map(|mut e| {
                e.machine += self.base_machine;
                e
            }));
            for p in groups.into_iter().flatten() {
                outputs[0].push_back(Item::Partial(p));
            }
            outputs[0].push_back(Item::Done);
            self.emitted = true;
        }
        Ok(())
    }
}

/// Accumulates finished partial sums into a dense result buffer and emits y
/// in ascending row order, discarding synthetic rows.
struct YUnloader {
    buffer: Vec<f64>,
    done: Vec<bool>,
    emitted: bool,
}

impl YUnloader {
    fn new(inputs: usize, n_rows: usize) -> Self {
        YUnloader {
            buffer: vec![0.0; n_rows],
            done: vec![false; inputs],
            emitted: false,
        }
    }
}

impl StageLogic for YUnloader {
    fn fire(
        &mut self,
        inputs: &mut [VecDeque<Item>],
        outputs: &mut [VecDeque<Item>],
        _events: &mut Vec<ReductionEvent>,
    ) -> Result<(), StageError> {
        if self.emitted {
            return Ok(());
        }
        for (s, input) in inputs.iter_mut().enumerate() {
            while let Some(item) = input.pop_front() {
                match item {
                    Item::Partial(p) => {
                        if p.row < self.buffer.len() {
                            self.buffer[p.row] += p.value;
                        }
                        // Synthetic rows carry only padding zeros; dropped.
                    }
                    Item::Done => self.done[s] = true,
                    other => {
                        return Err(StageError::UnexpectedItem {
                            expected: "partial",
                            found: other.kind().into(),
                        })
                    }
                }
            }
        }
        if self.done.iter().all(|&d| d) {
            outputs[0].extend(self.buffer.iter().map(|&v| Item::Value(v)));
            outputs[0].push_back(Item::Done);
            self.emitted = true;
        }
        Ok(())
    }
}

fn check_encoding_matches(
    d: &DesignDescriptor,
    e: &EncodedMatrix,
    x: &DenseVector,
) -> Result<(), DesignError> {
    if x.len() != e.origin_dims.1 {
        return Err(DesignError::DimensionMismatch {
            x_len: x.len(),
            n_cols: e.origin_dims.1,
        });
    }
    if e.machines != d.machines() {
        return Err(DesignError::BadParameters(format!(
            "encoding has {} machines but the design expects {}",
            e.machines,
            d.machines()
        )));
    }
    match (d, &e.structure) {
        (DesignDescriptor::Cisr(_), Structure::RowLen(_)) => Ok(()),
        (DesignDescriptor::Blocked(p), Structure::RowBlocks { factor, .. }) => {
            if *factor != p.block_factor() {
                return Err(DesignError::BadParameters(format!(
                    "encoding uses block factor {} but the design expects {}",
                    factor,
                    p.block_factor()
                )));
            }
            Ok(())
        }
        _ => Err(DesignError::BadParameters(
            "encoding structure does not match the design".into(),
        )),
    }
}

/// Wires a design graph around an encoded matrix and an x vector.
pub fn build_graph(
    d: &DesignDescriptor,
    e: &EncodedMatrix,
    x: &DenseVector,
) -> Result<PipelineGraph, DesignError> {
    d.validate()?;
    check_encoding_matches(d, e, x)?;
    match d {
        DesignDescriptor::Cisr(p) => build_cisr_graph(p, e, x),
        DesignDescriptor::Blocked(p) => build_blocked_graph(p, e, x),
    }
}

fn entry_items(e: &EncodedMatrix, machine: usize) -> Vec<Item> {
    e.values[machine]
        .iter()
        .zip(&e.col_idx[machine])
        .map(|(&value, &col)| Item::Entry { value, col })
        .collect()
}

fn summary_of(e: &EncodedMatrix) -> EncodingSummary {
    EncodingSummary {
        machines: e.machines,
        stream_length: e.stream_length,
        nnz: e.nnz(),
    }
}

fn build_cisr_graph(
    p: &CisrDesignParams,
    e: &EncodedMatrix,
    x: &DenseVector,
) -> Result<PipelineGraph, DesignError> {
    let Structure::RowLen(row_len) = &e.structure else {
        unreachable!("checked by check_encoding_matches")
    };
    let m = p.machines;
    let group = m / p.adders;
    let n_rows = e.origin_dims.0;

    let mut g = PipelineGraph::new(summary_of(e));
    let entries: Vec<_> = (0..m).map(|q| g.channel(format!("a_entries_{q}"))).collect();
    let row_lens: Vec<_> = (0..m).map(|q| g.channel(format!("a_row_len_{q}"))).collect();
    let x_values = g.channel("x_values");
    let x_bufs: Vec<_> = (0..m).map(|q| g.channel(format!("x_buf_{q}"))).collect();
    let rows: Vec<_> = (0..m).map(|q| g.channel(format!("rows_{q}"))).collect();
    let products: Vec<_> = (0..m).map(|q| g.channel(format!("products_{q}"))).collect();
    let partials: Vec<_> = (0..p.adders)
        .map(|t| g.channel(format!("partials_{t}")))
        .collect();
    let y = g.channel("y");

    for q in 0..m {
        let structure = row_len[q].iter().map(|&l| Item::Structure(l)).collect();
        g.stage(
            format!("A_loader_{q}"),
            StageKind::Loader,
            vec![],
            vec![entries[q], row_lens[q]],
            Box::new(Loader::new(vec![entry_items(e, q), structure])),
        )?;
    }
    g.stage(
        "x_loader",
        StageKind::Loader,
        vec![],
        vec![x_values],
        Box::new(Loader::new(vec![x
            .as_slice()
            .iter()
            .map(|&v| Item::Value(v))
            .collect()])),
    )?;
    g.stage(
        "x_feeder",
        StageKind::Compute,
        vec![x_values],
        x_bufs.clone(),
        Box::new(XFeeder::new()),
    )?;
    g.stage(
        "decoder",
        StageKind::Decoder,
        row_lens,
        rows.clone(),
        Box::new(RowDecoderStage::new(m, n_rows)),
    )?;
    for q in 0..m {
        g.stage(
            format!("multiplier_{q}"),
            StageKind::Compute,
            vec![entries[q], rows[q], x_bufs[q]],
            vec![products[q]],
            Box::new(CisrMultiplier::new()),
        )?;
    }
    for t in 0..p.adders {
        g.stage(
            format!("fused_accumulator_{t}"),
            StageKind::Reducer,
            products[t * group..(t + 1) * group].to_vec(),
            vec![partials[t]],
            Box::new(FusedAccumulatorStage::new(group, t * group, n_rows)),
        )?;
    }
    g.stage(
        "y_unloader",
        StageKind::Unloader,
        partials,
        vec![y],
        Box::new(YUnloader::new(p.adders, n_rows)),
    )?;
    Ok(g)
}

fn build_blocked_graph(
    p: &BlockedDesignParams,
    e: &EncodedMatrix,
    x: &DenseVector,
) -> Result<PipelineGraph, DesignError> {
    let Structure::RowBlocks { blocks_per_row, factor } = &e.structure else {
        unreachable!("checked by check_encoding_matches")
    };
    let m = p.machines;
    let n_rows = e.origin_dims.0;
    let padded_blocks = if *factor == 0 {
        0
    } else {
        m * (e.stream_length / factor)
    };

    let mut g = PipelineGraph::new(summary_of(e));
    let entries: Vec<_> = (0..m).map(|q| g.channel(format!("a_entries_{q}"))).collect();
    let row_blocks_ch = g.channel("row_blocks");
    let x_values = g.channel("x_values");
    let x_bufs: Vec<_> = (0..m).map(|q| g.channel(format!("x_buf_{q}"))).collect();
    let block_rows: Vec<_> = (0..m)
        .map(|q| g.channel(format!("block_rows_{q}")))
        .collect();
    let products: Vec<_> = (0..m).map(|q| g.channel(format!("products_{q}"))).collect();
    let block_sums: Vec<_> = (0..m)
        .map(|q| g.channel(format!("block_sums_{q}")))
        .collect();
    let combined = g.channel("combined_partials");
    let row_sums = g.channel("row_sums");
    let y = g.channel("y");

    for q in 0..m {
        g.stage(
            format!("A_loader_{q}"),
            StageKind::Loader,
            vec![],
            vec![entries[q]],
            Box::new(Loader::new(vec![entry_items(e, q)])),
        )?;
    }
    g.stage(
        "row_blocks_loader",
        StageKind::Loader,
        vec![],
        vec![row_blocks_ch],
        Box::new(Loader::new(vec![blocks_per_row
            .iter()
            .map(|&b| Item::Structure(b))
            .collect()])),
    )?;
    g.stage(
        "decoder",
        StageKind::Decoder,
        vec![row_blocks_ch],
        block_rows.clone(),
        Box::new(BlockDecoderStage::new(*factor, m, padded_blocks)),
    )?;
    g.stage(
        "x_loader",
        StageKind::Loader,
        vec![],
        vec![x_values],
        Box::new(Loader::new(vec![x
            .as_slice()
            .iter()
            .map(|&v| Item::Value(v))
            .collect()])),
    )?;
    g.stage(
        "x_feeder",
        StageKind::Compute,
        vec![x_values],
        x_bufs.clone(),
        Box::new(XFeeder::new()),
    )?;
    for q in 0..m {
        g.stage(
            format!("multipliers_{q}"),
            StageKind::Compute,
            vec![entries[q], x_bufs[q]],
            vec![products[q]],
            Box::new(BlockMultipliers::new()),
        )?;
        g.stage(
            format!("adder_tree_{q}"),
            StageKind::Reducer,
            vec![products[q]],
            vec![block_sums[q]],
            Box::new(AdderTree::new(*factor)),
        )?;
    }
    let mut pairing_inputs = block_sums;
    pairing_inputs.extend(block_rows);
    g.stage(
        "pairing_adder",
        StageKind::Reducer,
        pairing_inputs,
        vec![combined],
        Box::new(PairingAdder { machines: m }),
    )?;
    g.stage(
        "reduction_circuit",
        StageKind::Reducer,
        vec![combined],
        vec![row_sums],
        Box::new(LinearArrayStage::new(p.linear_array_levels)),
    )?;
    g.stage(
        "y_unloader",
        StageKind::Unloader,
        vec![row_sums],
        vec![y],
        Box::new(YUnloader::new(1, n_rows)),
    )?;
    Ok(g)
}

fn extract_y(outputs: &std::collections::BTreeMap<String, Vec<Item>>) -> DenseVector {
    let items = outputs.get("y").expect("designs expose a y channel");
    DenseVector::new(
        items
            .iter()
            .map(|i| match i {
                Item::Value(v) => *v,
                other => unreachable!("y channel carries values, found {}", other.kind()),
            })
            .collect(),
    )
}

/// Runs a built graph to completion and extracts the result vector.
pub fn run_graph(graph: PipelineGraph) -> Result<(DenseVector, Trace), DesignError> {
    let finished = run(graph)?;
    Ok((extract_y(&finished.outputs), finished.trace))
}

/// Asserts the reduction preconditions the row-interleaved design relies on:
/// per-machine continuity and cross-machine distinctness of decoded rows.
fn assert_cisr_properties(e: &EncodedMatrix) -> Result<(), DesignError> {
    let rows = decoded_slot_rows(e)?;
    for (stream, r) in rows.iter().enumerate() {
        if let Some(row) = find_continuity_violation(r) {
            return Err(
                ReductionError::PropertyViolated(PropertyViolation::Continuity { stream, row })
                    .into(),
            );
        }
    }
    if let Some((step, first, second, row)) = find_distinctness_violation(&rows, e.origin_dims.0) {
        return Err(ReductionError::PropertyViolated(PropertyViolation::Distinctness {
            step,
            first,
            second,
            row,
        })
        .into());
    }
    Ok(())
}

/// End-to-end row-interleaved SpMV: encode, verify the reduction
/// preconditions, simulate, and return y with the run trace.
pub fn design_cisr_spmv(
    a: &DenseMatrix,
    x: &DenseVector,
    p: CisrDesignParams,
) -> Result<(DenseVector, Trace), DesignError> {
    p.validate()?;
    if x.len() != a.n_cols() {
        return Err(DesignError::DimensionMismatch {
            x_len: x.len(),
            n_cols: a.n_cols(),
        });
    }
    let e = encode(a, &RepresentationSpec::cisr(p.machines))?;
    assert_cisr_properties(&e)?;
    run_graph(build_graph(&DesignDescriptor::Cisr(p), &e, x)?)
}

/// End-to-end blocked SpMV: encode with blocks of k/2, simulate the
/// tree/pairing/linear-array pipeline, and return y with the run trace.
pub fn design_blocked_spmv(
    a: &DenseMatrix,
    x: &DenseVector,
    p: BlockedDesignParams,
) -> Result<(DenseVector, Trace), DesignError> {
    p.validate()?;
    if x.len() != a.n_cols() {
        return Err(DesignError::DimensionMismatch {
            x_len: x.len(),
            n_cols: a.n_cols(),
        });
    }
    let e = encode(
        a,
        &RepresentationSpec::blocked(p.block_factor(), p.machines),
    )?;
    run_graph(build_graph(&DesignDescriptor::Blocked(p), &e, x)?)
}
