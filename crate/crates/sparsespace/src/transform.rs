//! The invertible transformation chain: pack out zeros, optionally block the
//! packed lines, then schedule the resulting jobs onto parallel machines.
//!
//! Every step records per-slot provenance, so the encoded form always carries
//! the exact origin of each stream position. The final step is always a job
//! schedule: it gives each value its two new indices (machine, position).

use crate::matrix::DenseMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use std::fmt;
use thiserror::Error;

/// Dimension packed or blocked away.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackDim {
    Rows,
    Columns,
}

/// Kind of job handed to the scheduler.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleDim {
    Rows,
    Columns,
    Blocks,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PaddingPolicy {
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulePolicy {
    Asap,
}

/// One step of a representation chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformStep {
    Pack {
        dim: PackDim,
        record_index_as: String,
        record_length_as: Option<String>,
    },
    Block {
        dim: PackDim,
        factor: usize,
        padding: PaddingPolicy,
    },
    Schedule {
        dim: ScheduleDim,
        machines: usize,
        policy: SchedulePolicy,
        padding: PaddingPolicy,
    },
}

/// An ordered chain of transformation steps. Valid chains contain exactly one
/// pack, at most one block after it, and end with exactly one schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepresentationSpec {
    pub name: String,
    pub steps: Vec<TransformStep>,
}

impl RepresentationSpec {
    /// CSR rows scheduled ASAP across `machines` streams (the CISR layout).
    pub fn cisr(machines: usize) -> Self {
        RepresentationSpec {
            name: "cisr".into(),
            steps: vec![
                TransformStep::Pack {
                    dim: PackDim::Columns,
                    record_index_as: "col_idx".into(),
                    record_length_as: Some("row_len".into()),
                },
                TransformStep::Schedule {
                    dim: ScheduleDim::Rows,
                    machines,
                    policy: SchedulePolicy::Asap,
                    padding: PaddingPolicy::Zero,
                },
            ],
        }
    }

    /// CSR rows split into fixed-size blocks, blocks scheduled ASAP.
    pub fn blocked(block_factor: usize, machines: usize) -> Self {
        RepresentationSpec {
            name: "blocked".into(),
            steps: vec![
                TransformStep::Pack {
                    dim: PackDim::Columns,
                    record_index_as: "col_idx".into(),
                    record_length_as: None,
                },
                TransformStep::Block {
                    dim: PackDim::Columns,
                    factor: block_factor,
                    padding: PaddingPolicy::Zero,
                },
                TransformStep::Schedule {
                    dim: ScheduleDim::Blocks,
                    machines,
                    policy: SchedulePolicy::Asap,
                    padding: PaddingPolicy::Zero,
                },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SpecViolation {
    NoPack,
    MultiplePacks,
    NoSchedule,
    MultipleSchedules,
    ScheduleNotLast,
    PackAfterBlock,
    MultipleBlocks,
    BlockDimMismatch,
    ZeroBlockFactor,
    ZeroMachines,
    ScheduleDimMismatch {
        expected: ScheduleDim,
        found: ScheduleDim,
    },
}

impl fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpecViolation::NoPack => write!(f, "chain must contain a pack step"),
            SpecViolation::MultiplePacks => write!(f, "chain must contain exactly one pack step"),
            SpecViolation::NoSchedule => write!(f, "chain must end with a schedule step"),
            SpecViolation::MultipleSchedules => {
                write!(f, "chain must contain exactly one schedule step")
            }
            SpecViolation::ScheduleNotLast => write!(f, "the schedule step must come last"),
            SpecViolation::PackAfterBlock => write!(f, "pack must precede block"),
            SpecViolation::MultipleBlocks => write!(f, "at most one block step is supported"),
            SpecViolation::BlockDimMismatch => {
                write!(f, "block must act on the same dimension as pack")
            }
            SpecViolation::ZeroBlockFactor => write!(f, "block factor must be at least 1"),
            SpecViolation::ZeroMachines => write!(f, "schedule needs at least one machine"),
            SpecViolation::ScheduleDimMismatch { expected, found } => write!(
                f,
                "schedule dimension {found:?} does not match the jobs produced by the chain (expected {expected:?})"
            ),
        }
    }
}

/// Outcome of validating a representation spec.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<SpecViolation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_valid() {
            write!(f, "valid")
        } else {
            for (n, v) in self.violations.iter().enumerate() {
                if n > 0 {
                    writeln!(f)?;
                }
                write!(f, "- {v}")?;
            }
            Ok(())
        }
    }
}

/// Checks the chain invariants and reports every violation found.
pub fn validate_spec(spec: &RepresentationSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    let steps = &spec.steps;

    let packs: Vec<usize> = steps
        .iter()
        .enumerate()
        .filter_map(|(n, s)| matches!(s, TransformStep::Pack { .. }).then_some(n))
        .collect();
    let blocks: Vec<usize> = steps
        .iter()
        .enumerate()
        .filter_map(|(n, s)| matches!(s, TransformStep::Block { .. }).then_some(n))
        .collect();
    let schedules: Vec<usize> = steps
        .iter()
        .enumerate()
        .filter_map(|(n, s)| matches!(s, TransformStep::Schedule { .. }).then_some(n))
        .collect();

    match packs.len() {
        0 => report.violations.push(SpecViolation::NoPack),
        1 => {}
        _ => report.violations.push(SpecViolation::MultiplePacks),
    }
    match schedules.len() {
        0 => report.violations.push(SpecViolation::NoSchedule),
        1 => {
            if schedules[0] != steps.len() - 1 {
                report.violations.push(SpecViolation::ScheduleNotLast);
            }
        }
        _ => report.violations.push(SpecViolation::MultipleSchedules),
    }
    if blocks.len() > 1 {
        report.violations.push(SpecViolation::MultipleBlocks);
    }
    if let (Some(&p), Some(&b)) = (packs.first(), blocks.first()) {
        if p > b {
            report.violations.push(SpecViolation::PackAfterBlock);
        }
    }

    let pack_dim = packs.first().map(|&n| match steps[n] {
        TransformStep::Pack { dim, .. } => dim,
        _ => unreachable!(),
    });
    if let Some(&b) = blocks.first() {
        if let TransformStep::Block { dim, factor, .. } = steps[b] {
            if factor == 0 {
                report.violations.push(SpecViolation::ZeroBlockFactor);
            }
            if pack_dim.is_some() && pack_dim != Some(dim) {
                report.violations.push(SpecViolation::BlockDimMismatch);
            }
        }
    }
    if let Some(&s) = schedules.first() {
        if let TransformStep::Schedule { dim, machines, .. } = steps[s] {
            if machines == 0 {
                report.violations.push(SpecViolation::ZeroMachines);
            }
            let expected = if !blocks.is_empty() {
                Some(ScheduleDim::Blocks)
            } else {
                pack_dim.map(|d| match d {
                    PackDim::Columns => ScheduleDim::Rows,
                    PackDim::Rows => ScheduleDim::Columns,
                })
            };
            if let Some(expected) = expected {
                if dim != expected {
                    report
                        .violations
                        .push(SpecViolation::ScheduleDimMismatch {
                            expected,
                            found: dim,
                        });
                }
            }
        }
    }
    report
}

#[derive(Debug, Error, PartialEq)]
pub enum TransformError {
    #[error("invalid representation spec:\n{0}")]
    InvalidSpec(ValidationReport),
    #[error("schedule needs at least one machine")]
    ZeroMachines,
}

/// Origin of one stream slot: a dense coordinate, or load-balancing padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SlotOrigin {
    Value { i: usize, j: usize },
    Padding,
}

impl SlotOrigin {
    pub fn is_padding(&self) -> bool {
        matches!(self, SlotOrigin::Padding)
    }

    pub fn coords(&self) -> Option<(usize, usize)> {
        match *self {
            SlotOrigin::Value { i, j } => Some((i, j)),
            SlotOrigin::Padding => None,
        }
    }
}

// On the wire a slot origin is `[i, j]` or `null`.
impl Serialize for SlotOrigin {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match *self {
            SlotOrigin::Value { i, j } => Some([i, j]).serialize(serializer),
            SlotOrigin::Padding => None::<[usize; 2]>.serialize(serializer),
        }
    }
}

impl<'de> Deserialize<'de> for SlotOrigin {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = Option::<Vec<usize>>::deserialize(deserializer)?;
        match raw {
            None => Ok(SlotOrigin::Padding),
            Some(v) if v.len() == 2 => Ok(SlotOrigin::Value { i: v[0], j: v[1] }),
            Some(v) => Err(D::Error::custom(format!(
                "slot origin must be null or a 2-element array, got {v:?}"
            ))),
        }
    }
}

/// One nonzero captured by pack, with its dense coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PackedEntry {
    pub i: usize,
    pub j: usize,
    pub value: f64,
}

/// Result of packing: one job per line of the kept dimension, each holding
/// that line's nonzeros in ascending packed order. Packing columns keeps one
/// job per dense row, which reproduces CSR.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedMatrix {
    dim: PackDim,
    origin_dims: (usize, usize),
    jobs: Vec<Vec<PackedEntry>>,
}

impl PackedMatrix {
    pub fn dim(&self) -> PackDim {
        self.dim
    }

    pub fn origin_dims(&self) -> (usize, usize) {
        self.origin_dims
    }

    pub fn jobs(&self) -> &[Vec<PackedEntry>] {
        &self.jobs
    }

    /// Nonzero count of each line, in line order.
    pub fn line_lengths(&self) -> Vec<usize> {
        self.jobs.iter().map(Vec::len).collect()
    }

    /// The index recorded alongside a value: the coordinate along the packed
    /// dimension.
    pub fn recorded_index(&self, e: &PackedEntry) -> usize {
        match self.dim {
            PackDim::Columns => e.j,
            PackDim::Rows => e.i,
        }
    }
}

/// Compresses out zeros along one dimension, recording the surviving
/// coordinate of every value.
pub fn pack(a: &DenseMatrix, dim: PackDim) -> PackedMatrix {
    let (lines, per_line) = match dim {
        PackDim::Columns => (a.n_rows(), a.n_cols()),
        PackDim::Rows => (a.n_cols(), a.n_rows()),
    };
    let mut jobs = Vec::with_capacity(lines);
    for line in 0..lines {
        let mut job = Vec::new();
        for k in 0..per_line {
            let (i, j) = match dim {
                PackDim::Columns => (line, k),
                PackDim::Rows => (k, line),
            };
            let value = a.get(i, j);
            if value != 0.0 {
                job.push(PackedEntry { i, j, value });
            }
        }
        jobs.push(job);
    }
    PackedMatrix {
        dim,
        origin_dims: (a.n_rows(), a.n_cols()),
        jobs,
    }
}

/// One fixed-size block of a packed line; trailing `None` slots are padding.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedBlock {
    pub line: usize,
    pub slots: Vec<Option<PackedEntry>>,
}

/// Result of blocking: each packed line split into ceil(len/factor) blocks of
/// exactly `factor` slots, the last block zero-padded. Empty lines yield no
/// blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockedMatrix {
    dim: PackDim,
    origin_dims: (usize, usize),
    factor: usize,
    blocks: Vec<PackedBlock>,
    blocks_per_line: Vec<usize>,
}

impl BlockedMatrix {
    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn blocks(&self) -> &[PackedBlock] {
        &self.blocks
    }

    pub fn blocks_per_line(&self) -> &[usize] {
        &self.blocks_per_line
    }

    pub fn origin_dims(&self) -> (usize, usize) {
        self.origin_dims
    }
}

/// Splits each packed line into blocks of `factor` slots with zero padding.
pub fn block(p: &PackedMatrix, factor: usize, _padding: PaddingPolicy) -> BlockedMatrix {
    assert!(factor >= 1, "block factor must be at least 1");
    let mut blocks = Vec::new();
    let mut blocks_per_line = Vec::with_capacity(p.jobs.len());
    for (line, job) in p.jobs.iter().enumerate() {
        let n_blocks = job.len().div_ceil(factor);
        blocks_per_line.push(n_blocks);
        for chunk in job.chunks(factor) {
            let mut slots: Vec<Option<PackedEntry>> = chunk.iter().copied().map(Some).collect();
            slots.resize(factor, None);
            blocks.push(PackedBlock { line, slots });
        }
    }
    BlockedMatrix {
        dim: p.dim,
        origin_dims: p.origin_dims,
        factor,
        blocks,
        blocks_per_line,
    }
}

/// Job stream handed to the scheduler: whole packed lines, or fixed blocks.
#[derive(Clone, Copy, Debug)]
pub enum JobSource<'a> {
    Lines(&'a PackedMatrix),
    Blocks(&'a BlockedMatrix),
}

/// Structure streams of an encoded matrix: what a decoder consumes to
/// reconstruct dense indices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    /// Per machine, the lengths of its consecutive line segments (padding
    /// inflates the final segment).
    RowLen(Vec<Vec<usize>>),
    /// Global blocks-per-line counts plus the block factor.
    RowBlocks {
        blocks_per_row: Vec<usize>,
        factor: usize,
    },
}

/// The final machine-partitioned representation: per-machine value and index
/// streams, structure streams, and full per-slot provenance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncodedMatrix {
    pub machines: usize,
    pub stream_length: usize,
    pub origin_dims: (usize, usize),
    pub values: Vec<Vec<f64>>,
    pub col_idx: Vec<Vec<usize>>,
    pub structure: Structure,
    pub provenance: Vec<Vec<SlotOrigin>>,
    pub spec: RepresentationSpec,
}

impl EncodedMatrix {
    /// Count of slots that carry a real value.
    pub fn nnz(&self) -> usize {
        self.provenance
            .iter()
            .flatten()
            .filter(|o| !o.is_padding())
            .count()
    }

    /// Serializes to the documented JSON layout.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("encoded matrix serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Greedy ASAP assignment: each job in order goes to the machine with the
/// smallest accumulated slot count, ties broken toward the lowest index.
fn greedy_assign(job_lens: &[usize], machines: usize) -> Vec<usize> {
    let mut loads = vec![0usize; machines];
    job_lens
        .iter()
        .map(|&len| {
            let target = loads
                .iter()
                .enumerate()
                .min_by_key(|&(_, load)| *load)
                .map(|(idx, _)| idx)
                .expect("at least one machine");
            loads[target] += len;
            target
        })
        .collect()
}

/// Schedules jobs onto `machines` parallel streams ASAP, then pads every
/// stream with zero slots to the common length.
///
/// For line jobs the padding inflates each machine's final recorded segment;
/// machines that received no job carry a single all-padding segment, which
/// decodes to a synthetic line index at or beyond the line count. For block
/// jobs the padding is whole zeroed blocks.
pub fn schedule_asap(
    jobs: JobSource<'_>,
    machines: usize,
    _padding: PaddingPolicy,
) -> Result<EncodedMatrix, TransformError> {
    if machines == 0 {
        return Err(TransformError::ZeroMachines);
    }
    match jobs {
        JobSource::Lines(p) => Ok(schedule_lines(p, machines)),
        JobSource::Blocks(b) => Ok(schedule_blocks(b, machines)),
    }
}

fn schedule_lines(p: &PackedMatrix, machines: usize) -> EncodedMatrix {
    let lens = p.line_lengths();
    let assignment = greedy_assign(&lens, machines);

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); machines];
    let mut col_idx: Vec<Vec<usize>> = vec![Vec::new(); machines];
    let mut provenance: Vec<Vec<SlotOrigin>> = vec![Vec::new(); machines];
    let mut row_len: Vec<Vec<usize>> = vec![Vec::new(); machines];

    for (job, &m) in p.jobs.iter().zip(&assignment) {
        row_len[m].push(job.len());
        for e in job {
            values[m].push(e.value);
            col_idx[m].push(p.recorded_index(e));
            provenance[m].push(SlotOrigin::Value { i: e.i, j: e.j });
        }
    }

    let stream_length = values.iter().map(Vec::len).max().unwrap_or(0);
    for m in 0..machines {
        let pad = stream_length - values[m].len();
        values[m].extend(std::iter::repeat_n(0.0, pad));
        col_idx[m].extend(std::iter::repeat_n(0, pad));
        provenance[m].extend(std::iter::repeat_n(SlotOrigin::Padding, pad));
        match row_len[m].last_mut() {
            // Padding extends the machine's final segment; no job follows a
            // machine's final segment, so scheduler replay stays correct.
            Some(last) => *last += pad,
            // A machine with no jobs carries one all-padding segment, which
            // replays as a synthetic line index.
            None => row_len[m].push(stream_length),
        }
    }

    let mut spec = RepresentationSpec::cisr(machines);
    spec.name = "asap-lines".into();
    if let TransformStep::Pack { dim, .. } = &mut spec.steps[0] {
        *dim = p.dim;
    }
    if let TransformStep::Schedule { dim, .. } = &mut spec.steps[1] {
        *dim = match p.dim {
            PackDim::Columns => ScheduleDim::Rows,
            PackDim::Rows => ScheduleDim::Columns,
        };
    }

    EncodedMatrix {
        machines,
        stream_length,
        origin_dims: p.origin_dims,
        values,
        col_idx,
        structure: Structure::RowLen(row_len),
        provenance,
        spec,
    }
}

fn schedule_blocks(b: &BlockedMatrix, machines: usize) -> EncodedMatrix {
    let factor = b.factor;
    let lens = vec![factor; b.blocks.len()];
    let assignment = greedy_assign(&lens, machines);

    let mut values: Vec<Vec<f64>> = vec![Vec::new(); machines];
    let mut col_idx: Vec<Vec<usize>> = vec![Vec::new(); machines];
    let mut provenance: Vec<Vec<SlotOrigin>> = vec![Vec::new(); machines];

    for (blk, &m) in b.blocks.iter().zip(&assignment) {
        for slot in &blk.slots {
            match slot {
                Some(e) => {
                    values[m].push(e.value);
                    col_idx[m].push(match b.dim {
                        PackDim::Columns => e.j,
                        PackDim::Rows => e.i,
                    });
                    provenance[m].push(SlotOrigin::Value { i: e.i, j: e.j });
                }
                None => {
                    values[m].push(0.0);
                    col_idx[m].push(0);
                    provenance[m].push(SlotOrigin::Padding);
                }
            }
        }
    }

    // Machine-level padding is whole zeroed blocks.
    let stream_length = values.iter().map(Vec::len).max().unwrap_or(0);
    for m in 0..machines {
        let pad = stream_length - values[m].len();
        debug_assert_eq!(pad % factor, 0, "block padding is whole blocks");
        values[m].extend(std::iter::repeat_n(0.0, pad));
        col_idx[m].extend(std::iter::repeat_n(0, pad));
        provenance[m].extend(std::iter::repeat_n(SlotOrigin::Padding, pad));
    }

    let mut spec = RepresentationSpec::blocked(factor, machines);
    spec.name = "asap-blocks".into();

    EncodedMatrix {
        machines,
        stream_length,
        origin_dims: b.origin_dims,
        values,
        col_idx,
        structure: Structure::RowBlocks {
            blocks_per_row: b.blocks_per_line.clone(),
            factor,
        },
        provenance,
        spec,
    }
}

/// Runs a validated representation chain over a matrix.
pub fn encode(a: &DenseMatrix, spec: &RepresentationSpec) -> Result<EncodedMatrix, TransformError> {
    let report = validate_spec(spec);
    if !report.is_valid() {
        return Err(TransformError::InvalidSpec(report));
    }

    let mut packed: Option<PackedMatrix> = None;
    let mut blocked: Option<BlockedMatrix> = None;
    let mut encoded: Option<EncodedMatrix> = None;
    for step in &spec.steps {
        match *step {
            TransformStep::Pack { dim, .. } => {
                packed = Some(pack(a, dim));
            }
            TransformStep::Block {
                factor, padding, ..
            } => {
                let p = packed.as_ref().expect("validated: pack precedes block");
                blocked = Some(block(p, factor, padding));
            }
            TransformStep::Schedule {
                machines, padding, ..
            } => {
                let jobs = match &blocked {
                    Some(b) => JobSource::Blocks(b),
                    None => JobSource::Lines(
                        packed.as_ref().expect("validated: pack precedes schedule"),
                    ),
                };
                encoded = Some(schedule_asap(jobs, machines, padding)?);
            }
        }
    }
    let mut e = encoded.expect("validated: chain ends with schedule");
    e.spec = spec.clone();
    Ok(e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{dense_from_triplets, fixture_matrix, random_sparse, DenseMatrix};
    use proptest::prelude::*;
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    /// Independent greedy scheduler used as the oracle for schedule tests:
    /// a priority-queue formulation rather than the linear scan used by the
    /// implementation.
    fn heap_schedule(job_lens: &[usize], machines: usize) -> Vec<usize> {
        let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
            (0..machines).map(|m| Reverse((0, m))).collect();
        let mut assignment = Vec::with_capacity(job_lens.len());
        for &len in job_lens {
            let Reverse((load, m)) = heap.pop().unwrap();
            assignment.push(m);
            heap.push(Reverse((load + len, m)));
        }
        assignment
    }

    fn cisr_fixture(machines: usize) -> EncodedMatrix {
        encode(&fixture_matrix(), &RepresentationSpec::cisr(machines)).unwrap()
    }

    #[test]
    fn pack_identity() {
        let m = dense_from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let p = pack(&m, PackDim::Columns);
        assert_eq!(p.line_lengths(), vec![1, 1]);
        assert_eq!(p.jobs()[0], vec![PackedEntry { i: 0, j: 0, value: 1.0 }]);
        assert_eq!(p.jobs()[1], vec![PackedEntry { i: 1, j: 1, value: 1.0 }]);
    }

    #[test]
    fn pack_all_zero_gives_empty_jobs() {
        let m = DenseMatrix::zeros(3, 3).unwrap();
        let p = pack(&m, PackDim::Columns);
        assert_eq!(p.line_lengths(), vec![0, 0, 0]);
    }

    #[test]
    fn pack_fixture_reproduces_csr() {
        let p = pack(&fixture_matrix(), PackDim::Columns);
        assert_eq!(p.line_lengths(), vec![3, 1, 2, 2]);
        let job0: Vec<(usize, f64)> = p.jobs()[0].iter().map(|e| (e.j, e.value)).collect();
        assert_eq!(job0, vec![(0, 1.0), (1, 2.0), (3, 3.0)]);
    }

    #[test]
    fn pack_rows_gives_csc() {
        let p = pack(&fixture_matrix(), PackDim::Rows);
        // Column nonzero counts of the fixture: col0 {r0,r2}, col1 {r0,r3},
        // col2 {r1,r3}, col3 {r0,r2}.
        assert_eq!(p.line_lengths(), vec![2, 2, 2, 2]);
        let job2: Vec<(usize, f64)> = p.jobs()[2].iter().map(|e| (e.i, e.value)).collect();
        assert_eq!(job2, vec![(1, 4.0), (3, 8.0)]);
    }

    #[test]
    fn block_pads_last_block() {
        let m = dense_from_triplets(1, 4, &[(0, 0, 1.0), (0, 1, 2.0), (0, 2, 3.0)]).unwrap();
        let b = block(&pack(&m, PackDim::Columns), 2, PaddingPolicy::Zero);
        assert_eq!(b.blocks_per_line(), &[2]);
        assert_eq!(b.blocks().len(), 2);
        assert!(b.blocks()[1].slots[0].is_some());
        assert!(b.blocks()[1].slots[1].is_none());
    }

    #[test]
    fn block_exact_division_no_padding() {
        let m = dense_from_triplets(
            1,
            4,
            &[(0, 0, 1.0), (0, 1, 2.0), (0, 2, 3.0), (0, 3, 4.0)],
        )
        .unwrap();
        let b = block(&pack(&m, PackDim::Columns), 2, PaddingPolicy::Zero);
        assert_eq!(b.blocks().len(), 2);
        assert!(b.blocks().iter().all(|blk| blk.slots.iter().all(Option::is_some)));
    }

    #[test]
    fn block_fixture_counts() {
        let b = block(&pack(&fixture_matrix(), PackDim::Columns), 2, PaddingPolicy::Zero);
        assert_eq!(b.blocks_per_line(), &[2, 1, 1, 1]);
        assert_eq!(b.blocks().len(), 5);
        let pads: usize = b
            .blocks()
            .iter()
            .flat_map(|blk| &blk.slots)
            .filter(|s| s.is_none())
            .count();
        assert_eq!(pads, 2);
    }

    #[test]
    fn schedule_fixture_worked_example() {
        let e = cisr_fixture(2);
        assert_eq!(e.stream_length, 5);
        assert_eq!(e.values[0], vec![1.0, 2.0, 3.0, 7.0, 8.0]);
        assert_eq!(e.col_idx[0], vec![0, 1, 3, 1, 2]);
        assert_eq!(e.values[1], vec![4.0, 5.0, 6.0, 0.0, 0.0]);
        assert_eq!(e.col_idx[1], vec![2, 0, 3, 0, 0]);
        assert_eq!(
            e.structure,
            Structure::RowLen(vec![vec![3, 2], vec![1, 4]])
        );
        assert_eq!(
            e.provenance[1],
            vec![
                SlotOrigin::Value { i: 1, j: 2 },
                SlotOrigin::Value { i: 2, j: 0 },
                SlotOrigin::Value { i: 2, j: 3 },
                SlotOrigin::Padding,
                SlotOrigin::Padding,
            ]
        );
    }

    #[test]
    fn schedule_single_machine_concatenates() {
        let e = cisr_fixture(1);
        assert_eq!(e.stream_length, 8);
        assert_eq!(e.values[0], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert!(e.provenance[0].iter().all(|o| !o.is_padding()));
    }

    #[test]
    fn schedule_more_machines_than_rows() {
        let m = dense_from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 2.0)]).unwrap();
        let e = encode(&m, &RepresentationSpec::cisr(4)).unwrap();
        assert_eq!(e.stream_length, 1);
        assert_eq!(e.values[0], vec![1.0]);
        assert_eq!(e.values[1], vec![2.0]);
        // Machines 2 and 3 carry one all-padding segment each.
        assert_eq!(
            e.structure,
            Structure::RowLen(vec![vec![1], vec![1], vec![1], vec![1]])
        );
        assert!(e.provenance[2].iter().all(SlotOrigin::is_padding));
        assert!(e.provenance[3].iter().all(SlotOrigin::is_padding));
    }

    #[test]
    fn schedule_zero_machines_rejected() {
        let p = pack(&fixture_matrix(), PackDim::Columns);
        assert_eq!(
            schedule_asap(JobSource::Lines(&p), 0, PaddingPolicy::Zero),
            Err(TransformError::ZeroMachines)
        );
    }

    #[test]
    fn blocked_fixture_encoding() {
        let e = encode(&fixture_matrix(), &RepresentationSpec::blocked(2, 2)).unwrap();
        assert_eq!(e.stream_length, 6);
        assert_eq!(e.values[0], vec![1.0, 2.0, 4.0, 0.0, 7.0, 8.0]);
        assert_eq!(e.values[1], vec![3.0, 0.0, 5.0, 6.0, 0.0, 0.0]);
        assert_eq!(
            e.structure,
            Structure::RowBlocks {
                blocks_per_row: vec![2, 1, 1, 1],
                factor: 2
            }
        );
        // The final block of machine 1 is machine-level padding.
        assert!(e.provenance[1][4].is_padding());
        assert!(e.provenance[1][5].is_padding());
    }

    #[test]
    fn all_zero_matrix_encodes_to_empty_streams() {
        let m = DenseMatrix::zeros(3, 3).unwrap();
        for spec in [RepresentationSpec::cisr(2), RepresentationSpec::blocked(2, 2)] {
            let e = encode(&m, &spec).unwrap();
            assert_eq!(e.stream_length, 0);
            assert!(e.values.iter().all(Vec::is_empty));
            assert_eq!(e.nnz(), 0);
        }
    }

    #[test]
    fn validate_accepts_pack_schedule() {
        assert!(validate_spec(&RepresentationSpec::cisr(4)).is_valid());
        assert!(validate_spec(&RepresentationSpec::blocked(2, 2)).is_valid());
    }

    #[test]
    fn validate_rejects_schedule_first() {
        let mut spec = RepresentationSpec::cisr(2);
        spec.steps.reverse();
        let report = validate_spec(&spec);
        assert!(report.violations.contains(&SpecViolation::ScheduleNotLast));
    }

    #[test]
    fn validate_rejects_double_block() {
        let mut spec = RepresentationSpec::blocked(2, 2);
        spec.steps.insert(
            2,
            TransformStep::Block {
                dim: PackDim::Columns,
                factor: 2,
                padding: PaddingPolicy::Zero,
            },
        );
        let report = validate_spec(&spec);
        assert!(report.violations.contains(&SpecViolation::MultipleBlocks));
    }

    #[test]
    fn validate_rejects_schedule_dim_mismatch() {
        let mut spec = RepresentationSpec::cisr(2);
        if let TransformStep::Schedule { dim, .. } = &mut spec.steps[1] {
            *dim = ScheduleDim::Blocks;
        }
        let report = validate_spec(&spec);
        assert!(matches!(
            report.violations[0],
            SpecViolation::ScheduleDimMismatch { .. }
        ));
    }

    #[test]
    fn encode_rejects_invalid_spec() {
        let spec = RepresentationSpec {
            name: "bad".into(),
            steps: vec![],
        };
        assert!(matches!(
            encode(&fixture_matrix(), &spec),
            Err(TransformError::InvalidSpec(_))
        ));
    }

    #[test]
    fn json_roundtrip_is_exact_and_deterministic() {
        for spec in [RepresentationSpec::cisr(2), RepresentationSpec::blocked(2, 2)] {
            let e = encode(&fixture_matrix(), &spec).unwrap();
            let json = e.to_json();
            assert_eq!(json, e.to_json());
            let back = EncodedMatrix::from_json(&json).unwrap();
            assert_eq!(e, back);
        }
    }

    fn conservation_holds(a: &DenseMatrix, e: &EncodedMatrix) {
        let mut got: Vec<(usize, usize, f64)> = e
            .provenance
            .iter()
            .zip(&e.values)
            .flat_map(|(ps, vs)| {
                ps.iter()
                    .zip(vs)
                    .filter_map(|(o, &v)| o.coords().map(|(i, j)| (i, j, v)))
            })
            .collect();
        got.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let want: Vec<(usize, usize, f64)> = a.nonzeros().collect();
        assert_eq!(got, want);
    }

    proptest! {
        #[test]
        fn schedule_matches_heap_oracle(rows in 1usize..24, cols in 1usize..24, density in 0.0f64..1.0, seed in 0u64..500, machines in 1usize..6) {
            let a = random_sparse(rows, cols, density, seed);
            let p = pack(&a, PackDim::Columns);
            let oracle = heap_schedule(&p.line_lengths(), machines);
            let got = greedy_assign(&p.line_lengths(), machines);
            prop_assert_eq!(got, oracle);
        }

        #[test]
        fn conservation_and_balance(rows in 1usize..24, cols in 1usize..24, density in 0.0f64..0.8, seed in 0u64..500, machines in 1usize..6) {
            let a = random_sparse(rows, cols, density, seed);
            for spec in [RepresentationSpec::cisr(machines), RepresentationSpec::blocked(3, machines)] {
                let e = encode(&a, &spec).unwrap();
                // Balance: all streams share the padded length.
                for m in 0..machines {
                    prop_assert_eq!(e.values[m].len(), e.stream_length);
                    prop_assert_eq!(e.col_idx[m].len(), e.stream_length);
                    prop_assert_eq!(e.provenance[m].len(), e.stream_length);
                }
                // Padding slots are exactly zero.
                for m in 0..machines {
                    for (o, &v) in e.provenance[m].iter().zip(&e.values[m]) {
                        if o.is_padding() {
                            prop_assert_eq!(v, 0.0);
                        }
                    }
                }
                prop_assert_eq!(e.nnz(), a.nnz());
                conservation_holds(&a, &e);
            }
        }

        #[test]
        fn greedy_load_bound(rows in 1usize..32, cols in 1usize..32, density in 0.05f64..0.8, seed in 0u64..500, machines in 1usize..6) {
            let a = random_sparse(rows, cols, density, seed);
            prop_assume!(a.nnz() > 0);
            let p = pack(&a, PackDim::Columns);
            let max_job = p.line_lengths().into_iter().max().unwrap();
            let e = encode(&a, &RepresentationSpec::cisr(machines)).unwrap();
            prop_assert!(e.stream_length <= a.nnz().div_ceil(machines) + max_job.saturating_sub(1));
        }

        #[test]
        fn block_schedule_is_round_robin(rows in 1usize..24, cols in 1usize..24, density in 0.0f64..0.8, seed in 0u64..500, machines in 1usize..6, factor in 1usize..5) {
            let a = random_sparse(rows, cols, density, seed);
            let b = block(&pack(&a, PackDim::Columns), factor, PaddingPolicy::Zero);
            let lens = vec![factor; b.blocks().len()];
            let got = greedy_assign(&lens, machines);
            let round_robin: Vec<usize> = (0..b.blocks().len()).map(|i| i % machines).collect();
            prop_assert_eq!(got, round_robin);
        }

        #[test]
        fn row_len_sums_to_stream_length(rows in 1usize..24, cols in 1usize..24, density in 0.0f64..0.8, seed in 0u64..500, machines in 1usize..6) {
            let a = random_sparse(rows, cols, density, seed);
            let e = encode(&a, &RepresentationSpec::cisr(machines)).unwrap();
            let Structure::RowLen(row_len) = &e.structure else { panic!("cisr has row lengths") };
            for m in 0..machines {
                prop_assert_eq!(row_len[m].iter().sum::<usize>(), e.stream_length);
            }
        }

        #[test]
        fn json_roundtrip_random(rows in 1usize..16, cols in 1usize..16, density in 0.0f64..0.8, seed in 0u64..200, machines in 1usize..5) {
            let a = random_sparse(rows, cols, density, seed);
            let e = encode(&a, &RepresentationSpec::cisr(machines)).unwrap();
            prop_assert_eq!(EncodedMatrix::from_json(&e.to_json()).unwrap(), e);
        }
    }
}
