//! Reduction combinators and circuits over streams of partial sums.
//!
//! Sparse reductions see a dynamic number of inputs per result location, so
//! the circuits here lean on two checkable stream properties: whether equal
//! reduction targets arrive contiguously within a stream, and whether
//! different machines ever share a target at the same step.

use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;
use thiserror::Error;

/// A (dense row index, accumulated value) record flowing between reduction
/// levels. Rows at or beyond the matrix row count are synthetic padding rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartialSum {
    pub row: usize,
    pub value: f64,
}

impl PartialSum {
    pub fn new(row: usize, value: f64) -> Self {
        PartialSum { row, value }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PropertyViolation {
    /// A row recurred in a stream after a different row intervened.
    Continuity { stream: usize, row: usize },
    /// Two machines reduced the same real row at the same step.
    Distinctness {
        step: usize,
        first: usize,
        second: usize,
        row: usize,
    },
}

impl fmt::Display for PropertyViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            PropertyViolation::Continuity { stream, row } => {
                write!(f, "stream {stream}: row {row} recurs after another row")
            }
            PropertyViolation::Distinctness {
                step,
                first,
                second,
                row,
            } => write!(
                f,
                "step {step}: streams {first} and {second} both reduce row {row}"
            ),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReductionError {
    #[error("step {step}: machine {machine} targets row {found}, expected row {expected}")]
    TargetMismatch {
        step: usize,
        machine: usize,
        expected: usize,
        found: usize,
    },
    #[error("{needed} adder-tree levels needed but only {budget} available")]
    LevelBudgetExceeded { needed: usize, budget: usize },
    #[error("row {row} returned after leaving the {levels}-cell buffer; more than {levels} distinct unfinalized rows coexisted")]
    CapacityExceeded { row: usize, levels: usize },
    #[error("row {row} arrived after row {newest}; rows must be nondecreasing")]
    MonotonicityViolation { row: usize, newest: usize },
    #[error("reduction property violated: {0}")]
    PropertyViolated(PropertyViolation),
    #[error("{adders} adders cannot evenly serve {streams} streams")]
    InvalidAdderCount { streams: usize, adders: usize },
}

/// Stream properties verified against a trace of decoded row indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReductionProps {
    pub continuous_per_machine: bool,
    pub distinct_across_machines: bool,
    /// Longest run of equal consecutive targets in any stream; trace
    /// statistics only, circuits do not consume it.
    pub max_run_per_target: Option<usize>,
}

/// One circuit event: either a consumed input record (`emitted` false) or a
/// released sum (`emitted` true, carrying the finished row and total).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ReductionEvent {
    pub step: usize,
    pub machine: usize,
    pub row: usize,
    pub value: f64,
    pub emitted: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ReductionTrace {
    pub events: Vec<ReductionEvent>,
}

impl ReductionTrace {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,machine,row,value,emitted\n");
        for e in &self.events {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.step, e.machine, e.row, e.value, e.emitted
            ));
        }
        out
    }
}

pub(crate) fn find_continuity_violation(rows: &[usize]) -> Option<usize> {
    let mut closed = BTreeSet::new();
    let mut current: Option<usize> = None;
    for &r in rows {
        match current {
            Some(c) if c == r => {}
            Some(c) => {
                closed.insert(c);
                if closed.contains(&r) {
                    return Some(r);
                }
                current = Some(r);
            }
            None => {
                if closed.contains(&r) {
                    return Some(r);
                }
                current = Some(r);
            }
        }
    }
    None
}

/// True iff equal row indices form contiguous runs: no row recurs after a
/// different row intervenes.
pub fn check_continuous(rows: &[usize]) -> bool {
    find_continuity_violation(rows).is_none()
}

pub(crate) fn find_distinctness_violation(
    streams: &[Vec<usize>],
    n_rows: usize,
) -> Option<(usize, usize, usize, usize)> {
    let max_len = streams.iter().map(Vec::len).max().unwrap_or(0);
    for step in 0..max_len {
        for a in 0..streams.len() {
            let Some(&ra) = streams[a].get(step) else {
                continue;
            };
            if ra >= n_rows {
                continue; // synthetic rows exempt
            }
            for b in (a + 1)..streams.len() {
                if streams[b].get(step) == Some(&ra) {
                    return Some((step, a, b, ra));
                }
            }
        }
    }
    None
}

/// True iff, at every step, the real rows reduced by different machines are
/// pairwise distinct. Synthetic rows (>= `n_rows`) are exempt.
pub fn check_distinct(streams: &[Vec<usize>], n_rows: usize) -> bool {
    find_distinctness_violation(streams, n_rows).is_none()
}

/// Verifies both stream properties against a trace of decoded rows.
pub fn reduction_props(row_streams: &[Vec<usize>], n_rows: usize) -> ReductionProps {
    let continuous = row_streams.iter().all(|s| check_continuous(s));
    let distinct = check_distinct(row_streams, n_rows);
    let max_run = row_streams
        .iter()
        .flat_map(|s| {
            let mut runs = Vec::new();
            let mut iter = s.iter();
            if let Some(&first) = iter.next() {
                let mut row = first;
                let mut len = 1usize;
                for &r in iter {
                    if r == row {
                        len += 1;
                    } else {
                        runs.push(len);
                        row = r;
                        len = 1;
                    }
                }
                runs.push(len);
            }
            runs
        })
        .max();
    ReductionProps {
        continuous_per_machine: continuous,
        distinct_across_machines: distinct,
        max_run_per_target: max_run,
    }
}

/// First-level reduction split out of a computation: accumulates consecutive
/// same-row items into a local sum and hands (row, local sum) downstream each
/// time the row changes or the stream ends.
pub fn isolate_reduction(input: &[(usize, f64)]) -> Vec<PartialSum> {
    let mut out = Vec::new();
    let mut current: Option<(usize, f64)> = None;
    for &(row, value) in input {
        match current {
            Some((r, sum)) if r == row => current = Some((r, sum + value)),
            Some((r, sum)) => {
                out.push(PartialSum::new(r, sum));
                current = Some((row, value));
            }
            None => current = Some((row, value)),
        }
    }
    if let Some((r, sum)) = current {
        out.push(PartialSum::new(r, sum));
    }
    out
}

/// Combines the machines' per-step contributions into one sum per step,
/// for traces where every machine targets the same row. When a trace of
/// decoded rows is supplied, the shared-target assumption is checked.
pub fn combine_same_target(
    step_values: &[Vec<f64>],
    trace: Option<&[Vec<usize>]>,
) -> Result<Vec<f64>, ReductionError> {
    if let Some(rows) = trace {
        for (step, step_rows) in rows.iter().enumerate() {
            if let Some((&expected, rest)) = step_rows.split_first() {
                for (offset, &found) in rest.iter().enumerate() {
                    if found != expected {
                        return Err(ReductionError::TargetMismatch {
                            step,
                            machine: offset + 1,
                            expected,
                            found,
                        });
                    }
                }
            }
        }
    }
    Ok(step_values.iter().map(|vs| vs.iter().sum()).collect())
}

/// Combines the machines' per-step contributions when adjacent machines may
/// target different rows: scan the machines in ascending order holding a
/// (current row, sum) pair, accumulate on a row match, and hand the pair
/// downstream on a mismatch and after the scan.
pub fn combine_maybe_different(steps: &[Vec<(usize, f64)>]) -> Vec<PartialSum> {
    let mut out = Vec::new();
    for step in steps {
        let mut current: Option<(usize, f64)> = None;
        for &(row, value) in step {
            match current {
                Some((r, sum)) if r == row => current = Some((r, sum + value)),
                Some((r, sum)) => {
                    out.push(PartialSum::new(r, sum));
                    current = Some((row, value));
                }
                None => current = Some((row, value)),
            }
        }
        if let Some((r, sum)) = current {
            out.push(PartialSum::new(r, sum));
        }
    }
    out
}

/// Tree levels a balanced pairwise reduction of `n` inputs needs.
pub fn tree_levels_needed(n: usize) -> usize {
    let mut levels = 0;
    let mut width = n.max(1);
    while width > 1 {
        width = width.div_ceil(2);
        levels += 1;
    }
    levels
}

/// Pairwise balanced-tree summation within a level budget.
pub fn tree_reduce(values: &[f64], max_levels: usize) -> Result<f64, ReductionError> {
    let needed = tree_levels_needed(values.len());
    if needed > max_levels {
        return Err(ReductionError::LevelBudgetExceeded {
            needed,
            budget: max_levels,
        });
    }
    let mut level: Vec<f64> = values.to_vec();
    while level.len() > 1 {
        level = level.chunks(2).map(|pair| pair.iter().sum()).collect();
    }
    Ok(level.first().copied().unwrap_or(0.0))
}

struct LinearArray {
    levels: usize,
    cells: Vec<(usize, f64)>, // ascending rows; front is the oldest
    emitted: BTreeSet<usize>,
    out: Vec<PartialSum>,
}

impl LinearArray {
    fn new(levels: usize) -> Self {
        assert!(levels >= 1, "linear array needs at least one cell");
        LinearArray {
            levels,
            cells: Vec::new(),
            emitted: BTreeSet::new(),
            out: Vec::new(),
        }
    }

    fn push(&mut self, row: usize, value: f64) -> Result<(), ReductionError> {
        if let Some(cell) = self.cells.iter_mut().find(|c| c.0 == row) {
            cell.1 += value;
            return Ok(());
        }
        let newest = self.cells.last().map(|c| c.0);
        match newest {
            Some(n) if row < n => {
                // The row left the buffer (its sum is already out) or it
                // arrived out of order as a brand-new row.
                if self.emitted.contains(&row) {
                    Err(ReductionError::CapacityExceeded {
                        row,
                        levels: self.levels,
                    })
                } else {
                    Err(ReductionError::MonotonicityViolation { row, newest: n })
                }
            }
            _ => {
                if self.cells.len() == self.levels {
                    // The arrival of a strictly greater row means the oldest
                    // buffered row is complete and may leave the array.
                    let (r, sum) = self.cells.remove(0);
                    self.emitted.insert(r);
                    self.out.push(PartialSum::new(r, sum));
                }
                self.cells.push((row, value));
                Ok(())
            }
        }
    }

    fn flush(mut self) -> Vec<PartialSum> {
        for (r, sum) in self.cells.drain(..) {
            self.out.push(PartialSum::new(r, sum));
        }
        self.out
    }
}

/// Bounded buffer-and-adder chain that accumulates partial sums per row and
/// finalizes a row once strictly greater rows push it out or the stream ends.
/// `levels` is the buffer-cell capacity: at most `levels` distinct
/// unfinalized rows may coexist.
pub fn linear_array_reduce(
    input: &[PartialSum],
    levels: usize,
) -> Result<Vec<PartialSum>, ReductionError> {
    linear_array_reduce_traced(input, levels).map(|(out, _)| out)
}

/// As [`linear_array_reduce`], also returning the per-record event trace.
pub fn linear_array_reduce_traced(
    input: &[PartialSum],
    levels: usize,
) -> Result<(Vec<PartialSum>, ReductionTrace), ReductionError> {
    let mut array = LinearArray::new(levels);
    let mut trace = ReductionTrace::default();
    for (step, p) in input.iter().enumerate() {
        let before = array.out.len();
        array.push(p.row, p.value)?;
        trace.events.push(ReductionEvent {
            step,
            machine: 0,
            row: p.row,
            value: p.value,
            emitted: false,
        });
        for released in &array.out[before..] {
            trace.events.push(ReductionEvent {
                step,
                machine: 0,
                row: released.row,
                value: released.value,
                emitted: true,
            });
        }
    }
    let flush_step = input.len();
    let before = array.out.len();
    let out = array.flush();
    for p in &out[before..] {
        trace.events.push(ReductionEvent {
            step: flush_step,
            machine: 0,
            row: p.row,
            value: p.value,
            emitted: true,
        });
    }
    Ok((out, trace))
}

/// One adder round-robining over `streams`, keeping a (row, sum) register
/// per stream; accumulates while a stream's row is unchanged and releases
/// the register on a row change or at stream end.
fn fused_group(
    streams: &[&[(usize, f64)]],
    base_machine: usize,
    trace: &mut ReductionTrace,
) -> Vec<PartialSum> {
    let mut registers: Vec<Option<(usize, f64)>> = vec![None; streams.len()];
    let mut out = Vec::new();
    let rounds = streams.iter().map(|s| s.len()).max().unwrap_or(0);
    for step in 0..rounds {
        for (s, stream) in streams.iter().enumerate() {
            let Some(&(row, value)) = stream.get(step) else {
                continue;
            };
            trace.events.push(ReductionEvent {
                step,
                machine: base_machine + s,
                row,
                value,
                emitted: false,
            });
            registers[s] = match registers[s] {
                Some((r, sum)) if r == row => Some((r, sum + value)),
                Some((r, sum)) => {
                    out.push(PartialSum::new(r, sum));
                    trace.events.push(ReductionEvent {
                        step,
                        machine: base_machine + s,
                        row: r,
                        value: sum,
                        emitted: true,
                    });
                    Some((row, value))
                }
                None => Some((row, value)),
            };
        }
    }
    for (s, register) in registers.iter().enumerate() {
        if let Some((r, sum)) = *register {
            out.push(PartialSum::new(r, sum));
            trace.events.push(ReductionEvent {
                step: rounds,
                machine: base_machine + s,
                row: r,
                value: sum,
                emitted: true,
            });
        }
    }
    out
}

/// Fused accumulators: `adders` adders, each serving an equal contiguous
/// group of machine streams round-robin. Requires per-stream continuity and
/// cross-stream distinctness, so the union of emissions carries each real
/// row's full sum exactly once.
pub fn fused_accumulator(
    streams: &[Vec<(usize, f64)>],
    adders: usize,
    n_rows: usize,
) -> Result<Vec<Vec<PartialSum>>, ReductionError> {
    fused_accumulator_traced(streams, adders, n_rows).map(|(out, _)| out)
}

/// As [`fused_accumulator`], also returning the per-record event trace.
pub fn fused_accumulator_traced(
    streams: &[Vec<(usize, f64)>],
    adders: usize,
    n_rows: usize,
) -> Result<(Vec<Vec<PartialSum>>, ReductionTrace), ReductionError> {
    if adders == 0 || !streams.len().is_multiple_of(adders) {
        return Err(ReductionError::InvalidAdderCount {
            streams: streams.len(),
            adders,
        });
    }
    let row_streams: Vec<Vec<usize>> = streams
        .iter()
        .map(|s| s.iter().map(|&(r, _)| r).collect())
        .collect();
    for (idx, rows) in row_streams.iter().enumerate() {
        if let Some(row) = find_continuity_violation(rows) {
            return Err(ReductionError::PropertyViolated(
                PropertyViolation::Continuity { stream: idx, row },
            ));
        }
    }
    if let Some((step, first, second, row)) = find_distinctness_violation(&row_streams, n_rows) {
        return Err(ReductionError::PropertyViolated(
            PropertyViolation::Distinctness {
                step,
                first,
                second,
                row,
            },
        ));
    }

    let group_size = streams.len() / adders;
    let mut trace = ReductionTrace::default();
    let mut out = Vec::with_capacity(adders);
    for adder in 0..adders {
        let base = adder * group_size;
        let group: Vec<&[(usize, f64)]> = streams[base..base + group_size]
            .iter()
            .map(Vec::as_slice)
            .collect();
        out.push(fused_group(&group, base, &mut trace));
    }
    Ok((out, trace))
}
