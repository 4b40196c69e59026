//! Inverse index mapping: from (machine, position) back to (row, column).
//!
//! The mapping is built constructively from the provenance recorded while the
//! chain was applied. Independently of that, pure streaming decoders
//! reconstruct dense indices from the structure streams alone by replaying
//! the scheduler; their agreement with provenance is the correctness evidence
//! for the decoder construction.

use crate::matrix::{DenseMatrix, MatrixError};
use crate::transform::{EncodedMatrix, SlotOrigin, Structure};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum InverseError {
    #[error("coordinate ({i}, {j}) outside the {n_rows}x{n_cols} origin matrix")]
    OutOfBounds {
        i: usize,
        j: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("machine {machine} ran out of structure entries during replay")]
    StructureExhausted { machine: usize },
    #[error("row_blocks sums to {sum} but {declared} real blocks were declared")]
    InconsistentBlockCount { sum: usize, declared: usize },
}

#[derive(Debug, Error, PartialEq)]
pub enum DecodeError {
    #[error("slot (machine {machine}, position {pos}) maps to ({i}, {j}) outside the {n_rows}x{n_cols} origin")]
    SlotOutOfBounds {
        machine: usize,
        pos: usize,
        i: usize,
        j: usize,
        n_rows: usize,
        n_cols: usize,
    },
    #[error("slots (machine {first_machine}, position {first_pos}) and (machine {machine}, position {pos}) both map to ({i}, {j})")]
    DuplicateOrigin {
        machine: usize,
        pos: usize,
        first_machine: usize,
        first_pos: usize,
        i: usize,
        j: usize,
    },
    #[error("padding slot (machine {machine}, position {pos}) carries nonzero value {value}")]
    PaddingNonzero {
        machine: usize,
        pos: usize,
        value: f64,
    },
    #[error("value slot (machine {machine}, position {pos}) carries zero; zeros must be padding")]
    ZeroValueSlot { machine: usize, pos: usize },
    #[error("stream lengths disagree with the declared stream_length {expected}")]
    RaggedStreams { expected: usize },
    #[error(transparent)]
    Matrix(#[from] MatrixError),
}

/// Total mapping from (machine, position) to slot origin, with a forward
/// index over the nonzero support.
#[derive(Debug, Clone, PartialEq)]
pub struct InverseMap {
    machines: usize,
    stream_length: usize,
    origin_dims: (usize, usize),
    table: Vec<Vec<SlotOrigin>>,
    forward: BTreeMap<(usize, usize), (usize, usize)>,
}

impl InverseMap {
    pub fn machines(&self) -> usize {
        self.machines
    }

    pub fn stream_length(&self) -> usize {
        self.stream_length
    }

    /// Origin of the slot at (machine, position).
    pub fn origin(&self, machine: usize, pos: usize) -> SlotOrigin {
        self.table[machine][pos]
    }

    pub fn table(&self) -> &[Vec<SlotOrigin>] {
        &self.table
    }
}

/// Builds the inverse map for an encoding. Constructive inversion: the
/// provenance was recorded while each invertible step was applied.
pub fn build_inverse_map(e: &EncodedMatrix) -> InverseMap {
    let mut forward = BTreeMap::new();
    for (m, stream) in e.provenance.iter().enumerate() {
        for (pos, origin) in stream.iter().enumerate() {
            if let Some((i, j)) = origin.coords() {
                forward.insert((i, j), (m, pos));
            }
        }
    }
    InverseMap {
        machines: e.machines,
        stream_length: e.stream_length,
        origin_dims: e.origin_dims,
        table: e.provenance.clone(),
        forward,
    }
}

/// Forward mapping (i, j) -> (machine, position), absent when A(i, j) = 0.
pub fn forward_map(
    im: &InverseMap,
    i: usize,
    j: usize,
) -> Result<Option<(usize, usize)>, InverseError> {
    let (n_rows, n_cols) = im.origin_dims;
    if i >= n_rows || j >= n_cols {
        return Err(InverseError::OutOfBounds {
            i,
            j,
            n_rows,
            n_cols,
        });
    }
    Ok(im.forward.get(&(i, j)).copied())
}

/// Reconstructs every slot's dense line index from the per-machine segment
/// length streams alone, by replaying the scheduler: repeatedly pick the
/// machine with the smallest consumed length (ties toward the lowest index),
/// pop its next segment, and label that segment with the next line index.
/// Indices at or beyond `n_rows` are synthetic padding segments.
pub fn streaming_row_decoder(
    row_len_streams: &[Vec<usize>],
    n_rows: usize,
) -> Result<Vec<Vec<usize>>, InverseError> {
    let machines = row_len_streams.len();
    let mut consumed = vec![0usize; machines];
    let mut next_entry = vec![0usize; machines];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); machines];
    let total_entries: usize = row_len_streams.iter().map(Vec::len).sum();

    for next_row in 0..total_entries {
        let has_entries = |idx: &usize| next_entry[*idx] < row_len_streams[*idx].len();
        let m = if next_row < n_rows {
            // Real rows replay the scheduler verbatim: minimal consumed
            // length over every machine, ties toward the lowest index. A
            // schedule never picks an entry-less machine here, so hitting
            // one means the structure matches no schedule.
            let m = consumed
                .iter()
                .enumerate()
                .min_by_key(|&(_, c)| *c)
                .map(|(idx, _)| idx)
                .expect("at least one machine");
            if !has_entries(&m) {
                return Err(InverseError::StructureExhausted { machine: m });
            }
            m
        } else {
            // Synthetic padding segments were appended, not scheduled;
            // exhausted machines tie with them at the full stream length
            // and must be skipped.
            (0..machines)
                .filter(has_entries)
                .min_by_key(|&idx| consumed[idx])
                .expect("loop bound leaves an entry")
        };
        let seg_len = row_len_streams[m][next_entry[m]];
        next_entry[m] += 1;
        consumed[m] += seg_len;
        out[m].extend(std::iter::repeat_n(next_row, seg_len));
    }
    Ok(out)
}

/// Decode record for one block of a block-scheduled encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockDecode {
    pub machine: usize,
    pub step: usize,
    pub row: usize,
    /// True when this block belongs to the same dense row as the block the
    /// previous machine processes in the same step.
    pub same_row_as_previous_machine: bool,
}

/// Reconstructs each block's dense row from the global blocks-per-row counts.
/// Blocks were scheduled round-robin (machine = block mod machines); block b
/// belongs to the row whose prefix-sum interval contains b, and blocks beyond
/// the real total are synthetic rows. `total_blocks` is the real block count
/// and is cross-checked against the structure stream.
pub fn streaming_block_decoder(
    row_blocks: &[usize],
    factor: usize,
    machines: usize,
    total_blocks: usize,
) -> Result<Vec<BlockDecode>, InverseError> {
    let _ = factor; // per-slot fan-out is `factor` identical row labels
    let real_total: usize = row_blocks.iter().sum();
    if real_total != total_blocks {
        return Err(InverseError::InconsistentBlockCount {
            sum: real_total,
            declared: total_blocks,
        });
    }
    let n_rows = row_blocks.len();
    let padded_total = real_total.div_ceil(machines.max(1)) * machines;

    let mut out = Vec::with_capacity(padded_total);
    let mut row = 0usize;
    let mut used_in_row = 0usize;
    for b in 0..padded_total {
        let decoded_row = if b < real_total {
            while used_in_row == row_blocks[row] {
                row += 1;
                used_in_row = 0;
            }
            used_in_row += 1;
            row
        } else {
            n_rows + (b - real_total)
        };
        let machine = b % machines;
        let step = b / machines;
        let same = machine > 0
            && out
                .last()
                .map(|prev: &BlockDecode| prev.row == decoded_row)
                .unwrap_or(false);
        out.push(BlockDecode {
            machine,
            step,
            row: decoded_row,
            same_row_as_previous_machine: same,
        });
    }
    Ok(out)
}

/// Expands per-block decodes to per-slot row index streams, one per machine.
pub fn block_slot_rows(decodes: &[BlockDecode], factor: usize, machines: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); machines];
    for d in decodes {
        out[d.machine].extend(std::iter::repeat_n(d.row, factor));
    }
    out
}

/// Runs the streaming decoder appropriate for the encoding's structure and
/// returns per-slot line indices for every machine.
pub fn decoded_slot_rows(e: &EncodedMatrix) -> Result<Vec<Vec<usize>>, InverseError> {
    match &e.structure {
        Structure::RowLen(streams) => streaming_row_decoder(streams, e.origin_dims.0),
        Structure::RowBlocks {
            blocks_per_row,
            factor,
        } => {
            let real_total: usize = blocks_per_row.iter().sum();
            let decodes =
                streaming_block_decoder(blocks_per_row, *factor, e.machines, real_total)?;
            Ok(block_slot_rows(&decodes, *factor, e.machines))
        }
    }
}

/// Scatters every non-padding slot back to its origin coordinate, verifying
/// encoding integrity along the way.
pub fn decode(e: &EncodedMatrix) -> Result<DenseMatrix, DecodeError> {
    let (n_rows, n_cols) = e.origin_dims;
    let mut a = DenseMatrix::zeros(n_rows, n_cols)?;
    let mut first_slot: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for (m, (stream, vals)) in e.provenance.iter().zip(&e.values).enumerate() {
        if stream.len() != e.stream_length || vals.len() != e.stream_length {
            return Err(DecodeError::RaggedStreams {
                expected: e.stream_length,
            });
        }
        for (pos, (origin, &value)) in stream.iter().zip(vals).enumerate() {
            match origin.coords() {
                None => {
                    if value != 0.0 {
                        return Err(DecodeError::PaddingNonzero {
                            machine: m,
                            pos,
                            value,
                        });
                    }
                }
                Some((i, j)) => {
                    if i >= n_rows || j >= n_cols {
                        return Err(DecodeError::SlotOutOfBounds {
                            machine: m,
                            pos,
                            i,
                            j,
                            n_rows,
                            n_cols,
                        });
                    }
                    if value == 0.0 {
                        return Err(DecodeError::ZeroValueSlot { machine: m, pos });
                    }
                    if let Some(&(fm, fp)) = first_slot.get(&(i, j)) {
                        return Err(DecodeError::DuplicateOrigin {
                            machine: m,
                            pos,
                            first_machine: fm,
                            first_pos: fp,
                            i,
                            j,
                        });
                    }
                    first_slot.insert((i, j), (m, pos));
                    a.set(i, j, value);
                }
            }
        }
    }
    Ok(a)
}

/// One discrepancy found while checking an encoding against its source.
#[derive(Debug, Clone, PartialEq)]
pub enum RoundtripMismatch {
    /// A slot's value disagrees with the origin matrix.
    SlotValue {
        machine: usize,
        pos: usize,
        i: usize,
        j: usize,
        expected: f64,
        found: f64,
    },
    /// A nonzero of the origin matrix never appears in any slot.
    MissingNonzero { i: usize, j: usize, value: f64 },
    /// The encoding failed integrity checks before comparison.
    Integrity(String),
}

impl fmt::Display for RoundtripMismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoundtripMismatch::SlotValue {
                machine,
                pos,
                i,
                j,
                expected,
                found,
            } => write!(
                f,
                "slot (machine {machine}, position {pos}) maps to ({i}, {j}): expected {expected}, found {found}"
            ),
            RoundtripMismatch::MissingNonzero { i, j, value } => {
                write!(f, "nonzero ({i}, {j}) = {value} has no slot")
            }
            RoundtripMismatch::Integrity(msg) => write!(f, "integrity: {msg}"),
        }
    }
}

/// Result of replaying an encoding against the matrix it claims to encode.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundtripReport {
    /// Non-padding slots that were verified.
    pub checked_slots: usize,
    pub mismatches: Vec<RoundtripMismatch>,
}

impl RoundtripReport {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Scatters every non-padding slot value to its inverse-mapped coordinate and
/// compares against the original matrix exactly.
pub fn check_roundtrip(e: &EncodedMatrix, a: &DenseMatrix) -> RoundtripReport {
    let mut report = RoundtripReport {
        checked_slots: 0,
        mismatches: Vec::new(),
    };
    let mut covered: BTreeMap<(usize, usize), bool> = BTreeMap::new();
    for (m, (stream, vals)) in e.provenance.iter().zip(&e.values).enumerate() {
        for (pos, (origin, &value)) in stream.iter().zip(vals).enumerate() {
            let Some((i, j)) = origin.coords() else {
                if value != 0.0 {
                    report.mismatches.push(RoundtripMismatch::Integrity(format!(
                        "padding slot (machine {m}, position {pos}) carries nonzero {value}"
                    )));
                }
                continue;
            };
            report.checked_slots += 1;
            if i >= a.n_rows() || j >= a.n_cols() {
                report.mismatches.push(RoundtripMismatch::Integrity(format!(
                    "slot (machine {m}, position {pos}) maps outside the matrix at ({i}, {j})"
                )));
                continue;
            }
            if covered.insert((i, j), true).is_some() {
                report.mismatches.push(RoundtripMismatch::Integrity(format!(
                    "coordinate ({i}, {j}) is claimed by more than one slot"
                )));
                continue;
            }
            let expected = a.get(i, j);
            if value != expected || expected == 0.0 {
                report.mismatches.push(RoundtripMismatch::SlotValue {
                    machine: m,
                    pos,
                    i,
                    j,
                    expected,
                    found: value,
                });
            }
        }
    }
    for (i, j, value) in a.nonzeros() {
        if !covered.contains_key(&(i, j)) {
            report
                .mismatches
                .push(RoundtripMismatch::MissingNonzero { i, j, value });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::{dense_from_triplets, fixture_matrix, random_sparse, spmv_oracle, DenseMatrix, DenseVector};
    use crate::transform::{encode, RepresentationSpec};
    use proptest::prelude::*;

    fn cisr_fixture(machines: usize) -> EncodedMatrix {
        encode(&fixture_matrix(), &RepresentationSpec::cisr(machines)).unwrap()
    }

    #[test]
    fn inverse_map_fixture_slots() {
        let im = build_inverse_map(&cisr_fixture(2));
        assert_eq!(im.origin(0, 3), SlotOrigin::Value { i: 3, j: 1 });
        assert_eq!(im.origin(1, 4), SlotOrigin::Padding);
    }

    #[test]
    fn inverse_map_single_machine_identity() {
        let ident = dense_from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 1.0)]).unwrap();
        let e = encode(&ident, &RepresentationSpec::cisr(1)).unwrap();
        let im = build_inverse_map(&e);
        assert_eq!(im.origin(0, 1), SlotOrigin::Value { i: 1, j: 1 });
    }

    #[test]
    fn forward_map_fixture() {
        let im = build_inverse_map(&cisr_fixture(2));
        assert_eq!(forward_map(&im, 3, 1).unwrap(), Some((0, 3)));
        // Zero entries have no slot.
        assert_eq!(forward_map(&im, 0, 2).unwrap(), None);
        assert!(matches!(
            forward_map(&im, 4, 0),
            Err(InverseError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn forward_and_inverse_are_mutual() {
        let e = cisr_fixture(3);
        let im = build_inverse_map(&e);
        for m in 0..e.machines {
            for pos in 0..e.stream_length {
                if let Some((i, j)) = im.origin(m, pos).coords() {
                    assert_eq!(forward_map(&im, i, j).unwrap(), Some((m, pos)));
                }
            }
        }
    }

    #[test]
    fn row_decoder_fixture() {
        let rows = streaming_row_decoder(&[vec![3, 2], vec![1, 4]], 4).unwrap();
        assert_eq!(rows[0], vec![0, 0, 0, 3, 3]);
        assert_eq!(rows[1], vec![1, 2, 2, 2, 2]);
    }

    #[test]
    fn row_decoder_single_machine() {
        let rows = streaming_row_decoder(&[vec![2, 1]], 2).unwrap();
        assert_eq!(rows[0], vec![0, 0, 1]);
    }

    #[test]
    fn row_decoder_synthetic_rows_for_idle_machines() {
        // Two rows of length 1 over four machines: machines 2 and 3 received
        // nothing and decode synthetic rows 2 and 3.
        let m = dense_from_triplets(2, 2, &[(0, 0, 1.0), (1, 0, 2.0)]).unwrap();
        let e = encode(&m, &RepresentationSpec::cisr(4)).unwrap();
        let Structure::RowLen(streams) = &e.structure else {
            panic!()
        };
        let rows = streaming_row_decoder(streams, 2).unwrap();
        assert_eq!(rows[0], vec![0]);
        assert_eq!(rows[1], vec![1]);
        assert_eq!(rows[2], vec![2]);
        assert_eq!(rows[3], vec![3]);
    }

    #[test]
    fn row_decoder_structure_exhausted() {
        // Machine 0 claims only one short segment while machine 1 holds two;
        // no schedule produces this, and the replay detects it.
        let err = streaming_row_decoder(&[vec![2], vec![2, 0, 0]], 3).unwrap_err();
        assert!(matches!(err, InverseError::StructureExhausted { .. }));
    }

    #[test]
    fn block_decoder_fixture() {
        let decodes = streaming_block_decoder(&[2, 1, 1, 1], 2, 2, 5).unwrap();
        let rows: Vec<usize> = decodes.iter().map(|d| d.row).collect();
        assert_eq!(rows, vec![0, 0, 1, 2, 3, 4]);
        assert!(decodes[1].same_row_as_previous_machine);
        assert!(!decodes[3].same_row_as_previous_machine);
        assert!(!decodes[5].same_row_as_previous_machine);
        assert_eq!(decodes[4].step, 2);
        assert_eq!(decodes[4].machine, 0);
    }

    #[test]
    fn block_decoder_synthetic_padding_block() {
        let decodes = streaming_block_decoder(&[1], 2, 2, 1).unwrap();
        assert_eq!(decodes.len(), 2);
        assert_eq!(decodes[1].row, 1); // synthetic: >= n_rows = 1
        assert!(!decodes[1].same_row_as_previous_machine);
    }

    #[test]
    fn block_decoder_single_machine_no_pairing() {
        let decodes = streaming_block_decoder(&[2, 1], 2, 1, 3).unwrap();
        assert!(decodes.iter().all(|d| !d.same_row_as_previous_machine));
        let rows: Vec<usize> = decodes.iter().map(|d| d.row).collect();
        assert_eq!(rows, vec![0, 0, 1]);
    }

    #[test]
    fn block_decoder_inconsistent_count() {
        let err = streaming_block_decoder(&[2, 1], 2, 2, 4).unwrap_err();
        assert_eq!(
            err,
            InverseError::InconsistentBlockCount {
                sum: 3,
                declared: 4
            }
        );
    }

    #[test]
    fn decode_reproduces_fixture() {
        for spec in [RepresentationSpec::cisr(2), RepresentationSpec::blocked(2, 2)] {
            let e = encode(&fixture_matrix(), &spec).unwrap();
            assert_eq!(decode(&e).unwrap(), fixture_matrix());
        }
    }

    #[test]
    fn decode_rejects_tampered_provenance() {
        let mut e = cisr_fixture(2);
        e.provenance[0][1] = SlotOrigin::Value { i: 0, j: 0 }; // duplicate of slot 0
        assert!(matches!(
            decode(&e),
            Err(DecodeError::DuplicateOrigin { .. })
        ));
    }

    #[test]
    fn decode_rejects_nonzero_padding() {
        let mut e = cisr_fixture(2);
        e.values[1][4] = 3.0;
        assert!(matches!(decode(&e), Err(DecodeError::PaddingNonzero { .. })));
    }

    #[test]
    fn roundtrip_fixture_both_specs() {
        let a = fixture_matrix();
        for spec in [RepresentationSpec::cisr(2), RepresentationSpec::blocked(2, 2)] {
            let e = encode(&a, &spec).unwrap();
            let report = check_roundtrip(&e, &a);
            assert!(report.passed(), "{:?}", report.mismatches);
            assert_eq!(report.checked_slots, 8);
        }
    }

    #[test]
    fn roundtrip_reports_perturbed_slot() {
        let a = fixture_matrix();
        let mut e = encode(&a, &RepresentationSpec::cisr(2)).unwrap();
        e.values[0][2] += 1.0;
        let report = check_roundtrip(&e, &a);
        assert!(!report.passed());
        assert_eq!(
            report.mismatches[0],
            RoundtripMismatch::SlotValue {
                machine: 0,
                pos: 2,
                i: 0,
                j: 3,
                expected: 3.0,
                found: 4.0
            }
        );
    }

    #[test]
    fn roundtrip_all_zero_matrix() {
        let a = DenseMatrix::zeros(3, 3).unwrap();
        let e = encode(&a, &RepresentationSpec::cisr(2)).unwrap();
        let report = check_roundtrip(&e, &a);
        assert!(report.passed());
        assert_eq!(report.checked_slots, 0);
    }

    /// Provenance row of each slot, or None for padding.
    fn provenance_rows(e: &EncodedMatrix) -> Vec<Vec<Option<usize>>> {
        e.provenance
            .iter()
            .map(|s| s.iter().map(|o| o.coords().map(|(i, _)| i)).collect())
            .collect()
    }

    proptest! {
        #[test]
        fn decoder_replay_matches_provenance(rows in 1usize..32, cols in 1usize..24, density in 0.0f64..0.8, seed in 0u64..600, machines in 1usize..7) {
            let a = random_sparse(rows, cols, density, seed);
            let e = encode(&a, &RepresentationSpec::cisr(machines)).unwrap();
            let decoded = decoded_slot_rows(&e).unwrap();
            let prov = provenance_rows(&e);
            for m in 0..machines {
                prop_assert_eq!(decoded[m].len(), e.stream_length);
                for pos in 0..e.stream_length {
                    if let Some(i) = prov[m][pos] {
                        prop_assert_eq!(decoded[m][pos], i);
                    }
                }
            }
        }

        #[test]
        fn block_decoder_replay_matches_provenance(rows in 1usize..24, cols in 1usize..24, density in 0.0f64..0.8, seed in 0u64..600, machines in 1usize..5, factor in 1usize..5) {
            let a = random_sparse(rows, cols, density, seed);
            let e = encode(&a, &RepresentationSpec::blocked(factor, machines)).unwrap();
            let decoded = decoded_slot_rows(&e).unwrap();
            let prov = provenance_rows(&e);
            for m in 0..machines {
                prop_assert_eq!(decoded[m].len(), e.stream_length);
                for pos in 0..e.stream_length {
                    if let Some(i) = prov[m][pos] {
                        prop_assert_eq!(decoded[m][pos], i);
                    }
                }
            }
        }

        #[test]
        fn decode_then_spmv_equals_oracle(rows in 1usize..20, cols in 1usize..20, density in 0.0f64..0.8, seed in 0u64..400, machines in 1usize..5) {
            let a = random_sparse(rows, cols, density, seed);
            let x = DenseVector::new((0..cols).map(|c| ((c * 7) % 5 + 1) as f64).collect());
            for spec in [RepresentationSpec::cisr(machines), RepresentationSpec::blocked(2, machines)] {
                let e = encode(&a, &spec).unwrap();
                let decoded = decode(&e).unwrap();
                prop_assert_eq!(&decoded, &a);
                prop_assert_eq!(spmv_oracle(&decoded, &x).unwrap(), spmv_oracle(&a, &x).unwrap());
            }
        }
    }
}
