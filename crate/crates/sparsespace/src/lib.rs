//! Sparse matrices as chains of invertible transformations, with functional
//! simulation of values-driven streaming SpMV designs.
//!
//! A dense matrix is packed, optionally blocked, and job-scheduled onto
//! parallel machine streams. The chain records enough structure that the
//! mapping from (machine, position) back to (row, column) can be synthesized
//! and replayed by pure streaming decoders. Two ready-to-run SpMV designs are
//! simulated over a stage-and-channel dataflow engine and verified against a
//! dense structure-driven oracle.

pub mod designs;
pub mod inverse;
pub mod matrix;
pub mod mtx;
pub mod reduction;
pub mod sim;
pub mod transform;

pub use designs::{
    build_graph, design_blocked_spmv, design_cisr_spmv, run_graph, BlockedDesignParams,
    CisrDesignParams, DesignDescriptor, DesignError, DesignKind,
};
pub use inverse::{
    build_inverse_map, check_roundtrip, decode, decoded_slot_rows, forward_map,
    streaming_block_decoder, streaming_row_decoder, BlockDecode, DecodeError, InverseError,
    InverseMap, RoundtripMismatch, RoundtripReport,
};
pub use matrix::{
    dense_from_triplets, fixture_matrix, random_sparse, spmv_oracle, DenseMatrix, DenseVector,
    MatrixError,
};
pub use mtx::{parse_matrix_market, serialize_matrix_market, MtxError};
pub use reduction::{
    check_continuous, check_distinct, combine_maybe_different, combine_same_target,
    fused_accumulator, isolate_reduction, linear_array_reduce, reduction_props, tree_reduce,
    PartialSum, PropertyViolation, ReductionError, ReductionEvent, ReductionProps, ReductionTrace,
};
pub use sim::{
    run, stats, EncodingSummary, Item, PipelineGraph, SimError, SimRun, StageKind, Stats, Trace,
    TraceEvent,
};
pub use transform::{
    block, encode, pack, schedule_asap, validate_spec, BlockedMatrix, EncodedMatrix, JobSource,
    PackDim, PackedMatrix, PaddingPolicy, RepresentationSpec, ScheduleDim, SchedulePolicy,
    SlotOrigin, Structure, TransformError, TransformStep, ValidationReport,
};
