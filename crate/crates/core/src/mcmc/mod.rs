//! Metropolis–Hastings layout sampling and relation inference.

mod chain;
mod relations;

pub(crate) use chain::scatter;
pub use chain::wrap_degrees;
pub use chain::{
    resample_layout, sample_locations_mh, sample_locations_traced, write_trace_csv, ChainConfig,
    ChainSummary, LocationChain, ResampleConfig, StepRecord, RESYNC_INTERVAL,
};
pub use relations::{
    candidate_edges, default_schedule, infer_relations_gibbs, infer_relations_map, RelationGibbs,
    FREEZE_TEMPERATURE,
};
