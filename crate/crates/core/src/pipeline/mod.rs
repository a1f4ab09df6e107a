//! Pareto analysis, latency modelling and the end-to-end reduction pipeline.

mod latency;
mod pareto;
mod run;

pub use latency::{
    estimate_latency, fit_latency_model, fit_latency_model_weighted, FitWeighting, LatencyModel, REFERENCE_POINTS,
};
pub use pareto::{
    acc_per_kilorelu, candidates_csv, on_front, pareto_csv, pareto_front, parse_candidates_csv, CandidatePoint,
    PARETO_HEADER,
};
pub use run::{
    culling_order, default_ladder, derive_seed, manifest_json, measure_criticality, plan_candidates, run_deepreduce,
    CandidateRecord, CriticalityRun, FailedCandidate, PipelineConfig, PipelineRun, PlannedCandidate, ProbeRecord, Rung,
};
