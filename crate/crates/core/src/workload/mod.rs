//! LLM architectures, execution scenarios and their task graphs.

mod build;
mod graph;
mod kernel;
mod model;

use thiserror::Error;

pub use build::{
    build_graph, build_inference_graph, build_training_graph, build_training_graph_with, OptimizerTraffic,
    LAYERNORM_FLOPS, RESIDUAL_FLOPS, SOFTMAX_FLOPS,
};
pub use graph::{dump_kernels, totals_of, GraphDump, GraphMeta, GraphTotals, KernelDump, TaskGraph};
pub use kernel::{
    kernel_bytes, kernel_flops, Access, Axis, ByteCount, CollectiveOp, ElementSplit, Elementwise, Gemm, Grad,
    Kernel, KernelKind, KernelTag, Operand, Pass, ResidencyHint, Role, TensorClass,
};
pub use model::{
    active_param_count, headline_params, kv_cache_bytes, model_preset, param_count, ModelSpec, MoeSpec,
    Phase, WorkloadSpec, MODEL_PRESETS,
};

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("unknown model preset `{name}` (available: {})", MODEL_PRESETS.join(", "))]
    UnknownModel { name: String },
    #[error("invalid model: {field} {rule}")]
    InvalidModel { field: String, rule: String },
    #[error("invalid workload: {field} {rule}")]
    InvalidWorkload { field: String, rule: String },
    #[error("expected a {expected:?} workload, found {found:?}")]
    WrongPhase { expected: Phase, found: Phase },
    #[error("invalid task graph: {0}")]
    InvalidGraph(String),
}
