//! Compiles a model and scenario into a task graph.
//!
//! Each transformer block is: layernorm, fused QKV projection, per-head score
//! and context products with a softmax between them, output projection,
//! residual add, layernorm, two feed-forward gemms and a second residual.
//! Embedding lookup and the vocabulary projection are not modeled.

use super::graph::{GraphMeta, GraphTotals, TaskGraph};
use super::kernel::{
    Axis, ElementSplit, Elementwise, Gemm, Grad, Kernel, KernelKind, KernelTag, Pass, Role, TensorClass,
};
use super::model::{ModelSpec, Phase, WorkloadSpec};
use super::WorkloadError;

/// Flops per element of the non-gemm kernels.
pub const SOFTMAX_FLOPS: u64 = 5;
pub const LAYERNORM_FLOPS: u64 = 8;
pub const RESIDUAL_FLOPS: u64 = 1;

/// Optimizer step traffic per parameter: bf16 weights and gradients plus
/// fp32 master copy and moments in, updated state out.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct OptimizerTraffic {
    pub bytes_read_per_param: u64,
    pub bytes_written_per_param: u64,
    pub flops_per_param: u64,
}

impl Default for OptimizerTraffic {
    fn default() -> Self {
        OptimizerTraffic {
            bytes_read_per_param: 16,
            bytes_written_per_param: 8,
            flops_per_param: 10,
        }
    }
}

/// Shape of one block invocation.
#[derive(Debug, Clone, Copy)]
struct BlockShape {
    /// Rows fed to the projections (tokens in flight).
    rows: u64,
    sequences: u64,
    query_len: u64,
    key_len: u64,
    /// Where K and V come from: fresh activations or the cache.
    kv_class: TensorClass,
}

fn gemm(
    m: u64,
    n: u64,
    k: u64,
    batch_count: u64,
    classes: [TensorClass; 3],
    data_axis: Axis,
    tensor_axis: Axis,
) -> KernelKind {
    KernelKind::Gemm(Gemm {
        m,
        n,
        k,
        batch_count,
        classes,
        data_axis,
        tensor_axis,
    })
}

fn elementwise(elements: u64, flops: u64, bpe: u64, split: ElementSplit) -> KernelKind {
    KernelKind::Elementwise(Elementwise {
        elements,
        flops_per_element: flops,
        bytes_read: elements * bpe,
        bytes_written: elements * bpe,
        class: TensorClass::Activation,
        split,
    })
}

fn block(model: &ModelSpec, s: BlockShape, bpe: u64) -> Vec<(Role, KernelKind)> {
    use TensorClass::{Activation as A, Weight as W};
    let h = model.hidden_dim;
    let heads = s.sequences * model.num_heads;
    let experts = model.active_experts();
    let hidden = s.rows * h;
    let kv = s.kv_class;
    vec![
        (
            Role::LayerNorm1,
            elementwise(hidden, LAYERNORM_FLOPS, bpe, ElementSplit::Replicated),
        ),
        (Role::Qkv, gemm(s.rows, 3 * h, h, 1, [A, W, A], Axis::M, Axis::N)),
        (
            Role::AttnScore,
            gemm(
                s.query_len,
                s.key_len,
                model.head_dim,
                heads,
                [A, kv, A],
                Axis::Batch,
                Axis::Batch,
            ),
        ),
        (
            Role::Softmax,
            elementwise(
                heads * s.query_len * s.key_len,
                SOFTMAX_FLOPS,
                bpe,
                ElementSplit::Sharded,
            ),
        ),
        (
            Role::AttnContext,
            gemm(
                s.query_len,
                model.head_dim,
                s.key_len,
                heads,
                [A, kv, A],
                Axis::Batch,
                Axis::Batch,
            ),
        ),
        (Role::OutProj, gemm(s.rows, h, h, 1, [A, W, A], Axis::M, Axis::K)),
        (
            Role::Residual1,
            elementwise(hidden, RESIDUAL_FLOPS, bpe, ElementSplit::Replicated),
        ),
        (
            Role::LayerNorm2,
            elementwise(hidden, LAYERNORM_FLOPS, bpe, ElementSplit::Replicated),
        ),
        (
            Role::FfnUp,
            gemm(s.rows, model.ffn_dim, h, experts, [A, W, A], Axis::M, Axis::N),
        ),
        (
            Role::FfnDown,
            gemm(s.rows, h, model.ffn_dim, experts, [A, W, A], Axis::M, Axis::K),
        ),
        (
            Role::Residual2,
            elementwise(hidden, RESIDUAL_FLOPS, bpe, ElementSplit::Replicated),
        ),
    ]
}

/// Gradient w.r.t. the left input: `dX(m×k) = dY(m×n) · Bᵀ`.
fn grad_input(g: &Gemm) -> KernelKind {
    let tensor_axis = match g.tensor_axis {
        Axis::N => Axis::K,
        Axis::K => Axis::N,
        other => other,
    };
    gemm(
        g.m,
        g.k,
        g.n,
        g.batch_count,
        [TensorClass::Activation, g.classes[1], g.classes[0]],
        g.data_axis,
        tensor_axis,
    )
}

/// Gradient w.r.t. the right input: `dB(k×n) = Aᵀ · dY(m×n)`.
fn grad_weight(g: &Gemm) -> KernelKind {
    let data_axis = match g.data_axis {
        Axis::M => Axis::K,
        other => other,
    };
    let tensor_axis = match g.tensor_axis {
        Axis::K => Axis::M,
        other => other,
    };
    gemm(
        g.k,
        g.n,
        g.m,
        g.batch_count,
        [g.classes[0], TensorClass::Activation, g.classes[1]],
        data_axis,
        tensor_axis,
    )
}

/// Reads the upstream gradient and the saved input, writes one gradient.
fn elementwise_backward(e: &Elementwise) -> KernelKind {
    KernelKind::Elementwise(Elementwise {
        bytes_read: 2 * e.bytes_read,
        ..*e
    })
}

#[derive(Default)]
struct Chain {
    kernels: Vec<Kernel>,
}

impl Chain {
    fn push(&mut self, tag: KernelTag, kind: KernelKind) {
        let mut k = Kernel::new(tag, kind);
        if let Some(last) = self.kernels.len().checked_sub(1) {
            k.deps.push(last as u32);
        }
        self.kernels.push(k);
    }
}

fn tag(pass: Pass, step: u32, layer: u64, role: Role, grad: Grad) -> KernelTag {
    KernelTag {
        pass,
        step,
        layer: Some(layer as u32),
        role,
        grad,
    }
}

fn meta(model: &ModelSpec, wl: &WorkloadSpec) -> GraphMeta {
    GraphMeta {
        phase: wl.phase,
        model: model.name.clone(),
        precision: wl.precision,
        batch: wl.batch,
        seq_len: wl.seq_len,
        gen_tokens: wl.gen_tokens,
        totals: GraphTotals::default(),
    }
}

fn check_inputs(model: &ModelSpec, wl: &WorkloadSpec, phase: Phase) -> Result<(), WorkloadError> {
    model.validate()?;
    wl.validate()?;
    if wl.phase != phase {
        return Err(WorkloadError::WrongPhase {
            expected: phase,
            found: wl.phase,
        });
    }
    Ok(())
}

/// One training step over the whole batch: forward, backward (two gradient
/// gemms per forward gemm, a mirrored elementwise kernel per forward one) and
/// an optimizer update over all block weights.
pub fn build_training_graph(model: &ModelSpec, wl: &WorkloadSpec) -> Result<TaskGraph, WorkloadError> {
    build_training_graph_with(model, wl, OptimizerTraffic::default())
}

pub fn build_training_graph_with(
    model: &ModelSpec,
    wl: &WorkloadSpec,
    optimizer: OptimizerTraffic,
) -> Result<TaskGraph, WorkloadError> {
    check_inputs(model, wl, Phase::Training)?;
    let bpe = wl.precision.bytes();
    let shape = BlockShape {
        rows: wl.batch * wl.seq_len,
        sequences: wl.batch,
        query_len: wl.seq_len,
        key_len: wl.seq_len,
        kv_class: TensorClass::Activation,
    };
    let layer_kernels = block(model, shape, bpe);
    let mut chain = Chain::default();
    for layer in 0..model.num_layers {
        for &(role, kind) in &layer_kernels {
            chain.push(tag(Pass::Forward, 0, layer, role, Grad::None), kind);
        }
    }
    for layer in (0..model.num_layers).rev() {
        for &(role, kind) in layer_kernels.iter().rev() {
            match kind {
                KernelKind::Gemm(g) => {
                    chain.push(tag(Pass::Backward, 0, layer, role, Grad::Input), grad_input(&g));
                    chain.push(tag(Pass::Backward, 0, layer, role, Grad::Weight), grad_weight(&g));
                }
                KernelKind::Elementwise(e) => {
                    chain.push(
                        tag(Pass::Backward, 0, layer, role, Grad::Input),
                        elementwise_backward(&e),
                    );
                }
                _ => unreachable!("blocks hold only compute kernels"),
            }
        }
    }
    let params = model.layer_params();
    chain.push(
        KernelTag {
            pass: Pass::Update,
            step: 0,
            layer: None,
            role: Role::WeightUpdate,
            grad: Grad::None,
        },
        KernelKind::Elementwise(Elementwise {
            elements: params,
            flops_per_element: optimizer.flops_per_param,
            bytes_read: params * optimizer.bytes_read_per_param,
            bytes_written: params * optimizer.bytes_written_per_param,
            class: TensorClass::Optimizer,
            split: ElementSplit::Sharded,
        }),
    );
    // Optimizer arithmetic is bookkeeping, not model work.
    if let Some(update) = chain.kernels.last_mut() {
        update.useful_flops = 0;
    }
    Ok(TaskGraph::new(chain.kernels, meta(model, wl)))
}

/// Prefill over the prompt, then one strictly serialized decode step per
/// generated token. Step `i` attends over `seq_len + i + 1` cached tokens.
pub fn build_inference_graph(model: &ModelSpec, wl: &WorkloadSpec) -> Result<TaskGraph, WorkloadError> {
    check_inputs(model, wl, Phase::Inference)?;
    let bpe = wl.precision.bytes();
    let mut chain = Chain::default();
    let prefill = block(
        model,
        BlockShape {
            rows: wl.batch * wl.seq_len,
            sequences: wl.batch,
            query_len: wl.seq_len,
            key_len: wl.seq_len,
            kv_class: TensorClass::Activation,
        },
        bpe,
    );
    for layer in 0..model.num_layers {
        for &(role, kind) in &prefill {
            chain.push(tag(Pass::Prefill, 0, layer, role, Grad::None), kind);
        }
    }
    for step in 0..wl.gen_tokens {
        let kernels = block(
            model,
            BlockShape {
                rows: wl.batch,
                sequences: wl.batch,
                query_len: 1,
                key_len: wl.seq_len + step + 1,
                kv_class: TensorClass::KvCache,
            },
            bpe,
        );
        for layer in 0..model.num_layers {
            for &(role, kind) in &kernels {
                chain.push(tag(Pass::Decode, step as u32, layer, role, Grad::None), kind);
            }
        }
    }
    Ok(TaskGraph::new(chain.kernels, meta(model, wl)))
}

/// Dispatches on the workload phase.
pub fn build_graph(model: &ModelSpec, wl: &WorkloadSpec) -> Result<TaskGraph, WorkloadError> {
    match wl.phase {
        Phase::Training => build_training_graph(model, wl),
        Phase::Inference => build_inference_graph(model, wl),
    }
}
