use serde::{Deserialize, Serialize};

use crate::hwspec::Precision;

/// What kind of tensor an operand is; drives default placement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TensorClass {
    Activation,
    Weight,
    KvCache,
    Optimizer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResidencyHint {
    /// Always served from main memory.
    Streamed,
    /// May live on chip when it fits.
    Cacheable,
}

impl TensorClass {
    pub fn default_hint(self) -> ResidencyHint {
        match self {
            TensorClass::Activation => ResidencyHint::Cacheable,
            _ => ResidencyHint::Streamed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Access {
    Read,
    Write,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Operand {
    pub tensor_bytes: u64,
    pub access: Access,
    pub class: TensorClass,
    pub residency_hint: ResidencyHint,
}

/// Gemm dimension a parallel split divides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    None,
    M,
    N,
    K,
    Batch,
}

/// `batch_count` independent `m×k · k×n` products.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gemm {
    pub m: u64,
    pub n: u64,
    pub k: u64,
    pub batch_count: u64,
    /// Classes of the left input, right input and output.
    pub classes: [TensorClass; 3],
    /// Axis that carries the token (data-parallel) dimension.
    pub data_axis: Axis,
    /// Axis sharded by tensor parallelism.
    pub tensor_axis: Axis,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementSplit {
    /// Each tensor-parallel rank owns a slice.
    Sharded,
    /// Every tensor-parallel rank repeats the full operation.
    Replicated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Elementwise {
    pub elements: u64,
    pub flops_per_element: u64,
    pub bytes_read: u64,
    pub bytes_written: u64,
    pub class: TensorClass,
    pub split: ElementSplit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CollectiveOp {
    AllReduce,
    AllGather,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum KernelKind {
    Gemm(Gemm),
    Elementwise(Elementwise),
    Collective {
        op: CollectiveOp,
        payload: u64,
        group_size: u32,
    },
    P2p {
        payload: u64,
    },
}

impl KernelKind {
    pub fn is_communication(&self) -> bool {
        matches!(self, KernelKind::Collective { .. } | KernelKind::P2p { .. })
    }

    pub fn is_gemm(&self) -> bool {
        matches!(self, KernelKind::Gemm(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pass {
    Forward,
    Backward,
    Prefill,
    Decode,
    Update,
    Sync,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    LayerNorm1,
    Qkv,
    AttnScore,
    Softmax,
    AttnContext,
    OutProj,
    Residual1,
    LayerNorm2,
    FfnUp,
    FfnDown,
    Residual2,
    WeightUpdate,
    TpAllReduceAttn,
    TpAllReduceFfn,
    DpAllReduce,
    StageSend,
}

impl Role {
    pub fn label(self) -> &'static str {
        match self {
            Role::LayerNorm1 => "ln1",
            Role::Qkv => "qkv",
            Role::AttnScore => "score",
            Role::Softmax => "softmax",
            Role::AttnContext => "context",
            Role::OutProj => "out",
            Role::Residual1 => "res1",
            Role::LayerNorm2 => "ln2",
            Role::FfnUp => "ffn_up",
            Role::FfnDown => "ffn_down",
            Role::Residual2 => "res2",
            Role::WeightUpdate => "update",
            Role::TpAllReduceAttn => "tp_ar_attn",
            Role::TpAllReduceFfn => "tp_ar_ffn",
            Role::DpAllReduce => "dp_ar",
            Role::StageSend => "send",
        }
    }

    pub fn is_gemm(self) -> bool {
        matches!(
            self,
            Role::Qkv | Role::AttnScore | Role::AttnContext | Role::OutProj | Role::FfnUp | Role::FfnDown
        )
    }

    /// Attention products that touch K and V.
    pub fn is_attention(self) -> bool {
        matches!(self, Role::AttnScore | Role::AttnContext)
    }
}

/// Which backward product a kernel is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grad {
    None,
    Input,
    Weight,
}

/// Structured identity of a kernel; [`Kernel::id`] renders it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelTag {
    pub pass: Pass,
    /// Decode step; zero elsewhere.
    pub step: u32,
    pub layer: Option<u32>,
    pub role: Role,
    pub grad: Grad,
}

impl KernelTag {
    /// Stable textual id, e.g. `f.l3.qkv` or `d12.l0.ffn_up`.
    pub fn id(&self) -> String {
        let t = self;
        let mut id = match t.pass {
            Pass::Forward => "f".to_string(),
            Pass::Backward => "b".to_string(),
            Pass::Prefill => "p".to_string(),
            Pass::Decode => format!("d{}", t.step),
            Pass::Update => "u".to_string(),
            Pass::Sync => "s".to_string(),
        };
        if let Some(l) = t.layer {
            id.push_str(&format!(".l{l}"));
        }
        id.push('.');
        id.push_str(t.role.label());
        match t.grad {
            Grad::None => {}
            Grad::Input => id.push_str(".dx"),
            Grad::Weight => id.push_str(".dw"),
        }
        id
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub tag: KernelTag,
    pub kind: KernelKind,
    /// Indices of predecessor kernels in the owning graph.
    pub deps: Vec<u32>,
    pub useful_flops: u128,
    /// Per-operand overrides of the class defaults, in [`Kernel::operands`]
    /// order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hints: Option<Vec<ResidencyHint>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ByteCount {
    pub read: u64,
    pub written: u64,
}

impl Kernel {
    pub fn new(tag: KernelTag, kind: KernelKind) -> Self {
        let useful_flops = match kind {
            KernelKind::Gemm(_) | KernelKind::Elementwise(_) => kernel_flops_of(&kind),
            _ => 0,
        };
        Kernel {
            tag,
            kind,
            deps: Vec::new(),
            useful_flops,
            hints: None,
        }
    }

    pub fn id(&self) -> String {
        self.tag.id()
    }

    pub fn flops(&self) -> u128 {
        kernel_flops_of(&self.kind)
    }

    /// Operands with their byte sizes and effective residency hints.
    pub fn operands(&self, precision: Precision) -> Vec<Operand> {
        let op = |bytes, access, class: TensorClass| Operand {
            tensor_bytes: bytes,
            access,
            class,
            residency_hint: class.default_hint(),
        };
        let mut ops = match self.kind {
            KernelKind::Gemm(g) => {
                let b = precision.bytes() * g.batch_count;
                vec![
                    op(g.m * g.k * b, Access::Read, g.classes[0]),
                    op(g.k * g.n * b, Access::Read, g.classes[1]),
                    op(g.m * g.n * b, Access::Write, g.classes[2]),
                ]
            }
            KernelKind::Elementwise(e) => vec![
                op(e.bytes_read, Access::Read, e.class),
                op(e.bytes_written, Access::Write, e.class),
            ],
            KernelKind::Collective { .. } | KernelKind::P2p { .. } => Vec::new(),
        };
        if let Some(hints) = &self.hints {
            for (o, &h) in ops.iter_mut().zip(hints) {
                o.residency_hint = h;
            }
        }
        ops
    }
}

fn kernel_flops_of(kind: &KernelKind) -> u128 {
    match *kind {
        KernelKind::Gemm(g) => {
            2 * u128::from(g.m) * u128::from(g.n) * u128::from(g.k) * u128::from(g.batch_count)
        }
        KernelKind::Elementwise(e) => u128::from(e.elements) * u128::from(e.flops_per_element),
        KernelKind::Collective { .. } | KernelKind::P2p { .. } => 0,
    }
}

/// Arithmetic work of a kernel. Communication kernels do none.
pub fn kernel_flops(k: &Kernel) -> u128 {
    k.flops()
}

/// Bytes moved by a kernel. Gemms read both inputs and write the product;
/// elementwise kernels carry explicit counts; communication reports its
/// payload as read.
pub fn kernel_bytes(k: &Kernel, precision: Precision) -> ByteCount {
    match k.kind {
        KernelKind::Gemm(g) => {
            let b = precision.bytes() * g.batch_count;
            ByteCount {
                read: (g.m * g.k + g.k * g.n) * b,
                written: g.m * g.n * b,
            }
        }
        KernelKind::Elementwise(e) => ByteCount {
            read: e.bytes_read,
            written: e.bytes_written,
        },
        KernelKind::Collective { payload, .. } | KernelKind::P2p { payload } => ByteCount {
            read: payload,
            written: 0,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tag(role: Role) -> KernelTag {
        KernelTag {
            pass: Pass::Forward,
            step: 0,
            layer: Some(0),
            role,
            grad: Grad::None,
        }
    }

    fn gemm(m: u64, n: u64, k: u64) -> Kernel {
        Kernel::new(
            tag(Role::Qkv),
            KernelKind::Gemm(Gemm {
                m,
                n,
                k,
                batch_count: 1,
                classes: [
                    TensorClass::Activation,
                    TensorClass::Weight,
                    TensorClass::Activation,
                ],
                data_axis: Axis::M,
                tensor_axis: Axis::N,
            }),
        )
    }

    #[test]
    fn unit_gemm() {
        assert_eq!(kernel_flops(&gemm(1, 1, 1)), 2);
    }

    #[test]
    fn square_gemm_flops_and_bytes() {
        let k = gemm(1024, 1024, 1024);
        assert_eq!(kernel_flops(&k), 2_147_483_648);
        let b = kernel_bytes(&k, Precision::Bf16);
        assert_eq!(b.read, 4_194_304);
        assert_eq!(b.written, 2_097_152);
        assert_eq!(k.useful_flops, 2_147_483_648);
    }

    #[test]
    fn elementwise_passes_counts_through() {
        let k = Kernel::new(
            tag(Role::Softmax),
            KernelKind::Elementwise(Elementwise {
                elements: 10,
                flops_per_element: 5,
                bytes_read: 80,
                bytes_written: 40,
                class: TensorClass::Activation,
                split: ElementSplit::Sharded,
            }),
        );
        assert_eq!(kernel_flops(&k), 50);
        assert_eq!(
            kernel_bytes(&k, Precision::Bf16),
            ByteCount {
                read: 80,
                written: 40
            }
        );
    }

    #[test]
    fn collectives_carry_payload_and_no_flops() {
        let k = Kernel::new(
            tag(Role::TpAllReduceAttn),
            KernelKind::Collective {
                op: CollectiveOp::AllReduce,
                payload: 1000,
                group_size: 8,
            },
        );
        assert_eq!(kernel_flops(&k), 0);
        assert_eq!(k.useful_flops, 0);
        assert_eq!(kernel_bytes(&k, Precision::Bf16).read, 1000);
        assert!(k.operands(Precision::Bf16).is_empty());
    }

    #[test]
    fn ids_render_tags() {
        let mut k = gemm(1, 1, 1);
        assert_eq!(k.id(), "f.l0.qkv");
        k.tag.pass = Pass::Decode;
        k.tag.step = 12;
        k.tag.grad = Grad::Weight;
        assert_eq!(k.id(), "d12.l0.qkv.dw");
    }

    #[test]
    fn hints_override_defaults() {
        let mut k = gemm(2, 2, 2);
        let ops = k.operands(Precision::Bf16);
        assert_eq!(ops[1].residency_hint, ResidencyHint::Streamed);
        assert_eq!(ops[0].residency_hint, ResidencyHint::Cacheable);
        k.hints = Some(vec![ResidencyHint::Streamed; 3]);
        assert!(k
            .operands(Precision::Bf16)
            .iter()
            .all(|o| o.residency_hint == ResidencyHint::Streamed));
    }
}
