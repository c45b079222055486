use serde::{Deserialize, Serialize};

use super::WorkloadError;
use crate::hwspec::Precision;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoeSpec {
    pub num_experts: u64,
    pub active_experts: u64,
}

/// Transformer architecture.
///
/// `ffn_dim` is the width of a two-matrix feed-forward block. Gated (SwiGLU)
/// models are described by their two-matrix equivalent width, 1.5× the gated
/// intermediate size, so weights and flops line up with the real network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub num_layers: u64,
    pub hidden_dim: u64,
    pub num_heads: u64,
    pub head_dim: u64,
    pub ffn_dim: u64,
    pub vocab_size: u64,
    /// Input embedding and output projection share one matrix.
    #[serde(default = "default_true")]
    pub tied_embeddings: bool,
    /// Grouped-KV head count. Only the cache size uses it; `None` keeps the
    /// full hidden width.
    #[serde(default)]
    pub kv_heads: Option<u64>,
    #[serde(default)]
    pub moe: Option<MoeSpec>,
    pub default_precision: Precision,
}

fn default_true() -> bool {
    true
}

pub const MODEL_PRESETS: [&str; 9] = [
    "gpt3-18b",
    "gpt3-39b",
    "gpt3-76b",
    "llama2-7b",
    "llama2-13b",
    "llama2-70b",
    "llama-70b",
    "llama-405b",
    "moe-132b",
];

/// Parameter count a preset name advertises (`76b` → 76e9).
pub fn headline_params(name: &str) -> Option<f64> {
    let tail = name.rsplit('-').next()?;
    let digits = tail.strip_suffix('b')?;
    digits.parse::<f64>().ok().map(|b| b * 1e9)
}

#[allow(clippy::too_many_arguments)]
fn dense(name: &str, layers: u64, hidden: u64, heads: u64, ffn: u64, vocab: u64, tied: bool) -> ModelSpec {
    ModelSpec {
        name: name.to_string(),
        num_layers: layers,
        hidden_dim: hidden,
        num_heads: heads,
        head_dim: hidden / heads,
        ffn_dim: ffn,
        vocab_size: vocab,
        tied_embeddings: tied,
        kv_heads: None,
        moe: None,
        default_precision: Precision::Bf16,
    }
}

pub fn model_preset(name: &str) -> Result<ModelSpec, WorkloadError> {
    let spec = match name {
        // GPT-3 family: 4h feed-forward, tied 51200-token embedding. Layer
        // counts are multiples of 8 so an 8-stage pipeline splits evenly.
        "gpt3-18b" => dense(name, 40, 6144, 48, 24576, 51200, true),
        "gpt3-39b" => dense(name, 48, 8192, 64, 32768, 51200, true),
        "gpt3-76b" => dense(name, 80, 8960, 80, 35840, 51200, true),
        // Llama 2: SwiGLU intermediate 11008 / 13824 → equivalent 16512 / 20736.
        "llama2-7b" => dense(name, 32, 4096, 32, 16512, 32000, false),
        "llama2-13b" => dense(name, 40, 5120, 40, 20736, 32000, false),
        "llama2-70b" => dense(name, 80, 8192, 64, 36864, 32000, false),
        "llama-70b" => dense(name, 80, 8192, 64, 35840, 128256, false),
        "llama-405b" => dense(name, 126, 16384, 128, 64512, 128256, false),
        "moe-132b" => ModelSpec {
            moe: Some(MoeSpec {
                num_experts: 16,
                active_experts: 4,
            }),
            ..dense(name, 40, 6144, 64, 16128, 100352, false)
        },
        _ => {
            return Err(WorkloadError::UnknownModel {
                name: name.to_string(),
            })
        }
    };
    Ok(spec)
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |field: &str, rule: &str| {
            Err(WorkloadError::InvalidModel {
                field: field.to_string(),
                rule: rule.to_string(),
            })
        };
        for (field, v) in [
            ("num_layers", self.num_layers),
            ("hidden_dim", self.hidden_dim),
            ("num_heads", self.num_heads),
            ("head_dim", self.head_dim),
            ("ffn_dim", self.ffn_dim),
        ] {
            if v == 0 {
                return bad(field, "must be > 0");
            }
        }
        if self.num_heads * self.head_dim != self.hidden_dim {
            return bad("num_heads", "num_heads × head_dim must equal hidden_dim");
        }
        if let Some(g) = self.kv_heads {
            if g == 0 || !self.num_heads.is_multiple_of(g) {
                return bad("kv_heads", "must divide num_heads");
            }
        }
        if let Some(moe) = self.moe {
            if moe.num_experts == 0 || moe.active_experts == 0 {
                return bad("moe", "expert counts must be > 0");
            }
            if moe.active_experts > moe.num_experts {
                return bad("moe.active_experts", "must be ≤ num_experts");
            }
        }
        Ok(())
    }

    pub fn num_experts(&self) -> u64 {
        self.moe.map_or(1, |m| m.num_experts)
    }

    pub fn active_experts(&self) -> u64 {
        self.moe.map_or(1, |m| m.active_experts)
    }

    /// Attention projections of one layer: Q, K, V and output, each h×h.
    pub fn attention_params_per_layer(&self) -> u64 {
        4 * self.hidden_dim * self.hidden_dim
    }

    /// One expert's (or the dense) feed-forward block: h×ffn and ffn×h.
    pub fn ffn_params_per_expert(&self) -> u64 {
        2 * self.hidden_dim * self.ffn_dim
    }

    pub fn embedding_params(&self) -> u64 {
        let copies = if self.tied_embeddings { 1 } else { 2 };
        copies * self.vocab_size * self.hidden_dim
    }

    /// Weights held by the transformer blocks (every expert), without
    /// embeddings. This is what the task graphs stream and update.
    pub fn layer_params(&self) -> u64 {
        self.num_layers
            * (self.attention_params_per_layer() + self.num_experts() * self.ffn_params_per_expert())
    }

    /// Weights touched by one token: attention plus the active experts.
    pub fn active_layer_params(&self) -> u64 {
        self.num_layers
            * (self.attention_params_per_layer() + self.active_experts() * self.ffn_params_per_expert())
    }

    /// Bytes per cached token per layer for one of K or V.
    fn kv_width(&self) -> u64 {
        self.kv_heads.map_or(self.hidden_dim, |g| g * self.head_dim)
    }
}

/// Total parameters:
/// `L·(4h² + E·2h·ffn) + copies·vocab·h`, with `E` the expert count (1 when
/// dense) and `copies` 1 for tied embeddings, 2 otherwise.
pub fn param_count(model: &ModelSpec) -> u64 {
    model.layer_params() + model.embedding_params()
}

/// Parameters on one token's path: as [`param_count`] but with only the
/// active experts.
pub fn active_param_count(model: &ModelSpec) -> u64 {
    model.active_layer_params() + model.embedding_params()
}

/// K and V for every layer: `2 · L · tokens · batch · width · bytes`.
pub fn kv_cache_bytes(model: &ModelSpec, batch: u64, tokens: u64, precision: Precision) -> u64 {
    2 * model.num_layers * tokens * batch * model.kv_width() * precision.bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadSpec {
    pub phase: Phase,
    pub batch: u64,
    /// Training context length, or the inference prompt length.
    pub seq_len: u64,
    #[serde(default)]
    pub gen_tokens: u64,
    #[serde(default = "one")]
    pub microbatches: u64,
    #[serde(default = "bf16")]
    pub precision: Precision,
}

fn one() -> u64 {
    1
}

fn bf16() -> Precision {
    Precision::Bf16
}

impl WorkloadSpec {
    pub fn training(batch: u64, seq_len: u64, microbatches: u64) -> Self {
        WorkloadSpec {
            phase: Phase::Training,
            batch,
            seq_len,
            gen_tokens: 0,
            microbatches,
            precision: Precision::Bf16,
        }
    }

    pub fn inference(batch: u64, prompt: u64, gen_tokens: u64) -> Self {
        WorkloadSpec {
            phase: Phase::Inference,
            batch,
            seq_len: prompt,
            gen_tokens,
            microbatches: 1,
            precision: Precision::Bf16,
        }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |field: &str, rule: &str| {
            Err(WorkloadError::InvalidWorkload {
                field: field.to_string(),
                rule: rule.to_string(),
            })
        };
        if self.batch < 1 {
            return bad("batch", "must be ≥ 1");
        }
        if self.seq_len < 1 {
            return bad("seq_len", "must be ≥ 1");
        }
        if self.phase == Phase::Training {
            if self.microbatches < 1 {
                return bad("microbatches", "must be ≥ 1");
            }
            if !self.batch.is_multiple_of(self.microbatches) {
                return bad("microbatches", "must divide batch");
            }
        }
        Ok(())
    }

    /// Cached tokens once generation finishes.
    pub fn final_tokens(&self) -> u64 {
        self.seq_len + self.gen_tokens
    }
}
