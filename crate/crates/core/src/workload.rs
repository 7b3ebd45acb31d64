//! LLM operation graphs.
//!
//! A decoder layer becomes Q/K/V/O projections, two attention GEMMs against
//! the INT4 KV cache with a softmax between them, and a gated FFN with SiLU.
//! RoPE, normalization, residual adds and the gate product are not modeled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::perf::{GemmShape, NonlinearClass, OpShape};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("model {model}: {reason}")]
    InvalidModel { model: String, reason: String },
    #[error("batch {0} outside 1..=32")]
    Batch(u64),
    #[error("quantization group size must be positive")]
    GroupSize,
    #[error("zero cycles per token step")]
    ZeroCycles,
    #[error("unknown model preset `{0}`")]
    UnknownPreset(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub layers: u64,
    pub attn_heads: u64,
    pub kv_heads: u64,
    pub hidden: u64,
    pub ffn: u64,
    pub seq_len: u64,
}

impl ModelSpec {
    pub fn llama2_7b() -> Self {
        ModelSpec { name: "llama2-7b".into(), layers: 32, attn_heads: 32, kv_heads: 32, hidden: 4096, ffn: 11008, seq_len: 4096 }
    }

    pub fn llama2_13b() -> Self {
        ModelSpec { name: "llama2-13b".into(), layers: 40, attn_heads: 40, kv_heads: 40, hidden: 5120, ffn: 13824, seq_len: 4096 }
    }

    /// The grouped-query variant with 8 KV heads.
    pub fn llama2_70b() -> Self {
        ModelSpec { name: "llama2-70b".into(), layers: 80, attn_heads: 64, kv_heads: 8, hidden: 8192, ffn: 28672, seq_len: 4096 }
    }

    pub fn preset(name: &str) -> Result<Self, WorkloadError> {
        match name {
            "llama2-7b" => Ok(Self::llama2_7b()),
            "llama2-13b" => Ok(Self::llama2_13b()),
            "llama2-70b" => Ok(Self::llama2_70b()),
            "llama2-70b-mha" => Ok(Self { name: "llama2-70b-mha".into(), kv_heads: 64, ..Self::llama2_70b() }),
            other => Err(WorkloadError::UnknownPreset(other.to_string())),
        }
    }

    pub fn head_dim(&self) -> u64 {
        self.hidden / self.attn_heads
    }

    /// Query heads served by one KV head.
    pub fn gqa_group(&self) -> u64 {
        self.attn_heads / self.kv_heads
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |reason: &str| Err(WorkloadError::InvalidModel { model: self.name.clone(), reason: reason.into() });
        if [self.layers, self.attn_heads, self.kv_heads, self.hidden, self.ffn, self.seq_len].contains(&0) {
            return bad("all dimensions must be positive");
        }
        if self.attn_heads % self.kv_heads != 0 {
            return bad("attention heads must be a multiple of KV heads");
        }
        if self.hidden % self.attn_heads != 0 {
            return bad("hidden size must split evenly across heads");
        }
        Ok(())
    }

    /// Projection and FFN weights, excluding embeddings and norms.
    pub fn layer_params(&self) -> u64 {
        let kv = self.kv_heads * self.head_dim();
        2 * self.hidden * self.hidden + 2 * self.hidden * kv + 3 * self.hidden * self.ffn
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Prefill,
    #[default]
    Decode,
}

pub const DEFAULT_GROUP_SIZE: u64 = 128;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub model: ModelSpec,
    pub batch: u64,
    #[serde(default)]
    pub phase: Phase,
    /// Quantization group along K for INT4 weights and KV cache.
    #[serde(default = "default_group")]
    pub group_size: u64,
}

fn default_group() -> u64 {
    DEFAULT_GROUP_SIZE
}

impl RunSpec {
    pub fn decode(model: ModelSpec, batch: u64) -> Self {
        RunSpec { model, batch, phase: Phase::Decode, group_size: DEFAULT_GROUP_SIZE }
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        self.model.validate()?;
        if !(1..=32).contains(&self.batch) {
            return Err(WorkloadError::Batch(self.batch));
        }
        if self.group_size == 0 {
            return Err(WorkloadError::GroupSize);
        }
        Ok(())
    }

    /// Tokens produced by one pass over the graph.
    pub fn tokens(&self) -> u64 {
        match self.phase {
            Phase::Decode => self.batch,
            Phase::Prefill => self.batch * self.model.seq_len,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OpKind {
    Proj,
    AttnQk,
    AttnPv,
    Ffn,
    Softmax,
    Silu,
    Gelu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Proj,
    Attn,
    Ffn,
    Nonlinear,
}

impl OpKind {
    pub fn category(self) -> Category {
        match self {
            OpKind::Proj => Category::Proj,
            OpKind::AttnQk | OpKind::AttnPv => Category::Attn,
            OpKind::Ffn => Category::Ffn,
            OpKind::Softmax | OpKind::Silu | OpKind::Gelu => Category::Nonlinear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Op {
    pub name: String,
    pub layer: u64,
    pub kind: OpKind,
    pub shape: OpShape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpGraph {
    pub run: RunSpec,
    pub ops: Vec<Op>,
}

impl OpGraph {
    pub fn macs(&self, filter: impl Fn(OpKind) -> bool) -> u64 {
        self.ops
            .iter()
            .filter(|o| filter(o.kind))
            .map(|o| match o.shape {
                OpShape::Gemm(g) => g.macs(),
                OpShape::Nonlinear { .. } => 0,
            })
            .sum()
    }

    pub fn elements(&self, kind: OpKind) -> u64 {
        self.ops
            .iter()
            .filter(|o| o.kind == kind)
            .map(|o| match o.shape {
                OpShape::Nonlinear { elements, .. } => elements,
                OpShape::Gemm(_) => 0,
            })
            .sum()
    }

    pub fn named_shapes(&self) -> Vec<(String, OpShape)> {
        self.ops.iter().map(|o| (o.name.clone(), o.shape)).collect()
    }
}

/// Operation graph for one token step (decode) or one full prompt (prefill).
pub fn build_graph(run: &RunSpec) -> Result<OpGraph, WorkloadError> {
    run.validate()?;
    let m = &run.model;
    let hd = m.head_dim();
    let kv = m.kv_heads * hd;
    let g = run.group_size;
    let s = m.seq_len;
    let (rows, queries) = match run.phase {
        Phase::Decode => (run.batch, 1),
        Phase::Prefill => (run.batch * s, s),
    };
    let gemm = |mm: u64, n: u64, k: u64| OpShape::Gemm(GemmShape::new(mm, n, k).with_group(g));
    let attn = |mm: u64, k: u64| {
        OpShape::Gemm(GemmShape::new(mm, m.gqa_group() * queries, k).with_instances(run.batch * m.kv_heads).with_group(g))
    };

    let mut ops = Vec::with_capacity(m.layers as usize * 11);
    for layer in 0..m.layers {
        let mut push = |name: &str, kind: OpKind, shape: OpShape| {
            ops.push(Op { name: format!("l{layer}.{name}"), layer, kind, shape });
        };
        push("q_proj", OpKind::Proj, gemm(m.hidden, rows, m.hidden));
        push("k_proj", OpKind::Proj, gemm(kv, rows, m.hidden));
        push("v_proj", OpKind::Proj, gemm(kv, rows, m.hidden));
        push("attn_qk", OpKind::AttnQk, attn(s, hd));
        push(
            "softmax",
            OpKind::Softmax,
            OpShape::Nonlinear { class: NonlinearClass::Softmax, elements: m.attn_heads * run.batch * queries * s },
        );
        push("attn_pv", OpKind::AttnPv, attn(hd, s));
        push("o_proj", OpKind::Proj, gemm(m.hidden, rows, m.hidden));
        push("ffn_gate", OpKind::Ffn, gemm(m.ffn, rows, m.hidden));
        push("ffn_up", OpKind::Ffn, gemm(m.ffn, rows, m.hidden));
        push(
            "silu",
            OpKind::Silu,
            OpShape::Nonlinear { class: NonlinearClass::Activation, elements: m.ffn * rows },
        );
        push("ffn_down", OpKind::Ffn, gemm(m.hidden, rows, m.ffn));
    }
    Ok(OpGraph { run: run.clone(), ops })
}

/// Tokens per second for a graph producing `tokens` in `cycles`.
pub fn tokens_per_second(tokens: u64, cycles: u64, frequency_hz: f64) -> Result<f64, WorkloadError> {
    if cycles == 0 {
        return Err(WorkloadError::ZeroCycles);
    }
    Ok(tokens as f64 * frequency_hz / cycles as f64)
}
