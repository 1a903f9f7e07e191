//! Transformer geometry: model specs, the per-layer module sequence and the
//! memory breakdown by category.
//!
//! Weight geometry follows the OPT layout: separate `h x h` projections for
//! Q, K, V and the attention output, an `h x ffn` / `ffn x h` MLP pair, two
//! layer norms per layer and a learned positional embedding stored next to
//! the token embedding.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("cannot read model spec {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model spec schema error: {0}")]
    Schema(String),
    #[error("invalid model spec field `{field}`: {reason}")]
    Validation { field: &'static str, reason: String },
    #[error("sequence length {seq_len} exceeds max_positions {max_positions}")]
    SeqTooLong { seq_len: usize, max_positions: usize },
    #[error("batch must be positive")]
    ZeroBatch,
}

/// Architecture of a decoder-only transformer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub name: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub ffn_dim: usize,
    pub num_heads: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Bytes per weight element.
    pub dtype_bytes: usize,
}

impl ModelSpec {
    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let spec: ModelSpec =
            serde_json::from_str(text).map_err(|e| ModelError::Schema(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// Checks the architectural invariants. `num_layers = 0` is accepted as an
    /// embedding-only degenerate model.
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("hidden_dim", self.hidden_dim),
            ("ffn_dim", self.ffn_dim),
            ("num_heads", self.num_heads),
            ("vocab_size", self.vocab_size),
            ("max_positions", self.max_positions),
            ("dtype_bytes", self.dtype_bytes),
        ];
        for (field, value) in positive {
            if value == 0 {
                return Err(ModelError::Validation {
                    field,
                    reason: "must be positive".into(),
                });
            }
        }
        if self.hidden_dim % self.num_heads != 0 {
            return Err(ModelError::Validation {
                field: "hidden_dim",
                reason: format!(
                    "{} is not divisible by num_heads {}",
                    self.hidden_dim, self.num_heads
                ),
            });
        }
        if self.ffn_dim < self.hidden_dim {
            return Err(ModelError::Validation {
                field: "ffn_dim",
                reason: format!("{} is smaller than hidden_dim {}", self.ffn_dim, self.hidden_dim),
            });
        }
        if !matches!(self.dtype_bytes, 2 | 4) {
            return Err(ModelError::Validation {
                field: "dtype_bytes",
                reason: format!("{} is not one of 2 or 4", self.dtype_bytes),
            });
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }

    /// Total parameter bytes of the model, biases included.
    pub fn model_bytes(&self) -> u64 {
        enumerate_modules(self)
            .iter()
            .map(|m| m.param_bytes + m.bias_bytes)
            .sum()
    }
}

pub fn load_model_spec(path: impl AsRef<Path>) -> Result<ModelSpec, ModelError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    ModelSpec::from_json(&text)
}

/// Module kinds in per-layer execution order; the derived `Ord` follows it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModuleKind {
    Embedding,
    AttnLayerNorm,
    AttnQ,
    AttnK,
    AttnV,
    AttnOut,
    MlpLayerNorm,
    MlpFc1,
    MlpFc2,
}

impl ModuleKind {
    pub const LAYER_ORDER: [ModuleKind; 8] = [
        ModuleKind::AttnLayerNorm,
        ModuleKind::AttnQ,
        ModuleKind::AttnK,
        ModuleKind::AttnV,
        ModuleKind::AttnOut,
        ModuleKind::MlpLayerNorm,
        ModuleKind::MlpFc1,
        ModuleKind::MlpFc2,
    ];

    pub fn group(self) -> ModuleGroup {
        match self {
            ModuleKind::AttnQ | ModuleKind::AttnK | ModuleKind::AttnV | ModuleKind::AttnOut => {
                ModuleGroup::AttnLinear
            }
            ModuleKind::MlpFc1 | ModuleKind::MlpFc2 => ModuleGroup::MlpLinear,
            _ => ModuleGroup::NonLinear,
        }
    }

    pub fn is_linear(self) -> bool {
        self.group() != ModuleGroup::NonLinear
    }

    pub fn is_layer_norm(self) -> bool {
        matches!(self, ModuleKind::AttnLayerNorm | ModuleKind::MlpLayerNorm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ModuleGroup {
    AttnLinear,
    MlpLinear,
    NonLinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModuleId {
    pub layer: usize,
    pub kind: ModuleKind,
}

impl ModuleId {
    pub fn new(layer: usize, kind: ModuleKind) -> Self {
        Self { layer, kind }
    }
}

impl fmt::Display for ModuleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ModuleKind::Embedding => write!(f, "Embedding"),
            kind => write!(f, "L{}.{:?}", self.layer, kind),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleSpec {
    pub id: ModuleId,
    pub in_dim: usize,
    pub out_dim: usize,
    /// Weight bytes. For linears this is `in_dim * out_dim * dtype_bytes`; the
    /// bias is tracked separately in `bias_bytes` and never split.
    pub param_bytes: u64,
    pub bias_bytes: u64,
    pub group: ModuleGroup,
}

impl ModuleSpec {
    pub fn kind(&self) -> ModuleKind {
        self.id.kind
    }

    pub fn is_linear(&self) -> bool {
        self.group != ModuleGroup::NonLinear
    }
}

fn module(spec: &ModelSpec, layer: usize, kind: ModuleKind) -> ModuleSpec {
    let h = spec.hidden_dim;
    let dt = spec.dtype_bytes as u64;
    let (in_dim, out_dim) = match kind {
        ModuleKind::Embedding => (spec.vocab_size + spec.max_positions, h),
        ModuleKind::AttnLayerNorm | ModuleKind::MlpLayerNorm => (h, h),
        ModuleKind::AttnQ | ModuleKind::AttnK | ModuleKind::AttnV | ModuleKind::AttnOut => (h, h),
        ModuleKind::MlpFc1 => (h, spec.ffn_dim),
        ModuleKind::MlpFc2 => (spec.ffn_dim, h),
    };
    let (param_bytes, bias_bytes) = match kind {
        ModuleKind::Embedding => ((in_dim * out_dim) as u64 * dt, 0),
        // gamma and beta
        ModuleKind::AttnLayerNorm | ModuleKind::MlpLayerNorm => (2 * h as u64 * dt, 0),
        _ => ((in_dim * out_dim) as u64 * dt, out_dim as u64 * dt),
    };
    ModuleSpec {
        id: ModuleId::new(layer, kind),
        in_dim,
        out_dim,
        param_bytes,
        bias_bytes,
        group: kind.group(),
    }
}

/// Modules in execution order: the embedding, then eight modules per layer.
pub fn enumerate_modules(spec: &ModelSpec) -> Vec<ModuleSpec> {
    let mut out = Vec::with_capacity(1 + spec.num_layers * ModuleKind::LAYER_ORDER.len());
    out.push(module(spec, 0, ModuleKind::Embedding));
    for layer in 0..spec.num_layers {
        for kind in ModuleKind::LAYER_ORDER {
            out.push(module(spec, layer, kind));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MemoryCategory {
    Linear,
    Embedding,
    LayerNorm,
    Bias,
    KvCache,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryReport {
    pub linear_bytes: u64,
    pub embedding_bytes: u64,
    pub layernorm_bytes: u64,
    pub bias_bytes: u64,
    pub kv_cache_bytes: u64,
    pub total_bytes: u64,
    pub fractions: BTreeMap<MemoryCategory, f64>,
}

impl MemoryReport {
    pub fn fraction(&self, category: MemoryCategory) -> f64 {
        self.fractions.get(&category).copied().unwrap_or(0.0)
    }
}

/// KV cache bytes for `batch` sequences of `seq_len` tokens, stored at weight precision.
pub fn kv_cache_bytes(spec: &ModelSpec, batch: usize, seq_len: usize) -> u64 {
    2 * (spec.num_layers * batch * seq_len * spec.hidden_dim * spec.dtype_bytes) as u64
}

pub fn memory_breakdown(
    spec: &ModelSpec,
    batch: usize,
    seq_len: usize,
) -> Result<MemoryReport, ModelError> {
    if batch == 0 {
        return Err(ModelError::ZeroBatch);
    }
    if seq_len > spec.max_positions {
        return Err(ModelError::SeqTooLong {
            seq_len,
            max_positions: spec.max_positions,
        });
    }
    let mut linear = 0u64;
    let mut embedding = 0u64;
    let mut layernorm = 0u64;
    let mut bias = 0u64;
    for m in enumerate_modules(spec) {
        bias += m.bias_bytes;
        match m.kind() {
            ModuleKind::Embedding => embedding += m.param_bytes,
            k if k.is_layer_norm() => layernorm += m.param_bytes,
            _ => linear += m.param_bytes,
        }
    }
    let kv = kv_cache_bytes(spec, batch, seq_len);
    let total = linear + embedding + layernorm + bias + kv;
    let fractions = [
        (MemoryCategory::Linear, linear),
        (MemoryCategory::Embedding, embedding),
        (MemoryCategory::LayerNorm, layernorm),
        (MemoryCategory::Bias, bias),
        (MemoryCategory::KvCache, kv),
    ]
    .into_iter()
    .map(|(c, b)| (c, if total == 0 { 0.0 } else { b as f64 / total as f64 }))
    .collect();
    Ok(MemoryReport {
        linear_bytes: linear,
        embedding_bytes: embedding,
        layernorm_bytes: layernorm,
        bias_bytes: bias,
        kv_cache_bytes: kv,
        total_bytes: total,
        fractions,
    })
}
