//! Seeded random weights for the toy transformer.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ModelSpec, ModuleId, ModuleKind};

/// Row-major `in_dim x out_dim` weight and its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Linear {
    pub fn random(rng: &mut impl Rng, in_dim: usize, out_dim: usize) -> Self {
        let bound = 1.0 / (in_dim as f32).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: (0..in_dim * out_dim).map(|_| rng.random_range(-bound..bound)).collect(),
            bias: (0..out_dim).map(|_| rng.random_range(-bound..bound)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ModelWeights {
    pub seed: u64,
    /// `[vocab, hidden]`, also the output projection.
    pub tokens: Vec<f32>,
    /// `[max_positions, hidden]`.
    pub positions: Vec<f32>,
    pub norms: BTreeMap<ModuleId, Norm>,
    pub linears: BTreeMap<ModuleId, Arc<Linear>>,
}

impl ModelWeights {
    pub fn seeded(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = spec.hidden_dim;
        let mut table = |n: usize| -> Vec<f32> { (0..n * h).map(|_| rng.random_range(-0.1..0.1)).collect() };
        let tokens = table(spec.vocab_size);
        let positions = table(spec.max_positions);
        let mut norms = BTreeMap::new();
        let mut linears = BTreeMap::new();
        for layer in 0..spec.num_layers {
            for kind in ModuleKind::LAYER_ORDER {
                let id = ModuleId::new(layer, kind);
                if kind.is_layer_norm() {
                    norms.insert(
                        id,
                        Norm {
                            gamma: (0..h).map(|_| rng.random_range(0.9..1.1)).collect(),
                            beta: (0..h).map(|_| rng.random_range(-0.05..0.05)).collect(),
                        },
                    );
                } else {
                    let (i, o) = match kind {
                        ModuleKind::MlpFc1 => (h, spec.ffn_dim),
                        ModuleKind::MlpFc2 => (spec.ffn_dim, h),
                        _ => (h, h),
                    };
                    linears.insert(id, Arc::new(Linear::random(&mut rng, i, o)));
                }
            }
        }
        Self {
            seed,
            tokens,
            positions,
            norms,
            linears,
        }
    }

    pub fn linear(&self, id: ModuleId) -> &Arc<Linear> {
        &self.linears[&id]
    }
}
