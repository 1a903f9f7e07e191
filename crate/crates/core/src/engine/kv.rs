//! Per-layer key/value cache and causal attention over it.

use super::kernels::Mat;
use super::EngineError;

/// `[batch, heads, len, head_dim]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensor {
    pub batch: usize,
    pub heads: usize,
    pub len: usize,
    pub head_dim: usize,
    pub data: Vec<f32>,
}

impl HeadTensor {
    pub fn zeros(batch: usize, heads: usize, len: usize, head_dim: usize) -> Self {
        Self {
            batch,
            heads,
            len,
            head_dim,
            data: vec![0.0; batch * heads * len * head_dim],
        }
    }

    fn offset(&self, b: usize, h: usize, t: usize) -> usize {
        ((b * self.heads + h) * self.len + t) * self.head_dim
    }

    pub fn at(&self, b: usize, h: usize, t: usize) -> &[f32] {
        let o = self.offset(b, h, t);
        &self.data[o..o + self.head_dim]
    }

    pub fn at_mut(&mut self, b: usize, h: usize, t: usize) -> &mut [f32] {
        let o = self.offset(b, h, t);
        &mut self.data[o..o + self.head_dim]
    }

    /// Splits a `[batch * len, heads * head_dim]` activation into heads.
    pub fn from_mat(m: &Mat, batch: usize, heads: usize) -> Self {
        let len = m.rows / batch;
        let head_dim = m.cols / heads;
        let mut t = Self::zeros(batch, heads, len, head_dim);
        for b in 0..batch {
            for s in 0..len {
                let row = m.row(b * len + s);
                for h in 0..heads {
                    t.at_mut(b, h, s).copy_from_slice(&row[h * head_dim..(h + 1) * head_dim]);
                }
            }
        }
        t
    }

    pub fn to_mat(&self) -> Mat {
        let mut m = Mat::zeros(self.batch * self.len, self.heads * self.head_dim);
        for b in 0..self.batch {
            for s in 0..self.len {
                let row = m.row_mut(b * self.len + s);
                for h in 0..self.heads {
                    row[h * self.head_dim..(h + 1) * self.head_dim].copy_from_slice(self.at(b, h, s));
                }
            }
        }
        m
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
struct LayerKv {
    seq: usize,
    /// One buffer per `(batch, head)`, growing along the sequence.
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KvCache {
    pub batch: usize,
    pub heads: usize,
    pub head_dim: usize,
    layers: Vec<LayerKv>,
}

impl KvCache {
    pub fn new(layers: usize, batch: usize, heads: usize, head_dim: usize) -> Self {
        let empty = LayerKv {
            seq: 0,
            keys: vec![Vec::new(); batch * heads],
            values: vec![Vec::new(); batch * heads],
        };
        Self {
            batch,
            heads,
            head_dim,
            layers: vec![empty; layers],
        }
    }

    pub fn seq_len(&self, layer: usize) -> usize {
        self.layers[layer].seq
    }

    pub fn bytes(&self) -> u64 {
        self.layers
            .iter()
            .map(|l| l.keys.iter().chain(&l.values).map(|v| v.len() as u64 * 4).sum::<u64>())
            .sum()
    }

    fn key(&self, layer: usize, b: usize, h: usize, t: usize) -> &[f32] {
        let d = self.head_dim;
        &self.layers[layer].keys[b * self.heads + h][t * d..(t + 1) * d]
    }

    fn value(&self, layer: usize, b: usize, h: usize, t: usize) -> &[f32] {
        let d = self.head_dim;
        &self.layers[layer].values[b * self.heads + h][t * d..(t + 1) * d]
    }
}

/// Appends new keys and values along the sequence axis.
pub fn kv_cache_append(
    cache: &mut KvCache,
    layer: usize,
    k_new: &HeadTensor,
    v_new: &HeadTensor,
) -> Result<(), EngineError> {
    if layer >= cache.layers.len() {
        return Err(EngineError::Shape(format!(
            "layer {layer} out of range for {} cached layers",
            cache.layers.len()
        )));
    }
    for (name, t) in [("keys", k_new), ("values", v_new)] {
        if (t.batch, t.heads, t.head_dim) != (cache.batch, cache.heads, cache.head_dim) {
            return Err(EngineError::Shape(format!(
                "{name} shaped [{}, {}, {}, {}], cache expects [{}, {}, _, {}]",
                t.batch, t.heads, t.len, t.head_dim, cache.batch, cache.heads, cache.head_dim
            )));
        }
    }
    if k_new.len != v_new.len || k_new.len == 0 {
        return Err(EngineError::Shape(format!(
            "keys and values must add the same non-zero length, got {} and {}",
            k_new.len, v_new.len
        )));
    }
    let heads = cache.heads;
    let l = &mut cache.layers[layer];
    for b in 0..k_new.batch {
        for h in 0..heads {
            for t in 0..k_new.len {
                l.keys[b * heads + h].extend_from_slice(k_new.at(b, h, t));
                l.values[b * heads + h].extend_from_slice(v_new.at(b, h, t));
            }
        }
    }
    l.seq += k_new.len;
    Ok(())
}

/// Causal attention of `q` against the cached sequence. The queries are the
/// last `q.len` cached positions.
pub fn attend(cache: &KvCache, layer: usize, q: &HeadTensor) -> HeadTensor {
    let seq = cache.seq_len(layer);
    assert!(q.len <= seq, "queries beyond the cached sequence");
    let first = seq - q.len;
    let scale = 1.0 / (q.head_dim as f32).sqrt();
    let mut out = HeadTensor::zeros(q.batch, q.heads, q.len, q.head_dim);
    let mut scores = Vec::with_capacity(seq);
    for b in 0..q.batch {
        for h in 0..q.heads {
            for t in 0..q.len {
                let qv = q.at(b, h, t);
                let visible = first + t + 1;
                scores.clear();
                scores.extend((0..visible).map(|s| {
                    cache.key(layer, b, h, s).iter().zip(qv).map(|(k, q)| k * q).sum::<f32>() * scale
                }));
                let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                scores.iter_mut().for_each(|s| *s = (*s - max).exp());
                let norm: f32 = scores.iter().sum();
                let o = out.at_mut(b, h, t);
                for (s, w) in scores.iter().enumerate() {
                    for (ov, vv) in o.iter_mut().zip(cache.value(layer, b, h, s)) {
                        *ov += w / norm * vv;
                    }
                }
            }
        }
    }
    out
}
