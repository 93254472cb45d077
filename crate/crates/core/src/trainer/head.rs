use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{dot, l2_norm};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Identity,
    Tanh,
}

/// Trainable map from frozen base embeddings to the retrieval space, shared by
/// queries and candidates: `normalize(activation(W x + b))`.
///
/// Parameters live in one flat buffer, `W` row-major (`d_out × d_in`) followed by `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalHead {
    d_in: usize,
    d_out: usize,
    activation: Activation,
    params: Vec<f64>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Encoded {
    act: Vec<f64>,
    norm: f64,
    pub unit: Vec<f64>,
}

impl RetrievalHead {
    pub fn new(d_in: usize, d_out: usize, activation: Activation, params: Vec<f64>) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::invalid("head dimensions must be positive"));
        }
        let expected = d_out * d_in + d_out;
        if params.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                actual: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("head parameters must be finite"));
        }
        Ok(RetrievalHead {
            d_in,
            d_out,
            activation,
            params,
        })
    }

    /// `W` with ones on the main diagonal, zero bias.
    pub fn identity(d_in: usize, d_out: usize, activation: Activation) -> Result<Self> {
        let mut params = vec![0.0; d_out * d_in + d_out];
        for i in 0..d_in.min(d_out) {
            params[i * d_in + i] = 1.0;
        }
        Self::new(d_in, d_out, activation, params)
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn weight(&self) -> &[f64] {
        &self.params[..self.d_out * self.d_in]
    }

    pub fn bias(&self) -> &[f64] {
        &self.params[self.d_out * self.d_in..]
    }

    pub fn forward(&self, base: &[f64]) -> Result<Encoded> {
        if base.len() != self.d_in {
            return Err(Error::DimensionMismatch {
                expected: self.d_in,
                actual: base.len(),
            });
        }
        let (w, b) = self.params.split_at(self.d_out * self.d_in);
        let act: Vec<f64> = w
            .chunks_exact(self.d_in)
            .zip(b)
            .map(|(row, bias)| {
                let z = dot(row, base) + bias;
                match self.activation {
                    Activation::Identity => z,
                    Activation::Tanh => z.tanh(),
                }
            })
            .collect();
        let norm = l2_norm(&act);
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::DegenerateEmbedding("encoded vector has zero norm".into()));
        }
        let unit = act.iter().map(|a| a / norm).collect();
        Ok(Encoded { act, norm, unit })
    }

    pub fn encode(&self, base: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(base)?.unit)
    }

    /// Accumulates `∂L/∂params` into `grads` given `∂L/∂unit` for one encoded input.
    pub fn backward(&self, base: &[f64], enc: &Encoded, grad_unit: &[f64], grads: &mut [f64]) {
        // Through the normalization: (g - u (u·g)) / ‖a‖.
        let proj = dot(&enc.unit, grad_unit);
        let (gw, gb) = grads.split_at_mut(self.d_out * self.d_in);
        for i in 0..self.d_out {
            let mut g = (grad_unit[i] - enc.unit[i] * proj) / enc.norm;
            if self.activation == Activation::Tanh {
                g *= 1.0 - enc.act[i] * enc.act[i];
            }
            if g == 0.0 {
                continue;
            }
            gb[i] += g;
            for (gwij, x) in gw[i * self.d_in..(i + 1) * self.d_in].iter_mut().zip(base) {
                *gwij += g * x;
            }
        }
    }
}

/// Fields of the checkpoint header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadMeta {
    pub d_in: usize,
    pub d_out: usize,
    pub activation: Activation,
    #[serde(rename = "τ", alias = "tau")]
    pub tau: f64,
    pub seed: u64,
    pub epoch: usize,
}

/// Writes `u32 header_len | JSON header | u64 param_count | f64 params`, all little-endian.
pub fn save_head(head: &RetrievalHead, meta: &HeadMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let io_err = |e| Error::io(path, e);
    if meta.d_in != head.d_in || meta.d_out != head.d_out || meta.activation != head.activation {
        return Err(Error::invalid("checkpoint header disagrees with head shape"));
    }
    let header = serde_json::to_vec(meta).map_err(|e| Error::invalid(e.to_string()))?;
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    let mut write = || -> std::io::Result<()> {
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        out.write_all(&(head.params.len() as u64).to_le_bytes())?;
        for p in &head.params {
            out.write_all(&p.to_le_bytes())?;
        }
        out.flush()
    };
    write().map_err(io_err)
}

pub fn load_head(path: impl AsRef<Path>) -> Result<(RetrievalHead, HeadMeta)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    let truncated = |what: &str| Error::Truncated {
        path: path.to_path_buf(),
        message: format!("head checkpoint ends inside {what}"),
    };
    let header_len = bytes
        .get(..4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
        .ok_or_else(|| truncated("header length"))?;
    let header = bytes.get(4..4 + header_len).ok_or_else(|| truncated("header"))?;
    let meta: HeadMeta = serde_json::from_slice(header)
        .map_err(|e| Error::invalid(format!("{}: bad head header: {e}", path.display())))?;
    let mut pos = 4 + header_len;
    let count = bytes
        .get(pos..pos + 8)
        .map(|b| u64::from_le_bytes(b.try_into().unwrap()) as usize)
        .ok_or_else(|| truncated("parameter count"))?;
    pos += 8;
    let payload = count
        .checked_mul(8)
        .and_then(|n| bytes.get(pos..pos + n))
        .ok_or_else(|| truncated("parameters"))?;
    if pos + payload.len() != bytes.len() {
        return Err(Error::invalid(format!("{}: trailing bytes after parameters", path.display())));
    }
    let params = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let head = RetrievalHead::new(meta.d_in, meta.d_out, meta.activation, params)?;
    Ok((head, meta))
}
