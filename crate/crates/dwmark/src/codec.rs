//! Binary watermark codec: bits <-> positional embedding indices <-> decoder
//! logits, plus bit-error measurement.
//!
//! Position i of an L-bit watermark maps to index `i + bit*L`, so the 2L
//! index values jointly encode position and bit. The decoder emits one row of
//! 2L class scores per position; extraction compares the two classes that are
//! valid for that position ({i, i+L}), which always yields a legal bit.

use rand::Rng;

use crate::error::{Error, Result};

/// Fixed-length binary message carried inside an image.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct WatermarkBits {
    bits: Vec<u8>,
}

impl WatermarkBits {
    pub fn new(bits: Vec<u8>) -> Result<Self> {
        if bits.is_empty() {
            return Err(Error::InvalidWatermark("empty watermark".into()));
        }
        if let Some(&b) = bits.iter().find(|&&b| b > 1) {
            return Err(Error::InvalidWatermark(format!("bit value {b} not in {{0,1}}")));
        }
        Ok(WatermarkBits { bits })
    }

    /// Parse a '0'/'1' string, e.g. "0110".
    pub fn parse(s: &str) -> Result<Self> {
        let bits = s
            .chars()
            .map(|c| match c {
                '0' => Ok(0u8),
                '1' => Ok(1u8),
                other => Err(Error::InvalidWatermark(format!(
                    "character {other:?} is not '0' or '1'"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bits)
    }

    /// Seeded random watermark of length `len`.
    pub fn random(len: usize, rng: &mut impl Rng) -> Result<Self> {
        if len == 0 {
            return Err(Error::InvalidWatermark("empty watermark".into()));
        }
        Ok(WatermarkBits {
            bits: (0..len).map(|_| rng.gen_range(0..=1u8)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }
}

impl std::fmt::Display for WatermarkBits {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for &b in &self.bits {
            write!(f, "{b}")?;
        }
        Ok(())
    }
}

/// Positional embedding indices: indices[i] in {i, i+L}.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingIndices {
    indices: Vec<usize>,
}

impl EmbeddingIndices {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

/// Map each bit to its positional index: indices[i] = i + bits[i]*L.
pub fn encode_indices(w: &WatermarkBits) -> EmbeddingIndices {
    let l = w.len();
    EmbeddingIndices {
        indices: w
            .bits()
            .iter()
            .enumerate()
            .map(|(i, &b)| i + (b as usize) * l)
            .collect(),
    }
}

/// Exact inverse of [`encode_indices`]: bits[i] = (indices[i] - i) / L.
pub fn decode_bits(e: &EmbeddingIndices) -> Result<WatermarkBits> {
    let l = e.len();
    let bits = e
        .indices()
        .iter()
        .enumerate()
        .map(|(i, &idx)| {
            if idx == i {
                Ok(0u8)
            } else if idx == i + l {
                Ok(1u8)
            } else {
                Err(Error::InvalidWatermark(format!(
                    "index {idx} at position {i} is not in {{{i}, {}}}",
                    i + l
                )))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    WatermarkBits::new(bits)
}

/// Unnormalized class scores, L rows by 2L columns.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderLogits {
    rows: usize,
    data: Vec<f64>, // row-major, rows x 2*rows
}

impl DecoderLogits {
    pub fn new(rows: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || data.len() != rows * 2 * rows {
            return Err(Error::ShapeMismatch(format!(
                "logits need {rows}x{} values, got {}",
                2 * rows,
                data.len()
            )));
        }
        Ok(DecoderLogits { rows, data })
    }

    /// Watermark length L.
    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * 2 * self.rows..(i + 1) * 2 * self.rows]
    }

    /// From a (L, 2L) tensor, any float dtype.
    pub fn from_tensor(t: &candle_core::Tensor) -> Result<Self> {
        let (rows, cols) = t.dims2()?;
        if cols != 2 * rows {
            return Err(Error::ShapeMismatch(format!(
                "logits tensor {rows}x{cols}, want {rows}x{}",
                2 * rows
            )));
        }
        let data = t
            .to_dtype(candle_core::DType::F64)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        Self::new(rows, data)
    }

    /// Per-position probability of the decoded bit under the restricted
    /// two-class softmax over {i, i+L}.
    pub fn pair_confidence(&self, i: usize) -> f64 {
        let l = self.rows;
        let row = self.row(i);
        let (z0, z1) = (row[i], row[i + l]);
        let m = z0.max(z1);
        let p0 = (z0 - m).exp();
        let p1 = (z1 - m).exp();
        if z0 >= z1 {
            p0 / (p0 + p1)
        } else {
            p1 / (p0 + p1)
        }
    }
}

/// Decode by comparing each position's two valid classes; ties decode to 0.
pub fn logits_to_bits(logits: &DecoderLogits) -> Result<WatermarkBits> {
    let l = logits.len();
    let mut bits = Vec::with_capacity(l);
    for i in 0..l {
        let row = logits.row(i);
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("decoder logits at ({i}, {j})")));
        }
        let (z0, z1) = (row[i], row[i + l]);
        bits.push(if z0 >= z1 { 0u8 } else { 1u8 });
    }
    WatermarkBits::new(bits)
}

/// Bit error rate in percent: (1/L) sum 1(w_hat_i != w_i) * 100.
pub fn ber(w_hat: &WatermarkBits, w: &WatermarkBits) -> Result<f64> {
    if w_hat.len() != w.len() {
        return Err(Error::InvalidWatermark(format!(
            "length mismatch {} vs {}",
            w_hat.len(),
            w.len()
        )));
    }
    let wrong = w_hat
        .bits()
        .iter()
        .zip(w.bits())
        .filter(|(a, b)| a != b)
        .count();
    Ok(wrong as f64 / w.len() as f64 * 100.0)
}
