//! Sinusoidal encodings for edge indices, edge paths and flat positions.
//!
//! An edge index is encoded as `d_idx / 2` sine/cosine pairs with frequencies
//! `w_i = 10000^(-2i / d_idx)`, `i = 0 .. d_idx/2`, filling dimensions `2i` and
//! `2i + 1`. A path encoding concatenates the blocks of its `L` indices, so a
//! child's encoding is its parent's shifted right by one block.

use thiserror::Error;

use crate::edge_paths::EdgePath;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodingError {
    #[error("d_idx must be even and positive, got {0}")]
    OddIndexWidth(usize),
    #[error("path length must be positive")]
    EmptyPath,
    #[error("edge path has {found} indices, expected {expected}")]
    PathLength { found: usize, expected: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingConfig {
    d_idx: usize,
    path_len: usize,
}

impl EncodingConfig {
    pub fn new(d_idx: usize, path_len: usize) -> Result<Self, EncodingError> {
        if d_idx == 0 || d_idx % 2 != 0 {
            return Err(EncodingError::OddIndexWidth(d_idx));
        }
        if path_len == 0 {
            return Err(EncodingError::EmptyPath);
        }
        Ok(EncodingConfig { d_idx, path_len })
    }

    pub fn d_idx(&self) -> usize {
        self.d_idx
    }

    pub fn path_len(&self) -> usize {
        self.path_len
    }

    pub fn d_model(&self) -> usize {
        self.d_idx * self.path_len
    }
}

/// Frequency of the `i`-th sine/cosine pair for a block of width `width`.
pub fn frequency(i: usize, width: usize) -> f64 {
    1.0 / 10000f64.powf((2 * i) as f64 / width as f64)
}

fn fill_block(position: f64, out: &mut [f64]) {
    let width = out.len();
    for i in 0..width / 2 {
        let angle = frequency(i, width) * position;
        out[2 * i] = angle.sin();
        out[2 * i + 1] = angle.cos();
    }
}

/// Encoding of one edge index; `d_idx` must be even.
pub fn encode_index(idx: u32, d_idx: usize) -> Vec<f64> {
    assert!(d_idx % 2 == 0, "d_idx must be even");
    let mut out = vec![0.0; d_idx];
    fill_block(f64::from(idx), &mut out);
    out
}

/// Concatenated block encodings of every index of `path`.
pub fn encode_path(path: &EdgePath, cfg: &EncodingConfig) -> Result<Vec<f64>, EncodingError> {
    let mut out = vec![0.0; cfg.d_model()];
    encode_path_into(path, cfg, &mut out)?;
    Ok(out)
}

pub fn encode_path_into(
    path: &EdgePath,
    cfg: &EncodingConfig,
    out: &mut [f64],
) -> Result<(), EncodingError> {
    if path.len() != cfg.path_len {
        return Err(EncodingError::PathLength {
            found: path.len(),
            expected: cfg.path_len,
        });
    }
    for (block, &idx) in out.chunks_exact_mut(cfg.d_idx).zip(path.indices()) {
        fill_block(f64::from(idx), block);
    }
    Ok(())
}

/// Standard flat-sequence sinusoidal encoding of width `d_model`.
pub fn sequential_encoding(pos: usize, d_model: usize) -> Vec<f64> {
    let mut out = vec![0.0; d_model];
    fill_block(pos as f64, &mut out);
    out
}

/// Row-major positional rows, one per token.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodingMatrix {
    pub width: usize,
    pub rows: Vec<f64>,
}

impl EncodingMatrix {
    pub fn zeros(n: usize, width: usize) -> Self {
        EncodingMatrix {
            width,
            rows: vec![0.0; n * width],
        }
    }

    pub fn from_paths(paths: &[EdgePath], cfg: &EncodingConfig) -> Result<Self, EncodingError> {
        let mut m = Self::zeros(paths.len(), cfg.d_model());
        for (row, p) in m.rows.chunks_exact_mut(cfg.d_model()).zip(paths) {
            encode_path_into(p, cfg, row)?;
        }
        Ok(m)
    }

    pub fn sequential(n: usize, d_model: usize) -> Self {
        let mut m = Self::zeros(n, d_model);
        for (pos, row) in m.rows.chunks_exact_mut(d_model).enumerate() {
            fill_block(pos as f64, row);
        }
        m
    }

    pub fn len(&self) -> usize {
        self.rows.len() / self.width.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.width..(i + 1) * self.width]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for i in 0..self.len() {
            let cells: Vec<String> = self.row(i).iter().map(|v| format!("{v:e}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }
}

/// Block-diagonal rotation taking the encoding of `idx` to that of `idx + k`.
#[derive(Debug, Clone, PartialEq)]
pub struct SiblingRotation {
    d_idx: usize,
    /// (cos, sin) of `w_i * k` per pair
    pairs: Vec<(f64, f64)>,
}

pub fn sibling_rotation(k: i64, d_idx: usize) -> SiblingRotation {
    assert!(d_idx % 2 == 0, "d_idx must be even");
    let pairs = (0..d_idx / 2)
        .map(|i| {
            let a = frequency(i, d_idx) * k as f64;
            (a.cos(), a.sin())
        })
        .collect();
    SiblingRotation { d_idx, pairs }
}

impl SiblingRotation {
    pub fn apply(&self, enc: &[f64]) -> Vec<f64> {
        assert_eq!(enc.len(), self.d_idx);
        let mut out = vec![0.0; self.d_idx];
        for (i, &(c, s)) in self.pairs.iter().enumerate() {
            let (sin_x, cos_x) = (enc[2 * i], enc[2 * i + 1]);
            out[2 * i] = c * sin_x + s * cos_x;
            out[2 * i + 1] = c * cos_x - s * sin_x;
        }
        out
    }

    /// Dense `d_idx x d_idx` row-major matrix of the same map.
    pub fn to_dense(&self) -> Vec<f64> {
        let d = self.d_idx;
        let mut m = vec![0.0; d * d];
        for (i, &(c, s)) in self.pairs.iter().enumerate() {
            let (r0, r1) = (2 * i, 2 * i + 1);
            m[r0 * d + r0] = c;
            m[r0 * d + r1] = s;
            m[r1 * d + r0] = -s;
            m[r1 * d + r1] = c;
        }
        m
    }
}
