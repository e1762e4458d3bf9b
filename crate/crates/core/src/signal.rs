//! Per-vertex signals and the binary `.vsig` container.
//!
//! A `.vsig` file is a 16-byte magic, then `n` and `c` as little-endian
//! `u64`, then `n * c` little-endian `f64` values in row-major order.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

pub const VSIG_MAGIC: &[u8; 16] = b"VERTEX-SIGNAL-V1";

/// An `n x c` matrix of per-vertex values, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexSignal {
    n: usize,
    c: usize,
    values: Vec<f64>,
}

impl VertexSignal {
    pub fn new(n: usize, c: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * c {
            return Err(Error::MismatchedDimensions(format!(
                "signal {n}x{c} needs {} values, got {}",
                n * c,
                values.len()
            )));
        }
        Ok(Self { n, c, values })
    }

    pub fn zeros(n: usize, c: usize) -> Self {
        Self {
            n,
            c,
            values: vec![0.0; n * c],
        }
    }

    pub fn constant(n: usize, value: &[f64]) -> Self {
        let c = value.len();
        let mut values = Vec::with_capacity(n * c);
        for _ in 0..n {
            values.extend_from_slice(value);
        }
        Self { n, c, values }
    }

    pub fn from_rows(rows: &[[f64; 3]]) -> Self {
        Self {
            n: rows.len(),
            c: 3,
            values: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_fn(n: usize, c: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n * c);
        for i in 0..n {
            for ch in 0..c {
                values.push(f(i, ch));
            }
        }
        Self { n, c, values }
    }

    /// Inverse of [`Self::to_channel_major`]: all of channel 0, then 1, ...
    pub fn from_channel_major(n: usize, c: usize, vec: &[f64]) -> Result<Self> {
        if vec.len() != n * c {
            return Err(Error::MismatchedDimensions(format!(
                "channel-major vector of length {} for {n}x{c}",
                vec.len()
            )));
        }
        Ok(Self::from_fn(n, c, |i, ch| vec[ch * n + i]))
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn channels(&self) -> usize {
        self.c
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, i: usize, ch: usize) -> f64 {
        self.values[i * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, i: usize, ch: usize, v: f64) {
        self.values[i * self.c + ch] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.c..(i + 1) * self.c]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i * self.c..(i + 1) * self.c]
    }

    pub fn column(&self, ch: usize) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, ch)).collect()
    }

    pub fn set_column(&mut self, ch: usize, col: &[f64]) {
        for (i, &v) in col.iter().enumerate() {
            self.set(i, ch, v);
        }
    }

    /// Channel-major vectorisation (all of channel 0, then channel 1, ...).
    pub fn to_channel_major(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.values.len());
        for ch in 0..self.c {
            out.extend((0..self.n).map(|i| self.get(i, ch)));
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            n: self.n,
            c: self.c,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        assert_eq!((self.n, self.c), (other.n, other.c));
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::with_capacity(32 + 8 * self.values.len());
        self.write_to(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn write_to(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(VSIG_MAGIC)?;
        w.write_all(&(self.n as u64).to_le_bytes())?;
        w.write_all(&(self.c as u64).to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            Error::Format(msg) => Error::parse(path, msg),
            other => other,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 32 || &bytes[..16] != VSIG_MAGIC {
            return Err(Error::Format("missing vertex-signal magic".into()));
        }
        let n = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
        let c = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
        let body = &bytes[32..];
        if n.checked_mul(c).and_then(|k| k.checked_mul(8)) != Some(body.len()) {
            return Err(Error::Format(format!(
                "header declares {n}x{c} but payload has {} bytes",
                body.len()
            )));
        }
        let values = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        Ok(Self { n, c, values })
    }
}

/// Permutes rows through the mesh's symmetry map: output row `i` is input
/// row `mirror(i)`. Channels are never swapped.
pub fn reflect_signal(signal: &VertexSignal, mesh: &TriangleMesh) -> Result<VertexSignal> {
    let map = mesh.symmetry().ok_or(Error::MissingSymmetryMap)?;
    reflect_with(signal, map.as_slice())
}

pub(crate) fn reflect_with(signal: &VertexSignal, map: &[usize]) -> Result<VertexSignal> {
    if map.len() != signal.n() {
        return Err(Error::MismatchedDimensions(format!(
            "symmetry map has {} entries, signal has {} rows",
            map.len(),
            signal.n()
        )));
    }
    let c = signal.channels();
    let mut values = Vec::with_capacity(signal.values.len());
    for &j in map {
        values.extend_from_slice(signal.row(j));
    }
    VertexSignal::new(signal.n(), c, values)
}
