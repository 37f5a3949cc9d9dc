//! Dense row-major `f64` tensors and the RTEN on-disk format.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Magic bytes opening every RTEN file.
pub const RTEN_MAGIC: &[u8; 4] = b"RTEN";

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &preview)
            .finish()
    }
}

pub fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape("tensor", format!("zero extent in {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {} values, got {}", numel(&shape), data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel(shape)],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn from_vec(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn randn(shape: &[usize], rng: Rng) -> Self {
        let mut s = rng.stream();
        Tensor {
            shape: shape.to_vec(),
            data: s.normals(numel(shape)),
        }
    }

    pub fn rand_uniform(shape: &[usize], lo: f64, hi: f64, rng: Rng) -> Self {
        let mut s = rng.stream();
        Tensor {
            shape: shape.to_vec(),
            data: (0..numel(shape)).map(|_| s.uniform(lo, hi)).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if numel(shape) != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        dims4(&self.shape, "dims4")
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Rows `[start, start+len)` along the leading axis.
    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Tensor> {
        let n = *self.shape.first().ok_or_else(|| Error::shape("slice_batch", "rank 0"))?;
        if start + len > n || len == 0 {
            return Err(Error::shape(
                "slice_batch",
                format!("rows {start}..{} of {n}", start + len),
            ));
        }
        let row = self.data.len() / n;
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Tensor {
            shape,
            data: self.data[start * row..(start + len) * row].to_vec(),
        })
    }

    /// Concatenates tensors along the leading axis.
    pub fn stack(items: &[&Tensor]) -> Result<Tensor> {
        let first = items.first().ok_or_else(|| Error::shape("stack", "no tensors"))?;
        let inner = &first.shape;
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            if &t.shape != inner {
                return Err(Error::shape(
                    "stack",
                    format!("{:?} vs {:?}", t.shape, inner),
                ));
            }
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend_from_slice(inner);
        Tensor::new(shape, data)
    }

    /// Rounds every value through `f32`, the precision of the file formats.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = f64::from(*v as f32);
        }
    }

    pub fn to_rten_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(RTEN_MAGIC);
        out.extend_from_slice(&(self.shape.len() as u32).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_rten_bytes(bytes: &[u8], origin: &str) -> Result<Tensor> {
        let bad = |detail: &str| Error::format(origin, detail.to_string());
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let chunk = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(chunk)
        };
        if take(4)? != RTEN_MAGIC {
            return Err(bad("bad magic"));
        }
        let read_u32 = |b: &[u8]| u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        let rank = read_u32(take(4)?) as usize;
        if rank > 16 {
            return Err(bad("implausible rank"));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(take(4)?) as usize);
        }
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| bad("size overflow"))?;
        let payload = take(count.checked_mul(4).ok_or_else(|| bad("size overflow"))?)?;
        let data = payload
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
            .collect();
        if pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Tensor::new(shape, data).map_err(|e| bad(&e.to_string()))
    }

    pub fn save_rten(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_rten_bytes())
    }

    pub fn load_rten(path: &Path) -> Result<Tensor> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Tensor::from_rten_bytes(&bytes, &path.display().to_string())
    }
}

pub(crate) fn dims4(shape: &[usize], op: &'static str) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::shape(op, format!("expected rank 4, got {shape:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
    }

    #[test]
    fn rten_layout_is_bit_exact() {
        let t = Tensor::new(vec![2, 1], vec![1.0, -2.5]).unwrap();
        let b = t.to_rten_bytes();
        let mut expected = b"RTEN".to_vec();
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&1.0f32.to_le_bytes());
        expected.extend_from_slice(&(-2.5f32).to_le_bytes());
        assert_eq!(b, expected);
    }

    #[test]
    fn rten_rejects_malformed() {
        assert!(Tensor::from_rten_bytes(b"RTE", "x").is_err());
        assert!(Tensor::from_rten_bytes(b"NOPE\0\0\0\0", "x").is_err());
        let mut b = Tensor::zeros(&[3]).to_rten_bytes();
        b.pop();
        assert!(Tensor::from_rten_bytes(&b, "x").is_err());
        let mut b = Tensor::zeros(&[3]).to_rten_bytes();
        b.push(0);
        assert!(Tensor::from_rten_bytes(&b, "x").is_err());
    }

    proptest! {
        #[test]
        fn rten_round_trip_exact_for_f32_values(
            dims in proptest::collection::vec(1usize..4, 0..4),
            seed in any::<u64>(),
        ) {
            let mut t = Tensor::randn(&dims, Rng::new(seed));
            t.round_to_f32();
            let back = Tensor::from_rten_bytes(&t.to_rten_bytes(), "mem").unwrap();
            prop_assert_eq!(back, t);
        }
    }
}
