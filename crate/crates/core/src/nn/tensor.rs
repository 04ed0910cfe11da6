use std::fmt;

use super::{Float, NnError};

/// Dense row-major tensor. Activations are laid out `(N, C, H, W)`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<Float>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<_> = self.data.iter().take(6).collect();
        write!(f, "Tensor{:?} {:?}{}", self.shape, preview, if self.data.len() > 6 { "…" } else { "" })
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<Float>) -> Result<Self, NnError> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: Float) -> Self {
        Self { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> Float) -> Self {
        let n = shape.iter().product();
        Self { shape: shape.to_vec(), data: (0..n).map(f).collect() }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[Float] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Float] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<Float> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// `(N, C, H, W)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize), NnError> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(NnError::ShapeMismatch(format!("expected rank-4 tensor, got {:?}", self.shape))),
        }
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize), NnError> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(NnError::ShapeMismatch(format!("expected rank-2 tensor, got {:?}", self.shape))),
        }
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self, NnError> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "cannot reshape {:?} to {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Float {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, Float::max)
    }

    pub(crate) fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Rows `start..start+len` along axis 0.
    pub fn slice_batch(&self, start: usize, len: usize) -> Tensor {
        let per: usize = self.shape[1..].iter().product();
        let mut shape = self.shape.clone();
        shape[0] = len;
        Tensor { shape, data: self.data[start * per..(start + len) * per].to_vec() }
    }

    /// Concatenates tensors along axis 0.
    pub fn stack(parts: &[Tensor]) -> Result<Tensor, NnError> {
        let first = parts.first().ok_or_else(|| NnError::ShapeMismatch("empty stack".into()))?;
        let tail = &first.shape[1..];
        let mut data = Vec::new();
        let mut n = 0;
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(NnError::ShapeMismatch(format!(
                    "cannot stack {:?} with {:?}",
                    p.shape, first.shape
                )));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = n;
        Ok(Tensor { shape, data })
    }
}
