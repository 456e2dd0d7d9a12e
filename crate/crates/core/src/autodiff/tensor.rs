use super::Real;
use crate::error::{Error, Result};

/// Dense row-major N-dimensional array.
///
/// Image-like tensors use the N×C×H×W convention.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::ZERO)
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(N, C, H, W)` for a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match self.shape[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::shape(
                op,
                format!("expected N×C×H×W, got {:?}", self.shape),
            )),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts element type (used to run f32 models in f64 for gradient checks).
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Copies channels `[start, end)` of an N×C×H×W tensor.
    pub fn channels(&self, start: usize, end: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4("channels")?;
        if start > end || end > c {
            return Err(Error::shape(
                "channels",
                format!("range {start}..{end} out of {c} channels"),
            ));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (end - start) * plane);
        for b in 0..n {
            let off = b * c * plane;
            data.extend_from_slice(&self.data[off + start * plane..off + end * plane]);
        }
        Ok(Self {
            shape: vec![n, end - start, h, w],
            data,
        })
    }

    /// Stacks rank-4 tensors with batch size 1 along the batch axis.
    pub fn stack_batch(items: &[&Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (_, c, h, w) = first.dims4("stack_batch")?;
        let mut data = Vec::with_capacity(items.len() * c * h * w);
        for t in items {
            let (n, c2, h2, w2) = t.dims4("stack_batch")?;
            if (n, c2, h2, w2) != (1, c, h, w) {
                return Err(Error::shape(
                    "stack_batch",
                    format!("expected 1×{c}×{h}×{w}, got {:?}", t.shape),
                ));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Self {
            shape: vec![items.len(), c, h, w],
            data,
        })
    }
}
