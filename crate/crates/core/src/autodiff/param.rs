use super::{Real, Tensor};

/// A named trainable tensor and its most recent gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Real = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        Self {
            name: name.into(),
            value,
            grad: None,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }
}
