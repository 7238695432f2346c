use serde::{Deserialize, Serialize};

use crate::error::{KernelError, Result};
use crate::tensor::Tensor;

/// Ordered, named collection of trainable tensors.
///
/// Layers hold indices into a `ParamSet`, so cloning the set is all it takes
/// to snapshot a network (the target network is exactly that).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: usize) -> &Tensor {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.tensors[id]
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn zero_all(&mut self) {
        for t in &mut self.tensors {
            t.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }

    /// Overwrites values in place, keeping names. Shapes must agree.
    pub fn copy_from(&mut self, other: &ParamSet) -> Result<()> {
        if self.len() != other.len() {
            return Err(KernelError::ShapeMismatch {
                op: "copy_from",
                left: vec![self.len()],
                right: vec![other.len()],
            });
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(KernelError::ShapeMismatch {
                    op: "copy_from",
                    left: a.shape().to_vec(),
                    right: b.shape().to_vec(),
                });
            }
            a.data_mut().copy_from_slice(b.data());
        }
        Ok(())
    }
}
