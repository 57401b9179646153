use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSlot {
    pub name: String,
    pub offset: usize,
    pub shape: Vec<usize>,
}

impl TensorSlot {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

/// Flat parameter storage with a registry of named tensors laid out
/// back to back.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<TensorSlot>,
}

impl ParamVector {
    pub fn zeros(shapes: &[(&str, Vec<usize>)]) -> Self {
        let mut layout = Vec::with_capacity(shapes.len());
        let mut offset = 0;
        for (name, shape) in shapes {
            let slot = TensorSlot {
                name: name.to_string(),
                offset,
                shape: shape.clone(),
            };
            offset += slot.numel();
            layout.push(slot);
        }
        ParamVector {
            values: vec![0.0; offset],
            layout,
        }
    }

    pub fn zeros_like(&self) -> Self {
        ParamVector {
            values: vec![0.0; self.values.len()],
            layout: self.layout.clone(),
        }
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::ShapeMismatch {
                expected: self.values.len(),
                actual: values.len(),
            });
        }
        Ok(ParamVector {
            values,
            layout: self.layout.clone(),
        })
    }

    /// Checks that the registry tiles the value vector exactly.
    pub fn validate(&self) -> Result<()> {
        let mut offset = 0;
        for slot in &self.layout {
            if slot.offset != offset {
                return Err(Error::InvalidArgument(format!(
                    "tensor `{}` misplaced in parameter layout",
                    slot.name
                )));
            }
            offset += slot.numel();
        }
        if offset != self.values.len() {
            return Err(Error::ShapeMismatch {
                expected: offset,
                actual: self.values.len(),
            });
        }
        if let Some(index) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite parameter at {index}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn layout(&self) -> &[TensorSlot] {
        &self.layout
    }

    pub fn slot(&self, name: &str) -> Option<&TensorSlot> {
        self.layout.iter().find(|s| s.name == name)
    }

    pub fn tensor(&self, name: &str) -> &[f64] {
        let slot = self.slot(name).unwrap_or_else(|| panic!("no tensor `{name}`"));
        &self.values[slot.range()]
    }

    pub fn tensor_mut(&mut self, name: &str) -> &mut [f64] {
        let range = self
            .slot(name)
            .unwrap_or_else(|| panic!("no tensor `{name}`"))
            .range();
        &mut self.values[range]
    }
}
