use serde::{Deserialize, Serialize};

use super::NetError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub dims: Vec<usize>,
}

impl ParamShape {
    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }
}

/// Flat parameter store with a same-length gradient buffer. `shapes`
/// partitions `values` in order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    pub values: Vec<f64>,
    pub grads: Vec<f64>,
    shapes: Vec<ParamShape>,
    offsets: Vec<usize>,
}

impl ParamVector {
    pub fn zeros(shapes: Vec<ParamShape>) -> Self {
        let mut offsets = Vec::with_capacity(shapes.len());
        let mut total = 0;
        for s in &shapes {
            offsets.push(total);
            total += s.numel();
        }
        ParamVector { values: vec![0.0; total], grads: vec![0.0; total], shapes, offsets }
    }

    pub fn from_values(shapes: Vec<ParamShape>, values: Vec<f64>) -> Result<Self, NetError> {
        let mut p = Self::zeros(shapes);
        if p.values.len() != values.len() {
            return Err(NetError::DimMismatch { what: "parameter count", expected: p.values.len(), got: values.len() });
        }
        p.values = values;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn shapes(&self) -> &[ParamShape] {
        &self.shapes
    }

    /// Offset and shape of the named block.
    pub fn lookup(&self, name: &str) -> Option<(usize, &ParamShape)> {
        self.shapes.iter().position(|s| s.name == name).map(|i| (self.offsets[i], &self.shapes[i]))
    }

    pub fn offset(&self, name: &str) -> usize {
        self.lookup(name).unwrap_or_else(|| panic!("no parameter block '{name}'")).0
    }

    pub fn block(&self, name: &str) -> &[f64] {
        let (o, s) = self.lookup(name).unwrap_or_else(|| panic!("no parameter block '{name}'"));
        &self.values[o..o + s.numel()]
    }

    pub fn block_mut(&mut self, name: &str) -> &mut [f64] {
        let (o, n) = {
            let (o, s) = self.lookup(name).unwrap_or_else(|| panic!("no parameter block '{name}'"));
            (o, s.numel())
        };
        &mut self.values[o..o + n]
    }

    pub fn zero_grads(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = 0.0);
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
