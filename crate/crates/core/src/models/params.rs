use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{DenseMatrix, ParamSource};

/// Descriptor of one parameter array, as written to checkpoint headers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDescriptor {
    pub name: String,
    pub shape: Vec<usize>,
}

impl ParamDescriptor {
    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    value: DenseMatrix,
}

impl ParamEntry {
    pub fn weight(name: impl Into<String>, value: DenseMatrix) -> Self {
        Self {
            name: name.into(),
            shape: vec![value.rows(), value.cols()],
            value,
        }
    }

    pub fn bias(name: impl Into<String>, values: Vec<f64>) -> Self {
        let n = values.len();
        Self {
            name: name.into(),
            shape: vec![n],
            value: DenseMatrix::new(1, n, values).expect("row vector"),
        }
    }

    pub fn value(&self) -> &DenseMatrix {
        &self.value
    }

    pub fn values(&self) -> &[f64] {
        self.value.data()
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        self.value.data_mut()
    }

    pub fn size(&self) -> usize {
        self.value.len()
    }

    pub fn descriptor(&self) -> ParamDescriptor {
        ParamDescriptor {
            name: self.name.clone(),
            shape: self.shape.clone(),
        }
    }
}

/// Ordered, uniquely named parameter arrays of a model. Order is the
/// model's layer order with each weight followed by its bias, and is the
/// order used in checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    entries: Vec<ParamEntry>,
}

impl ModelParams {
    pub fn new(entries: Vec<ParamEntry>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for e in &entries {
            if !seen.insert(e.name.as_str()) {
                return Err(Error::InvalidConfig(format!("duplicate parameter name `{}`", e.name)));
            }
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut ParamEntry> {
        self.entries.iter_mut().find(|e| e.name == name)
    }

    /// Total number of scalars.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(ParamEntry::size).sum()
    }

    pub fn descriptors(&self) -> Vec<ParamDescriptor> {
        self.entries.iter().map(ParamEntry::descriptor).collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.scalar_count());
        for e in &self.entries {
            out.extend_from_slice(e.values());
        }
        out
    }

    /// Rebuilds parameters from descriptors and a flat value array.
    pub fn from_flat(descriptors: &[ParamDescriptor], values: &[f64]) -> Result<Self> {
        let total: usize = descriptors.iter().map(ParamDescriptor::size).sum();
        if total != values.len() {
            return Err(Error::Shape(format!(
                "descriptors describe {total} scalars, got {}",
                values.len()
            )));
        }
        let mut offset = 0;
        let mut entries = Vec::with_capacity(descriptors.len());
        for d in descriptors {
            let chunk = values[offset..offset + d.size()].to_vec();
            offset += d.size();
            let entry = match d.shape.as_slice() {
                [n] => ParamEntry::bias(d.name.clone(), {
                    debug_assert_eq!(*n, chunk.len());
                    chunk
                }),
                [r, c] => ParamEntry::weight(d.name.clone(), DenseMatrix::new(*r, *c, chunk)?),
                other => {
                    return Err(Error::Shape(format!(
                        "parameter `{}` has unsupported rank {}",
                        d.name,
                        other.len()
                    )))
                }
            };
            entries.push(entry);
        }
        Self::new(entries)
    }

    /// Rounds every value through `f32`, the checkpoint storage precision.
    pub fn quantize_f32(&mut self) {
        for e in &mut self.entries {
            for v in e.values_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    pub fn map_values(&mut self, mut f: impl FnMut(f64) -> f64) {
        for e in &mut self.entries {
            for v in e.values_mut() {
                *v = f(*v);
            }
        }
    }
}

impl ParamSource for ModelParams {
    fn param(&self, slot: usize) -> &DenseMatrix {
        &self.entries[slot].value
    }

    fn slot_count(&self) -> usize {
        self.entries.len()
    }
}
