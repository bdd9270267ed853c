use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid_arg, shape_err, Result};

/// One affine layer in the flat parameter vector: a row-major
/// `fan_out × fan_in` weight followed by a `fan_out` bias.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LayerEntry {
    pub name: String,
    pub offset: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerEntry {
    pub fn len(&self) -> usize {
        self.fan_out * (self.fan_in + 1)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weight_len(&self) -> usize {
        self.fan_out * self.fan_in
    }

    pub fn range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }

    pub fn weight_range(&self) -> core::ops::Range<usize> {
        self.offset..self.offset + self.weight_len()
    }

    pub fn bias_range(&self) -> core::ops::Range<usize> {
        self.offset + self.weight_len()..self.offset + self.len()
    }
}

/// Flat `f64` parameter store with its layer table. The last entry is the
/// output head.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayerEntry>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<LayerEntry>) -> Result<Self> {
        validate_layout(&layout, values.len())?;
        Ok(Self { values, layout })
    }

    pub fn zeros(layout: Vec<LayerEntry>) -> Result<Self> {
        let p = layout.iter().map(LayerEntry::len).sum();
        Self::new(alloc::vec![0.0; p], layout)
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

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[LayerEntry] {
        &self.layout
    }

    pub fn entry(&self, name: &str) -> Option<&LayerEntry> {
        self.layout.iter().find(|e| e.name == name)
    }

    pub fn head(&self) -> &LayerEntry {
        self.layout.last().expect("validated layout is nonempty")
    }

    /// Same layout, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(shape_err!("{} values for a {}-parameter layout", values.len(), self.len()));
        }
        Ok(Self { values, layout: self.layout.clone() })
    }

    pub fn same_layout(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }
}

fn validate_layout(layout: &[LayerEntry], p: usize) -> Result<()> {
    if layout.is_empty() {
        return Err(invalid_arg!("parameter layout is empty"));
    }
    let mut next = 0;
    for e in layout {
        if e.offset != next {
            return Err(invalid_arg!("layer {} starts at {} but previous layer ends at {}", e.name, e.offset, next));
        }
        if e.is_empty() {
            return Err(invalid_arg!("layer {} is empty", e.name));
        }
        next += e.len();
    }
    if next != p {
        return Err(shape_err!("layout covers {next} parameters but {p} values were given"));
    }
    Ok(())
}
