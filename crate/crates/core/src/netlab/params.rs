//! Flat parameter vectors with a named-segment layout.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Maps layer names to disjoint `(offset, len)` segments of a flat vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    segments: Vec<Segment>,
    total: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub layer: String,
    pub offset: usize,
    pub len: usize,
}

impl Layout {
    /// Build a layout from `(name, len)` pairs laid out back to back.
    pub fn from_lens(lens: &[(String, usize)]) -> Result<Self> {
        let mut segments = Vec::with_capacity(lens.len());
        let mut seen = HashMap::new();
        let mut offset = 0;
        for (name, len) in lens {
            if seen.insert(name.clone(), ()).is_some() {
                return Err(Error::InvalidConfig(format!(
                    "duplicate layer name `{name}` in layout"
                )));
            }
            segments.push(Segment {
                layer: name.clone(),
                offset,
                len: *len,
            });
            offset += len;
        }
        Ok(Layout {
            segments,
            total: offset,
        })
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, layer: &str) -> Result<&Segment> {
        self.segments
            .iter()
            .find(|s| s.layer == layer)
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))
    }
}

/// A flat parameter vector plus the layout that names its segments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Layout,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Layout) -> Result<Self> {
        if values.len() != layout.total_len() {
            return Err(Error::shape(
                "ParamVector::new",
                layout.total_len(),
                values.len(),
            ));
        }
        Ok(ParamVector { values, layout })
    }

    pub fn zeros(layout: Layout) -> Self {
        ParamVector {
            values: vec![0.0; layout.total_len()],
            layout,
        }
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

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn segment(&self, layer: &str) -> Result<&[f64]> {
        let s = self.layout.segment(layer)?;
        Ok(&self.values[s.offset..s.offset + s.len])
    }

    pub fn segment_mut(&mut self, layer: &str) -> Result<&mut [f64]> {
        let s = self.layout.segment(layer)?.clone();
        Ok(&mut self.values[s.offset..s.offset + s.len])
    }

    /// Euclidean dot product; layouts must match.
    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        if self.layout != other.layout {
            return Err(Error::shape("ParamVector::dot", "same layout", "different"));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a * b)
            .sum())
    }

    /// Write the checkpoint: `<path>` holds the raw little-endian f64 array,
    /// `<path>.layout.json` the sidecar describing the segments.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        std::fs::File::create(path)?.write_all(&buf)?;
        let sidecar = path.with_extension(format!(
            "{}layout.json",
            path.extension()
                .map(|e| format!("{}.", e.to_string_lossy()))
                .unwrap_or_default()
        ));
        let json = serde_json::to_string_pretty(&self.layout)?;
        std::fs::write(sidecar, json + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let sidecar = path.with_extension(format!(
            "{}layout.json",
            path.extension()
                .map(|e| format!("{}.", e.to_string_lossy()))
                .unwrap_or_default()
        ));
        let layout: Layout = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        if buf.len() != layout.total_len() * 8 {
            return Err(Error::shape(
                "ParamVector::load",
                layout.total_len() * 8,
                buf.len(),
            ));
        }
        let values = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(ParamVector { values, layout })
    }
}
