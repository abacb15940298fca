//! Flat parameter vectors with segment layouts.
//!
//! All model weights live in one flat `Vec<f64>` described by an ordered
//! list of segment descriptors (name, shape, offset) that tile the vector
//! exactly. The encoder and decoder occupy two disjoint index spans whose
//! union covers everything. Checkpoints serialize the same structure as a
//! little-endian binary file.

use std::ops::Range;
use std::path::Path;
use std::sync::Arc;

use ndarray::{ArrayView1, ArrayView2};

use crate::error::{Error, Result};

const CHECKPOINT_MAGIC: &[u8; 4] = b"CFLP";
const CHECKPOINT_VERSION: u32 = 1;

/// One named, shaped slice of the flat value array.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmentDescriptor {
    pub name: String,
    /// `[out, in]` for weight matrices, `[out]` for bias vectors.
    pub dims: Vec<usize>,
    pub offset: usize,
}

impl SegmentDescriptor {
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Segment map shared by every parameter vector of one model family.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelLayout {
    pub segments: Vec<SegmentDescriptor>,
    pub encoder_span: Range<usize>,
    pub decoder_span: Range<usize>,
    /// Layer widths of the full encoder+decoder stack, input first.
    pub stack_dims: Vec<usize>,
    /// Layers `0..n_encoder_layers` form the encoder.
    pub n_encoder_layers: usize,
    pub total_len: usize,
}

impl ModelLayout {
    pub fn n_layers(&self) -> usize {
        self.stack_dims.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.stack_dims[0]
    }

    pub fn latent_dim(&self) -> usize {
        self.stack_dims[self.n_encoder_layers]
    }

    /// Layer `l` maps `in_dim` to `out_dim`.
    pub fn layer_dims(&self, l: usize) -> (usize, usize) {
        (self.stack_dims[l], self.stack_dims[l + 1])
    }

    pub fn weight_segment(&self, l: usize) -> &SegmentDescriptor {
        &self.segments[2 * l]
    }

    pub fn bias_segment(&self, l: usize) -> &SegmentDescriptor {
        &self.segments[2 * l + 1]
    }

    /// The final decoder layer is linear; every other layer is tanh.
    pub fn layer_is_linear(&self, l: usize) -> bool {
        l == self.n_layers() - 1
    }

    fn check_tiling(&self) -> Result<()> {
        let mut expected = 0;
        for seg in &self.segments {
            if seg.offset != expected {
                return Err(Error::Layout(format!(
                    "segment '{}' at offset {} leaves a gap or overlap (expected {})",
                    seg.name, seg.offset, expected
                )));
            }
            expected += seg.len();
        }
        if expected != self.total_len {
            return Err(Error::Layout(format!(
                "segments cover {expected} values but layout declares {}",
                self.total_len
            )));
        }
        let enc = &self.encoder_span;
        let dec = &self.decoder_span;
        if enc.start != 0 || enc.end != dec.start || dec.end != self.total_len {
            return Err(Error::Layout(
                "encoder and decoder spans must be disjoint and cover all values".into(),
            ));
        }
        Ok(())
    }
}

/// A flat sequence of model weights plus its layout and divergence flag.
#[derive(Debug, Clone)]
pub struct ParameterVector {
    values: Vec<f64>,
    layout: Arc<ModelLayout>,
    diverged: bool,
}

impl ParameterVector {
    pub fn new(values: Vec<f64>, layout: Arc<ModelLayout>) -> Result<Self> {
        if values.len() != layout.total_len {
            return Err(Error::Layout(format!(
                "{} values for a layout of {}",
                values.len(),
                layout.total_len
            )));
        }
        layout.check_tiling()?;
        Ok(Self {
            values,
            layout,
            diverged: false,
        })
    }

    pub fn zeros_like(other: &ParameterVector) -> Self {
        Self {
            values: vec![0.0; other.values.len()],
            layout: Arc::clone(&other.layout),
            diverged: false,
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

    pub fn layout(&self) -> &ModelLayout {
        &self.layout
    }

    pub fn layout_arc(&self) -> Arc<ModelLayout> {
        Arc::clone(&self.layout)
    }

    pub fn diverged(&self) -> bool {
        self.diverged
    }

    pub fn set_diverged(&mut self, diverged: bool) {
        self.diverged = diverged;
    }

    /// Flag the vector diverged if any value is non-finite.
    pub fn refresh_divergence(&mut self) {
        if !self.diverged && self.values.iter().any(|v| !v.is_finite()) {
            self.diverged = true;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_layout(&self, other: &ParameterVector) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// (mean, population standard deviation) of the flat values.
    pub fn mean_sd(&self) -> (f64, f64) {
        let n = self.values.len() as f64;
        let mean = self.values.iter().sum::<f64>() / n;
        let var = self.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        (mean, var.sqrt())
    }

    pub fn weight(&self, layer: usize) -> ArrayView2<'_, f64> {
        let seg = self.layout.weight_segment(layer);
        let (inp, out) = self.layout.layer_dims(layer);
        ArrayView2::from_shape((out, inp), &self.values[seg.offset..seg.offset + seg.len()])
            .expect("segment length matches dims")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let seg = self.layout.bias_segment(layer);
        ArrayView1::from_shape(seg.len(), &self.values[seg.offset..seg.offset + seg.len()])
            .expect("segment length matches dims")
    }

    /// Serialize to the checkpoint byte format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.push(u8::from(self.diverged));
        let lay = &self.layout;
        out.extend_from_slice(&(lay.segments.len() as u32).to_le_bytes());
        for seg in &lay.segments {
            out.extend_from_slice(&(seg.name.len() as u32).to_le_bytes());
            out.extend_from_slice(seg.name.as_bytes());
            out.extend_from_slice(&(seg.dims.len() as u32).to_le_bytes());
            for &d in &seg.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(seg.offset as u64).to_le_bytes());
        }
        for bound in [
            lay.encoder_span.start,
            lay.encoder_span.end,
            lay.decoder_span.start,
            lay.decoder_span.end,
            lay.n_encoder_layers,
        ] {
            out.extend_from_slice(&(bound as u64).to_le_bytes());
        }
        out.extend_from_slice(&(lay.stack_dims.len() as u64).to_le_bytes());
        for &d in &lay.stack_dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.values.len() as u64).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic = cursor.take(4)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Data("not a checkpoint file (bad magic)".into()));
        }
        let version = cursor.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint version {version}"
            )));
        }
        let diverged = cursor.u8()? != 0;
        let n_segments = cursor.u32()? as usize;
        let mut segments = Vec::with_capacity(n_segments);
        for _ in 0..n_segments {
            let name_len = cursor.u32()? as usize;
            let name = String::from_utf8(cursor.take(name_len)?.to_vec())
                .map_err(|_| Error::Data("segment name is not UTF-8".into()))?;
            let ndim = cursor.u32()? as usize;
            let mut dims = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                dims.push(cursor.u64()? as usize);
            }
            let offset = cursor.u64()? as usize;
            segments.push(SegmentDescriptor { name, dims, offset });
        }
        let enc_start = cursor.u64()? as usize;
        let enc_end = cursor.u64()? as usize;
        let dec_start = cursor.u64()? as usize;
        let dec_end = cursor.u64()? as usize;
        let n_encoder_layers = cursor.u64()? as usize;
        let n_stack = cursor.u64()? as usize;
        let mut stack_dims = Vec::with_capacity(n_stack);
        for _ in 0..n_stack {
            stack_dims.push(cursor.u64()? as usize);
        }
        let n_values = cursor.u64()? as usize;
        let mut values = Vec::with_capacity(n_values);
        for _ in 0..n_values {
            values.push(f64::from_le_bytes(cursor.take(8)?.try_into().unwrap()));
        }
        let layout = ModelLayout {
            segments,
            encoder_span: enc_start..enc_end,
            decoder_span: dec_start..dec_end,
            stack_dims,
            n_encoder_layers,
            total_len: n_values,
        };
        let mut pv = ParameterVector::new(values, Arc::new(layout))?;
        pv.diverged = diverged;
        Ok(pv)
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Data("checkpoint file truncated".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
