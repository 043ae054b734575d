//! HBNN model files.
//!
//! Layout (little endian):
//!
//! ```text
//! "HBNN"  u32 version  u32 layer_count
//! layer_count x (u32 len, JSON layer descriptor)
//! u32 len, JSON training metadata
//! f64 parameters: per layer, weights then biases
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::model::{LayerParams, Model, TrainingMeta};
use super::spec::{LayerSpec, NetworkSpec};
use super::Real;

pub const MAGIC: &[u8; 4] = b"HBNN";
pub const VERSION: u32 = 1;

const MAX_BLOCK: usize = 1 << 20;

pub fn model_to_bytes(model: &Model) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let layers = &model.spec().layers;
    out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
    for layer in layers {
        put_block(&mut out, &serde_json::to_vec(layer).map_err(|e| Error::format(e.to_string()))?);
    }
    put_block(&mut out, &serde_json::to_vec(&model.meta).map_err(|e| Error::format(e.to_string()))?);
    for p in model.params() {
        for &v in p.weights.iter().chain(&p.bias) {
            out.extend_from_slice(&(v as f64).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn model_from_bytes(bytes: &[u8]) -> Result<Model> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format("not an HBNN model file (bad magic)"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(format!("unsupported HBNN version {version}")));
    }
    let count = r.u32("layer count")? as usize;
    if count > MAX_BLOCK {
        return Err(Error::format(format!("implausible layer count {count}")));
    }
    let mut layers = Vec::with_capacity(count);
    for i in 0..count {
        let block = r.block("layer descriptor")?;
        let layer: LayerSpec = serde_json::from_slice(block).map_err(|e| Error::format(format!("layer {i}: {e}")))?;
        layers.push(layer);
    }
    let spec = NetworkSpec::new(layers).map_err(|e| Error::format(format!("invalid network: {e}")))?;
    let meta: TrainingMeta =
        serde_json::from_slice(r.block("metadata")?).map_err(|e| Error::format(format!("metadata: {e}")))?;
    let shapes = spec.param_shapes()?;
    let total: usize = shapes.iter().map(|(w, b)| w + b).sum();
    if r.remaining() != total * 8 {
        return Err(Error::format(format!("parameter payload is {} bytes, expected {}", r.remaining(), total * 8)));
    }
    let mut params = Vec::with_capacity(shapes.len());
    for (w, b) in shapes {
        let weights = r.reals(w)?;
        let bias = r.reals(b)?;
        params.push(LayerParams { weights, bias });
    }
    Model::from_parts(spec, params, meta)
}

pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, model_to_bytes(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    model_from_bytes(&fs::read(path)?)
}

fn put_block(out: &mut Vec<u8>, block: &[u8]) {
    out.extend_from_slice(&(block.len() as u32).to_le_bytes());
    out.extend_from_slice(block);
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(format!("truncated file while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn block(&mut self, what: &str) -> Result<&'a [u8]> {
        let len = self.u32(what)? as usize;
        if len > MAX_BLOCK {
            return Err(Error::format(format!("{what} block of {len} bytes is implausible")));
        }
        self.take(len, what)
    }

    fn reals(&mut self, n: usize) -> Result<Vec<Real>> {
        let raw = self.take(n * 8, "parameters")?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")) as Real).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let spec = NetworkSpec::precoder_regressor(2, 4).unwrap();
        let mut m = Model::new(spec, 17).unwrap();
        m.meta.input_scale = 0.1 + 0.2;
        m.meta.final_train_loss = Some(1.0 / 3.0);
        m
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let bytes = model_to_bytes(&m).unwrap();
        let back = model_from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(model_to_bytes(&back).unwrap(), bytes);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.hbnn");
        save_model(&m, &path).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let bytes = model_to_bytes(&model()).unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(model_from_bytes(&bad), Err(Error::Format(_))));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(model_from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(model_from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
        assert!(matches!(model_from_bytes(&bytes[..10]), Err(Error::Format(_))));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(model_from_bytes(&long), Err(Error::Format(_))));
    }
}
