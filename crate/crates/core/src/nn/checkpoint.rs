//! Parameter archives: one file holding a JSON header plus every parameter
//! as a shape-tagged little-endian `f32` buffer (safetensors layout).

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const HEADER_KEY: &str = "ipf";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveHeader {
    pub format_version: u32,
    pub config_hash: String,
    #[serde(default)]
    pub payload: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArchiveTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode_archive<T: Real>(params: &ParamStore<T>, header: &ArchiveHeader) -> Result<Vec<u8>> {
    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = params
        .iter()
        .map(|(_, p)| {
            let bytes = p
                .value
                .data()
                .iter()
                .flat_map(|v| (v.as_f64() as f32).to_le_bytes())
                .collect();
            (p.name.clone(), p.value.shape().to_vec(), bytes)
        })
        .collect();
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F32, shape.clone(), bytes)
                .map(|v| (name.as_str(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    let meta = HashMap::from([(HEADER_KEY.to_string(), serde_json::to_string(header)?)]);
    safetensors::tensor::serialize(views, Some(meta)).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn decode_archive(bytes: &[u8]) -> Result<(ArchiveHeader, Vec<ArchiveTensor>)> {
    let (_, meta) = SafeTensors::read_metadata(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let header_json = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(HEADER_KEY))
        .ok_or_else(|| Error::Checkpoint("missing archive header".into()))?;
    let header: ArchiveHeader = serde_json::from_str(header_json)?;
    if header.format_version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {} (expected {FORMAT_VERSION})",
            header.format_version
        )));
    }
    let st = SafeTensors::deserialize(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut tensors = Vec::new();
    for (name, view) in st.tensors() {
        if view.dtype() != Dtype::F32 {
            return Err(Error::Checkpoint(format!("{name}: expected F32, found {:?}", view.dtype())));
        }
        let data = view
            .data()
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        tensors.push(ArchiveTensor {
            name,
            shape: view.shape().to_vec(),
            data,
        });
    }
    tensors.sort_by(|a, b| a.name.cmp(&b.name));
    Ok((header, tensors))
}

pub fn save_archive<T: Real>(path: &Path, params: &ParamStore<T>, header: &ArchiveHeader) -> Result<()> {
    let bytes = encode_archive(params, header)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_archive(path: &Path) -> Result<(ArchiveHeader, Vec<ArchiveTensor>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// Copies archived values into a store with the same names and shapes.
pub fn restore<T: Real>(params: &mut ParamStore<T>, tensors: &[ArchiveTensor]) -> Result<()> {
    if tensors.len() != params.len() {
        return Err(Error::Checkpoint(format!(
            "archive holds {} tensors, model expects {}",
            tensors.len(),
            params.len()
        )));
    }
    for t in tensors {
        let id = params
            .id(&t.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter {}", t.name)))?;
        let value = Tensor::new(&t.shape, t.data.iter().map(|&v| T::of(f64::from(v))).collect())?;
        params
            .set_value(id, value)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.register("b", Tensor::new(&[2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-7, -4.25]).unwrap(), true)
            .unwrap();
        s.register("a", Tensor::new(&[1], vec![9.0]).unwrap(), false).unwrap();
        s
    }

    #[test]
    fn roundtrip_and_determinism() {
        let header = ArchiveHeader {
            format_version: FORMAT_VERSION,
            config_hash: "abc".into(),
            payload: serde_json::json!({"k": 1}),
        };
        let bytes = encode_archive(&store(), &header).unwrap();
        assert_eq!(bytes, encode_archive(&store(), &header).unwrap());
        let (h, tensors) = decode_archive(&bytes).unwrap();
        assert_eq!(h, header);
        let mut target = store();
        target.data_mut(target.id("b").unwrap()).iter_mut().for_each(|v| *v = 0.0);
        restore(&mut target, &tensors).unwrap();
        assert_eq!(target, store());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let header = ArchiveHeader {
            format_version: FORMAT_VERSION,
            config_hash: String::new(),
            payload: serde_json::Value::Null,
        };
        let (_, tensors) = decode_archive(&encode_archive(&store(), &header).unwrap()).unwrap();
        let mut other = ParamStore::<f32>::new();
        other.register("b", Tensor::zeros(&[3, 2]), true).unwrap();
        other.register("a", Tensor::zeros(&[1]), true).unwrap();
        assert!(restore(&mut other, &tensors).is_err());
    }
}
