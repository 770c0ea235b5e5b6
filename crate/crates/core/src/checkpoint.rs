//! Single-file checkpoints: safetensors payload with a JSON header embedded
//! in the safetensors metadata under the `sst` key.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use candle_core::{Device, Tensor};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

const HEADER_KEY: &str = "sst";

pub fn save<H: Serialize>(path: &Path, header: &H, tensors: &HashMap<String, Tensor>) -> Result<()> {
    let mut metadata = HashMap::new();
    metadata.insert(HEADER_KEY.to_owned(), serde_json::to_string(header)?);
    let mut sorted: Vec<(&String, &Tensor)> = tensors.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let bytes = safetensors::serialize(sorted, Some(metadata))
        .map_err(|e| Error::Checkpoint(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load<H: DeserializeOwned>(path: &Path) -> Result<(H, HashMap<String, Tensor>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (_, meta) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let header = meta
        .metadata()
        .as_ref()
        .and_then(|m| m.get(HEADER_KEY))
        .ok_or_else(|| Error::Checkpoint(format!("{} has no embedded header", path.display())))?;
    let header = serde_json::from_str(header)?;
    let tensors = candle_core::safetensors::load_buffer(&bytes, &Device::Cpu)?;
    Ok((header, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::DType;

    #[test]
    fn header_and_tensors_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.safetensors");
        let mut tensors = HashMap::new();
        tensors.insert("w".to_string(), Tensor::ones((2, 3), DType::F32, &Device::Cpu).unwrap());
        save(&path, &vec!["a".to_string(), "b".to_string()], &tensors).unwrap();
        let (header, loaded): (Vec<String>, _) = load(&path).unwrap();
        assert_eq!(header, vec!["a", "b"]);
        assert_eq!(loaded["w"].dims(), &[2, 3]);
    }
}
