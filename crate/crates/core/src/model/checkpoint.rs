use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{IdeaModel, ModelConfig};
use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const FORMAT: &str = "idea-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    config: ModelConfig,
    params: Vec<Entry>,
}

/// Writes config and every parameter as JSON. Values round-trip exactly.
pub fn write_checkpoint<T: Scalar>(model: &IdeaModel<T>, path: &Path) -> Result<()> {
    let params = model
        .store
        .ids()
        .map(|id| {
            let t = model.store.get(id);
            Entry {
                name: model.store.name(id).to_string(),
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|v| v.as_f64()).collect(),
            }
        })
        .collect();
    let ck = Checkpoint {
        format: FORMAT.into(),
        version: VERSION,
        config: model.config.clone(),
        params,
    };
    let text = serde_json::to_string(&ck).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Rebuilds the model structure from the stored config and restores every
/// parameter by name.
pub fn read_checkpoint<T: Scalar>(path: &Path) -> Result<IdeaModel<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    if ck.format != FORMAT || ck.version != VERSION {
        return Err(Error::Checkpoint(format!(
            "{}: unsupported format {} v{}",
            path.display(),
            ck.format,
            ck.version
        )));
    }
    let mut model = IdeaModel::<T>::new(ck.config)?;
    if ck.params.len() != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "expected {} parameters, found {}",
            model.store.len(),
            ck.params.len()
        )));
    }
    for e in ck.params {
        let id = model
            .store
            .find(&e.name)
            .ok_or_else(|| Error::Checkpoint(format!("unknown parameter `{}`", e.name)))?;
        let slot = model.store.get_mut(id);
        if slot.shape() != e.shape.as_slice() {
            return Err(Error::Checkpoint(format!(
                "parameter `{}` has shape {:?}, expected {:?}",
                e.name,
                e.shape,
                slot.shape()
            )));
        }
        *slot = Tensor::new(e.shape, e.values.into_iter().map(T::of).collect())?;
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            groups: 2,
            learners: 3,
            layers: 2,
            hidden_width: 8,
            context_width: 6,
            key_width: 4,
            value_width: 4,
            comm_width: 4,
            lookback: 8,
            horizon: 4,
            mode: Mode::Interpretable,
            seed: 3,
            ..ModelConfig::default()
        };
        let m = IdeaModel::<f64>::new(cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        write_checkpoint(&m, &p).unwrap();
        let back = read_checkpoint::<f64>(&p).unwrap();
        assert_eq!(back.config, m.config);
        for id in m.store.ids() {
            let a = m.store.get(id).data();
            let b = back.store.get(id).data();
            assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.json");
        std::fs::write(&p, "{\"format\":\"x\"}").unwrap();
        assert!(matches!(read_checkpoint::<f64>(&p), Err(Error::Checkpoint(_))));
        assert!(matches!(read_checkpoint::<f64>(&dir.path().join("none")), Err(Error::Io { .. })));
    }
}
