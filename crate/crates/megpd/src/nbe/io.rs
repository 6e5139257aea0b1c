//! Model file container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! bytes 0..8    magic "MEGPDNBE"
//! bytes 8..12   format version (u32), currently 1
//! bytes 12..20  header length H (u64)
//! bytes 20..20+H  JSON header: { arch, prior, training_log, loss,
//!                                weight_count }
//! ...           weight_count f64 values (little-endian)
//! last 32 bytes SHA-256 of everything before the checksum
//! ```
//!
//! Weights are stored as f64 regardless of the in-memory scalar, so a
//! save/load round trip reproduces forward passes bit-identically for both
//! f32 and f64 models.

use super::net::NbeArchitecture;
use super::{LossKind, NbeModel, PriorSpec, TrainingLog};
use crate::error::{Error, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

const MAGIC: &[u8; 8] = b"MEGPDNBE";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    arch: NbeArchitecture,
    prior: PriorSpec,
    training_log: TrainingLog,
    loss: LossKind,
    weight_count: u64,
}

pub fn save_model<T: Real>(model: &NbeModel<T>, path: impl AsRef<Path>) -> Result<()> {
    model.validate()?;
    let header = Header {
        arch: model.arch.clone(),
        prior: model.prior.clone(),
        training_log: model.training_log.clone(),
        loss: model.loss,
        weight_count: model.weights.len() as u64,
    };
    let header_bytes = serde_json::to_vec(&header)?;

    let mut buf = Vec::with_capacity(20 + header_bytes.len() + model.weights.len() * 8 + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header_bytes);
    for w in &model.weights {
        buf.extend_from_slice(&w.as_f64().to_le_bytes());
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);

    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load_model<T: Real>(path: impl AsRef<Path>) -> Result<NbeModel<T>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 20 + 32 {
        return Err(Error::CorruptFile("file too short for the container".into()));
    }
    if &bytes[0..8] != MAGIC {
        return Err(Error::VersionMismatch(
            "missing container magic; not a model file".into(),
        ));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch(format!(
            "container format {version}, this build reads {FORMAT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body_end = bytes.len() - 32;
    if 20 + header_len > body_end {
        return Err(Error::CorruptFile("truncated header".into()));
    }

    let digest = Sha256::digest(&bytes[..body_end]);
    if digest.as_slice() != &bytes[body_end..] {
        return Err(Error::CorruptFile("checksum mismatch".into()));
    }

    let header: Header = serde_json::from_slice(&bytes[20..20 + header_len])
        .map_err(|e| Error::CorruptFile(format!("header does not parse: {e}")))?;
    let payload = &bytes[20 + header_len..body_end];
    if payload.len() != header.weight_count as usize * 8 {
        return Err(Error::CorruptFile(format!(
            "payload holds {} bytes, header promises {} weights",
            payload.len(),
            header.weight_count
        )));
    }
    if header.arch.weight_count() as u64 != header.weight_count {
        return Err(Error::VersionMismatch(format!(
            "architecture header needs {} weights but the file declares {}",
            header.arch.weight_count(),
            header.weight_count
        )));
    }

    let weights: Vec<T> = payload
        .chunks_exact(8)
        .map(|c| T::from_f64(f64::from_le_bytes(c.try_into().unwrap())))
        .collect();
    let model = NbeModel {
        arch: header.arch,
        weights,
        prior: header.prior,
        training_log: header.training_log,
        loss: header.loss,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MegpdParams;
    use crate::nbe::deepsets_forward;

    fn make_model(seed: u64) -> NbeModel<f64> {
        let arch = NbeArchitecture::uniform(8);
        NbeModel {
            weights: super::super::net::init_weights(&arch, seed),
            arch,
            prior: PriorSpec::default(),
            training_log: TrainingLog::empty(),
            loss: LossKind::L1RangeStandardized,
        }
    }

    #[test]
    fn round_trip_reproduces_forward_passes() {
        let model = make_model(71);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nbe");
        save_model(&model, &path).unwrap();
        let loaded: NbeModel<f64> = load_model(&path).unwrap();
        let p = MegpdParams::from_array([3.0, 1.0, 0.2, 4.0, 0.5, 0.25]).unwrap();
        for seed in 0..100 {
            let data = crate::model::simulate(&p, 20 + (seed as usize % 50), 500 + seed).unwrap();
            let a = deepsets_forward(&model, &data).unwrap().to_array();
            let b = deepsets_forward(&loaded, &data).unwrap().to_array();
            assert_eq!(a.map(f64::to_bits), b.map(f64::to_bits));
        }
    }

    #[test]
    fn f32_round_trip_is_lossless() {
        let model = make_model(72);
        let as_f32 = NbeModel::<f32> {
            arch: model.arch.clone(),
            weights: model.weights.iter().map(|&w| w as f32).collect(),
            prior: model.prior.clone(),
            training_log: model.training_log.clone(),
            loss: model.loss,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m32.nbe");
        save_model(&as_f32, &path).unwrap();
        let loaded: NbeModel<f32> = load_model(&path).unwrap();
        for (a, b) in as_f32.weights.iter().zip(&loaded.weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let model = make_model(73);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nbe");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 40]).unwrap();
        assert!(matches!(
            load_model::<f64>(&path),
            Err(Error::CorruptFile(_))
        ));
    }

    #[test]
    fn wrong_magic_and_version_are_version_mismatches() {
        let model = make_model(74);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nbe");
        save_model(&model, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            load_model::<f64>(&path),
            Err(Error::VersionMismatch(_))
        ));
    }

    #[test]
    fn architecture_header_mismatch_is_detected() {
        // Rewrite the header to declare a different architecture while
        // keeping the payload; the checksum is recomputed so the corruption
        // is purely the header/payload disagreement.
        let model = make_model(75);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.nbe");
        save_model(&model, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let mut header: Header =
            serde_json::from_slice(&bytes[20..20 + header_len]).unwrap();
        header.arch = NbeArchitecture::uniform(16);
        let new_header = serde_json::to_vec(&header).unwrap();
        let mut rebuilt = Vec::new();
        rebuilt.extend_from_slice(&bytes[0..12]);
        rebuilt.extend_from_slice(&(new_header.len() as u64).to_le_bytes());
        rebuilt.extend_from_slice(&new_header);
        rebuilt.extend_from_slice(&bytes[20 + header_len..bytes.len() - 32]);
        let digest = Sha256::digest(&rebuilt);
        rebuilt.extend_from_slice(&digest);
        std::fs::write(&path, &rebuilt).unwrap();
        assert!(matches!(
            load_model::<f64>(&path),
            Err(Error::VersionMismatch(_))
        ));
    }
}
