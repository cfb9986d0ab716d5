//! Binary checkpoint format.
//!
//! ```text
//! "USES" | version u32 | header length u32 | header JSON
//!        | tensor count u32 | tensors...
//! tensor: name length u32 | name | dtype u8 | rank u32 | dims u64... | payload (LE)
//! ```
//!
//! All integers are little-endian. The model header holds the
//! [`UsesConfig`]; other files reuse the container with their own header.

use std::path::Path;

use crate::error::{Result, UsesError};
use crate::model::{UsesConfig, UsesModel};
use crate::numerics::{DType, Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"USES";
pub const VERSION: u32 = 1;

/// A tensor read from a checkpoint, in whichever dtype it was stored.
#[derive(Debug, Clone, PartialEq)]
pub enum StoredTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl StoredTensor {
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        match self {
            StoredTensor::F32(t) => t.cast(),
            StoredTensor::F64(t) => t.cast(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            StoredTensor::F32(t) => t.shape(),
            StoredTensor::F64(t) => t.shape(),
        }
    }
}

pub(crate) fn encode_container<T: Scalar>(header: &str, tensors: &[(&str, &Tensor<T>)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, t) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(T::DTYPE.tag());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(UsesError::Checkpoint(format!(
                "truncated file: need {n} bytes at offset {}",
                self.pos
            )));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| UsesError::Checkpoint("name is not valid UTF-8".into()))
    }

    fn tensor<T: Scalar>(&mut self, shape: Vec<usize>) -> Result<Tensor<T>> {
        let n: usize = shape.iter().product();
        let size = T::DTYPE.size_in_bytes();
        let bytes = self.take(n * size)?;
        let data = bytes.chunks_exact(size).map(T::read_le).collect();
        Tensor::new(shape, data).map_err(|e| UsesError::Checkpoint(e.to_string()))
    }
}

pub(crate) fn decode_container(bytes: &[u8]) -> Result<(String, Vec<(String, StoredTensor)>)> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(UsesError::Checkpoint("missing USES magic".into()));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(UsesError::Checkpoint(format!(
            "unsupported format version {version} (expected {VERSION})"
        )));
    }
    let header = c.string()?;
    let count = c.u32()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = c.string()?;
        let tag = c.take(1)?[0];
        let dtype = DType::from_tag(tag)
            .ok_or_else(|| UsesError::Checkpoint(format!("{name}: unknown dtype tag {tag}")))?;
        let rank = c.u32()? as usize;
        let shape = (0..rank)
            .map(|_| c.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let t = match dtype {
            DType::F32 => StoredTensor::F32(c.tensor(shape)?),
            DType::F64 => StoredTensor::F64(c.tensor(shape)?),
        };
        tensors.push((name, t));
    }
    if c.pos != bytes.len() {
        return Err(UsesError::Checkpoint(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - c.pos
        )));
    }
    Ok((header, tensors))
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, model: &UsesModel<T>) -> Result<()> {
    let header = serde_json::to_string(model.config())?;
    let tensors: Vec<(&str, &Tensor<T>)> = model
        .specs()
        .iter()
        .map(|s| s.name.as_str())
        .zip(model.params())
        .collect();
    write_atomic(path.as_ref(), &encode_container(&header, &tensors))
}

/// Reads a model, converting parameters to `T` if they were stored in the
/// other dtype. When `expected` is given, the stored config must equal it.
pub fn load_checkpoint<T: Scalar>(
    path: impl AsRef<Path>,
    expected: Option<&UsesConfig>,
) -> Result<UsesModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path)?;
    let (header, tensors) = decode_container(&bytes)
        .map_err(|e| UsesError::Checkpoint(format!("{}: {e}", path.display())))?;
    let config: UsesConfig = serde_json::from_str(&header)
        .map_err(|e| UsesError::Checkpoint(format!("{}: bad config header: {e}", path.display())))?;
    if let Some(expected) = expected {
        if *expected != config {
            return Err(UsesError::Checkpoint(format!(
                "{}: stored config differs from the requested one",
                path.display()
            )));
        }
    }
    let model = UsesModel::<T>::new(config.clone(), 0)?;
    if tensors.len() != model.specs().len() {
        return Err(UsesError::Checkpoint(format!(
            "{}: {} tensors stored, model has {}",
            path.display(),
            tensors.len(),
            model.specs().len()
        )));
    }
    let mut params = Vec::with_capacity(tensors.len());
    for (spec, (name, t)) in model.specs().iter().zip(&tensors) {
        if spec.name != *name {
            return Err(UsesError::Checkpoint(format!(
                "{}: expected parameter {}, found {name}",
                path.display(),
                spec.name
            )));
        }
        params.push(t.cast());
    }
    UsesModel::from_params(config, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_cast() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.uses");
        let m = UsesModel::<f32>::new(UsesConfig::tiny(), 5).unwrap();
        save_checkpoint(&p, &m).unwrap();
        let back = load_checkpoint::<f32>(&p, Some(m.config())).unwrap();
        assert_eq!(back.params(), m.params());
        let wide = load_checkpoint::<f64>(&p, None).unwrap();
        assert_eq!(wide.params()[0].data()[0], m.params()[0].data()[0] as f64);
    }

    #[test]
    fn mismatches_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.uses");
        let m = UsesModel::<f32>::new(UsesConfig::tiny(), 5).unwrap();
        save_checkpoint(&p, &m).unwrap();
        let other = UsesConfig {
            num_blocks: 3,
            ..UsesConfig::tiny()
        };
        assert!(matches!(
            load_checkpoint::<f32>(&p, Some(&other)),
            Err(UsesError::Checkpoint(_))
        ));
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&p, None), Err(UsesError::Checkpoint(_))));
        std::fs::write(&p, &bytes[..10]).unwrap();
        assert!(load_checkpoint::<f32>(&p, None).is_err());
    }
}
