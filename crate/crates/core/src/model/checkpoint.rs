//! Binary checkpoint format.
//!
//! Layout (little endian):
//! `b"CFCKPT01"`, `u64` header length, TOML header, `u64` tensor count, then
//! per tensor `u32` name length, UTF-8 name, `u8` dtype tag, `u32` rank,
//! `u64` dims, raw element data. Model parameters are stored under their
//! own names; auxiliary tensors (optimizer moments) carry a prefix.

use std::fs;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::Model;
use super::params::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"CFCKPT01";
const FORMAT_VERSION: u32 = 1;

/// Prefix of non-parameter tensors stored alongside the model.
pub const AUX_PREFIX: &str = "optim.";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    dtype: String,
    model: ModelConfig,
    #[serde(default)]
    meta: toml::Table,
}

/// Everything read back from a checkpoint file.
#[derive(Debug, Clone)]
pub struct Checkpoint<T> {
    pub model: Model<T>,
    /// Free-form metadata such as the training step and run configuration.
    pub meta: toml::Table,
    /// Auxiliary tensors with [`AUX_PREFIX`] stripped.
    pub aux: Vec<(String, Tensor<T>)>,
    /// Element type the file was written with.
    pub stored_dtype: DType,
}

fn bad(path: &Path, reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn write_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE.tag());
    out.write_u32::<LittleEndian>(t.shape().len() as u32).unwrap();
    for &d in t.shape() {
        out.write_u64::<LittleEndian>(d as u64).unwrap();
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

/// Serialises `model`, `meta` and the auxiliary tensors to bytes.
pub fn to_bytes<T: Scalar>(model: &Model<T>, meta: &toml::Table, aux: &[(String, Tensor<T>)]) -> Vec<u8> {
    let header = Header {
        format_version: FORMAT_VERSION,
        dtype: T::DTYPE.name().to_string(),
        model: model.config().clone(),
        meta: meta.clone(),
    };
    let header = toml::to_string(&header).expect("checkpoint header serialises");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.write_u64::<LittleEndian>(header.len() as u64).unwrap();
    out.extend_from_slice(header.as_bytes());
    out.write_u64::<LittleEndian>((model.params().len() + aux.len()) as u64)
        .unwrap();
    for (name, t) in model.params().iter() {
        write_tensor(&mut out, name, t);
    }
    for (name, t) in aux {
        write_tensor(&mut out, &format!("{AUX_PREFIX}{name}"), t);
    }
    out
}

/// Writes a checkpoint atomically (temporary file, then rename).
pub fn save<T: Scalar>(path: &Path, model: &Model<T>, meta: &toml::Table, aux: &[(String, Tensor<T>)]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, to_bytes(model, meta, aux)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn read_tensor<T: Scalar>(cur: &mut Cursor<&[u8]>) -> std::io::Result<(String, Tensor<T>, DType)> {
    let name_len = cur.read_u32::<LittleEndian>()? as usize;
    let mut name = vec![0u8; name_len];
    cur.read_exact(&mut name)?;
    let name = String::from_utf8(name).map_err(|_| invalid("tensor name is not UTF-8"))?;
    let dtype = DType::from_tag(cur.read_u8()?).ok_or_else(|| invalid("unknown dtype tag"))?;
    let rank = cur.read_u32::<LittleEndian>()? as usize;
    if rank > 8 {
        return Err(invalid("tensor rank above 8"));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(cur.read_u64::<LittleEndian>()? as usize);
    }
    let numel: usize = shape.iter().product();
    let width = match dtype {
        DType::F32 => 4,
        DType::F64 => 8,
    };
    let remaining = cur.get_ref().len() - cur.position() as usize;
    if numel.checked_mul(width).is_none_or(|n| n > remaining) {
        return Err(invalid("tensor data truncated"));
    }
    let mut buf = vec![0u8; numel * width];
    cur.read_exact(&mut buf)?;
    let data: Vec<T> = match dtype {
        DType::F32 => buf
            .chunks(4)
            .map(|b| T::from_f64_lossy(f32::read_le(b) as f64))
            .collect(),
        DType::F64 => buf.chunks(8).map(|b| T::from_f64_lossy(f64::read_le(b))).collect(),
    };
    let t = Tensor::from_vec(&shape, data).map_err(|e| invalid(&e.to_string()))?;
    Ok((name, t, dtype))
}

fn invalid(msg: &str) -> std::io::Error {
    std::io::Error::new(std::io::ErrorKind::InvalidData, msg.to_string())
}

/// Parses checkpoint bytes, converting stored values to `T`.
pub fn from_bytes<T: Scalar>(path: &Path, bytes: &[u8]) -> Result<Checkpoint<T>> {
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad(path, "not a checkpoint file (bad magic)"));
    }
    let mut cur = Cursor::new(bytes);
    cur.set_position(8);
    let io = |e: std::io::Error| bad(path, e.to_string());
    let header_len = cur.read_u64::<LittleEndian>().map_err(io)? as usize;
    let start = cur.position() as usize;
    if header_len > bytes.len() - start {
        return Err(bad(path, "header truncated"));
    }
    let header =
        std::str::from_utf8(&bytes[start..start + header_len]).map_err(|_| bad(path, "header is not UTF-8"))?;
    let header: Header = toml::from_str(header).map_err(|e| bad(path, format!("header: {e}")))?;
    if header.format_version != FORMAT_VERSION {
        return Err(bad(
            path,
            format!("unsupported format version {}", header.format_version),
        ));
    }
    let stored_dtype = match header.dtype.as_str() {
        "f32" => DType::F32,
        "f64" => DType::F64,
        other => return Err(bad(path, format!("unknown dtype {other}"))),
    };
    cur.set_position((start + header_len) as u64);
    let count = cur.read_u64::<LittleEndian>().map_err(io)?;
    let mut params = ParamStore::new();
    let mut aux = Vec::new();
    for _ in 0..count {
        let (name, t, _) = read_tensor::<T>(&mut cur).map_err(io)?;
        match name.strip_prefix(AUX_PREFIX) {
            Some(rest) => aux.push((rest.to_string(), t)),
            None => {
                if params.id(&name).is_some() {
                    return Err(bad(path, format!("duplicate tensor {name}")));
                }
                params.push(name, t);
            }
        }
    }
    if (cur.position() as usize) != bytes.len() {
        return Err(bad(path, "trailing bytes after last tensor"));
    }
    let model = Model::from_params(header.model, params).map_err(|e| bad(path, e.to_string()))?;
    Ok(Checkpoint {
        model,
        meta: header.meta,
        aux,
        stored_dtype,
    })
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(path, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig::with_shape(1, 2, 2, 1)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = Model::<f64>::new(tiny(), 3).unwrap();
        let mut meta = toml::Table::new();
        meta.insert("step".into(), toml::Value::Integer(12));
        let aux = vec![("m.0".to_string(), Tensor::from_fn(&[3], |i| i as f64 * 0.1))];
        let bytes = to_bytes(&m, &meta, &aux);
        let back = from_bytes::<f64>(Path::new("mem"), &bytes).unwrap();
        assert_eq!(back.model, m);
        assert_eq!(back.meta, meta);
        assert_eq!(back.aux, aux);
        assert_eq!(back.stored_dtype, DType::F64);
    }

    #[test]
    fn loads_across_precisions() {
        let m = Model::<f32>::new(tiny(), 3).unwrap();
        let back = from_bytes::<f64>(Path::new("mem"), &to_bytes(&m, &toml::Table::new(), &[])).unwrap();
        assert_eq!(back.model.cast::<f32>(), m);
        assert_eq!(back.stored_dtype, DType::F32);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let m = Model::<f32>::new(tiny(), 3).unwrap();
        let bytes = to_bytes(&m, &toml::Table::new(), &[]);
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(from_bytes::<f32>(Path::new("mem"), &wrong).is_err());
        assert!(from_bytes::<f32>(Path::new("mem"), &bytes[..bytes.len() - 3]).is_err());
    }

    #[test]
    fn rejects_mismatched_architecture() {
        let m = Model::<f32>::new(tiny(), 3).unwrap();
        let mut bytes = to_bytes(&m, &toml::Table::new(), &[]);
        // Claim a different state count in the header without touching the tensors.
        let needle = b"num_states = 2";
        let pos = bytes.windows(needle.len()).position(|w| w == needle).unwrap();
        bytes[pos + needle.len() - 1] = b'3';
        let err = from_bytes::<f32>(Path::new("mem"), &bytes).unwrap_err().to_string();
        assert!(err.contains("expected shape"), "{err}");
    }
}
