//! `.tnseq` sequence container and its `.meta` sidecar.
//!
//! ```text
//! offset  size        field
//! 0       8           magic "TNSEQv1\0"
//! 8       1           element type: 0 = f32 LE, 1 = u8 (value·255, rounded)
//! 9       1           ndim
//! 10      8·ndim      dims, u64 LE
//! ...     product·sz  elements, row-major
//! ```
//!
//! The sidecar `<file>.meta` holds `key=value` lines (UTF-8, `#` comments).

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"TNSEQv1\0";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ElementType {
    F32 = 0,
    U8 = 1,
}

pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

pub fn encode(t: &Tensor<f32>, ty: ElementType) -> Result<Vec<u8>> {
    if t.shape().len() > u8::MAX as usize {
        return Err(Error::shape("too many dimensions"));
    }
    let mut out = Vec::with_capacity(10 + 8 * t.shape().len() + 4 * t.len());
    out.extend_from_slice(MAGIC);
    out.push(ty as u8);
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match ty {
        ElementType::F32 => {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        ElementType::U8 => {
            for &v in t.data() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::invalid(format!("value {} outside [0, 1] for u8 storage", v)));
                }
                out.push((v * 255.0).round() as u8);
            }
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Tensor<f32>> {
    let bad = |d: String| Error::format("sequence file", d);
    if bytes.len() < 10 || &bytes[..8] != MAGIC {
        return Err(bad("missing TNSEQv1 magic".into()));
    }
    let ty = match bytes[8] {
        0 => ElementType::F32,
        1 => ElementType::U8,
        other => return Err(bad(format!("unknown element type {}", other))),
    };
    let ndim = bytes[9] as usize;
    let header = 10 + 8 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated header".into()));
    }
    let dims: Vec<usize> = bytes[10..header]
        .chunks(8)
        .map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")) as usize)
        .collect();
    let n = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| bad("dimension product overflows".into()))?;
    let body = &bytes[header..];
    let data: Vec<f32> = match ty {
        ElementType::F32 => {
            if body.len() != n * 4 {
                return Err(bad(format!("{} data bytes for {} f32 elements", body.len(), n)));
            }
            body.chunks(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect()
        }
        ElementType::U8 => {
            if body.len() != n {
                return Err(bad(format!("{} data bytes for {} u8 elements", body.len(), n)));
            }
            body.iter().map(|&b| b as f32 / 255.0).collect()
        }
    };
    Tensor::new(dims, data)
}

pub fn format_meta(meta: &BTreeMap<String, String>) -> Result<String> {
    let mut s = String::new();
    for (k, v) in meta {
        if k.is_empty() || k.contains(['=', '\n', '#']) || k.trim() != k || v.contains('\n') {
            return Err(Error::invalid(format!("metadata entry `{}` cannot be stored", k)));
        }
        s.push_str(&format!("{}={}\n", k, v));
    }
    Ok(s)
}

pub fn parse_meta(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format("metadata", format!("line {} has no `=`", i + 1)))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}

/// Write the container and its sidecar, each via a temporary file and rename.
pub fn write_sequences(
    path: &Path,
    frames: &Tensor<f32>,
    ty: ElementType,
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    atomic_write(path, &encode(frames, ty)?)?;
    atomic_write(&meta_path(path), format_meta(meta)?.as_bytes())
}

/// Read a container; the sidecar is optional.
pub fn read_sequences(path: &Path) -> Result<(Tensor<f32>, BTreeMap<String, String>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let t = decode(&bytes)?;
    let mp = meta_path(path);
    let meta = if mp.exists() {
        parse_meta(&std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?)?
    } else {
        BTreeMap::new()
    };
    Ok((t, meta))
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn f32_and_u8_round_trip() {
        let t = Tensor::from_fn([2, 3, 1, 4, 4], |i| (i % 256) as f32 / 255.0);
        assert_eq!(decode(&encode(&t, ElementType::F32).unwrap()).unwrap(), t);
        assert_eq!(decode(&encode(&t, ElementType::U8).unwrap()).unwrap(), t);
    }

    #[test]
    fn corrupt_inputs() {
        let t = Tensor::<f32>::zeros([2, 2]);
        let good = encode(&t, ElementType::F32).unwrap();
        assert!(decode(&good[..good.len() - 1]).is_err());
        assert!(decode(b"NOTASEQ\0\0\0").is_err());
        let mut ty = good.clone();
        ty[8] = 7;
        assert!(decode(&ty).is_err());
        assert!(encode(&Tensor::full([1], 2.0f32), ElementType::U8).is_err());
    }

    #[test]
    fn meta_round_trip() {
        let mut m = BTreeMap::new();
        m.insert("seed".to_string(), "42".to_string());
        m.insert("generator".to_string(), "bouncing glyphs".to_string());
        assert_eq!(parse_meta(&format_meta(&m).unwrap()).unwrap(), m);
        assert!(parse_meta("novalue\n").is_err());
        m.insert("a=b".into(), "x".into());
        assert!(format_meta(&m).is_err());
    }
}
