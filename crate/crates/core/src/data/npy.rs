//! Importer for the public Moving-MNIST test archive (`mnist_test_seq.npy`):
//! a `uint8` array shaped `(T, N, H, W)`, time-major.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Header {
    descr: String,
    fortran: bool,
    shape: Vec<usize>,
}

fn field<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let pat = format!("'{}':", key);
    let start = dict
        .find(&pat)
        .ok_or_else(|| Error::format("npy header", format!("missing `{}`", key)))?;
    Ok(dict[start + pat.len()..].trim_start())
}

fn parse_header(dict: &str) -> Result<Header> {
    let descr = field(dict, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| Error::format("npy header", "bad descr"))?
        .to_string();
    let fortran = field(dict, "fortran_order")?.starts_with("True");
    let shape = field(dict, "shape")?;
    let inner = shape
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| Error::format("npy header", "bad shape"))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::format("npy header", format!("bad dimension `{}`", s)))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Header { descr, fortran, shape })
}

/// Decode to `[N, T, 1, H, W]` in `[0, 1]`.
pub fn decode_moving_mnist(bytes: &[u8]) -> Result<Tensor<f32>> {
    if bytes.len() < 10 || &bytes[..6] != b"\x93NUMPY" {
        return Err(Error::format("npy file", "missing magic"));
    }
    let (len, start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 if bytes.len() >= 12 => (
            u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
            12,
        ),
        v => return Err(Error::format("npy file", format!("unsupported version {}", v))),
    };
    let dict = bytes
        .get(start..start + len)
        .and_then(|b| std::str::from_utf8(b).ok())
        .ok_or_else(|| Error::format("npy file", "truncated header"))?;
    let h = parse_header(dict)?;
    if h.descr != "|u1" && h.descr != "u1" {
        return Err(Error::format("npy file", format!("dtype {} is not uint8", h.descr)));
    }
    if h.fortran {
        return Err(Error::format("npy file", "Fortran order is not supported"));
    }
    let &[t, n, hh, ww] = h.shape.as_slice() else {
        return Err(Error::format("npy file", format!("shape {:?} is not (T, N, H, W)", h.shape)));
    };
    let body = &bytes[start + len..];
    let frame = hh * ww;
    if body.len() != t * n * frame {
        return Err(Error::format(
            "npy file",
            format!("{} data bytes for shape {:?}", body.len(), h.shape),
        ));
    }
    let mut data = vec![0.0f32; body.len()];
    for ti in 0..t {
        for ni in 0..n {
            let src = &body[(ti * n + ni) * frame..(ti * n + ni + 1) * frame];
            let dst = &mut data[(ni * t + ti) * frame..(ni * t + ti + 1) * frame];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d = s as f32 / 255.0;
            }
        }
    }
    Tensor::new([n, t, 1, hh, ww], data)
}

pub fn read_moving_mnist(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_moving_mnist(&bytes)
}
