//! Input batches: synthetic generators, the CIFAR-10 binary format and a
//! raw tensor dump format.
//!
//! Raw dump layout (all little-endian):
//!
//! | offset | size | field                         |
//! |--------|------|-------------------------------|
//! | 0      | 4    | magic `b"PNRW"`               |
//! | 4      | 4    | format version (u32, = 1)     |
//! | 8      | 16   | n, h, w, c (u32 each)         |
//! | 24     | 8·len| entries as f64                |

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::mean_var;
use crate::tensor::{ActivationTensor, Rng, Shape};

pub const CIFAR_RECORD_LEN: usize = 3073;
pub const CIFAR_SIDE: usize = 32;
const CIFAR_PIXELS: usize = CIFAR_SIDE * CIFAR_SIDE;

pub const RAW_MAGIC: &[u8; 4] = b"PNRW";
pub const RAW_VERSION: u32 = 1;
pub const RAW_HEADER_LEN: usize = 24;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InputSource {
    /// i.i.d. standard normal entries.
    SyntheticGaussian { h: usize, w: usize, c: usize },
    /// Standard normal entries smoothed by a periodic separable Gaussian
    /// filter of the given length (in pixels).
    SyntheticStructured {
        h: usize,
        w: usize,
        c: usize,
        correlation_length: f64,
    },
    /// CIFAR-10 binary batches (`*.bin`) in a directory.
    Cifar10Dir { path: PathBuf, subsample_stride: usize },
}

impl InputSource {
    pub fn validate(&self) -> Result<()> {
        match self {
            InputSource::SyntheticGaussian { h, w, c } | InputSource::SyntheticStructured { h, w, c, .. } => {
                if *h < 2 || *w < 2 || *c == 0 {
                    return Err(Error::Config(format!(
                        "synthetic input needs spatial dims >= 2 and channels >= 1, got {h}x{w}x{c}"
                    )));
                }
                if let InputSource::SyntheticStructured { correlation_length, .. } = self {
                    if !(*correlation_length >= 0.0) {
                        return Err(Error::Config("correlation length must be >= 0".into()));
                    }
                }
            }
            InputSource::Cifar10Dir { subsample_stride, .. } => {
                if *subsample_stride == 0 || !CIFAR_SIDE.is_multiple_of(*subsample_stride) || CIFAR_SIDE / subsample_stride < 2 {
                    return Err(Error::Config(format!(
                        "subsample stride {subsample_stride} must divide 32 and leave at least 2x2"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn channels(&self) -> usize {
        match self {
            InputSource::SyntheticGaussian { c, .. } | InputSource::SyntheticStructured { c, .. } => *c,
            InputSource::Cifar10Dir { .. } => 3,
        }
    }
}

/// One decoded CIFAR-10 record.
#[derive(Debug, Clone, PartialEq)]
pub struct CifarImage {
    pub label: u8,
    /// Channel-major bytes: 1024 red, 1024 green, 1024 blue, each row-major.
    pub pixels: Vec<u8>,
}

/// Decodes a CIFAR-10 binary batch: consecutive 3073-byte records.
pub fn parse_cifar(bytes: &[u8], path: &Path) -> Result<Vec<CifarImage>> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(CIFAR_RECORD_LEN) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!(
                "length {} is not a positive multiple of the {CIFAR_RECORD_LEN}-byte record",
                bytes.len()
            ),
        });
    }
    Ok(bytes
        .chunks_exact(CIFAR_RECORD_LEN)
        .map(|r| CifarImage {
            label: r[0],
            pixels: r[1..].to_vec(),
        })
        .collect())
}

/// Reads every `*.bin` file in `dir`, in file-name order.
pub fn read_cifar_dir(dir: &Path) -> Result<Vec<CifarImage>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "bin"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Format {
            path: dir.to_path_buf(),
            reason: "no CIFAR-10 .bin batch files found".into(),
        });
    }
    let mut images = Vec::new();
    for f in files {
        let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
        images.extend(parse_cifar(&bytes, &f)?);
    }
    Ok(images)
}

fn cifar_tensor(images: &[&CifarImage], stride: usize) -> Result<ActivationTensor> {
    let side = CIFAR_SIDE / stride;
    ActivationTensor::from_fn(Shape::new(images.len(), side, side, 3), |n, i, j, c| {
        images[n].pixels[c * CIFAR_PIXELS + (i * stride) * CIFAR_SIDE + j * stride] as f64 / 255.0
    })
}

fn periodic_smooth(t: &ActivationTensor, length: f64) -> ActivationTensor {
    if length <= 0.0 {
        return t.clone();
    }
    let sh = t.shape();
    let weights = |len: usize| -> Vec<f64> {
        let raw: Vec<f64> = (0..len)
            .map(|d| {
                let d = d.min(len - d) as f64;
                (-0.5 * d * d / (length * length)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|x| x / s).collect()
    };
    let (wh, ww) = (weights(sh.h), weights(sh.w));
    let mut rows = vec![0.0; sh.len()];
    for n in 0..sh.n {
        for i in 0..sh.h {
            for j in 0..sh.w {
                for c in 0..sh.c {
                    rows[t.index(n, i, j, c)] = (0..sh.h).map(|d| wh[d] * t.get(n, (i + d) % sh.h, j, c)).sum();
                }
            }
        }
    }
    let rows = ActivationTensor::from_parts(sh, rows);
    let mut out = vec![0.0; sh.len()];
    for n in 0..sh.n {
        for i in 0..sh.h {
            for j in 0..sh.w {
                for c in 0..sh.c {
                    out[rows.index(n, i, j, c)] = (0..sh.w).map(|d| ww[d] * rows.get(n, i, (j + d) % sh.w, c)).sum();
                }
            }
        }
    }
    ActivationTensor::from_parts(sh, out)
}

/// Shifts and scales every sample to mean 0 and power 1 over its
/// positions and channels.
pub fn standardize_per_sample(t: &ActivationTensor) -> Result<ActivationTensor> {
    let sh = t.shape();
    let per = sh.per_sample();
    let mut data = Vec::with_capacity(sh.len());
    for n in 0..sh.n {
        let s = t.sample(n);
        let first = s[0];
        if s.iter().all(|&v| v == first) {
            return Err(Error::DegenerateInput { sample: n });
        }
        let (mean, var) = mean_var(s);
        let inv = 1.0 / var.sqrt();
        data.extend(s.iter().map(|&v| (v - mean) * inv));
    }
    debug_assert_eq!(data.len(), per * sh.n);
    ActivationTensor::new(sh, data)
}

/// Draws a batch of `n` inputs from `src`.
pub fn load_batch(src: &InputSource, n: usize, rng: &mut Rng, standardize: bool) -> Result<ActivationTensor> {
    if n < 2 {
        return Err(Error::InsufficientData(format!("batch needs at least 2 samples, got {n}")));
    }
    src.validate()?;
    let raw = match src {
        InputSource::SyntheticGaussian { h, w, c } => {
            let shape = Shape::new(n, *h, *w, *c);
            let data = (0..shape.len()).map(|_| rng.standard_normal()).collect();
            ActivationTensor::new(shape, data)?
        }
        InputSource::SyntheticStructured {
            h,
            w,
            c,
            correlation_length,
        } => {
            let shape = Shape::new(n, *h, *w, *c);
            let data = (0..shape.len()).map(|_| rng.standard_normal()).collect();
            periodic_smooth(&ActivationTensor::new(shape, data)?, *correlation_length)
        }
        InputSource::Cifar10Dir { path, subsample_stride } => {
            let images = read_cifar_dir(path)?;
            if images.len() < n {
                return Err(Error::InsufficientData(format!(
                    "requested {n} images, {path:?} holds {}",
                    images.len()
                )));
            }
            // Partial Fisher-Yates: n distinct images.
            let mut idx: Vec<usize> = (0..images.len()).collect();
            for k in 0..n {
                let j = k + (rng.next_u64() % (images.len() - k) as u64) as usize;
                idx.swap(k, j);
            }
            let chosen: Vec<&CifarImage> = idx[..n].iter().map(|&i| &images[i]).collect();
            cifar_tensor(&chosen, *subsample_stride)?
        }
    };
    if standardize {
        standardize_per_sample(&raw)
    } else {
        Ok(raw)
    }
}

/// Serializes `t` in the raw dump format.
pub fn encode_raw(t: &ActivationTensor) -> Result<Vec<u8>> {
    let sh = t.shape();
    let mut out = Vec::with_capacity(RAW_HEADER_LEN + 8 * sh.len());
    out.extend_from_slice(RAW_MAGIC);
    out.extend_from_slice(&RAW_VERSION.to_le_bytes());
    for d in [sh.n, sh.h, sh.w, sh.c] {
        let d = u32::try_from(d).map_err(|_| Error::Shape(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_raw(bytes: &[u8], path: &Path) -> Result<ActivationTensor> {
    let bad = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < RAW_HEADER_LEN || &bytes[..4] != RAW_MAGIC {
        return Err(bad("missing raw dump header".into()));
    }
    let word = |k: usize| u32::from_le_bytes(bytes[4 * k..4 * k + 4].try_into().unwrap());
    if word(1) != RAW_VERSION {
        return Err(bad(format!("unsupported version {}", word(1))));
    }
    let shape = Shape::new(word(2) as usize, word(3) as usize, word(4) as usize, word(5) as usize);
    let body = &bytes[RAW_HEADER_LEN..];
    if body.len() != 8 * shape.len() {
        return Err(bad(format!(
            "body holds {} bytes, shape {shape:?} needs {}",
            body.len(),
            8 * shape.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
        .collect();
    ActivationTensor::new(shape, data)
}

pub fn write_raw(path: &Path, t: &ActivationTensor) -> Result<()> {
    let bytes = encode_raw(t)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_raw(path: &Path) -> Result<ActivationTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_raw(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardized_gaussian_batch() {
        let src = InputSource::SyntheticGaussian { h: 8, w: 8, c: 3 };
        let t = load_batch(&src, 4, &mut Rng::new(1), true).unwrap();
        assert_eq!(t.shape(), Shape::new(4, 8, 8, 3));
        for n in 0..4 {
            let (m, v) = mean_var(t.sample(n));
            assert!(m.abs() < 1e-12);
            assert!((v + m * m - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn standardization_is_idempotent() {
        let src = InputSource::SyntheticStructured { h: 6, w: 6, c: 2, correlation_length: 1.5 };
        let once = load_batch(&src, 3, &mut Rng::new(2), true).unwrap();
        let twice = standardize_per_sample(&once).unwrap();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_sample_is_degenerate() {
        let mut data = vec![1.0; 2 * 4];
        data[4..].iter_mut().for_each(|v| *v = 0.0);
        let t = ActivationTensor::new(Shape::new(2, 2, 2, 1), data).unwrap();
        assert!(matches!(standardize_per_sample(&t), Err(Error::DegenerateInput { sample: 0 })));
    }

    #[test]
    fn malformed_cifar_record() {
        assert!(matches!(parse_cifar(&[0u8; 3072], Path::new("x")), Err(Error::Format { .. })));
        assert!(parse_cifar(&[], Path::new("x")).is_err());
    }

    #[test]
    fn batch_size_checked() {
        let src = InputSource::SyntheticGaussian { h: 2, w: 2, c: 1 };
        assert!(load_batch(&src, 1, &mut Rng::new(0), false).is_err());
        let src = InputSource::SyntheticGaussian { h: 1, w: 2, c: 1 };
        assert!(load_batch(&src, 2, &mut Rng::new(0), false).is_err());
    }

    #[test]
    fn raw_header_checks() {
        let t = ActivationTensor::filled(Shape::new(1, 2, 2, 1), 0.5);
        let mut bytes = encode_raw(&t).unwrap();
        assert_eq!(bytes.len(), RAW_HEADER_LEN + 32);
        assert_eq!(decode_raw(&bytes, Path::new("x")).unwrap(), t);
        bytes.pop();
        assert!(decode_raw(&bytes, Path::new("x")).is_err());
        assert!(decode_raw(b"NOPE", Path::new("x")).is_err());
    }
}
