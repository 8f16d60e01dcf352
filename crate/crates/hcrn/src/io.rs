//! Tensor container format and checkpoint round-tripping.
//!
//! One container file holds named tensors. Byte layout (all integers
//! little-endian):
//!
//! ```text
//! magic   8 bytes  "HCRNTNSR"
//! version u32      currently 1
//! count   u32      number of entries
//! entry:
//!   name_len u32
//!   name     name_len bytes, UTF-8
//!   dtype    u8      1 = f64, 2 = i64
//!   rank     u32
//!   extents  rank x u64
//!   values   product(extents) x 8 bytes, little-endian
//! ```
//!
//! Checkpoints are containers of `f64` entries keyed by parameter name;
//! loading validates the name set and every shape against the target model
//! so that an ablated model rejects a full model's checkpoint and vice
//! versa.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

use crate::params::ModelParams;
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"HCRNTNSR";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a tensor container (bad magic)")]
    BadMagic,
    #[error("container version {got}, expected {want}")]
    Version { got: u32, want: u32 },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("checkpoint does not match model: missing {missing:?}, unexpected {extra:?}")]
    NameMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("checkpoint tensor `{name}` has shape {got:?}, model expects {want:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        want: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F64(Vec<f64>),
    I64(Vec<i64>),
}

impl TensorData {
    fn len(&self) -> usize {
        match self {
            TensorData::F64(v) => v.len(),
            TensorData::I64(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: TensorData,
}

pub fn write_container<W: Write>(mut w: W, entries: &[Entry]) -> Result<(), IoError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(entries.len() as u32).to_le_bytes())?;
    for e in entries {
        let numel: usize = e.shape.iter().product();
        if numel != e.data.len() {
            return Err(IoError::Malformed(format!(
                "entry {} shape {:?} does not hold {} values",
                e.name,
                e.shape,
                e.data.len()
            )));
        }
        w.write_all(&(e.name.len() as u32).to_le_bytes())?;
        w.write_all(e.name.as_bytes())?;
        let tag: u8 = match e.data {
            TensorData::F64(_) => 1,
            TensorData::I64(_) => 2,
        };
        w.write_all(&[tag])?;
        w.write_all(&(e.shape.len() as u32).to_le_bytes())?;
        for &ext in &e.shape {
            w.write_all(&(ext as u64).to_le_bytes())?;
        }
        match &e.data {
            TensorData::F64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::I64(v) => {
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_container<R: Read>(mut r: R) -> Result<Vec<Entry>, IoError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(IoError::BadMagic);
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(IoError::Version {
            got: version,
            want: VERSION,
        });
    }
    r.read_exact(&mut u32buf)?;
    let count = u32::from_le_bytes(u32buf) as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        r.read_exact(&mut u32buf)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes)
            .map_err(|_| IoError::Malformed("entry name is not UTF-8".into()))?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        r.read_exact(&mut u32buf)?;
        let rank = u32::from_le_bytes(u32buf) as usize;
        let mut shape = Vec::with_capacity(rank);
        let mut u64buf = [0u8; 8];
        for _ in 0..rank {
            r.read_exact(&mut u64buf)?;
            shape.push(u64::from_le_bytes(u64buf) as usize);
        }
        let numel: usize = shape.iter().product();
        let data = match tag[0] {
            1 => {
                let mut v = Vec::with_capacity(numel);
                for _ in 0..numel {
                    r.read_exact(&mut u64buf)?;
                    v.push(f64::from_le_bytes(u64buf));
                }
                TensorData::F64(v)
            }
            2 => {
                let mut v = Vec::with_capacity(numel);
                for _ in 0..numel {
                    r.read_exact(&mut u64buf)?;
                    v.push(i64::from_le_bytes(u64buf));
                }
                TensorData::I64(v)
            }
            other => {
                return Err(IoError::Malformed(format!(
                    "unknown dtype tag {other} for entry {name}"
                )))
            }
        };
        entries.push(Entry { name, shape, data });
    }
    Ok(entries)
}

pub fn write_container_file(path: &Path, entries: &[Entry]) -> Result<(), IoError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_container(&mut w, entries)?;
    w.flush()?;
    Ok(())
}

pub fn read_container_file(path: &Path) -> Result<Vec<Entry>, IoError> {
    read_container(BufReader::new(File::open(path)?))
}

/// Save model parameters; entries are written in sorted-name order so the
/// byte stream is a pure function of the parameter values.
pub fn save_params(path: &Path, params: &ModelParams) -> Result<(), IoError> {
    let entries: Vec<Entry> = params
        .iter()
        .map(|(name, t)| Entry {
            name: name.to_string(),
            shape: t.shape.clone(),
            data: TensorData::F64(t.data.clone()),
        })
        .collect();
    write_container_file(path, &entries)
}

/// Load a checkpoint into a parameter set with exactly the given names and
/// shapes (normally a freshly initialized model).
pub fn load_params(path: &Path, template: &ModelParams) -> Result<ModelParams, IoError> {
    let entries = read_container_file(path)?;
    let have: BTreeSet<String> = entries.iter().map(|e| e.name.clone()).collect();
    let want: BTreeSet<String> = template.names().map(str::to_string).collect();
    if have != want {
        let missing: Vec<String> = want.difference(&have).cloned().collect();
        let extra: Vec<String> = have.difference(&want).cloned().collect();
        return Err(IoError::NameMismatch { missing, extra });
    }
    let mut out = ModelParams::new();
    for e in entries {
        let expected = template.get(&e.name).unwrap();
        if e.shape != expected.shape {
            return Err(IoError::ShapeMismatch {
                name: e.name,
                got: e.shape,
                want: expected.shape.clone(),
            });
        }
        let data = match e.data {
            TensorData::F64(v) => v,
            TensorData::I64(_) => {
                return Err(IoError::Malformed(format!(
                    "parameter {} stored with integer dtype",
                    e.name
                )))
            }
        };
        out.insert(
            &e.name,
            Tensor {
                shape: e.shape,
                data,
            },
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn sample_params() -> ModelParams {
        let mut rng = seed::rng(1);
        let mut p = ModelParams::new();
        p.init_linear("layer.w", 3, 2, &mut rng);
        p.init_zeros("layer.b", vec![2]);
        p.init_uniform("embed", vec![4, 3], 0.08, &mut rng);
        p
    }

    #[test]
    fn container_roundtrip_mixed_dtypes() {
        let entries = vec![
            Entry {
                name: "reals".into(),
                shape: vec![2, 2],
                data: TensorData::F64(vec![1.5, -2.25, 0.0, f64::MIN_POSITIVE]),
            },
            Entry {
                name: "ints".into(),
                shape: vec![3],
                data: TensorData::I64(vec![-7, 0, i64::MAX]),
            },
        ];
        let mut buf = Vec::new();
        write_container(&mut buf, &entries).unwrap();
        let back = read_container(buf.as_slice()).unwrap();
        assert_eq!(entries, back);
    }

    #[test]
    fn save_load_save_is_bit_identical() {
        let dir = std::env::temp_dir().join("hcrn_io_test_roundtrip");
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.bin");
        let p2 = dir.join("b.bin");
        let params = sample_params();
        save_params(&p1, &params).unwrap();
        let loaded = load_params(&p1, &params).unwrap();
        save_params(&p2, &loaded).unwrap();
        let bytes1 = std::fs::read(&p1).unwrap();
        let bytes2 = std::fs::read(&p2).unwrap();
        assert_eq!(bytes1, bytes2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn version_tag_mismatch_rejected() {
        let params = sample_params();
        let mut buf = Vec::new();
        {
            let entries: Vec<Entry> = params
                .iter()
                .map(|(name, t)| Entry {
                    name: name.to_string(),
                    shape: t.shape.clone(),
                    data: TensorData::F64(t.data.clone()),
                })
                .collect();
            write_container(&mut buf, &entries).unwrap();
        }
        buf[8] = 99; // clobber the version field
        match read_container(buf.as_slice()) {
            Err(IoError::Version { got: 99, want: 1 }) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn architecture_mismatch_names_the_offenders() {
        let dir = std::env::temp_dir().join("hcrn_io_test_mismatch");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("full.bin");
        let full = sample_params();
        save_params(&path, &full).unwrap();

        // ablated template lacks `embed`: the stored extra tensor is rejected
        let mut ablated = ModelParams::new();
        ablated.insert("layer.w", full.get("layer.w").unwrap().clone());
        ablated.insert("layer.b", full.get("layer.b").unwrap().clone());
        match load_params(&path, &ablated) {
            Err(IoError::NameMismatch { missing, extra }) => {
                assert!(missing.is_empty());
                assert_eq!(extra, vec!["embed".to_string()]);
            }
            other => panic!("expected name mismatch, got {other:?}"),
        }

        // wrong shape is named
        let mut reshaped = full.clone();
        reshaped.insert("layer.b", Tensor::zeros(vec![5]));
        match load_params(&path, &reshaped) {
            Err(IoError::ShapeMismatch { name, got, want }) => {
                assert_eq!(name, "layer.b");
                assert_eq!(got, vec![2]);
                assert_eq!(want, vec![5]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bad_magic_rejected() {
        let buf = b"NOTMAGIC\x01\x00\x00\x00\x00\x00\x00\x00".to_vec();
        assert!(matches!(
            read_container(buf.as_slice()),
            Err(IoError::BadMagic)
        ));
    }
}
