//! Named-tensor checkpoint archive.
//!
//! ```text
//! TOMOGAN-CKPT 1
//! meta <key> <value>
//! tensor <name> <param|buffer> f32 <d0,d1,..> <offset> <byte_len>
//! end
//! <zero padding to a multiple of 8>
//! <payloads, little-endian f32, each starting on an 8-byte boundary>
//! <SHA-256 of all preceding bytes>
//! ```
//!
//! Offsets are relative to the first payload byte.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::graph::{ParamSet, ParamSpec};

const MAGIC: &str = "TOMOGAN-CKPT 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    pub fn new(params: ParamSet<f32>) -> Self {
        Checkpoint {
            meta: BTreeMap::new(),
            params,
        }
    }

    pub fn with_meta(mut self, key: &str, value: impl ToString) -> Self {
        self.meta.insert(key.into(), value.to_string());
        self
    }

    pub fn meta_usize(&self, key: &str) -> Result<usize> {
        let raw = self.meta.get(key).ok_or_else(|| {
            Error::IncompatibleCheckpoint(format!("checkpoint lacks `{key}` metadata"))
        })?;
        raw.parse().map_err(|_| {
            Error::IncompatibleCheckpoint(format!("metadata `{key}` = `{raw}` is not an integer"))
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut header = format!("{MAGIC}\n");
        for (k, v) in &self.meta {
            header.push_str(&format!("meta {k} {v}\n"));
        }
        let mut offset = 0usize;
        for spec in &self.params.specs {
            let len = spec.len() * 4;
            let dims: Vec<String> = spec.shape.iter().map(|d| d.to_string()).collect();
            let role = if spec.trainable { "param" } else { "buffer" };
            header.push_str(&format!(
                "tensor {} {role} f32 {} {offset} {len}\n",
                spec.name,
                dims.join(",")
            ));
            offset += len.next_multiple_of(8);
        }
        header.push_str("end\n");
        let mut bytes = header.into_bytes();
        bytes.resize(bytes.len().next_multiple_of(8), 0);
        for values in &self.params.values {
            for v in values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            bytes.resize(bytes.len().next_multiple_of(8), 0);
        }
        let digest = Sha256::digest(&bytes);
        bytes.extend_from_slice(&digest);
        bytes
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let corrupt = |reason: String| Error::CorruptFile {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < 32 {
            return Err(corrupt("file too short".into()));
        }
        let (body, stored) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != stored {
            return Err(corrupt("digest mismatch".into()));
        }
        let end = find_header_end(body).ok_or_else(|| corrupt("no header terminator".into()))?;
        let header = std::str::from_utf8(&body[..end]).map_err(|_| corrupt("header is not UTF-8".into()))?;
        let base = end.next_multiple_of(8);
        let mut lines = header.lines();
        if lines.next() != Some(MAGIC) {
            return Err(corrupt("bad magic line".into()));
        }
        let mut meta = BTreeMap::new();
        let mut specs = Vec::new();
        let mut values = Vec::new();
        for line in lines {
            let fields: Vec<&str> = line.split(' ').collect();
            match fields.as_slice() {
                ["meta", key, rest @ ..] => {
                    meta.insert(key.to_string(), rest.join(" "));
                }
                ["tensor", name, role, dtype, dims, offset, len] => {
                    if *dtype != "f32" {
                        return Err(Error::IncompatibleCheckpoint(format!(
                            "tensor `{name}` has unsupported dtype {dtype}"
                        )));
                    }
                    let shape = dims
                        .split(',')
                        .filter(|d| !d.is_empty())
                        .map(|d| d.parse::<usize>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| corrupt(format!("bad shape for `{name}`")))?;
                    let offset: usize = offset.parse().map_err(|_| corrupt("bad offset".into()))?;
                    let len: usize = len.parse().map_err(|_| corrupt("bad length".into()))?;
                    let count: usize = shape.iter().product();
                    if len != count * 4 || offset % 8 != 0 {
                        return Err(corrupt(format!("inconsistent extent for `{name}`")));
                    }
                    let start = base + offset;
                    let chunk = body
                        .get(start..start + len)
                        .ok_or_else(|| corrupt(format!("payload of `{name}` out of bounds")))?;
                    values.push(
                        chunk
                            .chunks_exact(4)
                            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                            .collect(),
                    );
                    specs.push(ParamSpec {
                        name: name.to_string(),
                        shape,
                        trainable: *role == "param",
                    });
                }
                ["end"] => break,
                _ => return Err(corrupt(format!("unparseable header line `{line}`"))),
            }
        }
        Ok(Checkpoint {
            meta,
            params: ParamSet { specs, values },
        })
    }
}

fn find_header_end(body: &[u8]) -> Option<usize> {
    let pat = b"\nend\n";
    body.windows(pat.len())
        .position(|w| w == pat)
        .map(|p| p + pat.len())
}

/// Hex SHA-256 of a checkpoint's serialized form.
pub fn checkpoint_digest(ckpt: &Checkpoint) -> String {
    let bytes = ckpt.to_bytes();
    hex::encode(&bytes[bytes.len() - 32..])
}

/// Writes atomically (temporary file then rename). Returns the digest.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<String> {
    let bytes = ckpt.to_bytes();
    super::write_atomic(path, &bytes)?;
    Ok(hex::encode(&bytes[bytes.len() - 32..]))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let specs = vec![
            ParamSpec {
                name: "a.weight".into(),
                shape: vec![2, 3],
                trainable: true,
            },
            ParamSpec {
                name: "a.bias".into(),
                shape: vec![1],
                trainable: false,
            },
        ];
        let params = ParamSet {
            specs,
            values: vec![vec![1.0, -2.5, 3.25, 0.0, f32::MIN_POSITIVE, 7.0], vec![0.125]],
        };
        Checkpoint::new(params).with_meta("kind", "test")
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        let c = sample();
        save_checkpoint(&p, &c).unwrap();
        let first = std::fs::read(&p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, c);
        save_checkpoint(&p, &back).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn payloads_are_aligned() {
        let bytes = sample().to_bytes();
        let header = std::str::from_utf8(&bytes[..find_header_end(&bytes).unwrap()]).unwrap();
        assert!(header.contains("tensor a.bias buffer f32 1 24 4"));
        assert_eq!((bytes.len() - 32) % 8, 0);
    }

    #[test]
    fn flipped_byte_is_detected() {
        let mut bytes = sample().to_bytes();
        let k = bytes.len() - 40;
        bytes[k] ^= 1;
        let err = Checkpoint::from_bytes(&bytes, Path::new("x")).unwrap_err();
        assert!(matches!(err, Error::CorruptFile { .. }));
    }
}
