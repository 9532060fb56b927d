//! Checkpoint serialization: a text manifest (key-value fields and an
//! ordered parameter table with name, shape, byte offset) followed by one
//! blob of little-endian f32. Save → load round-trips bit-exactly.

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ConditioningMode, DiT, ModelConfig};
use crate::nn::Parameter;

const HEADER: &str = "MODLAB-CKPT v1";
const BLOB_MARKER: &str = "---BLOB---";
const MAX_PARAMS: usize = 65_536;
const MAX_BLOB_BYTES: usize = 1 << 29;

pub const CHECKPOINT_KIND_MODEL: &str = "model";
pub const CHECKPOINT_KIND_ADAPTER: &str = "adapter";

/// Parsed checkpoint: manifest fields plus named parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    /// Ordered key=value manifest fields.
    pub fields: Vec<(String, String)>,
    /// Ordered (name, shape, values).
    pub params: Vec<(String, Vec<usize>, Vec<f32>)>,
}

impl Checkpoint {
    pub fn field(&self, key: &str) -> Option<&str> {
        self.fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn field_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        self.field(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing field `{key}`")))?
            .parse()
            .map_err(|_| Error::Checkpoint(format!("field `{key}` is malformed")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut head = String::new();
        head.push_str(HEADER);
        head.push('\n');
        head.push_str(&format!("kind={}\n", self.kind));
        for (k, v) in &self.fields {
            head.push_str(&format!("field {k}={v}\n"));
        }
        let mut offset = 0usize;
        for (name, shape, values) in &self.params {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            head.push_str(&format!("param {name} {} {offset}\n", dims.join("x")));
            offset += values.len() * 4;
        }
        head.push_str(&format!("blob_bytes={offset}\n"));
        head.push_str(BLOB_MARKER);
        head.push('\n');
        let mut out = head.into_bytes();
        out.reserve(offset);
        for (_, _, values) in &self.params {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Strict parser. All offsets must be sequential and the blob length
    /// must match the table exactly.
    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let marker = format!("{BLOB_MARKER}\n");
        let split = find_subslice(bytes, marker.as_bytes())
            .ok_or_else(|| Error::Checkpoint("missing blob marker".into()))?;
        let head = std::str::from_utf8(&bytes[..split])
            .map_err(|_| Error::Checkpoint("manifest is not UTF-8".into()))?;
        let blob = &bytes[split + marker.len()..];

        let mut lines = head.lines();
        if lines.next() != Some(HEADER) {
            return Err(Error::Checkpoint("bad header".into()));
        }
        let kind_line = lines
            .next()
            .ok_or_else(|| Error::Checkpoint("missing kind".into()))?;
        let kind = kind_line
            .strip_prefix("kind=")
            .ok_or_else(|| Error::Checkpoint("missing kind".into()))?
            .to_string();

        let mut fields = Vec::new();
        let mut table: Vec<(String, Vec<usize>, usize)> = Vec::new();
        let mut blob_bytes: Option<usize> = None;
        for line in lines {
            if let Some(rest) = line.strip_prefix("field ") {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| Error::Checkpoint(format!("malformed field line `{line}`")))?;
                fields.push((k.to_string(), v.to_string()));
            } else if let Some(rest) = line.strip_prefix("param ") {
                let mut parts = rest.split(' ');
                let name = parts
                    .next()
                    .ok_or_else(|| Error::Checkpoint("param line missing name".into()))?;
                let dims = parts
                    .next()
                    .ok_or_else(|| Error::Checkpoint("param line missing shape".into()))?;
                let offset: usize = parts
                    .next()
                    .ok_or_else(|| Error::Checkpoint("param line missing offset".into()))?
                    .parse()
                    .map_err(|_| Error::Checkpoint("bad offset".into()))?;
                if parts.next().is_some() {
                    return Err(Error::Checkpoint(format!("trailing data in `{line}`")));
                }
                let shape: Vec<usize> = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| Error::Checkpoint("bad shape".into()))?;
                if table.len() >= MAX_PARAMS {
                    return Err(Error::Checkpoint("too many parameters".into()));
                }
                table.push((name.to_string(), shape, offset));
            } else if let Some(n) = line.strip_prefix("blob_bytes=") {
                blob_bytes = Some(
                    n.parse()
                        .map_err(|_| Error::Checkpoint("bad blob_bytes".into()))?,
                );
            } else if !line.is_empty() {
                return Err(Error::Checkpoint(format!("unrecognized line `{line}`")));
            }
        }

        let declared = blob_bytes.ok_or_else(|| Error::Checkpoint("missing blob_bytes".into()))?;
        if declared > MAX_BLOB_BYTES {
            return Err(Error::Checkpoint("blob too large".into()));
        }
        if blob.len() != declared {
            return Err(Error::Checkpoint(format!(
                "blob is {} bytes, manifest declares {declared}",
                blob.len()
            )));
        }

        let mut params = Vec::with_capacity(table.len());
        let mut expected_offset = 0usize;
        for (name, shape, offset) in table {
            if offset != expected_offset {
                return Err(Error::Checkpoint(format!(
                    "param `{name}` offset {offset}, expected {expected_offset}"
                )));
            }
            let numel: usize = shape.iter().product();
            if shape.iter().any(|&d| d == 0) || numel == 0 {
                return Err(Error::Checkpoint(format!("param `{name}` has empty shape")));
            }
            let nbytes = numel
                .checked_mul(4)
                .ok_or_else(|| Error::Checkpoint("shape overflow".into()))?;
            if offset + nbytes > blob.len() {
                return Err(Error::Checkpoint(format!("param `{name}` overruns the blob")));
            }
            let mut values = Vec::with_capacity(numel);
            for chunk in blob[offset..offset + nbytes].chunks_exact(4) {
                values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
            }
            expected_offset = offset + nbytes;
            params.push((name, shape, values));
        }
        if expected_offset != blob.len() {
            return Err(Error::Checkpoint("blob has trailing bytes".into()));
        }

        Ok(Checkpoint {
            kind,
            fields,
            params,
        })
    }

    /// Content hash of the serialized checkpoint, for linking adapters to
    /// the exact base they were trained against.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_file(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Checkpoint> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack
        .windows(needle.len())
        .position(|w| w == needle)
}

/// Model-checkpoint metadata carried in the manifest fields.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    pub steps_trained: u64,
    pub init_seed: u64,
    pub encoder_seed: u64,
}

impl CheckpointMeta {
    fn to_fields(&self) -> Vec<(String, String)> {
        let c = &self.config;
        vec![
            ("d_model".into(), c.d_model.to_string()),
            ("n_layers".into(), c.n_layers.to_string()),
            ("heads".into(), c.heads.to_string()),
            ("d_pool".into(), c.d_pool.to_string()),
            ("d_token".into(), c.d_token.to_string()),
            ("patch".into(), c.patch.to_string()),
            ("time_dim".into(), c.time_dim.to_string()),
            ("mlp_multiplier".into(), c.mlp_multiplier.to_string()),
            ("conditioning".into(), c.conditioning.as_str().to_string()),
            ("steps_trained".into(), self.steps_trained.to_string()),
            ("init_seed".into(), self.init_seed.to_string()),
            ("encoder_seed".into(), self.encoder_seed.to_string()),
        ]
    }

    fn from_checkpoint(ckpt: &Checkpoint) -> Result<CheckpointMeta> {
        let config = ModelConfig {
            d_model: ckpt.field_parsed("d_model")?,
            n_layers: ckpt.field_parsed("n_layers")?,
            heads: ckpt.field_parsed("heads")?,
            d_pool: ckpt.field_parsed("d_pool")?,
            d_token: ckpt.field_parsed("d_token")?,
            patch: ckpt.field_parsed("patch")?,
            time_dim: ckpt.field_parsed("time_dim")?,
            mlp_multiplier: ckpt.field_parsed("mlp_multiplier")?,
            conditioning: ConditioningMode::parse(
                ckpt.field("conditioning")
                    .ok_or_else(|| Error::Checkpoint("missing conditioning".into()))?,
            )?,
        };
        Ok(CheckpointMeta {
            config,
            steps_trained: ckpt.field_parsed("steps_trained")?,
            init_seed: ckpt.field_parsed("init_seed")?,
            encoder_seed: ckpt.field_parsed("encoder_seed")?,
        })
    }
}

impl DiT<f32> {
    pub fn to_checkpoint(&self, meta: &CheckpointMeta) -> Result<Checkpoint> {
        if meta.config != self.config {
            return Err(Error::Checkpoint("meta config differs from model config".into()));
        }
        let params = self
            .parameters()
            .into_iter()
            .map(|p| (p.name, p.tensor.shape(), p.tensor.to_vec()))
            .collect();
        Ok(Checkpoint {
            kind: CHECKPOINT_KIND_MODEL.into(),
            fields: meta.to_fields(),
            params,
        })
    }

    /// Rebuilds a model from a checkpoint; the parameter table must match
    /// the architecture exactly (same names, same shapes).
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(DiT<f32>, CheckpointMeta)> {
        if ckpt.kind != CHECKPOINT_KIND_MODEL {
            return Err(Error::Checkpoint(format!(
                "expected a model checkpoint, found kind `{}`",
                ckpt.kind
            )));
        }
        let meta = CheckpointMeta::from_checkpoint(ckpt)?;
        let model = DiT::new(meta.config.clone(), meta.init_seed)?;
        load_parameters(&model.parameters(), &ckpt.params)?;
        Ok((model, meta))
    }

    pub fn save(&self, path: &Path, meta: &CheckpointMeta) -> Result<()> {
        self.to_checkpoint(meta)?.write_file(path)
    }

    pub fn load(path: &Path) -> Result<(DiT<f32>, CheckpointMeta)> {
        let ckpt = Checkpoint::read_file(path)?;
        Self::from_checkpoint(&ckpt)
    }
}

/// Copy checkpoint values into live parameters, insisting on an exact
/// name/shape match in both directions.
pub fn load_parameters(
    live: &[Parameter<f32>],
    stored: &[(String, Vec<usize>, Vec<f32>)],
) -> Result<()> {
    if live.len() != stored.len() {
        return Err(Error::Checkpoint(format!(
            "checkpoint has {} parameters, model has {}",
            stored.len(),
            live.len()
        )));
    }
    for (p, (name, shape, values)) in live.iter().zip(stored) {
        if &p.name != name {
            return Err(Error::Checkpoint(format!(
                "parameter order mismatch: `{}` vs `{name}`",
                p.name
            )));
        }
        if p.tensor.shape() != *shape {
            return Err(Error::Checkpoint(format!(
                "parameter `{name}` has shape {:?}, checkpoint stores {:?}",
                p.tensor.shape(),
                shape
            )));
        }
        p.tensor.set_data(values)?;
    }
    Ok(())
}
