//! Plain-file tensor container: magic bytes, a UTF-8 manifest (one line per
//! tensor: name, space-separated shape, dtype tag, payload offset), a blank
//! line, then raw little-endian f32 payload. One file, no compression.
//!
//! Model checkpoints and clip files share this format.

use std::path::Path;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"CSG3DCT1";

/// An ordered name -> tensor map with a lossless byte serialization.
#[derive(Debug, Clone, Default)]
pub struct Checkpoint {
    entries: IndexMap<String, Tensor<f32>>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor<f32>) -> Result<()> {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::Checkpoint(format!("invalid tensor name {name:?}")));
        }
        if self.entries.insert(name.to_string(), tensor).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor name {name:?}")));
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.entries.get(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<f32>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        let mut offset = 0u64;
        for (name, t) in &self.entries {
            manifest.push_str(name);
            for d in t.shape() {
                manifest.push(' ');
                manifest.push_str(&d.to_string());
            }
            manifest.push_str(" f32 ");
            manifest.push_str(&offset.to_string());
            manifest.push('\n');
            offset += 4 * t.numel() as u64;
        }
        let mut out = Vec::with_capacity(MAGIC.len() + 1 + manifest.len() + 1 + offset as usize);
        out.extend_from_slice(MAGIC);
        out.push(b'\n');
        out.extend_from_slice(manifest.as_bytes());
        out.push(b'\n');
        for (_, t) in &self.entries {
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 1 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("bad magic bytes (want CSG3DCT1)".to_string()));
        }
        if bytes[MAGIC.len()] != b'\n' {
            return Err(Error::Checkpoint("magic not followed by newline".to_string()));
        }

        // Manifest runs until the first blank line.
        let mut pos = MAGIC.len() + 1;
        let mut lines: Vec<&str> = Vec::new();
        let payload_start;
        loop {
            let rest = &bytes[pos..];
            let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| {
                Error::Checkpoint("unterminated manifest (no blank line before payload)".to_string())
            })?;
            let line = &rest[..nl];
            if line.is_empty() {
                payload_start = pos + 1;
                break;
            }
            let line = std::str::from_utf8(line)
                .map_err(|_| Error::Checkpoint("manifest is not valid UTF-8".to_string()))?;
            lines.push(line);
            pos += nl + 1;
        }
        let payload = &bytes[payload_start..];

        let mut entries: IndexMap<String, Tensor<f32>> = IndexMap::new();
        let mut prev_end = 0u64;
        let mut last_offset: Option<u64> = None;
        for (ln, line) in lines.iter().enumerate() {
            let fields: Vec<&str> = line.split(' ').filter(|f| !f.is_empty()).collect();
            if fields.len() < 3 {
                return Err(Error::Checkpoint(format!(
                    "manifest line {}: want `name [shape...] dtype offset`, got {line:?}",
                    ln + 1
                )));
            }
            let name = fields[0];
            let dtype = fields[fields.len() - 2];
            if dtype != "f32" {
                return Err(Error::Checkpoint(format!(
                    "manifest line {}: unsupported dtype {dtype:?}",
                    ln + 1
                )));
            }
            let offset: u64 = fields[fields.len() - 1].parse().map_err(|_| {
                Error::Checkpoint(format!("manifest line {}: bad offset {:?}", ln + 1, fields[fields.len() - 1]))
            })?;
            let mut shape = Vec::new();
            for f in &fields[1..fields.len() - 2] {
                let d: usize = f.parse().map_err(|_| {
                    Error::Checkpoint(format!("manifest line {}: bad shape element {f:?}", ln + 1))
                })?;
                if d == 0 {
                    return Err(Error::Checkpoint(format!("manifest line {}: zero-length axis", ln + 1)));
                }
                shape.push(d);
            }
            if shape.is_empty() {
                shape.push(1);
            }
            let numel: usize = shape.iter().product();
            let byte_len = numel
                .checked_mul(4)
                .ok_or_else(|| Error::Checkpoint(format!("manifest line {}: shape overflows", ln + 1)))? as u64;

            if offset % 4 != 0 {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?}: offset {offset} is not 4-byte aligned"
                )));
            }
            if let Some(lo) = last_offset {
                if offset <= lo {
                    return Err(Error::Checkpoint(format!(
                        "tensor {name:?}: offset {offset} not strictly increasing (previous {lo})"
                    )));
                }
            }
            if offset < prev_end {
                return Err(Error::Checkpoint(format!(
                    "tensor {name:?}: blob at offset {offset} overlaps previous blob ending at {prev_end}"
                )));
            }
            let end = offset.checked_add(byte_len).ok_or_else(|| {
                Error::Checkpoint(format!("tensor {name:?}: offset overflows"))
            })?;
            if end > payload.len() as u64 {
                return Err(Error::Checkpoint(format!(
                    "truncated payload: tensor {name:?} needs bytes {offset}..{end} but payload has {}",
                    payload.len()
                )));
            }
            last_offset = Some(offset);
            prev_end = end;

            let mut data = Vec::with_capacity(numel);
            let blob = &payload[offset as usize..end as usize];
            for chunk in blob.chunks_exact(4) {
                data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
            }
            let tensor = Tensor::new(shape, data)
                .map_err(|e| Error::Checkpoint(format!("tensor {name:?}: {e}")))?;
            if entries.insert(name.to_string(), tensor).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor name {name:?}")));
            }
        }
        if prev_end != payload.len() as u64 {
            return Err(Error::Checkpoint(format!(
                "payload has {} trailing bytes beyond the last manifest entry",
                payload.len() as u64 - prev_end
            )));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::from_bytes(&bytes)
    }
}
