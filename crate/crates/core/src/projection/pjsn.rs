//! Projection tensor files.
//!
//! Binary layout, all integers little-endian:
//!
//! ```text
//! "PJSN"          4 bytes magic
//! version         u8 (= 1)
//! channel count   u32
//! h, w            u32, u32   dims of the first channel
//! per channel:    plane u8, statistic u8, eigen index u16, h u32, w u32
//! payloads        row-major f32 per channel, in descriptor order
//! ```
//!
//! Planes of a non-cubic volume have different image sizes, hence the
//! per-channel dims. A JSON sidecar (same stem, `.json`) carries the subject
//! id and each channel's min/max.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Channel, ChannelId, Image2D, Plane, ProjectionSet, Statistic};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PJSN";
pub const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelRange {
    pub channel: String,
    pub min: f32,
    pub max: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSidecar {
    pub subject_id: String,
    pub normalization: Vec<ChannelRange>,
}

pub fn encode(set: &ProjectionSet) -> Vec<u8> {
    let chans = set.channels();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.extend_from_slice(&(chans.len() as u32).to_le_bytes());
    let (h0, w0) = chans.first().map(|c| c.image.dims()).unwrap_or((0, 0));
    out.extend_from_slice(&(h0 as u32).to_le_bytes());
    out.extend_from_slice(&(w0 as u32).to_le_bytes());
    for c in chans {
        let (code, k) = c.id.statistic.code();
        out.push(c.id.plane.code());
        out.push(code);
        out.extend_from_slice(&k.to_le_bytes());
        let (h, w) = c.image.dims();
        out.extend_from_slice(&(h as u32).to_le_bytes());
        out.extend_from_slice(&(w as u32).to_le_bytes());
    }
    for c in chans {
        for v in c.image.data() {
            out.extend_from_slice(&v.to_le_bytes());
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
        if self.pos + n > self.bytes.len() {
            return Err(Error::Corruption(format!(
                "projection file truncated at byte {} (need {n} more)",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

pub fn decode(subject_id: &str, bytes: &[u8]) -> Result<ProjectionSet> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(Error::Format("missing PJSN magic".into()));
    }
    let version = cur.u8()?;
    if version != VERSION {
        return Err(Error::Format(format!("unsupported PJSN version {version}")));
    }
    let count = cur.u32()? as usize;
    let _h0 = cur.u32()?;
    let _w0 = cur.u32()?;
    let mut descs = Vec::with_capacity(count);
    for _ in 0..count {
        let plane = cur.u8()?;
        let stat = cur.u8()?;
        let k = cur.u16()?;
        let h = cur.u32()? as usize;
        let w = cur.u32()? as usize;
        let plane = Plane::from_code(plane)
            .ok_or_else(|| Error::Format(format!("bad plane code {plane}")))?;
        let stat = Statistic::from_code(stat, k)
            .ok_or_else(|| Error::Format(format!("bad statistic code {stat}/{k}")))?;
        descs.push((ChannelId::new(plane, stat), h, w));
    }
    let mut channels = Vec::with_capacity(count);
    for (id, h, w) in descs {
        let raw = cur.take(4 * h * w)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        channels.push(Channel {
            id,
            image: Image2D::new(h, w, data)?,
        });
    }
    if cur.pos != bytes.len() {
        return Err(Error::Corruption(format!(
            "{} trailing bytes after projection payload",
            bytes.len() - cur.pos
        )));
    }
    ProjectionSet::new(subject_id, channels)
}

pub fn sidecar_of(set: &ProjectionSet) -> ProjectionSidecar {
    ProjectionSidecar {
        subject_id: set.subject_id.clone(),
        normalization: set
            .channels()
            .iter()
            .map(|c| {
                let (min, max) = c.image.min_max();
                ChannelRange {
                    channel: c.id.to_string(),
                    min,
                    max,
                }
            })
            .collect(),
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}

pub fn write(set: &ProjectionSet, path: &Path) -> Result<()> {
    fs::write(path, encode(set)).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    fs::write(&side, serde_json::to_string_pretty(&sidecar_of(set))?)
        .map_err(|e| Error::io(&side, e))
}

/// Reads a projection file. The subject id comes from the sidecar when
/// present, otherwise from the file stem.
pub fn read(path: &Path) -> Result<ProjectionSet> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let side = sidecar_path(path);
    let subject = match fs::read_to_string(&side) {
        Ok(text) => serde_json::from_str::<ProjectionSidecar>(&text)?.subject_id,
        Err(_) => path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_string(),
    };
    decode(&subject, &bytes)
}
