//! FSIG binary feature dumps.
//!
//! Header (14 bytes): magic `FSIG`, u16 version, u32 record count, u32
//! feature dimension. Each record: u16 class label, u8 channel, u32 sample id,
//! then `dim` f32 features. Everything little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::features::Channel;

pub const MAGIC: [u8; 4] = *b"FSIG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 14;
const RECORD_PREFIX: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub class_label: u16,
    pub channel: Channel,
    pub sample_id: u32,
    pub features: Vec<f32>,
}

impl FeatureRecord {
    pub fn new(class_label: u16, channel: Channel, sample_id: u32, features: Vec<f32>) -> Self {
        FeatureRecord {
            class_label,
            channel,
            sample_id,
            features,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureDump {
    pub feature_dim: u32,
    pub records: Vec<FeatureRecord>,
}

pub fn record_len(dim: u32) -> u64 {
    RECORD_PREFIX as u64 + 4 * u64::from(dim)
}

pub fn encode_dump<W: Write>(mut w: W, dim: u32, records: &[FeatureRecord]) -> Result<()> {
    if dim == 0 {
        return Err(Error::format("feature dimension must be positive"));
    }
    let count = u32::try_from(records.len())
        .map_err(|_| Error::format("too many records for one dump"))?;
    for (i, r) in records.iter().enumerate() {
        if r.features.len() != dim as usize {
            return Err(Error::format(format!(
                "record {i} has {} features, dump dimension is {dim}",
                r.features.len()
            )));
        }
        if r.features.iter().any(|f| !f.is_finite()) {
            return Err(Error::format(format!("record {i} has non-finite features")));
        }
    }
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    w.write_all(&dim.to_le_bytes())?;
    let mut buf = Vec::with_capacity(record_len(dim) as usize);
    for r in records {
        buf.clear();
        buf.extend_from_slice(&r.class_label.to_le_bytes());
        buf.push(r.channel.code());
        buf.extend_from_slice(&r.sample_id.to_le_bytes());
        for f in &r.features {
            buf.extend_from_slice(&f.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dump(path: impl AsRef<Path>, dim: u32, records: &[FeatureRecord]) -> Result<()> {
    let file = File::create(path)?;
    encode_dump(BufWriter::new(file), dim, records)
}

/// Decodes a dump, refusing anything whose declared size exceeds `max_bytes`.
pub fn decode_dump<R: Read>(mut r: R, max_bytes: u64) -> Result<FeatureDump> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header).map_err(|e| match e.kind() {
        ErrorKind::UnexpectedEof => Error::format("file shorter than the FSIG header"),
        _ => Error::Io(e),
    })?;
    if header[..4] != MAGIC {
        return Err(Error::format("bad magic, not an FSIG dump"));
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != VERSION {
        return Err(Error::Version {
            found: version.into(),
            supported: VERSION.into(),
        });
    }
    let count = u32::from_le_bytes(header[6..10].try_into().unwrap());
    let dim = u32::from_le_bytes(header[10..14].try_into().unwrap());
    if dim == 0 {
        return Err(Error::format("feature dimension is zero"));
    }
    let declared = u64::from(count)
        .checked_mul(record_len(dim))
        .and_then(|b| b.checked_add(HEADER_LEN as u64))
        .ok_or_else(|| Error::format("declared size overflows"))?;
    if declared > max_bytes {
        return Err(Error::format(format!(
            "declared size {declared} bytes exceeds the {max_bytes}-byte limit"
        )));
    }
    let mut records = Vec::with_capacity((count as usize).min(4096));
    let mut buf = vec![0u8; record_len(dim) as usize];
    for i in 0..count {
        r.read_exact(&mut buf).map_err(|e| match e.kind() {
            ErrorKind::UnexpectedEof => Error::Truncation {
                record_index: i.into(),
            },
            _ => Error::Io(e),
        })?;
        let channel = Channel::from_code(buf[2])
            .map_err(|_| Error::format(format!("record {i} has channel code {}", buf[2])))?;
        let features: Vec<f32> = buf[RECORD_PREFIX..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::format(format!("record {i} has non-finite features")));
        }
        records.push(FeatureRecord {
            class_label: u16::from_le_bytes([buf[0], buf[1]]),
            channel,
            sample_id: u32::from_le_bytes(buf[3..7].try_into().unwrap()),
            features,
        });
    }
    let mut extra = [0u8; 1];
    if r.read(&mut extra)? != 0 {
        return Err(Error::format("trailing bytes after the last record"));
    }
    Ok(FeatureDump {
        feature_dim: dim,
        records,
    })
}

pub fn read_dump(path: impl AsRef<Path>) -> Result<FeatureDump> {
    read_dump_with_limit(path, super::DEFAULT_MAX_BYTES)
}

pub fn read_dump_with_limit(path: impl AsRef<Path>, max_bytes: u64) -> Result<FeatureDump> {
    decode_dump(BufReader::new(File::open(path)?), max_bytes)
}
