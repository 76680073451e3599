//! MRC2014 volume I/O and newline-delimited JSON sidecars.
//!
//! Only mode 2 (little-endian 32-bit float) is read or written. Column,
//! row and section axes are fixed to x, y, z, which places the `w` index
//! fastest on disk exactly as in memory.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Quaternion;
use crate::volume::DensityVolume;

pub const HEADER_LEN: usize = 1024;
const MODE_FLOAT32: i32 = 2;
const MACHINE_STAMP_LE: [u8; 4] = [0x44, 0x44, 0x00, 0x00];
const NVERSION: i32 = 20140;

// Byte offsets of the header words that are read or written.
const OFF_NX: usize = 0;
const OFF_MODE: usize = 12;
const OFF_MX: usize = 28;
const OFF_CELLA: usize = 40;
const OFF_CELLB: usize = 52;
const OFF_MAPC: usize = 64;
const OFF_DMIN: usize = 76;
const OFF_NSYMBT: usize = 92;
const OFF_EXTTYP: usize = 104;
const OFF_NVERSION: usize = 108;
const OFF_ORIGIN: usize = 196;
const OFF_MAP: usize = 208;
const OFF_MACHST: usize = 212;
const OFF_RMS: usize = 216;
const OFF_NLABL: usize = 220;
const OFF_LABELS: usize = 224;

/// Header values decoded from an MRC file.
#[derive(Debug, Clone, PartialEq)]
pub struct MrcHeader {
    /// `(nx, ny, nz)`.
    pub n: [i32; 3],
    pub mode: i32,
    pub cella: [f32; 3],
    pub dmin: f32,
    pub dmax: f32,
    pub dmean: f32,
    pub rms: f32,
    pub origin: [f32; 3],
    pub nsymbt: i32,
}

fn get_i32(buf: &[u8], off: usize) -> i32 {
    i32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

fn get_f32(buf: &[u8], off: usize) -> f32 {
    f32::from_le_bytes(buf[off..off + 4].try_into().unwrap())
}

fn put_i32(buf: &mut [u8], off: usize, v: i32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

fn put_f32(buf: &mut [u8], off: usize, v: f32) {
    buf[off..off + 4].copy_from_slice(&v.to_le_bytes());
}

/// Decodes and validates a 1024-byte header.
pub fn parse_header(buf: &[u8]) -> Result<MrcHeader> {
    if buf.len() < HEADER_LEN {
        return Err(Error::format("header", format!("{} bytes, need {HEADER_LEN}", buf.len())));
    }
    if buf[OFF_MACHST..OFF_MACHST + 2] != MACHINE_STAMP_LE[..2] {
        return Err(Error::format(
            "machst",
            format!("machine stamp {:02x?} is not little-endian", &buf[OFF_MACHST..OFF_MACHST + 4]),
        ));
    }
    let n = [get_i32(buf, OFF_NX), get_i32(buf, OFF_NX + 4), get_i32(buf, OFF_NX + 8)];
    for (name, v) in ["nx", "ny", "nz"].into_iter().zip(n) {
        if v <= 0 {
            return Err(Error::format(name, format!("dimension {v} is not positive")));
        }
    }
    let mode = get_i32(buf, OFF_MODE);
    if mode != MODE_FLOAT32 {
        return Err(Error::UnsupportedMode(mode));
    }
    if &buf[OFF_MAP..OFF_MAP + 3] != b"MAP" {
        return Err(Error::format("map", "missing `MAP ` identifier"));
    }
    let axes = [get_i32(buf, OFF_MAPC), get_i32(buf, OFF_MAPC + 4), get_i32(buf, OFF_MAPC + 8)];
    if axes != [1, 2, 3] {
        return Err(Error::format("mapc", format!("axis order {axes:?} is not [1, 2, 3]")));
    }
    let nsymbt = get_i32(buf, OFF_NSYMBT);
    if nsymbt < 0 {
        return Err(Error::format("nsymbt", format!("negative extended header size {nsymbt}")));
    }
    let cella = [get_f32(buf, OFF_CELLA), get_f32(buf, OFF_CELLA + 4), get_f32(buf, OFF_CELLA + 8)];
    let m = [get_i32(buf, OFF_MX), get_i32(buf, OFF_MX + 4), get_i32(buf, OFF_MX + 8)];
    if m[0] <= 0 || !(cella[0] > 0.0) || !cella[0].is_finite() {
        return Err(Error::format("cella", format!("cannot derive voxel size from cella {cella:?} and mx {}", m[0])));
    }
    Ok(MrcHeader {
        n,
        mode,
        cella,
        dmin: get_f32(buf, OFF_DMIN),
        dmax: get_f32(buf, OFF_DMIN + 4),
        dmean: get_f32(buf, OFF_DMIN + 8),
        rms: get_f32(buf, OFF_RMS),
        origin: [get_f32(buf, OFF_ORIGIN), get_f32(buf, OFF_ORIGIN + 4), get_f32(buf, OFF_ORIGIN + 8)],
        nsymbt,
    })
}

/// Reads a mode-2 MRC file into a volume.
pub fn read_mrc(path: impl AsRef<Path>) -> Result<DensityVolume> {
    let path = path.as_ref();
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    file.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    decode_mrc(&bytes)
}

/// Decodes an in-memory MRC image.
pub fn decode_mrc(bytes: &[u8]) -> Result<DensityVolume> {
    let header = parse_header(bytes)?;
    let [nx, ny, nz] = header.n.map(|v| v as usize);
    let count = nx * ny * nz;
    let start = HEADER_LEN + header.nsymbt as usize;
    let need = start + count * 4;
    if bytes.len() < need {
        return Err(Error::format(
            "data",
            format!("file holds {} bytes but the header implies {need}", bytes.len()),
        ));
    }
    let data: Vec<f32> = bytes[start..need]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let mx = get_i32(bytes, OFF_MX) as f32;
    let mut vol = DensityVolume::from_vec([nz, ny, nx], data, header.cella[0] / mx)?;
    vol.origin = header.origin;
    Ok(vol)
}

/// Writes `vol` as a mode-2 MRC2014 file.
pub fn write_mrc(vol: &DensityVolume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    out.write_all(&encode_header(vol)).map_err(|e| Error::io(path, e))?;
    let mut payload = Vec::with_capacity(vol.len() * 4);
    for v in vol.data() {
        payload.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&payload).map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

/// Builds the 1024-byte header for `vol`, including density statistics.
pub fn encode_header(vol: &DensityVolume) -> [u8; HEADER_LEN] {
    let mut h = [0u8; HEADER_LEN];
    let [nd, nh, nw] = vol.dims();
    let n = [nw as i32, nh as i32, nd as i32];
    for (i, v) in n.iter().enumerate() {
        put_i32(&mut h, OFF_NX + 4 * i, *v);
        put_i32(&mut h, OFF_MX + 4 * i, *v);
        put_f32(&mut h, OFF_CELLA + 4 * i, vol.voxel_size * *v as f32);
        put_f32(&mut h, OFF_CELLB + 4 * i, 90.0);
        put_i32(&mut h, OFF_MAPC + 4 * i, i as i32 + 1);
        put_f32(&mut h, OFF_ORIGIN + 4 * i, vol.origin[i]);
    }
    put_i32(&mut h, OFF_MODE, MODE_FLOAT32);

    let mean = vol.mean();
    let rms = vol.variance().sqrt();
    put_f32(&mut h, OFF_DMIN, vol.min());
    put_f32(&mut h, OFF_DMIN + 4, vol.max());
    put_f32(&mut h, OFF_DMIN + 8, mean as f32);
    put_f32(&mut h, OFF_RMS, rms as f32);

    // ispg 1 marks a single volume.
    put_i32(&mut h, 88, 1);
    put_i32(&mut h, OFF_NSYMBT, 0);
    h[OFF_EXTTYP..OFF_EXTTYP + 4].copy_from_slice(b"    ");
    put_i32(&mut h, OFF_NVERSION, NVERSION);
    h[OFF_MAP..OFF_MAP + 4].copy_from_slice(b"MAP ");
    h[OFF_MACHST..OFF_MACHST + 4].copy_from_slice(&MACHINE_STAMP_LE);
    put_i32(&mut h, OFF_NLABL, 1);
    let label = b"cryoforge";
    h[OFF_LABELS..OFF_LABELS + label.len()].copy_from_slice(label);
    for b in &mut h[OFF_LABELS + label.len()..OFF_LABELS + 80] {
        *b = b' ';
    }
    h
}

/// Discrete SNR levels carried in subtomogram records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SnrTag {
    /// Nearly noise-free reference, SNR 100.
    #[serde(rename = "clean")]
    Clean,
    #[serde(rename = "0.1")]
    Snr0_10,
    #[serde(rename = "0.05")]
    Snr0_05,
    #[serde(rename = "0.03")]
    Snr0_03,
    #[serde(rename = "0.01")]
    Snr0_01,
}

impl SnrTag {
    pub const ALL: [SnrTag; 5] = [
        SnrTag::Clean,
        SnrTag::Snr0_10,
        SnrTag::Snr0_05,
        SnrTag::Snr0_03,
        SnrTag::Snr0_01,
    ];

    pub fn value(self) -> f64 {
        match self {
            SnrTag::Clean => 100.0,
            SnrTag::Snr0_10 => 0.10,
            SnrTag::Snr0_05 => 0.05,
            SnrTag::Snr0_03 => 0.03,
            SnrTag::Snr0_01 => 0.01,
        }
    }

    pub fn from_value(v: f64) -> Option<SnrTag> {
        SnrTag::ALL.into_iter().find(|t| (t.value() - v).abs() <= 1e-12 * t.value())
    }

    /// Filename stem used in the output layout.
    pub fn label(self) -> &'static str {
        match self {
            SnrTag::Clean => "snr100",
            SnrTag::Snr0_10 => "snr0.1",
            SnrTag::Snr0_05 => "snr0.05",
            SnrTag::Snr0_03 => "snr0.03",
            SnrTag::Snr0_01 => "snr0.01",
        }
    }
}

/// Ground truth carried alongside each written subtomogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubtomogramRecord {
    pub volume_path: String,
    /// PDB identifier of the source structure.
    pub class_label: String,
    /// Offset of the crop center from the particle center, voxels `(x, y, z)`.
    pub center_offset: [f64; 3],
    pub orientation: Quaternion,
    pub snr_tag: SnrTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

impl SubtomogramRecord {
    pub fn validate(&self) -> Result<()> {
        let norm = self.orientation.norm();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(format!(
                "orientation quaternion has norm {norm}, expected 1"
            )));
        }
        if self.center_offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::Contract("non-finite center offset".into()));
        }
        Ok(())
    }
}

/// Writes one JSON object per line.
pub fn write_ndjson<T: Serialize>(items: &[T], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(item).map_err(|e| Error::Contract(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Appends one JSON line to `path`, creating it if needed.
pub fn append_ndjson<T: Serialize>(item: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let line = serde_json::to_string(item).map_err(|e| Error::Contract(e.to_string()))?;
    writeln!(file, "{line}").map_err(|e| Error::io(path, e))
}

/// Reads newline-delimited JSON; blank lines are skipped. Errors carry the
/// 1-based line number.
pub fn read_ndjson<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut items = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            reason: e.to_string(),
        })?;
        items.push(item);
    }
    Ok(items)
}

pub fn write_metadata(records: &[SubtomogramRecord], path: impl AsRef<Path>) -> Result<()> {
    for r in records {
        r.validate()?;
    }
    write_ndjson(records, path)
}

pub fn read_metadata(path: impl AsRef<Path>) -> Result<Vec<SubtomogramRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |reason: String| Error::Parse { line: i + 1, reason };
        let rec: SubtomogramRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        rec.validate().map_err(|e| parse_err(e.to_string()))?;
        records.push(rec);
    }
    Ok(records)
}
