//! Binary containers for sweep stacks and field maps, and the calibration
//! CSV format. Single file, fixed little-endian layout: an 8-byte magic, a
//! little-endian u64 header length, a UTF-8 JSON header, then the raw
//! payload. Writing then reading reproduces the in-memory value exactly;
//! reading then writing reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;
use crate::map::{FieldMap, OdmrStack};
use crate::spectra::{Mode, PolarizationDrive};

const STACK_MAGIC: &[u8; 8] = b"QDMSTACK";
const FIELD_MAGIC: &[u8; 8] = b"QDMFIELD";
pub const SCHEMA_VERSION: u32 = 1;

/// Headers larger than this are treated as corruption, not data.
const MAX_HEADER_BYTES: u64 = 1 << 24;

#[derive(Serialize, Deserialize)]
struct StackHeader {
    schema_version: u32,
    m: usize,
    n: usize,
    q: usize,
    freqs_ghz: Vec<f64>,
    pixel_pitch_m: f64,
    mode: Mode,
    bias_field_t: [f64; 3],
    polarization: Option<PolarizationDrive>,
    averages: u32,
    seed: Option<u64>,
    #[serde(default)]
    metadata: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct FieldHeader {
    schema_version: u32,
    m: usize,
    n: usize,
    pixel_pitch_m: f64,
    components: usize,
    zfs_maps: bool,
    residuals: bool,
}

fn read_preamble<R: Read>(r: &mut R, magic: &[u8; 8]) -> Result<Vec<u8>> {
    let mut got = [0u8; 8];
    r.read_exact(&mut got)
        .map_err(|_| Error::Format("file too short for magic".into()))?;
    if &got != magic {
        return Err(Error::Format(format!(
            "bad magic: expected {:?}",
            std::str::from_utf8(magic).unwrap()
        )));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)
        .map_err(|_| Error::Format("file too short for header length".into()))?;
    let header_len = u64::from_le_bytes(len);
    if header_len > MAX_HEADER_BYTES {
        return Err(Error::Format(format!("header length {header_len} not plausible")));
    }
    let mut header = vec![0u8; header_len as usize];
    r.read_exact(&mut header)
        .map_err(|_| Error::Format("truncated header".into()))?;
    Ok(header)
}

fn check_version(version: u32) -> Result<()> {
    if version != SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "schema version {version}, reader supports {SCHEMA_VERSION}"
        )));
    }
    Ok(())
}

fn payload_len(factors: &[usize]) -> Result<usize> {
    factors
        .iter()
        .try_fold(1usize, |acc, &f| acc.checked_mul(f))
        .ok_or_else(|| Error::Format("payload size overflows".into()))
}

fn read_f32_plane<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; len.checked_mul(4).ok_or_else(|| Error::Format("payload size overflows".into()))?];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("truncated {what} payload")))?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn read_f64_plane<R: Read>(r: &mut R, len: usize, what: &str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; len.checked_mul(8).ok_or_else(|| Error::Format("payload size overflows".into()))?];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::Format(format!("truncated {what} payload")))?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
        .collect())
}

fn expect_eof<R: Read>(r: &mut R) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe) {
        Ok(0) => Ok(()),
        Ok(_) => Err(Error::Format("trailing bytes after payload".into())),
        Err(e) => Err(Error::Io(e)),
    }
}

/// Serializes a validated stack. Fluorescence samples are stored as 32-bit
/// floats, frame-major.
pub fn write_stack<W: Write>(w: &mut W, stack: &OdmrStack) -> Result<()> {
    stack.validate()?;
    let header = StackHeader {
        schema_version: SCHEMA_VERSION,
        m: stack.m,
        n: stack.n,
        q: stack.q(),
        freqs_ghz: stack.freqs_ghz.clone(),
        pixel_pitch_m: stack.pixel_pitch_m,
        mode: stack.mode,
        bias_field_t: stack.bias_field_t.as_array(),
        polarization: stack.polarization,
        averages: stack.averages,
        seed: stack.seed,
        metadata: stack.metadata.clone(),
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(STACK_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    for v in &stack.data {
        w.write_all(&(*v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn read_stack<R: Read>(r: &mut R) -> Result<OdmrStack> {
    let header = read_preamble(r, STACK_MAGIC)?;
    let header: StackHeader = serde_json::from_slice(&header)?;
    check_version(header.schema_version)?;
    if header.freqs_ghz.len() != header.q {
        return Err(Error::Format(format!(
            "header declares q = {} but carries {} frequencies",
            header.q,
            header.freqs_ghz.len()
        )));
    }
    let len = payload_len(&[header.q, header.m, header.n])?;
    let data = read_f32_plane(r, len, "stack")?;
    expect_eof(r)?;
    let stack = OdmrStack {
        m: header.m,
        n: header.n,
        freqs_ghz: header.freqs_ghz,
        data,
        pixel_pitch_m: header.pixel_pitch_m,
        mode: header.mode,
        bias_field_t: Vec3::from_array(header.bias_field_t),
        polarization: header.polarization,
        averages: header.averages,
        seed: header.seed,
        metadata: header.metadata,
    };
    stack.validate()?;
    Ok(stack)
}

/// Serializes a validated field map: component planes as 64-bit floats,
/// optional per-orientation splitting planes, the per-pixel residual plane,
/// then one mask byte per pixel.
pub fn write_field_map<W: Write>(w: &mut W, map: &FieldMap) -> Result<()> {
    map.validate()?;
    let header = FieldHeader {
        schema_version: SCHEMA_VERSION,
        m: map.m,
        n: map.n,
        pixel_pitch_m: map.pixel_pitch_m,
        components: map.components.len(),
        zfs_maps: map.zfs_ghz.is_some(),
        residuals: true,
    };
    let json = serde_json::to_vec(&header)?;
    w.write_all(FIELD_MAGIC)?;
    w.write_all(&(json.len() as u64).to_le_bytes())?;
    w.write_all(&json)?;
    let planes = map
        .components
        .iter()
        .chain(map.zfs_ghz.iter().flatten())
        .chain(std::iter::once(&map.residual_rms));
    for plane in planes {
        for v in plane {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    for &ok in &map.mask {
        w.write_all(&[ok as u8])?;
    }
    Ok(())
}

pub fn read_field_map<R: Read>(r: &mut R) -> Result<FieldMap> {
    let header = read_preamble(r, FIELD_MAGIC)?;
    let header: FieldHeader = serde_json::from_slice(&header)?;
    check_version(header.schema_version)?;
    if !matches!(header.components, 1 | 3) {
        return Err(Error::Format(format!(
            "{} component planes; expected one or three",
            header.components
        )));
    }
    let len = payload_len(&[header.m, header.n])?;
    let mut components = Vec::with_capacity(header.components);
    for _ in 0..header.components {
        components.push(read_f64_plane(r, len, "component")?);
    }
    let zfs_ghz = if header.zfs_maps {
        let mut planes = Vec::with_capacity(4);
        for _ in 0..4 {
            planes.push(read_f64_plane(r, len, "splitting")?);
        }
        Some(planes)
    } else {
        None
    };
    let residual_rms = if header.residuals {
        read_f64_plane(r, len, "residual")?
    } else {
        vec![0.0; len]
    };
    let mut mask_bytes = vec![0u8; len];
    r.read_exact(&mut mask_bytes)
        .map_err(|_| Error::Format("truncated mask payload".into()))?;
    expect_eof(r)?;
    let mut mask = Vec::with_capacity(len);
    for b in mask_bytes {
        match b {
            0 => mask.push(false),
            1 => mask.push(true),
            other => {
                return Err(Error::Format(format!("mask byte {other}, expected 0 or 1")));
            }
        }
    }
    let map = FieldMap {
        m: header.m,
        n: header.n,
        pixel_pitch_m: header.pixel_pitch_m,
        components,
        zfs_ghz,
        mask,
        residual_rms,
    };
    map.validate()?;
    Ok(map)
}

pub fn save_stack<P: AsRef<Path>>(path: P, stack: &OdmrStack) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stack(&mut w, stack)?;
    w.flush()?;
    Ok(())
}

pub fn load_stack<P: AsRef<Path>>(path: P) -> Result<OdmrStack> {
    read_stack(&mut BufReader::new(File::open(path)?))
}

pub fn save_field_map<P: AsRef<Path>>(path: P, map: &FieldMap) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_field_map(&mut w, map)?;
    w.flush()?;
    Ok(())
}

pub fn load_field_map<P: AsRef<Path>>(path: P) -> Result<FieldMap> {
    read_field_map(&mut BufReader::new(File::open(path)?))
}

const CALIBRATION_CSV_HEADER: &str = "current_mA,measured_field_uT";

/// Writes calibration points (SI units in memory) as the two-column
/// milliampere/microtesla CSV used for calibration curves.
pub fn write_calibration_csv<W: Write>(w: &mut W, points: &[(f64, f64)]) -> Result<()> {
    writeln!(w, "{CALIBRATION_CSV_HEADER}")?;
    for &(current_a, field_t) in points {
        writeln!(w, "{},{}", current_a * 1e3, field_t * 1e6)?;
    }
    Ok(())
}

/// Reads the two-column calibration CSV back into SI (ampere, tesla) pairs.
pub fn read_calibration_csv<R: Read>(r: &mut R) -> Result<Vec<(f64, f64)>> {
    let reader = BufReader::new(r);
    let mut points = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if !saw_header {
            if trimmed != CALIBRATION_CSV_HEADER {
                return Err(Error::Format(format!(
                    "line 1: expected header '{CALIBRATION_CSV_HEADER}'"
                )));
            }
            saw_header = true;
            continue;
        }
        let mut cols = trimmed.split(',');
        let (Some(i), Some(b), None) = (cols.next(), cols.next(), cols.next()) else {
            return Err(Error::Format(format!("line {}: expected two columns", lineno + 1)));
        };
        let current_ma: f64 = i
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad current '{i}'", lineno + 1)))?;
        let field_ut: f64 = b
            .trim()
            .parse()
            .map_err(|_| Error::Format(format!("line {}: bad field '{b}'", lineno + 1)))?;
        points.push((current_ma * 1e-3, field_ut * 1e-6));
    }
    if !saw_header {
        return Err(Error::Format("empty calibration file".into()));
    }
    Ok(points)
}
