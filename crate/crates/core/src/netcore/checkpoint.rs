//! Binary checkpoint files.
//!
//! Layout (all integers little-endian):
//!   magic "VPNCKPT1", format version u32, global step u64,
//!   model kind (u8 length + utf8), parameter count u32,
//!   then one record per parameter: name (u16 length + utf8), rank u8,
//!   dims u32 each, values f32 each.
//! A trailing flag byte marks optional optimizer moments: update count u64,
//! then first and second moment arrays in parameter order (raw f32 runs,
//! lengths implied by the parameter records).
//!
//! Values are stored as f32 regardless of the working precision, so an f64
//! run loses the low mantissa bits on save. Loading into either precision
//! widens from f32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"VPNCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckpointData {
    pub step: u64,
    pub kind: String,
    /// (name, shape, values) in insertion order.
    pub params: Vec<(String, Vec<usize>, Vec<f32>)>,
    pub moments: Option<MomentData>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentData {
    pub adam_t: u64,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

pub fn save_checkpoint(path: &Path, data: &CheckpointData) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&data.step.to_le_bytes())?;
    let kind = data.kind.as_bytes();
    if kind.len() > u8::MAX as usize {
        return Err(Error::format("model kind tag too long"));
    }
    w.write_all(&[kind.len() as u8])?;
    w.write_all(kind)?;
    w.write_all(&(data.params.len() as u32).to_le_bytes())?;
    for (name, shape, values) in &data.params {
        let nb = name.as_bytes();
        if nb.len() > u16::MAX as usize {
            return Err(Error::format("parameter name too long"));
        }
        w.write_all(&(nb.len() as u16).to_le_bytes())?;
        w.write_all(nb)?;
        if shape.len() > u8::MAX as usize {
            return Err(Error::format("parameter rank too large"));
        }
        let expect: usize = shape.iter().product();
        if expect != values.len() {
            return Err(Error::format(format!("shape/value mismatch for {name}")));
        }
        w.write_all(&[shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        write_f32s(&mut w, values)?;
    }
    match &data.moments {
        None => w.write_all(&[0u8])?,
        Some(mom) => {
            if mom.m.len() != data.params.len() || mom.v.len() != data.params.len() {
                return Err(Error::format("moment arrays must match parameter count"));
            }
            w.write_all(&[1u8])?;
            w.write_all(&mom.adam_t.to_le_bytes())?;
            for arrs in [&mom.m, &mom.v] {
                for (arr, (name, _, values)) in arrs.iter().zip(&data.params) {
                    if arr.len() != values.len() {
                        return Err(Error::format(format!("moment length mismatch for {name}")));
                    }
                    write_f32s(&mut w, arr)?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    read_exact(&mut r, &mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("not a checkpoint file (bad magic)"));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::format(format!("unsupported checkpoint version {version}")));
    }
    let step = read_u64(&mut r)?;
    let kind_len = read_u8(&mut r)? as usize;
    let kind = read_string(&mut r, kind_len)?;
    let n_params = read_u32(&mut r)? as usize;
    let mut params = Vec::with_capacity(n_params);
    for _ in 0..n_params {
        let name_len = read_u16(&mut r)? as usize;
        let name = read_string(&mut r, name_len)?;
        let rank = read_u8(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u32(&mut r)? as usize);
        }
        let len: usize = shape.iter().product();
        let values = read_f32s(&mut r, len)?;
        params.push((name, shape, values));
    }
    let has_moments = read_u8(&mut r)?;
    let moments = match has_moments {
        0 => None,
        1 => {
            let adam_t = read_u64(&mut r)?;
            let mut m = Vec::with_capacity(n_params);
            for (_, _, values) in &params {
                m.push(read_f32s(&mut r, values.len())?);
            }
            let mut v = Vec::with_capacity(n_params);
            for (_, _, values) in &params {
                v.push(read_f32s(&mut r, values.len())?);
            }
            Some(MomentData { adam_t, m, v })
        }
        x => return Err(Error::format(format!("bad moments flag {x}"))),
    };
    Ok(CheckpointData { step, kind, params, moments })
}

fn write_f32s<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, len: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; len * 4];
    read_exact(r, &mut buf)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|_| Error::format("truncated checkpoint file"))
}

fn read_u8<R: Read>(r: &mut R) -> Result<u8> {
    let mut b = [0u8; 1];
    read_exact(r, &mut b)?;
    Ok(b[0])
}

fn read_u16<R: Read>(r: &mut R) -> Result<u16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string<R: Read>(r: &mut R, len: usize) -> Result<String> {
    let mut buf = vec![0u8; len];
    read_exact(r, &mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::format("invalid utf-8 in checkpoint"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CheckpointData {
        CheckpointData {
            step: 123_456,
            kind: "vpn".into(),
            params: vec![
                ("enc.conv1.w".into(), vec![2, 1, 3, 3], (0..18).map(|i| i as f32 * 0.5).collect()),
                ("enc.conv1.b".into(), vec![2], vec![0.1, -0.2]),
            ],
            moments: Some(MomentData {
                adam_t: 99,
                m: vec![vec![0.01; 18], vec![0.02; 2]],
                v: vec![vec![0.001; 18], vec![0.002; 2]],
            }),
        }
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let dir = std::env::temp_dir().join(format!("ckpt_test_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p1 = dir.join("a.ckpt");
        let p2 = dir.join("b.ckpt");
        let data = sample();
        save_checkpoint(&p1, &data).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded, data);
        save_checkpoint(&p2, &loaded).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn no_moments_variant() {
        let dir = std::env::temp_dir().join(format!("ckpt_test_nm_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("c.ckpt");
        let mut data = sample();
        data.moments = None;
        save_checkpoint(&p, &data).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), data);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn bad_magic_is_a_format_error() {
        let dir = std::env::temp_dir().join(format!("ckpt_test_bm_{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("d.ckpt");
        std::fs::write(&p, b"junkdata").unwrap();
        assert!(load_checkpoint(&p).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
