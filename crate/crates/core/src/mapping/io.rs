//! Map snapshot files.
//!
//! Both formats share one little-endian header: magic, version u16, channels
//! u16, height u32, width u32, resolution f32. `PNMP` stores each value as a
//! u8 (0 or 255), `PNDF` as f32; data is channel-major, row-major.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::SemanticMap;
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::world::io::{read_f32, read_u16, read_u32, widen};

pub const MAP_MAGIC: &[u8; 4] = b"PNMP";
pub const FIELD_MAGIC: &[u8; 4] = b"PNDF";
pub const VERSION: u16 = 1;

fn write_header(out: &mut impl Write, magic: &[u8; 4], channels: usize, h: usize, w: usize, res: f64) -> Result<()> {
    out.write_all(magic)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&(channels as u16).to_le_bytes())?;
    out.write_all(&(h as u32).to_le_bytes())?;
    out.write_all(&(w as u32).to_le_bytes())?;
    out.write_all(&(res as f32).to_le_bytes())?;
    Ok(())
}

fn read_header(input: &mut impl Read, magic: &[u8; 4]) -> Result<(usize, usize, usize, f64)> {
    let mut m = [0u8; 4];
    input.read_exact(&mut m)?;
    if &m != magic {
        return Err(Error::Format {
            path: "<map>".into(),
            reason: format!("expected magic {:?}", std::str::from_utf8(magic).unwrap_or("?")),
        });
    }
    let version = read_u16(input)?;
    if version != VERSION {
        return Err(Error::Format {
            path: "<map>".into(),
            reason: format!("unsupported version {version}"),
        });
    }
    let channels = read_u16(input)? as usize;
    let h = read_u32(input)? as usize;
    let w = read_u32(input)? as usize;
    let res = widen(read_f32(input)?);
    Ok((channels, h, w, res))
}

/// Writes a binarized map (threshold 0.5).
pub fn write_map(map: &SemanticMap, out: &mut impl Write) -> Result<()> {
    write_header(out, MAP_MAGIC, map.channels(), map.h(), map.w(), map.resolution)?;
    let bytes: Vec<u8> = map.data().iter().map(|&v| if v >= 0.5 { 255 } else { 0 }).collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn read_map(input: &mut impl Read) -> Result<SemanticMap> {
    let (channels, h, w, res) = read_header(input, MAP_MAGIC)?;
    let mut bytes = vec![0u8; channels * h * w];
    input.read_exact(&mut bytes)?;
    let data = bytes.iter().map(|&b| if b >= 128 { 1.0 } else { 0.0 }).collect();
    SemanticMap::from_data(channels, h, w, res, data)
}

/// Writes real-valued layers, e.g. a distance field or a value map.
pub fn write_field(layers: &[Grid<f32>], resolution: f64, out: &mut impl Write) -> Result<()> {
    let (h, w) = layers.first().map(|g| (g.h(), g.w())).unwrap_or((0, 0));
    if layers.iter().any(|g| g.h() != h || g.w() != w) {
        return Err(Error::ShapeMismatch("field layers differ in shape".into()));
    }
    write_header(out, FIELD_MAGIC, layers.len(), h, w, resolution)?;
    for g in layers {
        for v in g.data() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_field(input: &mut impl Read) -> Result<(Vec<Grid<f32>>, f64)> {
    let (channels, h, w, res) = read_header(input, FIELD_MAGIC)?;
    let mut layers = Vec::with_capacity(channels);
    for _ in 0..channels {
        let mut data = Vec::with_capacity(h * w);
        for _ in 0..h * w {
            data.push(read_f32(input)?);
        }
        layers.push(Grid::from_vec(h, w, data));
    }
    Ok((layers, res))
}

fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Format { reason, .. } => Error::Format {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

pub fn save_map(map: &SemanticMap, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_map(map, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_map(path: &Path) -> Result<SemanticMap> {
    let mut input = BufReader::new(File::open(path)?);
    with_path(path, read_map(&mut input))
}

pub fn save_field(layers: &[Grid<f32>], resolution: f64, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_field(layers, resolution, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_field(path: &Path) -> Result<(Vec<Grid<f32>>, f64)> {
    let mut input = BufReader::new(File::open(path)?);
    with_path(path, read_field(&mut input))
}

/// File name for a snapshot of `scene`'s trajectory from `spawn` at `step`.
pub fn snapshot_name(scene: u64, spawn: usize, step: usize) -> String {
    format!("{scene}_{spawn}_{step}.pnmp")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::{CH_EXPLORED, NUM_CHANNELS};

    #[test]
    fn map_round_trips_through_bytes() {
        let mut map = SemanticMap::new(NUM_CHANNELS, 7, 9, 0.05, (0, 0));
        map.channel_mut(CH_EXPLORED)[5] = 1.0;
        map.channel_mut(7)[62] = 1.0;
        let mut buf = Vec::new();
        write_map(&map, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"PNMP");
        assert_eq!(buf.len(), 4 + 2 + 2 + 4 + 4 + 4 + NUM_CHANNELS * 63);
        let back = read_map(&mut buf.as_slice()).unwrap();
        assert_eq!(back.data(), map.data());
        assert_eq!(back.resolution, 0.05);
    }

    #[test]
    fn field_round_trips() {
        let g = Grid::from_vec(2, 2, vec![0.0, 1.5, f32::INFINITY, 3.25]);
        let mut buf = Vec::new();
        write_field(std::slice::from_ref(&g), 0.05, &mut buf).unwrap();
        let (layers, res) = read_field(&mut buf.as_slice()).unwrap();
        assert_eq!(layers, vec![g]);
        assert_eq!(res, 0.05);
        assert!(read_map(&mut buf.as_slice()).is_err());
    }
}
