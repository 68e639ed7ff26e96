//! `PNWS` scene files.
//!
//! Layout (little-endian): magic `PNWS`, version u16, seed u64, resolution
//! f32, height u32, width u32, occupancy bits packed LSB-first in row-major
//! order, instance count u32, then per instance category u8, cell count u32
//! and the row-major cell indices as u32.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::scene::{GroundTruthScene, ObjectInstance};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const MAGIC: &[u8; 4] = b"PNWS";
pub const VERSION: u16 = 1;

pub fn write_scene(scene: &GroundTruthScene, out: &mut impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&scene.seed.to_le_bytes())?;
    out.write_all(&(scene.resolution as f32).to_le_bytes())?;
    out.write_all(&(scene.h() as u32).to_le_bytes())?;
    out.write_all(&(scene.w() as u32).to_le_bytes())?;
    out.write_all(&pack_bits(scene.occupancy().data()))?;
    out.write_all(&(scene.objects().len() as u32).to_le_bytes())?;
    for obj in scene.objects() {
        out.write_all(&[obj.category])?;
        out.write_all(&(obj.cells.len() as u32).to_le_bytes())?;
        for &cell in &obj.cells {
            out.write_all(&cell.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_scene(input: &mut impl Read) -> Result<GroundTruthScene> {
    let bad = |reason: &str| Error::Format {
        path: "<scene>".into(),
        reason: reason.into(),
    };
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = read_u16(input)?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let seed = read_u64(input)?;
    let resolution = widen(read_f32(input)?);
    let h = read_u32(input)? as usize;
    let w = read_u32(input)? as usize;
    let mut packed = vec![0u8; (h * w).div_ceil(8)];
    input.read_exact(&mut packed)?;
    let occupancy = Grid::from_vec(h, w, unpack_bits(&packed, h * w));
    let count = read_u32(input)? as usize;
    let mut objects = Vec::with_capacity(count);
    for _ in 0..count {
        let mut cat = [0u8; 1];
        input.read_exact(&mut cat)?;
        let n = read_u32(input)? as usize;
        if n > h * w {
            return Err(bad("instance larger than the grid"));
        }
        let mut cells = Vec::with_capacity(n);
        for _ in 0..n {
            cells.push(read_u32(input)?);
        }
        objects.push(ObjectInstance {
            category: cat[0],
            cells,
        });
    }
    GroundTruthScene::new(seed, resolution, occupancy, objects)
}

pub fn save_scene(scene: &GroundTruthScene, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_scene(scene, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<GroundTruthScene> {
    let mut input = BufReader::new(File::open(path)?);
    read_scene(&mut input).map_err(|e| match e {
        Error::Format { reason, .. } => Error::Format {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}

pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

pub fn unpack_bits(packed: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| packed[i / 8] >> (i % 8) & 1 == 1).collect()
}

pub(crate) fn read_u16(r: &mut impl Read) -> Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f32(r: &mut impl Read) -> Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

/// Widens through the shortest decimal form, so a stored 0.05 reads back as
/// the f64 0.05.
pub(crate) fn widen(v: f32) -> f64 {
    v.to_string().parse().unwrap_or(v as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::scene::{generate_scene, SceneParams};

    #[test]
    fn scene_round_trips() {
        let scene = generate_scene(5, &SceneParams::small()).unwrap();
        let mut buf = Vec::new();
        write_scene(&scene, &mut buf).unwrap();
        let back = read_scene(&mut buf.as_slice()).unwrap();
        assert_eq!(back.occupancy(), scene.occupancy());
        assert_eq!(back.objects(), scene.objects());
        assert_eq!(back.seed, 5);
        let mut again = Vec::new();
        write_scene(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn rejects_bad_magic() {
        let data = b"XXXX\x01\x00";
        assert!(matches!(read_scene(&mut data.as_slice()), Err(Error::Format { .. })));
    }

    #[test]
    fn bits_pack_lsb_first() {
        assert_eq!(pack_bits(&[true, false, false, true, false, false, false, false, true]), vec![0b1001, 1]);
        assert_eq!(unpack_bits(&[0b1001, 1], 9)[8], true);
    }
}
