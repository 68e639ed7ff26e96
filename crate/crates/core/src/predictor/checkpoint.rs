//! `PNCK` checkpoints.
//!
//! Little-endian: magic `PNCK`, version u16, input mode u8 (0 global,
//! 1 egocrop), radius count u16, radii as u16, categories u16, channels u16,
//! then every parameter as f64.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::model::{FeatureSpec, InputMode, PredictorModel};
use crate::error::{Error, Result};
use crate::world::io::read_u16;

pub const MAGIC: &[u8; 4] = b"PNCK";
pub const VERSION: u16 = 1;

pub fn write_model(model: &PredictorModel, out: &mut impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&[match model.spec.mode {
        InputMode::Global => 0u8,
        InputMode::Egocrop => 1u8,
    }])?;
    out.write_all(&(model.spec.radii.len() as u16).to_le_bytes())?;
    for &r in &model.spec.radii {
        out.write_all(&(r as u16).to_le_bytes())?;
    }
    out.write_all(&(model.categories as u16).to_le_bytes())?;
    out.write_all(&(model.channels as u16).to_le_bytes())?;
    for v in &model.theta {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn read_model(input: &mut impl Read) -> Result<PredictorModel> {
    let bad = |reason: String| Error::Format {
        path: "<checkpoint>".into(),
        reason,
    };
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad("bad magic".into()));
    }
    let version = read_u16(input)?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut mode = [0u8; 1];
    input.read_exact(&mut mode)?;
    let mode = match mode[0] {
        0 => InputMode::Global,
        1 => InputMode::Egocrop,
        m => return Err(bad(format!("unknown input mode {m}"))),
    };
    let nr = read_u16(input)? as usize;
    let radii = (0..nr).map(|_| read_u16(input).map(|r| r as usize)).collect::<Result<Vec<_>>>()?;
    let categories = read_u16(input)? as usize;
    let channels = read_u16(input)? as usize;
    let mut model = PredictorModel::zeros(FeatureSpec { mode, radii }, channels, categories);
    for v in model.theta.iter_mut() {
        let mut b = [0u8; 8];
        input.read_exact(&mut b)?;
        *v = f64::from_le_bytes(b);
    }
    let mut rest = [0u8; 1];
    if input.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save_model(model: &PredictorModel, path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write_model(model, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<PredictorModel> {
    let mut input = BufReader::new(File::open(path)?);
    read_model(&mut input).map_err(|e| match e {
        Error::Format { reason, .. } => Error::Format {
            path: path.to_path_buf(),
            reason,
        },
        other => other,
    })
}
