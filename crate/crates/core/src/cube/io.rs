//! Binary cube (`IMC1`) and mask (`IMM1`) files.
//!
//! Layout, all multi-byte fields little-endian:
//!
//! ```text
//! magic        [u8; 4]   "IMC1" or "IMM1"
//! version      u32
//! n_rows       u64
//! n_channels   u64
//! grid_nx      u64       0 when the cube has no sky grid
//! grid_ny      u64       0 when the cube has no sky grid
//! pixel_size   f64       radians, 0 when absent
//! start_freq   f64       Hz
//! chan_width   f64       Hz
//! payload      n_rows * n_channels cells, row-major
//!              f64 for cubes, u8 (0/1) for masks
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{check_finite, CubeError, CubeMeta, FrequencyAxis, Mask, Result, SkyGrid, SpectralCube};

pub const FORMAT_VERSION: u32 = 1;
const CUBE_MAGIC: [u8; 4] = *b"IMC1";
const MASK_MAGIC: [u8; 4] = *b"IMM1";
const HEADER_LEN: usize = 4 + 4 + 8 * 7;

struct Header {
    n_rows: u64,
    n_channels: u64,
    meta: CubeMeta,
}

fn encode_header(magic: [u8; 4], n_rows: usize, n_channels: usize, meta: &CubeMeta) -> [u8; HEADER_LEN] {
    let mut buf = [0u8; HEADER_LEN];
    let (nx, ny, pix) = match meta.sky_grid {
        Some(g) => (g.nx as u64, g.ny as u64, g.pixel_size),
        None => (0, 0, 0.0),
    };
    buf[0..4].copy_from_slice(&magic);
    buf[4..8].copy_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf[8..16].copy_from_slice(&(n_rows as u64).to_le_bytes());
    buf[16..24].copy_from_slice(&(n_channels as u64).to_le_bytes());
    buf[24..32].copy_from_slice(&nx.to_le_bytes());
    buf[32..40].copy_from_slice(&ny.to_le_bytes());
    buf[40..48].copy_from_slice(&pix.to_le_bytes());
    buf[48..56].copy_from_slice(&meta.axis.start().to_le_bytes());
    buf[56..64].copy_from_slice(&meta.axis.channel_width().to_le_bytes());
    buf
}

fn le_u64(b: &[u8]) -> u64 {
    u64::from_le_bytes(b.try_into().expect("8-byte slice"))
}

fn le_f64(b: &[u8]) -> f64 {
    f64::from_le_bytes(b.try_into().expect("8-byte slice"))
}

fn decode_header(magic: [u8; 4], buf: &[u8]) -> Result<Header> {
    if buf.len() < HEADER_LEN {
        return Err(CubeError::Truncated { expected: HEADER_LEN as u64, found: buf.len() as u64 });
    }
    let found: [u8; 4] = buf[0..4].try_into().expect("4-byte slice");
    if found != magic {
        return Err(CubeError::BadMagic { expected: magic, found });
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().expect("4-byte slice"));
    if version != FORMAT_VERSION {
        return Err(CubeError::Version(version));
    }
    let n_rows = le_u64(&buf[8..16]);
    let n_channels = le_u64(&buf[16..24]);
    let nx = le_u64(&buf[24..32]);
    let ny = le_u64(&buf[32..40]);
    let pixel_size = le_f64(&buf[40..48]);
    let start = le_f64(&buf[48..56]);
    let width = le_f64(&buf[56..64]);
    let axis = FrequencyAxis::new(start, width, n_channels as usize)?;
    let sky_grid = if nx == 0 && ny == 0 {
        None
    } else {
        Some(SkyGrid { nx: nx as usize, ny: ny as usize, pixel_size })
    };
    Ok(Header { n_rows, n_channels, meta: CubeMeta { axis, sky_grid } })
}

fn read_all(path: &Path) -> Result<Vec<u8>> {
    let mut bytes = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut bytes)?;
    Ok(bytes)
}

fn payload<'a>(bytes: &'a [u8], header: &Header, cell_bytes: u64) -> Result<&'a [u8]> {
    let cells = header
        .n_rows
        .checked_mul(header.n_channels)
        .ok_or_else(|| CubeError::SizeMismatch("header dimensions overflow".into()))?;
    let expected = cells * cell_bytes;
    let found = (bytes.len() - HEADER_LEN) as u64;
    if found < expected {
        return Err(CubeError::Truncated { expected, found });
    }
    if found > expected {
        return Err(CubeError::SizeMismatch(format!("{} trailing bytes after payload", found - expected)));
    }
    Ok(&bytes[HEADER_LEN..])
}

/// Writes `cube` to `path`. Refuses cubes holding non-finite values.
pub fn write_cube(cube: &SpectralCube, path: impl AsRef<Path>) -> Result<()> {
    check_finite(cube.data().view())?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_header(CUBE_MAGIC, cube.n_rows(), cube.n_channels(), &cube.meta()))?;
    for v in cube.data().iter() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<SpectralCube> {
    let bytes = read_all(path.as_ref())?;
    let header = decode_header(CUBE_MAGIC, &bytes)?;
    let body = payload(&bytes, &header, 8)?;
    let values: Vec<f64> = body.chunks_exact(8).map(le_f64).collect();
    let data = Array2::from_shape_vec((header.n_rows as usize, header.n_channels as usize), values)
        .map_err(|e| CubeError::SizeMismatch(e.to_string()))?;
    SpectralCube::new(data, header.meta.axis, header.meta.sky_grid)
}

/// Writes a mask with the header of the cube it belongs to.
pub fn write_mask(mask: &Mask, meta: &CubeMeta, path: impl AsRef<Path>) -> Result<()> {
    let (rows, channels) = mask.dim();
    if channels != meta.axis.n_channels() {
        return Err(CubeError::Shape(format!(
            "mask has {channels} channels but the axis has {}",
            meta.axis.n_channels()
        )));
    }
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&encode_header(MASK_MAGIC, rows, channels, meta))?;
    let body: Vec<u8> = mask.flags().iter().map(|&f| f as u8).collect();
    w.write_all(&body)?;
    w.flush()?;
    Ok(())
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<(Mask, CubeMeta)> {
    let bytes = read_all(path.as_ref())?;
    let header = decode_header(MASK_MAGIC, &bytes)?;
    let body = payload(&bytes, &header, 1)?;
    let mut flags = Vec::with_capacity(body.len());
    for (i, &b) in body.iter().enumerate() {
        match b {
            0 => flags.push(false),
            1 => flags.push(true),
            other => {
                return Err(CubeError::SizeMismatch(format!("mask byte {i} is {other}, expected 0 or 1")));
            }
        }
    }
    let flags = Array2::from_shape_vec((header.n_rows as usize, header.n_channels as usize), flags)
        .map_err(|e| CubeError::SizeMismatch(e.to_string()))?;
    Ok((Mask::new(flags), header.meta))
}
