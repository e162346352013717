//! `CHMR` portable raster format.
//!
//! All fields little-endian:
//!
//! ```text
//! magic   "CHMR"        4 bytes
//! version u32           = 1
//! width   u32
//! height  u32
//! bands   u32
//! affine  6 × f64       a, b, c, d, e, f
//! nodata  f32
//! payload f32 × bands·height·width, band-major then row-major
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{AffineTransform, GeoError, RasterGrid, Result};

pub const CHMR_MAGIC: [u8; 4] = *b"CHMR";
pub const CHMR_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 * 4 + 6 * 8 + 4;

pub fn encode_raster(r: &RasterGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + r.data().len() * 4);
    out.extend_from_slice(&CHMR_MAGIC);
    out.extend_from_slice(&CHMR_VERSION.to_le_bytes());
    for dim in [r.width(), r.height(), r.bands()] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    for c in r.transform().coefficients() {
        out.extend_from_slice(&c.to_le_bytes());
    }
    out.extend_from_slice(&r.nodata().to_le_bytes());
    for v in r.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap())
}

pub fn decode_raster(bytes: &[u8]) -> Result<RasterGrid> {
    if bytes.len() < 4 {
        return Err(GeoError::TruncatedPayload {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let magic: [u8; 4] = bytes[..4].try_into().unwrap();
    if magic != CHMR_MAGIC {
        return Err(GeoError::BadMagic(magic));
    }
    if bytes.len() < HEADER_LEN {
        return Err(GeoError::TruncatedPayload {
            expected: HEADER_LEN,
            actual: bytes.len(),
        });
    }
    let version = u32_at(bytes, 4);
    if version != CHMR_VERSION {
        return Err(GeoError::VersionMismatch(version));
    }
    let (w, h, b) = (u32_at(bytes, 8), u32_at(bytes, 12), u32_at(bytes, 16));
    let payload_len = (w as u64)
        .checked_mul(h as u64)
        .and_then(|v| v.checked_mul(b as u64))
        .and_then(|v| v.checked_mul(4))
        .filter(|&v| v <= isize::MAX as u64 - HEADER_LEN as u64)
        .ok_or(GeoError::DimensionOverflow {
            width: w,
            height: h,
            bands: b,
        })? as usize;
    let mut coeffs = [0.0f64; 6];
    for (i, c) in coeffs.iter_mut().enumerate() {
        *c = f64_at(bytes, 20 + 8 * i);
    }
    let nodata = f32::from_le_bytes(bytes[68..72].try_into().unwrap());
    let expected = HEADER_LEN + payload_len;
    if bytes.len() < expected {
        return Err(GeoError::TruncatedPayload {
            expected,
            actual: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(GeoError::TrailingBytes(bytes.len() - expected));
    }
    let data = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let transform = AffineTransform::from_coefficients(coeffs)?;
    RasterGrid::new(w as usize, h as usize, b as usize, transform, nodata, data)
}

pub fn read_raster(path: impl AsRef<Path>) -> Result<RasterGrid> {
    decode_raster(&fs::read(path)?)
}

pub fn write_raster(r: &RasterGrid, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_raster(r))?;
    f.sync_all()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::DEFAULT_NODATA;

    fn small() -> RasterGrid {
        RasterGrid::new(
            2,
            2,
            1,
            AffineTransform::north_up(500000.0, 3200000.0, 10.0).unwrap(),
            DEFAULT_NODATA,
            vec![0.0, 1.5, -2.25, DEFAULT_NODATA],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.chmr");
        let r = small();
        write_raster(&r, &p).unwrap();
        let back = read_raster(&p).unwrap();
        assert_eq!(back, r);
        assert_eq!(encode_raster(&back), fs::read(&p).unwrap());
    }

    #[test]
    fn bad_magic() {
        let mut bytes = encode_raster(&small());
        bytes[..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_raster(&bytes), Err(GeoError::BadMagic(m)) if &m == b"XXXX"));
    }

    #[test]
    fn version_mismatch() {
        let mut bytes = encode_raster(&small());
        bytes[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(decode_raster(&bytes), Err(GeoError::VersionMismatch(2))));
    }

    #[test]
    fn truncated_when_header_claims_more_bands() {
        let r = RasterGrid::new(2, 2, 2, AffineTransform::identity(), DEFAULT_NODATA, vec![1.0; 8]).unwrap();
        let mut bytes = encode_raster(&r);
        bytes[16..20].copy_from_slice(&3u32.to_le_bytes());
        assert!(matches!(
            decode_raster(&bytes),
            Err(GeoError::TruncatedPayload { .. })
        ));
        assert!(matches!(
            decode_raster(&bytes[..10]),
            Err(GeoError::TruncatedPayload { .. })
        ));
    }

    #[test]
    fn dimension_overflow() {
        let mut bytes = encode_raster(&small());
        for at in [8, 12, 16] {
            bytes[at..at + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(matches!(
            decode_raster(&bytes),
            Err(GeoError::DimensionOverflow { .. })
        ));
    }

    #[test]
    fn trailing_bytes() {
        let mut bytes = encode_raster(&small());
        bytes.push(0);
        assert!(matches!(decode_raster(&bytes), Err(GeoError::TrailingBytes(1))));
    }
}
