//! Binary volume and sinogram files, and CSV helpers.
//!
//! Volume file (little-endian):
//!
//! | bytes | content                          |
//! |-------|----------------------------------|
//! | 4     | magic `SAWV`                     |
//! | 2     | format version (u16)             |
//! | 12    | nx, ny, nz (u32 each)            |
//! | 24    | dx, dy, dz (f64 each)            |
//! | 4·N   | values (f32), x fastest          |
//!
//! Sinogram file: magic `SAWS`, version, then num_views, rows, cols (u32
//! each), then f32 values with column fastest, then row, then view.
//!
//! Values are stored as f32; a volume whose values are exactly representable
//! in f32 survives a write/read cycle bit for bit.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::Mask;
use crate::metrics::SliceRmseProfile;
use crate::volume::{Sinogram, Volume};

pub const VOLUME_MAGIC: [u8; 4] = *b"SAWV";
pub const SINOGRAM_MAGIC: [u8; 4] = *b"SAWS";
pub const FORMAT_VERSION: u16 = 1;

const VOLUME_HEADER_LEN: usize = 4 + 2 + 12 + 24;
const SINOGRAM_HEADER_LEN: usize = 4 + 2 + 12;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut out = [0u8; N];
        out.copy_from_slice(&self.bytes[self.pos..self.pos + N]);
        self.pos += N;
        out
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take())
    }
}

/// Reads the fixed-size header, validating magic and version.
fn read_header(file: &mut File, path: &Path, magic: [u8; 4], len: usize) -> Result<Vec<u8>> {
    let mut header = vec![0u8; len];
    let mut got = 0;
    while got < len {
        let n = file.read(&mut header[got..])?;
        if n == 0 {
            break;
        }
        got += n;
    }
    if got >= 4 && header[..4] != magic {
        let mut found = [0u8; 4];
        found.copy_from_slice(&header[..4]);
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            found,
            expected: magic,
        });
    }
    if got < len {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: len as u64,
            found: got as u64,
        });
    }
    let version = u16::from_le_bytes([header[4], header[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    Ok(header)
}

/// Reads exactly `count` f32 values after the header, checked against the
/// file length before allocating.
fn read_payload(file: &mut File, path: &Path, header_len: usize, count: u64) -> Result<Vec<f64>> {
    let expected = count * 4;
    let found = file.metadata()?.len().saturating_sub(header_len as u64);
    if found != expected {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    let mut bytes = vec![0u8; expected as usize];
    file.read_exact(&mut bytes)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_values(out: &mut impl Write, values: &[f64]) -> Result<()> {
    for &v in values {
        out.write_all(&(v as f32).to_le_bytes())?;
    }
    Ok(())
}

pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    out.write_all(&VOLUME_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for d in volume.dims() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for s in volume.voxel_size() {
        out.write_all(&s.to_le_bytes())?;
    }
    write_values(&mut out, volume.values())?;
    out.flush()?;
    Ok(())
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let mut file = File::open(path)?;
    let header = read_header(&mut file, path, VOLUME_MAGIC, VOLUME_HEADER_LEN)?;
    let mut c = Cursor { bytes: &header, pos: 6 };
    let dims = [c.u32() as usize, c.u32() as usize, c.u32() as usize];
    let voxel = [c.f64(), c.f64(), c.f64()];
    if dims.contains(&0) {
        return Err(Error::EmptyHeader {
            path: path.to_path_buf(),
            what: "volume",
        });
    }
    let count = dims.iter().map(|&d| d as u64).product();
    let values = read_payload(&mut file, path, VOLUME_HEADER_LEN, count)?;
    Volume::from_values(dims, voxel, values)
}

pub fn write_sinogram(sinogram: &Sinogram, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    out.write_all(&SINOGRAM_MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    for d in sinogram.shape() {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    write_values(&mut out, sinogram.values())?;
    out.flush()?;
    Ok(())
}

pub fn read_sinogram(path: impl AsRef<Path>) -> Result<Sinogram> {
    let path = path.as_ref();
    let mut file = File::open(path)?;
    let header = read_header(&mut file, path, SINOGRAM_MAGIC, SINOGRAM_HEADER_LEN)?;
    let mut c = Cursor { bytes: &header, pos: 6 };
    let shape = [c.u32() as usize, c.u32() as usize, c.u32() as usize];
    if shape.contains(&0) {
        return Err(Error::EmptyHeader {
            path: path.to_path_buf(),
            what: "sinogram",
        });
    }
    let count = shape.iter().map(|&d| d as u64).product();
    let values = read_payload(&mut file, path, SINOGRAM_HEADER_LEN, count)?;
    Sinogram::from_values(shape[0], shape[1], shape[2], values)
}

/// Masks are stored as volume files with values in `[0, 1]`.
pub fn write_mask(mask: &Mask, voxel_size: [f64; 3], path: impl AsRef<Path>) -> Result<()> {
    let v = Volume::from_values(mask.dims(), voxel_size, mask.values().to_vec())?;
    write_volume(&v, path)
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let v = read_volume(path)?;
    Mask::from_values(v.dims(), v.into_values(), 0.0)
}

/// `slice_index,rmse` rows.
pub fn profile_csv(profile: &SliceRmseProfile) -> String {
    let mut s = String::from("slice_index,rmse\n");
    for (z, v) in profile.values.iter().enumerate() {
        s.push_str(&format!("{z},{v:.9e}\n"));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn volume_round_trip_is_bit_exact() {
        let dir = tmp();
        let p = dir.path().join("v.sawv");
        let vals: Vec<f64> = (0..64).map(|i| ((i as f32) * 0.137 - 3.0).sin() as f64).collect();
        let v = Volume::from_values([4, 4, 4], [0.5, 0.75, 2.0], vals).unwrap();
        write_volume(&v, &p).unwrap();
        let back = read_volume(&p).unwrap();
        assert_eq!(back.dims(), v.dims());
        assert_eq!(back.voxel_size(), v.voxel_size());
        for (a, b) in back.values().iter().zip(v.values()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn header_layout() {
        let dir = tmp();
        let p = dir.path().join("v.sawv");
        let v = Volume::from_values([2, 1, 1], [1.0, 2.0, 3.0], vec![1.0, -2.0]).unwrap();
        write_volume(&v, &p).unwrap();
        let bytes = std::fs::read(&p).unwrap();
        assert_eq!(&bytes[..4], b"SAWV");
        assert_eq!(&bytes[4..6], &[1, 0]);
        assert_eq!(&bytes[6..10], &[2, 0, 0, 0]);
        assert_eq!(&bytes[18..26], &1.0f64.to_le_bytes());
        assert_eq!(&bytes[42..46], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 42 + 8);

        let s = Sinogram::from_values(1, 2, 3, vec![0.0; 6]).unwrap();
        let ps = dir.path().join("s.saws");
        write_sinogram(&s, &ps).unwrap();
        let bytes = std::fs::read(&ps).unwrap();
        assert_eq!(&bytes[..4], b"SAWS");
        assert_eq!(&bytes[10..14], &[2, 0, 0, 0]);
        assert_eq!(bytes.len(), 18 + 24);
    }

    #[test]
    fn bad_magic() {
        let dir = tmp();
        let p = dir.path().join("x");
        std::fs::write(&p, b"XXXX\x01\x00aaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaaa").unwrap();
        assert!(matches!(read_volume(&p), Err(Error::BadMagic { .. })));
        assert!(matches!(read_sinogram(&p), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload() {
        let dir = tmp();
        let p = dir.path().join("t.sawv");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SAWV");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        for _ in 0..3 {
            bytes.extend_from_slice(&8u32.to_le_bytes());
        }
        for _ in 0..3 {
            bytes.extend_from_slice(&1.0f64.to_le_bytes());
        }
        bytes.extend(std::iter::repeat_n(0u8, 500 * 4));
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Truncated { expected: 2048, found: 2000, .. })));
    }

    #[test]
    fn version_mismatch() {
        let dir = tmp();
        let p = dir.path().join("v.saws");
        let s = Sinogram::zeros(1, 1, 1);
        write_sinogram(&s, &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[4] = 9;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_sinogram(&p), Err(Error::VersionMismatch { found: 9, .. })));
    }

    #[test]
    fn zero_view_header_rejected() {
        let dir = tmp();
        let p = dir.path().join("z.saws");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"SAWS");
        bytes.extend_from_slice(&1u16.to_le_bytes());
        for d in [0u32, 4, 4] {
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_sinogram(&p), Err(Error::EmptyHeader { .. })));
    }

    #[test]
    fn short_header_is_truncation() {
        let dir = tmp();
        let p = dir.path().join("h.sawv");
        std::fs::write(&p, b"SAWV\x01").unwrap();
        assert!(matches!(read_volume(&p), Err(Error::Truncated { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn sinogram_round_trip(
            shape in (1usize..4, 1usize..4, 1usize..5),
            seed in any::<u32>(),
        ) {
            let (v, r, c) = shape;
            let vals: Vec<f64> = (0..v * r * c)
                .map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32) % 0x7f00_0000) as f64)
                .collect();
            let s = Sinogram::from_values(v, r, c, vals).unwrap();
            let dir = tmp();
            let p = dir.path().join("s.saws");
            write_sinogram(&s, &p).unwrap();
            let back = read_sinogram(&p).unwrap();
            prop_assert_eq!(back.shape(), s.shape());
            for (a, b) in back.values().iter().zip(s.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
