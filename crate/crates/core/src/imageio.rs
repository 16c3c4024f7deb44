//! Binary netpbm images: 16-bit big-endian millimeter depth (P5), 8-bit
//! masks (P5) and 8-bit RGB (P6).

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::camera::{DepthImage, MaskImage, RgbImage};
use crate::error::{Error, Result};

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: u32,
    data_offset: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || bytes[0] != b'P' {
        return Err(Error::parse(1, "not a netpbm file"));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut line = 1;
    let mut fields = [0u64; 3];
    for field in fields.iter_mut() {
        // Whitespace and comments between header tokens.
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(c) if c.is_ascii_whitespace() => {
                    if *c == b'\n' {
                        line += 1;
                    }
                    pos += 1;
                }
                Some(_) => break,
                None => return Err(Error::parse(line, "truncated header")),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(line, "expected a header number"))?;
    }
    // Exactly one whitespace byte separates the header from the raster.
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::parse(line, "missing whitespace after maxval"));
    }
    let maxval = fields[2];
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(line, format!("bad maxval {maxval}")));
    }
    Ok(Header {
        magic,
        width: fields[0] as usize,
        height: fields[1] as usize,
        maxval: maxval as u32,
        data_offset: pos + 1,
    })
}

fn raster<'a>(bytes: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    let bps = if h.maxval > 255 { 2 } else { 1 };
    let need = h.width * h.height * channels * bps;
    let data = &bytes[h.data_offset.min(bytes.len())..];
    if data.len() < need {
        return Err(Error::parse(
            0,
            format!("raster truncated: need {need} bytes, have {}", data.len()),
        ));
    }
    Ok(&data[..need])
}

/// Reads a 16-bit P5 depth map in millimeters; 0 stays invalid.
pub fn read_depth_pgm(path: &Path) -> Result<DepthImage> {
    let bytes = fs::read(path)?;
    let h = parse_header(&bytes)?;
    if &h.magic != b"P5" || h.maxval <= 255 {
        return Err(Error::parse(1, "depth must be a 16-bit P5 image"));
    }
    let data = raster(&bytes, &h, 1)?
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / 1000.0)
        .collect();
    DepthImage::new(h.width, h.height, data)
}

/// Writes depth as 16-bit big-endian millimeters, rounding to the nearest mm.
pub fn write_depth_pgm(path: &Path, depth: &DepthImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n65535\n", depth.width, depth.height).into_bytes();
    out.reserve(depth.data.len() * 2);
    for &z in &depth.data {
        let mm = (z * 1000.0).round().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&mm.to_be_bytes());
    }
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read_mask_pgm(path: &Path) -> Result<MaskImage> {
    let bytes = fs::read(path)?;
    let h = parse_header(&bytes)?;
    if &h.magic != b"P5" || h.maxval > 255 {
        return Err(Error::parse(1, "mask must be an 8-bit P5 image"));
    }
    MaskImage::new(h.width, h.height, raster(&bytes, &h, 1)?.to_vec())
}

pub fn write_mask_pgm(path: &Path, mask: &MaskImage) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    out.extend_from_slice(&mask.data);
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

pub fn read_rgb_ppm(path: &Path) -> Result<RgbImage> {
    let bytes = fs::read(path)?;
    let h = parse_header(&bytes)?;
    if &h.magic != b"P6" || h.maxval > 255 {
        return Err(Error::parse(1, "rgb must be an 8-bit P6 image"));
    }
    let data = raster(&bytes, &h, 3)?
        .chunks_exact(3)
        .map(|c| [c[0], c[1], c[2]])
        .collect();
    RgbImage::new(h.width, h.height, data)
}

pub fn write_rgb_ppm(path: &Path, rgb: &RgbImage) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", rgb.width, rgb.height).into_bytes();
    out.extend(rgb.data.iter().flatten());
    fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_round_trip_is_millimeter_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pgm");
        let depth = DepthImage::new(3, 2, vec![0.0, 1.0, 1.2344, 65.535, 0.0015, 2.0]).unwrap();
        write_depth_pgm(&path, &depth).unwrap();
        let back = read_depth_pgm(&path).unwrap();
        assert_eq!(back.data, vec![0.0, 1.0, 1.234, 65.535, 0.002, 2.0]);
        let raw = fs::read(&path).unwrap();
        assert!(raw.starts_with(b"P5\n3 2\n65535\n"));
        // 1.0 m = 1000 mm = 0x03E8, big-endian.
        assert_eq!(&raw[raw.len() - 10..raw.len() - 8], &[0x03, 0xE8]);
    }

    #[test]
    fn mask_and_rgb_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mask = MaskImage::new(2, 2, vec![0, 255, 1, 0]).unwrap();
        write_mask_pgm(&dir.path().join("m.pgm"), &mask).unwrap();
        assert_eq!(read_mask_pgm(&dir.path().join("m.pgm")).unwrap(), mask);

        let rgb = RgbImage::new(2, 1, vec![[255, 0, 0], [1, 2, 3]]).unwrap();
        write_rgb_ppm(&dir.path().join("c.ppm"), &rgb).unwrap();
        assert_eq!(read_rgb_ppm(&dir.path().join("c.ppm")).unwrap(), rgb);
    }

    #[test]
    fn header_comments_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.pgm");
        fs::write(&path, b"P5\n# comment\n2 1\n255\n\x07\x08").unwrap();
        assert_eq!(read_mask_pgm(&path).unwrap().data, vec![7, 8]);

        fs::write(&path, b"P5\n2 1\n255\n\x07").unwrap();
        assert!(read_mask_pgm(&path).is_err());
        fs::write(&path, b"P6\n1 1\n255\n\x00\x00\x00").unwrap();
        assert!(read_mask_pgm(&path).is_err());
        assert!(read_depth_pgm(&path).is_err());
    }
}
