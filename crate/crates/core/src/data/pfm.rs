//! Single-channel portable float maps. Invalid pixels are stored as a negative
//! sentinel; rows run bottom to top.

use std::fs;
use std::path::Path;

use crate::depth_map::DepthMap;
use crate::error::{Error, Result};

pub const INVALID_SENTINEL: f32 = -1.0;

pub fn encode_pfm(depth: &DepthMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).into_bytes();
    for row in (0..depth.height).rev() {
        for x in 0..depth.width {
            let i = row * depth.width + x;
            let v = if depth.valid[i] { depth.values[i] as f32 } else { INVALID_SENTINEL };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("truncated PFM header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format("non-ASCII PFM header".into()))
}

/// Parses a grayscale PFM; negative or non-finite samples become invalid.
pub fn decode_pfm(bytes: &[u8]) -> Result<DepthMap> {
    let mut pos = 0;
    match next_token(bytes, &mut pos)? {
        "Pf" => {}
        "PF" => return Err(Error::Format("colour PFM is not a depth map".into())),
        other => return Err(Error::Format(format!("bad PFM magic {other:?}"))),
    }
    let parse_dim = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PFM dimension {s:?}")));
    let width = parse_dim(next_token(bytes, &mut pos)?)?;
    let height = parse_dim(next_token(bytes, &mut pos)?)?;
    let scale_tok = next_token(bytes, &mut pos)?;
    let scale: f64 = scale_tok
        .parse()
        .map_err(|_| Error::Format(format!("bad PFM scale {scale_tok:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Format("PFM scale must be nonzero".into()));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height;
    let raster = bytes.get(pos..).unwrap_or(&[]);
    if raster.len() != n * 4 {
        return Err(Error::Format(format!("PFM raster has {} bytes, expected {}", raster.len(), n * 4)));
    }
    let mut values = vec![0.0; n];
    let mut valid = vec![false; n];
    for (k, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (row_from_bottom, x) = (k / width, k % width);
        let i = (height - 1 - row_from_bottom) * width + x;
        if v.is_finite() && v >= 0.0 {
            values[i] = v as f64;
            valid[i] = true;
        }
    }
    DepthMap::new(height, width, values, valid)
}

pub fn save_depth_pfm(depth: &DepthMap, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, encode_pfm(depth)).map_err(|e| Error::io(path, e))
}

pub fn load_depth_pfm(path: &Path) -> Result<DepthMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_written_fixture() {
        let mut bytes = b"Pf\n2 2\n-1.0\n".to_vec();
        // Bottom row first: (1,0)=3.0 (1,1)=-1 sentinel, then top row 1.0 2.5.
        for v in [3.0f32, -1.0, 1.0, 2.5] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let d = decode_pfm(&bytes).unwrap();
        assert_eq!(d.values, vec![1.0, 2.5, 3.0, 0.0]);
        assert_eq!(d.valid, vec![true, true, true, false]);
        assert_eq!(encode_pfm(&d), bytes);
    }

    #[test]
    fn malformed_headers() {
        assert!(matches!(decode_pfm(b"P5\n1 1\n-1\n\0\0\0\0"), Err(Error::Format(_))));
        assert!(matches!(decode_pfm(b"Pf\n2 2\n-1.0\n\0\0"), Err(Error::Format(_))));
        assert!(matches!(decode_pfm(b"PF\n1 1\n-1\n"), Err(Error::Format(_))));
    }
}
