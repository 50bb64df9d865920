//! PNG helpers: 8-bit RGB images, 8-bit indexed visualisations and 16-bit
//! grayscale index maps.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use png::{BitDepth, ColorType};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn encode(path: &Path, width: usize, height: usize, color: ColorType, depth: BitDepth, data: &[u8]) -> Result<()> {
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut writer = enc.write_header().map_err(|e| Error::Format(e.to_string()))?;
        writer.write_image_data(data).map_err(|e| Error::Format(e.to_string()))?;
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Decoded {
    width: usize,
    height: usize,
    color: ColorType,
    depth: BitDepth,
    data: Vec<u8>,
}

fn decode(path: &Path) -> Result<Decoded> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fmt = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(fmt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut data = vec![0u8; size];
    let info = reader.next_frame(&mut data).map_err(fmt)?;
    data.truncate(info.buffer_size());
    Ok(Decoded {
        width: info.width as usize,
        height: info.height as usize,
        color: info.color_type,
        depth: info.bit_depth,
        data,
    })
}

pub fn write_rgb8(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    encode(path, width, height, ColorType::Rgb, BitDepth::Eight, rgb)
}

/// Reads an 8-bit RGB (or RGBA, alpha dropped) PNG.
pub fn read_rgb8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let d = decode(path)?;
    if d.depth != BitDepth::Eight {
        return Err(Error::Format(format!("{}: expected 8-bit color", path.display())));
    }
    let rgb = match d.color {
        ColorType::Rgb => d.data,
        ColorType::Rgba => d.data.chunks(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        ColorType::Grayscale => d.data.iter().flat_map(|&v| [v, v, v]).collect(),
        other => return Err(Error::Format(format!("{}: unsupported color type {other:?}", path.display()))),
    };
    Ok((d.width, d.height, rgb))
}

pub fn write_gray16(path: &Path, width: usize, height: usize, values: &[u16]) -> Result<()> {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_be_bytes()).collect();
    encode(path, width, height, ColorType::Grayscale, BitDepth::Sixteen, &bytes)
}

/// Reads a 16-bit single-channel PNG; any other layout is a format error.
pub fn read_gray16(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let d = decode(path)?;
    if d.color != ColorType::Grayscale || d.depth != BitDepth::Sixteen {
        return Err(Error::Format(format!(
            "{}: expected 16-bit grayscale index map, found {:?} at {:?}",
            path.display(),
            d.color,
            d.depth
        )));
    }
    let values = d.data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Ok((d.width, d.height, values))
}

/// `[3, h, w]` tensor in `[-1, 1]` to interleaved RGB bytes.
pub fn tensor_to_rgb8(image: &Tensor) -> Vec<u8> {
    let (c, h, w) = (image.shape()[0], image.shape()[1], image.shape()[2]);
    assert_eq!(c, 3);
    let d = image.data();
    let mut out = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        for ch in 0..3 {
            out.push((((d[ch * h * w + i] + 1.0) * 127.5).round().clamp(0.0, 255.0)) as u8);
        }
    }
    out
}

/// Interleaved RGB bytes to a `[3, h, w]` tensor in `[-1, 1]`.
pub fn rgb8_to_tensor(width: usize, height: usize, rgb: &[u8]) -> Tensor {
    let hw = width * height;
    let mut data = vec![0.0f32; 3 * hw];
    for i in 0..hw {
        for ch in 0..3 {
            data[ch * hw + i] = rgb[i * 3 + ch] as f32 / 127.5 - 1.0;
        }
    }
    Tensor::from_vec(&[3, height, width], data).expect("image shape")
}

/// Fixed 5-stop perceptual colormap (dark purple to yellow), `v` in `[0, 1]`.
pub fn colormap(v: f32) -> [u8; 3] {
    const STOPS: [[f32; 3]; 5] = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    let pos = v * (STOPS.len() - 1) as f32;
    let i = (pos.floor() as usize).min(STOPS.len() - 2);
    let f = pos - i as f32;
    let mut out = [0u8; 3];
    for c in 0..3 {
        out[c] = (STOPS[i][c] * (1.0 - f) + STOPS[i + 1][c] * f).round() as u8;
    }
    out
}

/// Distinct colours for label maps.
pub fn palette(index: usize) -> [u8; 3] {
    const P: [[u8; 3]; 10] = [
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 190],
    ];
    P[index % P.len()]
}
