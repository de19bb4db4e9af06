//! 8-bit PNG codec. Samples map `v -> 2 v / 255 - 1` on load.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::image::ImageField;

pub fn decode_png(bytes: &[u8]) -> Result<ImageField> {
    read_png(std::io::Cursor::new(bytes))
}

fn read_png<R: std::io::BufRead + std::io::Seek>(source: R) -> Result<ImageField> {
    let mut decoder = png::Decoder::new(source);
    decoder.set_transformations(Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::Codec(format!("png: {e}")))?;
    let info = reader.info();
    let (width, height) = (info.width as usize, info.height as usize);
    if info.bit_depth != BitDepth::Eight {
        return Err(Error::Codec(format!("unsupported bit depth {}", info.bit_depth as u8)));
    }
    let channels = match info.color_type {
        ColorType::Grayscale => 1,
        ColorType::Rgb => 3,
        other => return Err(Error::Codec(format!("unsupported color type {other:?}"))),
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Codec("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| Error::Codec(format!("png: {e}")))?;
    let stride = frame.line_size;
    let mut data = vec![0.0; height * width * channels];
    for y in 0..height {
        let row = &buf[y * stride..y * stride + width * channels];
        for x in 0..width {
            for c in 0..channels {
                data[(c * height + y) * width + x] = 2.0 * f64::from(row[x * channels + c]) / 255.0 - 1.0;
            }
        }
    }
    ImageField::new(height, width, channels, data)
}

pub fn load_image(path: &Path) -> Result<ImageField> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_png(BufReader::new(file)).map_err(|e| match e {
        Error::Codec(m) => Error::Codec(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// `[-1, 1] -> {0..255}`, clamped, rounding half up.
pub fn to_u8(v: f64) -> u8 {
    let s = (v + 1.0) / 2.0 * 255.0;
    (s + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub fn encode_png(field: &ImageField) -> Result<Vec<u8>> {
    let (h, w, c) = field.shape();
    let color = match c {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        n => return Err(Error::Codec(format!("cannot encode {n}-channel image as PNG"))),
    };
    let mut pixels = vec![0u8; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                pixels[(y * w + x) * c + ch] = to_u8(field.get(ch, y, x));
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(color);
        enc.set_depth(BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Codec(format!("png: {e}")))?;
        writer
            .write_image_data(&pixels)
            .map_err(|e| Error::Codec(format!("png: {e}")))?;
        writer.finish().map_err(|e| Error::Codec(format!("png: {e}")))?;
    }
    Ok(out)
}

pub fn save_image(field: &ImageField, path: &Path) -> Result<()> {
    let bytes = encode_png(field)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    std::io::Write::write_all(&mut w, &bytes).map_err(|e| Error::io(path, e))?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

/// Min-max stretch of a positive map to the full model range, for viewing.
pub fn normalize_for_display(map: &ImageField) -> ImageField {
    let lo = map.data().iter().copied().fold(f64::INFINITY, f64::min);
    let hi = map.data().iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return map.map(|_| -1.0);
    }
    map.map(|v| 2.0 * (v - lo) / (hi - lo) - 1.0)
}
