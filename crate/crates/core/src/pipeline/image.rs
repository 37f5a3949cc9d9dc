//! 8-bit PNG images as `[3, H, W]` tensors in `[0, 1]`.

use std::io::{BufReader, Cursor};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Loads a PNG, mapping byte `v` to `v / 255`. Grey and alpha channels are
/// expanded or dropped to give three channels.
pub fn load_png(path: &Path) -> Result<Tensor> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    decode_png(BufReader::new(file), &path.display().to_string())
}

pub fn decode_png<R: std::io::BufRead + std::io::Seek>(r: R, origin: &str) -> Result<Tensor> {
    let bad = |e: png::DecodingError| Error::format(origin, e.to_string());
    let mut decoder = png::Decoder::new(r);
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(origin, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    if info.bit_depth != BitDepth::Eight {
        return Err(Error::format(origin, format!("expected 8-bit samples, got {:?}", info.bit_depth)));
    }
    let (h, w) = (info.height as usize, info.width as usize);
    let stride = match info.color_type {
        ColorType::Rgb => 3,
        ColorType::Rgba => 4,
        ColorType::Grayscale => 1,
        ColorType::GrayscaleAlpha => 2,
        ColorType::Indexed => return Err(Error::format(origin, "unexpanded palette")),
    };
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        let row = &buf[y * info.line_size..];
        for x in 0..w {
            let px = &row[x * stride..];
            for c in 0..3 {
                let v = if stride >= 3 { px[c] } else { px[0] };
                data[(c * h + y) * w + x] = f64::from(v) / 255.0;
            }
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Rounds `v · 255` half away from zero after clamping to `[0, 1]`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_png(img: &Tensor) -> Result<Vec<u8>> {
    let [3, h, w] = img.shape()[..] else {
        return Err(Error::shape("save_png", format!("expected [3, H, W], got {:?}", img.shape())));
    };
    let mut bytes = vec![0u8; 3 * h * w];
    for c in 0..3 {
        for i in 0..h * w {
            bytes[i * 3 + c] = quantize(img.data()[c * h * w + i]);
        }
    }
    let mut out = Cursor::new(Vec::new());
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(ColorType::Rgb);
        enc.set_depth(BitDepth::Eight);
        let fail = |e: png::EncodingError| Error::Data(format!("png encoding: {e}"));
        let mut writer = enc.write_header().map_err(fail)?;
        writer.write_image_data(&bytes).map_err(fail)?;
        writer.finish().map_err(fail)?;
    }
    Ok(out.into_inner())
}

pub fn save_png(img: &Tensor, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &encode_png(img)?)
}
