//! Image files. Binary PPM (P6, maxval 255) is handled natively; PNG goes
//! through the [`ImageCodec`] adapter when the `png` feature is enabled.

use super::ply::quantize;
use crate::error::{Error, Result};
use crate::sampler::Image;
use crate::Rgb;
use std::path::Path;

/// Converts between encoded bytes and [`Image`]. Channel values map by
/// `/255` on decode and round-to-nearest on encode.
pub trait ImageCodec {
    fn decode(&self, bytes: &[u8]) -> Result<Image>;
    fn encode(&self, image: &Image) -> Result<Vec<u8>>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct PpmCodec;

#[cfg(feature = "png")]
#[derive(Clone, Copy, Debug, Default)]
pub struct PngCodec;

fn rgb8_to_image(width: usize, height: usize, bytes: &[u8]) -> Result<Image> {
    let pixels = bytes
        .chunks_exact(3)
        .map(|c| Rgb::new(c[0] as f64, c[1] as f64, c[2] as f64) / 255.0)
        .collect();
    Image::new(width, height, pixels)
}

fn image_to_rgb8(image: &Image) -> Vec<u8> {
    image
        .pixels()
        .iter()
        .flat_map(|c| [quantize(c.x), quantize(c.y), quantize(c.z)])
        .collect()
}

/// Reads one header integer, skipping whitespace and `#` comments.
fn header_uint(data: &[u8], pos: &mut usize) -> Result<usize> {
    loop {
        match data.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while data.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            _ => break,
        }
    }
    let start = *pos;
    while data.get(*pos).is_some_and(|b| b.is_ascii_digit()) {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::parse(start, "expected an unsigned integer"));
    }
    std::str::from_utf8(&data[start..*pos])
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::parse(start, "integer out of range"))
}

impl ImageCodec for PpmCodec {
    fn decode(&self, data: &[u8]) -> Result<Image> {
        if !data.starts_with(b"P6") {
            return Err(Error::parse(0, "unsupported magic, expected P6"));
        }
        let mut pos = 2;
        let width = header_uint(data, &mut pos)?;
        let height = header_uint(data, &mut pos)?;
        let max_off = pos;
        let maxval = header_uint(data, &mut pos)?;
        if maxval != 255 {
            return Err(Error::parse(max_off, format!("maxval {maxval} is not 255")));
        }
        if !data.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
            return Err(Error::parse(pos, "missing whitespace after maxval"));
        }
        pos += 1;
        if width == 0 || height == 0 {
            return Err(Error::parse(0, "image has zero size"));
        }
        let need = width
            .checked_mul(height)
            .and_then(|n| n.checked_mul(3))
            .ok_or_else(|| Error::parse(0, "image dimensions overflow"))?;
        if data.len() - pos < need {
            return Err(Error::parse(
                data.len(),
                format!("short read: expected {need} pixel bytes, found {}", data.len() - pos),
            ));
        }
        rgb8_to_image(width, height, &data[pos..pos + need])
    }

    fn encode(&self, image: &Image) -> Result<Vec<u8>> {
        let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
        out.extend(image_to_rgb8(image));
        Ok(out)
    }
}

#[cfg(feature = "png")]
impl ImageCodec for PngCodec {
    fn decode(&self, data: &[u8]) -> Result<Image> {
        let bad = |e: png::DecodingError| Error::parse(0, format!("png: {e}"));
        let mut decoder = png::Decoder::new(std::io::Cursor::new(data));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info().map_err(bad)?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::parse(0, "png: image too large"))?;
        let mut buf = vec![0; size];
        let info = reader.next_frame(&mut buf).map_err(bad)?;
        let (w, h) = (info.width as usize, info.height as usize);
        let buf = &buf[..info.buffer_size()];
        let rgb: Vec<u8> = match info.color_type {
            png::ColorType::Rgb => buf.to_vec(),
            png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|c| [c[0], c[1], c[2]]).collect(),
            png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
            png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|c| [c[0], c[0], c[0]]).collect(),
            png::ColorType::Indexed => return Err(Error::parse(0, "png: unexpanded palette")),
        };
        if rgb.len() != w * h * 3 {
            return Err(Error::parse(0, "png: unexpected buffer size"));
        }
        rgb8_to_image(w, h, &rgb)
    }

    fn encode(&self, image: &Image) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc
                .write_header()
                .map_err(|e| Error::invalid(format!("png: {e}")))?;
            w.write_image_data(&image_to_rgb8(image))
                .map_err(|e| Error::invalid(format!("png: {e}")))?;
        }
        Ok(out)
    }
}

const PNG_MAGIC: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Decodes by magic bytes.
pub fn decode_image(data: &[u8]) -> Result<Image> {
    if data.starts_with(PNG_MAGIC) {
        #[cfg(feature = "png")]
        return PngCodec.decode(data);
        #[cfg(not(feature = "png"))]
        return Err(Error::parse(0, "PNG support is disabled"));
    }
    PpmCodec.decode(data)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Image> {
    decode_image(&std::fs::read(path)?)
}

/// Writes PNG for a `.png` extension and PPM otherwise.
pub fn save_image(path: impl AsRef<Path>, image: &Image) -> Result<()> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = if is_png {
        #[cfg(feature = "png")]
        {
            PngCodec.encode(image)?
        }
        #[cfg(not(feature = "png"))]
        return Err(Error::invalid("PNG support is disabled"));
    } else {
        PpmCodec.encode(image)?
    };
    std::fs::write(path, bytes)?;
    Ok(())
}
