//! 8-bit PNG input and output.

use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::ImageTensor;
use crate::scalar::Scalar;

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// 8-bit level to intensity: `v / 255`.
pub fn level_to_intensity<T: Scalar>(v: u8) -> T {
    T::of(v as f64 / 255.0)
}

/// Intensity to 8-bit level: `round(v * 255)` with halves rounded up,
/// clamped to `[0, 255]`.
pub fn intensity_to_level<T: Scalar>(v: T) -> u8 {
    let scaled = (v.as_f64() * 255.0 + 0.5).floor();
    scaled.clamp(0.0, 255.0) as u8
}

/// Reads an 8-bit grayscale or RGB PNG into `[0, 1]` intensities.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<ImageTensor<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_png(&bytes, path)
}

pub(crate) fn decode_png<T: Scalar>(bytes: &[u8], path: &Path) -> Result<ImageTensor<T>> {
    if bytes.len() < PNG_SIGNATURE.len() || bytes[..8] != PNG_SIGNATURE {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            reason: "not a PNG file".into(),
        });
    }
    let corrupt = |e: png::DecodingError| Error::CorruptImage {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let (color, depth) = reader.output_color_type();
    let channels = match (color, depth) {
        (png::ColorType::Grayscale, png::BitDepth::Eight) => 1,
        (png::ColorType::Rgb, png::BitDepth::Eight) => 3,
        other => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                reason: format!("{:?} at {:?} bits; only 8-bit gray or RGB", other.0, other.1),
            })
        }
    };
    let size = reader.output_buffer_size().ok_or_else(|| Error::CorruptImage {
        path: path.to_path_buf(),
        reason: "image too large".into(),
    })?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    let (w, h) = (info.width as usize, info.height as usize);
    // Interleaved HWC bytes to planar CHW intensities.
    let mut data = vec![T::zero(); channels * h * w];
    for y in 0..h {
        let line = &buf[y * info.line_size..y * info.line_size + w * channels];
        for x in 0..w {
            for c in 0..channels {
                data[(c * h + y) * w + x] = level_to_intensity(line[x * channels + c]);
            }
        }
    }
    ImageTensor::new(channels, h, w, data)
}

/// Writes an image as 8-bit PNG, quantising with [`intensity_to_level`].
pub fn save_image<T: Scalar>(img: &ImageTensor<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (c, h, w) = img.dims();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(if c == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let enc_err = |e: png::EncodingError| Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    };
    let mut writer = encoder.write_header().map_err(enc_err)?;
    let mut bytes = vec![0u8; c * h * w];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                bytes[(y * w + x) * c + ch] = intensity_to_level(img.get(ch, y, x));
            }
        }
    }
    writer.write_image_data(&bytes).map_err(enc_err)?;
    writer.finish().map_err(enc_err)
}
