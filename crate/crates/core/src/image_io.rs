//! Binary PPM (P6) / PGM (P5) reading and writing, plus PNG behind the `png` feature.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::augmentation::Image;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("i/o error on {path}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("malformed netpbm data: {0}")]
    Malformed(String),
    #[error("unsupported image format: {0}")]
    Unsupported(String),
}

fn malformed(msg: impl Into<String>) -> ImageIoError {
    ImageIoError::Malformed(msg.into())
}

/// Parses a binary PPM or PGM with maxval 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<Image, ImageIoError> {
    let mut pos = 0usize;
    let mut token = || -> Result<String, ImageIoError> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("truncated header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };

    let magic = token()?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(ImageIoError::Unsupported(format!("netpbm magic {other}"))),
    };
    let mut num = |what: &str| -> Result<usize, ImageIoError> {
        token()?
            .parse::<usize>()
            .map_err(|_| malformed(format!("bad {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(ImageIoError::Unsupported(format!("maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let need = width * height * channels;
    if bytes.len() < start + need {
        return Err(malformed(format!(
            "expected {need} raster bytes, found {}",
            bytes.len().saturating_sub(start)
        )));
    }
    Image::new(width, height, channels, bytes[start..start + need].to_vec())
        .map_err(|e| malformed(e.to_string()))
}

pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels() == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend_from_slice(img.pixels());
    out
}

/// Extension matching what [`write_image`] produces for this image's channel count.
pub fn pnm_extension(img: &Image) -> &'static str {
    if img.channels() == 3 {
        "ppm"
    } else {
        "pgm"
    }
}

pub fn read_image(path: &Path) -> Result<Image, ImageIoError> {
    let bytes = fs::read(path).map_err(|source| ImageIoError::Io {
        path: path.display().to_string(),
        source,
    })?;
    if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        return decode_pnm(&bytes);
    }
    if bytes.starts_with(b"\x89PNG") {
        return decode_png(&bytes);
    }
    Err(ImageIoError::Unsupported(path.display().to_string()))
}

pub fn write_image(path: &Path, img: &Image) -> Result<(), ImageIoError> {
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some("png") => encode_png(img)?,
        _ => encode_pnm(img),
    };
    fs::write(path, bytes).map_err(|source| ImageIoError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(feature = "png")]
fn decode_png(bytes: &[u8]) -> Result<Image, ImageIoError> {
    let dynamic = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| malformed(e.to_string()))?;
    let (img, channels) = match dynamic.color().channel_count() {
        1 | 2 => (dynamic.to_luma8().into_raw(), 1),
        _ => (dynamic.to_rgb8().into_raw(), 3),
    };
    Image::new(
        dynamic.width() as usize,
        dynamic.height() as usize,
        channels,
        img,
    )
    .map_err(|e| malformed(e.to_string()))
}

#[cfg(not(feature = "png"))]
fn decode_png(_: &[u8]) -> Result<Image, ImageIoError> {
    Err(ImageIoError::Unsupported(
        "PNG support requires the `png` feature".into(),
    ))
}

#[cfg(feature = "png")]
fn encode_png(img: &Image) -> Result<Vec<u8>, ImageIoError> {
    let color = if img.channels() == 3 {
        image::ExtendedColorType::Rgb8
    } else {
        image::ExtendedColorType::L8
    };
    let mut out = io::Cursor::new(Vec::new());
    image::write_buffer_with_format(
        &mut out,
        img.pixels(),
        img.width() as u32,
        img.height() as u32,
        color,
        image::ImageFormat::Png,
    )
    .map_err(|e| malformed(e.to_string()))?;
    Ok(out.into_inner())
}

#[cfg(not(feature = "png"))]
fn encode_png(_: &Image) -> Result<Vec<u8>, ImageIoError> {
    Err(ImageIoError::Unsupported(
        "PNG support requires the `png` feature".into(),
    ))
}
