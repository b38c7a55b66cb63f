//! 8-bit grayscale / RGB PNG reading and writing.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use fsosr_core::dataset::RasterImage;

use crate::error::{Error, Result};

pub fn read_png(path: &Path) -> Result<RasterImage> {
    let file = File::open(path).map_err(Error::io(path))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Format(format!(
            "{}: only 8-bit PNGs are supported",
            path.display()
        )));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::Format(format!(
                "{}: unsupported color type {other:?}",
                path.display()
            )))
        }
    };
    buf.truncate(info.buffer_size());
    Ok(RasterImage::new(
        info.width as usize,
        info.height as usize,
        channels,
        buf,
    )?)
}

pub fn write_png(path: &Path, img: &RasterImage) -> Result<()> {
    let file = File::create(path).map_err(Error::io(path))?;
    let mut encoder = png::Encoder::new(
        BufWriter::new(file),
        img.width() as u32,
        img.height() as u32,
    );
    encoder.set_color(if img.channels() == 1 {
        png::ColorType::Grayscale
    } else {
        png::ColorType::Rgb
    });
    encoder.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| match e {
        png::EncodingError::IoError(source) => Error::Io {
            path: path.to_path_buf(),
            source,
        },
        other => Error::Format(other.to_string()),
    };
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(img.pixels()).map_err(png_err)?;
    writer.finish().map_err(png_err)
}
