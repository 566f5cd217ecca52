//! Minimal PNG encode/decode with `tEXt` metadata.

use std::collections::BTreeMap;
use std::io::Cursor;

#[derive(Debug, thiserror::Error)]
pub enum PngError {
    #[error("png encode: {0}")]
    Encode(#[from] png::EncodingError),
    #[error("png decode: {0}")]
    Decode(#[from] png::DecodingError),
    #[error("pixel buffer holds {got} bytes, expected {expected}")]
    BufferSize { got: usize, expected: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PngSummary {
    pub width: u32,
    pub height: u32,
    pub text: BTreeMap<String, String>,
}

/// Encodes 8-bit RGB pixels, writing each `(keyword, text)` as a `tEXt` chunk
/// ahead of the image data.
pub fn encode_rgb(width: u32, height: u32, rgb: &[u8], text: &[(&str, &str)]) -> Result<Vec<u8>, PngError> {
    let expected = width as usize * height as usize * 3;
    if rgb.len() != expected {
        return Err(PngError::BufferSize { got: rgb.len(), expected });
    }
    let mut out = Vec::new();
    {
        let mut encoder = png::Encoder::new(&mut out, width, height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        for (keyword, value) in text {
            encoder.add_text_chunk((*keyword).to_string(), (*value).to_string())?;
        }
        let mut writer = encoder.write_header()?;
        writer.write_image_data(rgb)?;
        writer.finish()?;
    }
    Ok(out)
}

/// Fully decodes `bytes`, so truncated or corrupt images are rejected, and
/// returns dimensions plus every uncompressed text chunk.
pub fn decode(bytes: &[u8]) -> Result<PngSummary, PngError> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info()?;
    let mut buf = vec![0; reader.output_buffer_size().unwrap_or(0)];
    reader.next_frame(&mut buf)?;
    reader.finish()?;
    let info = reader.info();
    let text = info
        .uncompressed_latin1_text
        .iter()
        .map(|c| (c.keyword.clone(), c.text.clone()))
        .chain(
            info.utf8_text
                .iter()
                .filter_map(|c| c.get_text().ok().map(|t| (c.keyword.clone(), t))),
        )
        .collect();
    Ok(PngSummary {
        width: info.width,
        height: info.height,
        text,
    })
}
