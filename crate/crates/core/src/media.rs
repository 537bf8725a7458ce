//! Image payloads carried inside requests.
//!
//! Images are kept as their original encoded bytes so request fingerprints
//! stay tied to the exact file contents. Decoding happens only to validate
//! inputs and when panels must be concatenated for single-image backends.

use std::fmt;
use std::io::Cursor;
use std::path::Path;
use std::sync::Arc;

use base64::Engine;
use image::{DynamicImage, ImageFormat, Rgb, RgbImage};

#[derive(Debug, thiserror::Error)]
pub enum MediaError {
    #[error("image payload is empty")]
    Empty,
    #[error("cannot decode image: {0}")]
    Decode(String),
    #[error("cannot read image {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("concatenation needs at least two images, got {0}")]
    SingleImage(usize),
}

/// Encoded image bytes plus their media type.
#[derive(Clone, PartialEq, Eq)]
pub struct ImageData {
    media_type: String,
    bytes: Arc<[u8]>,
}

impl fmt::Debug for ImageData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ImageData")
            .field("media_type", &self.media_type)
            .field("len", &self.bytes.len())
            .finish()
    }
}

impl ImageData {
    /// Wraps raw bytes after checking they decode. The media type is sniffed
    /// from the content, not trusted from a file extension.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self, MediaError> {
        if bytes.is_empty() {
            return Err(MediaError::Empty);
        }
        let format = image::guess_format(&bytes).map_err(|e| MediaError::Decode(e.to_string()))?;
        image::load_from_memory_with_format(&bytes, format).map_err(|e| MediaError::Decode(e.to_string()))?;
        Ok(Self {
            media_type: format.to_mime_type().to_string(),
            bytes: bytes.into(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, MediaError> {
        let bytes = std::fs::read(path).map_err(|source| MediaError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_bytes(bytes)
    }

    /// Encodes a decoded image as PNG.
    pub fn from_image(img: &DynamicImage) -> Result<Self, MediaError> {
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, ImageFormat::Png)
            .map_err(|e| MediaError::Decode(e.to_string()))?;
        Ok(Self {
            media_type: "image/png".to_string(),
            bytes: buf.into_inner().into(),
        })
    }

    pub fn media_type(&self) -> &str {
        &self.media_type
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn decode(&self) -> Result<DynamicImage, MediaError> {
        image::load_from_memory(&self.bytes).map_err(|e| MediaError::Decode(e.to_string()))
    }
}

/// Base-64 text of an image, tagged with its media type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedImage {
    pub media_type: String,
    pub data: String,
}

/// Standard (padded) base-64 of the image's encoded bytes.
pub fn encode_image(image: &ImageData) -> EncodedImage {
    EncodedImage {
        media_type: image.media_type.clone(),
        data: base64::engine::general_purpose::STANDARD.encode(image.bytes()),
    }
}

/// Encodes raw bytes, rejecting empty or undecodable input.
pub fn encode_image_bytes(bytes: &[u8]) -> Result<EncodedImage, MediaError> {
    Ok(encode_image(&ImageData::from_bytes(bytes.to_vec())?))
}

/// Places images side by side, left to right. Width is the sum of widths,
/// height the tallest image; shorter panels are padded with black below.
pub fn concat_horizontal(images: &[ImageData]) -> Result<ImageData, MediaError> {
    if images.len() < 2 {
        return Err(MediaError::SingleImage(images.len()));
    }
    let panels = images
        .iter()
        .map(|img| img.decode().map(|d| d.to_rgb8()))
        .collect::<Result<Vec<_>, _>>()?;
    let width: u32 = panels.iter().map(|p| p.width()).sum();
    let height = panels.iter().map(|p| p.height()).max().unwrap_or(0);
    let mut canvas = RgbImage::from_pixel(width, height, Rgb([0, 0, 0]));
    let mut x0 = 0;
    for panel in &panels {
        image::imageops::replace(&mut canvas, panel, i64::from(x0), 0);
        x0 += panel.width();
    }
    ImageData::from_image(&DynamicImage::ImageRgb8(canvas))
}
