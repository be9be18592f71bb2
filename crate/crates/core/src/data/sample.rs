use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Mask values at or above this gray level are crack pixels.
pub const MASK_THRESHOLD: u8 = 128;

/// An image/mask pair. `image` is channel-major `3 x H x W` in `[0, 1]`;
/// `mask` is `H x W` with values in `{0, 1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub height: usize,
    pub width: usize,
    pub image: Vec<f32>,
    pub mask: Vec<u8>,
    pub image_path: Option<PathBuf>,
    pub mask_path: Option<PathBuf>,
}

impl Sample {
    pub fn new(name: impl Into<String>, height: usize, width: usize, image: Vec<f32>, mask: Vec<u8>) -> Result<Self> {
        if image.len() != 3 * height * width || mask.len() != height * width {
            return Err(Error::Data(format!(
                "sample buffers do not match {height}x{width} ({} image values, {} mask values)",
                image.len(),
                mask.len()
            )));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::Data("mask must be binary".into()));
        }
        Ok(Self {
            name: name.into(),
            height,
            width,
            image,
            mask,
            image_path: None,
            mask_path: None,
        })
    }

    pub fn size(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

/// Reads an 8-bit image as `3 x H x W` floats in `[0, 1]`; grayscale is
/// replicated across the three channels.
pub fn load_image(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let rgb = open(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut out = vec![0.0; 3 * h * w];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            out[c * h * w + i] = f32::from(px[c]) / 255.0;
        }
    }
    Ok((h, w, out))
}

/// Reads a mask and binarizes it at [`MASK_THRESHOLD`].
pub fn load_mask(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let gray = open(path)?.to_luma8();
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok((h, w, gray.pixels().map(|p| u8::from(p[0] >= MASK_THRESHOLD)).collect()))
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?
        .decode()
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            source: e,
        })
}

pub fn load_sample(image_path: &Path, mask_path: &Path) -> Result<Sample> {
    let (h, w, image) = load_image(image_path)?;
    let (mh, mw, mask) = load_mask(mask_path)?;
    if (h, w) != (mh, mw) {
        return Err(Error::SampleSizeMismatch {
            image: image_path.to_path_buf(),
            mask: mask_path.to_path_buf(),
            image_size: (h, w),
            mask_size: (mh, mw),
        });
    }
    let name = image_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Sample {
        name,
        height: h,
        width: w,
        image,
        mask,
        image_path: Some(image_path.to_path_buf()),
        mask_path: Some(mask_path.to_path_buf()),
    })
}

/// Writes a binary mask as an 8-bit 0/255 PNG.
pub fn save_mask_png(path: &Path, height: usize, width: usize, mask: &[u8]) -> Result<()> {
    let img = image::GrayImage::from_fn(width as u32, height as u32, |x, y| {
        image::Luma([if mask[y as usize * width + x as usize] != 0 {
            255
        } else {
            0
        }])
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes a `3 x H x W` image in `[0, 1]` as an 8-bit RGB PNG.
pub fn save_image_png(path: &Path, height: usize, width: usize, image: &[f32]) -> Result<()> {
    let n = height * width;
    if image.len() != 3 * n {
        return Err(Error::shape("save_image_png", &[image.len()], &[3, height, width]));
    }
    let img = image::RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let i = y as usize * width + x as usize;
        image::Rgb([0, 1, 2].map(|c| (image[c * n + i].clamp(0.0, 1.0) * 255.0).round() as u8))
    });
    img.save(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        source: e,
    })
}
