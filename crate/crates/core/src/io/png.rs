use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Rounds `[0,1]` values to the nearest 8-bit level.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Loads an image as `3 x H x W` in `[0, 1]`.
pub fn load_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let raw = img.as_raw();
    Ok(Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        raw[p * 3 + c] as f32 / 255.0
    }))
}

/// Writes a `3 x H x W` (or `1 x 3 x H x W`) tensor as 8-bit RGB.
pub fn save_rgb(path: &Path, img: &Tensor<f32>) -> Result<()> {
    let s = img.shape();
    let (h, w) = match s {
        [3, h, w] | [1, 3, h, w] => (*h, *w),
        _ => return Err(Error::invalid("save_rgb", format!("expected 3 x H x W, got {s:?}"))),
    };
    let d = img.data();
    let buf: Vec<u8> = (0..h * w)
        .flat_map(|p| (0..3).map(move |c| quantize(d[c * h * w + p])))
        .collect();
    let out = RgbImage::from_raw(w as u32, h as u32, buf).expect("buffer sized from extents");
    encode(path, |p| out.save_with_format(p, image::ImageFormat::Png))
}

/// Writes an `H x W` plane in `[0, 1]` as 8-bit grayscale.
pub fn save_gray(path: &Path, plane: &[f32], h: usize, w: usize) -> Result<()> {
    let buf: Vec<u8> = plane.iter().map(|&v| quantize(v)).collect();
    let out = GrayImage::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| Error::invalid("save_gray", "plane size mismatch"))?;
    encode(path, |p| out.save_with_format(p, image::ImageFormat::Png))
}

fn encode(path: &Path, f: impl FnOnce(&Path) -> image::ImageResult<()>) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    f(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_exact_on_8bit_levels() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let img = Tensor::from_fn(&[3, 5, 7], |i| ((i * 37) % 256) as f32 / 255.0);
        save_rgb(&p, &img).unwrap();
        let back = load_rgb(&p).unwrap();
        assert_eq!(back, img);
    }
}
