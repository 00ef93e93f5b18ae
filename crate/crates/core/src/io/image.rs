//! PNG ingestion, channel-last [H, W, 3] images in [0, 1], and bilinear
//! resizing with half-pixel centers.

use std::path::Path;

use image::{ColorType, DynamicImage};

use crate::error::{Error, Result};
use crate::tensor::TensorF32;

/// An RGB image: a `TensorF32` with dims [H, W, 3] and values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRGB(TensorF32);

impl ImageRGB {
    pub fn new(t: TensorF32) -> Result<Self> {
        if t.ndim() != 3 || t.dims()[2] != 3 {
            return Err(Error::shape("ImageRGB", &[0, 0, 3], t.dims()));
        }
        if t.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::InvalidConfig(
                "image values must lie in [0, 1]".into(),
            ));
        }
        Ok(ImageRGB(t))
    }

    pub fn zeros(h: usize, w: usize) -> Self {
        ImageRGB(TensorF32::zeros(&[h, w, 3]))
    }

    pub fn filled(h: usize, w: usize, v: f32) -> Self {
        assert!((0.0..=1.0).contains(&v));
        ImageRGB(TensorF32::filled(&[h, w, 3], v))
    }

    pub fn height(&self) -> usize {
        self.0.dims()[0]
    }

    pub fn width(&self) -> usize {
        self.0.dims()[1]
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.0.data()[(y * self.width() + x) * 3 + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f32) {
        let w = self.width();
        self.0.data_mut()[(y * w + x) * 3 + c] = v;
    }

    pub fn tensor(&self) -> &TensorF32 {
        &self.0
    }

    pub fn into_tensor(self) -> TensorF32 {
        self.0
    }

    pub fn data(&self) -> &[f32] {
        self.0.data()
    }

    /// Channel-first [3, H, W] copy, the layout the network code uses.
    pub fn to_chw(&self) -> TensorF32 {
        let (h, w) = (self.height(), self.width());
        let src = self.0.data();
        let mut out = TensorF32::zeros(&[3, h, w]);
        let dst = out.data_mut();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    dst[(c * h + y) * w + x] = src[(y * w + x) * 3 + c];
                }
            }
        }
        out
    }

    /// Inverse of [`to_chw`]; values are clamped into [0, 1].
    pub fn from_chw(t: &TensorF32) -> Result<Self> {
        if t.ndim() != 3 || t.dims()[0] != 3 {
            return Err(Error::shape("from_chw", &[3, 0, 0], t.dims()));
        }
        let (h, w) = (t.dims()[1], t.dims()[2]);
        let src = t.data();
        let mut out = ImageRGB::zeros(h, w);
        {
            let dst = out.0.data_mut();
            for c in 0..3 {
                for y in 0..h {
                    for x in 0..w {
                        dst[(y * w + x) * 3 + c] = src[(c * h + y) * w + x].clamp(0.0, 1.0);
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Load an 8-bit RGB or grayscale PNG; channel values become v/255.0,
/// grayscale replicated to 3 channels.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageRGB> {
    let path = path.as_ref();
    let dynimg = image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    let (h, w) = (dynimg.height() as usize, dynimg.width() as usize);
    let mut out = TensorF32::zeros(&[h, w, 3]);
    let dst = out.data_mut();
    match dynimg {
        DynamicImage::ImageRgb8(img) => {
            for (i, p) in img.pixels().enumerate() {
                dst[i * 3] = p.0[0] as f32 / 255.0;
                dst[i * 3 + 1] = p.0[1] as f32 / 255.0;
                dst[i * 3 + 2] = p.0[2] as f32 / 255.0;
            }
        }
        DynamicImage::ImageLuma8(img) => {
            for (i, p) in img.pixels().enumerate() {
                let v = p.0[0] as f32 / 255.0;
                dst[i * 3] = v;
                dst[i * 3 + 1] = v;
                dst[i * 3 + 2] = v;
            }
        }
        other => {
            return Err(Error::UnsupportedImage {
                path: path.to_path_buf(),
                reason: format!("color type {:?}", other.color()),
            });
        }
    }
    ImageRGB::new(out)
}

/// Write as 8-bit RGB PNG, quantizing with round(v * 255).
pub fn save_image(img: &ImageRGB, path: impl AsRef<Path>) -> Result<()> {
    let (h, w) = (img.height(), img.width());
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    image::save_buffer(
        path.as_ref(),
        &bytes,
        w as u32,
        h as u32,
        ColorType::Rgb8,
    )
    .map_err(|e| Error::ImageDecode {
        path: path.as_ref().to_path_buf(),
        reason: e.to_string(),
    })
}

/// Bilinear resize with half-pixel centers: the source coordinate for output
/// index d is (d + 0.5) * (in / out) - 0.5, clamped to the valid range.
pub fn resize_bilinear(img: &ImageRGB, out_h: usize, out_w: usize) -> Result<ImageRGB> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidConfig(format!(
            "resize target dims must be positive, got {out_h}x{out_w}"
        )));
    }
    let (in_h, in_w) = (img.height(), img.width());
    if (in_h, in_w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let mut out = ImageRGB::zeros(out_h, out_w);
    for oy in 0..out_h {
        let sy = src_coord(oy, in_h, out_h);
        let y0 = sy.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let ty = sy - y0 as f64;
        for ox in 0..out_w {
            let sx = src_coord(ox, in_w, out_w);
            let x0 = sx.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let tx = sx - x0 as f64;
            for c in 0..3 {
                let v00 = img.get(y0, x0, c) as f64;
                let v01 = img.get(y0, x1, c) as f64;
                let v10 = img.get(y1, x0, c) as f64;
                let v11 = img.get(y1, x1, c) as f64;
                let top = v00 + (v01 - v00) * tx;
                let bot = v10 + (v11 - v10) * tx;
                let v = top + (bot - top) * ty;
                out.set(oy, ox, c, (v as f32).clamp(0.0, 1.0));
            }
        }
    }
    Ok(out)
}

fn src_coord(d: usize, in_dim: usize, out_dim: usize) -> f64 {
    let s = (d as f64 + 0.5) * (in_dim as f64 / out_dim as f64) - 0.5;
    s.clamp(0.0, (in_dim - 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn load_single_red_pixel() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("red.png");
        image::save_buffer(&p, &[255u8, 0, 0], 1, 1, ColorType::Rgb8).unwrap();
        let img = load_image(&p).unwrap();
        assert_eq!(img.tensor().dims(), &[1, 1, 3]);
        assert_eq!(img.data(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn load_all_black() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("black.png");
        image::save_buffer(&p, &[0u8; 12], 2, 2, ColorType::Rgb8).unwrap();
        let img = load_image(&p).unwrap();
        assert!(img.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grayscale_replicates() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("gray.png");
        image::save_buffer(&p, &[128u8], 1, 1, ColorType::L8).unwrap();
        let img = load_image(&p).unwrap();
        let v = 128.0 / 255.0;
        assert_eq!(img.data(), &[v, v, v]);
    }

    #[test]
    fn corrupted_file_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"not a png at all").unwrap();
        assert!(matches!(load_image(&p), Err(Error::ImageDecode { .. })));
    }

    #[test]
    fn rgba_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgba.png");
        image::save_buffer(&p, &[1u8, 2, 3, 4], 1, 1, ColorType::Rgba8).unwrap();
        assert!(matches!(
            load_image(&p),
            Err(Error::UnsupportedImage { .. })
        ));
    }

    #[test]
    fn save_load_within_quantization() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rt.png");
        let img = ImageRGB::new(TensorF32::from_fn(&[4, 5, 3], |i| {
            ((i * 37) % 256) as f32 / 255.0 * 0.99
        }))
        .unwrap();
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        for (a, b) in img.data().iter().zip(back.data()) {
            assert!((a - b).abs() <= 1.0 / 255.0, "{a} vs {b}");
        }
    }

    #[test]
    fn resize_identity() {
        let img = ImageRGB::new(TensorF32::from_fn(&[3, 4, 3], |i| (i % 7) as f32 / 7.0)).unwrap();
        let out = resize_bilinear(&img, 3, 4).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn resize_2x2_to_1x1_hand_value() {
        // channel-replicated [[0, 1/3], [2/3, 1]]; source coord (0.5, 0.5)
        // interpolates all four corners equally -> 0.5
        let vals = [0.0f32, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        let mut img = ImageRGB::zeros(2, 2);
        for y in 0..2 {
            for x in 0..2 {
                for c in 0..3 {
                    img.set(y, x, c, vals[y * 2 + x]);
                }
            }
        }
        let out = resize_bilinear(&img, 1, 1).unwrap();
        for c in 0..3 {
            assert!((out.get(0, 0, c) - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn resize_constant_upscale() {
        let img = ImageRGB::filled(3, 3, 0.4);
        let out = resize_bilinear(&img, 12, 12).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn resize_bounded_by_source_range() {
        let img = ImageRGB::new(TensorF32::from_fn(&[5, 7, 3], |i| {
            0.2 + 0.6 * ((i * 13 % 11) as f32 / 10.0)
        }))
        .unwrap();
        let (lo, hi) = img
            .data()
            .iter()
            .fold((f32::MAX, f32::MIN), |(l, h), &v| (l.min(v), h.max(v)));
        for (th, tw) in [(2, 3), (9, 4), (16, 16)] {
            let out = resize_bilinear(&img, th, tw).unwrap();
            for &v in out.data() {
                assert!(v >= lo - 1e-6 && v <= hi + 1e-6);
            }
        }
    }

    #[test]
    fn chw_roundtrip() {
        let img = ImageRGB::new(TensorF32::from_fn(&[4, 3, 3], |i| (i % 5) as f32 / 5.0)).unwrap();
        let chw = img.to_chw();
        assert_eq!(chw.dims(), &[3, 4, 3]);
        assert_eq!(ImageRGB::from_chw(&chw).unwrap(), img);
    }

    #[test]
    fn resize_rejects_zero_target() {
        let img = ImageRGB::zeros(2, 2);
        assert!(resize_bilinear(&img, 0, 2).is_err());
    }
}
