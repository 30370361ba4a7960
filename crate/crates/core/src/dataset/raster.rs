use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, RgbImage};

use super::yolo::BoundingBox;
use super::DatasetError;

/// Side of the square patches fed to the regressor.
pub const PATCH_SIZE: u32 = 50;

/// 8-bit RGB raster, row-major, origin top-left.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RasterImage {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl RasterImage {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Result<Self, DatasetError> {
        if width == 0 || height == 0 {
            return Err(DatasetError::ShapeMismatch(format!(
                "{width}×{height} image"
            )));
        }
        let data = rgb
            .iter()
            .copied()
            .cycle()
            .take((width * height * 3) as usize)
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self, DatasetError> {
        if width == 0 || height == 0 || data.len() != (width as usize) * (height as usize) * 3 {
            return Err(DatasetError::ShapeMismatch(format!(
                "{} bytes for a {width}×{height}×3 image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: u32, y: u32) -> [u8; 3] {
        let i = ((y * self.width + x) * 3) as usize;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let i = ((y * self.width + x) * 3) as usize;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Mean over all samples of all channels, in `[0, 255]`.
    pub fn mean_intensity(&self) -> f64 {
        self.data.iter().map(|&v| f64::from(v)).sum::<f64>() / self.data.len() as f64
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>, DatasetError> {
        let img = RgbImage::from_raw(self.width, self.height, self.data.clone())
            .expect("buffer length checked at construction");
        let mut out = Cursor::new(Vec::new());
        img.write_to(&mut out, ImageFormat::Png)
            .map_err(|e| DatasetError::Image(e.to_string()))?;
        Ok(out.into_inner())
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self, DatasetError> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)
            .map_err(|e| DatasetError::Image(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        Self::from_raw(w, h, img.into_raw())
    }

    pub fn save_png(&self, path: &Path) -> Result<(), DatasetError> {
        std::fs::write(path, self.to_png_bytes()?).map_err(|e| DatasetError::io(path, e))
    }

    pub fn load_png(path: &Path) -> Result<Self, DatasetError> {
        let bytes = std::fs::read(path).map_err(|e| DatasetError::io(path, e))?;
        Self::from_png_bytes(&bytes)
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centres at
    /// integer positions), edges clamped.
    fn sample(&self, x: f64, y: f64) -> [f64; 3] {
        let max_x = f64::from(self.width - 1);
        let max_y = f64::from(self.height - 1);
        let x = x.clamp(0.0, max_x);
        let y = y.clamp(0.0, max_y);
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = (x - x0, y - y0);
        let (x0, y0) = (x0 as u32, y0 as u32);
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let (p00, p10, p01, p11) = (
            self.pixel(x0, y0),
            self.pixel(x1, y0),
            self.pixel(x0, y1),
            self.pixel(x1, y1),
        );
        let mut out = [0.0; 3];
        for c in 0..3 {
            let top = f64::from(p00[c]) * (1.0 - fx) + f64::from(p10[c]) * fx;
            let bottom = f64::from(p01[c]) * (1.0 - fx) + f64::from(p11[c]) * fx;
            out[c] = top * (1.0 - fy) + bottom * fy;
        }
        out
    }
}

/// Crop the box region and resample it bilinearly to `PATCH_SIZE²×3`.
pub fn crop_and_resize(img: &RasterImage, bbox: &BoundingBox) -> Result<RasterImage, DatasetError> {
    let rect = bbox.pixel_rect(img.width, img.height);
    if rect.width() < 2.0 || rect.height() < 2.0 {
        return Err(DatasetError::DegenerateCrop {
            width: rect.width(),
            height: rect.height(),
        });
    }
    let n = f64::from(PATCH_SIZE);
    let (sx, sy) = (rect.width() / n, rect.height() / n);
    let mut data = Vec::with_capacity((PATCH_SIZE * PATCH_SIZE * 3) as usize);
    for j in 0..PATCH_SIZE {
        let y = rect.y0 + (f64::from(j) + 0.5) * sy - 0.5;
        for i in 0..PATCH_SIZE {
            let x = rect.x0 + (f64::from(i) + 0.5) * sx - 0.5;
            data.extend(img.sample(x, y).map(|v| v.round().clamp(0.0, 255.0) as u8));
        }
    }
    RasterImage::from_raw(PATCH_SIZE, PATCH_SIZE, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(size: u32, cell: u32) -> RasterImage {
        let mut img = RasterImage::filled(size, size, [0, 0, 0]).unwrap();
        for y in 0..size {
            for x in 0..size {
                if ((x / cell) + (y / cell)).is_multiple_of(2) {
                    img.set_pixel(x, y, [255, 255, 255]);
                }
            }
        }
        img
    }

    #[test]
    fn full_image_downsample_shape() {
        let img = checkerboard(400, 8);
        let patch = crop_and_resize(&img, &BoundingBox::full()).unwrap();
        assert_eq!((patch.width(), patch.height()), (50, 50));
        assert_eq!(patch.as_bytes().len(), 50 * 50 * 3);
    }

    #[test]
    fn constant_image_stays_constant() {
        let img = RasterImage::filled(123, 77, [12, 200, 99]).unwrap();
        for bbox in [
            BoundingBox::full(),
            BoundingBox::new(0, 0.3, 0.6, 0.11, 0.4).unwrap(),
            BoundingBox::new(0, 0.9, 0.1, 0.5, 0.5).unwrap(),
        ] {
            let patch = crop_and_resize(&img, &bbox).unwrap();
            assert!(patch.as_bytes().chunks(3).all(|p| p == [12, 200, 99]));
        }
    }

    #[test]
    fn checkerboard_mean_is_preserved() {
        let img = checkerboard(100, 5);
        let bbox = BoundingBox::new(0, 0.5, 0.5, 0.6, 0.6).unwrap();
        let rect = bbox.pixel_rect(100, 100);
        // Brute-force mean over the source crop.
        let mut sum = 0.0;
        let mut n = 0.0;
        for y in rect.y0 as u32..rect.y1 as u32 {
            for x in rect.x0 as u32..rect.x1 as u32 {
                sum += img.pixel(x, y).iter().map(|&v| f64::from(v)).sum::<f64>();
                n += 3.0;
            }
        }
        let expected = sum / n;
        let got = crop_and_resize(&img, &bbox).unwrap().mean_intensity();
        assert!(
            (got - expected).abs() <= 0.01 * expected,
            "{got} vs {expected}"
        );
    }

    #[test]
    fn tiny_crop_is_rejected() {
        let img = RasterImage::filled(100, 100, [0, 0, 0]).unwrap();
        let bbox = BoundingBox::new(0, 0.5, 0.5, 0.015, 0.5).unwrap();
        assert!(matches!(
            crop_and_resize(&img, &bbox),
            Err(DatasetError::DegenerateCrop { .. })
        ));
    }

    #[test]
    fn png_round_trip() {
        let img = checkerboard(17, 3);
        let back = RasterImage::from_png_bytes(&img.to_png_bytes().unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn shape_checks() {
        assert!(RasterImage::from_raw(2, 2, vec![0; 11]).is_err());
        assert!(RasterImage::filled(0, 3, [0; 3]).is_err());
    }
}
