//! 8-bit grayscale PNG I/O for images and saliency masks.
//!
//! Write path quantizes pixel-range values with round-half-up to 255
//! levels; read path maps bytes back to `v/255`. A write-read cycle
//! therefore changes values by at most half a quantization step.

use std::path::Path;

use ndarray::{Array2, Array3};

use scoreadv_core::error::{Error, Result};
use scoreadv_core::models::dataset::quantize;
use scoreadv_core::tensor::{ImageTensor, ValueRange};

/// Writes a single-channel pixel-range image.
pub fn save_gray(path: &Path, img: &ImageTensor) -> Result<()> {
    img.check_range(ValueRange::Pixel)?;
    let (c, h, w) = img.shape();
    if c != 1 {
        return Err(Error::parameter(format!(
            "png writer handles 1 channel, got {c}"
        )));
    }
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(x as u32, y as u32, image::Luma([quantize(img.data()[[0, y, x]])]));
        }
    }
    buf.save(path)
        .map_err(|e| Error::ingestion(format!("png write {}: {e}", path.display())))
}

/// Reads a grayscale PNG into a pixel-range tensor.
pub fn load_gray(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path)
        .map_err(|e| Error::ingestion(format!("png read {}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = Array3::zeros((1, h, w));
    for y in 0..h {
        for x in 0..w {
            data[[0, y, x]] = img.get_pixel(x as u32, y as u32).0[0] as f64 / 255.0;
        }
    }
    Ok(ImageTensor::new(data, ValueRange::Pixel))
}

/// Writes a `[0,1]` map (saliency mask) as grayscale.
pub fn save_map(path: &Path, map: &Array2<f64>) -> Result<()> {
    let (h, w) = map.dim();
    let mut buf = image::GrayImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            buf.put_pixel(x as u32, y as u32, image::Luma([quantize(map[[y, x]])]));
        }
    }
    buf.save(path)
        .map_err(|e| Error::ingestion(format!("png write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn roundtrip_stays_within_quantization() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("img.png");
        let data = Array3::from_shape_fn((1, 9, 7), |(_, y, x)| {
            ((y * 7 + x) as f64 / 62.0).clamp(0.0, 1.0)
        });
        let img = ImageTensor::new(data, ValueRange::Pixel);
        save_gray(&path, &img).unwrap();
        let back = load_gray(&path).unwrap();
        assert_eq!(back.shape(), (1, 9, 7));
        for (a, b) in img.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn rewrite_is_byte_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let p1 = tmp.path().join("a.png");
        let p2 = tmp.path().join("b.png");
        let data = Array3::from_shape_fn((1, 8, 8), |(_, y, x)| ((y ^ x) as f64) / 15.0);
        let img = ImageTensor::new(data, ValueRange::Pixel);
        save_gray(&p1, &img).unwrap();
        save_gray(&p2, &img).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn quantized_values_roundtrip_exactly() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("q.png");
        let data = Array3::from_shape_fn((1, 16, 16), |(_, y, x)| {
            ((y * 16 + x) % 256) as f64 / 255.0
        });
        let img = ImageTensor::new(data, ValueRange::Pixel);
        save_gray(&path, &img).unwrap();
        let back = load_gray(&path).unwrap();
        assert_eq!(img.data(), back.data());
    }
}
