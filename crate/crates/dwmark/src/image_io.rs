//! Image tensor conventions and file I/O.
//!
//! Images are CHW tensors with values in [-1, 1]; batches are BCHW. Files are
//! written losslessly as PNG. Conversion to 8-bit uses round-half-up on the
//! [0, 255] scale.

use std::path::Path;

use candle_core::{DType, Device, Tensor};
use image::{DynamicImage, ImageBuffer, Rgb};

use crate::error::{Error, Result};

/// Decode an image file into a CHW tensor in [-1, 1], resized to
/// `resolution` x `resolution` (triangle filter) when needed.
pub fn load_image(path: &Path, resolution: usize, device: &Device) -> Result<Tensor> {
    let img = image::open(path)?;
    let img = if img.width() as usize != resolution || img.height() as usize != resolution {
        img.resize_exact(
            resolution as u32,
            resolution as u32,
            image::imageops::FilterType::Triangle,
        )
    } else {
        img
    };
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px.0[c] as f32 / 255.0 * 2.0 - 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (3, h, w), device)?)
}

/// Write a CHW tensor in [-1, 1] as a PNG (lossless).
pub fn save_png(path: &Path, img: &Tensor) -> Result<()> {
    let rgb = to_rgb8(img)?;
    rgb.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Quantize a CHW [-1, 1] tensor to an 8-bit RGB buffer.
pub fn to_rgb8(img: &Tensor) -> Result<ImageBuffer<Rgb<u8>, Vec<u8>>> {
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::shape(format!("expected 3 channels, got {c}")));
    }
    let data = img.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let mut buf = vec![0u8; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                let v = data[ch * h * w + y * w + x];
                let q = ((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8;
                buf[(y * w + x) * 3 + ch] = q;
            }
        }
    }
    ImageBuffer::from_raw(w as u32, h as u32, buf)
        .ok_or_else(|| Error::shape("rgb buffer size"))
}

/// Inverse of [`to_rgb8`].
pub fn from_rgb8(rgb: &ImageBuffer<Rgb<u8>, Vec<u8>>, device: &Device) -> Result<Tensor> {
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            data[c * h * w + y as usize * w + x as usize] = px.0[c] as f32 / 255.0 * 2.0 - 1.0;
        }
    }
    Ok(Tensor::from_vec(data, (3, h, w), device)?)
}

/// Decode a DynamicImage (already in memory) to a CHW tensor in [-1, 1].
pub fn dynamic_to_tensor(img: &DynamicImage, device: &Device) -> Result<Tensor> {
    from_rgb8(&img.to_rgb8(), device)
}

/// Clamp to the valid image range.
pub fn clamp_image(img: &Tensor) -> Result<Tensor> {
    Ok(img.clamp(-1.0, 1.0)?)
}

/// Bilinear resize of a CHW tensor (align-corners=false convention).
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (c, h, w) = img.dims3()?;
    let data = img.to_dtype(DType::F32)?.flatten_all()?.to_vec1::<f32>()?;
    let mut out = vec![0f32; c * out_h * out_w];
    let sy = h as f32 / out_h as f32;
    let sx = w as f32 / out_w as f32;
    for oy in 0..out_h {
        let fy = ((oy as f32 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f32;
        for ox in 0..out_w {
            let fx = ((ox as f32 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f32;
            for ch in 0..c {
                let base = ch * h * w;
                let v00 = data[base + y0 * w + x0];
                let v01 = data[base + y0 * w + x1];
                let v10 = data[base + y1 * w + x0];
                let v11 = data[base + y1 * w + x1];
                let top = v00 + (v01 - v00) * wx;
                let bot = v10 + (v11 - v10) * wx;
                out[ch * out_h * out_w + oy * out_w + ox] = top + (bot - top) * wy;
            }
        }
    }
    Ok(Tensor::from_vec(out, (c, out_h, out_w), img.device())?.to_dtype(img.dtype())?)
}
