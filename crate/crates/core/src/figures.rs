//! 8-bit PNG export with per-image min-max scaling and box overlays.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::error::{Error, Result};
use crate::kspace::Image;
use crate::phantom::BBox;

const RED: [u8; 3] = [255, 0, 0];
const SEPARATOR: usize = 2;

/// Min-max maps an image to `0..=255`; a constant image maps to all zeros.
pub fn to_u8(image: &Image) -> Vec<u8> {
    let (lo, hi) = (image.min(), image.max());
    let span = hi - lo;
    image
        .data()
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round().clamp(0.0, 255.0) as u8
            } else {
                0
            }
        })
        .collect()
}

fn write_png(path: &Path, width: usize, height: usize, color: png::ColorType, data: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

fn draw_box(rgb: &mut [u8], stride: usize, x_off: usize, b: &BBox) {
    let mut put = |x: usize, y: usize| {
        let i = 3 * (y * stride + x_off + x);
        rgb[i..i + 3].copy_from_slice(&RED);
    };
    for x in b.x0..b.x1 {
        put(x, b.y0);
        put(x, b.y1 - 1);
    }
    for y in b.y0..b.y1 {
        put(b.x0, y);
        put(b.x1 - 1, y);
    }
}

/// Writes one image: grayscale without boxes, RGB with red box outlines.
pub fn export_png(image: &Image, path: &Path, boxes: &[BBox]) -> Result<()> {
    export_panel(&[image], path, boxes)
}

/// Writes images side by side (each normalized on its own), separated by a
/// thin black gap, with the same boxes outlined on every tile.
pub fn export_panel(images: &[&Image], path: &Path, boxes: &[BBox]) -> Result<()> {
    let first = images
        .first()
        .ok_or_else(|| Error::InvalidArgument("panel needs at least one image".into()))?;
    let (h, w) = (first.height(), first.width());
    if images.iter().any(|im| im.height() != h || im.width() != w) {
        return Err(Error::InvalidArgument("panel images must share one size".into()));
    }
    for b in boxes {
        if b.x0 >= b.x1 || b.y0 >= b.y1 || b.x1 > w || b.y1 > h {
            return Err(Error::InvalidArgument(format!("box {b:?} outside {h}×{w} image")));
        }
    }
    let n = images.len();
    let total_w = n * w + (n - 1) * SEPARATOR;
    let gray: Vec<Vec<u8>> = images.iter().map(|im| to_u8(im)).collect();
    if boxes.is_empty() {
        let mut out = vec![0u8; total_w * h];
        for (t, g) in gray.iter().enumerate() {
            let off = t * (w + SEPARATOR);
            for y in 0..h {
                out[y * total_w + off..y * total_w + off + w].copy_from_slice(&g[y * w..(y + 1) * w]);
            }
        }
        return write_png(path, total_w, h, png::ColorType::Grayscale, &out);
    }
    let mut out = vec![0u8; 3 * total_w * h];
    for (t, g) in gray.iter().enumerate() {
        let off = t * (w + SEPARATOR);
        for y in 0..h {
            for x in 0..w {
                let v = g[y * w + x];
                let i = 3 * (y * total_w + off + x);
                out[i..i + 3].copy_from_slice(&[v, v, v]);
            }
        }
        for b in boxes {
            draw_box(&mut out, total_w, off, b);
        }
    }
    write_png(path, total_w, h, png::ColorType::Rgb, &out)
}
