//! Fixed-size multi-band crops around blobs.

use crate::cube::{Image2D, ImageCube};
use crate::error::Result;

use super::components::Blob;

pub const DEFAULT_OUT_SIZE: usize = 64;

/// Square source window of a crop; may extend past the image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub x0: isize,
    pub y0: isize,
    pub side: usize,
}

/// A classifier input: nine bands cropped over one window and resized.
#[derive(Debug, Clone, PartialEq)]
pub struct Roi {
    pub crop: ImageCube,
    pub blob_index: usize,
    pub blob: Blob,
    pub window: Window,
    pub label: Option<usize>,
}

impl Roi {
    /// Crop with its provenance written into the cube's metadata.
    pub fn to_cube(&self, source: &str) -> ImageCube {
        let b = &self.blob;
        let mut cube = self
            .crop
            .clone()
            .with_meta("source", source)
            .with_meta("blob", self.blob_index.to_string())
            .with_meta("bbox", b.bbox.to_string())
            .with_meta("area", b.area().to_string())
            .with_meta("centroid", format!("{:.3},{:.3}", b.centroid.0, b.centroid.1))
            .with_meta(
                "window",
                format!("{},{},{}", self.window.x0, self.window.y0, self.window.side),
            );
        if let Some(label) = self.label {
            cube.meta_mut().insert("label".into(), label.to_string());
        }
        cube
    }
}

/// The blob's bounding box grown to a square around its centre.
pub fn square_window(blob: &Blob) -> Window {
    let bb = blob.bbox;
    let (w, h) = (bb.width(), bb.height());
    let side = w.max(h);
    Window {
        x0: bb.x0 as isize - ((side - w) / 2) as isize,
        y0: bb.y0 as isize - ((side - h) / 2) as isize,
        side,
    }
}

/// Copy a square window out of `img`, zero outside the image.
pub fn crop_padded(img: &Image2D, win: Window) -> Vec<f32> {
    let (w, h) = (img.width() as isize, img.height() as isize);
    let mut out = vec![0.0; win.side * win.side];
    for j in 0..win.side {
        let y = win.y0 + j as isize;
        if y < 0 || y >= h {
            continue;
        }
        for i in 0..win.side {
            let x = win.x0 + i as isize;
            if x >= 0 && x < w {
                out[j * win.side + i] = img.get(x as usize, y as usize);
            }
        }
    }
    out
}

/// Bilinear resampling with pixel-centre alignment and clamped borders.
///
/// Same-size resampling is an exact copy and constant inputs stay constant.
pub fn resize_bilinear(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f32> {
    assert_eq!(src.len(), sw * sh);
    let taps = |d: usize, s: usize| -> Vec<(usize, usize, f32)> {
        let scale = s as f64 / d as f64;
        (0..d)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (s - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(s - 1);
                (lo, hi, (pos - lo as f64) as f32)
            })
            .collect()
    };
    let xs = taps(dw, sw);
    let ys = taps(dh, sh);
    let mut out = Vec::with_capacity(dw * dh);
    for &(y0, y1, fy) in &ys {
        let (r0, r1) = (&src[y0 * sw..(y0 + 1) * sw], &src[y1 * sw..(y1 + 1) * sw]);
        for &(x0, x1, fx) in &xs {
            let top = r0[x0] + (r0[x1] - r0[x0]) * fx;
            let bottom = r1[x0] + (r1[x1] - r1[x0]) * fx;
            out.push(top + (bottom - top) * fy);
        }
    }
    out
}

/// Crop every band of `cube` over the blob's square window and resize the
/// crop to `out_size` x `out_size`.
pub fn extract_roi(cube: &ImageCube, blob: &Blob, blob_index: usize, out_size: usize) -> Result<Roi> {
    let win = square_window(blob);
    let planes = cube
        .planes()
        .iter()
        .map(|p| {
            let crop = crop_padded(p, win);
            let data = if win.side == out_size {
                crop
            } else {
                resize_bilinear(&crop, win.side, win.side, out_size, out_size)
            };
            Image2D::new(out_size, out_size, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Roi {
        crop: ImageCube::new(planes)?,
        blob_index,
        blob: blob.clone(),
        window: win,
        label: None,
    })
}
