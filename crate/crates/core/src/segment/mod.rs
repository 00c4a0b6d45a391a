//! Organism segmentation.
//!
//! The absorption composite of a corrected cube is histogrammed, Otsu's
//! threshold splits foreground from background, 8-connected foreground
//! regions become blobs, specks below `min_area` are dropped and each
//! surviving blob is cropped into a fixed-size nine-band ROI.

mod components;
mod roi;
mod threshold;

pub use components::{connected_components, filter_blobs, BBox, Blob, Connectivity};
pub use roi::{crop_padded, extract_roi, resize_bilinear, square_window, Roi, Window, DEFAULT_OUT_SIZE};
pub use threshold::{
    binarize, compute_histogram, otsu_split, otsu_threshold, BinaryMask, Histogram, DEFAULT_BINS,
};

use crate::cube::ImageCube;
use crate::error::{Error, Result};

pub const DEFAULT_MIN_AREA: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentParams {
    pub bins: usize,
    pub min_area: usize,
    pub out_size: usize,
    pub connectivity: Connectivity,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            bins: DEFAULT_BINS,
            min_area: DEFAULT_MIN_AREA,
            out_size: DEFAULT_OUT_SIZE,
            connectivity: Connectivity::Eight,
        }
    }
}

impl SegmentParams {
    pub fn validate(&self) -> Result<()> {
        if self.bins < 2 {
            return Err(Error::Config(format!("bins must be >= 2, got {}", self.bins)));
        }
        if self.min_area < 1 {
            return Err(Error::Config("min_area must be >= 1".into()));
        }
        if self.out_size < 1 {
            return Err(Error::Config("out_size must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationResult {
    pub theta: f64,
    pub mask: BinaryMask,
    pub histogram: Histogram,
    /// Blobs that survived area filtering, in output order.
    pub blobs: Vec<Blob>,
}

impl SegmentationResult {
    pub fn min(&self) -> f32 {
        self.histogram.min()
    }

    pub fn max(&self) -> f32 {
        self.histogram.max()
    }
}

/// Threshold, label and filter a corrected cube without cropping.
pub fn segment_mask(cube: &ImageCube, params: &SegmentParams) -> Result<SegmentationResult> {
    params.validate()?;
    let composite = cube.composite_absorption();
    let histogram = compute_histogram(&composite, params.bins)?;
    let theta = otsu_threshold(&histogram)?;
    let mask = binarize(&composite, theta);
    let blobs = filter_blobs(connected_components(&mask, params.connectivity), params.min_area);
    Ok(SegmentationResult {
        theta,
        mask,
        histogram,
        blobs,
    })
}

/// Full segmentation: mask plus one ROI per surviving blob.
pub fn segment_cube(cube: &ImageCube, params: &SegmentParams) -> Result<(SegmentationResult, Vec<Roi>)> {
    let seg = segment_mask(cube, params)?;
    let rois = seg
        .blobs
        .iter()
        .enumerate()
        .map(|(i, b)| extract_roi(cube, b, i, params.out_size))
        .collect::<Result<Vec<_>>>()?;
    Ok((seg, rois))
}
