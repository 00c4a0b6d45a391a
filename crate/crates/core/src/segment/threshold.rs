//! Histogramming, Otsu's threshold and binarisation.

use std::cmp::Ordering;

use crate::cube::Image2D;
use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 256;

/// Equal-width histogram over `[min, max]` of an image.
///
/// Bin `b` covers `[min + b*w, min + (b+1)*w)` with `w = (max - min) / bins`;
/// the last bin is closed at `max`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    counts: Vec<u64>,
    min: f32,
    max: f32,
    degenerate: bool,
}

impl Histogram {
    /// Wrap precomputed counts. `degenerate` is set when `min == max`.
    pub fn from_counts(counts: Vec<u64>, min: f32, max: f32) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::Config(format!("histogram needs at least 2 bins, got {}", counts.len())));
        }
        if !(min.is_finite() && max.is_finite() && min <= max) {
            return Err(Error::Config(format!("invalid histogram range [{min}, {max}]")));
        }
        let h = Histogram {
            degenerate: min == max,
            counts,
            min,
            max,
        };
        // keeps every Otsu cross-product inside u128
        let total = u128::from(h.total());
        let bound = total
            .checked_mul(total)
            .and_then(|t| t.checked_mul(h.counts.len() as u128 - 1));
        if bound.is_none_or(|b| b >= 1u128 << 64) {
            return Err(Error::Config("histogram total too large".into()));
        }
        Ok(h)
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn bin_count(&self) -> usize {
        self.counts.len()
    }

    pub fn min(&self) -> f32 {
        self.min
    }

    pub fn max(&self) -> f32 {
        self.max
    }

    /// True when the source image was constant.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_width(&self) -> f64 {
        (f64::from(self.max) - f64::from(self.min)) / self.counts.len() as f64
    }

    /// Lower edge of bin `b`; `edge(bin_count)` is `max`.
    pub fn edge(&self, b: usize) -> f64 {
        if b >= self.counts.len() {
            f64::from(self.max)
        } else {
            f64::from(self.min) + b as f64 * self.bin_width()
        }
    }

    /// Bin holding `v`, consistent with [`Histogram::edge`].
    pub fn bin_of(&self, v: f32) -> usize {
        let n = self.counts.len();
        if self.degenerate {
            return 0;
        }
        let v = f64::from(v);
        if v >= f64::from(self.max) {
            return n - 1;
        }
        let guess = ((v - f64::from(self.min)) / self.bin_width()).floor();
        let mut b = if guess <= 0.0 { 0 } else { (guess as usize).min(n - 1) };
        while b > 0 && v < self.edge(b) {
            b -= 1;
        }
        while b + 1 < n && v >= self.edge(b + 1) {
            b += 1;
        }
        b
    }
}

/// Histogram of `img` over its own `[min, max]` range.
///
/// A constant image yields a degenerate histogram with every pixel in bin 0.
pub fn compute_histogram(img: &Image2D, bin_count: usize) -> Result<Histogram> {
    if bin_count < 2 {
        return Err(Error::Config(format!("bin count must be >= 2, got {bin_count}")));
    }
    let (min, max) = img.min_max();
    let mut hist = Histogram::from_counts(vec![0; bin_count], min, max)?;
    for &v in img.pixels() {
        let b = hist.bin_of(v);
        hist.counts[b] += 1;
    }
    Ok(hist)
}

/// Compare `a/b` with `c/d` exactly (`b`, `d` > 0).
fn cmp_fraction(mut a: u128, mut b: u128, mut c: u128, mut d: u128) -> Ordering {
    let mut flipped = false;
    loop {
        let (qa, ra) = (a / b, a % b);
        let (qc, rc) = (c / d, c % d);
        let ord = match qa.cmp(&qc) {
            Ordering::Equal => match (ra == 0, rc == 0) {
                (true, true) => Ordering::Equal,
                (true, false) => Ordering::Less,
                (false, true) => Ordering::Greater,
                (false, false) => {
                    // ra/b < rc/d  <=>  b/ra > d/rc
                    (a, b, c, d) = (b, ra, d, rc);
                    flipped = !flipped;
                    continue;
                }
            },
            o => o,
        };
        return if flipped { ord.reverse() } else { ord };
    }
}

/// Otsu split index: the bin `t` such that bins `0..=t` form the background
/// class, maximising between-class variance. Ties go to the smallest `t`.
/// Returns `None` when every split has zero between-class variance.
pub fn otsu_split(hist: &Histogram) -> Result<Option<usize>> {
    let total = u128::from(hist.total());
    if total == 0 {
        return Err(Error::EmptyHistogram);
    }
    // between-class variance at split t is proportional to
    // (N*s0 - n0*S)^2 / (n0*n1), using bin indices as grey levels
    let sum_all: u128 = hist
        .counts
        .iter()
        .enumerate()
        .map(|(b, &c)| b as u128 * u128::from(c))
        .sum();
    let mut best: Option<(usize, u128, u128)> = None;
    let (mut n0, mut s0) = (0u128, 0u128);
    for (t, &c) in hist.counts.iter().enumerate() {
        n0 += u128::from(c);
        s0 += t as u128 * u128::from(c);
        let n1 = total - n0;
        if n0 == 0 || n1 == 0 {
            continue;
        }
        let diff = (total * s0).abs_diff(n0 * sum_all);
        if diff == 0 {
            continue;
        }
        let (num, den) = (diff * diff, n0 * n1);
        let better = match best {
            None => true,
            Some((_, bn, bd)) => cmp_fraction(num, den, bn, bd) == Ordering::Greater,
        };
        if better {
            best = Some((t, num, den));
        }
    }
    Ok(best.map(|(t, _, _)| t))
}

/// Otsu's threshold θ: the upper edge of the winning split bin. When no
/// split separates anything (constant image) θ is the maximum intensity, so
/// the strict `> θ` rule selects no foreground.
pub fn otsu_threshold(hist: &Histogram) -> Result<f64> {
    Ok(match otsu_split(hist)? {
        Some(t) => hist.edge(t + 1),
        None => f64::from(hist.max),
    })
}

/// Per-pixel foreground/background classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 || bits.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} mask with {} bits",
                bits.len()
            )));
        }
        Ok(BinaryMask { width, height, bits })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        Self::new(width, height, bits)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Foreground where intensity is strictly above `theta`.
pub fn binarize(img: &Image2D, theta: f64) -> BinaryMask {
    BinaryMask {
        width: img.width(),
        height: img.height(),
        bits: img.pixels().iter().map(|&v| f64::from(v) > theta).collect(),
    }
}
