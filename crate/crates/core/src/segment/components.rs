//! Connected-component labelling of binary masks.

use super::threshold::BinaryMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

impl std::str::FromStr for Connectivity {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "4" | "four" => Ok(Connectivity::Four),
            "8" | "eight" => Ok(Connectivity::Eight),
            other => Err(format!("unknown connectivity {other:?} (expected 4 or 8)")),
        }
    }
}

impl std::fmt::Display for Connectivity {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Connectivity::Four => "4",
            Connectivity::Eight => "8",
        })
    }
}

/// Inclusive pixel bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl BBox {
    pub fn width(&self) -> usize {
        self.x1 - self.x0 + 1
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0 + 1
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) as f64 / 2.0, (self.y0 + self.y1) as f64 / 2.0)
    }

    /// True when the boxes share no pixel even after growing both by `gap`.
    pub fn separated(&self, other: &BBox, gap: usize) -> bool {
        self.x1 + gap < other.x0 || other.x1 + gap < self.x0 || self.y1 + gap < other.y0 || other.y1 + gap < self.y0
    }
}

impl std::fmt::Display for BBox {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{},{}", self.x0, self.y0, self.x1, self.y1)
    }
}

/// One connected foreground region.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    /// `(x, y)` coordinates in raster order.
    pub pixels: Vec<(usize, usize)>,
    pub bbox: BBox,
    pub centroid: (f64, f64),
}

impl Blob {
    /// Build a blob from raster-ordered pixels.
    pub fn from_pixels(pixels: Vec<(usize, usize)>) -> Self {
        assert!(!pixels.is_empty(), "a blob has at least one pixel");
        let mut bbox = BBox {
            x0: usize::MAX,
            y0: usize::MAX,
            x1: 0,
            y1: 0,
        };
        let (mut sx, mut sy) = (0.0, 0.0);
        for &(x, y) in &pixels {
            bbox.x0 = bbox.x0.min(x);
            bbox.y0 = bbox.y0.min(y);
            bbox.x1 = bbox.x1.max(x);
            bbox.y1 = bbox.y1.max(y);
            sx += x as f64;
            sy += y as f64;
        }
        let n = pixels.len() as f64;
        Blob {
            centroid: (sx / n, sy / n),
            bbox,
            pixels,
        }
    }

    pub fn area(&self) -> usize {
        self.pixels.len()
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) -> u32 {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        self.parent[hi as usize] = lo;
        lo
    }
}

/// Label the foreground of `mask` with a two-pass union-find scan.
///
/// Blobs are returned ordered by the top-left corner `(y0, x0)` of their
/// bounding box, then by their first pixel in raster order.
pub fn connected_components(mask: &BinaryMask, connectivity: Connectivity) -> Vec<Blob> {
    let (w, h) = (mask.width(), mask.height());
    const NONE: u32 = u32::MAX;
    let mut labels = vec![NONE; w * h];
    let mut sets = DisjointSet { parent: Vec::new() };

    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            let mut neighbours = [NONE; 4];
            if x > 0 {
                neighbours[0] = labels[y * w + x - 1];
            }
            if y > 0 {
                neighbours[1] = labels[(y - 1) * w + x];
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        neighbours[2] = labels[(y - 1) * w + x - 1];
                    }
                    if x + 1 < w {
                        neighbours[3] = labels[(y - 1) * w + x + 1];
                    }
                }
            }
            let mut label = NONE;
            for n in neighbours.into_iter().filter(|&n| n != NONE) {
                label = if label == NONE { n } else { sets.union(label, n) };
            }
            labels[y * w + x] = if label == NONE { sets.make() } else { label };
        }
    }

    let mut slot_of_root = vec![NONE; sets.parent.len()];
    let mut groups: Vec<Vec<(usize, usize)>> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let l = labels[y * w + x];
            if l == NONE {
                continue;
            }
            let root = sets.find(l) as usize;
            if slot_of_root[root] == NONE {
                slot_of_root[root] = groups.len() as u32;
                groups.push(Vec::new());
            }
            groups[slot_of_root[root] as usize].push((x, y));
        }
    }

    // groups are already in first-pixel raster order; stable sort keeps it as
    // the final tie-break
    let mut blobs: Vec<Blob> = groups.into_iter().map(Blob::from_pixels).collect();
    blobs.sort_by_key(|b| (b.bbox.y0, b.bbox.x0));
    blobs
}

/// Keep blobs with at least `min_area` pixels, preserving order.
pub fn filter_blobs(blobs: Vec<Blob>, min_area: usize) -> Vec<Blob> {
    blobs.into_iter().filter(|b| b.area() >= min_area).collect()
}
