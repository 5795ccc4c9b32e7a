//! Binary masks, adaptive binarization and Zhang-Suen thinning.

use crate::tensor::{Real, Tensor};

pub const DEFAULT_WINDOW: usize = 31;
pub const DEFAULT_OFFSET: f64 = 0.06;

/// Row-major binary image; `true` is foreground (ink).
#[derive(Clone, PartialEq, Eq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl std::fmt::Debug for Mask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "Mask {}x{}", self.height, self.width)?;
        for y in 0..self.height {
            let row: String = (0..self.width).map(|x| if self.get(y, x) { '#' } else { '.' }).collect();
            writeln!(f, "{row}")?;
        }
        Ok(())
    }
}

impl Mask {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![false; height * width],
        }
    }

    /// Parses rows of `#` (foreground) and `.` (background).
    pub fn from_rows(rows: &[&str]) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.len());
        let mut m = Self::new(height, width);
        for (y, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), width, "ragged mask rows");
            for (x, ch) in row.bytes().enumerate() {
                m.set(y, x, ch == b'#');
            }
        }
        m
    }

    /// Foreground where the single-channel tensor is above 0.5.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        let (h, w, _) = t.hwc();
        let mut m = Self::new(h, w);
        for y in 0..h {
            for x in 0..w {
                m.set(y, x, t.at(y, x, 0) > T::lit(0.5));
            }
        }
        m
    }

    /// `(H, W, 1)` tensor with 1 for foreground.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(self.height, self.width, 1, |y, x, _| if self.get(y, x) { T::one() } else { T::zero() })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    /// Out-of-bounds reads are background.
    pub fn get_signed(&self, y: isize, x: isize) -> bool {
        y >= 0 && x >= 0 && (y as usize) < self.height && (x as usize) < self.width && self.get(y as usize, x as usize)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.height == other.height
            && self.width == other.width
            && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Labels of 8-connected foreground components (0 is background) and their count.
    pub fn components(&self) -> (Vec<usize>, usize) {
        let mut labels = vec![0usize; self.data.len()];
        let mut next = 0;
        let mut stack = Vec::new();
        for start in 0..self.data.len() {
            if !self.data[start] || labels[start] != 0 {
                continue;
            }
            next += 1;
            labels[start] = next;
            stack.push(start);
            while let Some(p) = stack.pop() {
                let (y, x) = ((p / self.width) as isize, (p % self.width) as isize);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        if self.get_signed(y + dy, x + dx) {
                            let q = (y + dy) as usize * self.width + (x + dx) as usize;
                            if labels[q] == 0 {
                                labels[q] = next;
                                stack.push(q);
                            }
                        }
                    }
                }
            }
        }
        (labels, next)
    }
}

/// Luminance of an RGB or single-channel image.
pub fn grayscale<T: Real>(img: &Tensor<T>) -> Tensor<T> {
    let (h, w, c) = img.hwc();
    if c == 1 {
        return img.clone();
    }
    let (r, g, b) = (T::lit(0.299), T::lit(0.587), T::lit(0.114));
    Tensor::from_fn(h, w, 1, |y, x, _| r * img.at(y, x, 0) + g * img.at(y, x, 1) + b * img.at(y, x, 2))
}

/// Marks pixels darker than the mean of the surrounding `window x window`
/// block (clipped at the borders) by more than `offset`.
pub fn binarize_adaptive(img: &Tensor<f32>, window: usize, offset: f64) -> Mask {
    let gray = grayscale(img);
    let (h, w, _) = gray.hwc();
    // Integral image with a zero row and column in front.
    let mut integral = vec![0.0f64; (h + 1) * (w + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += gray.at(y, x, 0) as f64;
            integral[(y + 1) * (w + 1) + x + 1] = integral[y * (w + 1) + x + 1] + row;
        }
    }
    let r = window / 2;
    let mut mask = Mask::new(h, w);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let s = integral[y1 * (w + 1) + x1] - integral[y0 * (w + 1) + x1] - integral[y1 * (w + 1) + x0]
                + integral[y0 * (w + 1) + x0];
            let mean = s / ((y1 - y0) * (x1 - x0)) as f64;
            mask.set(y, x, (gray.at(y, x, 0) as f64) < mean - offset);
        }
    }
    mask
}

/// Neighbours P2..P9: N, NE, E, SE, S, SW, W, NW.
const RING: [(isize, isize); 8] = [(-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1)];

fn ring(m: &Mask, y: usize, x: usize) -> [bool; 8] {
    RING.map(|(dy, dx)| m.get_signed(y as isize + dy, x as isize + dx))
}

/// Whether `(y, x)` may be removed in the given sub-iteration (0 or 1).
pub fn zs_deletable(m: &Mask, y: usize, x: usize, sub: usize) -> bool {
    if !m.get(y, x) {
        return false;
    }
    let p = ring(m, y, x);
    let b = p.iter().filter(|&&v| v).count();
    if !(2..=6).contains(&b) {
        return false;
    }
    let a = (0..8).filter(|&i| !p[i] && p[(i + 1) % 8]).count();
    if a != 1 {
        return false;
    }
    let [p2, _, p4, _, p6, _, p8, _] = p;
    if sub == 0 {
        !(p2 && p4 && p6) && !(p4 && p6 && p8)
    } else {
        !(p2 && p4 && p8) && !(p2 && p6 && p8)
    }
}

/// Zhang-Suen thinning to a fixed point.
///
/// Each sub-iteration gathers candidates on the current image and then
/// removes them in raster order, re-testing each one first. The re-test keeps
/// two-pixel-thick strokes (such as a 2x2 block) from vanishing entirely.
pub fn skeletonize(mask: &Mask) -> Mask {
    let mut m = mask.clone();
    loop {
        let mut changed = false;
        for sub in 0..2 {
            let candidates: Vec<(usize, usize)> = (0..m.height)
                .flat_map(|y| (0..m.width).map(move |x| (y, x)))
                .filter(|&(y, x)| zs_deletable(&m, y, x, sub))
                .collect();
            for (y, x) in candidates {
                if zs_deletable(&m, y, x, sub) {
                    m.set(y, x, false);
                    changed = true;
                }
            }
        }
        if !changed {
            return m;
        }
    }
}
