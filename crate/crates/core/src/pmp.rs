//! Patch-wise minimal pixels (PMP) and the related dark channel.
//!
//! The image is partitioned into non-overlapping `r x r` patches, with the
//! trailing row/column of patches allowed to be smaller, giving
//! `ceil(m/r) * ceil(n/r)` patches indexed in row-major patch order.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::image::{Image, Plane};

/// How the patch size is derived from the image shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatchRule {
    /// A fixed side length in pixels.
    Fixed(usize),
    /// `round(coef * mean(m, n))`, never below one pixel.
    Relative(f64),
}

impl PatchRule {
    pub fn patch_size(&self, m: usize, n: usize) -> usize {
        match *self {
            PatchRule::Fixed(r) => r.max(1),
            PatchRule::Relative(c) => ((c * (m + n) as f64 / 2.0).round() as usize).max(1),
        }
    }
}

/// Patch grid geometry for an `m x n` plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
    pub r: usize,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize, r: usize) -> Result<Self> {
        if r == 0 {
            return Err(DeblurError::InvalidArgument("patch size must be >= 1".into()));
        }
        Ok(Self { rows, cols, r })
    }

    pub fn patch_rows(&self) -> usize {
        self.rows.div_ceil(self.r)
    }

    pub fn patch_cols(&self) -> usize {
        self.cols.div_ceil(self.r)
    }

    pub fn num_patches(&self) -> usize {
        self.patch_rows() * self.patch_cols()
    }

    /// Row and column ranges of patch `(pi, pj)`.
    pub fn bounds(&self, pi: usize, pj: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let r0 = pi * self.r;
        let c0 = pj * self.r;
        (r0..(r0 + self.r).min(self.rows), c0..(c0 + self.r).min(self.cols))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmpVector {
    pub values: Vec<f64>,
    pub grid: PatchGrid,
}

impl PmpVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            values,
            grid: self.grid,
        }
    }
}

/// Location of each patch's minimal pixel, in patch order.
#[derive(Debug, Clone, PartialEq)]
pub struct PmpMask {
    pub grid: PatchGrid,
    pub positions: Vec<(usize, usize)>,
}

impl PmpMask {
    pub fn to_array(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.grid.rows, self.grid.cols));
        for &(i, j) in &self.positions {
            out[[i, j]] = 1.0;
        }
        out
    }

    pub fn count(&self) -> usize {
        self.positions.len()
    }
}

/// One pass computing both the PMP values and their locations. Ties go to
/// the first minimum in row-major order within the patch.
pub fn pmp_with_mask(img: &Plane, r: usize) -> Result<(PmpVector, PmpMask)> {
    let (m, n) = img.dim();
    let grid = PatchGrid::new(m, n, r)?;
    let p = grid.num_patches();
    let mut values = Vec::with_capacity(p);
    let mut positions = Vec::with_capacity(p);
    for pi in 0..grid.patch_rows() {
        for pj in 0..grid.patch_cols() {
            let (rows, cols) = grid.bounds(pi, pj);
            let mut best = f64::INFINITY;
            let mut at = (rows.start, cols.start);
            for i in rows {
                for j in cols.clone() {
                    let v = img[[i, j]];
                    if v < best {
                        best = v;
                        at = (i, j);
                    }
                }
            }
            values.push(best);
            positions.push(at);
        }
    }
    Ok((PmpVector { values, grid }, PmpMask { grid, positions }))
}

/// PMP of a single-channel plane.
pub fn pmp_extract(img: &Plane, r: usize) -> Result<PmpVector> {
    pmp_with_mask(img, r).map(|(v, _)| v)
}

/// PMP of an image, taking the minimum over channels first.
pub fn pmp_extract_image(img: &Image, r: usize) -> Result<PmpVector> {
    pmp_extract(&img.channel_min(), r)
}

pub fn pmp_mask(img: &Plane, r: usize) -> Result<PmpMask> {
    pmp_with_mask(img, r).map(|(_, m)| m)
}

/// Transpose of the PMP operator: places `v[i]` at the masked pixel of patch
/// `i` and zero everywhere else.
pub fn pmp_scatter(v: &PmpVector, mask: &PmpMask) -> Result<Plane> {
    if v.len() != mask.count() || v.grid != mask.grid {
        return Err(DeblurError::DimensionMismatch(format!(
            "PMP vector of {} entries vs mask of {} patches",
            v.len(),
            mask.count()
        )));
    }
    let mut out = Array2::zeros((mask.grid.rows, mask.grid.cols));
    for (&(i, j), &val) in mask.positions.iter().zip(&v.values) {
        out[[i, j]] = val;
    }
    Ok(out)
}

fn sliding_min_1d(src: &[f64], half: usize, out: &mut [f64]) {
    let len = src.len();
    for (x, o) in out.iter_mut().enumerate() {
        let lo = x.saturating_sub(half);
        let hi = (x + half).min(len - 1);
        *o = src[lo..=hi].iter().copied().fold(f64::INFINITY, f64::min);
    }
}

/// Dark channel: minimum over channels, then over a `patch x patch` window
/// centred on each pixel. Windows are clipped at the border, which is the
/// same as replicate padding for a min filter.
pub fn dark_channel(img: &Image, patch: usize) -> Result<Plane> {
    if patch % 2 == 0 {
        return Err(DeblurError::InvalidArgument(format!(
            "dark channel window must be odd, got {patch}"
        )));
    }
    let half = patch / 2;
    let base = img.channel_min();
    let (m, n) = base.dim();
    let mut rows_done = Array2::zeros((m, n));
    let mut buf = vec![0.0; n.max(m)];
    for i in 0..m {
        let src: Vec<f64> = base.row(i).to_vec();
        sliding_min_1d(&src, half, &mut buf[..n]);
        for j in 0..n {
            rows_done[[i, j]] = buf[j];
        }
    }
    let mut out = Array2::zeros((m, n));
    for j in 0..n {
        let src: Vec<f64> = rows_done.column(j).to_vec();
        sliding_min_1d(&src, half, &mut buf[..m]);
        for i in 0..m {
            out[[i, j]] = buf[i];
        }
    }
    Ok(out)
}

/// Share of PMP values counted as near zero in histogram summaries.
pub const SPARSITY_THRESHOLD: f64 = 0.05;

pub fn sparsity_fraction(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().filter(|&&v| v < SPARSITY_THRESHOLD).count() as f64 / values.len() as f64
}

/// Normalized histogram of PMP values pooled over a corpus.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PmpHistogram {
    pub bin_centers: Vec<f64>,
    /// Fraction of all PMP values falling in each bin; sums to one.
    pub mass: Vec<f64>,
    pub sparsity: f64,
    pub count: usize,
}

pub fn pmp_histogram(corpus: &[Image], rule: PatchRule, bins: usize) -> Result<PmpHistogram> {
    if corpus.is_empty() {
        return Err(DeblurError::Empty("histogram corpus"));
    }
    if bins == 0 {
        return Err(DeblurError::InvalidArgument("need at least one bin".into()));
    }
    let mut all = Vec::new();
    for img in corpus {
        let r = rule.patch_size(img.height(), img.width());
        all.extend(pmp_extract_image(img, r)?.values);
    }
    Ok(histogram_of(&all, bins))
}

pub fn histogram_of(values: &[f64], bins: usize) -> PmpHistogram {
    let mut counts = vec![0usize; bins];
    for &v in values {
        let b = ((v.clamp(0.0, 1.0) * bins as f64) as usize).min(bins - 1);
        counts[b] += 1;
    }
    let total = values.len().max(1) as f64;
    PmpHistogram {
        bin_centers: (0..bins).map(|b| (b as f64 + 0.5) / bins as f64).collect(),
        mass: counts.iter().map(|&c| c as f64 / total).collect(),
        sparsity: sparsity_fraction(values),
        count: values.len(),
    }
}

/// Clear-versus-blurred histograms, optionally with dark-channel
/// counterparts. The CSV has one row per bin followed by a `sparsity` row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramReport {
    pub clear: PmpHistogram,
    pub blurred: Option<PmpHistogram>,
    pub dark_clear: Option<PmpHistogram>,
    pub dark_blurred: Option<PmpHistogram>,
}

impl HistogramReport {
    fn columns(&self) -> Vec<(&'static str, Option<&PmpHistogram>)> {
        let mut cols = vec![("clear_density", Some(&self.clear)), ("blurred_density", self.blurred.as_ref())];
        if self.dark_clear.is_some() || self.dark_blurred.is_some() {
            cols.push(("dark_clear_density", self.dark_clear.as_ref()));
            cols.push(("dark_blurred_density", self.dark_blurred.as_ref()));
        }
        cols
    }

    pub fn to_csv(&self) -> String {
        let cols = self.columns();
        let mut out = String::from("bin_center");
        for (name, _) in &cols {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        let cell = |h: Option<&PmpHistogram>, f: &dyn Fn(&PmpHistogram) -> f64| {
            h.map(|h| format!("{:.6}", f(h))).unwrap_or_default()
        };
        for (b, center) in self.clear.bin_centers.iter().enumerate() {
            out.push_str(&format!("{center:.6}"));
            for (_, h) in &cols {
                out.push(',');
                out.push_str(&cell(*h, &|h| h.mass[b]));
            }
            out.push('\n');
        }
        out.push_str("sparsity");
        for (_, h) in &cols {
            out.push(',');
            out.push_str(&cell(*h, &|h| h.sparsity));
        }
        out.push('\n');
        out
    }
}


#[cfg(test)]
mod properties {
    use super::*;
    use proptest::prelude::*;

    fn plane() -> impl Strategy<Value = Plane> {
        (1usize..14, 1usize..14).prop_flat_map(|(m, n)| {
            proptest::collection::vec(0.0f64..1.0, m * n)
                .prop_map(move |v| Array2::from_shape_vec((m, n), v).unwrap())
        })
    }

    proptest! {
        #[test]
        fn pmp_lower_bounds_its_patch(img in plane(), r in 1usize..6) {
            let (v, mask) = pmp_with_mask(&img, r).unwrap();
            let grid = v.grid;
            for pi in 0..grid.patch_rows() {
                for pj in 0..grid.patch_cols() {
                    let idx = pi * grid.patch_cols() + pj;
                    let (rows, cols) = grid.bounds(pi, pj);
                    for i in rows {
                        for j in cols.clone() {
                            prop_assert!(v.values[idx] <= img[[i, j]]);
                        }
                    }
                    let (mi, mj) = mask.positions[idx];
                    prop_assert_eq!(img[[mi, mj]], v.values[idx]);
                }
            }
        }

        #[test]
        fn transpose_round_trip(img in plane(), r in 1usize..6, seed in any::<u64>()) {
            let (v, mask) = pmp_with_mask(&img, r).unwrap();
            let z: Vec<f64> = (0..v.len()).map(|i| ((seed.wrapping_mul(i as u64 + 1) % 1000) as f64) / 17.0 - 20.0).collect();
            let z = v.with_values(z);
            let scattered = pmp_scatter(&z, &mask).unwrap();
            let gathered: Vec<f64> = mask.positions.iter().map(|&(i, j)| scattered[[i, j]]).collect();
            prop_assert_eq!(gathered, z.values);
        }

        #[test]
        fn wide_dark_channel_bounds_pmp(img in plane(), r in 1usize..5) {
            let (v, mask) = pmp_with_mask(&img, r).unwrap();
            let gray = Image::gray(img.clone()).unwrap();
            let d = dark_channel(&gray, 2 * r - 1).unwrap();
            let grid = v.grid;
            for pi in 0..grid.patch_rows() {
                for pj in 0..grid.patch_cols() {
                    let idx = pi * grid.patch_cols() + pj;
                    let (rows, cols) = grid.bounds(pi, pj);
                    for i in rows {
                        for j in cols.clone() {
                            prop_assert!(d[[i, j]] <= v.values[idx]);
                        }
                    }
                }
            }
            let narrow = dark_channel(&gray, 3).unwrap();
            for (&(i, j), &val) in mask.positions.iter().zip(&v.values) {
                prop_assert!(narrow[[i, j]] <= val);
            }
        }
    }
}
