//! Image quality and kernel-quality measures.

use ndarray::{s, Array2};

use crate::error::{DeblurError, Result};
use crate::image::Plane;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

fn check_same(a: &Plane, b: &Plane) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(DeblurError::DimensionMismatch(format!("{:?} vs {:?}", a.dim(), b.dim())));
    }
    if a.is_empty() {
        return Err(DeblurError::Empty("image"));
    }
    Ok(())
}

pub fn mse(a: &Plane, b: &Plane) -> Result<f64> {
    check_same(a, b)?;
    Ok((a - b).mapv(|v| v * v).mean().expect("non-empty"))
}

/// Peak signal-to-noise ratio for unit peak. Identical inputs give `+inf`.
pub fn psnr(estimate: &Plane, reference: &Plane) -> Result<f64> {
    let e = mse(estimate, reference)?;
    Ok(if e == 0.0 { f64::INFINITY } else { -10.0 * e.log10() })
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable "valid" filtering with the SSIM window.
fn filter_valid(x: &Plane, w: &[f64]) -> Plane {
    let (m, n) = x.dim();
    let k = w.len();
    let rows = Array2::from_shape_fn((m, n - k + 1), |(i, j)| {
        (0..k).map(|t| w[t] * x[[i, j + t]]).sum::<f64>()
    });
    Array2::from_shape_fn((m - k + 1, n - k + 1), |(i, j)| {
        (0..k).map(|t| w[t] * rows[[i + t, j]]).sum::<f64>()
    })
}

/// Mean structural similarity with an 11x11 Gaussian window (sigma 1.5)
/// over the valid region, for unit dynamic range.
pub fn ssim(a: &Plane, b: &Plane) -> Result<f64> {
    check_same(a, b)?;
    let (m, n) = a.dim();
    if m < SSIM_WINDOW || n < SSIM_WINDOW {
        return Err(DeblurError::ImageTooSmall(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {m}x{n}"
        )));
    }
    let w = gaussian_window();
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mu_a = filter_valid(a, &w);
    let mu_b = filter_valid(b, &w);
    let aa = filter_valid(&(a * a), &w);
    let bb = filter_valid(&(b * b), &w);
    let ab = filter_valid(&(a * b), &w);
    let mut total = 0.0;
    for (idx, &ma) in mu_a.indexed_iter() {
        let mb = mu_b[idx];
        let va = aa[idx] - ma * ma;
        let vb = bb[idx] - mb * mb;
        let cov = ab[idx] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// Smallest sum of squared differences between `estimate` and `reference`
/// over integer shifts of up to `max_shift` pixels, compared on the central
/// region that stays inside both images for every shift.
pub fn best_shift_ssd(estimate: &Plane, reference: &Plane, max_shift: usize) -> Result<f64> {
    check_same(estimate, reference)?;
    let (m, n) = reference.dim();
    if 2 * max_shift >= m || 2 * max_shift >= n {
        return Err(DeblurError::ImageTooSmall(format!(
            "shift search of {max_shift} px on a {m}x{n} image"
        )));
    }
    let s = max_shift as isize;
    let core = reference.slice(s![max_shift..m - max_shift, max_shift..n - max_shift]);
    let mut best = f64::INFINITY;
    for di in -s..=s {
        for dj in -s..=s {
            let top = (s + di) as usize;
            let left = (s + dj) as usize;
            let moved = estimate.slice(s![top..top + core.nrows(), left..left + core.ncols()]);
            let ssd: f64 = moved.iter().zip(core.iter()).map(|(x, y)| (x - y).powi(2)).sum();
            best = best.min(ssd);
        }
    }
    Ok(best)
}

/// Ratio between the error of a restoration made with an estimated kernel
/// and the error of the restoration made with the true kernel.
pub fn error_ratio(restored_estimated: &Plane, restored_true: &Plane, clear: &Plane, max_shift: usize) -> Result<f64> {
    let num = best_shift_ssd(restored_estimated, clear, max_shift)?;
    let den = best_shift_ssd(restored_true, clear, max_shift)?;
    if den == 0.0 {
        return Ok(if num == 0.0 { 1.0 } else { f64::INFINITY });
    }
    Ok(num / den)
}

/// Fraction of `ratios` at or below each threshold.
pub fn cumulative_curve(ratios: &[f64], thresholds: &[f64]) -> Vec<f64> {
    if ratios.is_empty() {
        return vec![0.0; thresholds.len()];
    }
    thresholds
        .iter()
        .map(|&t| ratios.iter().filter(|&&r| r <= t).count() as f64 / ratios.len() as f64)
        .collect()
}
