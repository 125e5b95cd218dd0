//! Blur kernel estimation in the gradient domain and the per-scale
//! alternation between latent image and kernel updates.

use ndarray::{Array2, Zip};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::fft::{Fft2d, Spectrum};
use crate::hqs::{estimate_latent_hqs, HqsParams};
use crate::image::{Kernel, Plane};
use crate::latent::{estimate_latent, LatentParams, LatentTrace};
use crate::ops::gradient;

/// Entries below this fraction of the peak are dropped when pruning is on.
pub const PRUNE_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    /// Ridge weight on the kernel.
    pub gamma: f64,
    /// Latent/kernel alternations per scale.
    pub max_iter: usize,
    /// Zero entries below [`PRUNE_FRACTION`] of the peak after refinement.
    pub prune_small: bool,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self {
            gamma: 2.0,
            max_iter: 5,
            prune_small: false,
        }
    }
}

/// Full-grid minimizer of `||k * grad I - grad B||^2 + gamma ||k||^2`.
///
/// The result is laid out like a point spread function before `psf_to_otf`
/// shifting, i.e. the kernel centre sits at index `(0, 0)` and negative
/// offsets wrap to the far edge.
pub fn solve_kernel_full(latent: &Plane, blurred: &Plane, gamma: f64) -> Result<Plane> {
    if latent.dim() != blurred.dim() {
        return Err(DeblurError::DimensionMismatch(format!(
            "latent {:?} vs blurred {:?}",
            latent.dim(),
            blurred.dim()
        )));
    }
    if !(gamma > 0.0) {
        return Err(DeblurError::InvalidArgument("gamma must be positive".into()));
    }
    let gi = gradient(latent);
    if gi.is_zero() {
        return Err(DeblurError::DegenerateLatent);
    }
    let gb = gradient(blurred);
    let (m, n) = latent.dim();
    let fft = Fft2d::new(m, n);
    let (ih, iv) = (fft.forward(&gi.gh), fft.forward(&gi.gv));
    let (bh, bv) = (fft.forward(&gb.gh), fft.forward(&gb.gv));
    let mut spec = Spectrum::zeros((m, n));
    Zip::from(&mut spec)
        .and(&ih)
        .and(&iv)
        .and(&bh)
        .and(&bv)
        .for_each(|s, ih, iv, bh, bv| {
            let num = ih.conj() * bh + iv.conj() * bv;
            let den = ih.norm_sqr() + iv.norm_sqr() + gamma;
            *s = num / Complex64::new(den, 0.0);
        });
    Ok(fft.inverse_real(spec))
}

/// Extracts the `size x size` window centred on the origin of a full-grid
/// kernel estimate.
pub fn crop_kernel_support(full: &Plane, size: usize) -> Result<Array2<f64>> {
    let (m, n) = full.dim();
    if size % 2 == 0 {
        return Err(DeblurError::EvenKernel(size, size));
    }
    if size > m || size > n {
        return Err(DeblurError::KernelTooLarge { kh: size, kw: size, m, n });
    }
    let half = size / 2;
    Ok(Array2::from_shape_fn((size, size), |(a, b)| {
        full[[(a + m - half) % m, (b + n - half) % n]]
    }))
}

/// Gradient-domain kernel estimate cropped to the declared support. The
/// result is unrefined and may hold negative entries.
pub fn solve_kernel(latent: &Plane, blurred: &Plane, size: usize, gamma: f64) -> Result<Array2<f64>> {
    crop_kernel_support(&solve_kernel_full(latent, blurred, gamma)?, size)
}

/// Zeroes negative entries and rescales to unit sum.
pub fn refine_kernel(raw: &Array2<f64>) -> Result<Kernel> {
    let clipped = raw.mapv(|v| if v > 0.0 { v } else { 0.0 });
    let total = clipped.sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(DeblurError::KernelCollapsed);
    }
    Kernel::new(clipped / total)
}

/// [`refine_kernel`] followed by dropping entries under
/// [`PRUNE_FRACTION`] of the peak and renormalizing.
pub fn refine_kernel_pruned(raw: &Array2<f64>) -> Result<Kernel> {
    let refined = refine_kernel(raw)?;
    let peak = refined.data().fold(0.0f64, |a, &b| a.max(b));
    let pruned = refined
        .data()
        .mapv(|v| if v < PRUNE_FRACTION * peak { 0.0 } else { v });
    refine_kernel(&pruned)
}

/// Which latent image estimator drives the alternation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatentMethod {
    Pmp(LatentParams),
    Hqs(HqsParams),
}

impl LatentMethod {
    pub fn estimate(&self, blurred: &Plane, k: &Kernel) -> Result<(Plane, LatentTrace)> {
        match self {
            LatentMethod::Pmp(p) => estimate_latent(blurred, k, p),
            LatentMethod::Hqs(p) => estimate_latent_hqs(blurred, k, p),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SingleScaleResult {
    pub kernel: Kernel,
    pub latent: Plane,
    /// Kernel after each alternation.
    pub history: Vec<Kernel>,
    pub traces: Vec<LatentTrace>,
}

/// Alternates latent estimation and kernel re-estimation `max_iter` times
/// at one pyramid level.
pub fn estimate_kernel_single_scale(
    blurred: &Plane,
    k_init: &Kernel,
    method: &LatentMethod,
    params: &KernelParams,
) -> Result<SingleScaleResult> {
    if params.max_iter == 0 {
        return Err(DeblurError::InvalidArgument("max_iter must be >= 1".into()));
    }
    let size = k_init.height();
    let mut kernel = k_init.clone();
    let mut latent = blurred.clone();
    let mut history = Vec::with_capacity(params.max_iter);
    let mut traces = Vec::with_capacity(params.max_iter);
    for _ in 0..params.max_iter {
        let (next_latent, trace) = method.estimate(blurred, &kernel)?;
        latent = next_latent;
        let raw = solve_kernel(&latent, blurred, size, params.gamma)?;
        kernel = if params.prune_small {
            refine_kernel_pruned(&raw)?
        } else {
            refine_kernel(&raw)?
        };
        history.push(kernel.clone());
        traces.push(trace);
    }
    Ok(SingleScaleResult {
        kernel,
        latent,
        history,
        traces,
    })
}
