//! Final restoration with a known kernel under a hyper-Laplacian gradient
//! prior.
//!
//! The objective `||k * I - B||^2 + w sum |grad I|^alpha` is minimized by
//! half-quadratic continuation: gradient targets come from the per-element
//! proximal map of `w |g|^alpha` (solved by an iteratively reweighted fixed
//! point) and the image step is the usual FFT quotient.

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::image::{Image, Kernel, Plane};
use crate::latent::QuadraticSolver;
use crate::ops::{crop, edge_taper, gradient, pad_replicate, GradientPair};

const PROX_FIXED_POINT_ITERS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonblindParams {
    /// Prior exponent in `(0, 1]`.
    pub alpha: f64,
    pub weight: f64,
    pub iters: usize,
    pub beta0: f64,
    pub growth: f64,
}

impl Default for NonblindParams {
    fn default() -> Self {
        Self {
            alpha: 0.8,
            weight: 3e-3,
            iters: 15,
            beta0: 3e-3,
            growth: 2.0,
        }
    }
}

impl NonblindParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(DeblurError::InvalidArgument("nonblind alpha must lie in (0, 1]".into()));
        }
        if !(self.weight > 0.0) || self.iters == 0 {
            return Err(DeblurError::InvalidArgument(
                "nonblind weight must be > 0 and iters >= 1".into(),
            ));
        }
        if !(self.beta0 > 0.0) || !(self.growth >= 1.0) {
            return Err(DeblurError::InvalidArgument("nonblind beta0 > 0 and growth >= 1 required".into()));
        }
        Ok(())
    }
}

/// `argmin_g  w |g|^alpha + beta (g - v)^2` for one scalar.
pub fn prox_hyper_laplacian(v: f64, weight: f64, alpha: f64, beta: f64) -> f64 {
    let t = weight / (2.0 * beta);
    if alpha == 1.0 {
        return v.signum() * (v.abs() - t).max(0.0);
    }
    if v == 0.0 {
        return 0.0;
    }
    let cost = |g: f64| weight * g.abs().powf(alpha) + beta * (g - v) * (g - v);
    let scale = t * alpha;
    let mut g = v;
    for _ in 0..PROX_FIXED_POINT_ITERS {
        let a = g.abs();
        if a == 0.0 {
            break;
        }
        g = v / (1.0 + scale * a.powf(alpha - 2.0));
    }
    // the nonconvex prior always has a local minimum at zero
    if g.is_finite() && g * v > 0.0 && cost(g) < cost(0.0) {
        g
    } else {
        0.0
    }
}

/// Deconvolves one plane on the circular grid, without any border handling.
pub fn deconvolve_plane_circular(blurred: &Plane, k: &Kernel, p: &NonblindParams) -> Result<Plane> {
    p.validate()?;
    if !(k.sum() > 0.0) {
        return Err(DeblurError::KernelCollapsed);
    }
    let solver = QuadraticSolver::new(blurred, k)?;
    let mut x = blurred.clone();
    let mut beta = p.beta0;
    for _ in 0..p.iters {
        let g = gradient(&x);
        let prox = |v: &f64| prox_hyper_laplacian(*v, p.weight, p.alpha, beta);
        let targets = GradientPair {
            gh: g.gh.map(prox),
            gv: g.gv.map(prox),
        };
        x = solver.solve(&targets, beta)?;
        beta *= p.growth;
    }
    Ok(x)
}

/// Replicate-pads by the kernel size, tapers the padded border, deconvolves,
/// crops back and clamps to `[0, 1]`.
pub fn deconvolve_plane(blurred: &Plane, k: &Kernel, p: &NonblindParams) -> Result<Plane> {
    let (m, n) = blurred.dim();
    let (ph, pw) = (k.height(), k.width());
    let padded = edge_taper(&pad_replicate(blurred, ph, pw), k)?;
    let restored = deconvolve_plane_circular(&padded, k, p)?;
    Ok(crop(&restored, ph, pw, m, n).mapv(|v| v.clamp(0.0, 1.0)))
}

/// Restores every channel independently.
pub fn deconvolve_nonblind(blurred: &Image, k: &Kernel, p: &NonblindParams) -> Result<Image> {
    let planes = blurred
        .planes()
        .par_iter()
        .map(|plane| deconvolve_plane(plane, k, p))
        .collect::<Result<Vec<Array2<f64>>>>()?;
    Image::from_planes(planes)
}
