//! Interim latent image estimation with PMP sparsity inducing.
//!
//! Each inner step thresholds the PMP of the current iterate, writes the
//! thresholded minima back in place, hard-thresholds the gradient of the
//! result (the L0 proximal map) and solves the remaining quadratic problem
//! in closed form in the Fourier domain. The gradient penalty weight follows
//! a geometric continuation from `beta0` to `beta_max`.

use ndarray::Zip;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::fft::{difference_otfs, psf_to_otf, Fft2d, Spectrum};
use crate::image::{Kernel, Plane};
use crate::ops::{gradient, gradient_adjoint, GradientPair};
use crate::pmp::{pmp_extract, pmp_with_mask, PmpVector};

/// Floor on the Fourier denominator of the quadratic solves.
pub const DENOMINATOR_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    Hard,
    Soft,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentParams {
    /// Weight of the gradient L0 term.
    pub mu: f64,
    pub beta0: f64,
    pub beta_max: f64,
    /// Continuation factor `a > 1`.
    pub growth: f64,
    /// Inner iterations per continuation step.
    pub inner_iters: usize,
    /// Starting PMP threshold. Each outer step moves it to
    /// `min(lambda, max(mean PMP, decay * lambda))`.
    pub lambda0: f64,
    pub lambda_decay: f64,
    pub mode: ThresholdMode,
    pub pmp_enabled: bool,
    pub patch_size: usize,
}

impl Default for LatentParams {
    fn default() -> Self {
        let mu = 4e-3;
        Self {
            mu,
            beta0: 2.0 * mu,
            beta_max: 1e5,
            growth: 2.0,
            inner_iters: 3,
            lambda0: 0.1,
            lambda_decay: 0.9,
            mode: ThresholdMode::Hard,
            pmp_enabled: true,
            patch_size: 4,
        }
    }
}

impl LatentParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(DeblurError::InvalidArgument(what.to_string()));
        if !(self.mu > 0.0) {
            return bad("mu must be positive");
        }
        if !(self.beta0 > 0.0) || !(self.beta_max > 0.0) {
            return bad("beta0 and beta_max must be positive");
        }
        if !(self.growth > 1.0) {
            return bad("continuation factor must exceed 1");
        }
        if self.inner_iters == 0 {
            return bad("inner iteration count must be >= 1");
        }
        if !(self.lambda0 >= 0.0) || !(0.0..=1.0).contains(&self.lambda_decay) {
            return bad("lambda0 must be >= 0 and lambda_decay in [0, 1]");
        }
        if self.patch_size == 0 {
            return bad("patch size must be >= 1");
        }
        Ok(())
    }

    /// Number of outer continuation steps: `beta0 * a^t <= beta_max`.
    pub fn outer_iterations(&self) -> usize {
        continuation_steps(self.beta0, self.beta_max, self.growth)
    }
}

pub(crate) fn continuation_steps(start: f64, max: f64, growth: f64) -> usize {
    let mut v = start;
    let mut count = 0;
    while v <= max {
        count += 1;
        v *= growth;
    }
    count
}

pub fn threshold_pmp(v: &PmpVector, lambda: f64, mode: ThresholdMode) -> PmpVector {
    let values = v
        .values
        .iter()
        .map(|&x| match mode {
            ThresholdMode::Hard => {
                if x.abs() < lambda {
                    0.0
                } else {
                    x
                }
            }
            ThresholdMode::Soft => x.signum() * (x.abs() - lambda).max(0.0),
        })
        .collect();
    v.with_values(values)
}

/// Replaces each patch minimum of `img` by its thresholded value, leaving
/// every other pixel untouched.
pub fn apply_pmp_update(img: &Plane, r: usize, lambda: f64, mode: ThresholdMode) -> Result<Plane> {
    let (v, mask) = pmp_with_mask(img, r)?;
    let thresholded = threshold_pmp(&v, lambda, mode);
    let mut out = img.clone();
    for (&(i, j), &val) in mask.positions.iter().zip(&thresholded.values) {
        out[[i, j]] = val;
    }
    Ok(out)
}

/// Elementwise L0 proximal map: `argmin_G beta (T - G)^2 + mu [G != 0]`.
pub fn threshold_gradient(g: &GradientPair, mu: f64, beta: f64) -> GradientPair {
    let cut = mu / beta;
    let shrink = |t: f64| if t * t < cut { 0.0 } else { t };
    GradientPair {
        gh: g.gh.mapv(shrink),
        gv: g.gv.mapv(shrink),
    }
}

/// Closed-form minimizer of `||k * I - B||^2 + beta ||grad I - G||^2` under
/// circular boundaries, with the spectra that do not depend on `G` or
/// `beta` computed once.
#[derive(Debug, Clone)]
pub struct QuadraticSolver {
    fft: Fft2d,
    data_numer: Spectrum,
    data_denom: Plane,
    grad_denom: Plane,
}

impl QuadraticSolver {
    pub fn new(blurred: &Plane, k: &Kernel) -> Result<Self> {
        let (m, n) = blurred.dim();
        if k.height() > m || k.width() > n {
            return Err(DeblurError::KernelTooLarge {
                kh: k.height(),
                kw: k.width(),
                m,
                n,
            });
        }
        let fft = Fft2d::new(m, n);
        let otf = psf_to_otf(k, &fft);
        let fb = fft.forward(blurred);
        if fb.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(DeblurError::NonFinite("observation spectrum"));
        }
        let (dh, dv) = difference_otfs(&fft);
        let data_numer = Zip::from(&otf).and(&fb).map_collect(|k, b| k.conj() * b);
        let data_denom = otf.mapv(|c| c.norm_sqr());
        let grad_denom = Zip::from(&dh).and(&dv).map_collect(|h, v| h.norm_sqr() + v.norm_sqr());
        Ok(Self {
            fft,
            data_numer,
            data_denom,
            grad_denom,
        })
    }

    pub fn fft(&self) -> &Fft2d {
        &self.fft
    }

    pub fn solve(&self, targets: &GradientPair, beta: f64) -> Result<Plane> {
        if !(beta > 0.0) {
            return Err(DeblurError::InvalidArgument("beta must be positive".into()));
        }
        if targets.dim() != self.fft.shape() {
            return Err(DeblurError::DimensionMismatch(
                "gradient targets vs observation".into(),
            ));
        }
        let fg = self.fft.forward(&gradient_adjoint(targets));
        let mut spec = Spectrum::zeros(self.fft.shape());
        Zip::from(&mut spec)
            .and(&self.data_numer)
            .and(&fg)
            .and(&self.data_denom)
            .and(&self.grad_denom)
            .for_each(|s, &num, &g, &dk, &dd| {
                let den = (dk + beta * dd).max(DENOMINATOR_FLOOR);
                *s = (num + g * beta) / Complex64::new(den, 0.0);
            });
        if spec.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(DeblurError::NonFinite("latent spectrum"));
        }
        Ok(self.fft.inverse_real(spec))
    }
}

pub fn solve_latent_quadratic(
    blurred: &Plane,
    k: &Kernel,
    targets: &GradientPair,
    beta: f64,
) -> Result<Plane> {
    QuadraticSolver::new(blurred, k)?.solve(targets, beta)
}

/// Bookkeeping from one latent estimation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatentTrace {
    pub outer_iterations: usize,
    pub final_beta: f64,
    pub final_lambda: f64,
}

/// One continuation run, starting from the observation itself.
pub fn estimate_latent(blurred: &Plane, k: &Kernel, params: &LatentParams) -> Result<(Plane, LatentTrace)> {
    params.validate()?;
    let solver = QuadraticSolver::new(blurred, k)?;
    let mut latent = blurred.clone();
    let mut beta = params.beta0;
    let mut lambda = params.lambda0;
    let mut trace = LatentTrace {
        outer_iterations: 0,
        final_beta: beta,
        final_lambda: lambda,
    };
    while beta <= params.beta_max {
        for _ in 0..params.inner_iters {
            let updated = if params.pmp_enabled {
                apply_pmp_update(&latent, params.patch_size, lambda, params.mode)?
            } else {
                latent
            };
            let targets = threshold_gradient(&gradient(&updated), params.mu, beta);
            latent = solver.solve(&targets, beta)?;
        }
        trace.outer_iterations += 1;
        trace.final_beta = beta;
        trace.final_lambda = lambda;
        if params.pmp_enabled {
            let mean = pmp_extract(&latent, params.patch_size)?.mean();
            lambda = lambda.min(mean.max(params.lambda_decay * lambda));
        }
        beta *= params.growth;
    }
    Ok((latent, trace))
}
