//! Spatial primitives shared by the solvers: gradients, convolution,
//! resampling and border handling.
//!
//! Everything inside the solvers uses circular boundaries so that the
//! frequency-domain closed forms are exact. Replicate padding is only used
//! when synthesizing observations and when preparing inputs.

use ndarray::{s, Array2};

use crate::error::{DeblurError, Result};
use crate::fft::{psf_to_otf, Fft2d};
use crate::image::{Kernel, Plane};

/// Horizontal and vertical circular forward differences of a plane.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientPair {
    pub gh: Plane,
    pub gv: Plane,
}

impl GradientPair {
    pub fn zeros(m: usize, n: usize) -> Self {
        Self {
            gh: Array2::zeros((m, n)),
            gv: Array2::zeros((m, n)),
        }
    }

    pub fn dim(&self) -> (usize, usize) {
        self.gh.dim()
    }

    pub fn is_zero(&self) -> bool {
        self.gh.iter().chain(self.gv.iter()).all(|&v| v == 0.0)
    }
}

pub fn gradient(img: &Plane) -> GradientPair {
    let (m, n) = img.dim();
    let mut gh = Array2::zeros((m, n));
    let mut gv = Array2::zeros((m, n));
    for i in 0..m {
        let down = (i + 1) % m;
        for j in 0..n {
            let right = (j + 1) % n;
            let v = img[[i, j]];
            gh[[i, j]] = img[[i, right]] - v;
            gv[[i, j]] = img[[down, j]] - v;
        }
    }
    GradientPair { gh, gv }
}

/// Adjoint of [`gradient`]: `Dh^T gh + Dv^T gv`.
pub fn gradient_adjoint(g: &GradientPair) -> Plane {
    let (m, n) = g.dim();
    let mut out = Array2::zeros((m, n));
    for i in 0..m {
        let up = (i + m - 1) % m;
        for j in 0..n {
            let left = (j + n - 1) % n;
            out[[i, j]] = g.gh[[i, left]] - g.gh[[i, j]] + g.gv[[up, j]] - g.gv[[i, j]];
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Boundary {
    Circular,
    ReplicatePad,
}

pub fn convolve(img: &Plane, k: &Kernel, boundary: Boundary) -> Result<Plane> {
    let (m, n) = img.dim();
    if k.height() > m || k.width() > n {
        return Err(DeblurError::KernelTooLarge {
            kh: k.height(),
            kw: k.width(),
            m,
            n,
        });
    }
    match boundary {
        Boundary::Circular => Ok(convolve_circular(img, k)),
        Boundary::ReplicatePad => {
            let (ph, pw) = (k.half_height(), k.half_width());
            let padded = pad_replicate(img, ph, pw);
            let full = convolve_circular(&padded, k);
            Ok(crop(&full, ph, pw, m, n))
        }
    }
}

/// Direct spatial convolution. Exact for integer-shift kernels, which the
/// FFT route is not; used where bit-exact forward models matter.
pub fn convolve_spatial(img: &Plane, k: &Kernel, boundary: Boundary) -> Result<Plane> {
    let (m, n) = img.dim();
    if k.height() > m || k.width() > n {
        return Err(DeblurError::KernelTooLarge {
            kh: k.height(),
            kw: k.width(),
            m,
            n,
        });
    }
    let (hh, hw) = (k.half_height() as isize, k.half_width() as isize);
    let (mi, ni) = (m as isize, n as isize);
    let fetch = |i: isize, j: isize| match boundary {
        Boundary::Circular => img[[i.rem_euclid(mi) as usize, j.rem_euclid(ni) as usize]],
        Boundary::ReplicatePad => img[[i.clamp(0, mi - 1) as usize, j.clamp(0, ni - 1) as usize]],
    };
    let kd = k.data();
    Ok(Array2::from_shape_fn((m, n), |(i, j)| {
        let mut acc = 0.0;
        for ((a, b), &w) in kd.indexed_iter() {
            if w != 0.0 {
                acc += w * fetch(i as isize - (a as isize - hh), j as isize - (b as isize - hw));
            }
        }
        acc
    }))
}

pub(crate) fn convolve_circular(img: &Plane, k: &Kernel) -> Plane {
    let (m, n) = img.dim();
    let fft = Fft2d::new(m, n);
    let otf = psf_to_otf(k, &fft);
    let spec = fft.forward(img) * &otf;
    fft.inverse_real(spec)
}

pub fn pad_replicate(img: &Plane, ph: usize, pw: usize) -> Plane {
    let (m, n) = img.dim();
    Array2::from_shape_fn((m + 2 * ph, n + 2 * pw), |(i, j)| {
        let si = i.saturating_sub(ph).min(m - 1);
        let sj = j.saturating_sub(pw).min(n - 1);
        img[[si, sj]]
    })
}

pub fn crop(img: &Plane, top: usize, left: usize, m: usize, n: usize) -> Plane {
    img.slice(s![top..top + m, left..left + n]).to_owned()
}

/// Removes a border of `margin` pixels on every side.
pub fn crop_border(img: &Plane, margin: usize) -> Result<Plane> {
    let (m, n) = img.dim();
    if 2 * margin >= m || 2 * margin >= n {
        return Err(DeblurError::ImageTooSmall(format!(
            "cannot strip a {margin}px border from {m}x{n}"
        )));
    }
    Ok(crop(img, margin, margin, m - 2 * margin, n - 2 * margin))
}

/// Bilinear resampling by `factor`, with pixel-centre alignment.
pub fn resample(img: &Plane, factor: f64) -> Result<Plane> {
    if !(factor > 0.0) || !factor.is_finite() {
        return Err(DeblurError::InvalidArgument(format!(
            "resample factor must be positive, got {factor}"
        )));
    }
    let (m, n) = img.dim();
    let om = (m as f64 * factor).round() as usize;
    let on = (n as f64 * factor).round() as usize;
    resize(img, om, on)
}

/// Bilinear resize to an explicit output shape (at least 3x3).
pub fn resize(img: &Plane, om: usize, on: usize) -> Result<Plane> {
    if om < 3 || on < 3 {
        return Err(DeblurError::ImageTooSmall(format!(
            "resampled image would be {om}x{on}, minimum is 3x3"
        )));
    }
    Ok(bilinear(img, om, on))
}

pub(crate) fn bilinear(img: &Plane, om: usize, on: usize) -> Plane {
    let (m, n) = img.dim();
    if (om, on) == (m, n) {
        return img.clone();
    }
    let sy = m as f64 / om as f64;
    let sx = n as f64 / on as f64;
    let taps = |dst: usize, scale: f64, len: usize| {
        let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let lo = src.floor() as usize;
        let hi = (lo + 1).min(len - 1);
        (lo, hi, src - lo as f64)
    };
    let cols: Vec<_> = (0..on).map(|j| taps(j, sx, n)).collect();
    Array2::from_shape_fn((om, on), |(i, j)| {
        let (y0, y1, fy) = taps(i, sy, m);
        let (x0, x1, fx) = cols[j];
        let top = img[[y0, x0]] * (1.0 - fx) + img[[y0, x1]] * fx;
        let bottom = img[[y1, x0]] * (1.0 - fx) + img[[y1, x1]] * fx;
        top * (1.0 - fy) + bottom * fy
    })
}

/// Blends a border band of one kernel half-size with the circularly blurred
/// image so the frame is consistent with periodic boundaries. Pixels at least
/// a half-size away from every edge are returned unchanged.
pub fn edge_taper(img: &Plane, k: &Kernel) -> Result<Plane> {
    let (m, n) = img.dim();
    let (hh, hw) = (k.half_height(), k.half_width());
    if hh == 0 && hw == 0 {
        return Ok(img.clone());
    }
    let blurred = convolve(img, k, Boundary::Circular)?;
    let ramp = |d: usize, half: usize| {
        if d >= half {
            1.0
        } else {
            (d + 1) as f64 / (half + 1) as f64
        }
    };
    let mut out = img.clone();
    for i in 0..m {
        let wy = ramp(i.min(m - 1 - i), hh);
        for j in 0..n {
            let w = wy.min(ramp(j.min(n - 1 - j), hw));
            if w < 1.0 {
                out[[i, j]] = w * img[[i, j]] + (1.0 - w) * blurred[[i, j]];
            }
        }
    }
    Ok(out)
}
