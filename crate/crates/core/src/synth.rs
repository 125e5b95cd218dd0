//! Synthetic blur kernels, test scenes and blurred samples.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{DeblurError, Result};
use crate::image::{Image, Kernel, Plane};
use crate::ops::{convolve_spatial, Boundary};

fn odd_size(size: usize) -> Result<()> {
    if size % 2 == 0 || size == 0 {
        return Err(DeblurError::EvenKernel(size, size));
    }
    Ok(())
}

/// Isotropic Gaussian kernel sampled on a `size x size` grid.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Result<Kernel> {
    odd_size(size)?;
    if !(sigma > 0.0) {
        return Err(DeblurError::InvalidArgument("sigma must be positive".into()));
    }
    let c = (size / 2) as f64;
    let raw = Array2::from_shape_fn((size, size), |(i, j)| {
        let d2 = (i as f64 - c).powi(2) + (j as f64 - c).powi(2);
        (-d2 / (2.0 * sigma * sigma)).exp()
    });
    Kernel::new(&raw / raw.sum())
}

fn splat(grid: &mut Array2<f64>, y: f64, x: f64, w: f64) {
    let (m, n) = grid.dim();
    let (y0, x0) = (y.floor(), x.floor());
    let (fy, fx) = (y - y0, x - x0);
    for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
        for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
            let (yi, xi) = (y0 as isize + dy, x0 as isize + dx);
            if yi >= 0 && xi >= 0 && (yi as usize) < m && (xi as usize) < n {
                grid[[yi as usize, xi as usize]] += w * wy * wx;
            }
        }
    }
}

/// Random camera-shake kernel: a random-walk trajectory with smoothly
/// drifting heading, scaled to fill 60-100% of the support, rasterized
/// with bilinear splats, lightly Gaussian smoothed, centred on its centroid
/// and normalized.
pub fn motion_kernel<R: Rng + ?Sized>(size: usize, rng: &mut R) -> Result<Kernel> {
    odd_size(size)?;
    if size < 3 {
        return Ok(Kernel::delta(size)?);
    }
    let steps = 8 * size;
    let turn = Normal::new(0.0, 0.35).expect("valid sigma");
    let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let mut curvature = 0.0;
    let mut path = Vec::with_capacity(steps);
    let (mut y, mut x) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        path.push((y, x));
        curvature = 0.7 * curvature + turn.sample(rng);
        heading += curvature;
        let speed = rng.random_range(0.3..1.0);
        y += speed * heading.sin();
        x += speed * heading.cos();
    }
    let cy = path.iter().map(|p| p.0).sum::<f64>() / steps as f64;
    let cx = path.iter().map(|p| p.1).sum::<f64>() / steps as f64;
    let reach = path
        .iter()
        .map(|&(py, px)| (py - cy).abs().max((px - cx).abs()))
        .fold(0.0f64, f64::max)
        .max(1e-9);
    let half = (size / 2) as f64;
    let fill = rng.random_range(0.6..1.0);
    let scale = fill * (half - 0.5) / reach;
    let mut grid = Array2::zeros((size, size));
    for &(py, px) in &path {
        splat(&mut grid, half + (py - cy) * scale, half + (px - cx) * scale, 1.0);
    }
    let smooth = gaussian_kernel(3, 0.5)?;
    let smoothed = convolve_spatial(&grid, &smooth, Boundary::ReplicatePad)?;
    Kernel::new(&smoothed / smoothed.sum())?.centred()
}

fn paint_bar(img: &mut Plane, yc: f64, xc: f64, angle: f64, len: f64, width: f64, level: f64) {
    let (s, c) = angle.sin_cos();
    let (m, n) = img.dim();
    let reach = len + width + 1.0;
    let rows = ((yc - reach).floor().max(0.0) as usize)..((yc + reach).ceil().max(0.0) as usize).min(m);
    let cols = ((xc - reach).floor().max(0.0) as usize)..((xc + reach).ceil().max(0.0) as usize).min(n);
    for i in rows {
        for j in cols.clone() {
            let (dy, dx) = (i as f64 - yc, j as f64 - xc);
            if (dy * c - dx * s).abs() < width && (dy * s + dx * c).abs() < len {
                img[[i, j]] = level;
            }
        }
    }
}

/// Piecewise-smooth test scene: a shaded background with overlapping
/// rectangles, discs and bars, plus scattered thin dark strokes and gaps.
/// Like natural photographs, most small patches then contain a near-black
/// pixel.
pub fn scene<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Plane {
    let (gy, gx) = (rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
    let base = rng.random_range(0.35..0.65);
    let mut img = Array2::from_shape_fn((m, n), |(i, j)| {
        base + gy * (i as f64 / m as f64 - 0.5) + gx * (j as f64 / n as f64 - 0.5)
    });
    let (mf, nf) = (m as f64, n as f64);
    let shapes = rng.random_range(10..18);
    for _ in 0..shapes {
        let level = if rng.random_bool(0.25) {
            rng.random_range(0.0..0.04)
        } else {
            rng.random_range(0.15..0.95)
        };
        let (yc, xc) = (rng.random_range(0.0..mf), rng.random_range(0.0..nf));
        let (ry, rx) = (rng.random_range(0.05..0.25) * mf, rng.random_range(0.05..0.25) * nf);
        match rng.random_range(0..3) {
            0 => {
                for ((i, j), v) in img.indexed_iter_mut() {
                    if (i as f64 - yc).abs() < ry && (j as f64 - xc).abs() < rx {
                        *v = level;
                    }
                }
            }
            1 => {
                for ((i, j), v) in img.indexed_iter_mut() {
                    if ((i as f64 - yc) / ry).powi(2) + ((j as f64 - xc) / rx).powi(2) < 1.0 {
                        *v = level;
                    }
                }
            }
            _ => {
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let width = rng.random_range(1.0..3.5);
                paint_bar(&mut img, yc, xc, angle, ry.max(rx) * 1.5, width, level);
            }
        }
    }
    // thin dark strokes and pinholes
    let strokes = (m * n) / 150;
    for _ in 0..strokes {
        let (yc, xc) = (rng.random_range(0.0..mf), rng.random_range(0.0..nf));
        let level = rng.random_range(0.0..0.03);
        if rng.random_bool(0.5) {
            let angle = rng.random_range(0.0..std::f64::consts::PI);
            paint_bar(&mut img, yc, xc, angle, rng.random_range(1.5..5.0), 0.6, level);
        } else {
            img[[yc as usize, xc as usize]] = level;
        }
    }
    img.mapv_inplace(|v| v.clamp(0.0, 1.0));
    img
}

/// Adds zero-mean Gaussian noise and clamps to `[0, 1]`.
pub fn add_noise<R: Rng + ?Sized>(img: &Plane, sigma: f64, rng: &mut R) -> Result<Plane> {
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| DeblurError::InvalidArgument(e.to_string()))?;
    Ok(img.mapv(|v| (v + normal.sample(rng)).clamp(0.0, 1.0)))
}

/// `k * clear + noise` with replicated borders.
pub fn blur_plane<R: Rng + ?Sized>(clear: &Plane, k: &Kernel, sigma: f64, rng: &mut R) -> Result<Plane> {
    let blurred = convolve_spatial(clear, k, Boundary::ReplicatePad)?;
    add_noise(&blurred, sigma, rng)
}

#[derive(Debug, Clone)]
pub struct Sample {
    pub id: String,
    pub clear: Plane,
    pub blurred: Plane,
    pub kernel: Kernel,
}

/// Blurs every channel of `clear` with the same kernel and adds noise.
pub fn blur_image<R: Rng + ?Sized>(clear: &Image, k: &Kernel, sigma: f64, rng: &mut R) -> Result<Image> {
    let planes = clear
        .planes()
        .iter()
        .map(|p| blur_plane(p, k, sigma, rng))
        .collect::<Result<Vec<_>>>()?;
    Image::from_planes(planes)
}

/// Where the blur kernels of a synthetic set come from.
#[derive(Debug, Clone, PartialEq)]
pub enum KernelSource {
    Motion,
    Gaussian { sigma: f64 },
    Fixed(Kernel),
}

impl KernelSource {
    pub fn draw<R: Rng + ?Sized>(&self, size: usize, rng: &mut R) -> Result<Kernel> {
        match self {
            KernelSource::Motion => motion_kernel(size, rng),
            KernelSource::Gaussian { sigma } => gaussian_kernel(size, *sigma),
            KernelSource::Fixed(k) => Ok(k.clone()),
        }
    }
}

/// A reproducible set of synthetic samples with random motion kernels.
/// Image sides and kernel sizes cycle through the given lists.
pub fn synthetic_set<R: Rng + ?Sized>(
    count: usize,
    sides: &[usize],
    kernel_sizes: &[usize],
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    synthetic_set_with(count, sides, kernel_sizes, &KernelSource::Motion, sigma, rng)
}

pub fn synthetic_set_with<R: Rng + ?Sized>(
    count: usize,
    sides: &[usize],
    kernel_sizes: &[usize],
    source: &KernelSource,
    sigma: f64,
    rng: &mut R,
) -> Result<Vec<Sample>> {
    if sides.is_empty() || kernel_sizes.is_empty() {
        return Err(DeblurError::Empty("synthesis size list"));
    }
    (0..count)
        .map(|i| {
            let side = sides[i % sides.len()];
            let ks = kernel_sizes[i % kernel_sizes.len()];
            let clear = scene(side, side, rng);
            let kernel = source.draw(ks, rng)?;
            let blurred = blur_plane(&clear, &kernel, sigma, rng)?;
            Ok(Sample {
                id: format!("syn{i:03}"),
                clear,
                blurred,
                kernel,
            })
        })
        .collect()
}
