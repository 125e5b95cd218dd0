//! Coarse-to-fine blind kernel estimation and the full deblurring pipeline.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::DeblurConfig;
use crate::error::{DeblurError, Result};
use crate::image::{Image, Kernel, Plane};
use crate::kernel_est::{estimate_kernel_single_scale, refine_kernel};
use crate::latent::ThresholdMode;
use crate::nonblind::deconvolve_nonblind;
use crate::ops::{edge_taper, resample, resize};

/// Rounds to the nearest odd integer, ties going up.
pub fn nearest_odd(x: f64) -> usize {
    let half = ((x - 1.0) / 2.0).round().max(0.0);
    2 * half as usize + 1
}

#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub blurred: Plane,
    /// Resolution relative to the input.
    pub scale: f64,
    pub kernel_size: usize,
    pub patch_size: usize,
    pub mode: ThresholdMode,
}

/// Builds the pyramid from coarsest to finest. Each coarser image is a
/// bilinear resample of the next finer one.
pub fn build_pyramid(blurred: &Plane, cfg: &DeblurConfig) -> Result<Vec<PyramidLevel>> {
    cfg.validate()?;
    let (m, n) = blurred.dim();
    if 2 * cfg.kernel_size > m.min(n) {
        return Err(DeblurError::ImageTooSmall(format!(
            "kernel size {} needs an image of at least {}x{}, got {m}x{n}",
            cfg.kernel_size,
            2 * cfg.kernel_size,
            2 * cfg.kernel_size
        )));
    }
    let rule = cfg.patch_rule();
    let mut levels = Vec::new();
    let mut image = blurred.clone();
    let mut scale = 1.0;
    loop {
        let raw = cfg.kernel_size as f64 * scale;
        if raw < 3.0 && !levels.is_empty() {
            break;
        }
        let kernel_size = nearest_odd(raw).max(3).min(cfg.kernel_size);
        let (lm, ln) = image.dim();
        if kernel_size > lm.min(ln) {
            break;
        }
        levels.push(PyramidLevel {
            patch_size: rule.patch_size(lm, ln),
            blurred: image.clone(),
            scale,
            kernel_size,
            mode: ThresholdMode::Hard,
        });
        scale *= cfg.scale_step;
        match resample(&image, cfg.scale_step) {
            Ok(next) => image = next,
            Err(_) => break,
        }
    }
    levels.reverse();
    // the finest level always thresholds hard
    let soft = cfg.soft_scales.min(levels.len() - 1);
    for level in levels.iter_mut().take(soft) {
        level.mode = ThresholdMode::Soft;
    }
    Ok(levels)
}

/// Bilinear resize of a kernel followed by refinement.
pub fn upsample_kernel(k: &Kernel, size: usize) -> Result<Kernel> {
    if size % 2 == 0 {
        return Err(DeblurError::EvenKernel(size, size));
    }
    if size < k.height() || size < k.width() {
        return Err(DeblurError::InvalidArgument(format!(
            "cannot upsample a {}x{} kernel to {size}x{size}",
            k.height(),
            k.width()
        )));
    }
    if size == k.height() && size == k.width() {
        return refine_kernel(k.data());
    }
    refine_kernel(&resize(k.data(), size, size)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelReport {
    pub rows: usize,
    pub cols: usize,
    pub kernel_size: usize,
    pub patch_size: usize,
    pub mode: ThresholdMode,
    pub seconds: f64,
    pub outer_iterations: usize,
    pub final_beta: f64,
    pub final_lambda: f64,
}

#[derive(Debug, Clone)]
pub struct BlindResult {
    pub kernel: Kernel,
    /// Interim latent image of the finest level.
    pub latent: Plane,
    pub levels: Vec<LevelReport>,
}

fn working_plane(img: &Image) -> Plane {
    if img.channels() == 3 {
        img.luminance()
    } else {
        img.plane(0).clone()
    }
}

/// Estimates the blur kernel coarse-to-fine on the luminance of `blurred`.
pub fn blind_deblur(blurred: &Image, cfg: &DeblurConfig) -> Result<BlindResult> {
    let pyramid = build_pyramid(&working_plane(blurred), cfg)?;
    let coarsest = pyramid[0].kernel_size;
    let mut kernel = Kernel::uniform(3)?.padded_to(coarsest)?;
    let kparams = cfg.kernel_params();
    let mut reports = Vec::with_capacity(pyramid.len());
    let mut latent = None;
    for (idx, level) in pyramid.iter().enumerate() {
        let start = Instant::now();
        if kernel.height() != level.kernel_size {
            kernel = upsample_kernel(&kernel, level.kernel_size)?;
        }
        let input = if cfg.taper {
            edge_taper(&level.blurred, &kernel)?
        } else {
            level.blurred.clone()
        };
        let method = cfg.latent_method(level.patch_size, level.mode);
        let result = estimate_kernel_single_scale(&input, &kernel, &method, &kparams).map_err(|e| {
            log::error!(
                "kernel estimation failed at level {idx} ({}x{}, kernel {}): {e}",
                level.blurred.nrows(),
                level.blurred.ncols(),
                level.kernel_size
            );
            e
        })?;
        let trace = result.traces.last().copied().expect("max_iter >= 1");
        let report = LevelReport {
            rows: level.blurred.nrows(),
            cols: level.blurred.ncols(),
            kernel_size: level.kernel_size,
            patch_size: level.patch_size,
            mode: level.mode,
            seconds: start.elapsed().as_secs_f64(),
            outer_iterations: trace.outer_iterations,
            final_beta: trace.final_beta,
            final_lambda: trace.final_lambda,
        };
        log::info!(
            "level {idx}: {}x{} kernel {} patch {} in {:.2}s",
            report.rows,
            report.cols,
            report.kernel_size,
            report.patch_size,
            report.seconds
        );
        reports.push(report);
        kernel = result.kernel;
        latent = Some(result.latent);
    }
    Ok(BlindResult {
        kernel: kernel.centred()?,
        latent: latent.expect("pyramid has at least one level"),
        levels: reports,
    })
}

#[derive(Debug, Clone)]
pub struct DeblurOutput {
    pub kernel: Kernel,
    pub restored: Image,
    pub blind: BlindResult,
    pub blind_seconds: f64,
    pub nonblind_seconds: f64,
}

/// Kernel estimation followed by non-blind restoration of every channel.
pub fn deblur(blurred: &Image, cfg: &DeblurConfig) -> Result<DeblurOutput> {
    let start = Instant::now();
    let blind = blind_deblur(blurred, cfg)?;
    let blind_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let restored = deconvolve_nonblind(blurred, &blind.kernel, &cfg.nonblind_params())?;
    Ok(DeblurOutput {
        kernel: blind.kernel.clone(),
        restored,
        blind,
        blind_seconds,
        nonblind_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn cfg(kernel_size: usize) -> DeblurConfig {
        DeblurConfig {
            kernel_size,
            ..DeblurConfig::default()
        }
    }

    #[test]
    fn nearest_odd_rule() {
        assert_eq!(nearest_odd(17.68), 17);
        assert_eq!(nearest_odd(12.5), 13);
        assert_eq!(nearest_odd(4.42), 5);
        assert_eq!(nearest_odd(3.0), 3);
        assert_eq!(nearest_odd(2.0), 3);
    }

    #[test]
    fn kernel_sizes_for_25_on_255() {
        let b = Array2::from_elem((255, 255), 0.5);
        let sizes: Vec<usize> = build_pyramid(&b, &cfg(25))
            .unwrap()
            .iter()
            .rev()
            .map(|l| l.kernel_size)
            .collect();
        assert_eq!(sizes, vec![25, 17, 13, 9, 7, 5, 3]);
    }

    #[test]
    fn smallest_kernel_is_single_level() {
        let b = Array2::from_elem((20, 20), 0.5);
        let p = build_pyramid(&b, &cfg(3)).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p[0].kernel_size, 3);
    }

    #[test]
    fn constant_image_stays_constant_and_modes_are_scheduled() {
        let b = Array2::from_elem((64, 48), 0.3);
        let p = build_pyramid(
            &b,
            &DeblurConfig {
                soft_scales: 2,
                ..cfg(9)
            },
        )
        .unwrap();
        for level in &p {
            assert!(level.blurred.iter().all(|&v| (v - 0.3).abs() < 1e-12));
            assert!(level.patch_size >= 1);
        }
        assert_eq!(p[0].mode, ThresholdMode::Soft);
        assert_eq!(p[1].mode, ThresholdMode::Soft);
        assert_eq!(p.last().unwrap().mode, ThresholdMode::Hard);
        assert_eq!(p.last().unwrap().blurred.dim(), (64, 48));
    }

    #[test]
    fn too_small_image_is_rejected() {
        let b = Array2::from_elem((30, 30), 0.3);
        assert!(build_pyramid(&b, &cfg(17)).is_err());
    }

    #[test]
    fn upsample_rules() {
        let u = Kernel::uniform(3).unwrap();
        assert_eq!(upsample_kernel(&u, 3).unwrap(), u);
        let d = upsample_kernel(&Kernel::delta(3).unwrap(), 5).unwrap();
        assert!(d.is_normalized());
        let profile = [0.0, 0.4, 1.0, 0.4, 0.0];
        for ((i, j), &v) in d.data().indexed_iter() {
            assert!((v - profile[i] * profile[j] / 3.24).abs() < 1e-12);
        }
        let inner: f64 = d.data().slice(ndarray::s![1..4, 1..4]).sum();
        assert!(inner > 0.5);
        assert!(upsample_kernel(&u, 1).is_err());
    }
}
