//! Benchmark harness: datasets of (blurred, clear, kernel) triplets, paired
//! runs of several configurations, and CSV/JSON reporting.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::DeblurConfig;
use crate::error::{DeblurError, Result};
use crate::image::{Image, Kernel, Plane};
use crate::io::{read_image, read_kernel_text, write_image, write_kernel_text, BitDepth};
use crate::metrics::{cumulative_curve, psnr, ssim};
use crate::multiscale::deblur;
use crate::nonblind::{deconvolve_nonblind, NonblindParams};
use crate::ops::crop_border;
use crate::synth::Sample;

/// Error ratio at or below which a restoration counts as a success.
pub const SUCCESS_RATIO: f64 = 2.0;
pub const CURVE_THRESHOLDS: [f64; 7] = [1.0, 1.5, 2.0, 2.5, 3.0, 4.0, 5.0];

#[derive(Debug, Clone)]
pub struct DatasetSample {
    pub id: String,
    pub blurred: Image,
    pub clear: Image,
    pub kernel: Kernel,
}

impl From<&Sample> for DatasetSample {
    fn from(s: &Sample) -> Self {
        Self {
            id: s.id.clone(),
            blurred: Image::gray(s.blurred.clone()).expect("synthetic planes are finite"),
            clear: Image::gray(s.clear.clone()).expect("synthetic planes are finite"),
            kernel: s.kernel.clone(),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Dataset {
    #[serde(skip)]
    pub samples: Vec<DatasetSample>,
    /// Samples that could not be read, with the reason.
    pub skipped: Vec<(String, String)>,
}

/// Reads every `<id>_blurred.png` in `dir` together with `<id>_clear.png`
/// and `<id>_kernel.txt`. Unreadable samples are skipped with a warning.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let entries = fs::read_dir(dir).map_err(|source| DeblurError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut ids: Vec<String> = entries
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            e.file_name()
                .to_str()
                .and_then(|name| name.strip_suffix("_blurred.png"))
                .map(str::to_owned)
        })
        .collect();
    ids.sort();
    let mut dataset = Dataset::default();
    for id in ids {
        let load = || -> Result<DatasetSample> {
            Ok(DatasetSample {
                blurred: read_image(&dir.join(format!("{id}_blurred.png")))?,
                clear: read_image(&dir.join(format!("{id}_clear.png")))?,
                kernel: read_kernel_text(&dir.join(format!("{id}_kernel.txt")))?,
                id: id.clone(),
            })
        };
        match load() {
            Ok(sample) => dataset.samples.push(sample),
            Err(e) => {
                log::warn!("skipping sample {id}: {e}");
                dataset.skipped.push((id, e.to_string()));
            }
        }
    }
    Ok(dataset)
}

/// Writes samples in the layout read by [`load_dataset`], as 16-bit PNGs.
pub fn write_dataset(dir: &Path, samples: &[DatasetSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|source| DeblurError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    for s in samples {
        write_image(&dir.join(format!("{}_blurred.png", s.id)), &s.blurred, BitDepth::Sixteen)?;
        write_image(&dir.join(format!("{}_clear.png", s.id)), &s.clear, BitDepth::Sixteen)?;
        write_kernel_text(&dir.join(format!("{}_kernel.txt", s.id)), &s.kernel)?;
    }
    Ok(())
}

fn gray(img: &Image) -> Plane {
    if img.channels() == 3 {
        img.luminance()
    } else {
        img.plane(0).clone()
    }
}

/// Error ratio of `restored` against the restoration obtained from the
/// true kernel with the same non-blind method. Shifts of up to the true
/// kernel's half-size are searched.
pub fn error_ratio_against_truth(
    restored: &Plane,
    clear: &Plane,
    blurred: &Image,
    k_true: &Kernel,
    nonblind: &NonblindParams,
) -> Result<f64> {
    let reference = gray(&deconvolve_nonblind(blurred, k_true, nonblind)?);
    let shift = k_true.half_height().max(k_true.half_width());
    crate::metrics::error_ratio(restored, &reference, clear, shift)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchConfig {
    pub label: String,
    /// Declared kernel size; the sample's true kernel size when absent.
    pub kernel_size: Option<usize>,
    pub config: DeblurConfig,
}

impl BenchConfig {
    pub fn new(label: impl Into<String>, config: DeblurConfig) -> Self {
        Self {
            label: label.into(),
            kernel_size: None,
            config,
        }
    }

    fn resolved(&self, sample: &DatasetSample) -> DeblurConfig {
        let mut cfg = self.config.clone();
        cfg.kernel_size = self.kernel_size.unwrap_or_else(|| sample.kernel.height().max(sample.kernel.width()));
        cfg
    }
}

/// The three arms of a paired comparison: the proposed solver, the same
/// solver without the PMP term, and the splitting baseline.
pub fn comparison_configs(base: &DeblurConfig) -> Vec<BenchConfig> {
    use crate::config::Solver;
    vec![
        BenchConfig::new(
            "ours",
            DeblurConfig {
                solver: Solver::Pmp,
                pmp_enabled: true,
                ..base.clone()
            },
        ),
        BenchConfig::new(
            "ours-no-pmp",
            DeblurConfig {
                solver: Solver::Pmp,
                pmp_enabled: false,
                ..base.clone()
            },
        ),
        BenchConfig::new(
            "hqs",
            DeblurConfig {
                solver: Solver::Hqs,
                pmp_enabled: true,
                ..base.clone()
            },
        ),
    ]
}

pub fn patch_sweep(base: &DeblurConfig, coefs: &[f64]) -> Vec<BenchConfig> {
    coefs
        .iter()
        .map(|&c| {
            BenchConfig::new(
                format!("patch-{c}"),
                DeblurConfig {
                    patch_coef: c,
                    ..base.clone()
                },
            )
        })
        .collect()
}

pub fn kernel_size_sweep(base: &DeblurConfig, sizes: &[usize]) -> Vec<BenchConfig> {
    sizes
        .iter()
        .map(|&s| BenchConfig {
            label: format!("kernel-{s}"),
            kernel_size: Some(s),
            config: base.clone(),
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct EvalRecord {
    pub sample: String,
    pub config: String,
    pub solver: String,
    pub pmp: bool,
    pub kernel_size: usize,
    pub patch_coef: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub blurred_psnr: f64,
    pub error_ratio: f64,
    pub kernel_ssd: Option<f64>,
    pub seconds: f64,
}

/// Deblurs one sample and scores it. PSNR and SSIM skip a border of the
/// true kernel's half-size.
pub fn evaluate(sample: &DatasetSample, bench: &BenchConfig) -> Result<EvalRecord> {
    let cfg = bench.resolved(sample);
    let start = Instant::now();
    let out = deblur(&sample.blurred, &cfg)?;
    let seconds = start.elapsed().as_secs_f64();
    let restored = gray(&out.restored);
    let clear = gray(&sample.clear);
    let blurred = gray(&sample.blurred);
    let margin = sample.kernel.half_height().max(sample.kernel.half_width());
    let inner = |p: &Plane| crop_border(p, margin);
    let error_ratio = error_ratio_against_truth(&restored, &clear, &sample.blurred, &sample.kernel, &cfg.nonblind_params())?;
    Ok(EvalRecord {
        sample: sample.id.clone(),
        config: bench.label.clone(),
        solver: cfg.solver.to_string(),
        pmp: cfg.pmp_enabled,
        kernel_size: cfg.kernel_size,
        patch_coef: cfg.patch_coef,
        psnr: psnr(&inner(&restored)?, &inner(&clear)?)?,
        ssim: ssim(&inner(&restored)?, &inner(&clear)?)?,
        blurred_psnr: psnr(&inner(&blurred)?, &inner(&clear)?)?,
        error_ratio,
        kernel_ssd: out.kernel.ssd(&sample.kernel).ok(),
        seconds,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Summary {
    pub config: String,
    pub solver: String,
    pub samples: usize,
    pub failures: usize,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_blurred_psnr: f64,
    pub success_rate: f64,
    pub mean_seconds: f64,
    pub curve_thresholds: Vec<f64>,
    pub curve: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchReport {
    pub records: Vec<EvalRecord>,
    pub summaries: Vec<Summary>,
    /// `(sample, config, reason)` for runs that errored.
    pub failures: Vec<(String, String, String)>,
    pub skipped: Vec<(String, String)>,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

/// Runs every configuration on every sample. With `parallel` the runs are
/// spread over the rayon pool (wall times then include contention);
/// records come back ordered by sample id, then configuration order.
pub fn run_benchmark(dataset: &Dataset, configs: &[BenchConfig], parallel: bool) -> Result<BenchReport> {
    if configs.is_empty() {
        return Err(DeblurError::Empty("benchmark configuration list"));
    }
    if dataset.samples.is_empty() {
        return Err(DeblurError::Empty("dataset"));
    }
    for c in configs {
        c.config.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..dataset.samples.len())
        .flat_map(|s| (0..configs.len()).map(move |c| (s, c)))
        .collect();
    let run = |&(s, c): &(usize, usize)| ((s, c), evaluate(&dataset.samples[s], &configs[c]));
    let mut results: Vec<_> = if parallel {
        jobs.par_iter().map(run).collect()
    } else {
        jobs.iter().map(run).collect()
    };
    results.sort_by(|a, b| {
        let ka = (&dataset.samples[a.0 .0].id, a.0 .1);
        let kb = (&dataset.samples[b.0 .0].id, b.0 .1);
        ka.cmp(&kb)
    });
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for ((s, c), outcome) in results {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => {
                log::warn!("{} / {} failed: {e}", dataset.samples[s].id, configs[c].label);
                failures.push((dataset.samples[s].id.clone(), configs[c].label.clone(), e.to_string()));
            }
        }
    }
    let summaries = configs
        .iter()
        .map(|c| summarize(c, &records, &failures))
        .collect();
    Ok(BenchReport {
        records,
        summaries,
        failures,
        skipped: dataset.skipped.clone(),
    })
}

fn summarize(c: &BenchConfig, records: &[EvalRecord], failures: &[(String, String, String)]) -> Summary {
    let mine: Vec<&EvalRecord> = records.iter().filter(|r| r.config == c.label).collect();
    let ratios: Vec<f64> = mine.iter().map(|r| r.error_ratio).collect();
    Summary {
        config: c.label.clone(),
        solver: c.config.solver.to_string(),
        samples: mine.len(),
        failures: failures.iter().filter(|f| f.1 == c.label).count(),
        mean_psnr: mean(mine.iter().map(|r| r.psnr)),
        mean_ssim: mean(mine.iter().map(|r| r.ssim)),
        mean_blurred_psnr: mean(mine.iter().map(|r| r.blurred_psnr)),
        success_rate: cumulative_curve(&ratios, &[SUCCESS_RATIO])[0],
        mean_seconds: mean(mine.iter().map(|r| r.seconds)),
        curve_thresholds: CURVE_THRESHOLDS.to_vec(),
        curve: cumulative_curve(&ratios, &CURVE_THRESHOLDS),
    }
}

pub fn records_to_csv(records: &[EvalRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r).map_err(|e| DeblurError::InvalidArgument(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| DeblurError::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Writes `records.csv` and `summary.json` into `dir`.
pub fn write_report(dir: &Path, report: &BenchReport) -> Result<(PathBuf, PathBuf)> {
    let io_err = |path: &Path| {
        let path = path.to_path_buf();
        move |source| DeblurError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let csv_path = dir.join("records.csv");
    fs::write(&csv_path, records_to_csv(&report.records)?).map_err(io_err(&csv_path))?;
    let json_path = dir.join("summary.json");
    let json = serde_json::json!({
        "summaries": report.summaries,
        "failures": report.failures,
        "skipped": report.skipped,
    });
    fs::write(&json_path, serde_json::to_string_pretty(&json).expect("serializable"))
        .map_err(io_err(&json_path))?;
    Ok((csv_path, json_path))
}
