use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use pmpdeblur::bench::{
    comparison_configs, kernel_size_sweep, load_dataset, patch_sweep, run_benchmark, write_dataset, write_report,
    BenchConfig, DatasetSample,
};
use pmpdeblur::config::{DeblurConfig, Solver};
use pmpdeblur::io::{read_image, read_kernel_text, write_image, write_kernel_png, write_kernel_text, BitDepth};
use pmpdeblur::multiscale::{deblur, nearest_odd, LevelReport};
use pmpdeblur::pmp::{dark_channel, histogram_of, pmp_extract_image, HistogramReport, PatchRule};
use pmpdeblur::synth::{blur_image, synthetic_set_with, KernelSource};
use pmpdeblur::DeblurError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "pmpdeblur", version, about = "Blind deblurring with a patch-wise minimal pixel prior")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate the blur kernel of an image and restore it.
    Deblur {
        input: PathBuf,
        #[arg(short, long, default_value = "out")]
        output: PathBuf,
        /// Write the restored image as 16-bit PNG.
        #[arg(long)]
        sixteen_bit: bool,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Blur clear images (or generated scenes) into blurred/clear/kernel triplets.
    Synth {
        /// Clear images; synthetic scenes are generated when none are given.
        clear: Vec<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Number of generated scenes.
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Sides of the generated scenes, cycled.
        #[arg(long, value_delimiter = ',', default_value = "64,96,128,80")]
        sizes: Vec<usize>,
        /// Sizes of generated kernels, cycled.
        #[arg(long, value_delimiter = ',', default_value = "5,7,9")]
        kernel_sizes: Vec<usize>,
        /// Use this kernel file for every sample.
        #[arg(long, conflicts_with = "kernel_kind")]
        kernel: Option<PathBuf>,
        #[arg(long, value_enum)]
        kernel_kind: Option<KernelKind>,
        #[arg(long, default_value_t = 1.0)]
        gaussian_sigma: f64,
        #[arg(long, default_value_t = 0.01)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// PMP histograms of a corpus, optionally against blurred copies.
    Stats {
        /// Images or directories of PNG images.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 0.025)]
        patch_coef: f64,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        /// Blur every input with this kernel file for the second histogram.
        #[arg(long)]
        blur_with: Option<PathBuf>,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        /// Add dark-channel histograms for comparison.
        #[arg(long)]
        dark_channel: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// CSV destination (a JSON run report is written next to it);
        /// printed to stdout when absent.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Run one configuration, or a sweep, over a dataset directory.
    Bench {
        dataset: PathBuf,
        #[arg(short, long, default_value = "bench")]
        output: PathBuf,
        #[arg(long, value_delimiter = ',')]
        sweep_patch: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        sweep_kernel: Vec<usize>,
        /// Run samples one at a time so timings are not contended.
        #[arg(long)]
        serial: bool,
        #[command(flatten)]
        opts: ConfigArgs,
    },
    /// Compare the proposed solver, its no-PMP ablation and the splitting
    /// baseline, plus a kernel-size sweep of the proposed solver.
    Compare {
        dataset: PathBuf,
        #[arg(short, long, default_value = "compare")]
        output: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "7,9,11,13,15")]
        sweep_kernel: Vec<usize>,
        #[arg(long)]
        no_kernel_sweep: bool,
        #[arg(long)]
        serial: bool,
        #[command(flatten)]
        opts: ConfigArgs,
    },
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum KernelKind {
    Motion,
    Gaussian,
}

#[derive(Args)]
struct ConfigArgs {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    kernel_size: Option<usize>,
    #[arg(long)]
    patch_coef: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_parser = parse_solver)]
    solver: Option<Solver>,
    /// Drop the PMP term (ablation).
    #[arg(long)]
    no_pmp: bool,
    #[arg(long)]
    seed: Option<u64>,
}

fn parse_solver(s: &str) -> Result<Solver, String> {
    match s {
        "pmp" => Ok(Solver::Pmp),
        "hqs" => Ok(Solver::Hqs),
        other => Err(format!("unknown solver '{other}', expected pmp or hqs")),
    }
}

/// Failures split by exit code: 1 for bad invocations and unusable input,
/// 2 for everything that goes wrong while running.
enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

/// Unreadable or incompatible input counts as a usage error.
fn classify(e: DeblurError) -> Failure {
    match e {
        DeblurError::Io { .. }
        | DeblurError::Codec { .. }
        | DeblurError::Parse { .. }
        | DeblurError::ImageTooSmall(_)
        | DeblurError::KernelTooLarge { .. }
        | DeblurError::EvenKernel(..)
        | DeblurError::Empty(_) => Failure::Usage(e.into()),
        other => Failure::Runtime(other.into()),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<DeblurConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => DeblurConfig::load(path).map_err(usage)?,
            None => DeblurConfig::default(),
        };
        if let Some(v) = self.kernel_size {
            if v % 2 == 0 {
                return Err(usage(anyhow!(
                    "kernel size must be odd, got {v} (try {} or {})",
                    v.saturating_sub(1).max(1),
                    v + 1
                )));
            }
            cfg.kernel_size = v;
        }
        if let Some(v) = self.patch_coef {
            cfg.patch_coef = v;
        }
        if let Some(v) = self.mu {
            cfg.mu = v;
        }
        if let Some(v) = self.gamma {
            cfg.gamma = v;
        }
        if let Some(v) = self.solver {
            cfg.solver = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.no_pmp {
            cfg.pmp_enabled = false;
        }
        cfg.validate().map_err(usage)?;
        Ok(cfg)
    }
}

fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(Failure::Usage)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let json = serde_json::to_string_pretty(value).context("serializing report")?;
    fs::write(path, json).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

#[derive(Serialize)]
struct DeblurReport<'a> {
    version: &'static str,
    input: String,
    input_sha256: String,
    rows: usize,
    cols: usize,
    channels: usize,
    config: &'a DeblurConfig,
    blind_seconds: f64,
    nonblind_seconds: f64,
    levels: &'a [LevelReport],
    final_beta: f64,
    final_lambda: f64,
}

fn run_deblur(input: &Path, output: &Path, sixteen_bit: bool, opts: &ConfigArgs) -> Result<(), Failure> {
    if opts.kernel_size.is_none() && opts.config.is_none() {
        return Err(usage(anyhow!("--kernel-size is required (an odd number of pixels, e.g. 25)")));
    }
    let cfg = opts.resolve()?;
    let input_sha256 = sha256_file(input)?;
    let blurred = read_image(input).map_err(classify)?;
    let out = deblur(&blurred, &cfg).map_err(classify)?;
    ensure_dir(output)?;
    let depth = if sixteen_bit { BitDepth::Sixteen } else { BitDepth::Eight };
    write_image(&output.join("restored.png"), &out.restored, depth).map_err(anyhow::Error::from)?;
    write_kernel_text(&output.join("kernel.txt"), &out.kernel).map_err(anyhow::Error::from)?;
    write_kernel_png(&output.join("kernel.png"), &out.kernel).map_err(anyhow::Error::from)?;
    let last = out.blind.levels.last().expect("at least one level");
    let report = DeblurReport {
        version: VERSION,
        input: input.display().to_string(),
        input_sha256,
        rows: blurred.height(),
        cols: blurred.width(),
        channels: blurred.channels(),
        config: &cfg,
        blind_seconds: out.blind_seconds,
        nonblind_seconds: out.nonblind_seconds,
        levels: &out.blind.levels,
        final_beta: last.final_beta,
        final_lambda: last.final_lambda,
    };
    write_json(&output.join("report.json"), &report)?;
    log::info!("wrote results to {}", output.display());
    Ok(())
}

#[derive(Serialize)]
struct SampleProvenance {
    id: String,
    clear_source: Option<String>,
    clear_sha256: Option<String>,
    kernel_size: usize,
}

#[derive(Serialize)]
struct SynthProvenance {
    version: &'static str,
    seed: u64,
    noise_sigma: f64,
    kernel_source: String,
    samples: Vec<SampleProvenance>,
}

struct SynthArgs<'a> {
    clear: &'a [PathBuf],
    output: &'a Path,
    count: usize,
    sizes: &'a [usize],
    kernel_sizes: &'a [usize],
    kernel: Option<&'a Path>,
    kernel_kind: Option<KernelKind>,
    gaussian_sigma: f64,
    noise_sigma: f64,
    seed: u64,
}

fn run_synth(a: SynthArgs) -> Result<(), Failure> {
    if !(a.noise_sigma >= 0.0) {
        return Err(usage(anyhow!("noise sigma must be non-negative")));
    }
    let (source, described) = match (a.kernel, a.kernel_kind.unwrap_or(KernelKind::Motion)) {
        (Some(path), _) => (
            KernelSource::Fixed(read_kernel_text(path).map_err(classify)?),
            format!("file {}", path.display()),
        ),
        (None, KernelKind::Motion) => (KernelSource::Motion, "motion".to_string()),
        (None, KernelKind::Gaussian) => (
            KernelSource::Gaussian { sigma: a.gaussian_sigma },
            format!("gaussian sigma {}", a.gaussian_sigma),
        ),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut samples = Vec::new();
    let mut provenance = Vec::new();
    if a.clear.is_empty() {
        let set = synthetic_set_with(a.count, a.sizes, a.kernel_sizes, &source, a.noise_sigma, &mut rng).map_err(classify)?;
        for s in &set {
            provenance.push(SampleProvenance {
                id: s.id.clone(),
                clear_source: None,
                clear_sha256: None,
                kernel_size: s.kernel.height(),
            });
            samples.push(DatasetSample::from(s));
        }
    } else {
        if a.kernel_sizes.is_empty() {
            return Err(usage(anyhow!("need at least one kernel size")));
        }
        for (i, path) in a.clear.iter().enumerate() {
            let clear = read_image(path).map_err(classify)?;
            let kernel = source.draw(a.kernel_sizes[i % a.kernel_sizes.len()], &mut rng).map_err(classify)?;
            let blurred = blur_image(&clear, &kernel, a.noise_sigma, &mut rng).map_err(classify)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("sample");
            let id = format!("{stem}{i:03}");
            provenance.push(SampleProvenance {
                id: id.clone(),
                clear_source: Some(path.display().to_string()),
                clear_sha256: Some(sha256_file(path)?),
                kernel_size: kernel.height(),
            });
            samples.push(DatasetSample { id, blurred, clear, kernel });
        }
    }
    write_dataset(a.output, &samples).map_err(anyhow::Error::from)?;
    let report = SynthProvenance {
        version: VERSION,
        seed: a.seed,
        noise_sigma: a.noise_sigma,
        kernel_source: described,
        samples: provenance,
    };
    write_json(&a.output.join("provenance.json"), &report)?;
    println!("wrote {} samples to {}", samples.len(), a.output.display());
    Ok(())
}

/// Expands directories into the PNG files they contain, sorted by name.
fn expand_corpus(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, Failure> {
    let mut files = Vec::new();
    for path in inputs {
        if path.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(path)
                .with_context(|| format!("listing {}", path.display()))
                .map_err(Failure::Usage)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(path.clone());
        }
    }
    if files.is_empty() {
        return Err(usage(anyhow!("the corpus contains no images")));
    }
    Ok(files)
}

#[derive(Serialize)]
struct StatsReport<'a> {
    version: &'static str,
    inputs: Vec<(String, String)>,
    patch_coef: f64,
    bins: usize,
    blur_with: Option<String>,
    noise_sigma: f64,
    seed: u64,
    histograms: &'a HistogramReport,
}

struct StatsArgs<'a> {
    inputs: &'a [PathBuf],
    patch_coef: f64,
    bins: usize,
    blur_with: Option<&'a Path>,
    noise_sigma: f64,
    dark_channel: bool,
    seed: u64,
    output: Option<&'a Path>,
}

fn run_stats(a: StatsArgs) -> Result<(), Failure> {
    if !(a.patch_coef > 0.0) || a.bins == 0 || !(a.noise_sigma >= 0.0) {
        return Err(usage(anyhow!(
            "patch coefficient must be positive, bins at least 1 and noise sigma non-negative"
        )));
    }
    let files = expand_corpus(a.inputs)?;
    let kernel = a.blur_with.map(read_kernel_text).transpose().map_err(classify)?;
    let rule = PatchRule::Relative(a.patch_coef);
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut values: [Vec<f64>; 4] = Default::default();
    let mut hashes = Vec::new();
    for path in &files {
        hashes.push((path.display().to_string(), sha256_file(path)?));
        let clear = read_image(path).map_err(classify)?;
        let r = rule.patch_size(clear.height(), clear.width());
        let window = nearest_odd(r as f64);
        let mut collect = |img: &pmpdeblur::Image, pmp: usize, dark: usize| -> Result<(), Failure> {
            values[pmp].extend(pmp_extract_image(img, r).map_err(classify)?.values);
            if a.dark_channel {
                values[dark].extend(dark_channel(img, window).map_err(classify)?.iter().copied());
            }
            Ok(())
        };
        collect(&clear, 0, 2)?;
        if let Some(k) = &kernel {
            let blurred = blur_image(&clear, k, a.noise_sigma, &mut rng).map_err(classify)?;
            collect(&blurred, 1, 3)?;
        }
    }
    let blurred = kernel.is_some();
    let report = HistogramReport {
        clear: histogram_of(&values[0], a.bins),
        blurred: blurred.then(|| histogram_of(&values[1], a.bins)),
        dark_clear: a.dark_channel.then(|| histogram_of(&values[2], a.bins)),
        dark_blurred: (a.dark_channel && blurred).then(|| histogram_of(&values[3], a.bins)),
    };
    let csv = report.to_csv();
    match a.output {
        Some(path) => {
            fs::write(path, &csv).with_context(|| format!("writing {}", path.display()))?;
            let run = StatsReport {
                version: VERSION,
                inputs: hashes,
                patch_coef: a.patch_coef,
                bins: a.bins,
                blur_with: a.blur_with.map(|p| p.display().to_string()),
                noise_sigma: a.noise_sigma,
                seed: a.seed,
                histograms: &report,
            };
            write_json(&path.with_extension("json"), &run)?;
        }
        None => print!("{csv}"),
    }
    eprintln!(
        "clear: {} values, {:.1}% below 0.05",
        report.clear.count,
        100.0 * report.clear.sparsity
    );
    if let Some(b) = &report.blurred {
        eprintln!("blurred: {} values, {:.1}% below 0.05", b.count, 100.0 * b.sparsity);
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchRun<'a> {
    version: &'static str,
    dataset: String,
    samples: Vec<(String, String)>,
    configs: &'a [BenchConfig],
}

fn run_bench(dataset: &Path, output: &Path, configs: Vec<BenchConfig>, serial: bool) -> Result<(), Failure> {
    let data = load_dataset(dataset).map_err(classify)?;
    if data.samples.is_empty() {
        return Err(usage(anyhow!("no readable samples in {}", dataset.display())));
    }
    let mut samples = Vec::new();
    for s in &data.samples {
        let mut h = Sha256::new();
        for suffix in ["blurred.png", "clear.png", "kernel.txt"] {
            let path = dataset.join(format!("{}_{suffix}", s.id));
            h.update(fs::read(&path).with_context(|| format!("reading {}", path.display()))?);
        }
        samples.push((s.id.clone(), hex::encode(h.finalize())));
    }
    let report = run_benchmark(&data, &configs, !serial).map_err(classify)?;
    let (csv, json) = write_report(output, &report).map_err(anyhow::Error::from)?;
    write_json(
        &output.join("run.json"),
        &BenchRun {
            version: VERSION,
            dataset: dataset.display().to_string(),
            samples,
            configs: &configs,
        },
    )?;
    println!("{:<16} {:>8} {:>8} {:>8} {:>9} {:>8}", "config", "psnr", "ssim", "blurred", "success", "seconds");
    for s in &report.summaries {
        println!(
            "{:<16} {:>8.2} {:>8.4} {:>8.2} {:>8.0}% {:>8.2}",
            s.config,
            s.mean_psnr,
            s.mean_ssim,
            s.mean_blurred_psnr,
            100.0 * s.success_rate,
            s.mean_seconds
        );
    }
    if !report.failures.is_empty() || !report.skipped.is_empty() {
        eprintln!("{} failed runs, {} skipped samples", report.failures.len(), report.skipped.len());
    }
    println!("wrote {} and {}", csv.display(), json.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Cmd::Deblur {
            input,
            output,
            sixteen_bit,
            opts,
        } => run_deblur(&input, &output, sixteen_bit, &opts),
        Cmd::Synth {
            clear,
            output,
            count,
            sizes,
            kernel_sizes,
            kernel,
            kernel_kind,
            gaussian_sigma,
            noise_sigma,
            seed,
        } => run_synth(SynthArgs {
            clear: &clear,
            output: &output,
            count,
            sizes: &sizes,
            kernel_sizes: &kernel_sizes,
            kernel: kernel.as_deref(),
            kernel_kind,
            gaussian_sigma,
            noise_sigma,
            seed,
        }),
        Cmd::Stats {
            inputs,
            patch_coef,
            bins,
            blur_with,
            noise_sigma,
            dark_channel,
            seed,
            output,
        } => run_stats(StatsArgs {
            inputs: &inputs,
            patch_coef,
            bins,
            blur_with: blur_with.as_deref(),
            noise_sigma,
            dark_channel,
            seed,
            output: output.as_deref(),
        }),
        Cmd::Bench {
            dataset,
            output,
            sweep_patch,
            sweep_kernel,
            serial,
            opts,
        } => {
            let cfg = opts.resolve()?;
            let mut configs = Vec::new();
            if !sweep_patch.is_empty() {
                configs.extend(patch_sweep(&cfg, &sweep_patch));
            }
            if !sweep_kernel.is_empty() {
                configs.extend(kernel_size_sweep(&cfg, &sweep_kernel));
            }
            if configs.is_empty() {
                let mut single = BenchConfig::new(cfg.solver.to_string(), cfg.clone());
                // an explicit --kernel-size applies to every sample
                single.kernel_size = opts.kernel_size;
                configs.push(single);
            }
            for c in &configs {
                c.config.validate().map_err(usage)?;
            }
            run_bench(&dataset, &output, configs, serial)
        }
        Cmd::Compare {
            dataset,
            output,
            sweep_kernel,
            no_kernel_sweep,
            serial,
            opts,
        } => {
            let cfg = opts.resolve()?;
            let mut configs = comparison_configs(&cfg);
            if !no_kernel_sweep {
                configs.extend(kernel_size_sweep(&configs[0].config, &sweep_kernel));
            }
            run_bench(&dataset, &output, configs, serial)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
