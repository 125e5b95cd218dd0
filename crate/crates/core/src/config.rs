//! Pipeline configuration. Every field has a key in the TOML config file
//! and a default; absent keys take the default.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{DeblurError, Result};
use crate::hqs::HqsParams;
use crate::kernel_est::{KernelParams, LatentMethod};
use crate::latent::{LatentParams, ThresholdMode};
use crate::nonblind::NonblindParams;
use crate::pmp::PatchRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    #[default]
    Pmp,
    Hqs,
}

impl std::fmt::Display for Solver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Solver::Pmp => "pmp",
            Solver::Hqs => "hqs",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeblurConfig {
    /// Finest-level kernel size (odd).
    pub kernel_size: usize,
    /// Gradient L0 weight.
    pub mu: f64,
    /// Kernel ridge weight.
    pub gamma: f64,
    /// Continuation growth factor shared by every penalty schedule.
    pub growth: f64,
    /// Inner iterations per continuation step of the latent solver.
    pub inner_iters: usize,
    /// Initial gradient penalty; `2 * mu` when absent.
    pub beta0: Option<f64>,
    pub beta_max: f64,
    pub lambda0: f64,
    pub lambda_decay: f64,
    /// Latent/kernel alternations per pyramid level.
    pub max_iter: usize,
    /// Patch size is `patch_coef * mean(m, n)` at each level, at least 1.
    pub patch_coef: f64,
    pub scale_step: f64,
    /// Number of coarsest levels that use soft PMP thresholding.
    pub soft_scales: usize,
    pub pmp_enabled: bool,
    pub solver: Solver,
    pub prune_kernel: bool,
    pub taper: bool,
    /// PMP L0 weight of the splitting solver; `mu` when absent.
    pub hqs_alpha: Option<f64>,
    /// Initial coupling weight of the splitting solver; `hqs_alpha` when absent.
    pub hqs_rho0: Option<f64>,
    pub hqs_rho_max: f64,
    pub hqs_split_iters: usize,
    pub hqs_cg_iters: usize,
    pub nonblind_alpha: f64,
    pub nonblind_weight: f64,
    pub nonblind_iters: usize,
    pub nonblind_beta0: f64,
    pub nonblind_growth: f64,
    /// Seed for anything random (synthesis and noise); the solver itself is
    /// deterministic.
    pub seed: u64,
}

impl Default for DeblurConfig {
    fn default() -> Self {
        let latent = LatentParams::default();
        let hqs = HqsParams::default();
        let nb = NonblindParams::default();
        Self {
            kernel_size: 25,
            mu: latent.mu,
            gamma: KernelParams::default().gamma,
            growth: latent.growth,
            inner_iters: latent.inner_iters,
            beta0: None,
            beta_max: latent.beta_max,
            lambda0: latent.lambda0,
            lambda_decay: latent.lambda_decay,
            max_iter: KernelParams::default().max_iter,
            patch_coef: 0.025,
            scale_step: std::f64::consts::FRAC_1_SQRT_2,
            soft_scales: 0,
            pmp_enabled: true,
            solver: Solver::Pmp,
            prune_kernel: false,
            taper: true,
            hqs_alpha: None,
            hqs_rho0: None,
            hqs_rho_max: hqs.rho_max,
            hqs_split_iters: hqs.split_iters,
            hqs_cg_iters: hqs.cg_iters,
            nonblind_alpha: nb.alpha,
            nonblind_weight: nb.weight,
            nonblind_iters: nb.iters,
            nonblind_beta0: nb.beta0,
            nonblind_growth: nb.growth,
            seed: 0,
        }
    }
}

impl DeblurConfig {
    pub fn from_toml_str(text: &str, origin: &Path) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| DeblurError::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| DeblurError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable")
    }

    pub fn beta0(&self) -> f64 {
        self.beta0.unwrap_or(2.0 * self.mu)
    }

    pub fn hqs_alpha(&self) -> f64 {
        self.hqs_alpha.unwrap_or(self.mu)
    }

    pub fn hqs_rho0(&self) -> f64 {
        self.hqs_rho0.unwrap_or_else(|| self.hqs_alpha())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(DeblurError::InvalidArgument(what));
        if self.kernel_size == 0 || self.kernel_size % 2 == 0 {
            return Err(DeblurError::EvenKernel(self.kernel_size, self.kernel_size));
        }
        let positive = [
            ("mu", self.mu),
            ("gamma", self.gamma),
            ("beta0", self.beta0()),
            ("beta_max", self.beta_max),
            ("lambda0", self.lambda0),
            ("patch_coef", self.patch_coef),
            ("hqs_rho0", self.hqs_rho0()),
            ("hqs_rho_max", self.hqs_rho_max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive and finite, got {v}"));
            }
        }
        if !(self.growth > 1.0) {
            return bad(format!("growth must exceed 1, got {}", self.growth));
        }
        if !(self.lambda_decay > 0.0 && self.lambda_decay <= 1.0) {
            return bad(format!("lambda_decay must lie in (0, 1], got {}", self.lambda_decay));
        }
        if !(self.scale_step > 0.0 && self.scale_step < 1.0) {
            return bad(format!("scale_step must lie in (0, 1), got {}", self.scale_step));
        }
        if !(self.hqs_alpha() >= 0.0) {
            return bad("hqs_alpha must be non-negative".into());
        }
        if self.inner_iters == 0 || self.max_iter == 0 {
            return bad("inner_iters and max_iter must be >= 1".into());
        }
        self.latent_params(1, ThresholdMode::Hard).validate()?;
        self.hqs_params(1).validate()?;
        self.nonblind_params().validate()
    }

    pub fn patch_rule(&self) -> PatchRule {
        PatchRule::Relative(self.patch_coef)
    }

    pub fn latent_params(&self, patch_size: usize, mode: ThresholdMode) -> LatentParams {
        LatentParams {
            mu: self.mu,
            beta0: self.beta0(),
            beta_max: self.beta_max,
            growth: self.growth,
            inner_iters: self.inner_iters,
            lambda0: self.lambda0,
            lambda_decay: self.lambda_decay,
            mode,
            pmp_enabled: self.pmp_enabled,
            patch_size,
        }
    }

    pub fn hqs_params(&self, patch_size: usize) -> HqsParams {
        HqsParams {
            alpha: if self.pmp_enabled { self.hqs_alpha() } else { 0.0 },
            mu: self.mu,
            rho0: self.hqs_rho0(),
            rho_max: self.hqs_rho_max,
            beta0: self.beta0(),
            beta_max: self.beta_max,
            growth: self.growth,
            split_iters: self.hqs_split_iters,
            cg_iters: self.hqs_cg_iters,
            patch_size,
            ..HqsParams::default()
        }
    }

    pub fn latent_method(&self, patch_size: usize, mode: ThresholdMode) -> LatentMethod {
        match self.solver {
            Solver::Pmp => LatentMethod::Pmp(self.latent_params(patch_size, mode)),
            Solver::Hqs => LatentMethod::Hqs(self.hqs_params(patch_size)),
        }
    }

    pub fn kernel_params(&self) -> KernelParams {
        KernelParams {
            gamma: self.gamma,
            max_iter: self.max_iter,
            prune_small: self.prune_kernel,
        }
    }

    pub fn nonblind_params(&self) -> NonblindParams {
        NonblindParams {
            alpha: self.nonblind_alpha,
            weight: self.nonblind_weight,
            iters: self.nonblind_iters,
            beta0: self.nonblind_beta0,
            growth: self.nonblind_growth,
        }
    }
}
