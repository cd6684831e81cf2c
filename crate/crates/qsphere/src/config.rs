//! Run configuration: base, window, grid, tolerances, providers and seed.
//!
//! Loaded from TOML or JSON; every field has a default so partial files work.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{fit_phases, KernelContext, PhaseFitOptions, PhaseProvider};
use crate::lattice::LatticeWindow;
use crate::product::TableAProvider;
use crate::qseries::QBase;
use crate::transform::SpectralGrid;

/// Environment variable naming a config file.
pub const CONFIG_ENV: &str = "QSPHERE_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub qseries: f64,
    pub continuation: f64,
    pub symmetry: f64,
    pub vanishing: f64,
    pub product: f64,
    pub support: f64,
    pub sign: f64,
    pub gram: f64,
    pub gram_full: f64,
    /// Largest per-point residual of `inverse ∘ forward` accepted by the CLI roundtrip.
    pub roundtrip: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            qseries: 1e-10,
            continuation: 1e-8,
            symmetry: 1e-8,
            vanishing: 1e-10,
            product: 1e-4,
            support: 1e-6,
            sign: 1e-8,
            gram: 1e-3,
            gram_full: 5e-3,
            roundtrip: 5e-3,
        }
    }
}

impl Tolerances {
    /// Sets one tolerance by its field name.
    pub fn set(&mut self, name: &str, value: f64) -> Result<()> {
        let slot = match name {
            "qseries" => &mut self.qseries,
            "continuation" => &mut self.continuation,
            "symmetry" => &mut self.symmetry,
            "vanishing" => &mut self.vanishing,
            "product" => &mut self.product,
            "support" => &mut self.support,
            "sign" => &mut self.sign,
            "gram" => &mut self.gram,
            "gram_full" => &mut self.gram_full,
            "roundtrip" => &mut self.roundtrip,
            _ => return Err(Error::Input(format!("unknown tolerance {name:?}"))),
        };
        *slot = value;
        Ok(())
    }

    fn named(&self) -> [(&'static str, f64); 10] {
        [
            ("qseries", self.qseries),
            ("continuation", self.continuation),
            ("symmetry", self.symmetry),
            ("vanishing", self.vanishing),
            ("product", self.product),
            ("support", self.support),
            ("sign", self.sign),
            ("gram", self.gram),
            ("gram_full", self.gram_full),
            ("roundtrip", self.roundtrip),
        ]
    }
}

/// Draw counts for the randomized suites.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Draws {
    pub qseries: usize,
    pub continuation: usize,
    pub pairs_per_variant: usize,
    pub graded_functions: usize,
}

impl Default for Draws {
    fn default() -> Self {
        Self {
            qseries: 200,
            continuation: 100,
            pairs_per_variant: 10,
            graded_functions: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub q: f64,
    pub k_min: i32,
    pub k_max: i32,
    pub nodes: usize,
    pub n_max: u32,
    pub tol: Tolerances,
    /// `unit`, `fitted`, or a path to a phase provider JSON file.
    pub phase_provider: String,
    /// `none`, or a path to an a-provider JSON file.
    pub a_provider: String,
    pub seed: u64,
    pub draws: Draws,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            q: 0.5,
            k_min: -6,
            k_max: 6,
            nodes: 64,
            n_max: 4,
            tol: Tolerances::default(),
            phase_provider: "unit".into(),
            a_provider: "none".into(),
            seed: 20240607,
            draws: Draws::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML or JSON, chosen by extension and falling back on content.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
        let json = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => true,
            Some("toml") => false,
            _ => text.trim_start().starts_with('{'),
        };
        let cfg: Self = if json {
            serde_json::from_str(&text)
                .map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Input(format!("config: {e}")))
    }

    /// The file named by `QSPHERE_CONFIG`, or the defaults.
    pub fn from_env() -> Result<Self> {
        match std::env::var_os(CONFIG_ENV) {
            Some(p) if !p.is_empty() => Self::load(Path::new(&p)),
            _ => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        QBase::new(self.q)?;
        LatticeWindow::new(self.k_min, self.k_max)?;
        if self.nodes < 2 {
            return Err(Error::Input(format!(
                "need at least 2 principal nodes, got {}",
                self.nodes
            )));
        }
        for (name, v) in self.tol.named() {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Input(format!(
                    "tolerance {name} must be positive, got {v}"
                )));
            }
        }
        match self.phase_provider.as_str() {
            "unit" | "fitted" => {}
            path => {
                PhaseProvider::from_json(&read(path)?)?;
            }
        }
        if self.a_provider != "none" {
            TableAProvider::from_json(&read(&self.a_provider)?)?;
        }
        Ok(())
    }

    pub fn window(&self) -> LatticeWindow {
        LatticeWindow {
            k_min: self.k_min,
            k_max: self.k_max,
        }
    }

    pub fn grid(&self) -> Result<SpectralGrid> {
        SpectralGrid::gauss(self.nodes, self.n_max)
    }

    pub fn qbase(&self) -> Result<QBase> {
        QBase::new(self.q)
    }

    /// Kernel context with the configured phase provider resolved.
    pub fn context(&self) -> Result<KernelContext> {
        let mut ctx = KernelContext::new(self.qbase()?);
        match self.phase_provider.as_str() {
            "unit" => {}
            "fitted" => {
                let opts = PhaseFitOptions {
                    seed: self.seed,
                    ..Default::default()
                };
                ctx.phases = fit_phases(&self.grid()?.principal_points(), &ctx, &opts)?.0;
            }
            path => ctx.phases = PhaseProvider::from_json(&read(path)?)?,
        }
        Ok(ctx)
    }

    pub fn a_provider(&self) -> Result<Option<TableAProvider>> {
        if self.a_provider == "none" {
            return Ok(None);
        }
        TableAProvider::from_json(&read(&self.a_provider)?).map(Some)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable")
    }
}

fn read(path: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Input(format!("{path}: {e}")))
}
