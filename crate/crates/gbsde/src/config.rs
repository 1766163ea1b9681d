//! Experiment configs: one TOML file per run, validated up front so that
//! assumption violations fail fast with the offending key named.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::band::VolatilityBand;
use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::payoff::{GrowthTag, Payoff, PayoffKind};
use crate::reflection::{LossSpec, Policies};
use crate::skorokhod::{BoundaryPair, BoundarySide, InputPath};
use crate::solver::GeneratorSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Gexp,
    Gbsde,
    Sp,
    Bsp,
    MrBounded,
    MrUnbounded,
    Verify,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Mode::Gexp => "gexp",
            Mode::Gbsde => "gbsde",
            Mode::Sp => "sp",
            Mode::Bsp => "bsp",
            Mode::MrBounded => "mr-bounded",
            Mode::MrUnbounded => "mr-unbounded",
            Mode::Verify => "verify",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default)]
    pub t_start: f64,
    pub t_end: f64,
    pub n_time: usize,
    pub n_space: usize,
    /// Derive the domain from the CFL target with `x = 0` on a node
    /// (default). With `centered = false`, `x_min`/`x_max` are required.
    #[serde(default = "default_true")]
    pub centered: bool,
    pub x_min: Option<f64>,
    pub x_max: Option<f64>,
}

fn default_true() -> bool {
    true
}

impl GridConfig {
    pub fn build(&self, band: &VolatilityBand) -> Result<GridSpec> {
        if self.centered {
            GridSpec::centered(self.t_start, self.t_end, self.n_time, self.n_space, band)
        } else {
            let (x_min, x_max) = match (self.x_min, self.x_max) {
                (Some(a), Some(b)) => (a, b),
                _ => {
                    return Err(Error::Config(
                        "grid with centered = false needs x_min and x_max".into(),
                    ))
                }
            };
            GridSpec::new(
                self.t_start,
                self.t_end,
                self.n_time,
                x_min,
                x_max,
                self.n_space,
                band,
            )
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PayoffConfig {
    #[serde(flatten)]
    pub kind: PayoffKind,
    pub growth: Option<GrowthTag>,
}

impl PayoffConfig {
    pub fn build(&self) -> Payoff {
        let p = Payoff::from_kind(self.kind.clone());
        match self.growth {
            Some(g) => p.with_growth(g),
            None => p,
        }
    }
}

/// Input path family for the Skorokhod modes.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InputConfig {
    Sawtooth {
        t_start: f64,
        t_end: f64,
        n_steps: usize,
        amplitude: f64,
        periods: f64,
    },
    RandomWalk {
        t_start: f64,
        t_end: f64,
        n_steps: usize,
        scale: f64,
    },
    Knots {
        knots: Vec<(f64, f64)>,
    },
}

impl InputConfig {
    pub fn build(&self, seed: u64) -> Result<InputPath> {
        match self {
            InputConfig::Sawtooth {
                t_start,
                t_end,
                n_steps,
                amplitude,
                periods,
            } => InputPath::sawtooth(*t_start, *t_end, *n_steps, *amplitude, *periods),
            InputConfig::RandomWalk {
                t_start,
                t_end,
                n_steps,
                scale,
            } => InputPath::random_walk(*t_start, *t_end, *n_steps, *scale, seed),
            InputConfig::Knots { knots } => {
                let (times, values) = knots.iter().copied().unzip();
                InputPath::new(times, values)
            }
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkorokhodConfig {
    pub input: InputConfig,
    pub l: BoundarySide,
    pub r: BoundarySide,
    #[serde(default = "default_sp_tol")]
    pub tol: f64,
    /// Terminal anchor (backward problem only).
    pub anchor: Option<f64>,
}

fn default_sp_tol() -> f64 {
    1e-10
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

/// One experiment: a named mode plus the sections it needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    pub band: Option<VolatilityBand>,
    pub grid: Option<GridConfig>,
    pub payoff: Option<PayoffConfig>,
    pub generator: Option<GeneratorSpec>,
    pub loss: Option<LossSpec>,
    pub skorokhod: Option<SkorokhodConfig>,
    #[serde(default)]
    pub policies: Policies,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Fully validated run plan with every domain object constructed (and hence
/// every invariant checked).
#[derive(Debug, Clone)]
pub enum Plan {
    Gexp {
        payoff: Payoff,
        band: VolatilityBand,
        grid: GridSpec,
    },
    Gbsde {
        terminal: Payoff,
        gen: GeneratorSpec,
        band: VolatilityBand,
        grid: GridSpec,
    },
    Skorokhod {
        backward: bool,
        input: InputPath,
        pair: BoundaryPair,
        tol: f64,
    },
    MeanReflected {
        bounded: bool,
        verify_only: bool,
        terminal: Payoff,
        gen: GeneratorSpec,
        loss: LossSpec,
        band: VolatilityBand,
        grid: GridSpec,
    },
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    fn section<'a, T>(&self, field: &'a Option<T>, key: &str) -> Result<&'a T> {
        field.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "mode {} requires a [{key}] section in config '{}'",
                self.mode, self.name
            ))
        })
    }

    /// Builds and validates every object the mode needs.
    pub fn plan(&self) -> Result<Plan> {
        match self.mode {
            Mode::Gexp => {
                let band = *self.section(&self.band, "band")?;
                let grid = self.section(&self.grid, "grid")?.build(&band)?;
                let payoff = self.section(&self.payoff, "payoff")?.build();
                Ok(Plan::Gexp { payoff, band, grid })
            }
            Mode::Gbsde => {
                let band = *self.section(&self.band, "band")?;
                let grid = self.section(&self.grid, "grid")?.build(&band)?;
                let terminal = self.section(&self.payoff, "payoff")?.build();
                let gen = self.generator.clone().unwrap_or_default();
                gen.validate()?;
                Ok(Plan::Gbsde {
                    terminal,
                    gen,
                    band,
                    grid,
                })
            }
            Mode::Sp | Mode::Bsp => {
                let sk = self.section(&self.skorokhod, "skorokhod")?;
                let mut input = sk.input.build(self.seed)?;
                if self.mode == Mode::Bsp {
                    let anchor = sk.anchor.ok_or_else(|| {
                        Error::Config("mode bsp requires skorokhod.anchor".into())
                    })?;
                    input = input.with_anchor(anchor);
                }
                let pair = BoundaryPair {
                    l: sk.l.clone(),
                    r: sk.r.clone(),
                };
                pair.l.validate()?;
                pair.r.validate()?;
                Ok(Plan::Skorokhod {
                    backward: self.mode == Mode::Bsp,
                    input,
                    pair,
                    tol: sk.tol,
                })
            }
            Mode::MrBounded | Mode::MrUnbounded | Mode::Verify => {
                let band = *self.section(&self.band, "band")?;
                let grid = self.section(&self.grid, "grid")?.build(&band)?;
                let terminal = self.section(&self.payoff, "payoff")?.build();
                let loss = self.section(&self.loss, "loss")?.clone();
                loss.validate(&grid.times())?;
                let gen = self.generator.clone().unwrap_or_default();
                gen.validate()?;
                grid.zero_index()?;
                Ok(Plan::MeanReflected {
                    bounded: self.mode != Mode::MrUnbounded,
                    verify_only: self.mode == Mode::Verify,
                    terminal,
                    gen,
                    loss,
                    band,
                    grid,
                })
            }
        }
    }
}
