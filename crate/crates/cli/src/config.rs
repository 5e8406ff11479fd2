//! Run configuration: one TOML file, every key optional, defaults as published.

use std::path::Path;

use anyhow::{bail, Context, Result};
use prodcast_core::baselines::CombinedParams;
use prodcast_core::corpus::{CohortSpec, PlantActive, SynthConfig, SynthLaw};
use prodcast_core::evaluation::{Estimate, ReportConfig};
use prodcast_core::forecast::{ForecastConfig, Mode};
use prodcast_core::recurrent::{RecurrentSpec, TrainConfig};
use prodcast_core::stochastic::PowerLawParams;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub cohort: CohortSpec,
    pub recurrent: RecurrentSpec,
    pub train: TrainConfig,
    pub powerlaw: PowerLawParams,
    pub forecast: ForecastSection,
    pub baseline: BaselineSection,
    pub report: ReportSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// First year counted into `h`.
    pub start_year: i32,
    pub end_year: i32,
    /// Record format for `ingest`: `csv` or `dblp`.
    pub format: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForecastSection {
    pub t_x: i32,
    pub t_y: i32,
    pub rollouts: usize,
    /// `full`, `lstm_only`, `unit_scale`, `const_poisson` or `const_poisson(c)`.
    /// Bare `const_poisson` uses the cohort's mean annual increment over the
    /// training window.
    pub mode: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineModel {
    Piecewise,
    Combined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub model: BaselineModel,
    /// `t_0` of the annual grid.
    pub grid_start: i32,
    /// Number of grid columns `J`.
    pub columns: usize,
    /// Fit window `L`.
    pub window: usize,
    /// Piecewise level cap `I`.
    pub max_level: usize,
    pub combined: CombinedSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CombinedSection {
    pub max_level: usize,
    pub test_cap: usize,
    pub k_split: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportSection {
    pub level_cap: usize,
    pub estimate: Estimate,
}

/// Synthetic corpus settings; the seed comes from the top-level key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub n_authors: usize,
    pub start_year: i32,
    pub end_year: i32,
    pub law: SynthLaw,
    #[serde(default)]
    pub entry_count: u64,
    #[serde(default)]
    pub entry_years: Option<(i32, i32)>,
    #[serde(default)]
    pub plant_active: Option<PlantActive>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 2001,
            data: DataConfig::default(),
            cohort: CohortSpec {
                activity_year: 2000,
                train_start: 1951,
                train_end: 2013,
                test_end: 2018,
            },
            recurrent: RecurrentSpec::default(),
            train: TrainConfig::default(),
            powerlaw: PowerLawParams::default(),
            forecast: ForecastSection::default(),
            baseline: BaselineSection::default(),
            report: ReportSection::default(),
            synth: None,
        }
    }
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            start_year: 1951,
            end_year: 2019,
            format: "csv".into(),
        }
    }
}

impl Default for ForecastSection {
    fn default() -> Self {
        Self {
            t_x: 2001,
            t_y: 2018,
            rollouts: 1000,
            mode: "full".into(),
        }
    }
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            model: BaselineModel::Piecewise,
            grid_start: 1995,
            columns: 23,
            window: 14,
            max_level: 40,
            combined: CombinedSection::default(),
        }
    }
}

impl Default for CombinedSection {
    fn default() -> Self {
        Self {
            max_level: 180,
            test_cap: 60,
            k_split: 42,
        }
    }
}

impl Default for ReportSection {
    fn default() -> Self {
        Self {
            level_cap: 15,
            estimate: Estimate::Realization,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub mode: Option<String>,
    pub t_x: Option<i32>,
    pub t_y: Option<i32>,
    pub rollouts: Option<usize>,
    pub level_cap: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                Self::from_toml(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => Self::default(),
        };
        cfg.apply(overrides);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = s;
        }
        if let Some(m) = &o.mode {
            self.forecast.mode = m.clone();
        }
        if let Some(t) = o.t_x {
            self.forecast.t_x = t;
        }
        if let Some(t) = o.t_y {
            self.forecast.t_y = t;
        }
        if let Some(r) = o.rollouts {
            self.forecast.rollouts = r;
        }
        if let Some(c) = o.level_cap {
            self.report.level_cap = c;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.start_year > self.data.end_year {
            bail!(
                "data.start_year {} after data.end_year {}",
                self.data.start_year,
                self.data.end_year
            );
        }
        self.data
            .format
            .parse::<prodcast_core::corpus::Format>()
            .map_err(anyhow::Error::msg)?;
        self.cohort.validate()?;
        self.recurrent.validate()?;
        self.train.validate()?;
        self.powerlaw.validate()?;
        self.forecast_config().validate()?;
        self.parse_mode()?;
        self.report_config().validate()?;
        if self.baseline.columns == 0
            || self.baseline.window < 2
            || self.baseline.window > self.baseline.columns
        {
            bail!(
                "baseline needs 2 <= window ({}) <= columns ({})",
                self.baseline.window,
                self.baseline.columns
            );
        }
        Ok(())
    }

    pub fn forecast_config(&self) -> ForecastConfig {
        ForecastConfig {
            t_x: self.forecast.t_x,
            t_y: self.forecast.t_y,
            rollouts: self.forecast.rollouts,
            seed: self.seed,
        }
    }

    /// The configured mode; `Ok(None)` for bare `const_poisson`.
    pub fn parse_mode(&self) -> Result<Option<Mode>> {
        let m = self.forecast.mode.trim();
        if m == "const_poisson" {
            return Ok(None);
        }
        Ok(Some(m.parse()?))
    }

    pub fn report_config(&self) -> ReportConfig {
        ReportConfig {
            level_cap: self.report.level_cap,
            t_x: self.forecast.t_x,
            t_y: self.forecast.t_y,
            in_sample_end: Some(self.cohort.train_end),
            estimate: self.report.estimate,
        }
    }

    pub fn combined_params(&self) -> CombinedParams {
        CombinedParams {
            max_level: self.baseline.combined.max_level,
            test_cap: self.baseline.combined.test_cap,
            k_split: self.baseline.combined.k_split,
            window: self.baseline.window,
        }
    }

    pub fn synth_config(&self) -> Option<SynthConfig> {
        self.synth.as_ref().map(|s| SynthConfig {
            n_authors: s.n_authors,
            start_year: s.start_year,
            end_year: s.end_year,
            law: s.law,
            entry_count: s.entry_count,
            entry_years: s.entry_years,
            plant_active: s.plant_active,
            seed: self.seed,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn toml_roundtrip() {
        let cfg = RunConfig {
            synth: Some(SynthSection {
                n_authors: 10,
                start_year: 1990,
                end_year: 2000,
                law: SynthLaw::Compound {
                    q: 0.1,
                    beta1: 0.33,
                    beta2: 1.22,
                },
                entry_count: 1,
                entry_years: Some((1990, 1995)),
                plant_active: None,
            }),
            ..RunConfig::default()
        };
        assert_eq!(RunConfig::from_toml(&cfg.to_toml().unwrap()).unwrap(), cfg);
    }

    #[test]
    fn partial_sections_keep_other_defaults() {
        let cfg = RunConfig::from_toml("[forecast]\nt_x = 2008\nt_y = 2019\n").unwrap();
        assert_eq!((cfg.forecast.t_x, cfg.forecast.t_y), (2008, 2019));
        assert_eq!(cfg.forecast.rollouts, 1000);
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn overrides_win_and_are_validated() {
        let mut cfg = RunConfig::default();
        cfg.apply(&Overrides {
            seed: Some(9),
            rollouts: Some(0),
            ..Overrides::default()
        });
        assert_eq!(cfg.seed, 9);
        assert!(cfg.validate().is_err());
        assert!(RunConfig::from_toml("seed = 1\nbogus = 2\n").is_err());
    }

    #[test]
    fn modes() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.parse_mode().unwrap(), Some(Mode::Full));
        cfg.forecast.mode = "const_poisson".into();
        assert_eq!(cfg.parse_mode().unwrap(), None);
        cfg.forecast.mode = "const_poisson(0.5)".into();
        assert_eq!(cfg.parse_mode().unwrap(), Some(Mode::ConstPoisson(0.5)));
        cfg.forecast.mode = "fancy".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn synth_takes_the_run_seed() {
        let cfg = RunConfig::from_toml(
            "seed = 42\n[synth]\nn_authors = 3\nstart_year = 1990\nend_year = 2000\nlaw = { kind = \"advantage\", rate = { kind = \"constant\", value = 1.0 }, exponent = 0.0 }\n",
        )
        .unwrap();
        assert_eq!(cfg.synth_config().unwrap().seed, 42);
    }
}
