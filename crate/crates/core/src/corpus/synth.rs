//! Synthetic corpora with cumulative advantage.
//!
//! Each author enters at some year and from then on publishes a random number
//! of papers a year whose law depends on the author's cumulative count `h`:
//!
//! * `advantage`: `Poisson(rate * (1 + h)^exponent)` with a per-author latent
//!   rate drawn once;
//! * `compound`: `Poisson(x)` with `x` from the bounded power law at scale
//!   `beta1 * h^beta2`, the increment law of the shallow forecaster.

use rand::Rng;
use rand_distr::{Distribution, Gamma, LogNormal};
use serde::{Deserialize, Serialize};

use super::{CorpusError, PublicationRecord, MAX_YEAR, MIN_YEAR};
use crate::rng::RngStream;
use crate::stochastic::{compound_increment, poisson_sample, PowerLawParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RateDist {
    Constant { value: f64 },
    Gamma { shape: f64, scale: f64 },
    LogNormal { mu: f64, sigma: f64 },
}

impl RateDist {
    fn sample(&self, rng: &mut RngStream) -> Result<f64, CorpusError> {
        let bad = |e: String| CorpusError::Synth(e);
        Ok(match *self {
            RateDist::Constant { value } => value,
            RateDist::Gamma { shape, scale } => Gamma::new(shape, scale)
                .map_err(|e| bad(e.to_string()))?
                .sample(rng),
            RateDist::LogNormal { mu, sigma } => LogNormal::new(mu, sigma)
                .map_err(|e| bad(e.to_string()))?
                .sample(rng),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SynthLaw {
    Advantage { rate: RateDist, exponent: f64 },
    Compound { q: f64, beta1: f64, beta2: f64 },
}

/// Force exactly `count` authors to publish in `year`.
///
/// Authors `0..count` publish at least once in `year` (entering then if they
/// would otherwise enter later); every other author publishes nothing in
/// `year`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantActive {
    pub year: i32,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_authors: usize,
    pub start_year: i32,
    pub end_year: i32,
    pub law: SynthLaw,
    /// Minimum number of papers in the entry year.
    #[serde(default)]
    pub entry_count: u64,
    /// Entry years are uniform on this inclusive range; defaults to the start year.
    #[serde(default)]
    pub entry_years: Option<(i32, i32)>,
    #[serde(default)]
    pub plant_active: Option<PlantActive>,
    pub seed: u64,
}

impl SynthConfig {
    fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::Synth(m));
        if self.start_year > self.end_year || self.start_year < MIN_YEAR || self.end_year > MAX_YEAR
        {
            return bad(format!(
                "years {}..{} must be ordered and inside [{MIN_YEAR}, {MAX_YEAR}]",
                self.start_year, self.end_year
            ));
        }
        if let Some((a, b)) = self.entry_years {
            if a > b || a < self.start_year || b > self.end_year {
                return bad(format!("entry years {a}..{b} outside the corpus span"));
            }
        }
        if let Some(p) = self.plant_active {
            if p.count > self.n_authors || !(self.start_year..=self.end_year).contains(&p.year) {
                return bad(format!(
                    "cannot plant {} active authors in {}",
                    p.count, p.year
                ));
            }
        }
        match self.law {
            SynthLaw::Advantage { exponent, .. } if !exponent.is_finite() => {
                return bad("exponent must be finite".into());
            }
            SynthLaw::Compound { q, beta1, beta2 } => {
                PowerLawParams::new(q, beta1, beta2)
                    .map_err(|e| CorpusError::Synth(e.to_string()))?;
            }
            _ => {}
        }
        Ok(())
    }
}

pub fn author_name(index: usize) -> String {
    format!("s{index:06}")
}

/// Records sorted by author then year; identical for identical configs.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<Vec<PublicationRecord>, CorpusError> {
    cfg.validate()?;
    let (entry_lo, entry_hi) = cfg.entry_years.unwrap_or((cfg.start_year, cfg.start_year));
    let err = |e: crate::stochastic::DomainError| CorpusError::Synth(e.to_string());
    let mut records = Vec::new();
    for idx in 0..cfg.n_authors {
        let mut rng = RngStream::keyed(cfg.seed, &[idx as u64]);
        let rate = match cfg.law {
            SynthLaw::Advantage { rate, .. } => {
                let r = rate.sample(&mut rng)?;
                if !(r.is_finite() && r >= 0.0) {
                    return Err(CorpusError::Synth(format!("rate draw {r} is invalid")));
                }
                r
            }
            SynthLaw::Compound { .. } => 0.0,
        };
        let mut entry = rng.random_range(entry_lo..=entry_hi);
        let planted = cfg.plant_active.filter(|p| idx < p.count);
        if let Some(p) = planted {
            entry = entry.min(p.year);
        }
        let id = author_name(idx);
        let mut h = 0u64;
        for year in entry..=cfg.end_year {
            let mut k = match cfg.law {
                SynthLaw::Advantage { exponent, .. } => {
                    poisson_sample(rate * (1.0 + h as f64).powf(exponent), &mut rng).map_err(err)?
                }
                SynthLaw::Compound { q, beta1, beta2 } => {
                    compound_increment(h as f64, &PowerLawParams { q, beta1, beta2 }, &mut rng)
                        .map_err(err)?
                }
            };
            if year == entry {
                k = k.max(cfg.entry_count);
            }
            match cfg.plant_active {
                Some(p) if p.year == year && planted.is_some() => k = k.max(1),
                Some(p) if p.year == year => k = 0,
                _ => {}
            }
            for _ in 0..k {
                records.push(PublicationRecord {
                    author_id: id.clone(),
                    year,
                });
            }
            h += k;
        }
    }
    records.sort();
    Ok(records)
}
