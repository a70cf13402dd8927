//! Ablation sweeps over one Bridger axis, reported as one CSV row per
//! setting with metrics given as the median across seeds.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use super::dataset::Dataset;
use super::train::{evaluate, train};
use crate::config::{Config, Scope, ZoomVariant, SUPPORTED_HIDDEN_DIMS};
use crate::error::{Error, Result};
use crate::model::Etris;
use crate::petzoo::{count_params, Group};

/// Held-out fraction used when the configuration does not set one.
pub const DEFAULT_VAL_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    ZoomVariant,
    HiddenDim,
    Scope,
}

impl FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zoom_variant" => Ok(Axis::ZoomVariant),
            "hidden_dim" => Ok(Axis::HiddenDim),
            "scope" => Ok(Axis::Scope),
            other => Err(Error::input(format!("unknown ablation axis {other:?}; expected zoom_variant, hidden_dim or scope"))),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::ZoomVariant => "zoom_variant",
            Axis::HiddenDim => "hidden_dim",
            Axis::Scope => "scope",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub axis: String,
    pub setting: String,
    pub bridger_params: usize,
    pub seeds: usize,
    pub oiou: f64,
    pub miou: f64,
    pub pr50: f64,
    pub pr70: f64,
    pub pr90: f64,
}

/// The configurations swept along `axis`, each derived from `base`.
pub fn settings(axis: Axis, base: &Config) -> Vec<(String, Config)> {
    let with = |f: &dyn Fn(&mut Config)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    match axis {
        Axis::ZoomVariant => ZoomVariant::ALL
            .iter()
            .map(|&v| (v.to_string(), with(&|c| c.model.bridger.zoom_variant = v)))
            .collect(),
        Axis::HiddenDim => SUPPORTED_HIDDEN_DIMS
            .iter()
            .map(|&d| (d.to_string(), with(&|c| c.model.bridger.hidden_dim = d)))
            .collect(),
        Axis::Scope => [("none", Scope::Full, 0), ("single", Scope::Single, 1), ("late", Scope::Late, 2), ("full", Scope::Full, 3)]
            .iter()
            .map(|&(name, scope, count)| {
                (
                    name.to_string(),
                    with(&|c| {
                        c.model.bridger.scope = scope;
                        c.model.bridger.count = count;
                    }),
                )
            })
            .collect(),
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Trains one model per seed and returns the median held-out metrics.
pub fn run_setting(axis: Axis, setting: &str, config: &Config, data: &Dataset, seeds: &[u64]) -> Result<AblationRow> {
    if seeds.is_empty() {
        return Err(Error::input("at least one seed is required"));
    }
    let fraction = if config.train.val_fraction > 0.0 { config.train.val_fraction } else { DEFAULT_VAL_FRACTION };
    let (train_set, val_set) = data.split(fraction);
    let val_set = val_set.ok_or_else(|| Error::input(format!("dataset of {} samples is too small to split", data.len())))?;
    let mut reports = Vec::with_capacity(seeds.len());
    let mut bridger_params = 0;
    for &seed in seeds {
        let mut c = config.clone();
        c.model.seed = seed;
        let mut model = Etris::new(&c.model)?;
        bridger_params = count_params(&model.store)?.group_count(Group::Bridger, Some(true));
        train(&mut model, &c, &train_set, Some(&val_set), None)?;
        reports.push(evaluate(&model, &val_set)?);
    }
    let col = |f: fn(&crate::objective::MetricReport) -> f64| median(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(AblationRow {
        axis: axis.to_string(),
        setting: setting.to_string(),
        bridger_params,
        seeds: seeds.len(),
        oiou: col(|r| r.oiou),
        miou: col(|r| r.miou),
        pr50: col(|r| r.pr50),
        pr70: col(|r| r.pr70),
        pr90: col(|r| r.pr90),
    })
}

pub fn run(axis: Axis, base: &Config, data: &Dataset, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    settings(axis, base).iter().map(|(name, c)| run_setting(axis, name, c, data, seeds)).collect()
}

pub fn to_csv(rows: &[AblationRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Internal(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Internal(e.to_string()))
}
