//! JSON-lines datasets of fitted dual parameters.
//!
//! The first line is a [`DatasetHeader`]; every following line is one
//! [`DatasetRecord`]. Prediction files written by external learners use the
//! same layout, with their predicted `rho` and `lam` in each record and
//! `sum_rate` optional.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mean_std, streams, ExperimentSpec, ResultRow};
use crate::error::{Error, Result};
use crate::model::{self, ChannelSample, PinchingLayout};
use crate::rate;
use crate::short_term::{self, DualParams, KktFitOptions};
use crate::SystemConfig;

pub const DATASET_SCHEMA: &str = "pinch-duals";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema: String,
    pub version: u32,
    /// Scenario the duals refer to, including the power budget.
    pub scenario: SystemConfig,
    pub seed: u64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    /// `K` rows of `[x, y]`.
    pub user_positions: Vec<[f64; 2]>,
    /// `N` rows of `L` positions.
    pub pa_positions: Vec<Vec<f64>>,
    pub rho: Vec<f64>,
    pub lam: Vec<f64>,
    /// Bits/s/Hz of the power-normalised reconstruction.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sum_rate: Option<f64>,
}

impl DatasetRecord {
    /// Sum rate of the reconstructed precoder after rescaling `rho` to the
    /// full power budget.
    pub fn score(&self, cfg: &SystemConfig) -> Result<f64> {
        let layout = PinchingLayout::from_rows(&self.pa_positions)?;
        layout.validate(cfg)?;
        let sample = ChannelSample::new(self.user_positions.clone());
        let h = model::effective_channel(cfg, &layout, &sample)?;
        let duals = DualParams {
            rho: self.rho.clone(),
            lam: self.lam.clone(),
        };
        duals.validate(cfg.k)?;
        let duals = duals.power_normalized(&h, cfg.p_max)?;
        let w = short_term::kkt_reconstruct(&h, &duals)?;
        rate::sum_rate(&h, &w, cfg.sigma2)
    }
}

/// Fits duals with `kkt_fit` on `count` samples of the export stream at the
/// given layout and writes header plus records. Returns the records.
pub fn export_training_set<W: Write>(
    spec: &ExperimentSpec,
    layout: &PinchingLayout,
    count: usize,
    mut out: W,
) -> Result<Vec<DatasetRecord>> {
    let cfg = &spec.scenario;
    cfg.validate()?;
    layout.validate(cfg)?;
    let samples = streams::samples(cfg, spec.seed, streams::EXPORT_STREAM, count);
    let opts = KktFitOptions {
        check_gap: false,
        wmmse: spec.wmmse,
        ..KktFitOptions::default()
    };
    let pa_positions = layout.to_rows();
    let records = samples
        .par_iter()
        .map(|s| {
            let h = model::effective_channel(cfg, layout, s)?;
            let fit = short_term::kkt_fit(&h, cfg, &opts)?;
            Ok(DatasetRecord {
                user_positions: s.user_pos.clone(),
                pa_positions: pa_positions.clone(),
                rho: fit.duals.rho,
                lam: fit.duals.lam,
                sum_rate: Some(fit.sum_rate),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let header = DatasetHeader {
        schema: DATASET_SCHEMA.to_string(),
        version: DATASET_VERSION,
        scenario: cfg.clone(),
        seed: spec.seed,
        count,
    };
    serde_json::to_writer(&mut out, &header)?;
    writeln!(out)?;
    for r in &records {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(records)
}

/// One parsed line; `Err` holds why the line could not become a record.
pub type RecordLine = std::result::Result<DatasetRecord, String>;

/// Reads and checks the header, then parses every nonblank line after it.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<(DatasetHeader, Vec<RecordLine>)> {
    let mut lines = reader.lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Schema("empty file, expected a header line".into()))??;
    let header: DatasetHeader =
        serde_json::from_str(&first).map_err(|e| Error::Schema(format!("header: {e}")))?;
    if header.schema != DATASET_SCHEMA {
        return Err(Error::Schema(format!(
            "schema is `{}`, expected `{DATASET_SCHEMA}`",
            header.schema
        )));
    }
    if header.version != DATASET_VERSION {
        return Err(Error::Schema(format!(
            "version {} is not supported (expected {DATASET_VERSION})",
            header.version
        )));
    }
    header.scenario.validate()?;
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(
            serde_json::from_str::<DatasetRecord>(&line)
                .map_err(|e| format!("line {}: {e}", i + 2)),
        );
    }
    Ok((header, records))
}

#[derive(Debug, Clone)]
pub struct DualsEvaluation {
    pub row: ResultRow,
    /// Score per record, `None` where the record was skipped.
    pub scores: Vec<Option<f64>>,
    /// `sum_rate` as stored in the file, per record.
    pub stored: Vec<Option<f64>>,
    pub skipped: usize,
}

/// Scores a duals file against the scenario in its own header.
///
/// Records that do not parse or do not fit the scenario (wrong sizes,
/// infeasible layout, negative duals, users outside the region) are skipped
/// and counted.
pub fn eval_duals_file(spec: &ExperimentSpec, path: &Path) -> Result<DualsEvaluation> {
    let file = std::fs::File::open(path)?;
    eval_duals_reader(spec, BufReader::new(file))
}

pub fn eval_duals_reader<R: BufRead>(spec: &ExperimentSpec, reader: R) -> Result<DualsEvaluation> {
    let start = Instant::now();
    let (header, lines) = read_dataset(reader)?;
    let cfg = &header.scenario;
    if (cfg.k, cfg.n, cfg.l) != (spec.scenario.k, spec.scenario.n, spec.scenario.l) {
        warn!(
            "file scenario is K={} N={} L={}, spec has K={} N={} L={}; using the file's",
            cfg.k, cfg.n, cfg.l, spec.scenario.k, spec.scenario.n, spec.scenario.l
        );
    }
    let results: Vec<(Option<f64>, Option<f64>)> = lines
        .par_iter()
        .enumerate()
        .map(|(i, line)| match line {
            Ok(rec) => match rec.score(cfg) {
                Ok(v) => (Some(v), rec.sum_rate),
                Err(e) => {
                    warn!("record {i} skipped: {e}");
                    (None, rec.sum_rate)
                }
            },
            Err(e) => {
                warn!("record {i} skipped: {e}");
                (None, None)
            }
        })
        .collect();
    let (scores, stored): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let skipped = scores.iter().filter(|s| s.is_none()).count();
    if skipped > 0 {
        warn!("{skipped} of {} records skipped", scores.len());
    }
    let valid: Vec<f64> = scores.iter().flatten().copied().collect();
    let (mean, std) = mean_std(&valid);
    Ok(DualsEvaluation {
        row: ResultRow {
            method: "duals_file".into(),
            p_max_dbm: crate::watts_to_dbm(cfg.p_max),
            seed: header.seed,
            mean_sum_rate: mean,
            std_sum_rate: std,
            t_f: 0,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        scores,
        stored,
        skipped,
    })
}
