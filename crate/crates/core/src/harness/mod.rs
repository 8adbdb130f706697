//! Experiment orchestration: spec files, sample streams, the two-timescale
//! driver with its baselines, CSV output and the JSON-lines dataset
//! interface used by external dual predictors.

pub mod checks;
mod dataset;
mod spec;
pub mod streams;

pub use dataset::{
    eval_duals_file, eval_duals_reader, export_training_set, read_dataset, DatasetHeader,
    DatasetRecord,
    DualsEvaluation, DATASET_SCHEMA, DATASET_VERSION,
};
pub use spec::{ExperimentSpec, Method, ShortSolverKind};

use std::io::Write;
use std::time::Instant;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines;
use crate::error::Result;
use crate::model::{self, ChannelSample, PinchingLayout};
use crate::rate;
use crate::short_term::ShortTermSolver;
use crate::ssca::{self, TraceRow};
use crate::SystemConfig;

/// Summary of one method at one power level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: String,
    pub p_max_dbm: f64,
    pub seed: u64,
    pub mean_sum_rate: f64,
    /// Sample standard deviation over the evaluation set.
    pub std_sum_rate: f64,
    /// Long-term iterations; zero for methods without a long-term stage.
    pub t_f: usize,
    pub wall_time_s: f64,
}

pub const RESULTS_HEADER: &str = "method,p_max_dbm,seed,mean_sum_rate,std_sum_rate,t_f";
pub const TIMING_HEADER: &str = "method,p_max_dbm,seed,wall_time_s";
pub const TRACE_HEADER: &str = "t,f_t,gamma_t,rho_t,eval_sum_rate";

/// Everything produced for one (method, power) grid point.
#[derive(Debug, Clone)]
pub struct GridPointOutcome {
    pub method: Method,
    pub row: ResultRow,
    /// Per-sample evaluation sum rates, in evaluation-stream order.
    pub rates: Vec<f64>,
    pub trace: Vec<TraceRow>,
    /// Frozen layout; `None` for the conventional array.
    pub layout: Option<PinchingLayout>,
    pub unconverged_solves: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    /// Sorted by method, then power.
    pub points: Vec<GridPointOutcome>,
}

impl ExperimentOutcome {
    pub fn rows(&self) -> Vec<ResultRow> {
        self.points.iter().map(|p| p.row.clone()).collect()
    }

    pub fn point(&self, method: Method, p_max_dbm: f64) -> Option<&GridPointOutcome> {
        self.points
            .iter()
            .find(|p| p.method == method && p.row.p_max_dbm == p_max_dbm)
    }

    pub fn unconverged_solves(&self) -> usize {
        self.points.iter().map(|p| p.unconverged_solves).sum()
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Per-sample sum rates of `solver` on a frozen layout.
pub fn evaluate_layout(
    cfg: &SystemConfig,
    layout: &PinchingLayout,
    samples: &[ChannelSample],
    solver: &ShortTermSolver,
) -> Result<Vec<f64>> {
    layout.validate(cfg)?;
    samples
        .par_iter()
        .map(|s| {
            let h = model::effective_channel(cfg, layout, s)?;
            let out = solver.solve(&h, cfg)?;
            rate::sum_rate(&h, &out.w, cfg.sigma2)
        })
        .collect()
}

/// Runs every method at every power level of the sweep.
///
/// Grid points run in parallel. At a given seed all points share the same
/// training stream and the same evaluation samples, so comparisons are
/// paired.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let mut grid = Vec::new();
    for &method in &spec.methods {
        for &dbm in &spec.p_max_sweep_dbm {
            grid.push((method, dbm));
        }
    }
    let mut points = grid
        .par_iter()
        .map(|&(method, dbm)| run_point(spec, method, dbm))
        .collect::<Result<Vec<_>>>()?;
    points.sort_by(|a, b| {
        a.method
            .cmp(&b.method)
            .then(a.row.p_max_dbm.total_cmp(&b.row.p_max_dbm))
    });
    let outcome = ExperimentOutcome { points };
    let unconverged = outcome.unconverged_solves();
    if unconverged > 0 {
        warn!("{unconverged} short-term solves hit their iteration limit across the experiment");
    }
    Ok(outcome)
}

fn run_point(spec: &ExperimentSpec, method: Method, dbm: f64) -> Result<GridPointOutcome> {
    let start = Instant::now();
    let cfg = spec.scenario_at(dbm);
    let eval = streams::eval_samples(&cfg, spec.seed, spec.eval_samples);
    let x0 = PinchingLayout::grid(&cfg);
    let (rates, trace, layout, unconverged, t_f) = match method {
        Method::Proposed => {
            let opts = spec.long_term_options();
            let res = ssca::run_long_term(&cfg, &opts, x0, streams::training_sampler(&cfg, spec.seed))?;
            let rates = evaluate_layout(&cfg, &res.layout, &eval, &opts.solver)?;
            (rates, res.trace, Some(res.layout), res.unconverged_solves, spec.t_f)
        }
        Method::SscaThp => {
            let res = baselines::ssca_thp_run(
                &cfg,
                ssca::StepSchedule::default(),
                spec.tau,
                spec.t_f,
                spec.n_s,
                x0,
                streams::training_sampler(&cfg, spec.seed),
            )?;
            let rates = evaluate_layout(&cfg, &res.layout, &eval, &ShortTermSolver::Rzf)?;
            (rates, res.trace, Some(res.layout), res.unconverged_solves, spec.t_f)
        }
        Method::Mimo => {
            let rates = baselines::mimo_rates(&cfg, &eval, &spec.wmmse)?;
            (rates, Vec::new(), None, 0, 0)
        }
    };
    let (mean, std) = mean_std(&rates);
    Ok(GridPointOutcome {
        method,
        row: ResultRow {
            method: method.name().to_string(),
            p_max_dbm: dbm,
            seed: spec.seed,
            mean_sum_rate: mean,
            std_sum_rate: std,
            t_f,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
        rates,
        trace,
        layout,
        unconverged_solves: unconverged,
    })
}

/// Writes the result table. Wall times are left out so that identical runs
/// produce identical files; see [`write_timing_csv`].
pub fn write_results_csv<W: Write>(mut out: W, rows: &[ResultRow]) -> Result<()> {
    writeln!(out, "{RESULTS_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.method, r.p_max_dbm, r.seed, r.mean_sum_rate, r.std_sum_rate, r.t_f
        )?;
    }
    Ok(())
}

pub fn write_timing_csv<W: Write>(mut out: W, rows: &[ResultRow]) -> Result<()> {
    writeln!(out, "{TIMING_HEADER}")?;
    for r in rows {
        writeln!(out, "{},{},{},{:.3}", r.method, r.p_max_dbm, r.seed, r.wall_time_s)?;
    }
    Ok(())
}

pub fn write_trace_csv<W: Write>(mut out: W, trace: &[TraceRow]) -> Result<()> {
    writeln!(out, "{TRACE_HEADER}")?;
    for r in trace {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.t, r.f_t, r.gamma_t, r.rho_t, r.eval_sum_rate
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> ExperimentSpec {
        ExperimentSpec::from_toml_str(
            r#"
seed = 3
[scenario]
k = 2
l = 3
[experiment]
t_f = 4
n_s = 2
eval_samples = 6
p_max_sweep_dbm = [28.0, 12.0]
"#,
        )
        .unwrap()
    }

    #[test]
    fn sample_statistics() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rows_are_sorted_and_complete() {
        let outcome = run_experiment(&small_spec()).unwrap();
        let keys: Vec<(String, f64)> = outcome
            .rows()
            .iter()
            .map(|r| (r.method.clone(), r.p_max_dbm))
            .collect();
        let expected: Vec<(String, f64)> = ["proposed", "ssca_thp", "mimo"]
            .iter()
            .flat_map(|m| [(m.to_string(), 12.0), (m.to_string(), 28.0)])
            .collect();
        assert_eq!(keys, expected);
        for p in &outcome.points {
            assert_eq!(p.rates.len(), 6);
            assert!(p.row.mean_sum_rate >= 0.0 && p.row.std_sum_rate >= 0.0);
            match p.method {
                Method::Mimo => assert!(p.trace.is_empty() && p.layout.is_none()),
                _ => {
                    assert_eq!(p.trace.len(), 4);
                    p.layout.as_ref().unwrap().validate(&small_spec().scenario).unwrap();
                }
            }
        }
    }

    #[test]
    fn csv_is_repeatable() {
        let spec = small_spec();
        let render = || {
            let mut buf = Vec::new();
            write_results_csv(&mut buf, &run_experiment(&spec).unwrap().rows()).unwrap();
            buf
        };
        let a = render();
        assert_eq!(a, render());
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with(RESULTS_HEADER));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn trace_and_timing_layout() {
        let trace = vec![TraceRow { t: 0, f_t: -1.5, gamma_t: 1.0, rho_t: 1.0, eval_sum_rate: 1.5 }];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &trace).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{TRACE_HEADER}\n0,-1.5,1,1,1.5\n"));
        let row = ResultRow {
            method: "mimo".into(),
            p_max_dbm: 20.0,
            seed: 1,
            mean_sum_rate: 3.0,
            std_sum_rate: 0.5,
            t_f: 0,
            wall_time_s: 0.25,
        };
        let mut buf = Vec::new();
        write_timing_csv(&mut buf, &[row]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{TIMING_HEADER}\nmimo,20,1,0.250\n"));
    }
}
