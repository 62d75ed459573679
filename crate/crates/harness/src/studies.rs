//! The five studies behind the CLI subcommands.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use qbcmr_core::basis::{self, Points, SieveBasisSpec};
use qbcmr_core::inference::{self, CoverageConfig, CoverageSummary};
use qbcmr_core::model::{self, Dataset};
use qbcmr_core::pipeline::{self, RateStudyConfig, RateStudyResult, WeightMode};
use qbcmr_core::prior::{self, GaussianSeriesPrior, IllPosedness};
use qbcmr_core::rng::{self, Purpose};

use crate::config::{ExperimentConfig, Study};
use crate::error::{HarnessError, Result};
use crate::output::{self, Cell};

/// Files written by a study and a one-line summary.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    pub files: Vec<PathBuf>,
    pub summary: String,
}

/// Run `cfg.study`, writing artifacts under `out`.
pub fn run_study(cfg: &ExperimentConfig, out: &Path) -> Result<StudyOutcome> {
    match cfg.study {
        Study::Simulate => run_simulate(cfg, out),
        Study::Fit => run_fit(cfg, out),
        Study::Coverage => run_coverage_study(cfg, out).map(|(o, _)| o),
        Study::RateStudy => run_rate_study(cfg, out).map(|(o, _)| o),
        Study::PriorDraw => run_prior_draw(cfg, out),
    }
}

/// Write a dataset as CSV with header `X1..Xd, Y, W1..Wdw`.
pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let (dx, dw) = (data.x().dim(), data.w().dim());
    let mut header: Vec<String> = (1..=dx).map(|i| format!("X{i}")).collect();
    header.push("Y".into());
    header.extend((1..=dw).map(|i| format!("W{i}")));
    let rows: Vec<Vec<Cell>> = (0..data.n())
        .map(|i| {
            let mut r: Vec<Cell> = data.x().row(i).iter().map(|v| Cell::Float(*v)).collect();
            r.push(Cell::Float(data.y()[i]));
            r.extend(data.w().row(i).iter().map(|v| Cell::Float(*v)));
            r
        })
        .collect();
    output::write_csv(path, &header, &rows)
}

/// Read a dataset written by [`write_dataset`].
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut rdr = csv::Reader::from_path(path)
        .map_err(|e| HarnessError::Config(format!("cannot read dataset {}: {e}", path.display())))?;
    let header = rdr.headers()?.clone();
    let mut xcols = Vec::new();
    let mut wcols = Vec::new();
    let mut ycol = None;
    for (i, h) in header.iter().enumerate() {
        let h = h.trim();
        if h == "Y" {
            ycol = Some(i);
        } else if h.starts_with('X') {
            xcols.push(i);
        } else if h.starts_with('W') {
            wcols.push(i);
        } else {
            return Err(HarnessError::Config(format!("unexpected dataset column `{h}`")));
        }
    }
    let ycol = ycol.ok_or_else(|| HarnessError::Config("dataset has no `Y` column".into()))?;
    if xcols.is_empty() || wcols.is_empty() {
        return Err(HarnessError::Config("dataset needs X and W columns".into()));
    }
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let get = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|e| {
                HarnessError::Config(format!("dataset row {}: column {}: {e}", line + 1, &header[i]))
            })
        };
        for &i in &xcols {
            x.push(get(i)?);
        }
        y.push(get(ycol)?);
        for &i in &wcols {
            w.push(get(i)?);
        }
    }
    Ok(Dataset::new(Points::new(xcols.len(), x)?, y, Points::new(wcols.len(), w)?)?)
}

pub fn run_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<StudyOutcome> {
    let design = cfg.resolve_design()?;
    let n = cfg.n.expect("validated");
    let data = model::simulate_dgp(&design, n, &mut rng::replication_stream(cfg.seed, Purpose::Data))?;
    let path = out.join("data.csv");
    write_dataset(&path, &data)?;
    Ok(StudyOutcome { files: vec![path], summary: format!("simulated {n} observations from {}", cfg.design.as_deref().unwrap_or("?")) })
}

#[derive(Debug, Serialize)]
struct FitDiagnostics {
    seed: u64,
    n: usize,
    k: usize,
    j: usize,
    weighting: &'static str,
    prior_scale: f64,
    accept_rate: f64,
    burn_accept_rate: f64,
    ess_min: f64,
    ess: Vec<f64>,
    ess_functional: Option<f64>,
    low_ess: bool,
    beta_final: f64,
    draws: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    interval: Option<IntervalRecord>,
}

#[derive(Debug, Serialize)]
struct IntervalRecord {
    gamma: f64,
    center: f64,
    radius: f64,
    truth: f64,
    hit: bool,
}

pub fn run_fit(cfg: &ExperimentConfig, out: &Path) -> Result<StudyOutcome> {
    let mode = cfg.weight_modes()?[0];
    let fit_cfg = cfg.fit_config(mode)?;
    let design = cfg.design.as_ref().map(|_| cfg.resolve_design()).transpose()?;
    let data = match (&cfg.data, &design) {
        (Some(p), _) => read_dataset(Path::new(p))?,
        (None, Some(d)) => model::simulate_dgp(d, cfg.n.expect("validated"), &mut rng::replication_stream(cfg.seed, Purpose::Data))?,
        (None, None) => unreachable!("validated"),
    };
    let (model, ill) = match &design {
        Some(d) => (d.model, d.ill_posedness()),
        None => (qbcmr_core::model::MomentModel::Npiv, IllPosedness::Mild { zeta: 1.0 }),
    };
    let model = match (cfg.model.quantile, design.is_some()) {
        (Some(q), false) => qbcmr_core::model::MomentModel::npqiv(q)?,
        _ => model,
    };
    let n = data.n();
    let functional = match &design {
        Some(d) => {
            let (_, j) = pipeline::dimensions(&fit_cfg, n, &ill, data.w().dim());
            match inference::construct_functional_from_phitilde(d, &cfg.phi_tilde_on(j)?, mode.operator_weight()) {
                Ok(l) => Some(l),
                Err(qbcmr_core::Error::Unsupported(_)) => None,
                Err(e) => return Err(e.into()),
            }
        }
        None => None,
    };
    let res = pipeline::fit_dataset(Arc::new(data), &model, &ill, &fit_cfg, functional.as_ref().map(|l| l.phi.coeffs()), cfg.seed)?;
    let interval = match (&functional, &design) {
        (Some(l), Some(d)) => {
            let ci = inference::credible_interval(&res.chain, l, cfg.gamma)?;
            let truth = inference::functional_value(l, &d.h0)?;
            Some(IntervalRecord { gamma: cfg.gamma, center: ci.center, radius: ci.radius, truth, hit: ci.contains(truth) })
        }
        _ => None,
    };
    let draws_path = out.join("draws.csv");
    let header: Vec<String> = (1..=res.j).map(|i| format!("theta{i}")).collect();
    let rows: Vec<Vec<Cell>> = res.chain.draws.iter().map(|d| d.iter().map(|v| Cell::Float(*v)).collect()).collect();
    output::write_csv(&draws_path, &header, &rows)?;
    let mean_path = out.join("posterior_mean.csv");
    let rows: Vec<Vec<Cell>> =
        res.posterior_mean.coeffs().iter().enumerate().map(|(i, v)| vec![Cell::from(i + 1), Cell::Float(*v)]).collect();
    output::write_csv(&mean_path, &["index".into(), "coefficient".into()], &rows)?;
    let diag = FitDiagnostics {
        seed: cfg.seed,
        n,
        k: res.k,
        j: res.j,
        weighting: mode.name(),
        prior_scale: res.prior_scale,
        accept_rate: res.chain.accept_rate,
        burn_accept_rate: res.chain.burn_accept_rate,
        ess_min: res.chain.ess_min,
        ess: res.chain.ess.clone(),
        ess_functional: res.chain.ess_functional,
        low_ess: res.chain.low_ess,
        beta_final: res.chain.step_final,
        draws: res.chain.draws.len(),
        interval,
    };
    let diag_path = out.join("diagnostics.jsonl");
    output::write_jsonl(&diag_path, &[diag])?;
    let warn = if res.chain.low_ess { " (warning: ess_min below 50)" } else { "" };
    Ok(StudyOutcome {
        files: vec![draws_path, mean_path, diag_path],
        summary: format!(
            "fit n={n} K={} J={}: accept {:.3}, ess_min {:.1}{warn}",
            res.k, res.j, res.chain.accept_rate, res.chain.ess_min
        ),
    })
}

#[derive(Debug, Serialize)]
struct CoverageReplicationRecord<'a> {
    record: &'static str,
    weighting: &'a str,
    replication: usize,
    seed: u64,
    truth: f64,
    center: f64,
    radius: f64,
    hit: bool,
    accept_rate: f64,
    ess_min: f64,
    k: usize,
}

#[derive(Debug, Serialize)]
pub struct CoverageSummaryRecord {
    pub record: &'static str,
    pub weighting: String,
    pub design: String,
    pub n: usize,
    pub gamma: f64,
    pub replications: usize,
    pub hits: usize,
    pub coverage: f64,
    pub std_error: f64,
    pub nominal: f64,
    pub abs_gap: f64,
    pub headline: bool,
}

/// Coverage for every configured weighting mode. Per-replication records and
/// one summary per mode go to `coverage.jsonl`; the summaries also go to
/// `coverage_summary.csv`.
pub fn run_coverage_study(cfg: &ExperimentConfig, out: &Path) -> Result<(StudyOutcome, Vec<CoverageSummary>)> {
    let design = cfg.resolve_design()?;
    let n = cfg.n.expect("validated");
    let modes = cfg.weight_modes()?;
    let mut lines = Vec::new();
    let mut summaries = Vec::new();
    let mut table = Vec::new();
    let mut text = Vec::new();
    for mode in &modes {
        let fit = cfg.fit_config(*mode)?;
        let (_, j) = pipeline::dimensions(&fit, n, &design.ill_posedness(), 1);
        let cc = CoverageConfig {
            design: design.clone(),
            n,
            replications: cfg.replications,
            gamma: cfg.gamma,
            phi_tilde: cfg.phi_tilde_on(j)?,
            fit,
            base_seed: cfg.seed,
        };
        let s = inference::coverage_study(&cc)?;
        for r in &s.records {
            lines.push(output::json_line(&CoverageReplicationRecord {
                record: "replication",
                weighting: mode.name(),
                replication: r.replication,
                seed: r.seed,
                truth: r.truth,
                center: r.center,
                radius: r.radius,
                hit: r.hit,
                accept_rate: r.accept_rate,
                ess_min: r.ess_min,
                k: r.k,
            })?);
        }
        let hits = s.records.iter().filter(|r| r.hit).count();
        let summary = CoverageSummaryRecord {
            record: "summary",
            weighting: mode.name().into(),
            design: cfg.design.clone().unwrap_or_default(),
            n,
            gamma: cfg.gamma,
            replications: s.records.len(),
            hits,
            coverage: s.coverage,
            std_error: s.std_error,
            nominal: s.nominal,
            abs_gap: (s.coverage - s.nominal).abs(),
            headline: *mode == WeightMode::Optimal,
        };
        lines.push(output::json_line(&summary)?);
        table.push(vec![
            Cell::from(mode.name()),
            Cell::from(s.records.len()),
            Cell::Float(s.coverage),
            Cell::Float(s.std_error),
            Cell::Float(s.nominal),
            Cell::Float(summary.abs_gap),
        ]);
        text.push(format!("{}: coverage {:.3} (se {:.3}, nominal {:.2})", mode.name(), s.coverage, s.std_error, s.nominal));
        summaries.push(s);
    }
    let jsonl = out.join("coverage.jsonl");
    write_lines(&jsonl, &lines)?;
    let csv_path = out.join("coverage_summary.csv");
    let header = ["weighting", "replications", "coverage", "std_error", "nominal", "abs_gap"].map(String::from);
    output::write_csv(&csv_path, &header, &table)?;
    Ok((StudyOutcome { files: vec![jsonl, csv_path], summary: text.join("; ") }, summaries))
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let mut body = lines.join("\n");
    body.push('\n');
    std::fs::write(path, body).map_err(|e| HarnessError::io(path, e))
}

#[derive(Debug, Serialize)]
struct RateReplicationRecord {
    record: &'static str,
    n: usize,
    replication: usize,
    seed: u64,
    k: usize,
    error: f64,
    accept_rate: f64,
    ess_min: f64,
}

#[derive(Debug, Serialize)]
struct RateSummaryRecord {
    record: &'static str,
    design: String,
    replications: usize,
    records: usize,
    n_grid: Vec<usize>,
    mean_errors: Vec<f64>,
    slope: f64,
    theoretical: Option<f64>,
}

/// Posterior-mean error over the n-grid: `rate.jsonl` (replications and a
/// summary) and `rate.csv` (one row per n).
pub fn run_rate_study(cfg: &ExperimentConfig, out: &Path) -> Result<(StudyOutcome, RateStudyResult)> {
    let design = cfg.resolve_design()?;
    let mode = cfg.weight_modes()?[0];
    let rc = RateStudyConfig {
        design,
        ns: cfg.n_grid.clone().expect("validated"),
        replications: cfg.replications,
        fit: cfg.fit_config(mode)?,
        base_seed: cfg.seed,
    };
    let res = pipeline::rate_study(&rc)?;
    let mut lines = Vec::new();
    for r in &res.records {
        lines.push(output::json_line(&RateReplicationRecord {
            record: "replication",
            n: r.n,
            replication: r.replication,
            seed: r.seed,
            k: r.k,
            error: r.error,
            accept_rate: r.accept_rate,
            ess_min: r.ess_min,
        })?);
    }
    lines.push(output::json_line(&RateSummaryRecord {
        record: "summary",
        design: cfg.design.clone().unwrap_or_default(),
        replications: cfg.replications,
        records: res.records.len(),
        n_grid: res.cells.iter().map(|c| c.n).collect(),
        mean_errors: res.cells.iter().map(|c| c.mean_error).collect(),
        slope: res.slope,
        theoretical: res.theoretical,
    })?);
    let jsonl = out.join("rate.jsonl");
    write_lines(&jsonl, &lines)?;
    let csv_path = out.join("rate.csv");
    let rows: Vec<Vec<Cell>> =
        res.cells.iter().map(|c| vec![Cell::from(c.n), Cell::from(c.k), Cell::Float(c.mean_error)]).collect();
    output::write_csv(&csv_path, &["n".into(), "k".into(), "mean_error".into()], &rows)?;
    let theo = res.theoretical.map(|t| format!("{t:.3}")).unwrap_or_else(|| "n/a".into());
    let summary = format!("slope {:.3} (theoretical {theo})", res.slope);
    Ok((StudyOutcome { files: vec![jsonl, csv_path], summary }, res))
}

/// Sample paths of the series prior for each configured regularity:
/// `prior_draws.csv` with a grid column `x` and one column per path.
pub fn run_prior_draw(cfg: &ExperimentConfig, out: &Path) -> Result<StudyOutcome> {
    let p = &cfg.prior_draw;
    let grid: Vec<f64> = (0..p.grid).map(|g| g as f64 / (p.grid - 1) as f64).collect();
    let basis = SieveBasisSpec::cosine(1, p.truncation)?;
    let design = basis::design_matrix(&basis, &Points::scalar(grid.clone()))?;
    let mut header = vec!["x".to_string()];
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (ai, &alpha) in p.alphas.iter().enumerate() {
        let prior = GaussianSeriesPrior::new(basis.clone(), alpha, p.scale)?;
        let mut r = rng::stream(cfg.seed, ai, Purpose::Prior);
        for d in 0..p.draws {
            let h = prior::sample_prior(&prior, &mut r);
            let path: Vec<f64> =
                (0..p.grid).map(|g| design.row(g).iter().zip(h.coeffs()).map(|(a, b)| a * b).sum()).collect();
            columns.push(path);
            header.push(if p.alphas.len() == 1 && p.draws == 1 {
                "path".into()
            } else {
                format!("alpha{alpha}_draw{}", d + 1)
            });
        }
    }
    let rows: Vec<Vec<Cell>> = grid
        .iter()
        .enumerate()
        .map(|(g, x)| std::iter::once(Cell::Float(*x)).chain(columns.iter().map(|c| Cell::Float(c[g]))).collect())
        .collect();
    let path = out.join("prior_draws.csv");
    output::write_csv(&path, &header, &rows)?;
    Ok(StudyOutcome { files: vec![path], summary: format!("{} paths on {} grid points", columns.len(), p.grid) })
}
