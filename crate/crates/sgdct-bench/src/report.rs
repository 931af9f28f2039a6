//! Case reports, quantile statistics and deterministic CSV emission.
//!
//! Errors follow the benchmark convention: for a parameter group θ with
//! truth θ*, `abs_err = ‖θ − θ*‖₂` over the stacked entries and
//! `pct_err = 100 · ‖θ − θ*‖₂ / ‖θ*‖₂`.

use crate::config::{render_config, ExperimentConfig};
use crate::{BenchError, Result};
use std::fmt::Write as _;
use std::path::Path;

/// One named error metric at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub name: String,
    pub true_norm: f64,
    pub estimate_norm: f64,
    pub abs_err: f64,
    pub pct_err: f64,
}

impl MetricRow {
    /// Build a row from stacked parameter vectors.
    pub fn from_params(name: &str, truth: &[f64], estimate: &[f64]) -> Self {
        let true_norm = norm(truth);
        let abs_err = truth
            .iter()
            .zip(estimate.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        Self {
            name: name.to_string(),
            true_norm,
            estimate_norm: norm(estimate),
            abs_err,
            pct_err: pct_error(abs_err, true_norm),
        }
    }
}

/// `100 · |θ − θ*| / |θ*|`.
pub fn pct_error(abs_err: f64, true_norm: f64) -> f64 {
    100.0 * abs_err / true_norm
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseSample {
    pub t: f64,
    pub metrics: Vec<MetricRow>,
}

#[derive(Debug, Clone)]
pub struct CaseReport {
    pub case_id: u64,
    /// Per-case failure; failed cases contribute no sample rows.
    pub error: Option<String>,
    pub samples: Vec<CaseSample>,
}

impl CaseReport {
    pub fn failed(case_id: u64, error: String) -> Self {
        Self {
            case_id,
            error: Some(error),
            samples: Vec::new(),
        }
    }

    pub fn metric_at(&self, t: f64, name: &str) -> Option<&MetricRow> {
        self.samples
            .iter()
            .find(|s| (s.t - t).abs() <= 1e-9 * t.abs().max(1.0))
            .and_then(|s| s.metrics.iter().find(|m| m.name == name))
    }
}

/// Empirical quantile with linear interpolation at rank `p (n−1)`.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let p = p.clamp(0.0, 1.0);
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let w = pos - lo as f64;
        sorted[lo] * (1.0 - w) + sorted[hi] * w
    }
}

/// Quantiles plus max, mean and MSE of a sample.
pub fn quantile_table(errors: &[f64], quantiles: &[f64]) -> Result<Vec<(String, f64)>> {
    if errors.is_empty() {
        return Err(BenchError::Config("quantile table of empty input".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN errors"));
    let mut rows = Vec::new();
    for &q in quantiles {
        rows.push((format!("quantile_{}", fmt_quantile(q)), quantile(&sorted, q)));
    }
    rows.push(("maximum".into(), *sorted.last().unwrap()));
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    rows.push(("mean".into(), mean));
    let mse = sorted.iter().map(|e| e * e).sum::<f64>() / sorted.len() as f64;
    rows.push(("mean_squared".into(), mse));
    Ok(rows)
}

fn fmt_quantile(q: f64) -> String {
    let pct = q * 100.0;
    if (pct - pct.round()).abs() < 1e-9 {
        format!("{}", pct.round() as i64)
    } else {
        format!("{}", pct).replace('.', "_")
    }
}

/// Table-1-style summary statistics of one metric at one sample time.
/// Row labels are the table's row names normalized to snake case.
pub fn summary_rows(reports: &[CaseReport], metric: &str, t: f64) -> Result<Vec<(String, f64)>> {
    let mut abs = Vec::new();
    let mut pct = Vec::new();
    for r in reports.iter().filter(|r| r.error.is_none()) {
        if let Some(m) = r.metric_at(t, metric) {
            abs.push(m.abs_err);
            pct.push(m.pct_err);
        }
    }
    if abs.is_empty() {
        return Err(BenchError::Config(format!(
            "no '{metric}' samples at t = {t}"
        )));
    }
    abs.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN"));
    pct.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN"));
    let mean_sq = abs.iter().map(|e| e * e).sum::<f64>() / abs.len() as f64;
    let mean_pct = pct.iter().sum::<f64>() / pct.len() as f64;
    Ok(vec![
        ("maximum_error".into(), *abs.last().unwrap()),
        ("quantile_99_of_error".into(), quantile(&abs, 0.99)),
        ("quantile_99_9_of_error".into(), quantile(&abs, 0.999)),
        ("mean_squared_error".into(), mean_sq),
        ("mean_error_in_percent".into(), mean_pct),
        ("maximum_error_in_percent".into(), *pct.last().unwrap()),
        (
            "quantile_99_of_error_in_percent".into(),
            quantile(&pct, 0.99),
        ),
        (
            "quantile_99_9_of_error_in_percent".into(),
            quantile(&pct, 0.999),
        ),
    ])
}

pub const CASES_HEADER: &str = "case_id,t,param_name,true,estimate,abs_err,pct_err";

pub fn cases_csv(reports: &[CaseReport]) -> String {
    let mut out = String::from(CASES_HEADER);
    out.push('\n');
    for r in reports {
        for s in &r.samples {
            for m in &s.metrics {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.case_id, s.t, m.name, m.true_norm, m.estimate_norm, m.abs_err, m.pct_err
                );
            }
        }
    }
    out
}

pub fn summary_csv(reports: &[CaseReport], metric: &str, sample_times: &[f64]) -> Result<String> {
    let mut out = String::from("statistic,t,value\n");
    for &t in sample_times {
        for (stat, value) in summary_rows(reports, metric, t)? {
            let _ = writeln!(out, "{stat},{t},{value}");
        }
    }
    let failed = reports.iter().filter(|r| r.error.is_some()).count();
    let _ = writeln!(out, "failed_cases,,{failed}");
    Ok(out)
}

/// Parsed back form of `cases.csv` used by the quantiles subcommand.
#[derive(Debug, Clone)]
pub struct CaseRow {
    pub case_id: u64,
    pub t: f64,
    pub param_name: String,
    pub abs_err: f64,
    pub pct_err: f64,
}

pub fn parse_cases_csv(text: &str) -> Result<Vec<CaseRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CASES_HEADER => {}
        _ => return Err(BenchError::Config("unrecognized cases.csv header".into())),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(BenchError::Config(format!(
                "cases.csv line {}: expected 7 fields",
                i + 2
            )));
        }
        let err = |e: std::num::ParseFloatError| BenchError::Config(format!("line {}: {e}", i + 2));
        rows.push(CaseRow {
            case_id: f[0]
                .parse()
                .map_err(|e| BenchError::Config(format!("line {}: {e}", i + 2)))?,
            t: f[1].parse().map_err(err)?,
            param_name: f[2].to_string(),
            abs_err: f[5].parse().map_err(err)?,
            pct_err: f[6].parse().map_err(err)?,
        });
    }
    Ok(rows)
}

/// Write `cases.csv`, `summary.csv` and `run.meta` into the output directory.
pub fn emit_reports(
    reports: &[CaseReport],
    cfg: &ExperimentConfig,
    metric: &str,
    extra_meta: &[(String, String)],
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| BenchError::io(dir, e))?;
    let cases_path = dir.join("cases.csv");
    std::fs::write(&cases_path, cases_csv(reports)).map_err(|e| BenchError::io(&cases_path, e))?;

    let summary_path = dir.join("summary.csv");
    let summary = if cfg.sample_times.is_empty() {
        let failed = reports.iter().filter(|r| r.error.is_some()).count();
        format!("statistic,t,value\nfailed_cases,,{failed}\n")
    } else {
        summary_csv(reports, metric, &cfg.sample_times)?
    };
    std::fs::write(&summary_path, summary).map_err(|e| BenchError::io(&summary_path, e))?;

    let mut meta = String::new();
    meta.push_str("# resolved run configuration\n");
    meta.push_str(&render_config(cfg));
    meta.push_str("\n[meta]\n");
    meta.push_str(&format!("sgdct_version = {}\n", sgdct_version()));
    meta.push_str(&format!("bench_version = {}\n", env!("CARGO_PKG_VERSION")));
    meta.push_str("error_norm = euclidean-over-stacked-parameters\n");
    meta.push_str(&format!("summary_metric = {metric}\n"));
    for (k, v) in extra_meta {
        meta.push_str(&format!("{k} = {v}\n"));
    }
    let failed: Vec<&CaseReport> = reports.iter().filter(|r| r.error.is_some()).collect();
    if !failed.is_empty() {
        meta.push_str("\n[failures]\n");
        for r in failed {
            meta.push_str(&format!(
                "case_{} = {}\n",
                r.case_id,
                r.error.as_deref().unwrap_or("")
            ));
        }
    }
    let meta_path = dir.join("run.meta");
    std::fs::write(&meta_path, meta).map_err(|e| BenchError::io(&meta_path, e))?;
    Ok(())
}

fn sgdct_version() -> &'static str {
    // the workspace pins both crates to one version
    env!("CARGO_PKG_VERSION")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolation_convention() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        let c = [7.0, 7.0, 7.0];
        for p in [0.0, 0.3, 0.99] {
            assert_eq!(quantile(&c, p), 7.0);
        }
    }

    /// Brute-force oracle: sort and index with explicit interpolation,
    /// written independently of `quantile`.
    fn naive_quantile(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        let rank = p * (n as f64 - 1.0);
        let i = rank as usize;
        if i + 1 >= n {
            return v[n - 1];
        }
        let frac = rank - i as f64;
        v[i] + frac * (v[i + 1] - v[i])
    }

    #[test]
    fn quantiles_match_naive_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let n = rng.random_range(1..40);
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            let p: f64 = rng.random_range(0.0..1.0);
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let a = quantile(&sorted, p);
            let b = naive_quantile(&values, p);
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn quantile_table_rows() {
        let rows = quantile_table(&[3.0, 1.0, 2.0, 4.0], &[0.5, 0.99]).unwrap();
        let get = |name: &str| rows.iter().find(|(n, _)| n == name).unwrap().1;
        assert_eq!(get("quantile_50"), 2.5);
        assert_eq!(get("maximum"), 4.0);
        assert_eq!(get("mean"), 2.5);
        assert_eq!(get("mean_squared"), 7.5);
        assert!(quantile_table(&[], &[0.5]).is_err());
    }

    #[test]
    fn pct_error_matches_definition() {
        // 100 · |θ − θ*| / |θ*| on a hand case
        let m = MetricRow::from_params("all", &[3.0, 4.0], &[3.0, 4.5]);
        assert_eq!(m.true_norm, 5.0);
        assert!((m.abs_err - 0.5).abs() < 1e-15);
        assert!((m.pct_err - 10.0).abs() < 1e-12);
    }

    fn tiny_reports() -> Vec<CaseReport> {
        let mk = |id: u64, err: f64| CaseReport {
            case_id: id,
            error: None,
            samples: vec![CaseSample {
                t: 10.0,
                metrics: vec![MetricRow {
                    name: "all".into(),
                    true_norm: 2.0,
                    estimate_norm: 2.0 + err,
                    abs_err: err,
                    pct_err: 100.0 * err / 2.0,
                }],
            }],
        };
        vec![mk(0, 0.1), mk(1, 0.3)]
    }

    #[test]
    fn summary_has_exact_statistic_names() {
        let rows = summary_rows(&tiny_reports(), "all", 10.0).unwrap();
        let names: Vec<&str> = rows.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(
            names,
            vec![
                "maximum_error",
                "quantile_99_of_error",
                "quantile_99_9_of_error",
                "mean_squared_error",
                "mean_error_in_percent",
                "maximum_error_in_percent",
                "quantile_99_of_error_in_percent",
                "quantile_99_9_of_error_in_percent",
            ]
        );
    }

    #[test]
    fn cases_csv_round_trip() {
        let text = cases_csv(&tiny_reports());
        assert!(text.starts_with(CASES_HEADER));
        let rows = parse_cases_csv(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].case_id, 1);
        assert_eq!(rows[1].pct_err, 15.0);
        assert!(parse_cases_csv("bad\n").is_err());
    }

    #[test]
    fn empty_reports_yield_header_only_csv() {
        assert_eq!(cases_csv(&[]), format!("{CASES_HEADER}\n"));
    }
}
