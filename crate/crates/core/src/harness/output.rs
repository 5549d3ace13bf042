use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::{median, quantile, Metric, RateFit};
use super::{group_points, pooled_se, HarnessError, OutputPaths, TrialRecord};
use crate::sources::ParamVector;

/// Column order of the record CSV. `theta` joins coordinates with `;`.
pub const CSV_COLUMNS: [&str; 13] = [
    "theta",
    "n",
    "seed",
    "dv_mean",
    "dv_max",
    "delta_mean",
    "bound_margin_min",
    "distortion_twostage",
    "distortion_matched",
    "redundancy",
    "redundancy_se",
    "rate_total",
    "header_bits",
];

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    theta: String,
    n: usize,
    seed: u64,
    dv_mean: f64,
    dv_max: f64,
    delta_mean: f64,
    bound_margin_min: f64,
    distortion_twostage: f64,
    distortion_matched: f64,
    redundancy: f64,
    redundancy_se: f64,
    rate_total: f64,
    header_bits: u32,
}

fn io(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

pub fn write_csv(records: &[TrialRecord], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| io(path, e))?;
    w.write_record(CSV_COLUMNS).map_err(|e| io(path, e))?;
    for r in records {
        w.serialize(Row {
            theta: r.theta.to_string(),
            n: r.n,
            seed: r.seed,
            dv_mean: r.dv_mean,
            dv_max: r.dv_max,
            delta_mean: r.delta_mean,
            bound_margin_min: r.bound_margin_min,
            distortion_twostage: r.distortion_twostage,
            distortion_matched: r.distortion_matched,
            redundancy: r.redundancy,
            redundancy_se: r.redundancy_se,
            rate_total: r.rate_total,
            header_bits: r.header_bits,
        })
        .map_err(|e| io(path, e))?;
    }
    w.flush().map_err(|e| io(path, e))
}

/// Reads a record CSV. Fields outside the CSV come back at their defaults,
/// with `theta_index` numbered by first appearance.
pub fn read_csv(path: &Path) -> Result<Vec<TrialRecord>, HarnessError> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| io(path, e))?;
    let header: Vec<String> = rdr.headers().map_err(|e| io(path, e))?.iter().map(str::to_string).collect();
    if header != CSV_COLUMNS {
        return Err(io(path, format!("unexpected header {header:?}")));
    }
    let mut thetas: Vec<ParamVector> = Vec::new();
    let mut out = Vec::new();
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| io(path, e))?;
        let coords = row
            .theta
            .split(';')
            .map(|c| c.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| io(path, format!("row {}: theta: {e}", i + 1)))?;
        let theta = ParamVector::new(coords);
        let theta_index = match thetas.iter().position(|t| *t == theta) {
            Some(j) => j,
            None => {
                thetas.push(theta.clone());
                thetas.len() - 1
            }
        };
        let mut r = TrialRecord::empty(theta, row.n, row.seed);
        r.dv_mean = row.dv_mean;
        r.dv_max = row.dv_max;
        r.delta_mean = row.delta_mean;
        r.bound_margin_min = row.bound_margin_min;
        r.distortion_twostage = row.distortion_twostage;
        r.distortion_matched = row.distortion_matched;
        r.redundancy = row.redundancy;
        r.redundancy_se = row.redundancy_se;
        r.rate_total = row.rate_total;
        r.header_bits = row.header_bits;
        r.theta_index = theta_index;
        out.push(r);
    }
    Ok(out)
}

pub fn write_summary(records: &[TrialRecord], fits: &[(String, RateFit)], path: &Path) -> Result<(), HarnessError> {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<16} {:>6} {:>6} {:>10} {:>10} {:>10} {:>11} {:>11} {:>11} {:>11} {:>10} {:>8} {:>6}",
        "theta",
        "n",
        "trials",
        "dv_median",
        "dv_max",
        "delta",
        "margin_min",
        "D_twostage",
        "D_matched",
        "redundancy",
        "red_se",
        "rate",
        "hbits"
    );
    for (theta, n, g) in group_points(records) {
        let col = |f: fn(&TrialRecord) -> f64| g.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let mean = |v: Vec<f64>| v.iter().sum::<f64>() / v.len() as f64;
        let _ = writeln!(
            s,
            "{:<16} {:>6} {:>6} {:>10.4e} {:>10.4e} {:>10.4e} {:>11.3e} {:>11.5e} {:>11.5e} {:>11.3e} {:>10.2e} {:>8.5} {:>6}",
            theta.to_string(),
            n,
            g.len(),
            median(&col(|r| r.dv_mean)),
            col(|r| r.dv_max).into_iter().fold(0.0, f64::max),
            mean(col(|r| r.delta_mean)),
            col(|r| r.bound_margin_min).into_iter().fold(f64::INFINITY, f64::min),
            mean(col(|r| r.distortion_twostage)),
            mean(col(|r| r.distortion_matched)),
            mean(col(|r| r.redundancy)),
            pooled_se(&g),
            g[0].rate_total,
            g[0].header_bits,
        );
    }
    for (label, fit) in fits {
        let _ = writeln!(
            s,
            "\nfit {label}: slope {:.4} (90% CI {:.4} .. {:.4}), intercept {:.4}, R^2 {:.4}",
            fit.slope, fit.ci_low, fit.ci_high, fit.intercept, fit.r_squared
        );
    }
    fs::write(path, s).map_err(|e| io(path, e))
}

/// `theta, n, metric, median, q1, q3` for external plotting.
pub fn write_plot_data(records: &[TrialRecord], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io(path, e))?;
    w.write_record(["theta", "n", "metric", "median", "q1", "q3"]).map_err(|e| io(path, e))?;
    for (theta, n, g) in group_points(records) {
        for metric in [Metric::DvError, Metric::Redundancy] {
            let v: Vec<f64> = g.iter().map(|r| metric.of(r)).collect();
            w.write_record([
                theta.to_string(),
                n.to_string(),
                metric.name().to_string(),
                median(&v).to_string(),
                quantile(&v, 0.25).to_string(),
                quantile(&v, 0.75).to_string(),
            ])
            .map_err(|e| io(path, e))?;
        }
    }
    w.flush().map_err(|e| io(path, e))
}

/// Writes whichever outputs have a path.
pub fn emit_outputs(records: &[TrialRecord], fits: &[(String, RateFit)], paths: &OutputPaths) -> Result<(), HarnessError> {
    if let Some(p) = &paths.csv {
        write_csv(records, p)?;
    }
    if let Some(p) = &paths.summary {
        write_summary(records, fits, p)?;
    }
    if let Some(p) = &paths.plot {
        write_plot_data(records, p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records() -> Vec<TrialRecord> {
        (0..3)
            .map(|t| {
                let mut r = TrialRecord::empty(ParamVector::new(vec![0.7, 0.3]), 64, 1000 + t);
                r.trial = t as usize;
                r.dv_mean = 0.1 / (t + 1) as f64;
                r.redundancy = 1e-3 * t as f64 - 1.0 / 3.0;
                r.header_bits = 4;
                r.rate_total = 68.0 / 64.0;
                r
            })
            .collect()
    }

    #[test]
    fn empty_csv_has_only_the_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_csv(&[], &p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), CSV_COLUMNS.join(",") + "\n");
        assert!(read_csv(&p).unwrap().is_empty());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let recs = records();
        write_csv(&recs, &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert!(text.lines().all(|l| l.split(',').count() == 13));
        let back = read_csv(&p).unwrap();
        for (a, b) in recs.iter().zip(&back) {
            assert_eq!((a.dv_mean, a.redundancy, a.seed, &a.theta), (b.dv_mean, b.redundancy, b.seed, &b.theta));
        }
    }

    #[test]
    fn summary_and_plot() {
        let dir = tempfile::tempdir().unwrap();
        let paths = OutputPaths {
            csv: Some(dir.path().join("a.csv")),
            summary: Some(dir.path().join("s.txt")),
            plot: Some(dir.path().join("p.csv")),
        };
        emit_outputs(&records(), &[], &paths).unwrap();
        let summary = fs::read_to_string(paths.summary.unwrap()).unwrap();
        assert_eq!(summary.lines().count(), 2);
        let plot = fs::read_to_string(paths.plot.unwrap()).unwrap();
        assert_eq!(plot.lines().count(), 3);
        assert!(plot.contains("0.7;0.3,64,dv_error,0.05,"));
    }

    #[test]
    fn unwritable_path() {
        let e = write_csv(&[], Path::new("/nonexistent-dir/x.csv")).unwrap_err();
        assert!(matches!(e, HarnessError::Io(_)));
    }
}
