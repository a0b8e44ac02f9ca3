use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::explainers::ExplainerKind;
use crate::metrics::DegradationReport;
use crate::stats::mean_std;

/// Metric record for one image and explainer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub image_id: String,
    pub explainer: ExplainerKind,
    pub target_class: usize,
    pub deletion_auc: f64,
    pub deletion_plus_auc: Option<f64>,
    pub pointing_hit: bool,
    pub pointing_ambiguous: bool,
    pub iosr: f64,
    pub wiosr: f64,
    pub degradation: DegradationReport,
}

/// Report columns, in CSV order.
pub const METRICS: [&str; 6] = [
    "deletion",
    "deletion_plus",
    "pointing_game",
    "iosr",
    "wiosr",
    "degraded_rate",
];

/// Metrics where a smaller value is better.
pub fn lower_is_better(metric: &str) -> bool {
    metric.starts_with("deletion")
}

impl ImageMetrics {
    fn value(&self, metric: &str) -> Option<f64> {
        match metric {
            "deletion" => Some(self.deletion_auc),
            "deletion_plus" => self.deletion_plus_auc,
            "pointing_game" => Some(f64::from(u8::from(self.pointing_hit))),
            "iosr" => Some(self.iosr),
            "wiosr" => Some(self.wiosr),
            "degraded_rate" => Some(f64::from(u8::from(self.degradation.degraded))),
            _ => None,
        }
    }
}

/// Mean and sample standard deviation of per-group means.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub mean: f64,
    /// Absent with a single group.
    pub std: Option<f64>,
}

/// One dataset-level row per explainer.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub explainer: String,
    pub n_images: usize,
    pub n_groups: usize,
    pub group_size: usize,
    pub image_set: String,
    /// Indexed like [`METRICS`]; `None` when the metric was not computed.
    pub stats: Vec<Option<GroupStats>>,
}

impl ReportRow {
    pub fn stat(&self, metric: &str) -> Option<GroupStats> {
        METRICS.iter().position(|m| *m == metric).and_then(|i| self.stats[i])
    }
}

/// Aggregates per-image records (all for one explainer) over `groups`, each a
/// list of indices into `records`.
pub fn aggregate(
    explainer: &str,
    records: &[&ImageMetrics],
    groups: &[Vec<usize>],
    image_set: &str,
) -> Result<ReportRow> {
    if groups.is_empty() || groups.iter().any(Vec::is_empty) {
        return Err(validation("every group needs at least one image"));
    }
    let stats = METRICS
        .iter()
        .map(|metric| {
            let means: Option<Vec<f64>> = groups
                .iter()
                .map(|g| {
                    let vals: Option<Vec<f64>> = g.iter().map(|&i| records[i].value(metric)).collect();
                    vals.map(|v| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            means
                .and_then(|m| mean_std(&m))
                .map(|(mean, std)| GroupStats { mean, std })
        })
        .collect();
    Ok(ReportRow {
        explainer: explainer.to_string(),
        n_images: records.len(),
        n_groups: groups.len(),
        group_size: groups[0].len(),
        image_set: image_set.to_string(),
        stats,
    })
}

fn header() -> Vec<String> {
    let mut h: Vec<String> = ["explainer", "n_images", "n_groups", "group_size", "image_set"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for m in METRICS {
        h.push(format!("{m}_mean"));
        h.push(format!("{m}_std"));
    }
    h
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_report(rows: &[ReportRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header()).map_err(|e| csv_error(path, e))?;
    for row in rows {
        let mut rec = vec![
            row.explainer.clone(),
            row.n_images.to_string(),
            row.n_groups.to_string(),
            row.group_size.to_string(),
            row.image_set.clone(),
        ];
        for s in &row.stats {
            rec.push(fmt_opt(s.map(|s| s.mean)));
            rec.push(fmt_opt(s.and_then(|s| s.std)));
        }
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        }
    } else {
        Error::Decode {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

pub fn read_report(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let expected = header();
    let found: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if found != expected {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            message: format!("unexpected header {found:?}"),
        });
    }
    let bad = |message: String| Error::Decode {
        path: path.to_path_buf(),
        message,
    };
    let num = |s: &str| -> Result<Option<f64>> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse().map(Some).map_err(|_| bad(format!("not a number: {s:?}")))
        }
    };
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_error(path, e))?;
        let int = |i: usize| {
            rec[i]
                .parse::<usize>()
                .map_err(|_| bad(format!("not an integer: {:?}", &rec[i])))
        };
        let mut stats = Vec::new();
        for k in 0..METRICS.len() {
            let mean = num(&rec[5 + 2 * k])?;
            let std = num(&rec[6 + 2 * k])?;
            stats.push(mean.map(|mean| GroupStats { mean, std }));
        }
        rows.push(ReportRow {
            explainer: rec[0].to_string(),
            n_images: int(1)?,
            n_groups: int(2)?,
            group_size: int(3)?,
            image_set: rec[4].to_string(),
            stats,
        });
    }
    Ok(rows)
}

/// Relative change of one metric between paired report rows.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Gain {
    pub explainer_a: String,
    pub explainer_b: String,
    pub metric: String,
    pub a: f64,
    pub b: f64,
    /// `(b − a) / a`; absent when `a` is zero.
    pub gain: Option<f64>,
    /// Whether `b` improves on `a` under the metric's direction.
    pub improved: bool,
}

/// Pairs rows in order and computes per-metric relative gains of `b` over `a`.
pub fn compare(a: &[ReportRow], b: &[ReportRow]) -> Result<Vec<Gain>> {
    if a.len() != b.len() {
        return Err(validation(format!("reports have {} and {} rows", a.len(), b.len())));
    }
    let mut gains = Vec::new();
    for (ra, rb) in a.iter().zip(b) {
        if ra.image_set != rb.image_set || ra.n_images != rb.n_images {
            return Err(validation(format!(
                "{} and {} were evaluated on different image sets",
                ra.explainer, rb.explainer
            )));
        }
        for metric in METRICS {
            let (Some(sa), Some(sb)) = (ra.stat(metric), rb.stat(metric)) else {
                continue;
            };
            let gain = (sa.mean != 0.0).then(|| (sb.mean - sa.mean) / sa.mean);
            let improved = if lower_is_better(metric) {
                sb.mean < sa.mean
            } else {
                sb.mean > sa.mean
            };
            gains.push(Gain {
                explainer_a: ra.explainer.clone(),
                explainer_b: rb.explainer.clone(),
                metric: metric.to_string(),
                a: sa.mean,
                b: sb.mean,
                gain,
                improved,
            });
        }
    }
    Ok(gains)
}

pub fn write_gains<W: std::io::Write>(gains: &[Gain], out: W) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["explainer_a", "explainer_b", "metric", "a", "b", "gain", "improved"])?;
    for g in gains {
        w.write_record([
            g.explainer_a.clone(),
            g.explainer_b.clone(),
            g.metric.clone(),
            g.a.to_string(),
            g.b.to_string(),
            fmt_opt(g.gain),
            g.improved.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(id: &str, del: f64, wiosr: f64, hit: bool) -> ImageMetrics {
        ImageMetrics {
            image_id: id.into(),
            explainer: ExplainerKind::Rise,
            target_class: 0,
            deletion_auc: del,
            deletion_plus_auc: None,
            pointing_hit: hit,
            pointing_ambiguous: false,
            iosr: 0.5,
            wiosr,
            degradation: DegradationReport {
                r: 0.1,
                degraded: false,
            },
        }
    }

    fn row(name: &str, del: f64, wiosr: f64) -> ReportRow {
        let recs = [record("a", del, wiosr, true)];
        let refs: Vec<&ImageMetrics> = recs.iter().collect();
        aggregate(name, &refs, &[vec![0]], "set").unwrap()
    }

    #[test]
    fn group_statistics() {
        let recs = [
            record("a", 0.2, 0.5, true),
            record("b", 0.4, 0.7, false),
            record("c", 0.6, 0.9, true),
        ];
        let refs: Vec<&ImageMetrics> = recs.iter().collect();
        let r = aggregate("rise", &refs, &[vec![0, 1], vec![1, 2]], "x").unwrap();
        let del = r.stat("deletion").unwrap();
        assert!((del.mean - 0.4).abs() < 1e-15);
        assert!((del.std.unwrap() - 0.2 / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.stat("pointing_game").unwrap().mean, 0.5);
        assert_eq!(r.stat("pointing_game").unwrap().std, Some(0.0));
        assert!(r.stat("deletion_plus").is_none());

        let same = aggregate("rise", &refs, &[vec![0, 1, 2], vec![0, 1, 2]], "x").unwrap();
        assert!(same.stats.iter().flatten().all(|s| s.std == Some(0.0)));
        let single = aggregate("rise", &refs, &[vec![0, 1, 2]], "x").unwrap();
        assert!(single.stats.iter().flatten().all(|s| s.std.is_none()));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        let rows = vec![row("rise", 0.116, 0.657), row("rise+", 0.1 + 0.013, 0.674)];
        write_report(&rows, &path).unwrap();
        assert_eq!(read_report(&path).unwrap(), rows);
    }

    #[test]
    fn gains_use_plain_ratio() {
        let g = compare(&[row("rise", 0.116, 0.657)], &[row("rise+", 0.113, 0.674)]).unwrap();
        let del = g.iter().find(|g| g.metric == "deletion").unwrap();
        assert!((del.gain.unwrap() * 100.0 - -2.586).abs() < 1e-3);
        assert!(del.improved);
        let w = g.iter().find(|g| g.metric == "wiosr").unwrap();
        assert!((w.gain.unwrap() * 100.0 - 2.587).abs() < 1e-3);
        assert!(w.improved);

        let halved = compare(&[row("a", 0.2, 0.5)], &[row("b", 0.1, 0.5)]).unwrap();
        assert_eq!(halved.iter().find(|g| g.metric == "deletion").unwrap().gain, Some(-0.5));

        let same = compare(&[row("a", 0.2, 0.5)], &[row("a", 0.2, 0.5)]).unwrap();
        for g in &same {
            // A zero baseline has no relative gain.
            let expect = if g.a == 0.0 { None } else { Some(0.0) };
            assert_eq!(g.gain, expect, "{}", g.metric);
            assert!(!g.improved);
        }
    }

    #[test]
    fn compare_rejects_mismatched_sets() {
        let mut other = row("b", 0.1, 0.5);
        other.image_set = "other".into();
        assert!(compare(&[row("a", 0.2, 0.5)], &[other]).is_err());
        assert!(compare(&[row("a", 0.2, 0.5)], &[]).is_err());
    }
}
