//! Report emitters.
//!
//! Every JSON document carries `schema_version`. Reals are written with six
//! decimals (JSON values are rounded to six decimals). CSV headers:
//!
//! - AMS per-face: `image,face,ar,width,max_iou,matched`
//! - crop simulation: `image,face,crops_seen,crops_positive,best_observed_iou,best_ideal_iou`

use std::fmt::Write as _;
use std::str::FromStr;

use serde_json::{json, Value};

use crate::ams::{AmsReport, FaceMatchStat};
use crate::corpus::CorpusSummary;
use crate::cropsim::SimOutcome;
use crate::matching::{LabelCounts, MatchConfig};
use crate::rfd::RfdSpec;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const AMS_CSV_HEADER: &str = "image,face,ar,width,max_iou,matched";
pub const SIM_CSV_HEADER: &str = "image,face,crops_seen,crops_positive,best_observed_iou,best_ideal_iou";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Table,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "table" | "text" => Ok(ReportFormat::Table),
            other => Err(Error::validation(format!(
                "unknown report format {other:?} (expected json, csv or table)"
            ))),
        }
    }
}

fn r6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

fn opt6(v: Option<f64>) -> Value {
    v.map_or(Value::Null, |v| json!(r6(v)))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("JSON value serializes");
    s.push('\n');
    s
}

pub fn ams_report_value(report: &AmsReport) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "t_p": r6(report.t_p),
        "anchor_ar": r6(report.anchor_ar),
        "matched_ar_min": opt6(report.matched_ar_min),
        "matched_ar_max": opt6(report.matched_ar_max),
        "fitted_eta": opt6(report.fitted_eta),
        "analytic_eta": opt6(report.analytic_eta),
        "range_defined": report.range_defined(),
        "n_faces": report.n_faces,
        "n_matched": report.n_matched,
        "n_faces_total": report.n_faces_total,
    })
}

pub fn ams_report_json(report: &AmsReport) -> String {
    pretty(&ams_report_value(report))
}

/// One Table-1-style row per report: threshold, anchor AR, matched range,
/// fitted domain and the analytic domain.
pub fn ams_table(reports: &[AmsReport]) -> String {
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            let range = match (r.matched_ar_min, r.matched_ar_max) {
                (Some(lo), Some(hi)) => format!("{lo:.6} ∼ {hi:.6}"),
                _ => "-".to_string(),
            };
            let dom = |eta: Option<f64>| eta.map_or("-".to_string(), |e| format!("D({:.2},{:.2})", r.anchor_ar, e));
            [
                format!("{:.2}", r.t_p),
                format!("{:.2}", r.anchor_ar),
                range,
                dom(r.fitted_eta),
                dom(r.analytic_eta),
            ]
        })
        .collect();
    let header = ["T_p", "R^a", "Range", "ARSD", "Analytic"].map(String::from);
    aligned(std::iter::once(&header).chain(rows.iter()))
}

fn aligned<'a, const N: usize>(rows: impl Iterator<Item = &'a [String; N]> + Clone) -> String {
    let mut widths = [0usize; N];
    for row in rows.clone() {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    for row in rows {
        let mut line = String::new();
        for (i, (cell, w)) in row.iter().zip(widths).enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(cell);
            if i + 1 < N {
                line.extend(std::iter::repeat_n(' ', w - cell.chars().count()));
            }
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn csv_string(header: &str, rows: impl Iterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header.split(','))
        .map_err(|e| Error::validation(e.to_string()))?;
    for row in rows {
        w.write_record(&row).map_err(|e| Error::validation(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::validation(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

pub fn face_stats_csv(stats: &[FaceMatchStat]) -> Result<String> {
    csv_string(
        AMS_CSV_HEADER,
        stats.iter().map(|s| {
            vec![
                s.image.clone(),
                s.face.to_string(),
                format!("{:.6}", s.ar),
                format!("{:.6}", s.width),
                format!("{:.6}", s.max_iou),
                s.matched.to_string(),
            ]
        }),
    )
}

/// AMS output in the requested format: JSON report, per-face CSV, or a
/// table row.
pub fn emit_ams(report: &AmsReport, stats: &[FaceMatchStat], format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(ams_report_json(report)),
        ReportFormat::Csv => face_stats_csv(stats),
        ReportFormat::Table => Ok(ams_table(std::slice::from_ref(report))),
    }
}

pub fn sim_outcome_value(outcome: &SimOutcome) -> Value {
    json!({
        "schema_version": SCHEMA_VERSION,
        "seed": outcome.seed,
        "n_crops": outcome.n_crops,
        "per_face": outcome.per_face.iter().map(|f| json!({
            "image": f.image,
            "face": f.face,
            "crops_seen": f.crops_seen,
            "crops_positive": f.crops_positive,
            "best_observed_iou": r6(f.best_observed_iou),
            "best_ideal_iou": r6(f.best_ideal_iou),
        })).collect::<Vec<_>>(),
    })
}

pub fn emit_sim(outcome: &SimOutcome, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(pretty(&sim_outcome_value(outcome))),
        ReportFormat::Csv => csv_string(
            SIM_CSV_HEADER,
            outcome.per_face.iter().map(|f| {
                vec![
                    f.image.clone(),
                    f.face.to_string(),
                    f.crops_seen.to_string(),
                    f.crops_positive.to_string(),
                    format!("{:.6}", f.best_observed_iou),
                    format!("{:.6}", f.best_ideal_iou),
                ]
            }),
        ),
        ReportFormat::Table => {
            let header = ["image", "face", "seen", "positive", "best_iou", "ideal_iou"].map(String::from);
            let rows: Vec<[String; 6]> = outcome
                .per_face
                .iter()
                .map(|f| {
                    [
                        f.image.clone(),
                        f.face.to_string(),
                        f.crops_seen.to_string(),
                        f.crops_positive.to_string(),
                        format!("{:.6}", f.best_observed_iou),
                        format!("{:.6}", f.best_ideal_iou),
                    ]
                })
                .collect();
            Ok(aligned(std::iter::once(&header).chain(rows.iter())))
        }
    }
}

/// Aggregate label statistics for a label-assignment run over a corpus.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchSummary {
    pub images: usize,
    pub faces: usize,
    pub faces_with_positive: usize,
    pub faces_compensated: usize,
    pub labels: LabelCounts,
}

impl MatchSummary {
    pub fn mean_positives_per_face(&self) -> f64 {
        if self.faces == 0 {
            0.0
        } else {
            self.labels.positive as f64 / self.faces as f64
        }
    }
}

pub fn emit_match(cfg: &MatchConfig, summary: &MatchSummary, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(pretty(&json!({
            "schema_version": SCHEMA_VERSION,
            "config": {
                "strategy": cfg.strategy,
                "t0": cfg.t0,
                "tn": cfg.tn,
                "delta": cfg.delta,
                "eta0": cfg.eta0,
                "eta1": cfg.eta1,
                "anchor_ar": cfg.anchor_ar,
            },
            "images": summary.images,
            "faces": summary.faces,
            "faces_with_positive": summary.faces_with_positive,
            "faces_compensated": summary.faces_compensated,
            "positive": summary.labels.positive,
            "compensated": summary.labels.compensated,
            "negative": summary.labels.negative,
            "ignore": summary.labels.ignore,
            "mean_positives_per_face": r6(summary.mean_positives_per_face()),
        }))),
        ReportFormat::Table => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "strategy {} t0 {:.6} tn {:.6} delta {:.6} eta0 {:.6} eta1 {:.6} anchor_ar {:.6}",
                cfg.strategy, cfg.t0, cfg.tn, cfg.delta, cfg.eta0, cfg.eta1, cfg.anchor_ar
            );
            let rows = [
                ["images".to_string(), summary.images.to_string()],
                ["faces".to_string(), summary.faces.to_string()],
                ["faces_with_positive".to_string(), summary.faces_with_positive.to_string()],
                ["faces_compensated".to_string(), summary.faces_compensated.to_string()],
                ["positive".to_string(), summary.labels.positive.to_string()],
                ["compensated".to_string(), summary.labels.compensated.to_string()],
                ["negative".to_string(), summary.labels.negative.to_string()],
                ["ignore".to_string(), summary.labels.ignore.to_string()],
                [
                    "mean_positives_per_face".to_string(),
                    format!("{:.6}", summary.mean_positives_per_face()),
                ],
            ];
            s.push_str(&aligned(rows.iter()));
            Ok(s)
        }
        ReportFormat::Csv => Err(Error::validation("match summaries are emitted as json or table")),
    }
}

pub fn emit_rfd(spec: &RfdSpec, include_bias: bool, format: ReportFormat) -> Result<String> {
    let params = crate::rfd::rfd_param_count(spec.channels, include_bias)?;
    let rfs = crate::rfd::rfd_receptive_fields(spec);
    let names = ["3x1", "1x3", "3x3", "5x5", "shortcut"];
    match format {
        ReportFormat::Json => Ok(pretty(&json!({
            "schema_version": SCHEMA_VERSION,
            "channels": spec.channels,
            "include_bias": include_bias,
            "param_count": params,
            "paths": spec.paths,
            "receptive_fields": names.iter().zip(&rfs).map(|(n, (h, w))| json!({
                "path": n, "rf_h": h, "rf_w": w,
            })).collect::<Vec<_>>(),
        }))),
        ReportFormat::Table => {
            let mut s = String::new();
            let _ = writeln!(s, "channels {}", spec.channels);
            let _ = writeln!(
                s,
                "param_count {params}{}",
                if include_bias { " (with bias)" } else { "" }
            );
            let header = ["path", "reduce", "body", "rf"].map(String::from);
            let rows: Vec<[String; 4]> = names
                .iter()
                .enumerate()
                .map(|(i, n)| {
                    let (reduce, body) = match spec.paths.get(i) {
                        Some(p) => (
                            format!("1x1 {}->{}", p.reduce.c_in, p.reduce.c_out),
                            format!("{}x{} {}->{}", p.body.kh, p.body.kw, p.body.c_in, p.body.c_out),
                        ),
                        None => ("-".to_string(), "identity".to_string()),
                    };
                    [n.to_string(), reduce, body, format!("{}x{}", rfs[i].0, rfs[i].1)]
                })
                .collect();
            s.push_str(&aligned(std::iter::once(&header).chain(rows.iter())));
            Ok(s)
        }
        ReportFormat::Csv => Err(Error::validation("RFD reports are emitted as json or table")),
    }
}

pub fn emit_corpus_summary(summary: &CorpusSummary, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => Ok(pretty(&json!({
            "schema_version": SCHEMA_VERSION,
            "images": summary.images,
            "faces": summary.faces,
            "valid": summary.valid,
            "degenerate": summary.degenerate,
            "invalid": summary.invalid,
            "empty_images": summary.empty_images,
        }))),
        ReportFormat::Table => {
            let rows = [
                ("images", summary.images),
                ("faces", summary.faces),
                ("valid", summary.valid),
                ("degenerate", summary.degenerate),
                ("invalid", summary.invalid),
                ("empty_images", summary.empty_images),
            ]
            .map(|(k, v)| [k.to_string(), v.to_string()]);
            Ok(aligned(rows.iter()))
        }
        ReportFormat::Csv => Err(Error::validation("corpus summaries are emitted as json or table")),
    }
}
