//! Metric reports as CSV: `id,nmse,psnr,ssim,hfen` per image followed by a
//! `mean` row and a `std` (population standard deviation) row.

use std::path::Path;

use wrecon_core::metrics::{summarize, ImageMetrics, MetricSummary};

use crate::error::{FormatError, Result};
use crate::fsutil;

pub const HEADER: [&str; 5] = ["id", "nmse", "psnr", "ssim", "hfen"];

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub rows: Vec<(String, ImageMetrics)>,
    pub summary: MetricSummary,
}

impl Report {
    pub fn new(rows: Vec<(String, ImageMetrics)>) -> Result<Self> {
        let metrics: Vec<ImageMetrics> = rows.iter().map(|r| r.1).collect();
        let summary = summarize(&metrics)?;
        Ok(Self { rows, summary })
    }

    pub fn get(&self, id: &str) -> Option<&ImageMetrics> {
        self.rows.iter().find(|r| r.0 == id).map(|r| &r.1)
    }
}

fn record(id: &str, m: &ImageMetrics) -> [String; 5] {
    let v = m.values();
    [id.to_owned(), v[0].to_string(), v[1].to_string(), v[2].to_string(), v[3].to_string()]
}

pub fn encode(report: &Report) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| FormatError::invalid("csv", e.to_string());
    w.write_record(HEADER).map_err(csv_err)?;
    for (id, m) in &report.rows {
        w.write_record(record(id, m)).map_err(csv_err)?;
    }
    w.write_record(record("mean", &report.summary.mean)).map_err(csv_err)?;
    w.write_record(record("std", &report.summary.std)).map_err(csv_err)?;
    w.into_inner().map_err(|e| FormatError::invalid("csv", e.to_string()))
}

/// Parses a report; the aggregate rows must be present and are returned as
/// written.
pub fn decode(bytes: &[u8]) -> Result<Report> {
    let mut r = csv::Reader::from_reader(bytes);
    let csv_err = |e: csv::Error| FormatError::invalid("csv", e.to_string());
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HEADER) {
        return Err(FormatError::invalid("report", format!("header {header:?}")));
    }
    let mut rows = Vec::new();
    let mut mean = None;
    let mut std = None;
    for rec in r.records() {
        let rec = rec.map_err(csv_err)?;
        let id = rec[0].to_owned();
        let mut v = [0.0; 4];
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = rec[k + 1]
                .parse()
                .map_err(|_| FormatError::invalid("report", format!("row {id}: bad value {:?}", &rec[k + 1])))?;
        }
        let m = ImageMetrics::from_values(v);
        match id.as_str() {
            "mean" => mean = Some(m),
            "std" => std = Some(m),
            _ => rows.push((id, m)),
        }
    }
    let (Some(mean), Some(std)) = (mean, std) else {
        return Err(FormatError::invalid("report", "missing mean/std rows"));
    };
    Ok(Report {
        summary: MetricSummary {
            count: rows.len(),
            mean,
            std,
        },
        rows,
    })
}

pub fn save_report(report: &Report, path: &Path) -> Result<()> {
    fsutil::write_atomic(path, &encode(report)?)
}

pub fn load_report(path: &Path) -> Result<Report> {
    decode(&fsutil::read(path)?)
}
