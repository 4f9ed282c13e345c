use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{OperatingPoint, PrCurve, RankingReport};

fn csv_err(e: csv::Error) -> Error {
    Error::Format(format!("CSV: {e}"))
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("CSV: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

/// One evaluation outcome: a threshold level, a regime and its counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchRow {
    pub level: String,
    pub rho_t: f64,
    pub theta_t: f64,
    pub regime: String,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn match_rows_csv(rows: &[MatchRow]) -> Result<String> {
    to_csv(rows)
}

pub fn operating_points_csv(points: &[OperatingPoint]) -> Result<String> {
    to_csv(points)
}

/// `name,mean_rank,rank_sd,top1,top3,bottom_half`, percentages in 0..100.
pub fn ranking_csv(report: &RankingReport) -> Result<String> {
    to_csv(&report.methods)
}

/// Square table with a leading `method` column; the diagonal is empty.
pub fn direct_win_csv(report: &RankingReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["method".to_string()];
    header.extend(report.methods.iter().map(|m| m.name.clone()));
    w.write_record(&header).map_err(csv_err)?;
    for (m, row) in report.methods.iter().zip(&report.direct_win) {
        let mut rec = vec![m.name.clone()];
        rec.extend(row.iter().map(|c| c.map_or(String::new(), |v| format!("{v}"))));
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Format(format!("CSV: {e}")))?;
    Ok(String::from_utf8(bytes).expect("CSV output is UTF-8"))
}

#[derive(Debug, Deserialize)]
struct F1Row {
    sample: String,
    f1: f64,
}

/// Reads every `*.csv` in `dir` as one method (named after the file stem)
/// with `sample,f1` rows. All methods must cover the same samples; the
/// table columns follow sorted sample ids.
pub fn read_f1_table(dir: impl AsRef<Path>) -> Result<(Vec<String>, Vec<String>, Vec<Vec<f64>>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir.as_ref())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    let mut methods = Vec::new();
    let mut columns: Vec<BTreeMap<String, f64>> = Vec::new();
    for path in &files {
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut col = BTreeMap::new();
        for (i, row) in rdr.deserialize::<F1Row>().enumerate() {
            let row = row.map_err(|e| Error::Parse {
                path: path.clone(),
                line: i + 2,
                msg: e.to_string(),
            })?;
            if col.insert(row.sample.clone(), row.f1).is_some() {
                return Err(Error::Parse {
                    path: path.clone(),
                    line: i + 2,
                    msg: format!("sample `{}` listed twice", row.sample),
                });
            }
        }
        methods.push(path.file_stem().unwrap_or_default().to_string_lossy().into_owned());
        columns.push(col);
    }
    let samples: Vec<String> = columns.first().map(|c| c.keys().cloned().collect()).unwrap_or_default();
    for (m, col) in methods.iter().zip(&columns) {
        if !col.keys().eq(samples.iter()) {
            return Err(Error::InvalidParameter(format!(
                "method `{m}` does not cover the same samples as `{}`",
                methods[0]
            )));
        }
    }
    let table = columns.into_iter().map(|c| c.into_values().collect()).collect();
    Ok((methods, samples, table))
}

/// Precision over recall, unit square, with the best-F1 point marked.
pub fn pr_curve_svg(curve: &PrCurve, title: &str) -> String {
    const SIZE: f64 = 400.0;
    const PAD: f64 = 50.0;
    let px = |r: f64| PAD + r * SIZE;
    let py = |p: f64| PAD + (1.0 - p) * SIZE;
    let mut s = String::new();
    let total = SIZE + 2.0 * PAD;
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{total}" height="{total}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{PAD}" y="{PAD}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    for k in 0..=10 {
        let v = k as f64 / 10.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{v:.1}</text>"#,
            px(v),
            PAD + SIZE + 15.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{v:.1}</text>"#,
            PAD - 5.0,
            py(v) + 3.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">recall</text>"#,
        PAD + SIZE / 2.0,
        total - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {:.1})">precision</text>"#,
        PAD + SIZE / 2.0,
        PAD + SIZE / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="30" font-size="14" text-anchor="middle">{}</text>"#,
        PAD + SIZE / 2.0,
        xml_escape(title)
    );
    let pts: Vec<String> = curve
        .points
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.recall), py(p.precision)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#,
        pts.join(" ")
    );
    let b = curve.best;
    let _ = writeln!(
        s,
        r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="crimson"><title>F1 {:.4} at tau {:.4}</title></circle>"#,
        px(b.recall),
        py(b.precision),
        b.f1,
        b.tau
    );
    s.push_str("</svg>\n");
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}
