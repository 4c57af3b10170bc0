//! Plain-text renderings of training histories and metric reports.
//!
//! Numbers in the machine-readable forms are written in Rust's shortest
//! round-trip notation, so parsing a rendered report gives back the exact
//! values.

use std::fmt::Write as _;
use std::path::Path;

use s2sr_core::metrics::{BandMetrics, MetricsReport, SamResult, Sre};
use s2sr_core::train::{EpochRecord, TrainHistory};
use s2sr_core::BandId;

use crate::error::{Error, Result};

pub const HISTORY_HEADER: &str = "# s2sr training history v1";
pub const REPORT_FORMAT: &str = "s2sr-metrics 1";

/// Whitespace-aligned table with one row per epoch.
pub fn render_history(history: &TrainHistory) -> String {
    let mut out = format!("{HISTORY_HEADER}\n{:>5}  {:>24}  {:>24}  {:>24}\n", "epoch", "train_loss", "val_loss", "lr");
    for r in &history.records {
        let (t, v, lr) = (format!("{:e}", r.train_loss), format!("{:e}", r.val_loss), format!("{:e}", r.lr));
        writeln!(out, "{:>5}  {t:>24}  {v:>24}  {lr:>24}", r.epoch).expect("string write");
    }
    out
}

pub fn parse_history(path: &Path, text: &str) -> Result<TrainHistory> {
    let err = |line: usize, reason: String| Error::Parse { path: path.to_path_buf(), line, reason };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == HISTORY_HEADER => {}
        _ => return Err(err(1, format!("expected {HISTORY_HEADER:?}"))),
    }
    lines.next();
    let mut records = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [epoch, t, v, lr] = fields[..] else {
            return Err(err(i + 1, format!("expected 4 columns, found {}", fields.len())));
        };
        let num = |s: &str| s.parse::<f64>().map_err(|_| err(i + 1, format!("bad number {s:?}")));
        records.push(EpochRecord {
            epoch: epoch.parse().map_err(|_| err(i + 1, format!("bad epoch {epoch:?}")))?,
            train_loss: num(t)?,
            val_loss: num(v)?,
            lr: num(lr)?,
        });
    }
    Ok(TrainHistory { records })
}

fn sre_text(sre: Sre) -> String {
    match sre {
        Sre::Db(v) => format!("{v:?}"),
        Sre::Perfect => "perfect".into(),
    }
}

/// Human-oriented table: metric rows, band columns and a mean column.
/// Perfect reconstructions show `inf` in the SRE row and are left out of
/// its mean.
pub fn render_table(report: &MetricsReport) -> String {
    let mut header = format!("{:<10}", "metric");
    for b in &report.bands {
        write!(header, "{:>10}", b.band.as_str()).expect("string write");
    }
    header.push_str(&format!("{:>10}", "mean"));
    let mut out = header + "\n";
    let row = |name: &str, cells: Vec<String>, mean: String| {
        let mut line = format!("{name:<10}");
        for c in cells {
            write!(line, "{c:>10}").expect("string write");
        }
        write!(line, "{mean:>10}").expect("string write");
        line + "\n"
    };
    out += &row(
        "RMSE",
        report.bands.iter().map(|b| format!("{:.2}", b.rmse)).collect(),
        format!("{:.2}", report.mean_rmse),
    );
    let sre_mean = match report.mean_sre {
        Some(m) if report.sre_perfect > 0 => format!("{m:.2}*"),
        Some(m) => format!("{m:.2}"),
        None => "-".into(),
    };
    let sre_cells = report.bands.iter().map(|b| b.sre.db().map_or("inf".into(), |v| format!("{v:.2}"))).collect();
    out += &row("SRE (dB)", sre_cells, sre_mean);
    out +=
        &row("UIQ", report.bands.iter().map(|b| format!("{:.4}", b.uiq)).collect(), format!("{:.4}", report.mean_uiq));
    match report.sam {
        Some(SamResult { degrees: Some(d), excluded }) => {
            writeln!(out, "SAM (deg) {d:.4} ({excluded} zero-norm pixels excluded)").expect("string write")
        }
        Some(SamResult { degrees: None, excluded }) => {
            writeln!(out, "SAM (deg) undefined (all {excluded} pixels have a zero-norm spectrum)")
                .expect("string write")
        }
        None => out.push_str("SAM (deg) n/a (single band)\n"),
    }
    if report.sre_perfect > 0 {
        writeln!(out, "* mean over finite values; {} band(s) reconstructed exactly", report.sre_perfect)
            .expect("string write");
    }
    out
}

/// Machine-readable `key: value` form.
pub fn render_report(report: &MetricsReport) -> String {
    let mut out = format!("format: {REPORT_FORMAT}\n");
    let ids: Vec<&str> = report.bands.iter().map(|b| b.band.as_str()).collect();
    writeln!(out, "bands: {}", ids.join(" ")).expect("string write");
    for b in &report.bands {
        writeln!(out, "rmse.{}: {:?}", b.band, b.rmse).expect("string write");
        writeln!(out, "sre.{}: {}", b.band, sre_text(b.sre)).expect("string write");
        writeln!(out, "uiq.{}: {:?}", b.band, b.uiq).expect("string write");
    }
    match report.sam {
        Some(s) => {
            let deg = s.degrees.map_or("none".into(), |d| format!("{d:?}"));
            writeln!(out, "sam_deg: {deg}\nsam_excluded: {}", s.excluded).expect("string write");
        }
        None => out.push_str("sam_deg: n/a\n"),
    }
    writeln!(out, "mean_rmse: {:?}", report.mean_rmse).expect("string write");
    let mean_sre = report.mean_sre.map_or("none".into(), |m| format!("{m:?}"));
    writeln!(out, "mean_sre: {mean_sre}\nsre_perfect: {}", report.sre_perfect).expect("string write");
    writeln!(out, "mean_uiq: {:?}", report.mean_uiq).expect("string write");
    out
}

pub fn parse_report(path: &Path, text: &str) -> Result<MetricsReport> {
    let err = |line: usize, reason: String| Error::Parse { path: path.to_path_buf(), line, reason };
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        let (k, v) = raw.split_once(':').ok_or_else(|| err(i + 1, "expected `key: value`".into()))?;
        pairs.push((i + 1, k.trim(), v.trim()));
    }
    let get = |key: &str| -> Result<(usize, &str)> {
        pairs
            .iter()
            .find(|(_, k, _)| *k == key)
            .map(|&(l, _, v)| (l, v))
            .ok_or_else(|| err(0, format!("missing key {key:?}")))
    };
    let num = |key: &str| -> Result<f64> {
        let (l, v) = get(key)?;
        v.parse().map_err(|_| err(l, format!("bad number {v:?} for {key}")))
    };
    let count = |key: &str| -> Result<usize> {
        let (l, v) = get(key)?;
        v.parse().map_err(|_| err(l, format!("bad count {v:?} for {key}")))
    };
    let (l, format) = get("format")?;
    if format != REPORT_FORMAT {
        return Err(err(l, format!("unsupported report format {format:?}")));
    }
    let (l, ids) = get("bands")?;
    let mut bands = Vec::new();
    for id in ids.split_whitespace() {
        let band: BandId = id.parse().map_err(|_| err(l, format!("unknown band {id:?}")))?;
        let (sl, sv) = get(&format!("sre.{band}"))?;
        let sre = if sv == "perfect" {
            Sre::Perfect
        } else {
            Sre::Db(sv.parse().map_err(|_| err(sl, format!("bad SRE {sv:?}")))?)
        };
        bands.push(BandMetrics { band, rmse: num(&format!("rmse.{band}"))?, sre, uiq: num(&format!("uiq.{band}"))? });
    }
    let sam = match get("sam_deg")? {
        (_, "n/a") => None,
        (_, "none") => Some(SamResult { degrees: None, excluded: count("sam_excluded")? }),
        _ => Some(SamResult { degrees: Some(num("sam_deg")?), excluded: count("sam_excluded")? }),
    };
    let mean_sre = match get("mean_sre")? {
        (_, "none") => None,
        _ => Some(num("mean_sre")?),
    };
    Ok(MetricsReport {
        bands,
        sam,
        mean_rmse: num("mean_rmse")?,
        mean_sre,
        sre_perfect: count("sre_perfect")?,
        mean_uiq: num("mean_uiq")?,
    })
}
