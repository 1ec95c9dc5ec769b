//! Result emission: the per-slot CSV, the JSON run summary, and the optional
//! cumulative-volume plot. All formatting is deterministic so identical runs
//! produce byte-identical files.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use a2g_core::units::BITS_PER_GB;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigFile, Plan};
use crate::run::RunSummary;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cannot serialize summary: {0}")]
    Json(#[from] serde_json::Error),
}

/// Confirms the directory exists (creating it if needed) and is writable
/// before any solving starts, so a bad path fails fast instead of after a
/// long run.
pub fn prepare_out_dir(dir: &Path) -> Result<(), OutputError> {
    let wrap = |source| OutputError::Io {
        path: dir.to_path_buf(),
        source,
    };
    std::fs::create_dir_all(dir).map_err(wrap)?;
    let probe = dir.join(".write-probe");
    std::fs::write(&probe, b"ok").map_err(wrap)?;
    std::fs::remove_file(&probe).map_err(wrap)?;
    Ok(())
}

fn write_file(path: &Path, content: &[u8]) -> Result<(), OutputError> {
    let mut f = std::fs::File::create(path).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(content).map_err(|source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Fixed-notation float without trailing zeros; infinities spelled out.
fn num(v: f64, decimals: usize) -> String {
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let mut s = format!("{v:.decimals$}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    // Normalizes the negative zero "-0" left behind by trimming.
    if s == "-0" {
        s = "0".into();
    }
    s
}

pub fn slot_csv(summary: &RunSummary) -> String {
    let mut out = String::new();
    out.push_str("tau_s,M_star,rate_bps,upper_bound_bps,snr_db,tx_power_w,max_interference_dbm,rank1,method\n");
    for r in &summary.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            num(r.tau_s, 6),
            r.m_star,
            num(r.rate_bps, 3),
            num(r.upper_bound_bps, 3),
            num(r.snr_db, 4),
            num(r.tx_power_w, 9),
            num(r.max_interference_dbm, 4),
            r.rank1,
            r.method,
        );
    }
    out
}

#[derive(Serialize)]
struct SummaryDoc<'a> {
    band: &'a str,
    scenario: u8,
    ts_s: f64,
    seed: u64,
    v_data_bits: f64,
    v_data_gb: f64,
    v_upper_bits: f64,
    v_upper_gb: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_cap_bits: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_cap_gb: Option<f64>,
    slots: usize,
    degraded_slots: usize,
    wall_ms: u128,
    config: &'a ConfigFile,
}

pub fn summary_json(plan: &Plan, summary: &RunSummary) -> Result<String, OutputError> {
    let doc = SummaryDoc {
        band: &plan.band_label,
        scenario: plan.scenario.index(),
        ts_s: plan.ts_s,
        seed: plan.seed,
        v_data_bits: summary.v_data_bits,
        v_data_gb: summary.v_data_bits / BITS_PER_GB,
        v_upper_bits: summary.v_upper_bits,
        v_upper_gb: summary.v_upper_bits / BITS_PER_GB,
        v_cap_bits: summary.v_cap_bits,
        v_cap_gb: summary.v_cap_bits.map(|b| b / BITS_PER_GB),
        slots: summary.slots,
        degraded_slots: summary.degraded_slots,
        wall_ms: summary.wall_ms,
        config: &plan.echo,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Cumulative offloaded volume against window length, the shape used for
/// descent-offloading studies: V_data and V_upper as curves, the capacity
/// ceiling as a reference line.
pub fn volume_svg(plan: &Plan, summary: &RunSummary) -> String {
    const W: f64 = 720.0;
    const H: f64 = 480.0;
    const ML: f64 = 70.0;
    const MR: f64 = 20.0;
    const MT: f64 = 20.0;
    const MB: f64 = 50.0;

    // Sample the suffix volumes at each record boundary, ascending ts.
    let mut ts_points: Vec<f64> = summary.records.iter().map(|r| r.tau_s).collect();
    ts_points.push(0.0);
    ts_points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ts_points.dedup();
    let data: Vec<(f64, f64, f64)> = ts_points
        .iter()
        .map(|&ts| {
            let (d, u) = summary.volume_within(ts);
            (ts, d / BITS_PER_GB, u / BITS_PER_GB)
        })
        .collect();

    let ts_max = ts_points.last().copied().unwrap_or(1.0).max(1e-9);
    let cap_gb = plan
        .capacity_bits(ts_max)
        .map(|b| b / BITS_PER_GB);
    let y_max = data
        .iter()
        .map(|&(_, d, u)| d.max(u))
        .fold(0.0f64, f64::max)
        .max(cap_gb.unwrap_or(0.0))
        .max(1e-9);

    let x = |ts: f64| ML + (ts / ts_max) * (W - ML - MR);
    let y = |gb: f64| H - MB - (gb / y_max) * (H - MT - MB);

    let path = |pick: &dyn Fn(&(f64, f64, f64)) -> f64| {
        let mut d = String::new();
        for (i, p) in data.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            let _ = write!(d, "{}{} {} ", cmd, num(x(p.0), 2), num(y(pick(p)), 2));
        }
        d.trim_end().to_string()
    };

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = write!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    // axes
    let _ = write!(
        svg,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        num(ML, 1),
        num(H - MB, 1),
        num(W - MR, 1),
        num(H - MB, 1)
    );
    let _ = write!(
        svg,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        num(ML, 1),
        num(MT, 1),
        num(ML, 1),
        num(H - MB, 1)
    );
    for i in 0..=5 {
        let ts = ts_max * i as f64 / 5.0;
        let gb = y_max * i as f64 / 5.0;
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            num(x(ts), 1),
            num(H - MB + 18.0, 1),
            num(ts, 0)
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="end">{}</text>"#,
            num(ML - 6.0, 1),
            num(y(gb) + 4.0, 1),
            num(gb, 2)
        );
    }
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">window T_s (s)</text>"#,
        num((ML + W - MR) / 2.0, 1),
        num(H - 12.0, 1)
    );
    let _ = write!(
        svg,
        r#"<text x="16" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 16 {})">volume (GB)</text>"#,
        num((MT + H - MB) / 2.0, 1),
        num((MT + H - MB) / 2.0, 1)
    );
    if let Some(cap) = cap_gb {
        let _ = write!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="gray" stroke-dasharray="6 4"/>"#,
            num(x(0.0), 2),
            num(y(0.0), 2),
            num(x(ts_max), 2),
            num(y(cap), 2)
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" fill="gray">V_cap</text>"#,
            num(x(ts_max * 0.82), 1),
            num(y(cap * 0.82) - 6.0, 1)
        );
    }
    let _ = write!(
        svg,
        r##"<path d="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        path(&|p| p.1)
    );
    let _ = write!(
        svg,
        r##"<path d="{}" fill="none" stroke="#d62728" stroke-width="1.5" stroke-dasharray="4 3"/>"##,
        path(&|p| p.2)
    );
    let _ = write!(
        svg,
        r##"<text x="{}" y="{}" font-size="12" fill="#1f77b4">V_data</text>"##,
        num(ML + 10.0, 1),
        num(MT + 16.0, 1)
    );
    let _ = write!(
        svg,
        r##"<text x="{}" y="{}" font-size="12" fill="#d62728">V_upper</text>"##,
        num(ML + 10.0, 1),
        num(MT + 32.0, 1)
    );
    svg.push_str("</svg>\n");
    svg
}

pub struct WrittenFiles {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub plot: Option<PathBuf>,
}

pub fn emit(
    dir: &Path,
    plan: &Plan,
    summary: &RunSummary,
    plots: bool,
) -> Result<WrittenFiles, OutputError> {
    let csv_path = dir.join("slots.csv");
    write_file(&csv_path, slot_csv(summary).as_bytes())?;
    let json_path = dir.join("summary.json");
    let mut json = summary_json(plan, summary)?;
    json.push('\n');
    write_file(&json_path, json.as_bytes())?;
    let plot = if plots {
        let p = dir.join("volume.svg");
        write_file(&p, volume_svg(plan, summary).as_bytes())?;
        Some(p)
    } else {
        None
    };
    Ok(WrittenFiles {
        csv: csv_path,
        summary: json_path,
        plot,
    })
}
