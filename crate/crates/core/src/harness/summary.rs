use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricsRow;
use crate::error::Result;

/// Post-warm-up means of one `(mode, C, spp)` group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mode: String,
    pub c: f64,
    pub spp: usize,
    pub frames: usize,
    pub psnr: Option<f64>,
    pub rmse: Option<f64>,
    pub mean_luminance: f64,
    pub pt_ms: f64,
    pub st_ms: f64,
    pub ot_ms: f64,
    pub total_ms: f64,
    pub mean_depth: f64,
}

pub fn write_metrics(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?)
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 { 0.0 } else { s / n as f64 }
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.collect::<Option<Vec<_>>>()?;
    (!v.is_empty()).then(|| mean(v.into_iter()))
}

/// Group rows by `(mode, C, spp)` and average the frames at or after `warmup`.
pub fn summarize(rows: &[MetricsRow], warmup: u64) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(String, i64, usize), Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.frame >= warmup) {
        groups.entry((r.mode.clone(), (r.c * 1e6).round() as i64, r.spp)).or_default().push(r);
    }
    groups
        .into_values()
        .map(|g| {
            let f = |sel: fn(&MetricsRow) -> f64| mean(g.iter().map(|r| sel(r)));
            SummaryRow {
                mode: g[0].mode.clone(),
                c: g[0].c,
                spp: g[0].spp,
                frames: g.len(),
                psnr: mean_opt(g.iter().map(|r| r.psnr)),
                rmse: mean_opt(g.iter().map(|r| r.rmse)),
                mean_luminance: f(|r| r.mean_luminance),
                pt_ms: f(|r| r.pt_ms),
                st_ms: f(|r| r.st_ms),
                ot_ms: f(|r| r.ot_ms),
                total_ms: f(|r| r.pt_ms + r.st_ms + r.ot_ms),
                mean_depth: f(|r| r.mean_depth),
            }
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

fn opt(v: Option<f64>, prec: usize) -> String {
    v.map_or_else(|| "-".to_owned(), |x| format!("{x:.prec$}"))
}

/// Plain-text tables: all groups, then the cache rows ordered by `C`, then timings by spp.
pub fn render_report(rows: &[SummaryRow]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24} {:>6} {:>5} {:>6} {:>8} {:>10} {:>9} {:>9} {:>9} {:>9} {:>6}",
        "mode", "C", "spp", "frames", "PSNR", "rMSE", "lum", "PT ms", "ST ms", "OT ms", "depth"
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{:<24} {:>6.2} {:>5} {:>6} {:>8} {:>10} {:>9.4} {:>9.1} {:>9.1} {:>9.1} {:>6.2}",
            r.mode,
            r.c,
            r.spp,
            r.frames,
            opt(r.psnr, 2),
            opt(r.rmse, 5),
            r.mean_luminance,
            r.pt_ms,
            r.st_ms,
            r.ot_ms,
            r.mean_depth
        );
    }
    let mut cache: Vec<&SummaryRow> = rows.iter().filter(|r| r.mode.starts_with("nee+cache")).collect();
    if cache.len() > 1 {
        cache.sort_by(|a, b| a.c.total_cmp(&b.c));
        let _ = writeln!(s, "\nC sweep");
        for r in &cache {
            let _ = writeln!(s, "  C={:.2}  PSNR {}  PT {:.1} ms  depth {:.2}", r.c, opt(r.psnr, 2), r.pt_ms, r.mean_depth);
        }
    }
    let mut by_spp: Vec<&SummaryRow> = rows.iter().filter(|r| r.st_ms > 0.0).collect();
    by_spp.sort_by_key(|r| r.spp);
    by_spp.dedup_by_key(|r| r.spp);
    if by_spp.len() > 1 {
        let st = mean(by_spp.iter().map(|r| r.st_ms));
        let _ = writeln!(s, "\nspp sweep (ST mean {st:.1} ms)");
        for r in &by_spp {
            let dev = if st > 0.0 { 100.0 * (r.st_ms - st) / st } else { 0.0 };
            let _ = writeln!(s, "  spp={:<4} PT {:>9.1} ms  ST {:>7.1} ms ({dev:+.1}%)", r.spp, r.pt_ms, r.st_ms);
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(frame: u64, mode: &str, psnr: f64) -> MetricsRow {
        MetricsRow { frame, mode: mode.into(), c: 0.5, spp: 1, psnr: Some(psnr), pt_ms: 2.0, ..Default::default() }
    }

    #[test]
    fn single_row_summary_equals_the_row() {
        let s = summarize(&[row(0, "nee", 30.0)], 0);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].psnr, Some(30.0));
        assert_eq!(s[0].pt_ms, 2.0);
        assert_eq!(s[0].frames, 1);
    }

    #[test]
    fn warmup_frames_are_excluded() {
        let rows = [row(0, "nee", 10.0), row(1, "nee", 20.0), row(2, "nee", 30.0), row(0, "uniform", 5.0)];
        let s = summarize(&rows, 1);
        assert_eq!(s.len(), 1);
        assert_eq!(s[0].psnr, Some(25.0));
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        let mut rows = vec![row(0, "nee+cache", 31.5), row(1, "nee+cache", 32.5)];
        rows[1].psnr = None;
        write_metrics(&p, &rows).unwrap();
        assert_eq!(read_metrics(&p).unwrap(), rows);
        let s = summarize(&rows, 0);
        assert_eq!(s[0].psnr, None);
        assert!(render_report(&s).contains("nee+cache"));
    }
}
