//! CSV and Markdown reports.

use std::fmt::Write as _;
use std::path::Path;

use crate::config::{Format, Method};
use crate::memory::FORMULA;
use crate::sweep::{BenchRecord, SweepRow};
use crate::threshold::ThresholdReport;
use crate::HarnessError;

pub const CSV_HEADER: [&str; 8] = [
    "ctx",
    "method",
    "pattern",
    "latency_s",
    "flops",
    "mem_bytes",
    "frob_err",
    "seed",
];

/// Placeholder for cells that could not be measured.
pub const DASH: &str = "-";

fn cell<T: ToString>(x: Option<T>) -> String {
    x.map_or_else(|| DASH.to_string(), |v| v.to_string())
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Report(e.to_string())
}

pub fn render_csv(records: &[BenchRecord]) -> Result<String, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.ctx.to_string(),
            r.method.to_string(),
            r.pattern.clone(),
            cell(r.latency_s),
            r.flops.to_string(),
            cell(r.mem_bytes),
            cell(r.frob_err),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| HarnessError::Report(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize) -> Result<T, HarnessError> {
    let s = row.get(i).unwrap_or("");
    s.parse().map_err(|_| {
        HarnessError::Report(format!(
            "bad {} value {s:?} on line {}",
            CSV_HEADER[i],
            line(row)
        ))
    })
}

fn opt_field<T: std::str::FromStr>(
    row: &csv::StringRecord,
    i: usize,
) -> Result<Option<T>, HarnessError> {
    if row.get(i) == Some(DASH) {
        Ok(None)
    } else {
        field(row, i).map(Some)
    }
}

fn line(row: &csv::StringRecord) -> u64 {
    row.position().map_or(0, |p| p.line())
}

pub fn parse_csv(text: &str) -> Result<Vec<BenchRecord>, HarnessError> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(CSV_HEADER) {
        return Err(HarnessError::Report(format!(
            "unexpected header {header:?}"
        )));
    }
    let mut out = Vec::new();
    for row in r.records() {
        let row = row.map_err(csv_err)?;
        let method: Method = field::<String>(&row, 1)?.parse()?;
        out.push(BenchRecord {
            ctx: field(&row, 0)?,
            method,
            pattern: field(&row, 2)?,
            latency_s: opt_field(&row, 3)?,
            flops: field(&row, 4)?,
            mem_bytes: opt_field(&row, 5)?,
            frob_err: opt_field(&row, 6)?,
            seed: field(&row, 7)?,
        });
    }
    Ok(out)
}

fn md_escape(s: &str) -> String {
    s.replace('|', "\\|")
}

fn opt_slope(s: Option<f64>) -> String {
    s.map_or_else(|| DASH.to_string(), |v| format!("{v:.3e}"))
}

pub fn render_markdown(rows: &[SweepRow], thresholds: &[ThresholdReport]) -> String {
    let mut s = String::new();
    writeln!(s, "# Attention sweep\n").unwrap();
    writeln!(
        s,
        "`mem_bytes` is the measured peak heap growth during prefill. \
         `analytic_bytes` follows: {FORMULA}. A dash marks a cell that was not measured.\n"
    )
    .unwrap();
    writeln!(
        s,
        "| ctx | method | pattern | latency_s | decode_s | flops | mem_bytes | analytic_bytes | frob_err | seed |"
    )
    .unwrap();
    writeln!(s, "|---:|---|---|---:|---:|---:|---:|---:|---:|---:|").unwrap();
    for row in rows {
        let r = &row.record;
        writeln!(
            s,
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |",
            r.ctx,
            r.method,
            md_escape(&r.pattern),
            r.latency_s
                .map_or_else(|| DASH.into(), |v| format!("{v:.6}")),
            row.decode_s
                .map_or_else(|| DASH.into(), |v| format!("{v:.6}")),
            r.flops,
            cell(r.mem_bytes),
            row.analytic_mem_bytes,
            r.frob_err
                .map_or_else(|| DASH.into(), |v| format!("{v:.6}")),
            r.seed,
        )
        .unwrap();
    }
    if !thresholds.is_empty() {
        writeln!(s, "\n## Threshold\n").unwrap();
        writeln!(
            s,
            "| sparse method | crossover ctx | sparse slope (s/token) | dense slope (s/token) | flatter |"
        )
        .unwrap();
        writeln!(s, "|---|---:|---:|---:|---|").unwrap();
        for t in thresholds {
            writeln!(
                s,
                "| {} | {} | {} | {} | {} |",
                t.sparse,
                t.crossover_ctx
                    .map_or_else(|| "none in range".to_string(), |c| c.to_string()),
                opt_slope(t.sparse_slope),
                opt_slope(t.dense_slope),
                if t.flattens() { "yes" } else { "no" },
            )
            .unwrap();
        }
    }
    s
}

pub fn render(
    rows: &[SweepRow],
    thresholds: &[ThresholdReport],
    format: Format,
) -> Result<String, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Report("no records to report".into()));
    }
    match format {
        Format::Csv => {
            let records: Vec<_> = rows.iter().map(|r| r.record.clone()).collect();
            render_csv(&records)
        }
        Format::Markdown => Ok(render_markdown(rows, thresholds)),
    }
}

/// Writes the report to `path`, or stdout when `path` is `None`.
pub fn emit_report(
    rows: &[SweepRow],
    thresholds: &[ThresholdReport],
    format: Format,
    path: Option<&Path>,
) -> Result<(), HarnessError> {
    let text = render(rows, thresholds, format)?;
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| HarnessError::Io {
            path: p.display().to_string(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sparse_accel::PatternFamily;

    fn row(method: Method, latency: Option<f64>) -> SweepRow {
        SweepRow {
            record: BenchRecord {
                ctx: 512,
                method,
                pattern: "a:b=1|c:d=2".into(),
                latency_s: latency,
                flops: 12,
                mem_bytes: latency.map(|_| 99),
                frob_err: latency.map(|_| 0.25),
                seed: 3,
            },
            analytic_mem_bytes: 1000,
            decode_s: None,
        }
    }

    #[test]
    fn csv_header_and_dashes() {
        let text = render(&[row(Method::Dense, None)], &[], Format::Csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next(),
            Some("ctx,method,pattern,latency_s,flops,mem_bytes,frob_err,seed")
        );
        assert_eq!(lines.next(), Some("512,dense,a:b=1|c:d=2,-,12,-,-,3"));
    }

    #[test]
    fn markdown_without_threshold_has_no_section() {
        let md = render(&[row(Method::Auto, Some(0.5))], &[], Format::Markdown).unwrap();
        assert!(!md.contains("## Threshold"));
        assert!(md.contains("a:b=1\\|c:d=2"));
        assert!(md.contains("ctx^2*4"));
    }

    #[test]
    fn markdown_threshold_section() {
        let t = ThresholdReport {
            sparse: Method::Sparse(PatternFamily::VerticalSlash),
            shared_ctx: vec![512],
            crossover_ctx: None,
            sparse_slope: None,
            dense_slope: None,
        };
        let md = render(&[row(Method::Dense, None)], &[t], Format::Markdown).unwrap();
        assert!(md.contains("## Threshold"));
        assert!(md.contains("none in range"));
    }

    #[test]
    fn empty_is_an_error() {
        assert!(render(&[], &[], Format::Csv).is_err());
    }

    #[test]
    fn header_must_match() {
        assert!(parse_csv("ctx,method\n1,dense\n").is_err());
    }
}
