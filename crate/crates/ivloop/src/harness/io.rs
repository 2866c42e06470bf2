//! Serialization for experiment outputs: metric and convergence CSV,
//! prompt import/export, and SVG plots rendered from the same records that
//! land in the CSV files.

use std::path::Path;

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::numerics::Matrix;

use super::{ConvergenceReport, MetricRecord};

pub fn metrics_to_csv(records: &[MetricRecord]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for rec in records {
        w.serialize(rec).map_err(|e| Error::Config(e.to_string()))?;
    }
    finish(w)
}

pub(crate) fn convergence_to_csv(report: &ConvergenceReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &report.rows {
        w.serialize(row).map_err(|e| Error::Config(e.to_string()))?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Config(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Config(e.to_string()))
}

/// Writes a prompt as CSV with columns `z0..`, `x0..`, `y`; the query
/// sample is the last row. Floats use the shortest round-trip form, so
/// ingesting the output reproduces the prompt bit for bit.
pub fn export_csv(data: &Dataset) -> String {
    let (n, q, p) = (data.n(), data.q(), data.p());
    let mut out = String::new();
    let mut header: Vec<String> = (0..q).map(|j| format!("z{j}")).collect();
    header.extend((0..p).map(|j| format!("x{j}")));
    header.push("y".into());
    out.push_str(&header.join(","));
    out.push('\n');
    let mut push_row = |z: &[f64], x: &[f64], y: f64| {
        let cells: Vec<String> = z
            .iter()
            .chain(x)
            .chain(std::iter::once(&y))
            .map(|v| v.to_string())
            .collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    };
    for i in 0..n {
        push_row(data.z.row(i), data.x.row(i), data.y[i]);
    }
    push_row(&data.z_query, &data.x_query, data.y_query);
    out
}

/// Reads a prompt from a CSV file. Columns are selected by header name;
/// the query sample is the last row unless `query_row` picks another
/// (1-based, counting data rows). Parse failures report the data row and
/// column name; header problems report row 0.
pub fn ingest_csv(
    path: &Path,
    z_cols: &[String],
    x_cols: &[String],
    y_col: &str,
    query_row: Option<usize>,
) -> Result<Dataset> {
    if z_cols.is_empty() || x_cols.is_empty() {
        return Err(Error::InvalidArgument(
            "need at least one instrument column and one treatment column".into(),
        ));
    }
    let text = std::fs::read_to_string(path)?;
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::CsvParse { row: 0, col: String::new(), msg: e.to_string() })?
        .clone();
    let find = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| Error::CsvParse {
            row: 0,
            col: name.to_string(),
            msg: "column not found in header".into(),
        })
    };
    let z_idx: Vec<usize> = z_cols.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let x_idx: Vec<usize> = x_cols.iter().map(|c| find(c)).collect::<Result<_>>()?;
    let y_idx = find(y_col)?;

    let mut rows: Vec<(Vec<f64>, Vec<f64>, f64)> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row_no = i + 1;
        let record = record.map_err(|e| Error::CsvParse {
            row: row_no,
            col: String::new(),
            msg: e.to_string(),
        })?;
        let parse = |idx: usize, name: &str| -> Result<f64> {
            let field = record.get(idx).ok_or_else(|| Error::CsvParse {
                row: row_no,
                col: name.to_string(),
                msg: "row has too few fields".into(),
            })?;
            field.parse::<f64>().map_err(|_| Error::CsvParse {
                row: row_no,
                col: name.to_string(),
                msg: format!("expected a number, got '{field}'"),
            })
        };
        let z = z_idx
            .iter()
            .zip(z_cols)
            .map(|(&idx, name)| parse(idx, name))
            .collect::<Result<Vec<_>>>()?;
        let x = x_idx
            .iter()
            .zip(x_cols)
            .map(|(&idx, name)| parse(idx, name))
            .collect::<Result<Vec<_>>>()?;
        let y = parse(y_idx, y_col)?;
        rows.push((z, x, y));
    }
    if rows.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least two data rows (training plus query), found {}",
            rows.len()
        )));
    }
    let qi = match query_row {
        None => rows.len() - 1,
        Some(r) if r >= 1 && r <= rows.len() => r - 1,
        Some(r) => {
            return Err(Error::InvalidArgument(format!(
                "query row {r} out of range 1..={}",
                rows.len()
            )))
        }
    };
    let (z_query, x_query, y_query) = rows.remove(qi);
    let n = rows.len();
    let mut z = Matrix::zeros(n, z_cols.len());
    let mut x = Matrix::zeros(n, x_cols.len());
    let mut y = Vec::with_capacity(n);
    for (i, (zr, xr, yi)) in rows.into_iter().enumerate() {
        for (j, v) in zr.into_iter().enumerate() {
            z.set(i, j, v);
        }
        for (j, v) in xr.into_iter().enumerate() {
            x.set(i, j, v);
        }
        y.push(yi);
    }
    Ok(Dataset { z, x, y, z_query, x_query, y_query })
}

/// One named line in an SVG plot.
#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const PANEL_W: f64 = 640.0;
const PANEL_H: f64 = 400.0;
const MARGIN_L: f64 = 76.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 46.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn panel(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let mut svg = String::new();
    svg.push_str(&format!(
        "<rect width=\"{PANEL_W}\" height=\"{PANEL_H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"14\">{title}</text>\n",
        PANEL_W / 2.0
    ));

    let keep = |v: f64| v.is_finite() && (!log_y || v > 0.0);
    let mapped: Vec<(usize, Vec<(f64, f64)>)> = series
        .iter()
        .enumerate()
        .map(|(si, s)| {
            let pts = s
                .points
                .iter()
                .filter(|&&(x, v)| x.is_finite() && keep(v))
                .map(|&(x, v)| (x, if log_y { v.log10() } else { v }))
                .collect();
            (si, pts)
        })
        .collect();
    let all: Vec<(f64, f64)> = mapped.iter().flat_map(|(_, pts)| pts.iter().copied()).collect();
    if all.is_empty() {
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">no data</text>\n",
            PANEL_W / 2.0,
            PANEL_H / 2.0
        ));
        return svg;
    }
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &all {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if x_min == x_max {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if y_min == y_max {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let to_px = |x: f64, y: f64| -> (f64, f64) {
        let px = MARGIN_L + (x - x_min) / (x_max - x_min) * (PANEL_W - MARGIN_L - MARGIN_R);
        let py = PANEL_H - MARGIN_B - (y - y_min) / (y_max - y_min) * (PANEL_H - MARGIN_T - MARGIN_B);
        (px, py)
    };

    let axis_y = PANEL_H - MARGIN_B;
    svg.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{axis_y}\" x2=\"{}\" y2=\"{axis_y}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN_L}\" y1=\"{MARGIN_T}\" x2=\"{MARGIN_L}\" y2=\"{axis_y}\" stroke=\"black\"/>\n",
        PANEL_W - MARGIN_R
    ));
    for frac in [0.0, 0.5, 1.0] {
        let xv = x_min + frac * (x_max - x_min);
        let yv = y_min + frac * (y_max - y_min);
        let (px, _) = to_px(xv, y_min);
        let (_, py) = to_px(x_min, yv);
        let y_text = if log_y { fmt_tick(10f64.powf(yv)) } else { fmt_tick(yv) };
        svg.push_str(&format!(
            "<text x=\"{px}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n\
             <text x=\"{}\" y=\"{py}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"10\">{y_text}</text>\n",
            axis_y + 14.0,
            fmt_tick(xv),
            MARGIN_L - 6.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{x_label}</text>\n\
         <text x=\"14\" y=\"{}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" transform=\"rotate(-90 14 {})\">{y_label}</text>\n",
        (MARGIN_L + PANEL_W - MARGIN_R) / 2.0,
        PANEL_H - 10.0,
        (MARGIN_T + axis_y) / 2.0,
        (MARGIN_T + axis_y) / 2.0
    ));

    for (si, pts) in &mapped {
        if pts.is_empty() {
            continue;
        }
        let color = PALETTE[si % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| {
                let (px, py) = to_px(x, y);
                format!("{px:.2},{py:.2}")
            })
            .collect();
        svg.push_str(&format!(
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>\n",
            path.join(" ")
        ));
        let ly = MARGIN_T + 14.0 * (*si as f64 + 1.0);
        let lx = PANEL_W - MARGIN_R - 120.0;
        svg.push_str(&format!(
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            lx + 18.0,
            lx + 24.0,
            ly + 4.0,
            series[*si].label
        ));
    }
    svg
}

/// Renders a single-panel line plot.
pub fn svg_line_plot(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[Series],
    log_y: bool,
) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PANEL_W}\" height=\"{PANEL_H}\" viewBox=\"0 0 {PANEL_W} {PANEL_H}\">\n{}</svg>\n",
        panel(title, x_label, y_label, series, log_y)
    )
}

/// Renders sweep records as two stacked panels: query squared error on
/// top, coefficient squared error below, one line per estimator.
pub fn sweep_svg(records: &[MetricRecord]) -> String {
    let mut order: Vec<&'static str> = Vec::new();
    for rec in records {
        if !order.contains(&rec.estimator.label()) {
            order.push(rec.estimator.label());
        }
    }
    let series_for = |value: &dyn Fn(&MetricRecord) -> f64| -> Vec<Series> {
        order
            .iter()
            .map(|lab| Series {
                label: (*lab).to_string(),
                points: records
                    .iter()
                    .filter(|r| r.estimator.label() == *lab)
                    .map(|r| (r.sweep_value, value(r)))
                    .collect(),
            })
            .collect()
    };
    let icpe = series_for(&|r| r.icpe_mean);
    let coef = series_for(&|r| r.coef_mse_mean);
    let log_of = |ss: &[Series]| {
        !ss.is_empty() && ss.iter().flat_map(|s| &s.points).all(|&(_, v)| v > 0.0)
    };
    let scenario = records.first().map(|r| r.scenario.clone()).unwrap_or_else(|| "sweep".into());
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{PANEL_W}\" height=\"{}\" viewBox=\"0 0 {PANEL_W} {}\">\n<g>\n{}</g>\n<g transform=\"translate(0,{PANEL_H})\">\n{}</g>\n</svg>\n",
        2.0 * PANEL_H,
        2.0 * PANEL_H,
        panel(
            &format!("{scenario}: query squared error"),
            "sweep value",
            "mean squared error",
            &icpe,
            log_of(&icpe),
        ),
        panel(
            &format!("{scenario}: coefficient squared error"),
            "sweep value",
            "mean squared error",
            &coef,
            log_of(&coef),
        ),
    )
}

/// Renders a convergence report on a log scale: distances per step plus
/// the certified geometric envelope anchored at the initial distance.
pub fn convergence_svg(report: &ConvergenceReport) -> String {
    let rows = &report.rows;
    let d0 = rows.first().map(|r| r.dist_beta).unwrap_or(1.0);
    let series = vec![
        Series {
            label: "coefficient distance".into(),
            points: rows.iter().map(|r| (r.t as f64, r.dist_beta)).collect(),
        },
        Series {
            label: "first-stage distance".into(),
            points: rows.iter().map(|r| (r.t as f64, r.dist_theta)).collect(),
        },
        Series {
            label: "envelope".into(),
            points: rows.iter().map(|r| (r.t as f64, r.lambda_pow * d0)).collect(),
        },
    ];
    let title = match report.diverged_at {
        Some(t) => format!("convergence (diverged at step {t})"),
        None => "convergence".into(),
    };
    svg_line_plot(&title, "step", "distance to fixed point", &series, true)
}
