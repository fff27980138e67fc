//! Result files: CSV tables and an SVG plot of SER against SNR.

use std::fmt::Write as _;
use std::path::Path;

use super::sweep::{SweepResult, SweepRow};
use crate::error::{Error, Result};

pub fn write_csv(result: &SweepResult, out: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in &result.rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("csv", e))?;
    Ok(())
}

pub fn emit_csv(result: &SweepResult, path: &Path) -> Result<()> {
    if result.rows.is_empty() {
        return Err(Error::Empty("sweep result"));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(result, std::io::BufWriter::new(file))
}

pub fn read_csv(input: impl std::io::Read) -> Result<SweepResult> {
    let mut r = csv::Reader::from_reader(input);
    let rows = r.deserialize().collect::<std::result::Result<Vec<SweepRow>, _>>()?;
    Ok(SweepResult { rows })
}

pub fn parse_csv(path: &Path) -> Result<SweepResult> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2",
];

/// SER against SNR, one line per method, on a log10 SER axis. Cells with
/// zero errors sit on the bottom of the axis.
pub fn render_svg(result: &SweepResult) -> Result<String> {
    if result.rows.is_empty() {
        return Err(Error::Empty("sweep result"));
    }
    let (mut x_min, mut x_max) = result
        .rows
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r.snr_db), hi.max(r.snr_db)));
    if x_min == x_max {
        x_min -= 1.0;
        x_max += 1.0;
    }
    let positive = result.rows.iter().map(|r| r.ser).filter(|&s| s > 0.0);
    let lowest = positive.clone().fold(f64::INFINITY, f64::min);
    let highest = positive.fold(0.0, f64::max);
    let y_min = if lowest.is_finite() { lowest.log10().floor().min(-1.0) } else { -1.0 };
    let y_max = if highest > 0.0 { highest.log10().ceil().min(0.0) } else { 0.0 };
    let y_max = if y_max <= y_min { y_min + 1.0 } else { y_max };

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x_min) / (x_max - x_min) * plot_w;
    let py = |ser: f64| {
        let l = if ser > 0.0 { ser.log10().clamp(y_min, y_max) } else { y_min };
        TOP + (y_max - l) / (y_max - y_min) * plot_h
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let channel = &result.rows[0].channel;
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">SER vs SNR ({channel})</text>"#,
        LEFT + plot_w / 2.0
    );
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );

    let mut decade = y_min as i32;
    while decade as f64 <= y_max {
        let y = py(10f64.powi(decade));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{decade}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
        decade += 1;
    }
    let mut ticks: Vec<f64> = result.rows.iter().map(|r| r.snr_db).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for t in ticks {
        let x = px(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/>"##,
            TOP + plot_h,
            TOP + plot_h + 5.0
        );
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#, TOP + plot_h + 20.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">SNR [dB]</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 16.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">SER (log10)</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0
    );

    for (i, method) in result.methods().iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let mut series = result.series(method);
        series.sort_by(|a, b| a.snr_db.total_cmp(&b.snr_db));
        let points: Vec<String> = series
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r.snr_db), py(r.ser)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            points.join(" ")
        );
        for r in &series {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                px(r.snr_db),
                py(r.ser)
            );
        }
        let ly = TOP + 16.0 + 20.0 * i as f64;
        let lx = WIDTH - RIGHT + 16.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 24.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{method}</text>"#, lx + 30.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot(result: &SweepResult, path: &Path) -> Result<()> {
    let svg = render_svg(result)?;
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}
