//! Reading sweep CSVs back and drawing them as an SVG line chart.

use std::fmt::Write as _;

use super::{ExperimentRecord, CSV_HEADER};
use crate::error::{Error, Result};

fn parse_field(s: &str, line: usize) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("line {line}: bad number {s:?}")))
}

/// Inverse of `records_to_csv`.
pub fn parse_records_csv(text: &str) -> Result<Vec<ExperimentRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == CSV_HEADER => {}
        _ => return Err(Error::Parse(format!("expected header {CSV_HEADER:?}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let ln = i + 2;
        let f: Vec<&str> = line.splitn(10, ',').collect();
        if f.len() != 10 {
            return Err(Error::Parse(format!("line {ln}: expected 10 fields")));
        }
        let replicate = f[0]
            .parse::<usize>()
            .map_err(|_| Error::Parse(format!("line {ln}: bad replicate id")))?;
        let num: Vec<f64> = f[1..9].iter().map(|s| parse_field(s, ln)).collect::<Result<_>>()?;
        let flags = f[9];
        let (upper_event, lower_event, error) = if let Some(e) = flags.strip_prefix("error=") {
            (false, false, Some(e.to_string()))
        } else {
            let on = |key: &str| flags.split(';').any(|kv| kv == format!("{key}=1"));
            (on("upper_event"), on("lower_event"), None)
        };
        out.push(ExperimentRecord {
            replicate,
            lambda: num[0],
            risk: num[1],
            nb: num[2],
            lsb_lower: num[3],
            lsb_upper: num[4],
            b: num[5],
            v: num[6],
            r: num[7],
            upper_event,
            lower_event,
            error,
        });
    }
    Ok(out)
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;

/// B, V and R against the replicate id. Output depends only on the records.
pub fn render_svg(records: &[ExperimentRecord], title: &str) -> String {
    let series: [(&str, &str, fn(&ExperimentRecord) -> f64); 3] = [
        ("B", "#1b9e77", |r| r.b),
        ("V", "#d95f02", |r| r.v),
        ("R", "#7570b3", |r| r.r),
    ];
    let ymax = records
        .iter()
        .flat_map(|r| [r.b, r.v, r.r])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let ymax = if ymax > 0.0 { ymax * 1.05 } else { 1.0 };
    let xmax = records.iter().map(|r| r.replicate).max().unwrap_or(0).max(1) as f64;
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let px = |x: f64| MARGIN + pw * x / xmax;
    let py = |y: f64| HEIGHT - MARGIN - ph * y / ymax;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    // axes
    let _ = writeln!(
        s,
        r#"<path d="M{m:.1} {t:.1} V{b:.1} H{r:.1}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for i in 0..=4 {
        let y = ymax * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{:.3}</text>"#,
            MARGIN - 6.0,
            py(y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12" text-anchor="middle">replicate</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0
    );
    for (i, (name, color, get)) in series.iter().enumerate() {
        let pts: Vec<String> = records
            .iter()
            .filter(|r| get(r).is_finite())
            .map(|r| format!("{:.2},{:.2}", px(r.replicate as f64), py(get(r))))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" stroke="{color}" stroke-width="1.5" fill="none"/>"#,
                pts.join(" ")
            );
        }
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ly:.1}" font-family="sans-serif" font-size="12" fill="{color}">{name}</text>"#,
            WIDTH - MARGIN + 8.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::records_to_csv;

    fn rec(i: usize, err: bool) -> ExperimentRecord {
        ExperimentRecord {
            replicate: i,
            lambda: 1.5,
            risk: 2.0 + i as f64,
            nb: 1.0,
            lsb_lower: 0.5,
            lsb_upper: 0.5,
            b: 0.1,
            v: 0.2,
            r: 0.3 * i as f64,
            upper_event: i % 2 == 0,
            lower_event: true,
            error: err.then(|| "no convergence".to_string()),
        }
    }

    #[test]
    fn csv_round_trip() {
        let recs = vec![rec(0, false), rec(1, false)];
        let back = parse_records_csv(&records_to_csv(&recs)).unwrap();
        assert_eq!(back, recs);
        let failed = vec![ExperimentRecord::failed(3, 1.0, &Error::invalid("x"))];
        let back = parse_records_csv(&records_to_csv(&failed)).unwrap();
        assert!(back[0].risk.is_nan() && back[0].error.is_some());
    }

    #[test]
    fn rejects_bad_header() {
        assert!(parse_records_csv("a,b\n").is_err());
        assert!(parse_records_csv(&format!("{CSV_HEADER}\n1,2\n")).is_err());
    }

    #[test]
    fn svg_is_deterministic() {
        let recs: Vec<_> = (0..5).map(|i| rec(i, false)).collect();
        let a = render_svg(&recs, "t <1>");
        assert_eq!(a, render_svg(&recs, "t <1>"));
        assert_eq!(a.matches("<polyline").count(), 3);
        assert!(a.contains("t &lt;1&gt;"));
        assert!(render_svg(&[], "empty").ends_with("</svg>\n"));
    }
}
