use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::bd::{bd_report, Metric, RDCurve, RDPoint};
use crate::{Error, Result};

fn display_name(metric: &Metric) -> String {
    match metric {
        Metric::Psnr => "PSNR".into(),
        Metric::MsSsim => "MS-SSIM".into(),
        Metric::Task(n) => match n.as_str() {
            "miou" => "mIOU".into(),
            "wap" => "wAP".into(),
            other => other.to_string(),
        },
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    match v {
        Some(x) if x.is_infinite() => "inf".into(),
        Some(x) => format!("{x:.digits$}"),
        None => String::new(),
    }
}

/// Task metric names in first-seen order.
fn task_metrics(curves: &[&RDCurve]) -> Vec<Metric> {
    let mut names: Vec<String> = Vec::new();
    for c in curves {
        for p in c.points() {
            if let Some(t) = &p.task_metric {
                if !names.contains(&t.name) {
                    names.push(t.name.clone());
                }
            }
        }
    }
    names.into_iter().map(Metric::Task).collect()
}

fn results_row(out: &mut String, curve: &str, p: &RDPoint) {
    let (name, value) = p
        .task_metric
        .as_ref()
        .map_or((String::new(), None), |t| (t.name.clone(), Some(t.value)));
    let _ = writeln!(
        out,
        "{curve},{},{},{:.6},{},{},{name},{}",
        p.model,
        fmt_opt(p.lambda, 4),
        p.bpp,
        fmt_opt(p.psnr_db, 4),
        fmt_opt(p.ms_ssim, 6),
        fmt_opt(value, 6)
    );
}

/// One row per model point, plus the uncompressed baseline when given.
pub fn results_table(curves: &[RDCurve], baseline: Option<&RDPoint>) -> String {
    let mut out = String::from("curve,model,lambda,bpp,psnr_db,ms_ssim,task_metric,task_value\n");
    for c in curves {
        for p in c.points() {
            results_row(&mut out, &c.id, p);
        }
    }
    if let Some(b) = baseline {
        results_row(&mut out, "baseline", b);
    }
    out
}

/// BD quality and BD rate of every curve against the anchor. Task metrics
/// come first (all quality columns, then all rate columns), then PSNR and
/// MS-SSIM. Quality is in percentage points (PSNR in dB), rate in percent.
pub fn bd_table(anchor: &RDCurve, curves: &[RDCurve]) -> String {
    let all: Vec<&RDCurve> = std::iter::once(anchor).chain(curves).collect();
    let tasks = task_metrics(&all);
    let mut header = vec!["test".to_string(), "anchor".to_string()];
    header.extend(tasks.iter().map(|m| format!("BD {}", display_name(m))));
    header.extend(tasks.iter().map(|m| format!("BDR {}", display_name(m))));
    for m in [Metric::Psnr, Metric::MsSsim] {
        header.push(format!("BD {}", display_name(&m)));
        header.push(format!("BDR {}", display_name(&m)));
    }
    header.push("notes".into());
    let mut out = header.join(",") + "\n";
    for c in curves {
        let mut row = vec![c.id.clone(), anchor.id.clone()];
        let mut notes = Vec::new();
        let task_reports: Vec<_> = tasks.iter().map(|m| bd_report(anchor, c, m)).collect();
        row.extend(task_reports.iter().map(|r| fmt_opt(r.bd_quality, 3)));
        row.extend(task_reports.iter().map(|r| fmt_opt(r.bd_rate, 2)));
        notes.extend(task_reports.iter().filter_map(|r| r.error.as_ref().map(|e| format!("{}: {e}", r.metric))));
        for m in [Metric::Psnr, Metric::MsSsim] {
            let r = bd_report(anchor, c, &m);
            row.push(fmt_opt(r.bd_quality, 3));
            row.push(fmt_opt(r.bd_rate, 2));
            if let Some(e) = r.error {
                notes.push(format!("{}: {e}", r.metric));
            }
        }
        row.push(notes.join("; ").replace(',', " "));
        out += &(row.join(",") + "\n");
    }
    out
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

/// Metric over bpp, one polyline per curve; the baseline is a dashed
/// horizontal line.
pub fn rd_plot_svg(curves: &[&RDCurve], metric: &Metric, baseline: Option<&RDPoint>) -> Option<String> {
    let series: Vec<(&str, Vec<(f64, f64)>)> = curves
        .iter()
        .map(|c| {
            let pts = c
                .points()
                .iter()
                .filter_map(|p| metric.value(p).map(|v| (p.bpp, v)))
                .collect::<Vec<_>>();
            (c.id.as_str(), pts)
        })
        .filter(|(_, p)| !p.is_empty())
        .collect();
    if series.is_empty() {
        return None;
    }
    let base = baseline.and_then(|b| metric.value(b));
    let xs = series.iter().flat_map(|s| s.1.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.1.iter().map(|p| p.1)).chain(base);
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if x1 - x0 < 1e-9 {
        x0 -= 0.5 * x0.abs().max(1e-3);
        x1 += 0.5 * x1.abs().max(1e-3);
    }
    if y1 - y0 < 1e-9 {
        y0 -= 1.0;
        y1 += 1.0;
    }
    let (pad_x, pad_y) = (0.05 * (x1 - x0), 0.08 * (y1 - y0));
    let (x0, x1, y0, y1) = (x0 - pad_x, x1 + pad_x, y0 - pad_y, y1 + pad_y);
    let (w, h, l, r, t, b) = (640.0, 440.0, 70.0, 20.0, 20.0, 50.0);
    let px = |x: f64| l + (x - x0) / (x1 - x0) * (w - l - r);
    let py = |y: f64| h - b - (y - y0) / (y1 - y0) * (h - t - b);

    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(s, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
    let _ = writeln!(
        s,
        "<rect x=\"{l}\" y=\"{t}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>",
        w - l - r,
        h - t - b
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let _ = writeln!(s, "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{fx:.3}</text>", px(fx), h - b + 18.0);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{fy:.2}</text>", l - 6.0, py(fy) + 4.0);
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">bpp</text>", (l + w - r) / 2.0, h - 8.0);
    let label = match metric {
        Metric::Psnr => "PSNR [dB]".to_string(),
        m => format!("{} [%]", display_name(m)),
    };
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{label}</text>",
        (t + h - b) / 2.0,
        (t + h - b) / 2.0
    );
    if let Some(v) = base {
        let _ = writeln!(
            s,
            "<line x1=\"{l}\" y1=\"{y:.1}\" x2=\"{}\" y2=\"{y:.1}\" stroke=\"gray\" stroke-dasharray=\"6 4\"/>",
            w - r,
            y = py(v)
        );
    }
    for (i, (id, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"2\"/>",
            path.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(s, "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>", px(x), py(y));
        }
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{}</text>",
            l + 10.0,
            t + 16.0 * (i + 1) as f64,
            xml_escape(id)
        );
    }
    if base.is_some() {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"gray\">uncompressed</text>",
            l + 10.0,
            t + 16.0 * (series.len() + 1) as f64
        );
    }
    s += "</svg>\n";
    Some(s)
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn write(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

/// Write `results.csv`, `bd.csv` (only with an anchor) and one SVG plot per
/// metric into `dir`. Returns the written paths.
pub fn emit_report(
    dir: impl AsRef<Path>,
    curves: &[RDCurve],
    anchor: Option<&RDCurve>,
    baseline: Option<&RDPoint>,
) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if curves.is_empty() {
        return Err(Error::InvalidValue("report needs at least one curve".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    write(dir, "results.csv", &results_table(curves, baseline), &mut written)?;
    if let Some(a) = anchor {
        write(dir, "bd.csv", &bd_table(a, curves), &mut written)?;
    }
    let plotted: Vec<&RDCurve> = anchor.into_iter().chain(curves).collect();
    let mut metrics = task_metrics(&plotted);
    metrics.extend([Metric::Psnr, Metric::MsSsim]);
    for m in &metrics {
        if let Some(svg) = rd_plot_svg(&plotted, m, baseline) {
            write(dir, &format!("rd_{}.svg", m.name()), &svg, &mut written)?;
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::bd::TaskMetric;

    fn curve(id: &str, scale: f64, offset: f64) -> RDCurve {
        let pts = [(0.1, 0.5), (0.2, 0.6), (0.4, 0.68), (0.8, 0.72)]
            .iter()
            .map(|&(b, m)| RDPoint {
                model: format!("{id}_{b}"),
                lambda: Some(b * 10.0),
                bpp: b * scale,
                psnr_db: Some(25.0 + 10.0 * m),
                ms_ssim: Some(m + 0.2),
                task_metric: Some(TaskMetric {
                    name: "miou".into(),
                    value: m + offset,
                }),
            })
            .collect();
        RDCurve::new(id, pts).unwrap()
    }

    #[test]
    fn single_curve_has_no_bd_section() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(dir.path(), &[curve("a", 1.0, 0.0)], None, None).unwrap();
        let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert!(names.contains(&"results.csv".to_string()));
        assert!(!names.contains(&"bd.csv".to_string()));
        assert!(names.contains(&"rd_miou.svg".to_string()));
    }

    #[test]
    fn bd_table_columns_and_values() {
        let a = curve("gt", 1.0, 0.0);
        let t = curve("pseudo", 0.5, 0.0);
        let table = bd_table(&a, &[a.clone(), t]);
        let mut lines = table.lines();
        assert_eq!(
            lines.next().unwrap(),
            "test,anchor,BD mIOU,BDR mIOU,BD PSNR,BDR PSNR,BD MS-SSIM,BDR MS-SSIM,notes"
        );
        assert_eq!(lines.next().unwrap(), "gt,gt,0.000,0.00,0.000,0.00,0.000,0.00,");
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row[3], "-50.00");
    }

    #[test]
    fn regeneration_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let curves = [curve("a", 1.0, 0.0), curve("b", 0.8, 0.01)];
        let f1 = emit_report(d1.path(), &curves, Some(&curves[0]), Some(&curves[0].points()[3])).unwrap();
        let f2 = emit_report(d2.path(), &curves, Some(&curves[0]), Some(&curves[0].points()[3])).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
        }
        assert!(std::fs::read_to_string(&f1[2]).unwrap().contains("stroke-dasharray"));
    }
}
