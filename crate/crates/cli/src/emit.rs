//! Report files: `report.json`, `timings.json` and CSV tables.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use qls_core::spaces::NormReport;

use crate::run::{RunReport, Timings};

fn norm_rows(w: &mut csv::Writer<fs::File>, label: &str, n: &NormReport) -> Result<()> {
    for &(k, v) in &n.per_scale {
        w.write_record([label.to_string(), n.name.clone(), k.to_string(), format!("{v:e}")])?;
    }
    Ok(())
}

fn writer(dir: &Path, name: &str, header: &[&str], files: &mut Vec<PathBuf>) -> Result<csv::Writer<fs::File>> {
    let path = dir.join(name);
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("cannot write {}", path.display()))?;
    w.write_record(header)?;
    files.push(path);
    Ok(w)
}

/// Write the report in the configured formats; returns the files written.
pub fn emit(report: &RunReport, timings: &Timings, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut files = vec![];
    let out = &report.config.output;
    if out.json {
        let path = dir.join("report.json");
        fs::write(&path, serde_json::to_string_pretty(report)?).with_context(|| format!("cannot write {}", path.display()))?;
        files.push(path);
        let path = dir.join("timings.json");
        fs::write(&path, serde_json::to_string_pretty(timings)?)?;
        files.push(path);
    }
    if !out.csv {
        return Ok(files);
    }
    let mut v = writer(dir, "verdicts.csv", &["name", "value", "bound", "passed", "asserted"], &mut files)?;
    for x in &report.verdicts {
        v.write_record([x.name.clone(), format!("{:e}", x.value), format!("{:e}", x.bound), x.passed.to_string(), x.asserted.to_string()])?;
    }
    v.flush()?;

    let mut norms: Vec<(&str, &NormReport)> = vec![];

    if let Some(a) = &report.analysis {
        let mut w = writer(dir, "rays.csv", &["x0", "x1", "xi0", "xi1", "status", "length", "length_in_ball", "min_radius_after_exit"], &mut files)?;
        for r in &a.rays {
            w.write_record([
                format!("{:e}", r.seed.x[0]),
                format!("{:e}", r.seed.x[1]),
                format!("{:e}", r.seed.xi[0]),
                format!("{:e}", r.seed.xi[1]),
                serde_json::to_value(r.status)?.as_str().unwrap_or_default().to_string(),
                format!("{:e}", r.length),
                format!("{:e}", r.length_in_ball),
                format!("{:e}", r.min_radius_after_exit),
            ])?;
        }
        w.flush()?;
        norms.push(("data", &a.data_norms));
    }
    if let Some(s) = &report.solve {
        let mut w = writer(dir, "iterations.csv", &["n", "norm_s", "norm_s0", "exterior_s0", "diff_x0", "diff_sigma", "trapped", "l"], &mut files)?;
        for r in &s.trace.records {
            let (trapped, l) = r.trap.as_ref().map(|t| (t.trapped.to_string(), format!("{:e}", t.l))).unwrap_or_default();
            w.write_record([
                r.n.to_string(),
                format!("{:e}", r.norm_s),
                format!("{:e}", r.norm_s0),
                format!("{:e}", r.exterior_s0),
                format!("{:e}", r.diff_x0),
                format!("{:e}", r.diff_sigma),
                trapped,
                l,
            ])?;
        }
        w.flush()?;
        let mut w = writer(dir, "steps.csv", &["t", "l2", "residual", "iterations"], &mut files)?;
        for st in &s.steps {
            w.write_record([format!("{:e}", st.t), format!("{:e}", st.l2), format!("{:e}", st.residual), st.iterations.to_string()])?;
        }
        w.flush()?;
        let mut w = writer(dir, "envelope.csv", &["k", "envelope", "solution", "ratio"], &mut files)?;
        let e = &s.envelope;
        for k in 0..e.ratios.len() {
            w.write_record([k.to_string(), format!("{:e}", e.envelope[k]), format!("{:e}", e.solution_blocks[k]), format!("{:e}", e.ratios[k])])?;
        }
        w.flush()?;
        norms.push(("solution", &s.final_norms));
    }
    if let Some(sw) = &report.sweep {
        if let Some(t) = &sw.dependence {
            let mut header = vec!["delta".to_string(), "converged".into(), "metric_change".into()];
            for s in &t.sigmas {
                header.push(format!("ratio_sigma_{s}"));
            }
            let mut w = csv::Writer::from_path(dir.join("dependence.csv"))?;
            files.push(dir.join("dependence.csv"));
            w.write_record(&header)?;
            for r in &t.rows {
                let mut rec = vec![format!("{:e}", r.delta), r.converged.to_string(), format!("{:e}", r.metric_change)];
                rec.extend(r.by_sigma.iter().map(|b| format!("{:e}", b.3)));
                w.write_record(&rec)?;
            }
            w.flush()?;
        }
        if !sw.t_sweep.is_empty() {
            let mut w = writer(dir, "t_sweep.csv", &["t", "converged", "ratio_x0", "ratio_incoming", "ratio_compact"], &mut files)?;
            for r in &sw.t_sweep {
                w.write_record([
                    format!("{:e}", r.t),
                    r.converged.to_string(),
                    format!("{:e}", r.ratio_x0),
                    format!("{:e}", r.ratio_incoming),
                    format!("{:e}", r.ratio_compact),
                ])?;
            }
            w.flush()?;
        }
        if !sw.resolution.is_empty() {
            let mut w = writer(dir, "resolution.csv", &["n", "converged", "max_ratio"], &mut files)?;
            for r in &sw.resolution {
                w.write_record([r.n.to_string(), r.converged.to_string(), format!("{:e}", r.max_ratio)])?;
            }
            w.flush()?;
        }
    }
    if !norms.is_empty() {
        let mut w = writer(dir, "norms.csv", &["label", "norm", "k", "value"], &mut files)?;
        for (label, n) in norms {
            norm_rows(&mut w, label, n)?;
        }
        w.flush()?;
    }
    Ok(files)
}
