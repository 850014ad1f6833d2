use std::io::Write;

use super::RunResult;
use crate::error::{Error, Result};

fn io(e: impl std::fmt::Display) -> Error {
    Error::Io(e.to_string())
}

/// One row per scenario in the layout of the published tables.
pub fn write_results_csv<W: Write>(results: &[RunResult], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "name",
        "table",
        "label",
        "distribution",
        "beta0",
        "beta1",
        "beta2",
        "n",
        "completed",
        "rb_mr",
        "rb_mr_star",
        "re",
        "rb_mr_se",
        "rb_mr_star_se",
        "re_se",
        "ref_rb_mr",
        "ref_rb_mr_star",
        "ref_re",
    ])
    .map_err(io)?;
    let f1 = |x: f64| format!("{x:.1}");
    for r in results {
        let reference = r.reference.map_or([String::new(), String::new(), String::new()], |p| {
            [f1(p.rb), f1(p.rb_star), format!("{:.0}", p.re)]
        });
        w.write_record([
            r.name.clone(),
            r.table.clone().unwrap_or_default(),
            r.label.clone().unwrap_or_default(),
            r.distribution.to_string(),
            r.beta[0].to_string(),
            r.beta[1].to_string(),
            r.beta[2].to_string(),
            r.n.to_string(),
            r.completed.to_string(),
            f1(r.mr.rb),
            f1(r.robust.rb),
            format!("{:.0}", r.re),
            format!("{:.2}", r.rb_se),
            format!("{:.2}", r.rb_star_se),
            format!("{:.1}", r.re_se),
            reference[0].clone(),
            reference[1].clone(),
            reference[2].clone(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Full diagnostics for every scenario as pretty-printed JSON.
pub fn write_sidecar_json<W: Write>(results: &[RunResult], out: W) -> Result<()> {
    serde_json::to_writer_pretty(out, results).map_err(io)
}
