//! CSV writers for ensembles, coupled runs, measures, decay series and bound reports.
//!
//! Floats are written with Rust's shortest round-trip formatting, so identical
//! values always produce identical bytes.

use std::io::Write;

use crate::coupling::CouplingRun;
use crate::ergodicity::{DecaySeries, EmpiricalMeasure};
use crate::simulate::PathEnsemble;
use crate::stats::BoundReport;

fn writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(w)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

/// `path_id,t,x_1..x_d,k_var`
pub fn write_ensemble<W: Write>(ens: &PathEnsemble, w: W) -> csv::Result<()> {
    let mut out = writer(w);
    let mut header = vec!["path_id".to_string(), "t".into()];
    header.extend((1..=ens.dim).map(|i| format!("x_{i}")));
    header.push("k_var".into());
    out.write_record(&header)?;
    for p in 0..ens.n_paths {
        for (ti, &t) in ens.times.iter().enumerate() {
            let mut row = vec![p.to_string(), fmt(t)];
            row.extend(ens.state(p, ti).iter().map(|&v| fmt(v)));
            row.push(fmt(ens.kvar(p, ti)));
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `path_id,t,x_1..x_d,y_1..y_d,dist,coupled_flag`
pub fn write_coupling<W: Write>(run: &CouplingRun, w: W) -> csv::Result<()> {
    let mut out = writer(w);
    let mut header = vec!["path_id".to_string(), "t".into()];
    header.extend((1..=run.dim).map(|i| format!("x_{i}")));
    header.extend((1..=run.dim).map(|i| format!("y_{i}")));
    header.extend(["dist".to_string(), "coupled_flag".into()]);
    out.write_record(&header)?;
    for p in 0..run.n_paths {
        let tau = run.coupling_time[p];
        for (ti, &t) in run.times.iter().enumerate() {
            let mut row = vec![p.to_string(), fmt(t)];
            row.extend(run.x(p, ti).iter().map(|&v| fmt(v)));
            row.extend(run.y(p, ti).iter().map(|&v| fmt(v)));
            row.push(fmt(run.distance(p, ti)));
            row.push(if t >= tau { "1" } else { "0" }.into());
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `bin,lower_1..lower_d,upper_1..upper_d,count`; the last row is the out-of-range bucket.
///
/// Measures kept as marginals write one block per marginal, tagged in the `bin` column.
pub fn write_measure<W: Write>(m: &EmpiricalMeasure, w: W) -> csv::Result<()> {
    let mut out = writer(w);
    let d = m.grid.dim();
    let max_d = if m.marginals.is_empty() { d } else { 2 };
    let mut header = vec!["bin".to_string()];
    header.extend((1..=max_d).map(|i| format!("lower_{i}")));
    header.extend((1..=max_d).map(|i| format!("upper_{i}")));
    header.push("count".into());
    out.write_record(&header)?;
    let block = |out: &mut csv::Writer<W>, tag: &str, m: &EmpiricalMeasure| -> csv::Result<()> {
        let dm = m.grid.dim();
        for (b, &c) in m.counts.iter().enumerate() {
            let (lo, hi) = m.grid.bin_bounds(b);
            let mut row = vec![format!("{tag}{b}")];
            row.extend(lo.iter().map(|&v| fmt(v)));
            row.extend(std::iter::repeat_n(String::new(), max_d - dm));
            row.extend(hi.iter().map(|&v| fmt(v)));
            row.extend(std::iter::repeat_n(String::new(), max_d - dm));
            row.push(c.to_string());
            out.write_record(&row)?;
        }
        let mut row = vec![format!("{tag}out_of_range")];
        row.extend(std::iter::repeat_n(String::new(), 2 * max_d));
        row.push(m.out_of_range.to_string());
        out.write_record(&row)
    };
    if m.marginals.is_empty() {
        block(&mut out, "", m)?;
    } else {
        for (coords, mm) in &m.marginals {
            let tag: Vec<String> = coords.iter().map(|c| (c + 1).to_string()).collect();
            block(&mut out, &format!("m{}:", tag.join("-")), mm)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `t,value,se,in_fit_window`
pub fn write_decay<W: Write>(s: &DecaySeries, w: W) -> csv::Result<()> {
    let mut out = writer(w);
    out.write_record(["t", "value", "se", "in_fit_window"])?;
    for ((&t, &v), &se) in s.times.iter().zip(&s.values).zip(&s.standard_errors) {
        let inside = s.fit_valid && s.fit_window.contains(&t);
        out.write_record([fmt(t), fmt(v), fmt(se), (inside as u8).to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// `label,t,empirical,se,bound,slack_se,pass`
pub fn write_bound_report<W: Write>(r: &BoundReport, w: W) -> csv::Result<()> {
    let mut out = writer(w);
    out.write_record(["label", "t", "empirical", "se", "bound", "slack_se", "pass"])?;
    for c in &r.checks {
        out.write_record([
            c.label.clone(),
            opt(c.t),
            fmt(c.empirical),
            fmt(c.se),
            fmt(c.bound),
            fmt(c.slack_se),
            (c.pass as u8).to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
