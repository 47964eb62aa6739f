//! File output: trajectory CSV, event JSON Lines, sweep tables and summaries.
//!
//! Floats are written with 17 significant digits (`{:.16e}`).

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::degenerate::{BreakdownEvent, BreakdownKind, TrajectoryLog};
use crate::error::Result;
use crate::relaxation::SweepTable;
use crate::scenario::DiagnosticRow;

pub fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Header `t,x1,y1,vx1,vy1,theta1,r1,...` then one row per sample.
pub fn write_trajectory_csv(w: &mut impl Write, log: &TrajectoryLog) -> Result<()> {
    let n = log.samples.first().map_or(0, |s| s.positions.len());
    let mut header = vec!["t".to_string()];
    for i in 1..=n {
        for c in ["x", "y", "vx", "vy", "theta", "r"] {
            header.push(format!("{c}{i}"));
        }
    }
    writeln!(w, "{}", header.join(","))?;
    for s in &log.samples {
        let mut row = vec![num(s.time)];
        for i in 0..n {
            let (x, v) = (s.positions[i], s.velocities[i]);
            row.extend([
                num(x[0]),
                num(x[1]),
                num(v[0]),
                num(v[1]),
                num(s.heading(i)),
                num(s.speed(i)),
            ]);
        }
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct EventLine {
    t: f64,
    particle: usize,
    kind: BreakdownKind,
    theta_pre: f64,
    r_pre: f64,
    theta_post: f64,
    r_post: f64,
}

/// One JSON object per event with fields
/// `t, particle, kind, theta_pre, r_pre, theta_post, r_post`.
pub fn write_events_jsonl(w: &mut impl Write, events: &[BreakdownEvent]) -> Result<()> {
    for e in events {
        let line = EventLine {
            t: e.time,
            particle: e.particle,
            kind: e.kind,
            theta_pre: e.theta_pre,
            r_pre: e.r_pre,
            theta_post: e.theta_post,
            r_post: e.r_post,
        };
        writeln!(w, "{}", serde_json::to_string(&line)?)?;
    }
    w.flush()?;
    Ok(())
}

/// Header `epsilon,err_x,err_v,order_x,order_v`; orders are empty on the first row.
pub fn write_sweep_csv(w: &mut impl Write, table: &SweepTable) -> Result<()> {
    writeln!(w, "epsilon,err_x,err_v,order_x,order_v")?;
    for r in &table.rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            num(r.epsilon),
            num(r.err_x),
            num(r.err_v),
            opt_num(r.order_x),
            opt_num(r.order_v)
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Header `t,max_speed,com_x,com_y,energy`.
pub fn write_diagnostics_csv(w: &mut impl Write, rows: &[DiagnosticRow]) -> Result<()> {
    writeln!(w, "t,max_speed,com_x,com_y,energy")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            num(r.time),
            num(r.max_speed),
            num(r.center_of_mass[0]),
            num(r.center_of_mass[1]),
            num(r.energy)
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(w: &mut impl Write, value: &impl Serialize) -> Result<()> {
    serde_json::to_writer_pretty(&mut *w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}
