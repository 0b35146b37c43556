//! `gevo report`: Pareto table, per-generation trajectory and a scatter plot,
//! all derived from the latest checkpoint.

use std::path::PathBuf;
use std::str::FromStr;

use clap::Args;
use gevo_core::engine::{resume, Checkpoint};
use gevo_core::moea::{Direction, Fitness, ObjectiveSpec};
use plotters::prelude::*;

use crate::error::CliError;
use crate::run::latest_checkpoint;

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run output directory (the one holding `checkpoints/`).
    pub run_dir: PathBuf,
    /// Only genomes meeting this bound count toward the trajectory, e.g.
    /// `complexity_count<=3`. Repeatable.
    #[arg(long = "constraint")]
    pub constraints: Vec<Constraint>,
    /// Output directory; defaults to `<run_dir>/report`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cmp {
    Le,
    Lt,
    Ge,
    Gt,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    name: String,
    cmp: Cmp,
    bound: f64,
}

impl FromStr for Constraint {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        for (tok, cmp) in [("<=", Cmp::Le), (">=", Cmp::Ge), ("<", Cmp::Lt), (">", Cmp::Gt)] {
            if let Some((name, value)) = s.split_once(tok) {
                let bound = value
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| format!("`{}` is not a number", value.trim()))?;
                let name = name.trim();
                if name.is_empty() {
                    break;
                }
                return Ok(Constraint {
                    name: name.to_string(),
                    cmp,
                    bound,
                });
            }
        }
        Err(format!("expected NAME<=VALUE (or <, >=, >), got `{s}`"))
    }
}

impl Constraint {
    fn admits(&self, f: &Fitness) -> bool {
        match f.get(&self.name) {
            Some(v) => match self.cmp {
                Cmp::Le => v <= self.bound,
                Cmp::Lt => v < self.bound,
                Cmp::Ge => v >= self.bound,
                Cmp::Gt => v > self.bound,
            },
            None => false,
        }
    }
}

pub struct Report {
    pub pareto_csv: String,
    pub trajectory_csv: String,
    pub svg: String,
}

fn num(v: f64) -> String {
    v.to_string()
}

fn csv_string(rows: Vec<Vec<String>>) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).map_err(|e| CliError::Internal(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Internal(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| CliError::Internal(e.to_string()))
}

fn better(direction: Direction, a: f64, b: f64) -> bool {
    match direction {
        Direction::Maximize => a > b,
        Direction::Minimize => a < b,
    }
}

pub fn build_report(cp: &Checkpoint, constraints: &[Constraint]) -> Result<Report, CliError> {
    let spec = &cp.config.objectives;
    let state = &cp.state;
    let names: Vec<&str> = spec.names().collect();

    let mut members: Vec<_> = state.hall_of_fame.members().to_vec();
    members.sort_by(|a, b| {
        let pa = spec.minimization_vector(&a.fitness).ok().flatten().unwrap_or_default();
        let pb = spec.minimization_vector(&b.fitness).ok().flatten().unwrap_or_default();
        pa.partial_cmp(&pb)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.id().cmp(b.id()))
    });
    let mut rows = vec![std::iter::once("genome_id".to_string())
        .chain(names.iter().map(|n| n.to_string()))
        .chain(std::iter::once("generation_born".to_string()))
        .collect::<Vec<_>>()];
    for m in &members {
        let mut row = vec![m.id().to_string()];
        row.extend(names.iter().map(|n| m.fitness.get(n).map(num).unwrap_or_default()));
        row.push(m.genome.born_generation.to_string());
        rows.push(row);
    }
    let pareto_csv = csv_string(rows)?;

    let mut rows = vec![std::iter::once("generation".to_string())
        .chain(names.iter().map(|n| format!("best_{n}")))
        .collect::<Vec<_>>()];
    let mut best: Vec<Option<f64>> = vec![None; names.len()];
    for g in 0..=state.generation {
        for h in state.history.iter().filter(|h| h.generation == g) {
            if !h.fitness.is_valid() || !constraints.iter().all(|c| c.admits(&h.fitness)) {
                continue;
            }
            for (k, obj) in spec.objectives().iter().enumerate() {
                if let Some(v) = h.fitness.get(&obj.name) {
                    if best[k].is_none_or(|b| better(obj.direction, v, b)) {
                        best[k] = Some(v);
                    }
                }
            }
        }
        let mut row = vec![g.to_string()];
        row.extend(best.iter().map(|b| b.map(num).unwrap_or_default()));
        rows.push(row);
    }
    let trajectory_csv = csv_string(rows)?;

    let svg = scatter(cp, spec)?;
    Ok(Report {
        pareto_csv,
        trajectory_csv,
        svg,
    })
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { (hi - lo) * 0.05 } else { lo.abs().max(1.0) * 0.05 };
    (lo - pad, hi + pad)
}

/// All valid evaluated points in grey with the hall of fame in red, on the
/// first two objectives (or objective against generation when there is
/// only one).
fn scatter(cp: &Checkpoint, spec: &ObjectiveSpec) -> Result<String, CliError> {
    let names: Vec<&str> = spec.names().collect();
    let state = &cp.state;
    let coords = |f: &Fitness, generation: u32| -> Option<(f64, f64)> {
        if !f.is_valid() {
            return None;
        }
        match names.as_slice() {
            [only] => Some((generation as f64, f.get(only)?)),
            [x, y, ..] => Some((f.get(x)?, f.get(y)?)),
            [] => None,
        }
    };
    let all: Vec<(f64, f64)> = state
        .history
        .iter()
        .filter_map(|h| coords(&h.fitness, h.generation))
        .collect();
    let front: Vec<(f64, f64)> = state
        .hall_of_fame
        .members()
        .iter()
        .filter_map(|m| coords(&m.fitness, m.genome.born_generation))
        .collect();
    let (x_label, y_label) = match names.as_slice() {
        [only] => ("generation", *only),
        [x, y, ..] => (*x, *y),
        [] => ("", ""),
    };

    let xr = span(all.iter().chain(&front).map(|p| p.0));
    let yr = span(all.iter().chain(&front).map(|p| p.1));
    let mut svg = String::new();
    {
        let root = SVGBackend::with_string(&mut svg, (720, 540)).into_drawing_area();
        let draw = |e: &dyn std::fmt::Display| CliError::Internal(format!("plot: {e}"));
        root.fill(&WHITE).map_err(|e| draw(&e))?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("Pareto front at generation {}", state.generation), ("sans-serif", 20))
            .margin(16)
            .x_label_area_size(40)
            .y_label_area_size(60)
            .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)
            .map_err(|e| draw(&e))?;
        chart
            .configure_mesh()
            .x_desc(x_label)
            .y_desc(y_label)
            .draw()
            .map_err(|e| draw(&e))?;
        chart
            .draw_series(all.iter().map(|&p| Circle::new(p, 3, RGBColor(150, 150, 150).filled())))
            .map_err(|e| draw(&e))?
            .label("evaluated")
            .legend(|p| Circle::new(p, 3, RGBColor(150, 150, 150).filled()));
        chart
            .draw_series(front.iter().map(|&p| Circle::new(p, 5, RED.filled())))
            .map_err(|e| draw(&e))?
            .label("hall of fame")
            .legend(|p| Circle::new(p, 5, RED.filled()));
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(|e| draw(&e))?;
        root.present().map_err(|e| draw(&e))?;
    }
    Ok(svg)
}

pub fn cmd_report(args: &ReportArgs) -> Result<String, CliError> {
    let path = latest_checkpoint(&args.run_dir)?;
    let cp = resume(&path)?;
    let report = build_report(&cp, &args.constraints)?;
    let out = args.out.clone().unwrap_or_else(|| args.run_dir.join("report"));
    std::fs::create_dir_all(&out).map_err(|e| CliError::io(out.display(), e))?;
    for (name, text) in [
        ("pareto.csv", &report.pareto_csv),
        ("trajectory.csv", &report.trajectory_csv),
        ("pareto.svg", &report.svg),
    ] {
        let p = out.join(name);
        std::fs::write(&p, text).map_err(|e| CliError::io(p.display(), e))?;
    }
    Ok(format!(
        "wrote pareto.csv ({} rows), trajectory.csv and pareto.svg to {}",
        cp.state.hall_of_fame.len(),
        out.display()
    ))
}
