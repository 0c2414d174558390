//! CSV and JSON emission for sweep results, and CSV re-ingestion.

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::plot::render_svg;
use super::sweep::{aggregate, Aggregate, Axis, Cell, Optimizer, SweepConfig, SweepResult};

pub const CELLS_HEADER: [&str; 7] = ["axis", "axis_value", "optimizer", "trial", "gen_loss", "train_loss", "status"];

/// One line of the cell CSV. Undefined losses are empty fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRow {
    pub axis: Axis,
    pub axis_value: usize,
    pub optimizer: Optimizer,
    pub trial: usize,
    pub gen_loss: Option<f64>,
    pub train_loss: Option<f64>,
    pub status: String,
}

impl CellRow {
    fn of(axis: Axis, c: &Cell) -> Self {
        Self {
            axis,
            axis_value: c.axis_value,
            optimizer: c.optimizer,
            trial: c.trial,
            gen_loss: c.gen_loss,
            train_loss: c.train_loss,
            status: c.status.name().to_string(),
        }
    }
}

fn headerless<W: Write>(w: W, header: &[&str]) -> Result<csv::Writer<W>> {
    let mut out = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    out.write_record(header)?;
    Ok(out)
}

/// Writes the header even when there are no cells.
pub fn write_cells_csv<W: Write>(axis: Axis, cells: &[Cell], w: W) -> Result<()> {
    let mut out = headerless(w, &CELLS_HEADER)?;
    for c in cells {
        out.serialize(CellRow::of(axis, c))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_cells_csv<R: Read>(r: R) -> Result<Vec<CellRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    rdr.deserialize().map(|row| row.map_err(Into::into)).collect()
}

/// Aggregates recomputed from re-ingested rows.
pub fn aggregate_rows(rows: &[CellRow]) -> Vec<Aggregate> {
    aggregate(rows.iter().map(|r| (r.axis_value, r.optimizer, r.gen_loss)))
}

pub fn write_summary_csv<W: Write>(aggregates: &[Aggregate], w: W) -> Result<()> {
    let mut out = headerless(w, &["axis_value", "optimizer", "median", "q25", "q75", "defined", "undefined"])?;
    for a in aggregates {
        let q = a.quartiles;
        out.serialize((
            a.axis_value,
            a.optimizer,
            q.map(|q| q.median),
            q.map(|q| q.q25),
            q.map(|q| q.q75),
            a.defined,
            a.undefined,
        ))?;
    }
    out.flush()?;
    Ok(())
}

/// Per-trial G&C counts and both the mean and median of accepted losses.
pub fn write_gnc_details_csv<W: Write>(cells: &[Cell], w: W) -> Result<()> {
    let header = ["axis_value", "trial", "accepted", "total_drawn", "acceptance_rate", "mean_gen_loss", "median_gen_loss", "retained_all"];
    let mut out = headerless(w, &header)?;
    for c in cells {
        if let Some(g) = &c.gnc {
            let rate = if g.total_drawn > 0 { g.accepted as f64 / g.total_drawn as f64 } else { 0.0 };
            out.serialize((c.axis_value, c.trial, g.accepted, g.total_drawn, rate, c.gen_loss, g.median_gen_loss, g.retained_all))?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Retained accepted draws: one line per draw.
pub fn write_gnc_accepted_csv<W: Write>(cells: &[Cell], w: W) -> Result<()> {
    let mut out = headerless(w, &["axis_value", "trial", "sample_index", "gen_loss"])?;
    for c in cells {
        if let Some(g) = &c.gnc {
            for (i, l) in g.accepted_indices.iter().zip(&g.accepted_gen_losses) {
                out.serialize((c.axis_value, c.trial, i, l))?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    config_hash: &'a str,
    config: &'a SweepConfig,
    aggregates: Vec<Aggregate>,
    failed_cells: usize,
}

fn create(dir: &Path, name: &str, written: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path)?;
    written.push(path);
    Ok(BufWriter::new(f))
}

/// Writes `cells.csv`, `summary.csv`, `gnc_details.csv`, `gnc_accepted.csv`,
/// `sweep.json` and `plot.svg` into `dir`, returning the paths written.
pub fn write_outputs(res: &SweepResult, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let axis = res.config.axis;
    let aggregates = res.aggregates();
    write_cells_csv(axis, &res.cells, create(dir, "cells.csv", &mut written)?)?;
    write_summary_csv(&aggregates, create(dir, "summary.csv", &mut written)?)?;
    write_gnc_details_csv(&res.cells, create(dir, "gnc_details.csv", &mut written)?)?;
    write_gnc_accepted_csv(&res.cells, create(dir, "gnc_accepted.csv", &mut written)?)?;
    let summary = SweepSummary {
        config_hash: &res.config_hash,
        config: &res.config,
        failed_cells: res.cells.iter().filter(|c| c.status != super::CellStatus::Ok).count(),
        aggregates: aggregates.clone(),
    };
    let mut json = create(dir, "sweep.json", &mut written)?;
    serde_json::to_writer_pretty(&mut json, &summary)?;
    json.flush()?;
    let mut svg = create(dir, "plot.svg", &mut written)?;
    svg.write_all(render_svg(axis, &res.config.name, &aggregates).as_bytes())?;
    svg.flush()?;
    Ok(written)
}
