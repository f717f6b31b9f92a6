//! Cost maps over a square grid of link scales.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::morphology::{DesignParams, DesignSpace};

pub const CSV_HEADER: [&str; 3] = ["thigh_scale", "shank_scale", "cost"];

/// Costs at the centers of an `n × n` grid. Row `i` holds thigh scale
/// `thigh[i]`, column `j` shank scale `shank[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMap {
    pub grid: usize,
    pub thigh: Vec<f64>,
    pub shank: Vec<f64>,
    /// Row-major; `NaN` marks a failed cell.
    pub costs: Vec<f64>,
    pub failed: Vec<usize>,
    /// First minimal valid cell in row-major order.
    pub argmin: Option<(usize, usize)>,
}

/// Centers of `n` equal cells spanning `[lo, hi]`.
pub fn cell_centers(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (i as f64 + 0.5) * (hi - lo) / n as f64).collect()
}

impl CostMap {
    pub fn cost(&self, row: usize, col: usize) -> f64 {
        self.costs[row * self.grid + col]
    }

    /// Does the argmin cell contain the point `(thigh, shank)` (closed cell)?
    pub fn argmin_contains(&self, space: &DesignSpace, thigh: f64, shank: f64) -> bool {
        let Some((i, j)) = self.argmin else { return false };
        let cell = |(lo, hi): (f64, f64), k: usize| {
            let w = (hi - lo) / self.grid as f64;
            (lo + k as f64 * w, lo + (k + 1) as f64 * w)
        };
        let (t0, t1) = cell(space.bounds[0], i);
        let (s0, s1) = cell(space.bounds[1], j);
        (t0..=t1).contains(&thigh) && (s0..=s1).contains(&shank)
    }

    /// Long-form CSV: header plus one `thigh_scale,shank_scale,cost` row per
    /// cell in row-major order. Floats are written in shortest round-trip form.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for (i, t) in self.thigh.iter().enumerate() {
            for (j, s) in self.shank.iter().enumerate() {
                w.write_record([t.to_string(), s.to_string(), self.cost(i, j).to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Matrix CSV: first row the shank scales, first column the thigh scales.
    pub fn write_matrix_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["thigh_scale\\shank_scale".to_string()];
        header.extend(self.shank.iter().map(f64::to_string));
        w.write_record(&header)?;
        for (i, t) in self.thigh.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend((0..self.grid).map(|j| self.cost(i, j).to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Parse the long-form CSV back into a map.
    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        if r.headers()?.iter().collect::<Vec<_>>() != CSV_HEADER {
            return Err(Error::Config("cost map CSV header mismatch".into()));
        }
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let parse = |k: usize| -> Result<f64> {
                rec.get(k)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Config(format!("bad cost map value in column {k}")))
            };
            rows.push((parse(0)?, parse(1)?, parse(2)?));
        }
        let n = (rows.len() as f64).sqrt().round() as usize;
        if n * n != rows.len() || n == 0 {
            return Err(Error::Config(format!("{} rows do not form a square grid", rows.len())));
        }
        let thigh = (0..n).map(|i| rows[i * n].0).collect();
        let shank = (0..n).map(|j| rows[j].1).collect();
        let costs: Vec<f64> = rows.iter().map(|r| r.2).collect();
        let failed = costs.iter().enumerate().filter(|(_, c)| c.is_nan()).map(|(i, _)| i).collect();
        let argmin = argmin(&costs, n);
        Ok(Self { grid: n, thigh, shank, costs, failed, argmin })
    }
}

fn argmin(costs: &[f64], n: usize) -> Option<(usize, usize)> {
    let mut best: Option<usize> = None;
    for (k, c) in costs.iter().enumerate() {
        if c.is_nan() {
            continue;
        }
        if best.is_none_or(|b| *c < costs[b]) {
            best = Some(k);
        }
    }
    best.map(|k| (k / n, k % n))
}

/// Evaluate `cost(cell_index, design)` at every cell center of the first two
/// design coordinates; other coordinates are taken from `base`. Errors and
/// non-finite costs mark the cell as failed.
pub fn cost_map<F>(grid: usize, space: &DesignSpace, base: &DesignParams, cost: F) -> Result<CostMap>
where
    F: Fn(usize, &DesignParams) -> Result<f64> + Sync,
{
    if grid == 0 {
        return Err(config_err("cost map grid must be >= 1"));
    }
    space.validate()?;
    let thigh = cell_centers(space.bounds[0].0, space.bounds[0].1, grid);
    let shank = cell_centers(space.bounds[1].0, space.bounds[1].1, grid);
    let costs: Vec<f64> = (0..grid * grid)
        .into_par_iter()
        .map(|k| {
            let design = DesignParams { thigh_scale: thigh[k / grid], shank_scale: shank[k % grid], gears: base.gears };
            match cost(k, &design) {
                Ok(c) if c.is_finite() => c,
                _ => f64::NAN,
            }
        })
        .collect();
    let failed = costs.iter().enumerate().filter(|(_, c)| c.is_nan()).map(|(i, _)| i).collect();
    let argmin = argmin(&costs, grid);
    Ok(CostMap { grid, thigh, shank, costs, failed, argmin })
}
