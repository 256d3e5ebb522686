//! Per-step flight logs and their CSV form.

use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub uav_id: usize,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
    pub d_dest: f64,
    /// Empty when no obstacle exists.
    pub d_obst: Option<f64>,
    pub d_ppz: Option<f64>,
}

impl TrajectoryRow {
    pub fn new(
        t: f64,
        uav_id: usize,
        position: Vec2,
        velocity: Vec2,
        acceleration: Vec2,
        destination: Vec2,
        d_obst: Option<f64>,
        d_ppz: Option<f64>,
    ) -> Self {
        Self {
            t,
            uav_id,
            x: position.x,
            y: position.y,
            vx: velocity.x,
            vy: velocity.y,
            ax: acceleration.x,
            ay: acceleration.y,
            d_dest: position.distance(destination),
            d_obst,
            d_ppz,
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }

    pub fn speed(&self) -> f64 {
        Vec2::new(self.vx, self.vy).norm()
    }
}

/// One row per vehicle per step flown, in SI units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrajectoryLog {
    pub rows: Vec<TrajectoryRow>,
}

impl TrajectoryLog {
    pub fn push(&mut self, row: TrajectoryRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn for_uav(&self, id: usize) -> impl Iterator<Item = &TrajectoryRow> {
        self.rows.iter().filter(move |r| r.uav_id == id)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| Error::io("writing trajectory", e))
    }

    /// Columns `t, uav_id, x, y, vx, vy, ax, ay, d_dest, d_obst, d_ppz`.
    pub fn export(&self, path: &Path) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::invalid("trajectory", "log is empty"));
        }
        let file = std::fs::File::create(path)
            .map_err(|e| Error::io(format!("creating {}", path.display()), e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Free-function form of [`TrajectoryLog::export`].
pub fn export_timeseries(log: &TrajectoryLog, path: &Path) -> Result<()> {
    log.export(path)
}
