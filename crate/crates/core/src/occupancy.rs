//! Occupancy grids built from point clouds, and the obstacle queries used
//! between the two prediction passes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RESOLUTION: f64 = 0.2;
pub const DEFAULT_Z_BAND: (f64, f64) = (0.2, 2.0);
pub const DEFAULT_COUNT_THRESHOLD: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
}

impl PointCloud {
    /// Reads whitespace- or comma-separated `x y z` lines; `#` starts a comment.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut points = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|s| !s.is_empty())
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::parse(origin, i + 1, format!("bad number: {e}")))?;
            match vals[..] {
                [x, y, z] if x.is_finite() && y.is_finite() && z.is_finite() => points.push(Point3 { x, y, z }),
                _ => return Err(Error::parse(origin, i + 1, "expected three finite values x y z")),
            }
        }
        Ok(PointCloud { points })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn format(&self) -> String {
        let mut out = String::new();
        for p in &self.points {
            let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
        }
        out
    }
}

/// Row-major occupancy raster. Cell `(r, c)` has its center at
/// `(x0 + (c + 0.5) * res, y0 + (r + 0.5) * res)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyGrid {
    pub origin: (f64, f64),
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
    /// Identifier scenes refer to through `grid_ref`; not part of the file.
    #[serde(skip)]
    pub id: Option<String>,
}

impl OccupancyGrid {
    pub fn empty(origin: (f64, f64), resolution: f64, width: usize, height: usize) -> Result<Self> {
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(Error::InvalidArgument(format!("resolution must be positive, got {resolution}")));
        }
        Ok(OccupancyGrid {
            origin,
            resolution,
            width,
            height,
            cells: vec![false; width * height],
            id: None,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn is_occupied(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, occupied: bool) {
        self.cells[row * self.width + col] = occupied;
    }

    pub fn cell_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin.0 + (col as f64 + 0.5) * self.resolution,
            self.origin.1 + (row as f64 + 0.5) * self.resolution,
        )
    }

    /// Cell containing a metric point, if inside the grid.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let c = ((x - self.origin.0) / self.resolution).floor();
        let r = ((y - self.origin.1) / self.resolution).floor();
        if c < 0.0 || r < 0.0 || c >= self.width as f64 || r >= self.height as f64 {
            return None;
        }
        Some((r as usize, c as usize))
    }

    /// Marks every cell whose center lies inside the box.
    pub fn fill_rect(&mut self, min: (f64, f64), max: (f64, f64)) {
        for r in 0..self.height {
            for c in 0..self.width {
                let (x, y) = self.cell_center(r, c);
                if x >= min.0 && x <= max.0 && y >= min.1 && y <= max.1 {
                    self.set(r, c, true);
                }
            }
        }
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    /// `ogrid v1 <width> <height> <x0> <y0> <resolution>` followed by `height`
    /// lines of `width` characters, `#` occupied and `.` free; line `r` is row `r`.
    pub fn format(&self) -> String {
        let mut out = format!(
            "ogrid v1 {} {} {} {} {}\n",
            self.width, self.height, self.origin.0, self.origin.1, self.resolution
        );
        for r in 0..self.height {
            for c in 0..self.width {
                out.push(if self.is_occupied(r, c) { '#' } else { '.' });
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::parse(origin, 1, "missing header"))?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        if fields.len() != 7 || fields[0] != "ogrid" || fields[1] != "v1" {
            return Err(Error::parse(origin, 1, "expected 'ogrid v1 <width> <height> <x0> <y0> <resolution>'"));
        }
        let bad = |what: &str| Error::parse(origin, 1, format!("bad {what}"));
        let width: usize = fields[2].parse().map_err(|_| bad("width"))?;
        let height: usize = fields[3].parse().map_err(|_| bad("height"))?;
        let x0: f64 = fields[4].parse().map_err(|_| bad("x0"))?;
        let y0: f64 = fields[5].parse().map_err(|_| bad("y0"))?;
        let res: f64 = fields[6].parse().map_err(|_| bad("resolution"))?;
        let mut grid = OccupancyGrid::empty((x0, y0), res, width, height).map_err(|_| bad("resolution"))?;
        for r in 0..height {
            let line = lines
                .next()
                .ok_or_else(|| Error::parse(origin, r + 2, "missing grid row"))?;
            if line.chars().count() != width {
                return Err(Error::parse(origin, r + 2, format!("row must have {width} cells")));
            }
            for (c, ch) in line.chars().enumerate() {
                match ch {
                    '#' => grid.set(r, c, true),
                    '.' => {}
                    other => return Err(Error::parse(origin, r + 2, format!("unexpected cell character {other:?}"))),
                }
            }
        }
        if let Some((i, _)) = lines.enumerate().find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(origin, height + 2 + i, "trailing data after grid rows"));
        }
        Ok(grid)
    }

    /// Loads a grid; its id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut grid = Self::parse(&text, path)?;
        grid.id = path.file_stem().map(|s| s.to_string_lossy().into_owned());
        Ok(grid)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.format()).map_err(|e| Error::io(path, e))
    }
}

/// A cell is occupied iff at least `count_threshold` points with `z` inside
/// `z_band` (inclusive) fall into it. The grid origin is the cloud's xy
/// minimum snapped down to a multiple of `resolution`.
pub fn rasterize(cloud: &PointCloud, resolution: f64, z_band: (f64, f64), count_threshold: usize) -> Result<OccupancyGrid> {
    if !(resolution > 0.0 && resolution.is_finite()) {
        return Err(Error::InvalidArgument(format!("resolution must be positive, got {resolution}")));
    }
    if !(z_band.0 < z_band.1) {
        return Err(Error::InvalidArgument(format!("z band {z_band:?} is empty")));
    }
    if count_threshold == 0 {
        return Err(Error::InvalidArgument("count threshold must be >= 1".into()));
    }
    if cloud.points.is_empty() {
        return OccupancyGrid::empty((0.0, 0.0), resolution, 0, 0);
    }
    let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in &cloud.points {
        lo_x = lo_x.min(p.x);
        lo_y = lo_y.min(p.y);
        hi_x = hi_x.max(p.x);
        hi_y = hi_y.max(p.y);
    }
    let x0 = (lo_x / resolution).floor() * resolution;
    let y0 = (lo_y / resolution).floor() * resolution;
    let width = ((hi_x - x0) / resolution).floor() as usize + 1;
    let height = ((hi_y - y0) / resolution).floor() as usize + 1;
    let mut counts = vec![0usize; width * height];
    for p in &cloud.points {
        if p.z < z_band.0 || p.z > z_band.1 {
            continue;
        }
        let c = (((p.x - x0) / resolution).floor() as usize).min(width - 1);
        let r = (((p.y - y0) / resolution).floor() as usize).min(height - 1);
        counts[r * width + c] += 1;
    }
    let mut grid = OccupancyGrid::empty((x0, y0), resolution, width, height)?;
    for (cell, &n) in grid.cells.iter_mut().zip(&counts) {
        *cell = n >= count_threshold;
    }
    Ok(grid)
}

/// Centers of all occupied cells, row-major.
pub fn occupied_points(grid: &OccupancyGrid) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity(grid.occupied_count());
    for r in 0..grid.height {
        for c in 0..grid.width {
            if grid.is_occupied(r, c) {
                out.push(grid.cell_center(r, c));
            }
        }
    }
    out
}

/// Smallest Euclidean distance from `point` to any member of `set`.
pub fn min_distance(point: (f64, f64), set: &[(f64, f64)]) -> Result<f64> {
    set.iter()
        .map(|q| (point.0 - q.0).hypot(point.1 - q.1))
        .reduce(f64::min)
        .ok_or_else(|| Error::InvalidArgument("min_distance over an empty set".into()))
}

/// Occupied cell centers strictly closer than `od` to a predicted point.
pub fn obstacles_near(grid: &OccupancyGrid, predicted: &[(f64, f64)], od: f64) -> Vec<(f64, f64)> {
    if predicted.is_empty() {
        return Vec::new();
    }
    // Cells outside the predicted bounding box grown by `od` cannot qualify.
    let (mut lo_x, mut lo_y, mut hi_x, mut hi_y) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in predicted {
        lo_x = lo_x.min(p.0);
        lo_y = lo_y.min(p.1);
        hi_x = hi_x.max(p.0);
        hi_y = hi_y.max(p.1);
    }
    occupied_points(grid)
        .into_iter()
        .filter(|&(x, y)| x > lo_x - od && x < hi_x + od && y > lo_y - od && y < hi_y + od)
        .filter(|&p| min_distance(p, predicted).is_ok_and(|d| d < od))
        .collect()
}

/// Greedy thinning: visit points in lexicographic `(x, y)` order and keep a
/// point iff no already-kept point is closer than `fd`.
pub fn thin_obstacles(obs: &[(f64, f64)], fd: f64) -> Vec<(f64, f64)> {
    let mut sorted = obs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut kept: Vec<(f64, f64)> = Vec::new();
    for p in sorted {
        if kept.iter().all(|k| (k.0 - p.0).hypot(k.1 - p.1) >= fd) {
            kept.push(p);
        }
    }
    kept
}
