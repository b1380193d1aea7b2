use std::collections::VecDeque;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Point;

/// Occupancy grid. Cell `(col, row)` spans
/// `[origin.x + col·res, origin.x + (col+1)·res) × [origin.y + row·res, …)`
/// and is stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldMap {
    pub resolution: f64,
    pub width: usize,
    pub height: usize,
    pub origin: Point,
    pub occupancy: Vec<bool>,
}

/// Resolution and origin stored next to a PGM grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapMetadata {
    pub resolution: f64,
    pub origin: Point,
}

impl WorldMap {
    /// A free grid of `width × height` cells whose one-cell border is occupied.
    pub fn closed_room(width: usize, height: usize, resolution: f64, origin: Point) -> Self {
        let mut occupancy = vec![false; width * height];
        for c in 0..width {
            occupancy[c] = true;
            occupancy[(height - 1) * width + c] = true;
        }
        for r in 0..height {
            occupancy[r * width] = true;
            occupancy[r * width + width - 1] = true;
        }
        Self { resolution, width, height, origin, occupancy }
    }

    pub fn len(&self) -> usize {
        self.occupancy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.occupancy.is_empty()
    }

    pub fn index(&self, col: usize, row: usize) -> usize {
        row * self.width + col
    }

    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let fx = ((p.x - self.origin.x) / self.resolution).floor();
        let fy = ((p.y - self.origin.y) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cell_center(&self, col: usize, row: usize) -> Point {
        Point::new(
            self.origin.x + (col as f64 + 0.5) * self.resolution,
            self.origin.y + (row as f64 + 0.5) * self.resolution,
        )
    }

    pub fn occupied(&self, col: usize, row: usize) -> bool {
        self.occupancy[self.index(col, row)]
    }

    /// Points outside the grid count as occupied.
    pub fn occupied_at(&self, p: Point) -> bool {
        self.cell_of(p).map_or(true, |(c, r)| self.occupied(c, r))
    }

    pub fn set(&mut self, col: usize, row: usize, occupied: bool) {
        let i = self.index(col, row);
        self.occupancy[i] = occupied;
    }

    /// Sets every cell whose center lies in the closed rectangle.
    pub fn fill_rect(&mut self, min: Point, max: Point, occupied: bool) {
        const EPS: f64 = 1e-9;
        for row in 0..self.height {
            for col in 0..self.width {
                let c = self.cell_center(col, row);
                if c.x >= min.x - EPS && c.x <= max.x + EPS && c.y >= min.y - EPS && c.y <= max.y + EPS {
                    self.set(col, row, occupied);
                }
            }
        }
    }

    pub fn fill_disc(&mut self, center: Point, radius: f64, occupied: bool) {
        for row in 0..self.height {
            for col in 0..self.width {
                if self.cell_center(col, row).dist(center) <= radius + 1e-9 {
                    self.set(col, row, occupied);
                }
            }
        }
    }

    /// 8-connected reachability over free cells.
    pub fn connected(&self, a: Point, b: Point) -> bool {
        let (Some(sa), Some(sb)) = (self.cell_of(a), self.cell_of(b)) else {
            return false;
        };
        if self.occupied(sa.0, sa.1) || self.occupied(sb.0, sb.1) {
            return false;
        }
        let target = self.index(sb.0, sb.1);
        let mut seen = vec![false; self.len()];
        let mut queue = VecDeque::from([self.index(sa.0, sa.1)]);
        seen[self.index(sa.0, sa.1)] = true;
        while let Some(i) = queue.pop_front() {
            if i == target {
                return true;
            }
            let (c, r) = ((i % self.width) as i64, (i / self.width) as i64);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nc, nr) = (c + dc, r + dr);
                    if (dc, dr) == (0, 0) || nc < 0 || nr < 0 || nc >= self.width as i64 || nr >= self.height as i64 {
                        continue;
                    }
                    let j = nr as usize * self.width + nc as usize;
                    if !seen[j] && !self.occupancy[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        false
    }

    /// ASCII (P2) graymap: 0 = occupied, 255 = free, first text row = top
    /// row of the map.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for row in (0..self.height).rev() {
            let line: Vec<&str> = (0..self.width).map(|c| if self.occupied(c, row) { "0" } else { "255" }).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    /// Parses a P2 graymap; pixels darker than mid-gray are occupied.
    pub fn from_pgm(text: &str, meta: MapMetadata) -> Result<Self> {
        let mut tokens = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or(""))
            .flat_map(str::split_whitespace);
        let magic = tokens.next().ok_or_else(|| Error::Data("empty pgm".into()))?;
        if magic != "P2" {
            return Err(Error::Data(format!("unsupported pgm magic {magic}")));
        }
        let mut num = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| Error::Data(format!("pgm: missing {what}")))?
                .parse::<usize>()
                .map_err(|e| Error::Data(format!("pgm {what}: {e}")))
        };
        let width = num("width")?;
        let height = num("height")?;
        let maxval = num("maxval")?;
        let mut occupancy = vec![false; width * height];
        for img_row in 0..height {
            let row = height - 1 - img_row;
            for col in 0..width {
                let v = num("pixel")?;
                occupancy[row * width + col] = v * 2 < maxval;
            }
        }
        Ok(Self { resolution: meta.resolution, width, height, origin: meta.origin, occupancy })
    }
}
