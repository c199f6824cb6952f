//! Binary K x M x M semantic map built from depth + segmentation.
//!
//! Channels: `0..C` categories, then obstacles, explored, current location and
//! past locations. The map frame is the start pose: the start lies at cell
//! `(M/2, M/2)` facing +x ("east"); rows grow with y.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{bresenham, BitGrid, Cell, GridFrame, CELL_SIZE};
use crate::sim::{CameraModel, CameraPose, Observation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapError {
    #[error("pose ({0:.2}, {1:.2}) is outside the map")]
    OutOfBounds(f64, f64),
    #[error("channel {0} out of range (K = {1})")]
    BadChannel(usize, usize),
    #[error("invalid map config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapConfig {
    /// Side length in cells.
    pub size: usize,
    /// Category names, one channel each.
    pub categories: Vec<String>,
    /// Points whose height falls in `[lo, hi]` mark obstacles.
    pub obstacle_band: (f64, f64),
    /// Rays mark free space as explored up to this horizontal range.
    pub explored_range: f64,
}

impl MapConfig {
    pub fn new(categories: Vec<String>) -> Self {
        Self {
            size: 480,
            categories,
            obstacle_band: (0.1, 1.5),
            explored_range: 5.0,
        }
    }

    pub fn validate(&self) -> Result<(), MapError> {
        if self.size == 0 || !self.size.is_multiple_of(2) {
            return Err(MapError::InvalidConfig("size must be even and positive".into()));
        }
        if self.obstacle_band.0 >= self.obstacle_band.1 {
            return Err(MapError::InvalidConfig("obstacle band must have lo < hi".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SemanticMap {
    config: MapConfig,
    channels: Vec<BitGrid>,
    current: Option<Cell>,
}

impl SemanticMap {
    pub fn new(config: MapConfig) -> Result<Self, MapError> {
        config.validate()?;
        let k = config.categories.len() + 4;
        let channels = vec![BitGrid::new(config.size, config.size, false); k];
        Ok(Self {
            config,
            channels,
            current: None,
        })
    }

    pub fn config(&self) -> &MapConfig {
        &self.config
    }

    pub fn size(&self) -> usize {
        self.config.size
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn category_count(&self) -> usize {
        self.config.categories.len()
    }

    pub fn obstacle_channel(&self) -> usize {
        self.category_count()
    }

    pub fn explored_channel(&self) -> usize {
        self.category_count() + 1
    }

    pub fn current_channel(&self) -> usize {
        self.category_count() + 2
    }

    pub fn past_channel(&self) -> usize {
        self.category_count() + 3
    }

    pub fn query_channel(&self, channel: usize) -> Result<&BitGrid, MapError> {
        self.channels
            .get(channel)
            .ok_or(MapError::BadChannel(channel, self.channels.len()))
    }

    pub fn category(&self, c: usize) -> &BitGrid {
        &self.channels[c]
    }

    pub fn obstacles(&self) -> &BitGrid {
        &self.channels[self.obstacle_channel()]
    }

    pub fn explored(&self) -> &BitGrid {
        &self.channels[self.explored_channel()]
    }

    pub fn past_locations(&self) -> &BitGrid {
        &self.channels[self.past_channel()]
    }

    pub fn current_cell(&self) -> Option<Cell> {
        self.current
    }

    /// Metric placement of the map in the start frame.
    pub fn frame(&self) -> GridFrame {
        let half = (self.config.size / 2) as f64 * CELL_SIZE;
        GridFrame {
            x0: -half,
            y0: -half,
            h: CELL_SIZE,
        }
    }

    /// Map cell of a point in the start frame.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<Cell> {
        let (r, c) = self.frame().locate(x, y);
        self.channels[0].checked(r, c)
    }

    /// Start-frame coordinates of a cell center.
    pub fn cell_center(&self, cell: Cell) -> (f64, f64) {
        self.frame().center(cell)
    }

    /// Sets the current-location channel and accumulates past locations.
    pub fn set_location(&mut self, x: f64, y: f64) -> Result<Cell, MapError> {
        let cell = self.cell_of(x, y).ok_or(MapError::OutOfBounds(x, y))?;
        let cur = self.current_channel();
        let past = self.past_channel();
        if let Some(prev) = self.current.take() {
            self.channels[cur].set(prev, false);
        }
        self.channels[cur].set(cell, true);
        self.channels[past].set(cell, true);
        self.current = Some(cell);
        let explored = self.explored_channel();
        self.channels[explored].set(cell, true);
        Ok(cell)
    }

    /// Integrates one observation taken at its reported pose.
    pub fn update(&mut self, obs: &Observation, camera: &CameraModel) -> Result<(), MapError> {
        let [x, y, yaw] = obs.pose;
        let robot_cell = self.cell_of(x, y).ok_or(MapError::OutOfBounds(x, y))?;
        let pose = CameraPose::new(
            x,
            y,
            camera.mount_height,
            yaw + obs.joints.head_pan,
            obs.joints.head_tilt,
        );
        let label_channel = |id: u16| -> Option<usize> {
            let name = obs.labels.get(&id)?;
            self.config.categories.iter().position(|c| c == name)
        };
        let (lo, hi) = self.config.obstacle_band;
        let range2 = self.config.explored_range * self.config.explored_range;
        let obstacle = self.obstacle_channel();
        let explored = self.explored_channel();
        // farthest horizontal hit per image column, for free-space tracing
        let mut far: Vec<Option<(f64, [f64; 3])>> = vec![None; obs.width];
        let mut hits: Vec<(Cell, Option<usize>, bool)> = Vec::new();
        let f = camera.focal();
        let (cx, cy) = camera.principal_point();
        for v in 0..obs.height {
            let b = (v as f64 + 0.5 - cy) / f;
            for u in 0..obs.width {
                let i = v * obs.width + u;
                let depth = obs.depth[i] as f64;
                if !(depth > 0.0) {
                    continue;
                }
                let a = (u as f64 + 0.5 - cx) / f;
                let p = pose.backproject(a, b, depth);
                let h2 = (p[0] - x).powi(2) + (p[1] - y).powi(2);
                if h2 <= range2 && far[u].is_none_or(|(d, _)| h2 > d) {
                    far[u] = Some((h2, p));
                }
                let Some(cell) = self.cell_of(p[0], p[1]) else {
                    continue;
                };
                let sem = obs.semantic[i];
                let ch = if sem != 0 { label_channel(sem) } else { None };
                let is_obstacle = p[2] >= lo && p[2] <= hi;
                hits.push((cell, ch, is_obstacle));
                if h2 <= range2 {
                    self.channels[explored].set(cell, true);
                }
            }
        }
        for (cell, ch, is_obstacle) in hits {
            if let Some(c) = ch {
                self.channels[c].set(cell, true);
            }
            if is_obstacle {
                self.channels[obstacle].set(cell, true);
            }
        }
        let grid_ref = &self.channels[0];
        let (rows, cols) = (grid_ref.rows() as isize, grid_ref.cols() as isize);
        let start = (robot_cell.row as isize, robot_cell.col as isize);
        let frame = self.frame();
        for (_, p) in far.into_iter().flatten() {
            let end = frame.locate(p[0], p[1]);
            let ch = &mut self.channels[explored];
            bresenham(start, end, |r, c| {
                if r >= 0 && c >= 0 && r < rows && c < cols {
                    ch.set(Cell::new(r as usize, c as usize), true);
                }
            });
        }
        self.set_location(x, y)?;
        Ok(())
    }
}
