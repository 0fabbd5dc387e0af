//! Occupancy grid and the global geometric planner.
//!
//! Cells are indexed `(ix, iy)` with `iy = 0` on the bottom row; the map file
//! lists rows top to bottom. Cell `(ix, iy)` has its center at
//! `origin + (ix, iy) * resolution`.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum WorldError {
    #[error("no path between {start} and {goal}")]
    NoPath { start: Waypoint, goal: Waypoint },
    #[error("{what} {point} is outside the map or occupied")]
    OutOfBounds { what: &'static str, point: Waypoint },
    #[error("map file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cannot read map {path}: {msg}")]
    Io { path: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Waypoint {
    pub x: f64,
    pub y: f64,
}

impl Waypoint {
    pub fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Waypoint) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

impl fmt::Display for Waypoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMap {
    width: usize,
    height: usize,
    resolution: f64,
    origin: Waypoint,
    occupied: Vec<bool>,
}

impl GridMap {
    /// Builds a map from rows listed bottom row first.
    pub fn from_rows_bottom_up(rows: &[Vec<bool>], resolution: f64) -> Self {
        let height = rows.len();
        let width = rows.first().map_or(0, Vec::len);
        assert!(resolution > 0.0, "resolution must be positive");
        assert!(rows.iter().all(|r| r.len() == width), "ragged rows");
        let occupied = rows.iter().flatten().copied().collect();
        Self {
            width,
            height,
            resolution,
            origin: Waypoint::default(),
            occupied,
        }
    }

    pub fn empty(width: usize, height: usize, resolution: f64) -> Self {
        Self::from_rows_bottom_up(&vec![vec![false; width]; height], resolution)
    }

    pub fn with_origin(mut self, origin: Waypoint) -> Self {
        self.origin = origin;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn resolution(&self) -> f64 {
        self.resolution
    }

    pub fn origin(&self) -> Waypoint {
        self.origin
    }

    pub fn set_occupied(&mut self, ix: usize, iy: usize, occ: bool) {
        let i = self.index(ix, iy);
        self.occupied[i] = occ;
    }

    pub fn is_occupied(&self, ix: usize, iy: usize) -> bool {
        self.occupied[self.index(ix, iy)]
    }

    fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.width + ix
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> Waypoint {
        Waypoint::new(
            self.origin.x + ix as f64 * self.resolution,
            self.origin.y + iy as f64 * self.resolution,
        )
    }

    /// Cell containing a world point, if inside the map.
    pub fn cell_of(&self, p: Waypoint) -> Option<(usize, usize)> {
        if !p.x.is_finite() || !p.y.is_finite() {
            return None;
        }
        let fx = ((p.x - self.origin.x) / self.resolution).round();
        let fy = ((p.y - self.origin.y) / self.resolution).round();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    fn free_cell_of(&self, p: Waypoint, what: &'static str) -> Result<(usize, usize), WorldError> {
        match self.cell_of(p) {
            Some((ix, iy)) if !self.is_occupied(ix, iy) => Ok((ix, iy)),
            _ => Err(WorldError::OutOfBounds { what, point: p }),
        }
    }

    /// Parses the text map format: a `width height resolution` header, then
    /// `height` rows of `width` characters (`#` occupied, `.` free), top row first.
    pub fn parse(text: &str) -> Result<Self, WorldError> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty());
        let (hline, header) = lines.next().ok_or(WorldError::Parse {
            line: 1,
            msg: "empty map file".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let perr = |line: usize, msg: String| WorldError::Parse {
            line: line + 1,
            msg,
        };
        if fields.len() != 3 {
            return Err(perr(hline, "expected `width height resolution`".into()));
        }
        let width: usize = fields[0]
            .parse()
            .map_err(|_| perr(hline, "bad width".into()))?;
        let height: usize = fields[1]
            .parse()
            .map_err(|_| perr(hline, "bad height".into()))?;
        let resolution: f64 = fields[2]
            .parse()
            .map_err(|_| perr(hline, "bad resolution".into()))?;
        if width == 0 || height == 0 {
            return Err(perr(hline, "map must have at least one cell".into()));
        }
        if !(resolution > 0.0 && resolution.is_finite()) {
            return Err(perr(hline, "resolution must be positive".into()));
        }
        let mut top_down = Vec::with_capacity(height);
        for (ln, row) in lines.by_ref().take(height) {
            let row = row.trim_end();
            if row.chars().count() != width {
                return Err(perr(
                    ln,
                    format!("expected {width} cells, got {}", row.chars().count()),
                ));
            }
            let cells = row
                .chars()
                .map(|c| match c {
                    '#' => Ok(true),
                    '.' => Ok(false),
                    other => Err(perr(ln, format!("unexpected character {other:?}"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            top_down.push(cells);
        }
        if top_down.len() != height {
            return Err(WorldError::Parse {
                line: text.lines().count(),
                msg: format!("expected {height} rows, got {}", top_down.len()),
            });
        }
        if let Some((ln, _)) = lines.next() {
            return Err(perr(ln, "trailing content after the last row".into()));
        }
        top_down.reverse();
        Ok(Self::from_rows_bottom_up(&top_down, resolution))
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path).map_err(|e| WorldError::Io {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn neighbors(&self, ix: usize, iy: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        const STEPS: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];
        STEPS.iter().filter_map(move |&(dx, dy)| {
            let nx = ix.checked_add_signed(dx)?;
            let ny = iy.checked_add_signed(dy)?;
            (nx < self.width && ny < self.height && !self.is_occupied(nx, ny)).then_some((nx, ny))
        })
    }
}

/// Ordered list of waypoints.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GlobalPath {
    pub points: Vec<Waypoint>,
}

impl GlobalPath {
    pub fn new(points: Vec<Waypoint>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Total polyline length in meters (compensated summation, so densified
    /// copies of a path report the same length).
    pub fn length(&self) -> f64 {
        let (mut sum, mut comp) = (0.0f64, 0.0f64);
        for w in self.points.windows(2) {
            let d = w[0].distance(&w[1]);
            let t = sum + d;
            comp += if sum.abs() >= d {
                (sum - t) + d
            } else {
                (d - t) + sum
            };
            sum = t;
        }
        sum + comp
    }
}

/// A* over 4-connected free cells with unit step cost and Manhattan heuristic.
///
/// Open-set ties are broken on `(f, h, row-major cell index)`, so the result is
/// a pure function of the inputs. Returns the cell-center path from start to goal.
pub fn plan_global_path(
    map: &GridMap,
    start: Waypoint,
    goal: Waypoint,
) -> Result<GlobalPath, WorldError> {
    let (sx, sy) = map.free_cell_of(start, "start")?;
    let (gx, gy) = map.free_cell_of(goal, "goal")?;
    let n = map.width * map.height;
    let idx = |x: usize, y: usize| y * map.width + x;
    let h = |x: usize, y: usize| x.abs_diff(gx) + y.abs_diff(gy);

    let mut g_cost = vec![usize::MAX; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    let s = idx(sx, sy);
    g_cost[s] = 0;
    open.push(Reverse((h(sx, sy), h(sx, sy), s)));

    let goal_idx = idx(gx, gy);
    while let Some(Reverse((_, _, cur))) = open.pop() {
        if closed[cur] {
            continue;
        }
        closed[cur] = true;
        if cur == goal_idx {
            break;
        }
        let (cx, cy) = (cur % map.width, cur / map.width);
        for (nx, ny) in map.neighbors(cx, cy) {
            let ni = idx(nx, ny);
            let tentative = g_cost[cur] + 1;
            if !closed[ni] && tentative < g_cost[ni] {
                g_cost[ni] = tentative;
                parent[ni] = cur;
                let hn = h(nx, ny);
                open.push(Reverse((tentative + hn, hn, ni)));
            }
        }
    }
    if !closed[goal_idx] {
        return Err(WorldError::NoPath { start, goal });
    }
    let mut cells = vec![goal_idx];
    let mut cur = goal_idx;
    while cur != s {
        cur = parent[cur];
        cells.push(cur);
    }
    cells.reverse();
    Ok(GlobalPath::new(
        cells
            .into_iter()
            .map(|c| map.cell_center(c % map.width, c / map.width))
            .collect(),
    ))
}

/// Linear subdivision so that consecutive points are at most `spacing` apart.
/// Original vertices are kept verbatim.
pub fn densify_path(path: &GlobalPath, spacing: f64) -> GlobalPath {
    assert!(spacing > 0.0, "spacing must be positive");
    let Some(first) = path.points.first() else {
        return GlobalPath::default();
    };
    let mut out = vec![*first];
    for seg in path.points.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        let d = a.distance(&b);
        // guard against representation noise, e.g. 0.1 / 0.02 = 5.000000000000001
        let n = ((d / spacing) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        for k in 1..n {
            let t = k as f64 / n as f64;
            out.push(Waypoint::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
        }
        out.push(b);
    }
    GlobalPath::new(out)
}
