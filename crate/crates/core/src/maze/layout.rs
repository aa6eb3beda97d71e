use std::collections::VecDeque;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Grid cell as `(column, row)`. Row 0 is the first line of a layout file.
pub type Cell = (usize, usize);

/// The twelve-by-twelve maze used by default: start in the middle, one goal
/// per quadrant.
pub const DEFAULT_LAYOUT: &str = "\
############
#...#....#.#
#.G.#.##.G.#
#.#...#..#.#
#.#.#.#.##.#
#...#S.....#
###.#.####.#
#.....#....#
#.#.#.#.#..#
#G#.#....G.#
#...#.#....#
############
";

/// Occupancy grid with start and goal cells.
#[derive(Debug, Clone, PartialEq)]
pub struct MazeLayout {
    width: usize,
    height: usize,
    walls: Vec<bool>,
    cell_size: f64,
    start: Cell,
    goals: Vec<Cell>,
}

pub const NEIGHBOURS_NESW: [(isize, isize); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

impl MazeLayout {
    pub fn new(
        width: usize,
        height: usize,
        walls: Vec<bool>,
        cell_size: f64,
        start: Cell,
        goals: Vec<Cell>,
    ) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(Error::Layout(format!("maze {width}x{height} is too small")));
        }
        if walls.len() != width * height {
            return Err(Error::shape("wall grid", width * height, walls.len()));
        }
        if !(cell_size.is_finite() && cell_size > 0.0) {
            return Err(Error::Layout(format!("cell size {cell_size} must be positive")));
        }
        let layout = MazeLayout {
            width,
            height,
            walls,
            cell_size,
            start,
            goals,
        };
        layout.validate()?;
        Ok(layout)
    }

    fn validate(&self) -> Result<()> {
        for x in 0..self.width {
            if !self.is_wall((x, 0)) || !self.is_wall((x, self.height - 1)) {
                return Err(Error::Layout("outer boundary must be wall".into()));
            }
        }
        for y in 0..self.height {
            if !self.is_wall((0, y)) || !self.is_wall((self.width - 1, y)) {
                return Err(Error::Layout("outer boundary must be wall".into()));
            }
        }
        if !self.in_bounds(self.start) || self.is_wall(self.start) {
            return Err(Error::Layout(format!("start {:?} is not a free cell", self.start)));
        }
        if self.goals.is_empty() {
            return Err(Error::Layout("at least one goal cell is required".into()));
        }
        let dist = self.distances_from(self.start);
        for &g in &self.goals {
            if !self.in_bounds(g) || self.is_wall(g) {
                return Err(Error::Layout(format!("goal {g:?} is not a free cell")));
            }
            if dist[self.index(g)].is_none() {
                return Err(Error::Unreachable(g));
            }
        }
        Ok(())
    }

    /// Parses the text format: one row per line, `#` wall, `.` free,
    /// `S` start, `G` goal. Goals are numbered in reading order.
    pub fn parse(text: &str, cell_size: f64) -> Result<Self> {
        let rows: Vec<&str> = text
            .lines()
            .map(str::trim_end)
            .filter(|l| !l.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(Error::Layout("empty layout".into()));
        }
        let width = rows[0].chars().count();
        let mut walls = Vec::with_capacity(width * rows.len());
        let mut start = None;
        let mut goals = Vec::new();
        for (y, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::Layout(format!("row {y} has a different width")));
            }
            for (x, ch) in row.chars().enumerate() {
                match ch {
                    '#' => walls.push(true),
                    '.' => walls.push(false),
                    'S' => {
                        if start.replace((x, y)).is_some() {
                            return Err(Error::Layout("more than one start cell".into()));
                        }
                        walls.push(false);
                    }
                    'G' => {
                        goals.push((x, y));
                        walls.push(false);
                    }
                    other => {
                        return Err(Error::Layout(format!("unknown cell character {other:?}")))
                    }
                }
            }
        }
        let start = start.ok_or_else(|| Error::Layout("no start cell".into()))?;
        MazeLayout::new(width, rows.len(), walls, cell_size, start, goals)
    }

    pub fn load(path: &Path, cell_size: f64) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        MazeLayout::parse(&text, cell_size)
    }

    pub fn default_maze() -> Self {
        MazeLayout::parse(DEFAULT_LAYOUT, 1.0).expect("built-in layout is valid")
    }

    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity((self.width + 1) * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                let c = (x, y);
                out.push(if self.is_wall(c) {
                    '#'
                } else if c == self.start {
                    'S'
                } else if self.goals.contains(&c) {
                    'G'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }

    /// Hex SHA-256 of the canonical text and cell size.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_text().as_bytes());
        h.update(self.cell_size.to_le_bytes());
        hex::encode(h.finalize())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        self.cell_size
    }

    pub fn start(&self) -> Cell {
        self.start
    }

    pub fn goals(&self) -> &[Cell] {
        &self.goals
    }

    /// Physical extent `(width·cell, height·cell)` in metres.
    pub fn extent(&self) -> [f64; 2] {
        [
            self.width as f64 * self.cell_size,
            self.height as f64 * self.cell_size,
        ]
    }

    pub fn in_bounds(&self, (x, y): Cell) -> bool {
        x < self.width && y < self.height
    }

    fn index(&self, (x, y): Cell) -> usize {
        y * self.width + x
    }

    /// Out-of-bounds cells count as walls.
    pub fn is_wall(&self, c: Cell) -> bool {
        !self.in_bounds(c) || self.walls[self.index(c)]
    }

    /// Wall lookup for signed cell coordinates.
    pub fn is_wall_signed(&self, x: i64, y: i64) -> bool {
        x < 0 || y < 0 || self.is_wall((x as usize, y as usize))
    }

    /// Cell containing a point, as signed indices (may lie outside).
    pub fn cell_of(&self, p: [f64; 2]) -> (i64, i64) {
        (
            (p[0] / self.cell_size).floor() as i64,
            (p[1] / self.cell_size).floor() as i64,
        )
    }

    pub fn is_free_point(&self, p: [f64; 2]) -> bool {
        let (x, y) = self.cell_of(p);
        !self.is_wall_signed(x, y)
    }

    pub fn cell_center(&self, (x, y): Cell) -> [f64; 2] {
        [
            (x as f64 + 0.5) * self.cell_size,
            (y as f64 + 0.5) * self.cell_size,
        ]
    }

    pub fn free_neighbours(&self, (x, y): Cell) -> impl Iterator<Item = Cell> + '_ {
        NEIGHBOURS_NESW.iter().filter_map(move |&(dx, dy)| {
            let nx = x as i64 + dx as i64;
            let ny = y as i64 + dy as i64;
            (!self.is_wall_signed(nx, ny)).then_some((nx as usize, ny as usize))
        })
    }

    /// BFS distances (in cells) from `from` to every cell; `None` where
    /// unreachable or wall.
    pub fn distances_from(&self, from: Cell) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.width * self.height];
        if self.is_wall(from) {
            return dist;
        }
        dist[self.index(from)] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.index(c)].unwrap();
            for n in self.free_neighbours(c) {
                let i = self.index(n);
                if dist[i].is_none() {
                    dist[i] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    pub fn distance(&self, from: Cell, to: Cell) -> Option<usize> {
        if !self.in_bounds(to) {
            return None;
        }
        self.distances_from(from)[self.index(to)]
    }
}
