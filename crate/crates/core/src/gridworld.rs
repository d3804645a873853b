//! Discrete navigation worlds with exact deterministic dynamics.
//!
//! Three builders are exposed under harness names: `wall` (one vertical
//! divider with a single gap), `four_rooms` (two crossing walls with one
//! doorway per wall segment) and `directed` (a heading factor on top of an
//! open grid). `open` is a wall-free grid used by the downstream tasks.
//!
//! Coordinates: `x` grows to the right, `y` grows downward, so row 0 is the
//! top line of the ASCII map. Blocked moves leave the state unchanged.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StateId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ActionId(pub usize);

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub x: usize,
    pub y: usize,
}

impl Cell {
    pub const fn new(x: usize, y: usize) -> Self {
        Self { x, y }
    }

    fn offset(self, dx: isize, dy: isize, width: usize, height: usize) -> Option<Cell> {
        let x = self.x as isize + dx;
        let y = self.y as isize + dy;
        if x < 0 || y < 0 || x >= width as isize || y >= height as isize {
            None
        } else {
            Some(Cell::new(x as usize, y as usize))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Heading {
    North,
    East,
    South,
    West,
}

impl Heading {
    pub const ALL: [Heading; 4] = [Heading::North, Heading::East, Heading::South, Heading::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Heading {
        Self::ALL[i % 4]
    }

    pub fn left(self) -> Heading {
        Self::from_index(self.index() + 3)
    }

    pub fn right(self) -> Heading {
        Self::from_index(self.index() + 1)
    }

    fn delta(self) -> (isize, isize) {
        match self {
            Heading::North => (0, -1),
            Heading::East => (1, 0),
            Heading::South => (0, 1),
            Heading::West => (-1, 0),
        }
    }
}

/// Plain-grid action order.
pub const UP: ActionId = ActionId(0);
pub const DOWN: ActionId = ActionId(1);
pub const LEFT: ActionId = ActionId(2);
pub const RIGHT: ActionId = ActionId(3);
const PLAIN_DELTAS: [(isize, isize); 4] = [(0, -1), (0, 1), (-1, 0), (1, 0)];

/// Directed-grid action order.
pub const FORWARD: ActionId = ActionId(0);
pub const TURN_LEFT: ActionId = ActionId(1);
pub const TURN_RIGHT: ActionId = ActionId(2);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Open,
    Wall,
    FourRooms,
    Directed,
    Custom,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::Open => "open",
            EnvKind::Wall => "wall",
            EnvKind::FourRooms => "four_rooms",
            EnvKind::Directed => "directed",
            EnvKind::Custom => "custom",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub walls: BTreeSet<Cell>,
    pub doorways: BTreeSet<Cell>,
    pub directed: bool,
}

impl GridSpec {
    pub fn open(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            walls: BTreeSet::new(),
            doorways: BTreeSet::new(),
            directed: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidEnvironment("empty grid".into()));
        }
        let in_range = |c: &Cell| c.x < self.width && c.y < self.height;
        if let Some(c) = self.walls.iter().chain(&self.doorways).find(|c| !in_range(c)) {
            return Err(Error::InvalidEnvironment(format!(
                "cell ({}, {}) outside {}x{} grid",
                c.x, c.y, self.width, self.height
            )));
        }
        if let Some(c) = self.walls.intersection(&self.doorways).next() {
            return Err(Error::InvalidEnvironment(format!(
                "cell ({}, {}) is both wall and doorway",
                c.x, c.y
            )));
        }
        if self.walls.len() >= self.width * self.height {
            return Err(Error::InvalidEnvironment("no free cell".into()));
        }
        Ok(())
    }
}

/// Placement of a grid inside a (possibly larger) coordinate frame used for
/// feature scaling. Encoders trained on a sub-region see the same feature
/// values a cell would have in the enclosing grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureFrame {
    pub offset_x: usize,
    pub offset_y: usize,
    pub extent_width: usize,
    pub extent_height: usize,
}

impl FeatureFrame {
    pub fn own(width: usize, height: usize) -> Self {
        Self {
            offset_x: 0,
            offset_y: 0,
            extent_width: width,
            extent_height: height,
        }
    }

    fn axis_scale(extent: usize) -> f64 {
        if extent > 1 {
            1.0 / (extent - 1) as f64
        } else {
            0.0
        }
    }

    /// Feature length of one grid step, used for the heading one-hot.
    pub fn cell_step(&self) -> f64 {
        Self::axis_scale(self.extent_width.max(self.extent_height))
    }
}

/// Anything with deterministic tabular dynamics over `0..num_states`.
pub trait DeterministicMdp {
    fn num_states(&self) -> usize;
    fn num_actions(&self) -> usize;
    /// Successor of `(s, a)`; ids are assumed valid.
    fn next_state(&self, s: usize, a: usize) -> usize;
}

/// A bare successor table, for small hand-built or enumerated MDPs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableMdp {
    num_states: usize,
    num_actions: usize,
    next: Vec<usize>,
}

impl TableMdp {
    /// `next[s * num_actions + a]` is the successor of `(s, a)`.
    pub fn new(num_states: usize, num_actions: usize, next: Vec<usize>) -> Result<Self> {
        if num_states == 0 || num_actions == 0 {
            return Err(Error::InvalidEnvironment("empty MDP".into()));
        }
        if next.len() != num_states * num_actions {
            return Err(Error::DimensionMismatch {
                expected: num_states * num_actions,
                got: next.len(),
            });
        }
        if let Some(&bad) = next.iter().find(|&&s| s >= num_states) {
            return Err(Error::StateOutOfRange {
                index: bad,
                num_states,
            });
        }
        Ok(Self {
            num_states,
            num_actions,
            next,
        })
    }
}

impl DeterministicMdp for TableMdp {
    fn num_states(&self) -> usize {
        self.num_states
    }
    fn num_actions(&self) -> usize {
        self.num_actions
    }
    fn next_state(&self, s: usize, a: usize) -> usize {
        self.next[s * self.num_actions + a]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridMdp {
    kind: EnvKind,
    spec: GridSpec,
    frame: FeatureFrame,
    #[serde(skip)]
    cells: Vec<Cell>,
    #[serde(skip)]
    cell_lookup: Vec<Option<usize>>,
    #[serde(skip)]
    next: Vec<usize>,
    #[serde(skip)]
    rooms: Option<Vec<usize>>,
    #[serde(skip)]
    hash: String,
}

/// Wall world: one vertical divider at column `width / 2` with a single gap.
pub fn build_wall_world(width: usize, height: usize, gap_row: usize) -> Result<GridMdp> {
    if width < 5 || width % 2 == 0 {
        return Err(Error::InvalidEnvironment(format!(
            "wall world width must be odd and >= 5, got {width}"
        )));
    }
    if height == 0 || gap_row >= height {
        return Err(Error::InvalidEnvironment(format!(
            "gap row {gap_row} outside height {height}"
        )));
    }
    let cx = width / 2;
    let mut spec = GridSpec::open(width, height);
    for y in 0..height {
        if y == gap_row {
            spec.doorways.insert(Cell::new(cx, y));
        } else {
            spec.walls.insert(Cell::new(cx, y));
        }
    }
    let mut mdp = GridMdp::from_spec(EnvKind::Wall, spec)?;
    let labels = mdp
        .cells
        .iter()
        .map(|c| usize::from(c.x > cx))
        .collect();
    mdp.rooms = Some(labels);
    Ok(mdp)
}

/// Four rooms: walls along the middle column and row, each of the four wall
/// segments pierced by one doorway placed symmetrically about the centre.
pub fn build_four_rooms(width: usize, height: usize) -> Result<GridMdp> {
    if width < 9 || height < 9 || width % 2 == 0 || height % 2 == 0 {
        return Err(Error::InvalidEnvironment(format!(
            "four rooms needs odd dimensions >= 9 to host doorways, got {width}x{height}"
        )));
    }
    let (cx, cy) = (width / 2, height / 2);
    let (dx, dy) = (cx / 2, cy / 2);
    let doorways: BTreeSet<Cell> = [
        Cell::new(cx, dy),
        Cell::new(cx, height - 1 - dy),
        Cell::new(dx, cy),
        Cell::new(width - 1 - dx, cy),
    ]
    .into_iter()
    .collect();
    let mut spec = GridSpec::open(width, height);
    for y in 0..height {
        spec.walls.insert(Cell::new(cx, y));
    }
    for x in 0..width {
        spec.walls.insert(Cell::new(x, cy));
    }
    for d in &doorways {
        spec.walls.remove(d);
    }
    spec.doorways = doorways;
    let mut mdp = GridMdp::from_spec(EnvKind::FourRooms, spec)?;

    let quadrant = |c: Cell| usize::from(c.x > cx) + 2 * usize::from(c.y > cy);
    let labels = mdp
        .cells
        .iter()
        .map(|&c| {
            if !mdp.spec.doorways.contains(&c) {
                return quadrant(c);
            }
            // Doorway joins two rooms; it belongs to the lower-indexed one.
            PLAIN_DELTAS
                .iter()
                .filter_map(|&(ddx, ddy)| c.offset(ddx, ddy, width, height))
                .filter(|n| mdp.is_free(*n) && !mdp.spec.doorways.contains(n))
                .map(quadrant)
                .min()
                .expect("doorway has a free neighbour")
        })
        .collect();
    mdp.rooms = Some(labels);
    Ok(mdp)
}

/// Open grid whose states carry a heading; forward moves along it, turns
/// rotate it by 90 degrees.
pub fn build_directed_grid(width: usize, height: usize) -> Result<GridMdp> {
    if width < 5 || height < 5 {
        return Err(Error::InvalidEnvironment(format!(
            "directed grid needs both dimensions >= 5, got {width}x{height}"
        )));
    }
    let mut spec = GridSpec::open(width, height);
    spec.directed = true;
    GridMdp::from_spec(EnvKind::Directed, spec)
}

pub fn build_open_grid(width: usize, height: usize) -> Result<GridMdp> {
    GridMdp::from_spec(EnvKind::Open, GridSpec::open(width, height))
}

impl GridMdp {
    /// Builds the dynamics for an arbitrary layout and checks strong
    /// connectivity of the resulting state graph.
    pub fn from_spec(kind: EnvKind, spec: GridSpec) -> Result<Self> {
        spec.validate()?;
        let (w, h) = (spec.width, spec.height);
        let mut cells = Vec::new();
        let mut cell_lookup = vec![None; w * h];
        for y in 0..h {
            for x in 0..w {
                let c = Cell::new(x, y);
                if !spec.walls.contains(&c) {
                    cell_lookup[y * w + x] = Some(cells.len());
                    cells.push(c);
                }
            }
        }
        let mut mdp = Self {
            kind,
            frame: FeatureFrame::own(w, h),
            spec,
            cells,
            cell_lookup,
            next: Vec::new(),
            rooms: None,
            hash: String::new(),
        };
        mdp.next = mdp.build_transitions();
        if !mdp.strongly_connected() {
            return Err(Error::InvalidEnvironment(
                "free-state graph is not connected".into(),
            ));
        }
        mdp.rehash();
        Ok(mdp)
    }

    /// Re-anchors feature scaling inside an enclosing frame.
    pub fn with_frame(mut self, frame: FeatureFrame) -> Result<Self> {
        if frame.offset_x + self.spec.width > frame.extent_width
            || frame.offset_y + self.spec.height > frame.extent_height
        {
            return Err(Error::InvalidEnvironment(
                "grid does not fit inside its feature frame".into(),
            ));
        }
        self.frame = frame;
        self.rehash();
        Ok(self)
    }

    fn rehash(&mut self) {
        self.hash = hashing::content_hash(self).expect("grid spec serializes");
    }

    fn build_transitions(&self) -> Vec<usize> {
        let (w, h) = (self.spec.width, self.spec.height);
        let na = self.num_actions();
        let mut next = vec![0; self.num_states() * na];
        for (ci, &c) in self.cells.iter().enumerate() {
            if self.spec.directed {
                for heading in Heading::ALL {
                    let s = ci * 4 + heading.index();
                    let (dx, dy) = heading.delta();
                    let fwd = c
                        .offset(dx, dy, w, h)
                        .and_then(|n| self.cell_index(n))
                        .map_or(s, |ni| ni * 4 + heading.index());
                    next[s * na + FORWARD.0] = fwd;
                    next[s * na + TURN_LEFT.0] = ci * 4 + heading.left().index();
                    next[s * na + TURN_RIGHT.0] = ci * 4 + heading.right().index();
                }
            } else {
                for (a, &(dx, dy)) in PLAIN_DELTAS.iter().enumerate() {
                    next[ci * na + a] = c
                        .offset(dx, dy, w, h)
                        .and_then(|n| self.cell_index(n))
                        .unwrap_or(ci);
                }
            }
        }
        next
    }

    fn reachable(&self, forward: bool) -> usize {
        let n = self.num_states();
        let na = self.num_actions();
        let mut preds = vec![Vec::new(); if forward { 0 } else { n }];
        if !forward {
            for s in 0..n {
                for a in 0..na {
                    preds[self.next[s * na + a]].push(s);
                }
            }
        }
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([0]);
        seen[0] = true;
        let mut count = 1;
        while let Some(s) = queue.pop_front() {
            let succ: Vec<usize> = if forward {
                (0..na).map(|a| self.next[s * na + a]).collect()
            } else {
                preds[s].clone()
            };
            for t in succ {
                if !seen[t] {
                    seen[t] = true;
                    count += 1;
                    queue.push_back(t);
                }
            }
        }
        count
    }

    fn strongly_connected(&self) -> bool {
        let n = self.num_states();
        self.reachable(true) == n && self.reachable(false) == n
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn frame(&self) -> FeatureFrame {
        self.frame
    }

    pub fn width(&self) -> usize {
        self.spec.width
    }

    pub fn height(&self) -> usize {
        self.spec.height
    }

    pub fn is_directed(&self) -> bool {
        self.spec.directed
    }

    /// Content hash of layout, kind and feature frame.
    pub fn env_hash(&self) -> &str {
        &self.hash
    }

    pub fn num_states(&self) -> usize {
        self.cells.len() * if self.spec.directed { 4 } else { 1 }
    }

    pub fn num_actions(&self) -> usize {
        if self.spec.directed {
            3
        } else {
            4
        }
    }

    pub fn free_cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.num_states()).map(StateId)
    }

    pub fn is_free(&self, c: Cell) -> bool {
        self.cell_index(c).is_some()
    }

    fn cell_index(&self, c: Cell) -> Option<usize> {
        if c.x >= self.spec.width || c.y >= self.spec.height {
            return None;
        }
        self.cell_lookup[c.y * self.spec.width + c.x]
    }

    fn check_state(&self, s: StateId) -> Result<()> {
        if s.0 < self.num_states() {
            Ok(())
        } else {
            Err(Error::StateOutOfRange {
                index: s.0,
                num_states: self.num_states(),
            })
        }
    }

    pub fn transition(&self, s: StateId, a: ActionId) -> Result<StateId> {
        self.check_state(s)?;
        if a.0 >= self.num_actions() {
            return Err(Error::ActionOutOfRange {
                index: a.0,
                num_actions: self.num_actions(),
            });
        }
        Ok(self.step(s, a))
    }

    /// Unchecked successor; panics on invalid ids.
    #[inline]
    pub fn step(&self, s: StateId, a: ActionId) -> StateId {
        StateId(self.next[s.0 * self.num_actions() + a.0])
    }

    pub fn cell_of(&self, s: StateId) -> Cell {
        if self.spec.directed {
            self.cells[s.0 / 4]
        } else {
            self.cells[s.0]
        }
    }

    pub fn heading_of(&self, s: StateId) -> Option<Heading> {
        self.spec.directed.then(|| Heading::from_index(s.0 % 4))
    }

    /// State at `cell`; `heading` is required exactly for directed grids.
    pub fn state_at(&self, cell: Cell, heading: Option<Heading>) -> Option<StateId> {
        let ci = self.cell_index(cell)?;
        match (self.spec.directed, heading) {
            (true, Some(h)) => Some(StateId(ci * 4 + h.index())),
            (false, None) => Some(StateId(ci)),
            _ => None,
        }
    }

    /// Room label, for environments that define rooms (wall: 0 left / 1
    /// right; four rooms: 0 top-left, 1 top-right, 2 bottom-left,
    /// 3 bottom-right). Doorways take the lowest adjacent room index.
    pub fn room_of(&self, s: StateId) -> Option<usize> {
        let ci = if self.spec.directed { s.0 / 4 } else { s.0 };
        self.rooms.as_ref().map(|r| r[ci])
    }

    pub fn num_rooms(&self) -> usize {
        self.rooms
            .as_ref()
            .and_then(|r| r.iter().max())
            .map_or(0, |m| m + 1)
    }

    pub fn feature_dim(&self) -> usize {
        if self.spec.directed {
            6
        } else {
            2
        }
    }

    /// Network input for `s`: position scaled into `[0, 1]` by the feature
    /// frame, then (directed grids) a heading one-hot whose magnitude is one
    /// grid step.
    pub fn features(&self, s: StateId) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.feature_dim());
        self.write_features(s, &mut out);
        out
    }

    pub fn write_features(&self, s: StateId, out: &mut Vec<f64>) {
        let c = self.cell_of(s);
        let f = &self.frame;
        out.push((c.x + f.offset_x) as f64 * FeatureFrame::axis_scale(f.extent_width));
        out.push((c.y + f.offset_y) as f64 * FeatureFrame::axis_scale(f.extent_height));
        if let Some(h) = self.heading_of(s) {
            let step = f.cell_step();
            for k in 0..4 {
                out.push(if k == h.index() { step } else { 0.0 });
            }
        }
    }

    /// Row-major `|S| x feature_dim` matrix of all state features.
    pub fn feature_table(&self) -> Vec<Vec<f64>> {
        self.states().map(|s| self.features(s)).collect()
    }

    /// State whose features are closest to `x` (ties to the lowest id).
    pub fn nearest_state(&self, x: &[f64]) -> StateId {
        let mut best = (f64::INFINITY, StateId(0));
        let mut buf = Vec::with_capacity(self.feature_dim());
        for s in self.states() {
            buf.clear();
            self.write_features(s, &mut buf);
            let d: f64 = buf.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, s);
            }
        }
        best.1
    }

    /// Shortest-path action counts from `from` to every state.
    pub fn bfs_distances(&self, from: StateId) -> Vec<Option<usize>> {
        let n = self.num_states();
        let mut dist = vec![None; n];
        dist[from.0] = Some(0);
        let mut queue = VecDeque::from([from.0]);
        while let Some(s) = queue.pop_front() {
            let d = dist[s].unwrap();
            for a in 0..self.num_actions() {
                let t = self.next[s * self.num_actions() + a];
                if dist[t].is_none() {
                    dist[t] = Some(d + 1);
                    queue.push_back(t);
                }
            }
        }
        dist
    }

    /// `.` free, `#` wall, `D` doorway; one line per row, top row first.
    pub fn to_ascii(&self) -> String {
        let mut out = String::with_capacity((self.spec.width + 1) * self.spec.height);
        for y in 0..self.spec.height {
            for x in 0..self.spec.width {
                let c = Cell::new(x, y);
                out.push(if self.spec.walls.contains(&c) {
                    '#'
                } else if self.spec.doorways.contains(&c) {
                    'D'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }
}

impl DeterministicMdp for GridMdp {
    fn num_states(&self) -> usize {
        GridMdp::num_states(self)
    }
    fn num_actions(&self) -> usize {
        GridMdp::num_actions(self)
    }
    fn next_state(&self, s: usize, a: usize) -> usize {
        self.next[s * GridMdp::num_actions(self) + a]
    }
}

/// Environment description addressable from configs by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSpec {
    Wall {
        width: usize,
        height: usize,
        gap_row: usize,
    },
    FourRooms {
        width: usize,
        height: usize,
    },
    Directed {
        width: usize,
        height: usize,
    },
    Open {
        width: usize,
        height: usize,
    },
}

impl EnvSpec {
    pub fn build(&self) -> Result<GridMdp> {
        match *self {
            EnvSpec::Wall {
                width,
                height,
                gap_row,
            } => build_wall_world(width, height, gap_row),
            EnvSpec::FourRooms { width, height } => build_four_rooms(width, height),
            EnvSpec::Directed { width, height } => build_directed_grid(width, height),
            EnvSpec::Open { width, height } => build_open_grid(width, height),
        }
    }

    /// Looks up a builder by its harness name with that builder's default size.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "wall" => Ok(EnvSpec::Wall {
                width: 9,
                height: 9,
                gap_row: 0,
            }),
            "four_rooms" => Ok(EnvSpec::FourRooms {
                width: 9,
                height: 9,
            }),
            "directed" => Ok(EnvSpec::Directed {
                width: 5,
                height: 5,
            }),
            "open" => Ok(EnvSpec::Open {
                width: 9,
                height: 9,
            }),
            other => Err(Error::Config(format!("unknown environment `{other}`"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count_free_by_enumeration(mdp: &GridMdp) -> usize {
        let mut n = 0;
        for y in 0..mdp.height() {
            for x in 0..mdp.width() {
                if !mdp.spec().walls.contains(&Cell::new(x, y)) {
                    n += 1;
                }
            }
        }
        n
    }

    #[test]
    fn wall_world_7x7_has_43_free_cells() {
        let mdp = build_wall_world(7, 7, 3).unwrap();
        assert_eq!(count_free_by_enumeration(&mdp), 43);
        assert_eq!(mdp.num_states(), 43);
        assert_eq!(mdp.num_actions(), 4);
    }

    #[test]
    fn wall_world_rejects_bad_dimensions() {
        assert!(build_wall_world(6, 7, 3).is_err());
        assert!(build_wall_world(3, 7, 1).is_err());
        assert!(build_wall_world(7, 7, 7).is_err());
    }

    #[test]
    fn bump_into_wall_stays() {
        let mdp = build_wall_world(7, 7, 3).unwrap();
        let s = mdp.state_at(Cell::new(2, 0), None).unwrap();
        assert_eq!(mdp.transition(s, RIGHT).unwrap(), s);
        let corner = mdp.state_at(Cell::new(0, 0), None).unwrap();
        assert_eq!(mdp.transition(corner, UP).unwrap(), corner);
        assert_eq!(mdp.transition(corner, LEFT).unwrap(), corner);
    }

    #[test]
    fn open_move_right_increments_x() {
        let mdp = build_wall_world(7, 7, 3).unwrap();
        let s = mdp.state_at(Cell::new(0, 5), None).unwrap();
        let t = mdp.transition(s, RIGHT).unwrap();
        assert_eq!(mdp.cell_of(t), Cell::new(1, 5));
    }

    #[test]
    fn cross_wall_shortest_path_uses_gap() {
        let mdp = build_wall_world(7, 7, 3).unwrap();
        let a = mdp.state_at(Cell::new(2, 0), None).unwrap();
        let b = mdp.state_at(Cell::new(4, 0), None).unwrap();
        let gap = mdp.state_at(Cell::new(3, 3), None).unwrap();
        let from_a = mdp.bfs_distances(a);
        let from_gap = mdp.bfs_distances(gap);
        // Any shortest path passes the gap iff d(a,gap) + d(gap,b) = d(a,b).
        assert_eq!(
            from_a[b.0].unwrap(),
            from_a[gap.0].unwrap() + from_gap[b.0].unwrap()
        );
        assert_eq!(from_a[b.0], Some(8));
    }

    #[test]
    fn out_of_range_ids_error() {
        let mdp = build_wall_world(7, 7, 3).unwrap();
        assert!(matches!(
            mdp.transition(StateId(43), UP),
            Err(Error::StateOutOfRange { .. })
        ));
        assert!(matches!(
            mdp.transition(StateId(0), ActionId(4)),
            Err(Error::ActionOutOfRange { .. })
        ));
    }

    #[test]
    fn disconnected_layout_is_rejected() {
        let mut spec = GridSpec::open(5, 5);
        for y in 0..5 {
            spec.walls.insert(Cell::new(2, y));
        }
        assert!(matches!(
            GridMdp::from_spec(EnvKind::Custom, spec),
            Err(Error::InvalidEnvironment(_))
        ));
    }

    #[test]
    fn overlapping_wall_and_doorway_rejected() {
        let mut spec = GridSpec::open(5, 5);
        spec.walls.insert(Cell::new(1, 1));
        spec.doorways.insert(Cell::new(1, 1));
        assert!(GridMdp::from_spec(EnvKind::Custom, spec).is_err());
    }

    #[test]
    fn four_rooms_9x9_rooms_have_at_least_nine_cells() {
        let mdp = build_four_rooms(9, 9).unwrap();
        let mut counts = [0usize; 4];
        for s in mdp.states() {
            counts[mdp.room_of(s).unwrap()] += 1;
        }
        assert_eq!(mdp.num_rooms(), 4);
        assert!(counts.iter().all(|&c| c >= 9), "{counts:?}");
        assert_eq!(counts.iter().sum::<usize>(), mdp.num_states());
    }

    #[test]
    fn four_rooms_doorways_take_lowest_room() {
        let mdp = build_four_rooms(9, 9).unwrap();
        let room = |x, y| mdp.room_of(mdp.state_at(Cell::new(x, y), None).unwrap());
        assert_eq!(room(4, 2), Some(0));
        assert_eq!(room(2, 4), Some(0));
        assert_eq!(room(6, 4), Some(1));
        assert_eq!(room(4, 6), Some(2));
    }

    #[test]
    fn four_rooms_room_constant_along_open_segments() {
        let mdp = build_four_rooms(11, 9).unwrap();
        for s in mdp.states() {
            if mdp.spec().doorways.contains(&mdp.cell_of(s)) {
                continue;
            }
            for a in 0..4 {
                let t = mdp.step(s, ActionId(a));
                if !mdp.spec().doorways.contains(&mdp.cell_of(t)) {
                    assert_eq!(mdp.room_of(s), mdp.room_of(t));
                }
            }
        }
    }

    #[test]
    fn four_rooms_too_small() {
        assert!(build_four_rooms(7, 9).is_err());
        assert!(build_four_rooms(10, 9).is_err());
    }

    #[test]
    fn directed_grid_product_size_and_turn_inverse() {
        let mdp = build_directed_grid(5, 6).unwrap();
        assert_eq!(mdp.num_states(), 4 * 30);
        for s in mdp.states() {
            let back = mdp.step(mdp.step(s, TURN_LEFT), TURN_RIGHT);
            assert_eq!(back, s);
        }
    }

    #[test]
    fn directed_grid_ahead_and_behind_distances() {
        let mdp = build_directed_grid(7, 7).unwrap();
        let s = mdp.state_at(Cell::new(3, 3), Some(Heading::North)).unwrap();
        let dist = mdp.bfs_distances(s);
        let ahead = mdp.state_at(Cell::new(3, 1), Some(Heading::North)).unwrap();
        // Behind, arriving with the turned-around heading.
        let behind = mdp.state_at(Cell::new(3, 5), Some(Heading::South)).unwrap();
        assert_eq!(dist[ahead.0], Some(2));
        assert_eq!(dist[behind.0], Some(4));
    }

    #[test]
    fn directed_forward_at_border_is_blocked() {
        let mdp = build_directed_grid(5, 5).unwrap();
        let s = mdp.state_at(Cell::new(0, 0), Some(Heading::West)).unwrap();
        assert_eq!(mdp.transition(s, FORWARD).unwrap(), s);
    }

    #[test]
    fn features_are_injective_and_unit_bounded() {
        for mdp in [
            build_wall_world(9, 9, 0).unwrap(),
            build_four_rooms(9, 9).unwrap(),
            build_directed_grid(5, 5).unwrap(),
        ] {
            let table = mdp.feature_table();
            for (i, fi) in table.iter().enumerate() {
                assert_eq!(fi.len(), mdp.feature_dim());
                assert!(fi.iter().all(|v| (0.0..=1.0).contains(v)));
                for fj in &table[i + 1..] {
                    assert_ne!(fi, fj);
                }
            }
        }
    }

    #[test]
    fn frame_places_subgrid_in_large_coordinates() {
        let small = build_open_grid(7, 7)
            .unwrap()
            .with_frame(FeatureFrame {
                offset_x: 4,
                offset_y: 4,
                extent_width: 15,
                extent_height: 15,
            })
            .unwrap();
        let large = build_open_grid(15, 15).unwrap();
        let s = small.state_at(Cell::new(0, 6), None).unwrap();
        let l = large.state_at(Cell::new(4, 10), None).unwrap();
        assert_eq!(small.features(s), large.features(l));
    }

    #[test]
    fn ascii_map_marks_walls_and_doorways() {
        let mdp = build_wall_world(5, 3, 1).unwrap();
        assert_eq!(mdp.to_ascii(), "..#..\n..D..\n..#..\n");
    }

    #[test]
    fn env_names_resolve() {
        for name in ["wall", "four_rooms", "directed", "open"] {
            EnvSpec::by_name(name).unwrap().build().unwrap();
        }
        assert!(EnvSpec::by_name("maze").is_err());
    }

    #[test]
    fn env_hash_depends_on_layout() {
        let a = build_wall_world(9, 9, 0).unwrap();
        let b = build_wall_world(9, 9, 1).unwrap();
        assert_ne!(a.env_hash(), b.env_hash());
        assert_eq!(a.env_hash(), build_wall_world(9, 9, 0).unwrap().env_hash());
    }

    #[test]
    fn nearest_state_snaps_to_grid() {
        let mdp = build_open_grid(5, 5).unwrap();
        let s = mdp.state_at(Cell::new(2, 3), None).unwrap();
        let mut x = mdp.features(s);
        x[0] += 0.05;
        assert_eq!(mdp.nearest_state(&x), s);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn transition_is_total(w in 5usize..10, h in 1usize..8, gap_seed in 0usize..100) {
                let w = w | 1;
                let mdp = build_wall_world(w, h, gap_seed % h).unwrap();
                for s in mdp.states() {
                    for a in 0..mdp.num_actions() {
                        let t = mdp.transition(s, ActionId(a)).unwrap();
                        prop_assert!(t.0 < mdp.num_states());
                    }
                }
            }
        }
    }
}
