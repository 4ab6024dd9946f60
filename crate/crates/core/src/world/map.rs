use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{Interaction, ObjectKind, OptionSpec, MINING_STATIONS};
use crate::error::{Error, Result};
use crate::graph::Domain;

/// Row-major cell index.
pub type Cell = usize;

const NO_OBJECT: u16 = u16::MAX;
const UNREACHABLE: u16 = u16::MAX;
const MAX_TERRAIN_RETRIES: usize = 100;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Object {
    pub kind: ObjectKind,
    pub cell: Cell,
    pub alive: bool,
}

/// A typed grid. Impassable terrain is static; every other object sits on
/// at most one cell and may move or disappear.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct MapSpec {
    height: usize,
    width: usize,
    terrain: Vec<Option<ObjectKind>>,
    objects: Vec<Object>,
    occupant: Vec<u16>,
    agent: Cell,
}

impl MapSpec {
    /// Empty map with the agent at `agent`.
    pub fn empty(height: usize, width: usize, agent: (usize, usize)) -> Result<Self> {
        if height == 0 || width == 0 || height * width >= NO_OBJECT as usize {
            return Err(Error::Config(format!("unsupported map size {height}x{width}")));
        }
        let mut m = MapSpec {
            height,
            width,
            terrain: vec![None; height * width],
            objects: Vec::new(),
            occupant: vec![NO_OBJECT; height * width],
            agent: 0,
        };
        m.agent = m.cell_checked(agent)?;
        Ok(m)
    }

    fn cell_checked(&self, (r, c): (usize, usize)) -> Result<Cell> {
        if r < self.height && c < self.width {
            Ok(r * self.width + c)
        } else {
            Err(Error::Config(format!("cell ({r}, {c}) outside {}x{} map", self.height, self.width)))
        }
    }

    /// Places impassable terrain.
    pub fn set_terrain(&mut self, at: (usize, usize), kind: ObjectKind) -> Result<()> {
        let cell = self.cell_checked(at)?;
        if !kind.is_impassable() {
            return Err(Error::Config(format!("{kind:?} is not terrain")));
        }
        if cell == self.agent || self.occupant[cell] != NO_OBJECT {
            return Err(Error::Config(format!("cell {at:?} is occupied")));
        }
        self.terrain[cell] = Some(kind);
        Ok(())
    }

    /// Places an object and returns its index.
    pub fn add_object(&mut self, at: (usize, usize), kind: ObjectKind) -> Result<usize> {
        let cell = self.cell_checked(at)?;
        if kind.is_impassable() {
            return Err(Error::Config(format!("{kind:?} is terrain")));
        }
        if self.terrain[cell].is_some() || self.occupant[cell] != NO_OBJECT {
            return Err(Error::Config(format!("cell {at:?} is occupied")));
        }
        let idx = self.objects.len();
        self.objects.push(Object { kind, cell, alive: true });
        self.occupant[cell] = idx as u16;
        Ok(idx)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_cells(&self) -> usize {
        self.height * self.width
    }

    pub fn agent(&self) -> Cell {
        self.agent
    }

    pub fn set_agent(&mut self, cell: Cell) {
        debug_assert!(self.is_passable(cell));
        self.agent = cell;
    }

    pub fn row_col(&self, cell: Cell) -> (usize, usize) {
        (cell / self.width, cell % self.width)
    }

    pub fn is_passable(&self, cell: Cell) -> bool {
        self.terrain[cell].is_none()
    }

    pub fn terrain(&self, cell: Cell) -> Option<ObjectKind> {
        self.terrain[cell]
    }

    pub fn objects(&self) -> &[Object] {
        &self.objects
    }

    /// Live object standing on `cell`, if any.
    pub fn object_at(&self, cell: Cell) -> Option<usize> {
        match self.occupant[cell] {
            NO_OBJECT => None,
            i => Some(i as usize),
        }
    }

    pub fn count_alive(&self) -> usize {
        self.objects.iter().filter(|o| o.alive).count()
    }

    pub fn count_kind(&self, kind: ObjectKind) -> usize {
        self.objects.iter().filter(|o| o.alive && o.kind == kind).count()
    }

    /// Removes object `i` from the map.
    pub fn remove(&mut self, i: usize) {
        let o = &mut self.objects[i];
        if o.alive {
            o.alive = false;
            self.occupant[o.cell] = NO_OBJECT;
        }
    }

    pub fn set_kind(&mut self, i: usize, kind: ObjectKind) {
        self.objects[i].kind = kind;
    }

    /// Applies the effect of an interaction primitive to object `i`.
    pub fn interact(&mut self, i: usize, interaction: Interaction) {
        match interaction {
            Interaction::Pickup => self.remove(i),
            Interaction::Transform => self.set_kind(i, ObjectKind::Ice),
            Interaction::Use(_) => {}
        }
    }

    fn move_object(&mut self, i: usize, to: Cell) {
        let from = self.objects[i].cell;
        self.occupant[from] = NO_OBJECT;
        self.occupant[to] = i as u16;
        self.objects[i].cell = to;
    }

    /// In-bounds cardinal neighbours in the order up, down, left, right.
    pub fn neighbours(&self, cell: Cell) -> impl Iterator<Item = Cell> {
        let (r, c) = self.row_col(cell);
        let (h, w) = (self.height, self.width);
        [
            (r > 0).then(|| cell - w),
            (r + 1 < h).then(|| cell + w),
            (c > 0).then(|| cell - 1),
            (c + 1 < w).then(|| cell + 1),
        ]
        .into_iter()
        .flatten()
    }

    /// Whether every passable cell is reachable from every other.
    pub fn is_connected(&self) -> bool {
        let Some(start) = (0..self.n_cells()).find(|&c| self.is_passable(c)) else {
            return true;
        };
        let dist = bfs(self, start);
        (0..self.n_cells()).all(|c| !self.is_passable(c) || dist[c] != UNREACHABLE)
    }

    /// One character per cell with a legend header; `@` marks the agent.
    pub fn to_ascii(&self) -> String {
        let mut kinds: Vec<ObjectKind> = self
            .terrain
            .iter()
            .flatten()
            .copied()
            .chain(self.objects.iter().filter(|o| o.alive).map(|o| o.kind))
            .collect();
        kinds.sort();
        kinds.dedup();
        let mut out = String::from("# @=agent .=empty");
        for k in kinds {
            let _ = write!(out, " {}={k:?}", k.ascii());
        }
        out.push('\n');
        for r in 0..self.height {
            for c in 0..self.width {
                let cell = r * self.width + c;
                let ch = if cell == self.agent {
                    '@'
                } else if let Some(t) = self.terrain[cell] {
                    t.ascii()
                } else if let Some(i) = self.object_at(cell) {
                    self.objects[i].kind.ascii()
                } else {
                    '.'
                };
                out.push(ch);
            }
            out.push('\n');
        }
        out
    }
}

fn bfs(map: &MapSpec, src: Cell) -> Vec<u16> {
    let mut dist = vec![UNREACHABLE; map.n_cells()];
    if !map.is_passable(src) {
        return dist;
    }
    dist[src] = 0;
    let mut queue = VecDeque::from([src]);
    while let Some(c) = queue.pop_front() {
        for n in map.neighbours(c) {
            if map.is_passable(n) && dist[n] == UNREACHABLE {
                dist[n] = dist[c] + 1;
                queue.push_back(n);
            }
        }
    }
    dist
}

/// All-pairs shortest path lengths over passable cells. Terrain never
/// changes during an episode, so one table serves the whole episode.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DistTable {
    n: usize,
    dist: Vec<u16>,
}

impl DistTable {
    pub fn new(map: &MapSpec) -> Self {
        let n = map.n_cells();
        let mut dist = Vec::with_capacity(n * n);
        for src in 0..n {
            dist.extend(bfs(map, src));
        }
        DistTable { n, dist }
    }

    /// Shortest path length, `None` when unreachable.
    #[inline]
    pub fn get(&self, a: Cell, b: Cell) -> Option<u32> {
        match self.dist[a * self.n + b] {
            UNREACHABLE => None,
            d => Some(d as u32),
        }
    }

    /// First cell of a shortest path from `from` to `to` (ties: up, down,
    /// left, right).
    pub fn next_step(&self, map: &MapSpec, from: Cell, to: Cell) -> Option<Cell> {
        let d = self.get(from, to)?;
        if d == 0 {
            return Some(from);
        }
        map.neighbours(from)
            .find(|&n| map.is_passable(n) && self.get(n, to) == Some(d - 1))
    }
}

/// Geometry knobs for map sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MapGeometry {
    pub height: usize,
    pub width: usize,
    pub obstacles: usize,
}

/// Samples a map for a domain: optional terrain, one instance per
/// consuming option (stations are shared), then the agent.
pub fn sample_map(
    domain: Domain,
    geometry: MapGeometry,
    options: &[OptionSpec],
    rng: &mut impl Rng,
) -> Result<MapSpec> {
    let MapGeometry { height, width, obstacles } = geometry;
    let mut kinds: Vec<ObjectKind> = Vec::new();
    if domain == Domain::Mining {
        kinds.extend(MINING_STATIONS);
    }
    for o in options {
        if o.interaction.consumes() || !kinds.contains(&o.target) {
            kinds.push(o.target);
        }
    }
    let cells = height * width;
    let need = obstacles + kinds.len() + 1;
    if need > cells {
        return Err(Error::Config(format!(
            "{height}x{width} map cannot hold {} objects, {obstacles} obstacles and the agent",
            kinds.len()
        )));
    }

    let mut map = MapSpec::empty(height, width, (0, 0))?;
    let terrain_kinds: &[ObjectKind] = match domain {
        Domain::Mining => &[ObjectKind::Mountain, ObjectKind::Water],
        Domain::Playground => &[ObjectKind::Block],
    };
    let mut placed = false;
    for _ in 0..MAX_TERRAIN_RETRIES {
        map.terrain.iter_mut().for_each(|t| *t = None);
        let mut all: Vec<Cell> = (0..cells).collect();
        all.shuffle(rng);
        for &c in &all[..obstacles] {
            map.terrain[c] = Some(*terrain_kinds.choose(rng).expect("non-empty"));
        }
        if map.is_connected() {
            placed = true;
            break;
        }
    }
    if !placed {
        return Err(Error::Config(format!("could not place {obstacles} obstacles without disconnecting the map")));
    }

    let mut free: Vec<Cell> = (0..cells).filter(|&c| map.is_passable(c)).collect();
    free.shuffle(rng);
    let mut free = free.into_iter();
    for kind in kinds {
        let c = free.next().expect("capacity checked");
        let at = map.row_col(c);
        map.add_object(at, kind)?;
    }
    map.agent = free.next().expect("capacity checked");
    Ok(map)
}

/// Random object motion for one time step. Moves into terrain, occupied
/// cells, the agent's cell or off the map are cancelled.
pub fn step_objects(map: &mut MapSpec, rng: &mut impl Rng) {
    for i in 0..map.objects.len() {
        let o = map.objects[i];
        let p = o.kind.move_prob();
        if !o.alive || p == 0.0 || !rng.gen_bool(p) {
            continue;
        }
        let (r, c) = map.row_col(o.cell);
        let (dr, dc) = [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)][rng.gen_range(0..4)];
        let (nr, nc) = (r as i64 + dr, c as i64 + dc);
        if nr < 0 || nc < 0 || nr >= map.height as i64 || nc >= map.width as i64 {
            continue;
        }
        let to = nr as usize * map.width + nc as usize;
        if map.is_passable(to) && map.occupant[to] == NO_OBJECT && to != map.agent {
            map.move_object(i, to);
        }
    }
}
