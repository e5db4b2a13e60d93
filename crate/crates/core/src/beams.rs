//! The coarse beams process and subcritical cluster measurements.
//!
//! A beam is a prism `H x [w]`: a two-dimensional cross-section `H` that is
//! connected in the grid graph of the subcritical family `N_m^{a,b}`
//! (`m = a+b+1`) and closed under it, stacked over an interval along `e_3`.
//! The coarse beams process starts from the seed sites as singleton beams
//! and repeatedly merges the smallest qualifying pair — strongly connected,
//! with a union that is not closed under the three-dimensional family —
//! into the coarse beam generated by the pair. Every merge result is logged
//! as a covered beam; those records are the witnesses scanned by
//! [`al_check`].
//!
//! The cluster side measures the exponential decay of `|K|`, the component
//! of the origin inside the closure, for subcritical two-dimensional
//! families.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::engine::{closure, Boundary, Configuration, EngineError, GridBox};
use crate::family::{ThresholdFamily, UpdateFamily};
use crate::sampler::{BernoulliSeeding, ProbabilityEstimate, SamplerError};

pub type Cell2 = (i64, i64);
pub type Cell3 = (i64, i64, i64);

#[derive(Debug, Error, PartialEq)]
pub enum BeamsError {
    #[error("the beams process needs a three-dimensional threshold family")]
    NotThreeDimensional,
    #[error("the beams process needs r >= c+1, got r = {r}, c = {c}")]
    ThresholdBelowColumn { r: u32, c: u32 },
    #[error("block edge {edge} does not divide the box side {side}")]
    IndivisibleBox { side: usize, edge: usize },
    #[error("projection of input set {0} is empty or disconnected")]
    DisconnectedProjection(usize),
    #[error("family must be subcritical (r >= a+b+1), got {0}")]
    NotSubcritical(String),
    #[error("window radius must be positive")]
    WindowTooSmall,
    #[error("censoring fraction {frac:.4} exceeds the cap {cap:.4}; enlarge the window")]
    TooCensored { frac: f64, cap: f64 },
    #[error("beam count {count} exceeds the L^4 (3e)^h bound {bound}")]
    BoundExceeded { count: u64, bound: f64 },
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
}

// 2D cell-set helpers --------------------------------------------------------

/// Offsets of the `N_{a,b}` grid graph in two dimensions.
fn family_graph_offsets(a: u32, b: u32) -> Vec<Cell2> {
    let mut out = Vec::new();
    for k in 1..=a as i64 {
        out.push((k, 0));
        out.push((-k, 0));
    }
    for k in 1..=b as i64 {
        out.push((0, k));
        out.push((0, -k));
    }
    out.sort();
    out
}

fn connected_in_family_graph(cells: &BTreeSet<Cell2>, a: u32, b: u32) -> bool {
    let mut iter = cells.iter();
    let start = match iter.next() {
        Some(&c) => c,
        None => return true,
    };
    let offsets = family_graph_offsets(a, b);
    let mut seen: HashSet<Cell2> = HashSet::new();
    let mut queue = VecDeque::new();
    seen.insert(start);
    queue.push_back(start);
    while let Some((x, y)) = queue.pop_front() {
        for &(dx, dy) in &offsets {
            let n = (x + dx, y + dy);
            if cells.contains(&n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen.len() == cells.len()
}

/// Closure of a 2D cell set under `N_m^{a,b}`. For `m >= a+b+1` the closure
/// never escapes the bounding box of the seed, so a bounded run is exact;
/// a one-cell margin is kept anyway.
fn closure_cells_2d(cells: &BTreeSet<Cell2>, a: u32, b: u32, m: u32) -> BTreeSet<Cell2> {
    if cells.is_empty() {
        return BTreeSet::new();
    }
    let margin = (a.max(b) + 1) as i64;
    let min_x = cells.iter().map(|c| c.0).min().unwrap() - margin;
    let max_x = cells.iter().map(|c| c.0).max().unwrap() + margin;
    let min_y = cells.iter().map(|c| c.1).min().unwrap() - margin;
    let max_y = cells.iter().map(|c| c.1).max().unwrap() + margin;
    let dims = vec![(max_x - min_x + 1) as usize, (max_y - min_y + 1) as usize];
    let grid = GridBox::new(dims, Boundary::Closed).expect("window is nonempty");
    let mut config = Configuration::empty(grid);
    for &(x, y) in cells {
        config.set(&[(x - min_x) as usize, (y - min_y) as usize], true);
    }
    let family: UpdateFamily = ThresholdFamily::from_radii(&[a, b], m)
        .expect("m within range")
        .into();
    let closed = closure(&family, &config).expect("dims match");
    closed
        .bits()
        .iter_ones()
        .map(|i| {
            let coords = closed.grid().coords_of(i);
            (coords[0] as i64 + min_x, coords[1] as i64 + min_y)
        })
        .collect()
}

// beams ----------------------------------------------------------------------

/// A cross-section times an interval, `H x [z_lo, z_hi]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Beam {
    /// Fine 2D cells of the cross-section, sorted.
    pub cross_section: Vec<Cell2>,
    pub z_lo: i64,
    pub z_hi: i64,
}

impl Beam {
    pub fn singleton(cell: Cell3) -> Self {
        Beam {
            cross_section: vec![(cell.0, cell.1)],
            z_lo: cell.2,
            z_hi: cell.2,
        }
    }

    pub fn height(&self) -> u64 {
        (self.z_hi - self.z_lo + 1) as u64
    }

    pub fn cross_section_size(&self) -> usize {
        self.cross_section.len()
    }

    pub fn solid_cells(&self) -> impl Iterator<Item = Cell3> + '_ {
        self.cross_section
            .iter()
            .flat_map(move |&(x, y)| (self.z_lo..=self.z_hi).map(move |z| (x, y, z)))
    }

    pub fn cell_count(&self) -> u64 {
        self.cross_section.len() as u64 * self.height()
    }

    /// Lexicographically smallest solid cell, the sort key of the process.
    fn key(&self) -> Cell3 {
        let &(x, y) = self.cross_section.first().expect("nonempty cross-section");
        (x, y, self.z_lo)
    }

    fn bbox(&self) -> (Cell3, Cell3) {
        let min_x = self.cross_section.iter().map(|c| c.0).min().unwrap();
        let max_x = self.cross_section.iter().map(|c| c.0).max().unwrap();
        let min_y = self.cross_section.iter().map(|c| c.1).min().unwrap();
        let max_y = self.cross_section.iter().map(|c| c.1).max().unwrap();
        ((min_x, min_y, self.z_lo), (max_x, max_y, self.z_hi))
    }

    pub fn contains(&self, cell: Cell3) -> bool {
        (self.z_lo..=self.z_hi).contains(&cell.2)
            && self.cross_section.binary_search(&(cell.0, cell.1)).is_ok()
    }

    /// Fixed-point and connectivity invariants of a beam with respect to
    /// `N_m^{a,b}`, `m = a+b+1`.
    pub fn satisfies_invariants(&self, a: u32, b: u32) -> bool {
        let cells: BTreeSet<Cell2> = self.cross_section.iter().copied().collect();
        connected_in_family_graph(&cells, a, b)
            && closure_cells_2d(&cells, a, b, a + b + 1) == cells
    }
}

/// The `(b+1)` block partition of the horizontal plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CoarseGrid {
    pub block_edge: usize,
    /// Coarse side lengths of the two horizontal axes.
    pub dims: (usize, usize),
}

impl CoarseGrid {
    pub fn new(fine_dims: (usize, usize), block_edge: usize) -> Result<Self, BeamsError> {
        for side in [fine_dims.0, fine_dims.1] {
            if side % block_edge != 0 {
                return Err(BeamsError::IndivisibleBox {
                    side,
                    edge: block_edge,
                });
            }
        }
        Ok(Self {
            block_edge,
            dims: (fine_dims.0 / block_edge, fine_dims.1 / block_edge),
        })
    }

    pub fn coarse_of(&self, cell: Cell2) -> Cell2 {
        (
            cell.0.div_euclid(self.block_edge as i64),
            cell.1.div_euclid(self.block_edge as i64),
        )
    }

    pub fn fine_cells(&self, block: Cell2) -> impl Iterator<Item = Cell2> + '_ {
        let e = self.block_edge as i64;
        (0..e).flat_map(move |dx| (0..e).map(move |dy| (block.0 * e + dx, block.1 * e + dy)))
    }
}

/// Closure of a coarse seed under the family, on the rescaled grid. The
/// coarse lattice is an ordinary grid, so this is the plain 2D engine run
/// at block granularity.
pub fn coarse_closure(
    family_2d: &ThresholdFamily,
    coarse_seed: &Configuration,
) -> Result<Configuration, EngineError> {
    closure(&family_2d.clone().into(), coarse_seed)
}

// strong connectivity --------------------------------------------------------

/// Whether `s1 U s2` is connected in the graph on `Z^3` whose edges join
/// sites at l-infinity distance at most `2c`. The empty union is connected.
pub fn strongly_connected(s1: &[Cell3], s2: &[Cell3], c: u32) -> bool {
    let union: Vec<Cell3> = s1.iter().chain(s2.iter()).copied().collect();
    if union.len() <= 1 {
        return true;
    }
    let reach = 2 * c as i64;
    if reach == 0 {
        // distance-0 adjacency: connected only when all cells coincide
        return union.iter().all(|&cell| cell == union[0]);
    }
    // bucket grid of edge `reach` so that neighbours live in adjacent buckets
    let bucket = |cell: Cell3| {
        (
            cell.0.div_euclid(reach),
            cell.1.div_euclid(reach),
            cell.2.div_euclid(reach),
        )
    };
    let mut buckets: HashMap<Cell3, Vec<usize>> = HashMap::new();
    for (i, &cell) in union.iter().enumerate() {
        buckets.entry(bucket(cell)).or_default().push(i);
    }
    let mut seen = vec![false; union.len()];
    let mut queue = VecDeque::new();
    seen[0] = true;
    queue.push_back(0usize);
    let mut visited = 1usize;
    while let Some(i) = queue.pop_front() {
        let (x, y, z) = union[i];
        let home = bucket(union[i]);
        for bx in -1..=1i64 {
            for by in -1..=1i64 {
                for bz in -1..=1i64 {
                    let key = (home.0 + bx, home.1 + by, home.2 + bz);
                    if let Some(members) = buckets.get(&key) {
                        for &j in members {
                            if seen[j] {
                                continue;
                            }
                            let (ox, oy, oz) = union[j];
                            let dist = (x - ox).abs().max((y - oy).abs()).max((z - oz).abs());
                            if dist <= reach {
                                seen[j] = true;
                                visited += 1;
                                queue.push_back(j);
                            }
                        }
                    }
                }
            }
        }
    }
    visited == union.len()
}

// beam generation ------------------------------------------------------------

fn project(cells: &[Cell3]) -> BTreeSet<Cell2> {
    cells.iter().map(|&(x, y, _)| (x, y)).collect()
}

fn z_range(cells: &[Cell3]) -> (i64, i64) {
    let lo = cells.iter().map(|c| c.2).min().expect("nonempty");
    let hi = cells.iter().map(|c| c.2).max().expect("nonempty");
    (lo, hi)
}

/// Lexicographically smallest shortest path between two cell sets in the
/// `N_{a,b}` grid graph, as the list of intermediate cells (empty when the
/// sets touch). `None` if no path exists inside the window.
fn minimal_path(
    from: &BTreeSet<Cell2>,
    to: &BTreeSet<Cell2>,
    a: u32,
    b: u32,
    window: (Cell2, Cell2),
) -> Option<Vec<Cell2>> {
    let offsets = family_graph_offsets(a, b);
    let ((min_x, min_y), (max_x, max_y)) = window;
    let in_window =
        |c: Cell2| c.0 >= min_x && c.0 <= max_x && c.1 >= min_y && c.1 <= max_y;
    // distances to `to`, BFS backwards
    let mut dist: HashMap<Cell2, u32> = HashMap::new();
    let mut queue = VecDeque::new();
    for &cell in to {
        dist.insert(cell, 0);
        queue.push_back(cell);
    }
    while let Some(cell) = queue.pop_front() {
        let d = dist[&cell];
        for &(dx, dy) in &offsets {
            let n = (cell.0 + dx, cell.1 + dy);
            if in_window(n) && !dist.contains_key(&n) {
                dist.insert(n, d + 1);
                queue.push_back(n);
            }
        }
    }
    // lexicographically smallest start among those at minimal distance
    let start = from
        .iter()
        .filter_map(|&c| dist.get(&c).map(|&d| (d, c)))
        .min()?;
    let (mut d, mut current) = start;
    let mut path = Vec::new();
    while d > 0 {
        let next = offsets
            .iter()
            .map(|&(dx, dy)| (current.0 + dx, current.1 + dy))
            .filter(|&n| dist.get(&n) == Some(&(d - 1)))
            .min()
            .expect("distance decreases along some neighbour");
        d -= 1;
        current = next;
        if d > 0 {
            path.push(current);
        }
    }
    Some(path)
}

/// The beam generated by `s1 U s2` on the fine lattice: projections must be
/// connected; the cross-section is the closure of the projections plus a
/// minimal connecting path, the interval is the minimal cover of the union.
pub fn generate_beam(s1: &[Cell3], s2: &[Cell3], a: u32, b: u32) -> Result<Beam, BeamsError> {
    let m = a + b + 1;
    let h1 = project(s1);
    let h2 = project(s2);
    for (i, h) in [(1usize, &h1), (2, &h2)] {
        if h.is_empty() || !connected_in_family_graph(h, a, b) {
            return Err(BeamsError::DisconnectedProjection(i));
        }
    }
    let union: BTreeSet<Cell2> = h1.union(&h2).copied().collect();
    let mut cross = closure_cells_2d(&union, a, b, m);
    if !connected_in_family_graph(&cross, a, b) {
        let margin = (a.max(b) + 1) as i64;
        let min_x = union.iter().map(|c| c.0).min().unwrap() - margin;
        let max_x = union.iter().map(|c| c.0).max().unwrap() + margin;
        let min_y = union.iter().map(|c| c.1).min().unwrap() - margin;
        let max_y = union.iter().map(|c| c.1).max().unwrap() + margin;
        let path = minimal_path(&h1, &h2, a, b, ((min_x, min_y), (max_x, max_y)))
            .expect("window contains a connecting path");
        let mut seeded = union.clone();
        seeded.extend(path);
        cross = closure_cells_2d(&seeded, a, b, m);
    }
    let all: Vec<Cell3> = s1.iter().chain(s2.iter()).copied().collect();
    let (z_lo, z_hi) = z_range(&all);
    Ok(Beam {
        cross_section: cross.into_iter().collect(),
        z_lo,
        z_hi,
    })
}

/// Coarse analogue of [`generate_beam`]: projections, closure, and the
/// connecting path all live on the block lattice, and the cross-section is
/// expanded back to fine cells. Returns the beam and the coarse path used.
pub fn generate_coarse_beam(
    s1: &[Cell3],
    s2: &[Cell3],
    a: u32,
    b: u32,
    coarse: &CoarseGrid,
) -> Result<(Beam, Vec<Cell2>), BeamsError> {
    let m = a + b + 1;
    let h1: BTreeSet<Cell2> = project(s1).iter().map(|&c| coarse.coarse_of(c)).collect();
    let h2: BTreeSet<Cell2> = project(s2).iter().map(|&c| coarse.coarse_of(c)).collect();
    for (i, h) in [(1usize, &h1), (2, &h2)] {
        if h.is_empty() || !connected_in_family_graph(h, a, b) {
            return Err(BeamsError::DisconnectedProjection(i));
        }
    }
    let window = ((0, 0), (coarse.dims.0 as i64 - 1, coarse.dims.1 as i64 - 1));
    let union: BTreeSet<Cell2> = h1.union(&h2).copied().collect();
    let mut used_path = Vec::new();
    let mut blocks = coarse_closure_cells(&union, a, b, m, coarse);
    if !connected_in_family_graph(&blocks, a, b) {
        let path =
            minimal_path(&h1, &h2, a, b, window).expect("box contains a connecting path");
        let mut seeded = union.clone();
        seeded.extend(path.iter().copied());
        used_path = path;
        blocks = coarse_closure_cells(&seeded, a, b, m, coarse);
    }
    let mut cross: Vec<Cell2> = blocks
        .iter()
        .flat_map(|&blk| coarse.fine_cells(blk))
        .collect();
    cross.sort_unstable();
    let all: Vec<Cell3> = s1.iter().chain(s2.iter()).copied().collect();
    let (z_lo, z_hi) = z_range(&all);
    Ok((
        Beam {
            cross_section: cross,
            z_lo,
            z_hi,
        },
        used_path,
    ))
}

/// Closure on the coarse box with closed boundary.
fn coarse_closure_cells(
    blocks: &BTreeSet<Cell2>,
    a: u32,
    b: u32,
    m: u32,
    coarse: &CoarseGrid,
) -> BTreeSet<Cell2> {
    let grid = GridBox::new(vec![coarse.dims.0, coarse.dims.1], Boundary::Closed)
        .expect("coarse dims positive");
    let mut config = Configuration::empty(grid);
    for &(x, y) in blocks {
        config.set(&[x as usize, y as usize], true);
    }
    let family = ThresholdFamily::from_radii(&[a, b], m).expect("m within range");
    let closed = coarse_closure(&family, &config).expect("dims match");
    closed
        .bits()
        .iter_ones()
        .map(|i| {
            let coords = closed.grid().coords_of(i);
            (coords[0] as i64, coords[1] as i64)
        })
        .collect()
}

// the coarse beams process ---------------------------------------------------

pub type BeamId = usize;

#[derive(Debug, Clone, Serialize)]
pub struct MergeRecord {
    pub step: usize,
    pub left: BeamId,
    pub right: BeamId,
    pub result: BeamId,
    /// Coarse path cells inserted to connect the projections (usually empty).
    pub path: Vec<Cell2>,
}

/// Final state of the beams process plus its full merge log. Beams ever
/// created are kept in `registry`; entries `0..initial_count` are the seed
/// singletons, later ones are covered beams.
#[derive(Debug, Clone, Serialize)]
pub struct BeamCollection {
    pub registry: Vec<Beam>,
    pub initial_count: usize,
    /// Indices of the beams alive at STOP.
    pub live: Vec<BeamId>,
    pub log: Vec<MergeRecord>,
}

impl BeamCollection {
    pub fn covered_beams(&self) -> &[Beam] {
        &self.registry[self.initial_count..]
    }

    pub fn live_beams(&self) -> impl Iterator<Item = &Beam> {
        self.live.iter().map(|&id| &self.registry[id])
    }
}

struct ProcessState {
    update: UpdateFamily,
    r: u32,
    c: u32,
    registry: Vec<Beam>,
    alive: Vec<bool>,
}

impl ProcessState {
    /// Minimal l-infinity distance between two beams; separable because a
    /// beam is a product of its cross-section and its interval.
    fn beam_distance(&self, i: BeamId, j: BeamId) -> i64 {
        let (a, b) = (&self.registry[i], &self.registry[j]);
        let dz = interval_distance(a.z_lo, a.z_hi, b.z_lo, b.z_hi);
        let reach = 2 * self.c as i64;
        if dz > reach {
            return dz;
        }
        let (amin, amax) = a.bbox();
        let (bmin, bmax) = b.bbox();
        let bbox_dist = (bmin.0 - amax.0)
            .max(amin.0 - bmax.0)
            .max(bmin.1 - amax.1)
            .max(amin.1 - bmax.1)
            .max(0);
        if bbox_dist > reach {
            return bbox_dist.max(dz);
        }
        let mut best = i64::MAX;
        for &(x1, y1) in &a.cross_section {
            for &(x2, y2) in &b.cross_section {
                let d = (x1 - x2).abs().max((y1 - y2).abs());
                best = best.min(d);
                if best == 0 {
                    break;
                }
            }
        }
        best.max(dz)
    }

    /// Pair qualification: strongly connected and not jointly closed under
    /// the three-dimensional family.
    fn qualifies(&self, i: BeamId, j: BeamId) -> bool {
        if self.beam_distance(i, j) > 2 * self.c as i64 {
            return false;
        }
        !self.union_closed(i, j)
    }

    fn union_closed(&self, i: BeamId, j: BeamId) -> bool {
        let (bi, bj) = (&self.registry[i], &self.registry[j]);
        let cells: HashSet<Cell3> = bi.solid_cells().chain(bj.solid_cells()).collect();
        // too few infected cells to infect anything
        if (cells.len() as u64) < self.r as u64 {
            return true;
        }
        let min_x = cells.iter().map(|c| c.0).min().unwrap();
        let max_x = cells.iter().map(|c| c.0).max().unwrap();
        let min_y = cells.iter().map(|c| c.1).min().unwrap();
        let max_y = cells.iter().map(|c| c.1).max().unwrap();
        let min_z = cells.iter().map(|c| c.2).min().unwrap();
        let max_z = cells.iter().map(|c| c.2).max().unwrap();
        let dims = vec![
            (max_x - min_x + 1) as usize,
            (max_y - min_y + 1) as usize,
            (max_z - min_z + 1) as usize,
        ];
        let grid = GridBox::new(dims, Boundary::Closed).expect("bbox nonempty");
        let mut config = Configuration::empty(grid);
        for &(x, y, z) in &cells {
            config.set(
                &[
                    (x - min_x) as usize,
                    (y - min_y) as usize,
                    (z - min_z) as usize,
                ],
                true,
            );
        }
        let closed = closure(&self.update, &config).expect("dims match");
        closed.infected_count() == cells.len()
    }

    fn pair_key(&self, i: BeamId, j: BeamId) -> (Cell3, Cell3, BeamId, BeamId) {
        let (ki, kj) = (self.registry[i].key(), self.registry[j].key());
        if (ki, i) <= (kj, j) {
            (ki, kj, i, j)
        } else {
            (kj, ki, j, i)
        }
    }
}

fn interval_distance(a_lo: i64, a_hi: i64, b_lo: i64, b_hi: i64) -> i64 {
    (b_lo - a_hi).max(a_lo - b_hi).max(0)
}

/// Runs the coarse beams process on the seed set of a three-dimensional
/// configuration. Merges fire in lexicographic pair order; the merge log is
/// sufficient to replay the run.
pub fn beams_process(
    family: &ThresholdFamily,
    config: &Configuration,
) -> Result<BeamCollection, BeamsError> {
    if family.dims() != 3 {
        return Err(BeamsError::NotThreeDimensional);
    }
    let radii = family.spec().radii();
    let (a, b, c) = (radii[0], radii[1], radii[2]);
    if family.r() < c + 1 {
        return Err(BeamsError::ThresholdBelowColumn {
            r: family.r(),
            c,
        });
    }
    let dims = config.grid().dims();
    let coarse = CoarseGrid::new((dims[0], dims[1]), (b + 1) as usize)?;

    let seeds: Vec<Cell3> = config
        .bits()
        .iter_ones()
        .map(|i| {
            let coords = config.grid().coords_of(i);
            (coords[0] as i64, coords[1] as i64, coords[2] as i64)
        })
        .collect();

    let mut state = ProcessState {
        update: family.clone().into(),
        r: family.r(),
        c,
        registry: seeds.iter().map(|&cell| Beam::singleton(cell)).collect(),
        alive: vec![true; seeds.len()],
    };
    let initial_count = seeds.len();

    // candidate pairs that qualify now; disqualified pairs can never
    // re-qualify because beams are immutable once created
    let mut candidates: BTreeSet<(Cell3, Cell3, BeamId, BeamId)> = BTreeSet::new();

    // initial proximity scan over singleton seeds via a bucket grid
    // (radii are positive, so reach >= 2)
    let reach = 2 * c as i64;
    let bucket = |cell: Cell3| {
        (
            cell.0.div_euclid(reach),
            cell.1.div_euclid(reach),
            cell.2.div_euclid(reach),
        )
    };
    let mut buckets: HashMap<Cell3, Vec<BeamId>> = HashMap::new();
    for (i, &cell) in seeds.iter().enumerate() {
        buckets.entry(bucket(cell)).or_default().push(i);
    }
    for (i, &cell) in seeds.iter().enumerate() {
        let home = bucket(cell);
        for bx in -1..=1i64 {
            for by in -1..=1i64 {
                for bz in -1..=1i64 {
                    if let Some(members) = buckets.get(&(home.0 + bx, home.1 + by, home.2 + bz)) {
                        for &j in members {
                            if j <= i {
                                continue;
                            }
                            let (x, y, z) = seeds[i];
                            let (ox, oy, oz) = seeds[j];
                            let dist = (x - ox).abs().max((y - oy).abs()).max((z - oz).abs());
                            if dist <= reach && state.qualifies(i, j) {
                                candidates.insert(state.pair_key(i, j));
                            }
                        }
                    }
                }
            }
        }
    }

    let mut log = Vec::new();
    while let Some(&entry) = candidates.iter().next() {
        candidates.remove(&entry);
        let (_, _, i, j) = entry;
        if !state.alive[i] || !state.alive[j] {
            continue;
        }
        let si: Vec<Cell3> = state.registry[i].solid_cells().collect();
        let sj: Vec<Cell3> = state.registry[j].solid_cells().collect();
        let (beam, path) = generate_coarse_beam(&si, &sj, a, b, &coarse)?;
        let new_id = state.registry.len();
        state.registry.push(beam);
        state.alive[i] = false;
        state.alive[j] = false;
        state.alive.push(true);
        log.push(MergeRecord {
            step: log.len(),
            left: i,
            right: j,
            result: new_id,
            path,
        });
        debug_assert!(log.len() < initial_count, "more merges than seeds");
        // new qualifying pairs involving the merged beam
        for other in 0..new_id {
            if state.alive[other] && state.qualifies(other, new_id) {
                candidates.insert(state.pair_key(other, new_id));
            }
        }
    }

    let live: Vec<BeamId> = (0..state.registry.len())
        .filter(|&id| state.alive[id])
        .collect();
    Ok(BeamCollection {
        registry: state.registry,
        initial_count,
        live,
        log,
    })
}

/// Exhaustive STOP check: no live pair may be both strongly connected and
/// jointly non-closed. Returns the first offending pair, if any.
pub fn verify_stop(
    family: &ThresholdFamily,
    collection: &BeamCollection,
) -> Option<(BeamId, BeamId)> {
    let radii = family.spec().radii();
    let c = radii[2];
    let state = ProcessState {
        update: family.clone().into(),
        r: family.r(),
        c,
        registry: collection.registry.clone(),
        alive: vec![true; collection.registry.len()],
    };
    let reach = 2 * c as i64;
    // bucket live beams by their bounding boxes
    let mut buckets: HashMap<Cell3, Vec<BeamId>> = HashMap::new();
    for &id in &collection.live {
        let (lo, hi) = collection.registry[id].bbox();
        let (blo, bhi) = (
            (
                lo.0.div_euclid(reach),
                lo.1.div_euclid(reach),
                lo.2.div_euclid(reach),
            ),
            (
                hi.0.div_euclid(reach),
                hi.1.div_euclid(reach),
                hi.2.div_euclid(reach),
            ),
        );
        for bx in blo.0..=bhi.0 {
            for by in blo.1..=bhi.1 {
                for bz in blo.2..=bhi.2 {
                    buckets.entry((bx, by, bz)).or_default().push(id);
                }
            }
        }
    }
    // duplicate pair checks across shared buckets are tolerated: the
    // distance prefilter makes them cheap, and deduplication would cost
    // more memory than it saves on large seed sets
    for &i in &collection.live {
        let (lo, hi) = collection.registry[i].bbox();
        let (blo, bhi) = (
            (
                lo.0.div_euclid(reach) - 1,
                lo.1.div_euclid(reach) - 1,
                lo.2.div_euclid(reach) - 1,
            ),
            (
                hi.0.div_euclid(reach) + 1,
                hi.1.div_euclid(reach) + 1,
                hi.2.div_euclid(reach) + 1,
            ),
        );
        for bx in blo.0..=bhi.0 {
            for by in blo.1..=bhi.1 {
                for bz in blo.2..=bhi.2 {
                    let Some(members) = buckets.get(&(bx, by, bz)) else {
                        continue;
                    };
                    for &j in members {
                        if j <= i {
                            continue;
                        }
                        if state.qualifies(i, j) {
                            return Some((i, j));
                        }
                    }
                }
            }
        }
    }
    None
}

// Aizenman-Lebowitz style scan ------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct AlScaleReport {
    pub h: u64,
    pub k: u64,
    pub lambda: f64,
    pub found: bool,
    /// Registry id of a witness covered beam.
    pub witness: Option<BeamId>,
}

/// Scans the covered-beam log for each scale `(h, k)`: a hit is a covered
/// beam with `height <= lambda k`, `|H| <= lambda h`, and `height >= k` or
/// `|H| >= h`. The constants are unquantified, so absence is diagnostic
/// information rather than a failure.
pub fn al_check(collection: &BeamCollection, scales: &[(u64, u64)], lambda: f64) -> Vec<AlScaleReport> {
    scales
        .iter()
        .map(|&(h, k)| {
            let witness = (collection.initial_count..collection.registry.len()).find(|&id| {
                let beam = &collection.registry[id];
                let width = beam.cross_section_size() as u64;
                let height = beam.height();
                height as f64 <= lambda * k as f64
                    && width as f64 <= lambda * h as f64
                    && (height >= k || width >= h)
            });
            AlScaleReport {
                h,
                k,
                lambda,
                found: witness.is_some(),
                witness,
            }
        })
        .collect()
}

// beam enumeration ------------------------------------------------------------

/// Exhaustive count of the prisms `H x [w]` with `H` a connected polyomino
/// of at most `h_max` cells and `1 <= w <= k_max`, inside a window, checked
/// against the `L^4 (3e)^h` bound with `L` the largest window side.
pub fn enumerate_beams_small(
    h_max: usize,
    k_max: usize,
    window: (usize, usize, usize),
) -> Result<(u64, f64), BeamsError> {
    let placements = count_connected_placements(window.0, window.1, h_max);
    let mut intervals = 0u64;
    for w in 1..=k_max.min(window.2) {
        intervals += (window.2 - w + 1) as u64;
    }
    let count = placements * intervals;
    let l = window.0.max(window.1).max(window.2) as f64;
    let bound = l.powi(4) * (3.0 * std::f64::consts::E).powi(h_max as i32);
    if count as f64 > bound {
        return Err(BeamsError::BoundExceeded { count, bound });
    }
    Ok((count, bound))
}

/// Number of nonempty 4-connected cell sets of size at most `max_size`
/// placed anywhere in a `w1 x w2` window. Each set is generated exactly
/// once, rooted at its lexicographically smallest cell.
fn count_connected_placements(w1: usize, w2: usize, max_size: usize) -> u64 {
    let index = |x: usize, y: usize| x * w2 + y;
    let mut count = 0u64;
    let n = w1 * w2;
    for root in 0..n {
        let mut in_set = vec![false; n];
        let mut banned = vec![false; n];
        in_set[root] = true;
        let frontier = neighbors_above(root, w1, w2, &in_set);
        count += grow(
            root,
            &mut in_set,
            &mut banned,
            frontier,
            1,
            max_size,
            w1,
            w2,
        );
        let _ = index;
    }
    count
}

fn neighbors_above(cell: usize, w1: usize, w2: usize, in_set: &[bool]) -> Vec<usize> {
    let (x, y) = (cell / w2, cell % w2);
    let mut out = Vec::new();
    let mut push = |nx: i64, ny: i64| {
        if nx >= 0 && (nx as usize) < w1 && ny >= 0 && (ny as usize) < w2 {
            let idx = nx as usize * w2 + ny as usize;
            if !in_set[idx] {
                out.push(idx);
            }
        }
    };
    push(x as i64 + 1, y as i64);
    push(x as i64 - 1, y as i64);
    push(x as i64, y as i64 + 1);
    push(x as i64, y as i64 - 1);
    out
}

#[allow(clippy::too_many_arguments)]
fn grow(
    root: usize,
    in_set: &mut Vec<bool>,
    banned: &mut Vec<bool>,
    frontier: Vec<usize>,
    size: usize,
    max_size: usize,
    w1: usize,
    w2: usize,
) -> u64 {
    // the current set itself
    let mut count = 1u64;
    if size == max_size {
        return count;
    }
    let mut newly_banned = Vec::new();
    for (pos, &cell) in frontier.iter().enumerate() {
        if banned[cell] || in_set[cell] || cell < root {
            continue;
        }
        in_set[cell] = true;
        let mut next_frontier: Vec<usize> = frontier[pos + 1..].to_vec();
        for n in neighbors_above(cell, w1, w2, in_set) {
            if n > root && !banned[n] && !frontier[..=pos].contains(&n) {
                next_frontier.push(n);
            }
        }
        count += grow(root, in_set, banned, next_frontier, size + 1, max_size, w1, w2);
        in_set[cell] = false;
        banned[cell] = true;
        newly_banned.push(cell);
    }
    for cell in newly_banned {
        banned[cell] = false;
    }
    count
}

// cluster of the origin --------------------------------------------------------

/// Connected component of the origin inside the closure (empty when the
/// origin stays healthy), with a censoring flag raised when the cluster
/// touches the window boundary.
#[derive(Debug, Clone, Serialize)]
pub struct ClusterRecord {
    /// Cells in window coordinates (origin at the centre).
    pub cells: Vec<Cell2>,
    pub censored: bool,
}

impl ClusterRecord {
    pub fn size(&self) -> usize {
        self.cells.len()
    }
}

fn ensure_subcritical_2d(family: &ThresholdFamily) -> Result<(u32, u32), BeamsError> {
    let radii = family.spec().radii();
    if radii.len() != 2 || family.r() < radii[0] + radii[1] + 1 {
        return Err(BeamsError::NotSubcritical(family.literal()));
    }
    Ok((radii[0], radii[1]))
}

/// Seeds a `(2 radius + 1)^2` window centred at the origin, closes it, and
/// extracts the component of the origin in the family grid graph.
pub fn cluster_of_origin(
    family_2d: &ThresholdFamily,
    radius: usize,
    seeding: &BernoulliSeeding,
) -> Result<ClusterRecord, BeamsError> {
    let (a, b) = ensure_subcritical_2d(family_2d)?;
    if radius == 0 {
        return Err(BeamsError::WindowTooSmall);
    }
    let side = 2 * radius + 1;
    let grid = GridBox::new(vec![side, side], Boundary::Closed)?;
    let config = crate::sampler::sample_configuration(&grid, seeding);
    let closed = closure(&family_2d.clone().into(), &config)?;

    let center = [radius, radius];
    if !closed.get(&center) {
        return Ok(ClusterRecord {
            cells: Vec::new(),
            censored: false,
        });
    }
    let offsets = family_graph_offsets(a, b);
    let mut seen: HashSet<Cell2> = HashSet::new();
    let mut queue = VecDeque::new();
    let start = (radius as i64, radius as i64);
    seen.insert(start);
    queue.push_back(start);
    let side_i = side as i64;
    let mut censored = false;
    while let Some((x, y)) = queue.pop_front() {
        if x == 0 || y == 0 || x == side_i - 1 || y == side_i - 1 {
            censored = true;
        }
        for &(dx, dy) in &offsets {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || nx >= side_i || ny < 0 || ny >= side_i {
                continue;
            }
            if closed.get(&[nx as usize, ny as usize]) && seen.insert((nx, ny)) {
                queue.push_back((nx, ny));
            }
        }
    }
    let r = radius as i64;
    let mut cells: Vec<Cell2> = seen.into_iter().map(|(x, y)| (x - r, y - r)).collect();
    cells.sort_unstable();
    Ok(ClusterRecord { cells, censored })
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayRow {
    pub n: u64,
    /// Empirical `P(|K| >= n)`, censored samples counted as exceeding.
    pub tail: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub censored_frac: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    pub trials: u64,
    pub censored_frac: f64,
    /// Least-squares slope of `ln tail` against `n` over the rows with a
    /// positive tail; `None` with fewer than two such rows.
    pub slope: Option<f64>,
}

/// Estimates the tail of the cluster-size distribution at density `epsilon`
/// over the given grid of `n` values.
#[allow(clippy::too_many_arguments)]
pub fn decay_experiment(
    family_2d: &ThresholdFamily,
    epsilon: f64,
    n_grid: &[u64],
    trials: u64,
    seed: u64,
    radius: usize,
    censor_cap: f64,
    z: f64,
) -> Result<DecayTable, BeamsError> {
    ensure_subcritical_2d(family_2d)?;
    if trials == 0 {
        return Err(BeamsError::Sampler(SamplerError::NoTrials));
    }
    let sizes: Vec<(u64, bool)> = (0..trials)
        .into_par_iter()
        .map(|trial| {
            let seeding = BernoulliSeeding {
                p: epsilon,
                seed,
                trial_index: trial,
                mode: crate::sampler::SamplingMode::Coupled,
            };
            let record = cluster_of_origin(family_2d, radius, &seeding)
                .expect("family validated");
            (record.size() as u64, record.censored)
        })
        .collect::<Vec<_>>();

    let censored = sizes.iter().filter(|&&(_, c)| c).count() as u64;
    let censored_frac = censored as f64 / trials as f64;
    if censored_frac > censor_cap {
        return Err(BeamsError::TooCensored {
            frac: censored_frac,
            cap: censor_cap,
        });
    }
    let mut rows = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let hits = sizes
            .iter()
            .filter(|&&(size, censored)| censored || size >= n)
            .count() as u64;
        let est = ProbabilityEstimate::from_counts(hits, trials, z);
        rows.push(DecayRow {
            n,
            tail: est.point,
            ci_low: est.ci_low,
            ci_high: est.ci_high,
            censored_frac,
        });
    }
    let points: Vec<(f64, f64)> = rows
        .iter()
        .filter(|row| row.tail > 0.0)
        .map(|row| (row.n as f64, row.tail.ln()))
        .collect();
    let slope = least_squares_slope(&points);
    Ok(DecayTable {
        rows,
        trials,
        censored_frac,
        slope,
    })
}

fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    if denom == 0.0 {
        return None;
    }
    Some((n * sxy - sx * sy) / denom)
}
