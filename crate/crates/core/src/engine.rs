//! Bootstrap closure on finite boxes.
//!
//! A [`Configuration`] is a bit-grid of infected sites over a [`GridBox`]
//! with either closed (sites outside the box count as healthy) or toroidal
//! boundary. [`closure`] computes the set of eventually infected sites by
//! frontier propagation with per-cell infected-neighbour counters, never by
//! repeated full-grid sweeps, so the work is `O(volume * |N|)`.
//!
//! The bit-grid layout is row-major in axis order `(e_1, .., e_d)` with the
//! last axis varying fastest. This layout is a fixed contract: snapshot
//! files and the per-cell seeding of the sampler both depend on it.

use std::collections::VecDeque;
use std::io::{BufRead, Write};

use serde::Serialize;
use thiserror::Error;

use crate::family::{ExplicitFamily, ThresholdFamily, UpdateFamily};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("box sides must be positive, got {0:?}")]
    EmptyBox(Vec<usize>),
    #[error("box volume overflows the address space")]
    VolumeOverflow,
    #[error("family is {family}-dimensional but box is {grid}-dimensional")]
    DimensionMismatch { family: usize, grid: usize },
    #[error("sub-block out of bounds: origin {origin:?} extents {extents:?} in box {dims:?}")]
    BlockOutOfBounds {
        origin: Vec<usize>,
        extents: Vec<usize>,
        dims: Vec<usize>,
    },
    #[error("snapshot parse error: {0}")]
    BadSnapshot(String),
    #[error("snapshot io error: {0}")]
    SnapshotIo(String),
}

/// Boundary convention of a finite box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Boundary {
    /// Sites outside the box are permanently healthy.
    Closed,
    /// Coordinates wrap around.
    Torus,
}

/// A finite axis-aligned box `[L_1] x .. x [L_d]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GridBox {
    dims: Vec<usize>,
    boundary: Boundary,
}

impl GridBox {
    pub fn new(dims: Vec<usize>, boundary: Boundary) -> Result<Self, EngineError> {
        if dims.is_empty() || dims.contains(&0) {
            return Err(EngineError::EmptyBox(dims));
        }
        let mut vol: usize = 1;
        for &l in &dims {
            vol = vol.checked_mul(l).ok_or(EngineError::VolumeOverflow)?;
        }
        Ok(Self { dims, boundary })
    }

    /// Cube `[l]^d` with closed boundary.
    pub fn cube(d: usize, l: usize) -> Result<Self, EngineError> {
        Self::new(vec![l; d], Boundary::Closed)
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn volume(&self) -> usize {
        self.dims.iter().product()
    }

    fn strides(&self) -> Vec<usize> {
        let d = self.dims.len();
        let mut strides = vec![1usize; d];
        for i in (0..d - 1).rev() {
            strides[i] = strides[i + 1] * self.dims[i + 1];
        }
        strides
    }

    pub fn index_of(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dims.len());
        let strides = self.strides();
        coords.iter().zip(&strides).map(|(&c, &s)| c * s).sum()
    }

    pub fn coords_of(&self, mut index: usize) -> Vec<usize> {
        let strides = self.strides();
        let mut coords = Vec::with_capacity(self.dims.len());
        for &s in &strides {
            coords.push(index / s);
            index %= s;
        }
        coords
    }
}

/// Packed bit vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BitGrid {
    words: Vec<u64>,
    len: usize,
}

impl BitGrid {
    pub fn zeros(len: usize) -> Self {
        Self {
            words: vec![0; len.div_ceil(64)],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    #[inline]
    pub fn get(&self, i: usize) -> bool {
        debug_assert!(i < self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    #[inline]
    pub fn set(&mut self, i: usize, v: bool) {
        debug_assert!(i < self.len);
        let mask = 1u64 << (i % 64);
        if v {
            self.words[i / 64] |= mask;
        } else {
            self.words[i / 64] &= !mask;
        }
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    None
                } else {
                    let b = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some(wi * 64 + b)
                }
            })
        })
    }

    /// True when every bit of `self` is set in `other`.
    pub fn is_subset_of(&self, other: &BitGrid) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(&a, &b)| a & !b == 0)
    }
}

/// State of the automaton: the set of infected sites over a box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Configuration {
    grid: GridBox,
    infected: BitGrid,
}

impl Configuration {
    pub fn empty(grid: GridBox) -> Self {
        let infected = BitGrid::zeros(grid.volume());
        Self { grid, infected }
    }

    pub fn full(grid: GridBox) -> Self {
        let mut c = Self::empty(grid);
        for i in 0..c.infected.len() {
            c.infected.set(i, true);
        }
        c
    }

    pub fn from_cells(grid: GridBox, cells: &[Vec<usize>]) -> Self {
        let mut c = Self::empty(grid);
        for cell in cells {
            let i = c.grid.index_of(cell);
            c.infected.set(i, true);
        }
        c
    }

    pub fn grid(&self) -> &GridBox {
        &self.grid
    }

    pub fn bits(&self) -> &BitGrid {
        &self.infected
    }

    pub fn bits_mut(&mut self) -> &mut BitGrid {
        &mut self.infected
    }

    pub fn infected_count(&self) -> usize {
        self.infected.count_ones()
    }

    pub fn is_full(&self) -> bool {
        self.infected_count() == self.grid.volume()
    }

    pub fn get(&self, coords: &[usize]) -> bool {
        self.infected.get(self.grid.index_of(coords))
    }

    pub fn set(&mut self, coords: &[usize], v: bool) {
        let i = self.grid.index_of(coords);
        self.infected.set(i, v);
    }

    pub fn infected_cells(&self) -> Vec<Vec<usize>> {
        self.infected
            .iter_ones()
            .map(|i| self.grid.coords_of(i))
            .collect()
    }
}

/// A rectangular block inside a parent box.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SubBlock {
    pub origin: Vec<usize>,
    pub extents: Vec<usize>,
}

impl SubBlock {
    pub fn new(origin: Vec<usize>, extents: Vec<usize>) -> Self {
        Self { origin, extents }
    }

    pub fn anchored(extents: Vec<usize>) -> Self {
        let origin = vec![0; extents.len()];
        Self { origin, extents }
    }

    fn check_inside(&self, grid: &GridBox) -> Result<(), EngineError> {
        let ok = self.origin.len() == grid.dims().len()
            && self.extents.len() == grid.dims().len()
            && self.extents.iter().all(|&e| e > 0)
            && self
                .origin
                .iter()
                .zip(&self.extents)
                .zip(grid.dims())
                .all(|((&o, &e), &l)| o + e <= l);
        if ok {
            Ok(())
        } else {
            Err(EngineError::BlockOutOfBounds {
                origin: self.origin.clone(),
                extents: self.extents.clone(),
                dims: grid.dims().to_vec(),
            })
        }
    }
}

/// Neighbourhood geometry bound to a box: per-offset linear deltas plus an
/// interior test so that boundary checks are skipped away from the walls.
struct Geometry {
    dims: Vec<usize>,
    strides: Vec<usize>,
    boundary: Boundary,
    offsets: Vec<Vec<i64>>,
    deltas: Vec<isize>,
    /// per-axis margin within which a cell counts as interior
    margin: Vec<usize>,
}

impl Geometry {
    fn new(grid: &GridBox, offsets: Vec<Vec<i64>>) -> Self {
        let strides = grid.strides();
        let deltas = offsets
            .iter()
            .map(|off| {
                off.iter()
                    .zip(&strides)
                    .map(|(&o, &s)| o as isize * s as isize)
                    .sum()
            })
            .collect();
        let d = grid.dims().len();
        let mut margin = vec![0usize; d];
        for off in &offsets {
            for i in 0..d {
                margin[i] = margin[i].max(off[i].unsigned_abs() as usize);
            }
        }
        Self {
            dims: grid.dims().to_vec(),
            strides,
            boundary: grid.boundary(),
            offsets,
            deltas,
            margin,
        }
    }

    #[inline]
    fn is_interior(&self, coords: &[usize]) -> bool {
        coords
            .iter()
            .zip(&self.dims)
            .zip(&self.margin)
            .all(|((&c, &l), &m)| c >= m && c + m < l)
    }

    /// Neighbour of `coords` along offset `k`, or `None` outside a closed
    /// box. On a torus every offset wraps to some cell.
    #[inline]
    fn neighbor(&self, coords: &[usize], k: usize) -> Option<usize> {
        let off = &self.offsets[k];
        let mut idx = 0usize;
        for i in 0..self.dims.len() {
            let l = self.dims[i] as i64;
            let mut c = coords[i] as i64 + off[i];
            match self.boundary {
                Boundary::Closed => {
                    if c < 0 || c >= l {
                        return None;
                    }
                }
                Boundary::Torus => {
                    c = c.rem_euclid(l);
                }
            }
            idx += c as usize * self.strides[i];
        }
        Some(idx)
    }
}

fn check_dims(family: &UpdateFamily, grid: &GridBox) -> Result<(), EngineError> {
    if family.dims() != grid.dims().len() {
        return Err(EngineError::DimensionMismatch {
            family: family.dims(),
            grid: grid.dims().len(),
        });
    }
    Ok(())
}

/// One synchronous update: every healthy cell whose rule is satisfied in
/// the current configuration becomes infected at once.
pub fn step(family: &UpdateFamily, config: &Configuration) -> Result<Configuration, EngineError> {
    check_dims(family, config.grid())?;
    let mut next = config.clone();
    match family {
        UpdateFamily::Threshold(f) => {
            let geom = Geometry::new(config.grid(), f.spec().vectors());
            let r = f.r();
            for idx in 0..config.grid().volume() {
                if config.infected.get(idx) {
                    continue;
                }
                let coords = config.grid().coords_of(idx);
                let mut n = 0u32;
                for k in 0..geom.offsets.len() {
                    if let Some(j) = geom.neighbor(&coords, k) {
                        if config.infected.get(j) {
                            n += 1;
                            if n >= r {
                                break;
                            }
                        }
                    }
                }
                if n >= r {
                    next.infected.set(idx, true);
                }
            }
        }
        UpdateFamily::Explicit(f) => {
            for idx in 0..config.grid().volume() {
                if config.infected.get(idx) {
                    continue;
                }
                let coords = config.grid().coords_of(idx);
                if explicit_rule_fires(f, config, &coords) {
                    next.infected.set(idx, true);
                }
            }
        }
    }
    Ok(next)
}

fn explicit_rule_fires(f: &ExplicitFamily, config: &Configuration, coords: &[usize]) -> bool {
    'rules: for rule in f.rules() {
        let geom_dims = config.grid().dims();
        for v in rule {
            let mut ok = true;
            let mut idx = 0usize;
            let strides = config.grid().strides();
            for i in 0..geom_dims.len() {
                let l = geom_dims[i] as i64;
                let mut c = coords[i] as i64 + v[i];
                match config.grid().boundary() {
                    Boundary::Closed => {
                        if c < 0 || c >= l {
                            ok = false;
                            break;
                        }
                    }
                    Boundary::Torus => c = c.rem_euclid(l),
                }
                idx += c as usize * strides[i];
            }
            if !ok || !config.infected.get(idx) {
                continue 'rules;
            }
        }
        return true;
    }
    false
}

/// Counters reported by [`closure_with_stats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClosureStats {
    /// Number of per-cell counter increments performed.
    pub counter_updates: u64,
    /// Number of cells infected during propagation (excluding seeds).
    pub newly_infected: u64,
}

/// Least fixed point of [`step`] containing the given configuration.
pub fn closure(family: &UpdateFamily, config: &Configuration) -> Result<Configuration, EngineError> {
    Ok(closure_with_stats(family, config)?.0)
}

/// Closure plus propagation statistics. The frontier pushes each newly
/// infected cell once and bumps each neighbour counter at most `|N|` times.
pub fn closure_with_stats(
    family: &UpdateFamily,
    config: &Configuration,
) -> Result<(Configuration, ClosureStats), EngineError> {
    check_dims(family, config.grid())?;
    match family {
        UpdateFamily::Threshold(f) => Ok(threshold_closure(f, config)),
        UpdateFamily::Explicit(f) => Ok(explicit_closure(f, config)),
    }
}

fn threshold_closure(f: &ThresholdFamily, config: &Configuration) -> (Configuration, ClosureStats) {
    let grid = config.grid();
    let volume = grid.volume();
    let geom = Geometry::new(grid, f.spec().vectors());
    let r = f.r();
    let mut out = config.clone();
    let mut counts = vec![0u16; volume];
    let mut queue: VecDeque<usize> = config.infected.iter_ones().collect();
    let mut stats = ClosureStats::default();

    while let Some(idx) = queue.pop_front() {
        let coords = grid.coords_of(idx);
        if geom.is_interior(&coords) {
            for &d in &geom.deltas {
                let j = (idx as isize + d) as usize;
                stats.counter_updates += 1;
                counts[j] += 1;
                if counts[j] as u32 == r && !out.infected.get(j) {
                    out.infected.set(j, true);
                    stats.newly_infected += 1;
                    queue.push_back(j);
                }
            }
        } else {
            for k in 0..geom.offsets.len() {
                if let Some(j) = geom.neighbor(&coords, k) {
                    stats.counter_updates += 1;
                    counts[j] += 1;
                    if counts[j] as u32 == r && !out.infected.get(j) {
                        out.infected.set(j, true);
                        stats.newly_infected += 1;
                        queue.push_back(j);
                    }
                }
            }
        }
    }
    (out, stats)
}

fn explicit_closure(f: &ExplicitFamily, config: &Configuration) -> (Configuration, ClosureStats) {
    let grid = config.grid();
    let volume = grid.volume();
    let nrules = f.rules().len();
    let mut out = config.clone();
    let mut stats = ClosureStats::default();
    if nrules == 0 {
        return (out, stats);
    }
    // per-(cell, rule) count of satisfied offsets; a rule fires for y when
    // its count reaches |rule|
    let sizes: Vec<u16> = f.rules().iter().map(|rule| rule.len() as u16).collect();
    let mut counts = vec![0u16; volume * nrules];
    let mut queue: VecDeque<usize> = config.infected.iter_ones().collect();

    // negated offsets per rule: x infected contributes to y = x - v
    let neg_offsets: Vec<Vec<Vec<i64>>> = f
        .rules()
        .iter()
        .map(|rule| {
            rule.iter()
                .map(|v| v.iter().map(|&x| -x).collect())
                .collect()
        })
        .collect();

    let strides = grid.strides();
    let dims = grid.dims().to_vec();
    while let Some(idx) = queue.pop_front() {
        let coords = grid.coords_of(idx);
        for (ri, rule) in neg_offsets.iter().enumerate() {
            for v in rule {
                let mut ok = true;
                let mut j = 0usize;
                for i in 0..dims.len() {
                    let l = dims[i] as i64;
                    let mut c = coords[i] as i64 + v[i];
                    match grid.boundary() {
                        Boundary::Closed => {
                            if c < 0 || c >= l {
                                ok = false;
                                break;
                            }
                        }
                        Boundary::Torus => c = c.rem_euclid(l),
                    }
                    j += c as usize * strides[i];
                }
                if !ok {
                    continue;
                }
                stats.counter_updates += 1;
                let slot = j * nrules + ri;
                counts[slot] += 1;
                if counts[slot] == sizes[ri] && !out.infected.get(j) {
                    out.infected.set(j, true);
                    stats.newly_infected += 1;
                    queue.push_back(j);
                }
            }
        }
    }
    (out, stats)
}

/// Whether the block is filled by its own seeds evolving inside the block
/// only, with the block's own closed boundary.
pub fn is_internally_filled(
    family: &UpdateFamily,
    block: &SubBlock,
    config: &Configuration,
) -> Result<bool, EngineError> {
    check_dims(family, config.grid())?;
    block.check_inside(config.grid())?;
    let inner_grid = GridBox::new(block.extents.clone(), Boundary::Closed)?;
    let mut inner = Configuration::empty(inner_grid);
    let d = block.origin.len();
    let mut coords = vec![0usize; d];
    let volume: usize = block.extents.iter().product();
    for i in 0..volume {
        let mut rest = i;
        for (axis, &e) in block.extents.iter().enumerate().rev() {
            coords[axis] = rest % e;
            rest /= e;
        }
        let parent: Vec<usize> = coords
            .iter()
            .zip(&block.origin)
            .map(|(&c, &o)| c + o)
            .collect();
        if config.get(&parent) {
            inner.infected.set(inner.grid.index_of(&coords), true);
        }
    }
    let filled = closure(family, &inner)?;
    Ok(filled.is_full())
}

/// Whether the closure of the configuration is the whole box.
pub fn percolates(family: &UpdateFamily, config: &Configuration) -> Result<bool, EngineError> {
    let closed = closure(family, config)?;
    Ok(closed.is_full())
}

// snapshot format -----------------------------------------------------------

/// Writes the `BPGRID` snapshot: header `BPGRID d L1 .. Ld boundary`, then
/// one line of run lengths in layout order, first run counting zeros.
pub fn write_snapshot<W: Write>(config: &Configuration, mut w: W) -> Result<(), EngineError> {
    let io = |e: std::io::Error| EngineError::SnapshotIo(e.to_string());
    let dims: Vec<String> = config.grid().dims().iter().map(|l| l.to_string()).collect();
    let boundary = match config.grid().boundary() {
        Boundary::Closed => "closed",
        Boundary::Torus => "torus",
    };
    writeln!(
        w,
        "BPGRID {} {} {}",
        config.grid().dims().len(),
        dims.join(" "),
        boundary
    )
    .map_err(io)?;
    let mut runs: Vec<usize> = Vec::new();
    let mut current = false;
    let mut len = 0usize;
    for i in 0..config.bits().len() {
        let b = config.bits().get(i);
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    let runs: Vec<String> = runs.iter().map(|n| n.to_string()).collect();
    writeln!(w, "{}", runs.join(" ")).map_err(io)?;
    Ok(())
}

/// Reads a `BPGRID` snapshot.
pub fn read_snapshot<R: BufRead>(mut r: R) -> Result<Configuration, EngineError> {
    let bad = |m: &str| EngineError::BadSnapshot(m.to_string());
    let io = |e: std::io::Error| EngineError::SnapshotIo(e.to_string());
    let mut header = String::new();
    r.read_line(&mut header).map_err(io)?;
    let mut toks = header.split_whitespace();
    if toks.next() != Some("BPGRID") {
        return Err(bad("missing BPGRID magic"));
    }
    let d: usize = toks
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or_else(|| bad("bad dimension count"))?;
    let mut dims = Vec::with_capacity(d);
    for _ in 0..d {
        let l: usize = toks
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| bad("bad side length"))?;
        dims.push(l);
    }
    let boundary = match toks.next() {
        Some("closed") => Boundary::Closed,
        Some("torus") => Boundary::Torus,
        _ => return Err(bad("bad boundary token")),
    };
    if toks.next().is_some() {
        return Err(bad("trailing tokens in header"));
    }
    let grid = GridBox::new(dims, boundary).map_err(|e| bad(&e.to_string()))?;
    let mut config = Configuration::empty(grid);
    let mut body = String::new();
    r.read_line(&mut body).map_err(io)?;
    let mut pos = 0usize;
    let mut bit = false;
    for tok in body.split_whitespace() {
        let n: usize = tok.parse().map_err(|_| bad("bad run length"))?;
        if bit {
            for i in pos..pos + n {
                if i >= config.bits().len() {
                    return Err(bad("runs exceed volume"));
                }
                config.infected.set(i, true);
            }
        }
        pos += n;
        bit = !bit;
    }
    if pos != config.bits().len() {
        return Err(bad("runs do not cover volume"));
    }
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::family::ThresholdFamily;

    fn nn2d(r: u32) -> UpdateFamily {
        ThresholdFamily::from_radii(&[1, 1], r).unwrap().into()
    }

    fn config_2d(l: usize, cells: &[(usize, usize)]) -> Configuration {
        let grid = GridBox::cube(2, l).unwrap();
        let cells: Vec<Vec<usize>> = cells.iter().map(|&(x, y)| vec![x, y]).collect();
        Configuration::from_cells(grid, &cells)
    }

    #[test]
    fn step_empty_and_full_fixed() {
        let f = nn2d(2);
        let empty = Configuration::empty(GridBox::cube(2, 3).unwrap());
        assert_eq!(step(&f, &empty).unwrap(), empty);
        let full = Configuration::full(GridBox::cube(2, 3).unwrap());
        assert_eq!(step(&f, &full).unwrap(), full);
    }

    #[test]
    fn step_adds_two_cells() {
        // 1-based (1,1),(2,2) = 0-based (0,0),(1,1)
        let f = nn2d(2);
        let a = config_2d(3, &[(0, 0), (1, 1)]);
        let next = step(&f, &a).unwrap();
        let expected = config_2d(3, &[(0, 0), (1, 1), (0, 1), (1, 0)]);
        assert_eq!(next, expected);
    }

    #[test]
    fn closure_diagonal_fills_square() {
        let f = nn2d(2);
        let a = config_2d(3, &[(0, 0), (1, 1), (2, 2)]);
        let closed = closure(&f, &a).unwrap();
        assert!(closed.is_full());
    }

    #[test]
    fn closure_single_site_inert() {
        let f: UpdateFamily = ThresholdFamily::from_radii(&[1, 2, 4], 5).unwrap().into();
        let grid = GridBox::cube(3, 5).unwrap();
        let a = Configuration::from_cells(grid, &[vec![2, 2, 2]]);
        let closed = closure(&f, &a).unwrap();
        assert_eq!(closed, a);
    }

    #[test]
    fn closure_idempotent() {
        let f = nn2d(2);
        let a = config_2d(4, &[(0, 0), (1, 1), (3, 2), (2, 3)]);
        let k = closure(&f, &a).unwrap();
        assert_eq!(closure(&f, &k).unwrap(), k);
        assert!(a.bits().is_subset_of(k.bits()));
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let f = nn2d(2);
        let a = Configuration::empty(GridBox::cube(3, 3).unwrap());
        assert!(matches!(
            step(&f, &a),
            Err(EngineError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            closure(&f, &a),
            Err(EngineError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn internally_filled_examples() {
        let f = nn2d(2);
        // fully seeded block
        let a = config_2d(4, &[(1, 1), (1, 2), (2, 1), (2, 2)]);
        let block = SubBlock::new(vec![1, 1], vec![2, 2]);
        assert!(is_internally_filled(&f, &block, &a).unwrap());

        // diagonal of a 2x2 block fills it
        let a = config_2d(4, &[(0, 0), (1, 1)]);
        let block = SubBlock::new(vec![0, 0], vec![2, 2]);
        assert!(is_internally_filled(&f, &block, &a).unwrap());

        // empty block is not filled
        let a = config_2d(4, &[(3, 3)]);
        let block = SubBlock::new(vec![0, 0], vec![2, 2]);
        assert!(!is_internally_filled(&f, &block, &a).unwrap());

        // help from outside the block is excluded: a frame of seeds around
        // an empty 2x2 block does not fill it internally
        let frame: Vec<(usize, usize)> = (0..4)
            .flat_map(|i| vec![(0, i), (3, i), (i, 0), (i, 3)])
            .collect();
        let a = config_2d(4, &frame);
        let block = SubBlock::new(vec![1, 1], vec![2, 2]);
        assert!(!is_internally_filled(&f, &block, &a).unwrap());
        assert!(percolates(&f, &a).unwrap(), "frame fills the whole box");

        // out of bounds
        let block = SubBlock::new(vec![3, 3], vec![2, 2]);
        assert!(matches!(
            is_internally_filled(&f, &block, &a),
            Err(EngineError::BlockOutOfBounds { .. })
        ));
    }

    #[test]
    fn percolation_trivial_cases() {
        let f = nn2d(2);
        let full = Configuration::full(GridBox::cube(2, 3).unwrap());
        assert!(percolates(&f, &full).unwrap());
        let empty = Configuration::empty(GridBox::cube(2, 3).unwrap());
        assert!(!percolates(&f, &empty).unwrap());
    }

    #[test]
    fn explicit_engine_matches_threshold() {
        let threshold = ThresholdFamily::from_radii(&[1, 1], 2).unwrap();
        let explicit: UpdateFamily = threshold.materialize_rules().into();
        let threshold: UpdateFamily = threshold.into();
        let a = config_2d(4, &[(0, 0), (1, 1), (2, 2), (0, 3)]);
        assert_eq!(
            closure(&threshold, &a).unwrap(),
            closure(&explicit, &a).unwrap()
        );
        assert_eq!(step(&threshold, &a).unwrap(), step(&explicit, &a).unwrap());
    }

    #[test]
    fn torus_translation_equivariance() {
        let f = nn2d(2);
        let grid = GridBox::new(vec![6, 6], Boundary::Torus).unwrap();
        let cells = [(0usize, 0usize), (1, 1), (2, 2), (4, 5)];
        let a = Configuration::from_cells(
            grid.clone(),
            &cells.iter().map(|&(x, y)| vec![x, y]).collect::<Vec<_>>(),
        );
        let (dx, dy) = (2usize, 3usize);
        let shifted = Configuration::from_cells(
            grid,
            &cells
                .iter()
                .map(|&(x, y)| vec![(x + dx) % 6, (y + dy) % 6])
                .collect::<Vec<_>>(),
        );
        let ka = closure(&f, &a).unwrap();
        let ks = closure(&f, &shifted).unwrap();
        for x in 0..6 {
            for y in 0..6 {
                assert_eq!(
                    ka.get(&[x, y]),
                    ks.get(&[(x + dx) % 6, (y + dy) % 6]),
                    "translation equivariance at ({x},{y})"
                );
            }
        }
    }

    #[test]
    fn closure_stats_budget() {
        let f = nn2d(2);
        let a = config_2d(5, &[(0, 0), (1, 1), (2, 2), (3, 3), (4, 4)]);
        let (closed, stats) = closure_with_stats(&f, &a).unwrap();
        assert!(closed.is_full());
        let volume = 25u64;
        let nvecs = 4u64;
        assert!(stats.counter_updates <= volume * nvecs);
    }

    #[test]
    fn snapshot_round_trip() {
        let a = config_2d(4, &[(0, 0), (1, 2), (3, 3), (2, 0)]);
        let mut buf = Vec::new();
        write_snapshot(&a, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("BPGRID 2 4 4 closed\n"));
        let back = read_snapshot(&buf[..]).unwrap();
        assert_eq!(back, a);

        // empty and full grids
        for c in [
            Configuration::empty(GridBox::cube(2, 3).unwrap()),
            Configuration::full(GridBox::cube(2, 3).unwrap()),
        ] {
            let mut buf = Vec::new();
            write_snapshot(&c, &mut buf).unwrap();
            assert_eq!(read_snapshot(&buf[..]).unwrap(), c);
        }

        assert!(read_snapshot(&b"BPGRID 2 2 2 closed\n9\n"[..]).is_err());
        assert!(read_snapshot(&b"NOPE\n"[..]).is_err());
    }
}
