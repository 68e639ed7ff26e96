//! Fast marching on a 2D grid.
//!
//! First-order upwind updates over the four axis triangles around a cell,
//! plus one-sided updates from diagonal neighbours. A triangle is only used
//! when the cell between its two neighbours is traversable, and a diagonal
//! neighbour only when both cells it cuts past are traversable, so fronts
//! never leak through a corner contact.
//!
//! Around a source whose neighbourhood is entirely open, cells start at their
//! exact Euclidean distance, which removes most of the error a point source
//! otherwise seeds.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::grid::{disk_offsets, Grid};

/// Radius, in cells, of the exactly initialised patch around each source.
pub const SEED_RADIUS: f64 = 4.0;

const FAR: u8 = 0;
const TRIAL: u8 = 1;
const ACCEPTED: u8 = 2;

/// Geodesic distances in meters; `f64::INFINITY` where unreachable.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    pub d: Grid<f64>,
    pub sources: Vec<usize>,
    pub resolution: f64,
}

impl DistanceField {
    #[inline]
    pub fn at(&self, idx: usize) -> f64 {
        self.d[idx]
    }

    pub fn is_reachable(&self, idx: usize) -> bool {
        self.d[idx].is_finite()
    }

    pub fn to_f32(&self) -> Grid<f32> {
        self.d.map(|&v| v as f32)
    }
}

/// Reusable solver state; buffers grow to the largest grid seen.
#[derive(Default)]
pub struct Fmm {
    t: Vec<f64>,
    state: Vec<u8>,
    heap: BinaryHeap<Reverse<(u64, u32)>>,
    h: usize,
    w: usize,
    seed: Vec<(isize, isize, f64)>,
    /// Grid padded by one blocked cell on every side: accepted values
    /// (infinite elsewhere) and traversability.
    acc: Vec<f64>,
    pmask: Vec<bool>,
}

/// Root of `(t - a)^2 + (t - b)^2 = h^2` with `t >= max(a, b)`, falling back
/// to the one-sided update.
#[inline]
fn solve2(a: f64, b: f64, h: f64) -> f64 {
    let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
    if lo == f64::INFINITY {
        return f64::INFINITY;
    }
    if hi - lo >= h {
        return lo + h;
    }
    let diff = hi - lo;
    (lo + hi + (2.0 * h * h - diff * diff).sqrt()) / 2.0
}

impl Fmm {
    pub fn new() -> Self {
        Self::default()
    }

    /// Distances of the last solve, in cell units.
    pub fn values(&self) -> &[f64] {
        &self.t[..self.h * self.w]
    }

    pub fn is_accepted(&self, idx: usize) -> bool {
        self.state[idx] == ACCEPTED
    }

    /// Marches outward from `sources`, calling `on_accept(cell, t)` for each
    /// cell as it is finalised in order of increasing `t` (cell units). The
    /// march ends early when `on_accept` returns `false`. Untraversable
    /// sources are skipped.
    pub fn solve(&mut self, trav: &Grid<bool>, sources: &[usize], mut on_accept: impl FnMut(usize, f64) -> bool) {
        let (h, w) = (trav.h(), trav.w());
        let n = h * w;
        self.h = h;
        self.w = w;
        if self.t.len() < n {
            self.t.resize(n, f64::INFINITY);
            self.state.resize(n, FAR);
        }
        self.t[..n].fill(f64::INFINITY);
        self.state[..n].fill(FAR);
        self.heap.clear();
        let mask = trav.data();
        if self.seed.is_empty() {
            self.seed = disk_offsets(SEED_RADIUS)
                .into_iter()
                .map(|(dr, dc)| (dr, dc, ((dr * dr + dc * dc) as f64).sqrt()))
                .collect();
        }
        for &s in sources {
            if s >= n || !mask[s] {
                continue;
            }
            let (sr, sc) = ((s / w) as isize, (s % w) as isize);
            let clear = |r: isize, c: isize| trav.get(r, c).copied().unwrap_or(false);
            let k = SEED_RADIUS as isize + 1;
            let open = (-k..=k).all(|dr| (-k..=k).all(|dc| clear(sr + dr, sc + dc)));
            for &(dr, dc, dist) in &self.seed {
                if !open && dist > 0.0 {
                    continue;
                }
                let j = (sr + dr) as usize * w + (sc + dc) as usize;
                if dist < self.t[j] {
                    self.t[j] = dist;
                    self.state[j] = TRIAL;
                    self.heap.push(Reverse((dist.to_bits(), j as u32)));
                }
            }
        }
        let pw = w + 2;
        let pn = (h + 2) * pw;
        self.acc.clear();
        self.acc.resize(pn, f64::INFINITY);
        self.pmask.clear();
        self.pmask.resize(pn, false);
        for r in 0..h {
            self.pmask[(r + 1) * pw + 1..(r + 1) * pw + 1 + w].copy_from_slice(&mask[r * w..(r + 1) * w]);
        }
        let sqrt2 = std::f64::consts::SQRT_2;
        let pwi = pw as isize;
        while let Some(Reverse((bits, i))) = self.heap.pop() {
            let i = i as usize;
            let ti = f64::from_bits(bits);
            if self.state[i] == ACCEPTED || ti > self.t[i] {
                continue;
            }
            self.state[i] = ACCEPTED;
            let p = (i / w + 1) * pw + i % w + 1;
            self.acc[p] = ti;
            if !on_accept(i, ti) {
                return;
            }
            for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1)] {
                let q = (p as isize + dr * pwi + dc) as usize;
                if !self.pmask[q] {
                    continue;
                }
                // a diagonal step needs both cells it cuts past free
                if dr != 0 && dc != 0 && !(self.pmask[(p as isize + dr * pwi) as usize] && self.pmask[(p as isize + dc) as usize]) {
                    continue;
                }
                let j = (q / pw - 1) * w + q % pw - 1;
                if self.state[j] == ACCEPTED {
                    continue;
                }
                let cand = self.update(q, pw, sqrt2);
                if cand < self.t[j] {
                    self.t[j] = cand;
                    self.state[j] = TRIAL;
                    self.heap.push(Reverse((cand.to_bits(), j as u32)));
                }
            }
        }
    }

    /// Smallest upwind value at padded index `p` from accepted neighbours.
    #[inline]
    fn update(&self, p: usize, pw: usize, sqrt2: f64) -> f64 {
        let (a, m) = (&self.acc, &self.pmask);
        let (left, up, right, down) = (a[p - 1], a[p - pw], a[p + 1], a[p + pw]);
        let mut best = left.min(up).min(right).min(down) + 1.0;
        let diag = |side_r: usize, side_c: usize, d: usize| if m[side_r] && m[side_c] { a[d] } else { f64::INFINITY };
        let diagonal = diag(p - pw, p - 1, p - pw - 1)
            .min(diag(p - pw, p + 1, p - pw + 1))
            .min(diag(p + pw, p + 1, p + pw + 1))
            .min(diag(p + pw, p - 1, p + pw - 1));
        best = best.min(diagonal + sqrt2);
        // (left, up), (up, right), (right, down), (down, left) meet at these.
        for (x, y, corner) in [(left, up, p - pw - 1), (up, right, p - pw + 1), (right, down, p + pw + 1), (down, left, p + pw - 1)] {
            if x.is_finite() && y.is_finite() && m[corner] {
                best = best.min(solve2(x, y, 1.0));
            }
        }
        best
    }

    /// Full solve from several sources, in meters.
    pub fn field(&mut self, trav: &Grid<bool>, sources: &[usize], resolution: f64) -> DistanceField {
        self.solve(trav, sources, |_, _| true);
        let d = Grid::from_vec(trav.h(), trav.w(), self.values().iter().map(|&t| t * resolution).collect());
        DistanceField {
            d,
            sources: sources.to_vec(),
            resolution,
        }
    }
}

/// Geodesic distance from `source` over `traversable`.
pub fn fmm_distance(traversable: &Grid<bool>, source: usize, resolution: f64) -> Result<DistanceField> {
    if source >= traversable.len() || !traversable[source] {
        return Err(Error::SourceNotTraversable(source));
    }
    Ok(Fmm::new().field(traversable, &[source], resolution))
}
