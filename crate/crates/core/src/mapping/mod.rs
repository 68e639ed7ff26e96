//! The agent's allocentric semantic map.
//!
//! Channel layout (0-based): 0 obstacles, 1 explored, 2 current location,
//! 3 past locations, then one channel per category with category `k` at
//! `3 + k`. Target categories come first, so channels `4..4 + C` are the
//! target channels.

pub mod io;

use crate::error::{Error, Result};
use crate::grid::{heading_vec, trace_ray, Grid};
use crate::world::{AgentPose, GroundTruthScene, Scan, NUM_CATEGORIES, NUM_TARGETS};

pub const NUM_CHANNELS: usize = NUM_CATEGORIES + 4;
pub const CH_OBSTACLE: usize = 0;
pub const CH_EXPLORED: usize = 1;
pub const CH_CURRENT: usize = 2;
pub const CH_PAST: usize = 3;
/// Largest map side in cells.
pub const MAX_CELLS: usize = 960;
pub const MARGIN_M: f64 = 1.0;

/// Channel holding evidence for category `k` (1-based).
pub const fn semantic_channel(k: u8) -> usize {
    3 + k as usize
}

/// Multi-channel top-down grid. Values are in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct SemanticMap {
    pub resolution: f64,
    /// Scene cell `(r, c)` is map cell `(r + offset.0, c + offset.1)`.
    pub offset: (isize, isize),
    channels: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
    current: Option<usize>,
    /// Bounding rows and columns (inclusive) of cells set since the last
    /// `take_dirty`.
    dirty: Option<(usize, usize, usize, usize)>,
}

impl PartialEq for SemanticMap {
    fn eq(&self, other: &Self) -> bool {
        self.resolution == other.resolution
            && self.offset == other.offset
            && (self.channels, self.h, self.w) == (other.channels, other.h, other.w)
            && self.current == other.current
            && self.data == other.data
    }
}

/// Cells the agent has observed.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplorationMask(pub Grid<bool>);

impl ExplorationMask {
    pub fn grid(&self) -> &Grid<bool> {
        &self.0
    }

    pub fn explored_count(&self) -> usize {
        self.0.data().iter().filter(|&&e| e).count()
    }
}

/// What an update changed, so callers can maintain derived layers
/// incrementally.
#[derive(Clone, Debug, Default)]
pub struct UpdateStats {
    pub new_explored: usize,
    pub new_obstacles: Vec<usize>,
    /// `(category, cell)` for every newly set semantic cell.
    pub new_semantic: Vec<(u8, usize)>,
    /// `(label, cell)` for every obstacle hit of this scan, label 0 for
    /// structure.
    pub observed: Vec<(u8, usize)>,
}

impl SemanticMap {
    pub fn new(channels: usize, h: usize, w: usize, resolution: f64, offset: (isize, isize)) -> Self {
        Self {
            resolution,
            offset,
            channels,
            h,
            w,
            data: vec![0.0; channels * h * w],
            current: None,
            dirty: None,
        }
    }

    /// Empty map covering `scene` plus a margin, capped at `MAX_CELLS` a side.
    pub fn for_scene(scene: &GroundTruthScene) -> Self {
        let margin = (MARGIN_M / scene.resolution).round() as usize;
        let h = (scene.h() + 2 * margin).min(MAX_CELLS);
        let w = (scene.w() + 2 * margin).min(MAX_CELLS);
        let off_r = (h as isize - scene.h() as isize) / 2;
        let off_c = (w as isize - scene.w() as isize) / 2;
        Self::new(NUM_CHANNELS, h, w, scene.resolution, (off_r, off_c))
    }

    /// Builds a map from raw channel-major data.
    pub fn from_data(channels: usize, h: usize, w: usize, resolution: f64, data: Vec<f32>) -> Result<Self> {
        if data.len() != channels * h * w {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {channels}x{h}x{w}",
                data.len()
            )));
        }
        let mut map = Self::new(channels, h, w, resolution, (0, 0));
        map.data = data;
        map.current = (0..h * w).find(|&i| channels > CH_CURRENT && map.data[CH_CURRENT * h * w + i] > 0.0);
        Ok(map)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn h(&self) -> usize {
        self.h
    }

    pub fn w(&self) -> usize {
        self.w
    }

    pub fn cells(&self) -> usize {
        self.h * self.w
    }

    /// Allocentric position in meters of the corner of cell `(0, 0)`.
    pub fn origin(&self) -> (f64, f64) {
        (
            -(self.offset.1 as f64) * self.resolution,
            -(self.offset.0 as f64) * self.resolution,
        )
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let n = self.cells();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn channel_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.cells();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn channel_grid(&self, k: usize) -> Grid<f32> {
        Grid::from_vec(self.h, self.w, self.channel(k).to_vec())
    }

    #[inline]
    pub fn at(&self, k: usize, idx: usize) -> f32 {
        self.data[k * self.cells() + idx]
    }

    #[inline]
    pub fn idx(&self, r: usize, c: usize) -> usize {
        r * self.w + c
    }

    #[inline]
    pub fn rc(&self, idx: usize) -> (usize, usize) {
        (idx / self.w, idx % self.w)
    }

    /// Map cell containing an allocentric point.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let c = (x / self.resolution).floor() as isize + self.offset.1;
        let r = (y / self.resolution).floor() as isize + self.offset.0;
        (r >= 0 && c >= 0 && (r as usize) < self.h && (c as usize) < self.w).then(|| self.idx(r as usize, c as usize))
    }

    /// Allocentric centre of a map cell.
    pub fn cell_center(&self, idx: usize) -> (f64, f64) {
        let (r, c) = self.rc(idx);
        (
            (c as isize - self.offset.1) as f64 * self.resolution + 0.5 * self.resolution,
            (r as isize - self.offset.0) as f64 * self.resolution + 0.5 * self.resolution,
        )
    }

    /// Point in map cell units, the frame used by ray traversal.
    pub fn to_cell_units(&self, x: f64, y: f64) -> (f64, f64) {
        (x / self.resolution, y / self.resolution)
    }

    pub fn is_explored(&self, idx: usize) -> bool {
        self.at(CH_EXPLORED, idx) >= 0.5
    }

    pub fn is_obstacle(&self, idx: usize) -> bool {
        self.at(CH_OBSTACLE, idx) >= 0.5
    }

    pub fn current_cell(&self) -> Option<usize> {
        self.current
    }

    pub fn exploration_mask(&self) -> ExplorationMask {
        ExplorationMask(Grid::from_vec(
            self.h,
            self.w,
            self.channel(CH_EXPLORED).iter().map(|&v| v >= 0.5).collect(),
        ))
    }

    pub fn explored_count(&self) -> usize {
        self.channel(CH_EXPLORED).iter().filter(|&&v| v >= 0.5).count()
    }

    /// Raises channel `k` at `idx` to `value` if larger; returns whether it
    /// crossed 0.5.
    #[inline]
    fn raise(&mut self, k: usize, idx: usize, value: f32) -> bool {
        let n = self.cells();
        let v = &mut self.data[k * n + idx];
        let was = *v >= 0.5;
        if value > *v {
            *v = value;
        }
        let crossed = !was && *v >= 0.5;
        if crossed {
            let (r, c) = (idx / self.w, idx % self.w);
            self.dirty = Some(match self.dirty {
                None => (r, r, c, c),
                Some((r0, r1, c0, c1)) => (r0.min(r), r1.max(r), c0.min(c), c1.max(c)),
            });
        }
        crossed
    }

    /// Bounding box `(r0, r1, c0, c1)`, inclusive, of every cell that crossed
    /// 0.5 in any channel since the previous call.
    pub fn take_dirty(&mut self) -> Option<(usize, usize, usize, usize)> {
        self.dirty.take()
    }

    /// Marks a cell as an obstacle the sensor never reported, such as one the
    /// agent bumped into.
    pub fn inscribe_obstacle(&mut self, idx: usize) -> bool {
        self.raise(CH_EXPLORED, idx, 1.0);
        self.raise(CH_OBSTACLE, idx, 1.0)
    }

    /// Integrates one scan taken at `pose` by cell-wise maximum.
    pub fn update(&mut self, scan: &Scan, pose: &AgentPose) -> Result<UpdateStats> {
        let Some(agent) = self.cell_of(pose.x, pose.y) else {
            return Err(Error::PoseOutOfBounds { x: pose.x, y: pose.y });
        };
        let res = self.resolution;
        let start = (pose.x / res, pose.y / res);
        let (h, w) = (self.h as isize, self.w as isize);
        let (or, oc) = self.offset;
        let mut stats = UpdateStats::default();
        if self.raise(CH_EXPLORED, agent, 1.0) {
            stats.new_explored += 1;
        }
        for ray in &scan.rays {
            let range = ray.hit_range / res;
            let tol = 1e-9 * range.max(1.0);
            let dir = heading_vec(pose.theta + ray.bearing_deg);
            trace_ray(start, dir, range + 1.0, |r, c, t| {
                let (mr, mc) = (r + or, c + oc);
                if mr < 0 || mc < 0 || mr >= h || mc >= w {
                    return false;
                }
                let idx = mr as usize * self.w + mc as usize;
                if t >= range - tol {
                    if ray.is_obstacle {
                        stats.observed.push((ray.hit_label, idx));
                        if self.raise(CH_EXPLORED, idx, 1.0) {
                            stats.new_explored += 1;
                        }
                        if self.raise(CH_OBSTACLE, idx, 1.0) {
                            stats.new_obstacles.push(idx);
                        }
                        if (1..=NUM_CATEGORIES as u8).contains(&ray.hit_label)
                            && self.raise(semantic_channel(ray.hit_label), idx, 1.0)
                        {
                            stats.new_semantic.push((ray.hit_label, idx));
                        }
                    }
                    return false;
                }
                if self.raise(CH_EXPLORED, idx, 1.0) {
                    stats.new_explored += 1;
                }
                true
            });
        }
        let n = self.cells();
        if let Some(prev) = self.current {
            self.data[CH_CURRENT * n + prev] = 0.0;
        }
        self.data[CH_CURRENT * n + agent] = 1.0;
        self.current = Some(agent);
        self.raise(CH_PAST, agent, 1.0);
        Ok(stats)
    }

    /// Max-pools every channel by `factor`.
    pub fn pooled(&self, factor: usize) -> SemanticMap {
        let h = self.h.div_ceil(factor);
        let w = self.w.div_ceil(factor);
        let mut out = SemanticMap::new(
            self.channels,
            h,
            w,
            self.resolution * factor as f64,
            (self.offset.0 / factor as isize, self.offset.1 / factor as isize),
        );
        let (n, m) = (self.cells(), h * w);
        for k in 0..self.channels {
            let src = &self.data[k * n..(k + 1) * n];
            let dst = &mut out.data[k * m..(k + 1) * m];
            for r in 0..self.h {
                let out_row = &mut dst[(r / factor) * w..(r / factor + 1) * w];
                let in_row = &src[r * self.w..(r + 1) * self.w];
                for (o, block) in out_row.iter_mut().zip(in_row.chunks(factor)) {
                    *o = block.iter().fold(*o, |m, &v| m.max(v));
                }
            }
        }
        out.current = self.current.map(|i| {
            let (r, c) = self.rc(i);
            (r / factor) * w + c / factor
        });
        out
    }

    /// The `C` target channels as boolean grids, index `c - 1` for category `c`.
    pub fn target_channels(&self) -> Vec<Grid<bool>> {
        (1..=NUM_TARGETS as u8)
            .map(|c| {
                Grid::from_vec(
                    self.h,
                    self.w,
                    self.channel(semantic_channel(c)).iter().map(|&v| v >= 0.5).collect(),
                )
            })
            .collect()
    }
}

/// Field-of-view wedge used to mask an egocentric crop.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frustum {
    pub fov_deg: f64,
    pub max_range: f64,
}

impl From<&Scan> for Frustum {
    fn from(scan: &Scan) -> Self {
        Self {
            fov_deg: scan.fov_deg,
            max_range: scan.max_range,
        }
    }
}

/// For each cell of a `side_m` window centred on the agent and rotated so the
/// agent faces up (towards row 0), the nearest source cell of `map`. Cells
/// outside the map, or outside the frustum when one is given, are `None`.
pub fn crop_sources(map: &SemanticMap, pose: &AgentPose, side_m: f64, frustum: Option<Frustum>) -> (usize, Vec<Option<usize>>) {
    let res = map.resolution;
    let n = ((side_m / res).round() as usize).max(1);
    let (fx, fy) = heading_vec(pose.theta);
    let (rx, ry) = heading_vec(pose.theta - 90.0);
    let half = n as f64 / 2.0;
    let cos_half = frustum.map(|f| (f.fov_deg / 2.0).to_radians().cos());
    let mut out = vec![None; n * n];
    for i in 0..n {
        let v = (half - (i as f64 + 0.5)) * res;
        for j in 0..n {
            let u = (j as f64 + 0.5 - half) * res;
            if let (Some(f), Some(ch)) = (frustum, cos_half) {
                let d = u.hypot(v);
                if d > f.max_range || (d > 0.0 && v / d < ch - 1e-12) {
                    continue;
                }
            }
            out[i * n + j] = map.cell_of(pose.x + v * fx + u * rx, pose.y + v * fy + u * ry);
        }
    }
    (n, out)
}

/// Square egocentric window of `side_m`, sampled by nearest cell; outside
/// the map reads as zero. With a frustum, every channel is zeroed outside the
/// viewing wedge.
pub fn crop_egocentric(map: &SemanticMap, pose: &AgentPose, side_m: f64, frustum: Option<Frustum>) -> SemanticMap {
    let (n, sources) = crop_sources(map, pose, side_m, frustum);
    let mut out = SemanticMap::new(map.channels, n, n, map.resolution, (0, 0));
    let (sn, dn) = (map.cells(), n * n);
    for (dst, src) in sources.iter().enumerate() {
        let Some(src) = *src else { continue };
        for k in 0..map.channels {
            out.data[k * dn + dst] = map.data[k * sn + src];
        }
    }
    out.current = (0..dn).find(|&i| out.channels > CH_CURRENT && out.data[CH_CURRENT * dn + i] > 0.0);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::category::SOFA;
    use crate::world::{sense, ObjectInstance, SensorParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn room(n: usize, objects: Vec<ObjectInstance>) -> GroundTruthScene {
        let mut occ = Grid::new(n, n, false);
        for i in 0..n {
            occ[(0, i)] = true;
            occ[(n - 1, i)] = true;
            occ[(i, 0)] = true;
            occ[(i, n - 1)] = true;
        }
        GroundTruthScene::new(0, 0.05, occ, objects).unwrap()
    }

    fn clean() -> SensorParams {
        SensorParams {
            noise_eps: 0.0,
            ..SensorParams::default()
        }
    }

    fn scan_at(scene: &GroundTruthScene, pose: &AgentPose) -> Scan {
        sense(scene, pose, &clean(), &mut ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn single_scan_explores_a_wedge() {
        let scene = room(200, vec![]);
        let pose = AgentPose::new(2.0, 5.0, 0.0);
        let mut map = SemanticMap::for_scene(&scene);
        map.update(&scan_at(&scene, &pose), &pose).unwrap();
        let mask = map.exploration_mask();
        for idx in 0..map.cells() {
            if !mask.0[idx] {
                continue;
            }
            let (x, y) = map.cell_center(idx);
            let (dx, dy) = (x - pose.x, y - pose.y);
            let d = dx.hypot(dy);
            if d > 0.5 {
                assert!(dy.atan2(dx).to_degrees().abs() <= 39.5 + 5.0, "cell at {x},{y}");
                assert!(d <= 5.0 + 0.1);
            }
        }
        assert!(mask.explored_count() > 1000);
    }

    #[test]
    fn same_scan_twice_is_idempotent() {
        let scene = room(120, vec![]);
        let pose = AgentPose::new(3.0, 3.0, 120.0);
        let scan = scan_at(&scene, &pose);
        let mut a = SemanticMap::for_scene(&scene);
        a.update(&scan, &pose).unwrap();
        let mut b = a.clone();
        let stats = b.update(&scan, &pose).unwrap();
        assert_eq!(a, b);
        assert_eq!(stats.new_explored, 0);
    }

    #[test]
    fn sofa_hit_marks_its_channel() {
        let n = 80;
        let cells: Vec<u32> = (30..50).map(|r| (r * n + 60) as u32).collect();
        let scene = room(n, vec![ObjectInstance { category: SOFA, cells }]);
        let pose = AgentPose::new(1.0, 2.0, 0.0);
        let mut map = SemanticMap::for_scene(&scene);
        let stats = map.update(&scan_at(&scene, &pose), &pose).unwrap();
        let (or, oc) = map.offset;
        let idx = map.idx((40 + or) as usize, (60 + oc) as usize);
        assert_eq!(map.at(semantic_channel(SOFA), idx), 1.0);
        assert!(map.is_explored(idx));
        assert!(map.is_obstacle(idx));
        assert!(stats.new_semantic.iter().any(|&(k, i)| k == SOFA && i == idx));
    }

    #[test]
    fn location_channels_track_the_agent() {
        let scene = room(100, vec![]);
        let mut map = SemanticMap::for_scene(&scene);
        for x in [1.0, 1.5, 2.0] {
            let pose = AgentPose::new(x, 2.0, 0.0);
            map.update(&scan_at(&scene, &pose), &pose).unwrap();
        }
        assert_eq!(map.channel(CH_CURRENT).iter().filter(|&&v| v > 0.0).count(), 1);
        assert_eq!(map.channel(CH_PAST).iter().filter(|&&v| v > 0.0).count(), 3);
        let out = AgentPose::new(-5.0, 2.0, 0.0);
        assert!(matches!(map.update(&scan_at(&scene, &AgentPose::new(1.0, 1.0, 0.0)), &out), Err(Error::PoseOutOfBounds { .. })));
    }

    #[test]
    fn crop_of_zero_map_is_zero_and_repeatable() {
        let scene = room(100, vec![]);
        let map = SemanticMap::for_scene(&scene);
        let pose = AgentPose::new(2.5, 2.5, 30.0);
        let a = crop_egocentric(&map, &pose, 6.0, None);
        assert!(a.data().iter().all(|&v| v == 0.0));
        assert_eq!((a.h(), a.w()), (120, 120));
        let mut full = map.clone();
        full.channel_mut(CH_EXPLORED).fill(1.0);
        let b = crop_egocentric(&full, &pose, 6.0, None);
        assert_eq!(b, crop_egocentric(&full, &pose, 6.0, None));
    }

    #[test]
    fn crop_faces_up() {
        let scene = room(100, vec![]);
        let mut map = SemanticMap::for_scene(&scene);
        // mark a cell 1 m east of the agent
        let pose = AgentPose::new(2.5, 2.5, 0.0);
        let idx = map.cell_of(3.525, 2.525).unwrap();
        map.channel_mut(CH_OBSTACLE)[idx] = 1.0;
        let crop = crop_egocentric(&map, &pose, 6.0, None);
        let hits: Vec<usize> = (0..crop.cells()).filter(|&i| crop.at(CH_OBSTACLE, i) > 0.0).collect();
        assert_eq!(hits.len(), 1);
        let (r, c) = crop.rc(hits[0]);
        // ahead is up; the agent's left (+y) is the crop's left
        assert_eq!((r, c), (39, 59));
    }
}
