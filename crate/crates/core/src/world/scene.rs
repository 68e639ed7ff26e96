//! Procedural floorplans: rooms by binary space partition, doors along a random
//! spanning tree of the room adjacency graph, and furniture placed by per-room
//! priors.
//!
//! Rooms are split into two wings at the first partition. One wing holds the
//! private rooms (bedrooms and bathrooms), the other the shared rooms (living
//! room, kitchen, offices), so the identity of distant rooms is partly
//! predictable from what has been seen elsewhere in the house.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::category::*;
use super::{is_target, NUM_TARGETS};
use crate::error::{Error, Result};
use crate::grid::Grid;

const NO_INSTANCE: u32 = u32::MAX;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectInstance {
    pub category: u8,
    /// Row-major cell indices.
    pub cells: Vec<u32>,
}

/// Immutable ground truth for one world.
#[derive(Clone, Debug)]
pub struct GroundTruthScene {
    pub seed: u64,
    pub resolution: f64,
    occupancy: Grid<bool>,
    objects: Vec<ObjectInstance>,
    instance_at: Grid<u32>,
    blocked: Grid<bool>,
}

impl GroundTruthScene {
    /// Assembles a scene, checking that every footprint sits on free cells and
    /// that no two footprints overlap.
    pub fn new(
        seed: u64,
        resolution: f64,
        occupancy: Grid<bool>,
        objects: Vec<ObjectInstance>,
    ) -> Result<Self> {
        let mut instance_at = Grid::new(occupancy.h(), occupancy.w(), NO_INSTANCE);
        let mut blocked = occupancy.clone();
        for (k, obj) in objects.iter().enumerate() {
            if !(1..=super::NUM_CATEGORIES as u8).contains(&obj.category) {
                return Err(Error::InvalidEpisode(format!(
                    "object {k} has category {}",
                    obj.category
                )));
            }
            for &cell in &obj.cells {
                let cell = cell as usize;
                if cell >= occupancy.len() || occupancy[cell] || instance_at[cell] != NO_INSTANCE {
                    return Err(Error::InvalidEpisode(format!(
                        "object {k} footprint overlaps occupancy or another object at cell {cell}"
                    )));
                }
                instance_at[cell] = k as u32;
                blocked[cell] = true;
            }
        }
        Ok(Self {
            seed,
            resolution,
            occupancy,
            objects,
            instance_at,
            blocked,
        })
    }

    pub fn h(&self) -> usize {
        self.occupancy.h()
    }

    pub fn w(&self) -> usize {
        self.occupancy.w()
    }

    /// Structural occupancy (walls and unlabeled fixtures), without objects.
    pub fn occupancy(&self) -> &Grid<bool> {
        &self.occupancy
    }

    /// Occupancy including object footprints; what rays and bodies collide with.
    pub fn blocked(&self) -> &Grid<bool> {
        &self.blocked
    }

    pub fn objects(&self) -> &[ObjectInstance] {
        &self.objects
    }

    pub fn instance_at(&self, idx: usize) -> Option<usize> {
        match self.instance_at[idx] {
            NO_INSTANCE => None,
            k => Some(k as usize),
        }
    }

    /// Category of the object covering `idx`, or 0.
    pub fn label_at(&self, idx: usize) -> u8 {
        self.instance_at(idx)
            .map(|k| self.objects[k].category)
            .unwrap_or(0)
    }

    pub fn has_category(&self, category: u8) -> bool {
        self.objects.iter().any(|o| o.category == category)
    }

    /// Full target map channel for one target category (1-based).
    pub fn target_map(&self, category: u8) -> Grid<bool> {
        let mut g = Grid::new(self.h(), self.w(), false);
        for obj in self.objects.iter().filter(|o| o.category == category) {
            for &cell in &obj.cells {
                g[cell as usize] = true;
            }
        }
        g
    }

    /// All `C` target channels, index `c - 1` for category `c`.
    pub fn target_maps(&self) -> Vec<Grid<bool>> {
        (1..=NUM_TARGETS as u8).map(|c| self.target_map(c)).collect()
    }

    /// Cell centers whose disk of `radius_m` overlaps no blocked cell.
    pub fn navigable(&self, radius_m: f64) -> Grid<bool> {
        let offsets = body_offsets(radius_m / self.resolution);
        let (h, w) = (self.h() as isize, self.w() as isize);
        let mut out = Grid::new(self.h(), self.w(), false);
        for r in 0..h {
            for c in 0..w {
                let ok = offsets.iter().all(|&(dr, dc)| {
                    !self.blocked.get(r + dr, c + dc).copied().unwrap_or(true)
                });
                out[(r as usize, c as usize)] = ok;
            }
        }
        out
    }

    /// Number of 4-connected components of unblocked cells.
    pub fn free_components(&self) -> usize {
        let free = self.blocked.map(|b| !b);
        components(&free).1
    }

    /// Cells from which the body fits and that belong to the largest
    /// navigable component.
    pub fn spawn_candidates(&self, radius_m: f64) -> Vec<usize> {
        let nav = self.navigable(radius_m);
        let (labels, n) = components(&nav);
        if n == 0 {
            return Vec::new();
        }
        let mut sizes = vec![0usize; n];
        for &l in labels.data() {
            if l != u32::MAX {
                sizes[l as usize] += 1;
            }
        }
        let best = (0..n).max_by_key(|&i| (sizes[i], usize::MAX - i)).unwrap() as u32;
        labels
            .data()
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == best)
            .map(|(i, _)| i)
            .collect()
    }

    /// Row-major index of the cell containing a point, if inside the scene.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let c = (x / self.resolution).floor() as isize;
        let r = (y / self.resolution).floor() as isize;
        self.blocked.contains(r, c).then(|| self.blocked.idx(r as usize, c as usize))
    }

    pub fn cell_center(&self, idx: usize) -> (f64, f64) {
        let (r, c) = self.blocked.rc(idx);
        (
            (c as f64 + 0.5) * self.resolution,
            (r as f64 + 0.5) * self.resolution,
        )
    }

    /// True when a body of `radius_m` centred at `(x, y)` touches a blocked cell
    /// or leaves the scene.
    pub fn collides(&self, x: f64, y: f64, radius_m: f64) -> bool {
        let res = self.resolution;
        let (cx, cy) = (x / res, y / res);
        let rad = radius_m / res;
        let c0 = (cx - rad).floor() as isize;
        let c1 = (cx + rad).floor() as isize;
        let r0 = (cy - rad).floor() as isize;
        let r1 = (cy + rad).floor() as isize;
        for r in r0..=r1 {
            for c in c0..=c1 {
                let hit = self.blocked.get(r, c).copied().unwrap_or(true);
                if !hit {
                    continue;
                }
                let dx = (cx - cx.clamp(c as f64, c as f64 + 1.0)).abs();
                let dy = (cy - cy.clamp(r as f64, r as f64 + 1.0)).abs();
                if dx * dx + dy * dy < rad * rad {
                    return true;
                }
            }
        }
        false
    }
}

/// Offsets of cells a disk of radius `rad` (cell units) centred on a cell
/// centre can overlap.
pub(crate) fn body_offsets(rad: f64) -> Vec<(isize, isize)> {
    let k = rad.ceil() as isize + 1;
    let mut out = Vec::new();
    for dr in -k..=k {
        for dc in -k..=k {
            let dx = (dc.abs() as f64 - 0.5).max(0.0);
            let dy = (dr.abs() as f64 - 0.5).max(0.0);
            if dx * dx + dy * dy < rad * rad {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// 4-connected component labels of `true` cells; `u32::MAX` elsewhere.
pub(crate) fn components(mask: &Grid<bool>) -> (Grid<u32>, usize) {
    let mut labels = Grid::new(mask.h(), mask.w(), u32::MAX);
    let mut n = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..mask.len() {
        if !mask[start] || labels[start] != u32::MAX {
            continue;
        }
        labels[start] = n;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (r, c) = mask.rc(i);
            for (dr, dc) in [(-1isize, 0isize), (1, 0), (0, -1), (0, 1)] {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if let Some(&m) = mask.get(nr, nc) {
                    let j = mask.idx(nr as usize, nc as usize);
                    if m && labels[j] == u32::MAX {
                        labels[j] = n;
                        queue.push_back(j);
                    }
                }
            }
        }
        n += 1;
    }
    (labels, n as usize)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoomKind {
    Living,
    Kitchen,
    Office,
    Bedroom,
    Bathroom,
    Hallway,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Long side against a wall.
    WallBacked,
    /// Short side against a wall (beds).
    HeadAgainstWall,
    /// Square footprint tucked into a room corner.
    Corner,
    /// Around an unlabeled table in the middle of the room.
    AroundTable,
    /// In front of an unlabeled desk against a wall.
    AtDesk,
    /// On the wall opposite an already placed instance of `partner`, centred on it.
    Facing { partner: u8 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FurnitureRule {
    pub category: u8,
    pub probability: f64,
    pub count: (usize, usize),
    /// (length along the wall, depth) in meters.
    pub size_m: (f64, f64),
    pub placement: Placement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoomPrior {
    pub kind: RoomKind,
    pub rules: Vec<FurnitureRule>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub extent_m: f64,
    pub resolution: f64,
    pub wall_thickness_m: f64,
    pub door_width_m: f64,
    pub min_room_side_m: f64,
    pub min_rooms: usize,
    pub max_rooms: usize,
    pub extra_door_prob: f64,
    /// Objects keep this far from door openings.
    pub door_clearance_m: f64,
    pub max_retries: usize,
    pub priors: Vec<RoomPrior>,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            extent_m: 24.0,
            resolution: 0.05,
            wall_thickness_m: 0.1,
            door_width_m: 0.9,
            min_room_side_m: 2.6,
            min_rooms: 12,
            max_rooms: 18,
            extra_door_prob: 0.25,
            door_clearance_m: 0.6,
            max_retries: 8,
            priors: default_priors(),
        }
    }
}

impl SceneParams {
    /// 12 m preset used by tests and training-data collection.
    pub fn small() -> Self {
        Self {
            extent_m: 12.0,
            min_rooms: 4,
            max_rooms: 6,
            ..Self::default()
        }
    }

    pub fn prior(&self, kind: RoomKind) -> Option<&RoomPrior> {
        self.priors.iter().find(|p| p.kind == kind)
    }
}

fn rule(category: u8, probability: f64, count: (usize, usize), size_m: (f64, f64), placement: Placement) -> FurnitureRule {
    FurnitureRule {
        category,
        probability,
        count,
        size_m,
        placement,
    }
}

pub fn default_priors() -> Vec<RoomPrior> {
    use Placement::*;
    vec![
        RoomPrior {
            kind: RoomKind::Living,
            rules: vec![
                rule(SOFA, 0.95, (1, 1), (2.0, 0.9), WallBacked),
                rule(TV, 0.85, (1, 1), (1.0, 0.15), Facing { partner: SOFA }),
                rule(FIREPLACE, 0.4, (1, 1), (1.2, 0.4), WallBacked),
                rule(PLANT, 0.6, (1, 2), (0.4, 0.4), Corner),
                rule(CHAIR, 0.4, (1, 2), (0.6, 0.6), WallBacked),
            ],
        },
        RoomPrior {
            kind: RoomKind::Kitchen,
            rules: vec![
                rule(CHAIR, 0.95, (2, 4), (0.45, 0.45), AroundTable),
                rule(PLANT, 0.35, (1, 1), (0.4, 0.4), Corner),
            ],
        },
        RoomPrior {
            kind: RoomKind::Office,
            rules: vec![
                rule(CHAIR, 0.9, (1, 1), (0.5, 0.5), AtDesk),
                rule(TV, 0.5, (1, 1), (0.7, 0.15), WallBacked),
                rule(PLANT, 0.4, (1, 1), (0.4, 0.4), Corner),
            ],
        },
        RoomPrior {
            kind: RoomKind::Bedroom,
            rules: vec![
                rule(BED, 1.0, (1, 1), (1.5, 2.0), HeadAgainstWall),
                rule(MIRROR, 0.4, (1, 1), (0.8, 0.1), WallBacked),
                rule(CHAIR, 0.25, (1, 1), (0.5, 0.5), WallBacked),
                rule(PLANT, 0.25, (1, 1), (0.4, 0.4), Corner),
                rule(TV, 0.15, (1, 1), (0.9, 0.15), Facing { partner: BED }),
            ],
        },
        RoomPrior {
            kind: RoomKind::Bathroom,
            rules: vec![
                rule(TOILET, 0.95, (1, 1), (0.45, 0.7), HeadAgainstWall),
                rule(BATHTUB, 0.7, (1, 1), (1.7, 0.75), WallBacked),
                rule(MIRROR, 0.8, (1, 1), (0.7, 0.1), WallBacked),
                rule(PLANT, 0.1, (1, 1), (0.35, 0.35), Corner),
            ],
        },
        RoomPrior {
            kind: RoomKind::Hallway,
            rules: vec![
                rule(PLANT, 0.3, (1, 1), (0.4, 0.4), Corner),
                rule(MIRROR, 0.2, (1, 1), (0.8, 0.1), WallBacked),
            ],
        },
    ]
}

/// Axis-aligned cell rectangle `[r0, r1) x [c0, c1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Rect {
    r0: usize,
    r1: usize,
    c0: usize,
    c1: usize,
}

impl Rect {
    fn hgt(&self) -> usize {
        self.r1 - self.r0
    }
    fn wid(&self) -> usize {
        self.c1 - self.c0
    }
    fn area(&self) -> usize {
        self.hgt() * self.wid()
    }
    fn expand(&self, k: usize, h: usize, w: usize) -> Rect {
        Rect {
            r0: self.r0.saturating_sub(k),
            r1: (self.r1 + k).min(h),
            c0: self.c0.saturating_sub(k),
            c1: (self.c1 + k).min(w),
        }
    }
    fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (self.r0..self.r1).flat_map(move |r| (self.c0..self.c1).map(move |c| (r, c)))
    }
}

#[derive(Clone, Copy, Debug)]
struct Room {
    rect: Rect,
    wing: u8,
}

/// Which wall of a room a piece of furniture is pushed against.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Side {
    North,
    South,
    West,
    East,
}

impl Side {
    const ALL: [Side; 4] = [Side::North, Side::South, Side::West, Side::East];
    fn opposite(self) -> Side {
        match self {
            Side::North => Side::South,
            Side::South => Side::North,
            Side::West => Side::East,
            Side::East => Side::West,
        }
    }
}

/// Rectangle of `len` cells along `side` and `depth` cells into the room,
/// starting `offset` cells from the side's first corner.
fn against(room: &Rect, side: Side, offset: usize, len: usize, depth: usize) -> Option<Rect> {
    let r = match side {
        Side::North => Rect { r0: room.r0, r1: room.r0 + depth, c0: room.c0 + offset, c1: room.c0 + offset + len },
        Side::South => Rect { r0: room.r1.checked_sub(depth)?, r1: room.r1, c0: room.c0 + offset, c1: room.c0 + offset + len },
        Side::West => Rect { r0: room.r0 + offset, r1: room.r0 + offset + len, c0: room.c0, c1: room.c0 + depth },
        Side::East => Rect { r0: room.r0 + offset, r1: room.r0 + offset + len, c0: room.c1.checked_sub(depth)?, c1: room.c1 },
    };
    (r.r0 >= room.r0 && r.r1 <= room.r1 && r.c0 >= room.c0 && r.c1 <= room.c1 && r.r0 < r.r1 && r.c0 < r.c1)
        .then_some(r)
}

fn side_len(room: &Rect, side: Side) -> usize {
    match side {
        Side::North | Side::South => room.wid(),
        Side::West | Side::East => room.hgt(),
    }
}

struct Builder<'a> {
    params: &'a SceneParams,
    rng: ChaCha8Rng,
    n: usize,
    occupancy: Grid<bool>,
    taken: Grid<bool>,
    keep_out: Grid<bool>,
    objects: Vec<ObjectInstance>,
    queue: VecDeque<usize>,
    seen: Vec<u32>,
    stamp: u32,
}

impl<'a> Builder<'a> {
    fn cells(&self, m: f64) -> usize {
        ((m / self.params.resolution).round() as usize).max(1)
    }

    fn blocked(&self, i: usize) -> bool {
        self.occupancy[i] || self.taken[i]
    }

    fn free_connected(&mut self) -> bool {
        let total = (0..self.occupancy.len()).filter(|&i| !self.blocked(i)).count();
        let Some(start) = (0..self.occupancy.len()).find(|&i| !self.blocked(i)) else {
            return false;
        };
        self.stamp += 1;
        let stamp = self.stamp;
        self.seen[start] = stamp;
        self.queue.clear();
        self.queue.push_back(start);
        let mut count = 0;
        let n = self.n;
        while let Some(i) = self.queue.pop_front() {
            count += 1;
            let (r, c) = (i / n, i % n);
            let push = |j: usize, this: &mut Self| {
                if !this.blocked(j) && this.seen[j] != stamp {
                    this.seen[j] = stamp;
                    this.queue.push_back(j);
                }
            };
            if r > 0 {
                push(i - n, self);
            }
            if r + 1 < n {
                push(i + n, self);
            }
            if c > 0 {
                push(i - 1, self);
            }
            if c + 1 < n {
                push(i + 1, self);
            }
        }
        count == total
    }

    fn rect_free(&self, r: &Rect) -> bool {
        r.cells().all(|(rr, cc)| {
            let i = rr * self.n + cc;
            !self.blocked(i) && !self.keep_out[i]
        })
    }

    /// Marks `r` as an object (or as structural occupancy when `category` is
    /// 0) if it is free and keeps the free space connected.
    fn try_place(&mut self, r: Rect, category: u8) -> bool {
        if !self.rect_free(&r) {
            return false;
        }
        let cells: Vec<usize> = r.cells().map(|(rr, cc)| rr * self.n + cc).collect();
        for &i in &cells {
            if category == 0 {
                self.occupancy[i] = true;
            } else {
                self.taken[i] = true;
            }
        }
        if self.free_connected() {
            if category != 0 {
                self.objects.push(ObjectInstance {
                    category,
                    cells: cells.iter().map(|&i| i as u32).collect(),
                });
            }
            true
        } else {
            for &i in &cells {
                if category == 0 {
                    self.occupancy[i] = false;
                } else {
                    self.taken[i] = false;
                }
            }
            false
        }
    }

    fn place_against(&mut self, room: &Rect, len: usize, depth: usize, category: u8, sides: &[Side]) -> Option<(Rect, Side)> {
        for _ in 0..24 {
            let side = *sides.choose(&mut self.rng)?;
            let span = side_len(room, side);
            if span < len {
                continue;
            }
            let offset = self.rng.gen_range(0..=span - len);
            if let Some(r) = against(room, side, offset, len, depth) {
                if self.try_place(r, category) {
                    return Some((r, side));
                }
            }
        }
        None
    }

    fn place_corner(&mut self, room: &Rect, size: usize, category: u8) -> bool {
        let mut corners = [(false, false), (false, true), (true, false), (true, true)];
        corners.shuffle(&mut self.rng);
        for (bottom, right) in corners {
            if room.hgt() < size || room.wid() < size {
                return false;
            }
            let r0 = if bottom { room.r1 - size } else { room.r0 };
            let c0 = if right { room.c1 - size } else { room.c0 };
            let r = Rect { r0, r1: r0 + size, c0, c1: c0 + size };
            if self.try_place(r, category) {
                return true;
            }
        }
        false
    }

    fn furnish(&mut self, room: &Rect, prior: &RoomPrior) {
        let mut placed: Vec<(u8, Rect, Side)> = Vec::new();
        for rule in &prior.rules {
            if !self.rng.gen_bool(rule.probability.clamp(0.0, 1.0)) {
                continue;
            }
            let count = self.rng.gen_range(rule.count.0..=rule.count.1.max(rule.count.0));
            let len = self.cells(rule.size_m.0);
            let depth = self.cells(rule.size_m.1);
            match rule.placement {
                Placement::WallBacked | Placement::HeadAgainstWall => {
                    for _ in 0..count {
                        if let Some((r, s)) = self.place_against(room, len, depth, rule.category, &Side::ALL) {
                            placed.push((rule.category, r, s));
                        }
                    }
                }
                Placement::Corner => {
                    for _ in 0..count {
                        self.place_corner(room, len, rule.category);
                    }
                }
                Placement::Facing { partner } => {
                    let Some(&(_, pr, ps)) = placed.iter().find(|(c, _, _)| *c == partner) else {
                        continue;
                    };
                    let side = ps.opposite();
                    let gap = match side {
                        Side::North => pr.r0.saturating_sub(room.r0),
                        Side::South => room.r1.saturating_sub(pr.r1),
                        Side::West => pr.c0.saturating_sub(room.c0),
                        Side::East => room.c1.saturating_sub(pr.c1),
                    };
                    if gap < self.cells(1.2) + depth {
                        continue;
                    }
                    let (lo, hi, base) = match side {
                        Side::North | Side::South => (pr.c0, pr.c1, room.c0),
                        Side::West | Side::East => (pr.r0, pr.r1, room.r0),
                    };
                    let centre = (lo + hi) / 2;
                    let span = side_len(room, side);
                    if span < len {
                        continue;
                    }
                    let offset = (centre.saturating_sub(base)).saturating_sub(len / 2).min(span - len);
                    if let Some(r) = against(room, side, offset, len, depth) {
                        if self.try_place(r, rule.category) {
                            placed.push((rule.category, r, side));
                        }
                    }
                }
                Placement::AroundTable => {
                    let (tl, tw) = (self.cells(1.2), self.cells(0.8));
                    let cr = (room.r0 + room.r1) / 2;
                    let cc = (room.c0 + room.c1) / 2;
                    if room.hgt() < tw + 2 * len + self.cells(1.4) || room.wid() < tl + 2 * len + self.cells(1.4) {
                        continue;
                    }
                    let table = Rect { r0: cr - tw / 2, r1: cr - tw / 2 + tw, c0: cc - tl / 2, c1: cc - tl / 2 + tl };
                    if !self.try_place(table, 0) {
                        continue;
                    }
                    let gap = self.cells(0.1);
                    let mut seats = vec![
                        Rect { r0: table.r0 - gap - len, r1: table.r0 - gap, c0: cc - len / 2, c1: cc - len / 2 + len },
                        Rect { r0: table.r1 + gap, r1: table.r1 + gap + len, c0: cc - len / 2, c1: cc - len / 2 + len },
                        Rect { r0: cr - len / 2, r1: cr - len / 2 + len, c0: table.c0 - gap - len, c1: table.c0 - gap },
                        Rect { r0: cr - len / 2, r1: cr - len / 2 + len, c0: table.c1 + gap, c1: table.c1 + gap + len },
                    ];
                    seats.shuffle(&mut self.rng);
                    for seat in seats.into_iter().take(count) {
                        self.try_place(seat, rule.category);
                    }
                }
                Placement::AtDesk => {
                    let (dl, dd) = (self.cells(1.2), self.cells(0.6));
                    let Some((desk, side)) = self.place_against(room, dl, dd, 0, &Side::ALL) else {
                        continue;
                    };
                    let gap = self.cells(0.15);
                    let mid_c = (desk.c0 + desk.c1) / 2 - len / 2;
                    let mid_r = (desk.r0 + desk.r1) / 2 - len / 2;
                    let seat = match side {
                        Side::North => Rect { r0: desk.r1 + gap, r1: desk.r1 + gap + len, c0: mid_c, c1: mid_c + len },
                        Side::South => Rect { r0: desk.r0.saturating_sub(gap + len), r1: desk.r0.saturating_sub(gap), c0: mid_c, c1: mid_c + len },
                        Side::West => Rect { r0: mid_r, r1: mid_r + len, c0: desk.c1 + gap, c1: desk.c1 + gap + len },
                        Side::East => Rect { r0: mid_r, r1: mid_r + len, c0: desk.c0.saturating_sub(gap + len), c1: desk.c0.saturating_sub(gap) },
                    };
                    if seat.r1 <= room.r1 && seat.c1 <= room.c1 && seat.r0 >= room.r0 && seat.c0 >= room.c0 {
                        self.try_place(seat, rule.category);
                    }
                }
            }
        }
    }
}

fn partition(params: &SceneParams, rng: &mut ChaCha8Rng, n: usize, wt: usize) -> Option<Vec<Room>> {
    let min_side = (params.min_room_side_m / params.resolution).round() as usize;
    let target = rng.gen_range(params.min_rooms..=params.max_rooms.max(params.min_rooms));
    let mut rooms = vec![Room {
        rect: Rect { r0: wt, r1: n - wt, c0: wt, c1: n - wt },
        wing: 0,
    }];
    let mut first = true;
    while rooms.len() < target {
        let splittable = |r: &Rect| r.hgt() >= 2 * min_side + wt || r.wid() >= 2 * min_side + wt;
        let Some(k) = (0..rooms.len())
            .filter(|&i| splittable(&rooms[i].rect))
            .max_by_key(|&i| (rooms[i].rect.area(), usize::MAX - i))
        else {
            break;
        };
        let room = rooms[k];
        let rect = room.rect;
        let can_h = rect.hgt() >= 2 * min_side + wt;
        let can_v = rect.wid() >= 2 * min_side + wt;
        let horizontal = match (can_h, can_v) {
            (true, false) => true,
            (false, true) => false,
            _ if rect.hgt() != rect.wid() => rect.hgt() > rect.wid(),
            _ => rng.gen_bool(0.5),
        };
        let (lo, len) = if horizontal { (rect.r0, rect.hgt()) } else { (rect.c0, rect.wid()) };
        let s = lo + rng.gen_range(min_side..=len - min_side - wt);
        let (a, b) = if horizontal {
            (Rect { r1: s, ..rect }, Rect { r0: s + wt, ..rect })
        } else {
            (Rect { c1: s, ..rect }, Rect { c0: s + wt, ..rect })
        };
        let (wa, wb) = if first { (0, 1) } else { (room.wing, room.wing) };
        first = false;
        rooms[k] = Room { rect: a, wing: wa };
        rooms.push(Room { rect: b, wing: wb });
    }
    (rooms.len() >= params.min_rooms).then_some(rooms)
}

/// Shared-wall door slot between two rooms, if their common edge is long
/// enough for a door plus jambs.
fn door_slot(a: &Rect, b: &Rect, wt: usize, door: usize, jamb: usize) -> Option<(bool, usize, usize, usize)> {
    // (horizontal wall, wall start, overlap lo, overlap hi)
    if a.r1 + wt == b.r0 || b.r1 + wt == a.r0 {
        let lo = a.c0.max(b.c0) + jamb;
        let hi = a.c1.min(b.c1).saturating_sub(jamb);
        let wall = a.r1.min(b.r1);
        if hi >= lo + door {
            return Some((true, wall, lo, hi));
        }
    }
    if a.c1 + wt == b.c0 || b.c1 + wt == a.c0 {
        let lo = a.r0.max(b.r0) + jamb;
        let hi = a.r1.min(b.r1).saturating_sub(jamb);
        let wall = a.c1.min(b.c1);
        if hi >= lo + door {
            return Some((false, wall, lo, hi));
        }
    }
    None
}

fn find(parent: &mut [usize], i: usize) -> usize {
    let mut i = i;
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn assign_kinds(rooms: &[Room], rng: &mut ChaCha8Rng, res: f64) -> Vec<RoomKind> {
    let private_wing = rng.gen_range(0..2u8);
    let mut kinds = vec![RoomKind::Hallway; rooms.len()];
    let is_hall = |r: &Rect| {
        let (a, b) = (r.hgt().min(r.wid()) as f64 * res, r.hgt().max(r.wid()) as f64 * res);
        b / a >= 2.8 && a < 3.2
    };
    let mut private: Vec<usize> = (0..rooms.len()).filter(|&i| rooms[i].wing == private_wing).collect();
    let mut public: Vec<usize> = (0..rooms.len()).filter(|&i| rooms[i].wing != private_wing).collect();
    private.sort_by_key(|&i| (rooms[i].rect.area(), i));
    public.sort_by_key(|&i| (usize::MAX - rooms[i].rect.area(), i));
    let private: Vec<usize> = private.into_iter().filter(|&i| !is_hall(&rooms[i].rect)).collect();
    let public: Vec<usize> = public.into_iter().filter(|&i| !is_hall(&rooms[i].rect)).collect();
    let n_bath = private.len().div_ceil(3).max(usize::from(!private.is_empty()));
    for (k, &i) in private.iter().enumerate() {
        kinds[i] = if k < n_bath { RoomKind::Bathroom } else { RoomKind::Bedroom };
    }
    for (k, &i) in public.iter().enumerate() {
        kinds[i] = match k {
            0 => RoomKind::Living,
            1 => RoomKind::Kitchen,
            _ => *[RoomKind::Office, RoomKind::Kitchen, RoomKind::Living, RoomKind::Office]
                .choose(rng)
                .unwrap(),
        };
    }
    kinds
}

fn try_generate(seed: u64, attempt: u64, params: &SceneParams) -> Result<GroundTruthScene, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(attempt));
    let res = params.resolution;
    let n = (params.extent_m / res).round() as usize;
    let wt = ((params.wall_thickness_m / res).round() as usize).max(1);
    let door = (params.door_width_m / res).round() as usize;
    let jamb = (0.2 / res).round() as usize;
    if n < 4 * wt + 2 || door == 0 {
        return Err("extent too small".into());
    }
    let rooms = partition(params, &mut rng, n, wt).ok_or("could not reach the minimum room count")?;

    let mut occupancy = Grid::new(n, n, true);
    for room in &rooms {
        for (r, c) in room.rect.cells() {
            occupancy[(r, c)] = false;
        }
    }

    let mut edges = Vec::new();
    for i in 0..rooms.len() {
        for j in i + 1..rooms.len() {
            if let Some(slot) = door_slot(&rooms[i].rect, &rooms[j].rect, wt, door, jamb) {
                edges.push((i, j, slot));
            }
        }
    }
    edges.shuffle(&mut rng);
    let mut parent: Vec<usize> = (0..rooms.len()).collect();
    let mut doors = Vec::new();
    for &(i, j, slot) in &edges {
        let (a, b) = (find(&mut parent, i), find(&mut parent, j));
        let tree_edge = a != b;
        if tree_edge {
            parent[a] = b;
        }
        if tree_edge || rng.gen_bool(params.extra_door_prob) {
            doors.push(slot);
        }
    }
    let root = find(&mut parent, 0);
    if (0..rooms.len()).any(|i| find(&mut parent, i) != root) {
        return Err("room graph is disconnected".into());
    }
    let mut keep_out = Grid::new(n, n, false);
    let clearance = (params.door_clearance_m / res).round() as usize;
    for &(horizontal, wall, lo, hi) in &doors {
        let pos = lo + rng.gen_range(0..=hi - lo - door);
        let gap = if horizontal {
            Rect { r0: wall, r1: wall + wt, c0: pos, c1: pos + door }
        } else {
            Rect { r0: pos, r1: pos + door, c0: wall, c1: wall + wt }
        };
        for (r, c) in gap.cells() {
            occupancy[(r, c)] = false;
        }
        for (r, c) in gap.expand(clearance, n, n).cells() {
            keep_out[(r, c)] = true;
        }
    }

    let kinds = assign_kinds(&rooms, &mut rng, res);
    let mut builder = Builder {
        params,
        rng,
        n,
        occupancy,
        taken: Grid::new(n, n, false),
        keep_out,
        objects: Vec::new(),
        queue: VecDeque::new(),
        seen: vec![0; n * n],
        stamp: 0,
    };
    if !builder.free_connected() {
        return Err("floorplan free space is disconnected".into());
    }
    for (room, kind) in rooms.iter().zip(&kinds) {
        if let Some(prior) = params.prior(*kind) {
            let prior = prior.clone();
            builder.furnish(&room.rect, &prior);
        }
    }
    if !builder.objects.iter().any(|o| is_target(o.category)) {
        return Err("no target objects placed".into());
    }
    GroundTruthScene::new(seed, res, builder.occupancy, builder.objects).map_err(|e| e.to_string())
}

/// Generates a scene deterministically from `seed` and `params`.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<GroundTruthScene> {
    let mut last = String::new();
    for attempt in 0..params.max_retries.max(1) as u64 {
        match try_generate(seed, attempt, params) {
            Ok(scene) => return Ok(scene),
            Err(reason) => last = reason,
        }
    }
    Err(Error::GenerationFailed {
        attempts: params.max_retries.max(1),
        reason: last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_scene_has_rooms_and_targets() {
        let scene = generate_scene(3, &SceneParams::small()).unwrap();
        assert_eq!((scene.h(), scene.w()), (240, 240));
        assert!(scene.objects().iter().any(|o| is_target(o.category)));
        assert_eq!(scene.free_components(), 1);
    }

    #[test]
    fn footprints_never_overlap_occupancy() {
        let scene = generate_scene(11, &SceneParams::small()).unwrap();
        for obj in scene.objects() {
            for &cell in &obj.cells {
                assert!(!scene.occupancy()[cell as usize]);
                assert!(scene.blocked()[cell as usize]);
            }
        }
    }

    #[test]
    fn degenerate_params_fail_explicitly() {
        let params = SceneParams {
            extent_m: 4.0,
            min_rooms: 6,
            max_rooms: 6,
            max_retries: 3,
            ..SceneParams::small()
        };
        match generate_scene(1, &params) {
            Err(Error::GenerationFailed { attempts, .. }) => assert_eq!(attempts, 3),
            other => panic!("expected failure, got {other:?}"),
        }
    }

    #[test]
    fn collides_respects_body_radius() {
        let mut occ = Grid::new(20, 20, false);
        for r in 0..20 {
            occ[(r, 10)] = true;
        }
        let scene = GroundTruthScene::new(0, 0.05, occ, vec![]).unwrap();
        // wall face at x = 0.5
        assert!(!scene.collides(0.40, 0.5, 0.09));
        assert!(scene.collides(0.42, 0.5, 0.09));
        assert!(scene.collides(-0.01, 0.5, 0.0 + 0.09));
    }

    #[test]
    fn rejects_footprint_on_wall() {
        let mut occ = Grid::new(4, 4, false);
        occ[(0, 0)] = true;
        let obj = ObjectInstance { category: 1, cells: vec![0] };
        assert!(GroundTruthScene::new(0, 0.05, occ, vec![obj]).is_err());
    }
}
