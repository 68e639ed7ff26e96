//! Dense row-major grids and the small bits of geometry shared by every layer.
//!
//! Cell `(r, c)` covers `[c, c+1) x [r, r+1)` in cell units, so a point in
//! meters maps to cell `(floor(y / res), floor(x / res))`. Headings are in
//! degrees, measured from +x towards +y.

use std::ops::{Index, IndexMut};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    h: usize,
    w: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn new(h: usize, w: usize, fill: T) -> Self {
        Self {
            h,
            w,
            data: vec![fill; h * w],
        }
    }

    pub fn from_vec(h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), h * w, "grid data length mismatch");
        Self { h, w, data }
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value.clone());
    }

    /// Rotates a quarter turn: `out[w - 1 - c][r] = in[r][c]`.
    pub fn rot90(&self) -> Self {
        let (h, w) = (self.h, self.w);
        let mut data = Vec::with_capacity(h * w);
        for i in 0..w {
            for j in 0..h {
                data.push(self.data[j * w + (w - 1 - i)].clone());
            }
        }
        Self { h: w, w: h, data }
    }

    pub fn rot90_k(&self, k: usize) -> Self {
        let mut g = self.clone();
        for _ in 0..k % 4 {
            g = g.rot90();
        }
        g
    }

    /// Mirrors left-right.
    pub fn flip(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for r in 0..self.h {
            for c in (0..self.w).rev() {
                data.push(self.data[r * self.w + c].clone());
            }
        }
        Self {
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// Shifts contents by `(dr, dc)`, filling vacated cells with `fill`.
    pub fn shifted(&self, dr: isize, dc: isize, fill: T) -> Self {
        let mut out = Self::new(self.h, self.w, fill);
        for r in 0..self.h {
            for c in 0..self.w {
                let (nr, nc) = (r as isize + dr, c as isize + dc);
                if out.contains(nr, nc) {
                    out[(nr as usize, nc as usize)] = self.data[r * self.w + c].clone();
                }
            }
        }
        out
    }
}

impl<T> Grid<T> {
    #[inline]
    pub fn h(&self) -> usize {
        self.h
    }

    #[inline]
    pub fn w(&self) -> usize {
        self.w
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn idx(&self, r: usize, c: usize) -> usize {
        r * self.w + c
    }

    #[inline]
    pub fn rc(&self, idx: usize) -> (usize, usize) {
        (idx / self.w, idx % self.w)
    }

    #[inline]
    pub fn contains(&self, r: isize, c: isize) -> bool {
        r >= 0 && c >= 0 && (r as usize) < self.h && (c as usize) < self.w
    }

    #[inline]
    pub fn get(&self, r: isize, c: isize) -> Option<&T> {
        if self.contains(r, c) {
            Some(&self.data[r as usize * self.w + c as usize])
        } else {
            None
        }
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            h: self.h,
            w: self.w,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.h == other.h && self.w == other.w
    }
}

impl<T> Index<(usize, usize)> for Grid<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.w + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Grid<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.w + c]
    }
}

impl<T> Index<usize> for Grid<T> {
    type Output = T;
    #[inline]
    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T> IndexMut<usize> for Grid<T> {
    #[inline]
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}

/// `(cos, sin)` of a heading in degrees, with quarter-turn symmetry preserved
/// exactly: `heading_vec(a + 90)` is `(-sin a, cos a)` bit for bit.
pub fn heading_vec(deg: f64) -> (f64, f64) {
    let d = deg.rem_euclid(360.0);
    let q = ((d / 90.0).floor() as i64).rem_euclid(4);
    let a = (d - 90.0 * q as f64).to_radians();
    let (s, c) = a.sin_cos();
    match q {
        0 => (c, s),
        1 => (-s, c),
        2 => (-c, -s),
        _ => (s, -c),
    }
}

/// Signed smallest difference `to - from` in degrees, in `(-180, 180]`.
pub fn angle_diff(from: f64, to: f64) -> f64 {
    let mut d = (to - from).rem_euclid(360.0);
    if d > 180.0 {
        d -= 360.0;
    }
    d
}

/// Amanatides-Woo traversal in cell units.
///
/// Calls `visit(r, c, t_enter)` for each cell the ray enters, starting with the
/// cell containing `start` (entered at `t = 0`), until `visit` returns `false`
/// or `t_enter` exceeds `max_t`. `dir` must be a unit vector `(dx, dy)`;
/// `start` is `(x, y)`. Cells may lie outside any grid; bounds are the
/// caller's concern.
pub fn trace_ray(
    start: (f64, f64),
    dir: (f64, f64),
    max_t: f64,
    mut visit: impl FnMut(isize, isize, f64) -> bool,
) {
    let (x0, y0) = start;
    let (dx, dy) = dir;
    let mut c = x0.floor() as isize;
    let mut r = y0.floor() as isize;
    let step_c: isize = if dx > 0.0 { 1 } else { -1 };
    let step_r: isize = if dy > 0.0 { 1 } else { -1 };
    let t_delta_x = if dx != 0.0 { 1.0 / dx.abs() } else { f64::INFINITY };
    let t_delta_y = if dy != 0.0 { 1.0 / dy.abs() } else { f64::INFINITY };
    let mut t_max_x = if dx > 0.0 {
        (c as f64 + 1.0 - x0) / dx
    } else if dx < 0.0 {
        (x0 - c as f64) / -dx
    } else {
        f64::INFINITY
    };
    let mut t_max_y = if dy > 0.0 {
        (r as f64 + 1.0 - y0) / dy
    } else if dy < 0.0 {
        (y0 - r as f64) / -dy
    } else {
        f64::INFINITY
    };
    if !visit(r, c, 0.0) {
        return;
    }
    loop {
        let t;
        if t_max_x < t_max_y {
            t = t_max_x;
            c += step_c;
            t_max_x += t_delta_x;
        } else {
            t = t_max_y;
            r += step_r;
            t_max_y += t_delta_y;
        }
        if t > max_t || !visit(r, c, t) {
            return;
        }
    }
}

/// Walks the segment from `from` (cell units) to the centre of `to` and reports
/// whether it reaches a cell accepted by `arrived` before any cell rejected by
/// `clear`. Cells are tested in the order the segment enters them; the start
/// cell is skipped.
pub fn sight_line(
    from: (f64, f64),
    to: (isize, isize),
    clear: impl Fn(isize, isize) -> bool,
    arrived: impl Fn(isize, isize) -> bool,
) -> bool {
    let (tr, tc) = to;
    let (tx, ty) = (tc as f64 + 0.5, tr as f64 + 0.5);
    let (dx, dy) = (tx - from.0, ty - from.1);
    let len = (dx * dx + dy * dy).sqrt();
    if len < 1e-12 {
        return true;
    }
    let start = (from.0.floor() as isize, from.1.floor() as isize);
    let mut ok = false;
    trace_ray(from, (dx / len, dy / len), len + 1.0, |r, c, _| {
        if (c, r) == start {
            return true;
        }
        if arrived(r, c) {
            ok = true;
            return false;
        }
        if !clear(r, c) {
            return false;
        }
        (r, c) != (tr, tc)
    });
    ok
}

/// Cells of a disk of radius `radius` (cell units) as offsets `(dr, dc)`.
pub fn disk_offsets(radius: f64) -> Vec<(isize, isize)> {
    let k = radius.floor() as isize;
    let mut out = Vec::new();
    for dr in -k..=k {
        for dc in -k..=k {
            if ((dr * dr + dc * dc) as f64) <= radius * radius + 1e-9 {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// Max-pools a boolean/float layer by an integer factor.
pub fn pool_max(src: &Grid<f32>, factor: usize) -> Grid<f32> {
    let h = src.h().div_ceil(factor);
    let w = src.w().div_ceil(factor);
    let mut out = Grid::new(h, w, 0.0f32);
    for r in 0..src.h() {
        let orow = r / factor;
        for c in 0..src.w() {
            let v = src[(r, c)];
            let o = &mut out[(orow, c / factor)];
            if v > *o {
                *o = v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rot90_four_times_is_identity() {
        let g = Grid::from_vec(2, 3, vec![1, 2, 3, 4, 5, 6]);
        let r = g.rot90();
        assert_eq!((r.h(), r.w()), (3, 2));
        assert_eq!(r.data(), &[3, 6, 2, 5, 1, 4]);
        assert_eq!(g.rot90_k(4), g);
        assert_eq!(g.flip().flip(), g);
    }

    #[test]
    fn heading_vec_quarter_symmetry_is_exact() {
        for a in [0.0, 12.5, 30.0, 44.75, 60.0, 77.5] {
            let (c, s) = heading_vec(a);
            assert_eq!(heading_vec(a + 90.0), (-s, c));
            assert_eq!(heading_vec(a + 180.0), (-c, -s));
            assert_eq!(heading_vec(a + 270.0), (s, -c));
        }
        assert_eq!(heading_vec(90.0), (0.0, 1.0));
    }

    #[test]
    fn angle_diff_wraps() {
        assert_eq!(angle_diff(350.0, 10.0), 20.0);
        assert_eq!(angle_diff(10.0, 350.0), -20.0);
        assert_eq!(angle_diff(0.0, 180.0), 180.0);
    }

    #[test]
    fn ray_along_axis_visits_consecutive_cells() {
        let mut cells = Vec::new();
        trace_ray((0.5, 0.5), (1.0, 0.0), 3.2, |r, c, t| {
            cells.push((r, c, t));
            true
        });
        assert_eq!(
            cells,
            vec![(0, 0, 0.0), (0, 1, 0.5), (0, 2, 1.5), (0, 3, 2.5)]
        );
    }

    #[test]
    fn pool_max_keeps_any_set_cell() {
        let mut g = Grid::new(5, 5, 0.0f32);
        g[(4, 4)] = 1.0;
        let p = pool_max(&g, 2);
        assert_eq!((p.h(), p.w()), (3, 3));
        assert_eq!(p[(2, 2)], 1.0);
        assert_eq!(p.data().iter().filter(|v| **v > 0.0).count(), 1);
    }
}
