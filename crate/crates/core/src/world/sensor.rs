//! Planar semantic range scanner.
//!
//! Each ray marches from the agent until it enters a blocked cell or runs out
//! of range. The label of the first blocked cell is reported, optionally
//! corrupted by a segmentation-noise model: once per scan, every visible object
//! instance is misclassified with probability `noise_eps`, drawing its
//! replacement label from a category confusion table.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::category::*;
use super::dynamics::AgentPose;
use super::scene::GroundTruthScene;
use crate::grid::{heading_vec, trace_ray};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Confusion {
    pub from: u8,
    pub to: u8,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorParams {
    pub fov_deg: f64,
    pub num_rays: usize,
    pub max_range_m: f64,
    pub noise_eps: f64,
    pub confusion: Vec<Confusion>,
}

impl Default for SensorParams {
    fn default() -> Self {
        Self {
            fov_deg: 79.0,
            num_rays: 158,
            max_range_m: 5.0,
            noise_eps: 0.03,
            confusion: default_confusion(),
        }
    }
}

/// Look-alike pairs a segmenter typically confuses.
pub fn default_confusion() -> Vec<Confusion> {
    let pairs = [
        (SOFA, CHAIR, 1.0),
        (CHAIR, SOFA, 1.0),
        (BATHTUB, BED, 1.0),
        (BED, SOFA, 1.0),
        (MIRROR, TV, 1.0),
        (TV, MIRROR, 1.0),
        (FIREPLACE, TV, 1.0),
        (PLANT, CHAIR, 0.5),
    ];
    pairs
        .iter()
        .map(|&(from, to, weight)| Confusion { from, to, weight })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    /// Degrees relative to the agent heading.
    pub bearing_deg: f64,
    /// Meters; equals the scan's `max_range` when nothing was hit.
    pub hit_range: f64,
    pub hit_label: u8,
    pub is_obstacle: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scan {
    pub rays: Vec<Ray>,
    pub fov_deg: f64,
    pub max_range: f64,
}

impl SensorParams {
    /// Bearings evenly spanning the field of view, symmetric about zero.
    pub fn bearings(&self) -> Vec<f64> {
        if self.num_rays <= 1 {
            return vec![0.0];
        }
        let n = self.num_rays;
        (0..n)
            .map(|k| {
                let b = -self.fov_deg / 2.0 + self.fov_deg * k as f64 / (n - 1) as f64;
                // pair bearings so the fan is exactly symmetric
                if k >= n / 2 {
                    -(-self.fov_deg / 2.0 + self.fov_deg * (n - 1 - k) as f64 / (n - 1) as f64)
                } else {
                    b
                }
            })
            .collect()
    }

    fn flip_label(&self, label: u8, rng: &mut impl Rng) -> u8 {
        let options: Vec<&Confusion> = self.confusion.iter().filter(|c| c.from == label && c.weight > 0.0).collect();
        let total: f64 = options.iter().map(|c| c.weight).sum();
        if options.is_empty() || total <= 0.0 {
            return label;
        }
        let mut u = rng.gen::<f64>() * total;
        for c in &options {
            if u < c.weight {
                return c.to;
            }
            u -= c.weight;
        }
        options.last().unwrap().to
    }
}

/// Casts the scan from `pose`. The RNG is consumed only when `noise_eps > 0`.
pub fn sense(scene: &GroundTruthScene, pose: &AgentPose, params: &SensorParams, rng: &mut impl Rng) -> Scan {
    let res = scene.resolution;
    let start = (pose.x / res, pose.y / res);
    let max_t = params.max_range_m / res;
    let blocked = scene.blocked();
    let mut hits: Vec<(Ray, Option<usize>)> = Vec::with_capacity(params.num_rays);
    for bearing in params.bearings() {
        let dir = heading_vec(pose.theta + bearing);
        let mut hit = None;
        trace_ray(start, dir, max_t, |r, c, t| {
            match blocked.get(r, c) {
                Some(false) => true,
                Some(true) => {
                    let idx = blocked.idx(r as usize, c as usize);
                    hit = Some((t, scene.label_at(idx), scene.instance_at(idx)));
                    false
                }
                None => {
                    hit = Some((t, 0, None));
                    false
                }
            }
        });
        let ray = match hit {
            Some((t, label, inst)) => (
                Ray {
                    bearing_deg: bearing,
                    hit_range: (t * res).max(1e-9),
                    hit_label: label,
                    is_obstacle: true,
                },
                inst,
            ),
            None => (
                Ray {
                    bearing_deg: bearing,
                    hit_range: params.max_range_m,
                    hit_label: 0,
                    is_obstacle: false,
                },
                None,
            ),
        };
        hits.push(ray);
    }

    if params.noise_eps > 0.0 {
        let mut seen: Vec<(usize, u8)> = Vec::new();
        for (ray, inst) in &hits {
            if let Some(k) = inst {
                if !seen.iter().any(|(s, _)| s == k) {
                    seen.push((*k, ray.hit_label));
                }
            }
        }
        let mut relabel: Vec<(usize, u8)> = Vec::new();
        for (k, label) in seen {
            if rng.gen::<f64>() < params.noise_eps {
                relabel.push((k, params.flip_label(label, rng)));
            }
        }
        for (ray, inst) in hits.iter_mut() {
            if let Some(k) = inst {
                if let Some((_, to)) = relabel.iter().find(|(j, _)| j == k) {
                    ray.hit_label = *to;
                }
            }
        }
    }

    Scan {
        rays: hits.into_iter().map(|(r, _)| r).collect(),
        fov_deg: params.fov_deg,
        max_range: params.max_range_m,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::world::scene::ObjectInstance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn boxed_room(n: usize) -> Grid<bool> {
        let mut occ = Grid::new(n, n, false);
        for i in 0..n {
            occ[(0, i)] = true;
            occ[(n - 1, i)] = true;
            occ[(i, 0)] = true;
            occ[(i, n - 1)] = true;
        }
        occ
    }

    #[test]
    fn bearings_are_symmetric_and_span_fov() {
        let p = SensorParams::default();
        let b = p.bearings();
        assert_eq!(b.len(), 158);
        assert_eq!(b[0], -39.5);
        assert_eq!(b[157], 39.5);
        for k in 0..b.len() {
            assert_eq!(b[k], -b[b.len() - 1 - k]);
        }
    }

    #[test]
    fn centre_ray_measures_wall_distance() {
        // 4 m room; agent at the centre facing +x sees the inner wall face at 2.0 m - 1 cell
        let n = 82;
        let scene = GroundTruthScene::new(0, 0.05, boxed_room(n), vec![]).unwrap();
        let pose = AgentPose::new(2.05, 2.05, 0.0);
        let params = SensorParams {
            noise_eps: 0.0,
            ..SensorParams::default()
        };
        let scan = sense(&scene, &pose, &params, &mut ChaCha8Rng::seed_from_u64(0));
        let mid = &scan.rays[78];
        // wall cell at column 81 starts at x = 4.05, i.e. 2.0 m ahead
        assert!((mid.hit_range - 2.0).abs() <= 0.025, "{}", mid.hit_range);
        assert!(mid.is_obstacle);
        assert_eq!(mid.hit_label, 0);
        for ray in &scan.rays {
            assert!(ray.hit_range > 0.0 && ray.hit_range <= 5.0);
        }
    }

    #[test]
    fn full_noise_with_forced_confusion_relabels_every_hit() {
        let n = 60;
        let mut occ = boxed_room(n);
        occ[(0, 0)] = true;
        let sofa_cells: Vec<u32> = (20..40).map(|r| (r * n + 50) as u32).collect();
        let scene = GroundTruthScene::new(
            0,
            0.05,
            occ,
            vec![ObjectInstance { category: SOFA, cells: sofa_cells }],
        )
        .unwrap();
        let pose = AgentPose::new(1.0, 1.5, 0.0);
        let params = SensorParams {
            noise_eps: 1.0,
            confusion: vec![Confusion { from: SOFA, to: CHAIR, weight: 1.0 }],
            ..SensorParams::default()
        };
        let clean = sense(&scene, &pose, &SensorParams { noise_eps: 0.0, ..params.clone() }, &mut ChaCha8Rng::seed_from_u64(1));
        let noisy = sense(&scene, &pose, &params, &mut ChaCha8Rng::seed_from_u64(1));
        let sofa_hits = clean.rays.iter().filter(|r| r.hit_label == SOFA).count();
        assert!(sofa_hits > 0);
        for (a, b) in clean.rays.iter().zip(&noisy.rays) {
            assert_eq!(a.hit_range, b.hit_range);
            if a.hit_label == SOFA {
                assert_eq!(b.hit_label, CHAIR);
            } else {
                assert_eq!(a.hit_label, b.hit_label);
            }
        }
    }
}
