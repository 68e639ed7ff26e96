mod common;

use std::time::Instant;

use common::gradient_check;
use objnav::grid::Grid;
use objnav::mapping::{ExplorationMask, SemanticMap, CH_EXPLORED, NUM_CHANNELS};
use objnav::predictor::{make_target, FeatureSpec, InputMode, PredictorModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn gradient_matches_central_differences() {
    let t = Instant::now();
    let worst = gradient_check(100, 5);
    assert!(worst < 1e-4, "worst relative error {worst:e}");
    assert!(t.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn target_and_inference_vanish_on_explored_cells() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut model = PredictorModel::zeros(FeatureSpec::new(InputMode::Global), NUM_CHANNELS, 6);
    for t in model.theta.iter_mut() {
        *t = rng.gen_range(-1.0..1.0);
    }
    for _ in 0..20 {
        let data: Vec<f32> = (0..NUM_CHANNELS * 100).map(|_| rng.gen_bool(0.4) as u8 as f32).collect();
        let m = SemanticMap::from_data(NUM_CHANNELS, 10, 10, 0.2, data).unwrap();
        let e = ExplorationMask(Grid::from_vec(10, 10, m.channel(CH_EXPLORED).iter().map(|&v| v >= 0.5).collect()));
        let y = make_target(&m, &e, 6).unwrap();
        for c in 0..6 {
            for i in 0..100 {
                if e.0[i] {
                    assert_eq!(y.channel(c)[i], 0);
                }
            }
        }
        for target in 1..=6u8 {
            let z = model.infer(&m, target, &e).unwrap();
            for i in 0..100 {
                if e.0[i] {
                    assert_eq!(z.z[i], 0.0);
                } else {
                    assert!(z.z[i] > 0.0 && z.z[i] < 1.0);
                }
            }
        }
    }
}
