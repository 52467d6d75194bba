use bedrecon::baselines::{idw_at, idw_predict, IdwConfig, SpatialIndex};
use bedrecon::features::{build_feature_tensor, FeatureToggles};
use bedrecon::inference::{predict_full_grid, PatchPredictor, StitchAccumulator};
use bedrecon::metrics::{basic_metrics, evaluate};
use bedrecon::nn::Tensor4;
use bedrecon::patches::extract_patches;
use bedrecon::raster::{rasterize_points, ElevationGrid, GeoTransform, ObservationPoint};
use bedrecon::synth::{generate_scenario, ScenarioParams};
use bedrecon::Result;
use proptest::prelude::*;

fn grid_pair() -> impl Strategy<Value = (ElevationGrid, ElevationGrid)> {
    (11usize..24, 11usize..24).prop_flat_map(|(r, c)| {
        (
            prop::collection::vec(-1e3f64..1e3, r * c),
            prop::collection::vec(-1e3f64..1e3, r * c),
        )
            .prop_map(move |(a, b)| {
                (
                    ElevationGrid::new(r, c, GeoTransform::unit(), a).unwrap(),
                    ElevationGrid::new(r, c, GeoTransform::unit(), b).unwrap(),
                )
            })
    })
}

fn points() -> impl Strategy<Value = Vec<ObservationPoint>> {
    prop::collection::vec((0.0f64..40.0, 0.0f64..40.0, -500.0f64..500.0), 1..40)
        .prop_map(|v| v.into_iter().map(|(x, y, bed)| ObservationPoint { x, y, bed }).collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rmse_dominates_mae((p, r) in grid_pair()) {
        let m = basic_metrics(&p, &r, None).unwrap();
        prop_assert!(m.rmse + 1e-12 >= m.mae);
        prop_assert!(m.mae >= 0.0);
    }

    #[test]
    fn metrics_are_shift_invariant((p, r) in grid_pair(), c in -1e4f64..1e4) {
        let shift = |g: &ElevationGrid| {
            ElevationGrid::new(g.rows(), g.cols(), g.geo(), g.values().iter().map(|v| v + c).collect()).unwrap()
        };
        let a = evaluate(&p, &r, None).unwrap();
        let b = evaluate(&shift(&p), &shift(&r), None).unwrap();
        prop_assert!((a.mae - b.mae).abs() <= 1e-9 * (1.0 + a.mae));
        prop_assert!((a.rmse - b.rmse).abs() <= 1e-9 * (1.0 + a.rmse));
        prop_assert!((a.r2 - b.r2).abs() <= 1e-9);
        prop_assert!((a.psnr - b.psnr).abs() <= 1e-9 * a.psnr.abs());
        prop_assert!((a.tri_pred - b.tri_pred).abs() <= 1e-9 * (1.0 + a.tri_pred));
    }

    #[test]
    fn idw_is_a_convex_combination(pts in points(), x in 0.0f64..40.0, y in 0.0f64..40.0, k in 1usize..12) {
        let index = SpatialIndex::new(&pts);
        let cfg = IdwConfig { neighbors: k, ..IdwConfig::default() };
        let v = idw_at(&index, x, y, &cfg).unwrap();
        let lo = pts.iter().map(|p| p.bed).fold(f64::INFINITY, f64::min);
        let hi = pts.iter().map(|p| p.bed).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
    }

    #[test]
    fn idw_ignores_input_order(pts in points(), x in 0.0f64..40.0, y in 0.0f64..40.0, k in 1usize..12, rot in 0usize..40) {
        let cfg = IdwConfig { neighbors: k, ..IdwConfig::default() };
        let a = idw_at(&SpatialIndex::new(&pts), x, y, &cfg).unwrap();
        let mut shuffled = pts.clone();
        shuffled.reverse();
        let n = shuffled.len();
        shuffled.rotate_left(rot % n);
        let b = idw_at(&SpatialIndex::new(&shuffled), x, y, &cfg).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{} vs {}", a, b);
    }
}

#[test]
fn idw_grid_reproduces_observed_cells() {
    let template = ElevationGrid::filled(20, 30, GeoTransform::unit(), 0.0).unwrap();
    let pts: Vec<ObservationPoint> = (0..25)
        .map(|i| ObservationPoint {
            x: (i * 7 % 30) as f64 + 0.5,
            y: (i * 3 % 20) as f64 + 0.5,
            bed: i as f64 * 11.0 - 40.0,
        })
        .collect();
    let (obs, _) = rasterize_points(&pts, &template);
    let g = idw_predict(&obs, None, &IdwConfig::default()).unwrap();
    for k in 0..obs.grid().len() {
        if obs.mask()[k] {
            assert_eq!(g.values()[k], obs.grid().values()[k]);
        }
    }
    assert_eq!(g.valid_count(), g.len());
}

struct Constant(f64);

impl PatchPredictor for Constant {
    fn predict_batch(&mut self, input: &Tensor4) -> Result<Tensor4> {
        Tensor4::from_vec(input.n, 1, input.h, input.w, vec![self.0; input.n * input.h * input.w])
    }
}

/// Predicts the first input channel unchanged.
struct Passthrough;

impl PatchPredictor for Passthrough {
    fn predict_batch(&mut self, input: &Tensor4) -> Result<Tensor4> {
        let plane = input.h * input.w;
        let mut out = Vec::with_capacity(input.n * plane);
        for n in 0..input.n {
            let start = n * input.c * plane;
            out.extend_from_slice(&input.data[start..start + plane]);
        }
        Tensor4::from_vec(input.n, 1, input.h, input.w, out)
    }
}

#[test]
fn stitching_preserves_constant_and_local_predictions() {
    let s = generate_scenario(64, 64, 4, &ScenarioParams::default()).unwrap();
    let features = build_feature_tensor(&s.stack, FeatureToggles::default(), None).unwrap();
    let g = predict_full_grid(&mut Constant(731.25), &features, 16, 8, 5).unwrap();
    assert!(g.values().iter().all(|v| *v == 731.25));

    // Overlapping and disjoint tilings both return each cell's own value.
    for stride in [4, 8, 16] {
        let g = predict_full_grid(&mut Passthrough, &features, 16, stride, 3).unwrap();
        for (a, b) in g.values().iter().zip(features.channel(0)) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }
}

#[test]
fn disjoint_tiling_covers_each_cell_once() {
    let mut acc = StitchAccumulator::new(48, 64);
    for p in extract_patches(48, 64, 16, 16).unwrap() {
        acc.add(p.row0, p.col0, p.size, &vec![1.0; 256]);
    }
    assert!(acc.counts().iter().all(|c| *c == 1));
    assert!(acc.finish().unwrap().iter().all(|v| *v == 1.0));
}
