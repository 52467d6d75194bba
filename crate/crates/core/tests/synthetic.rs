use bedrecon::raster::{ElevationGrid, FieldKind};
use bedrecon::synth::{generate_scenario, mass_conservation_residual, Scenario, ScenarioParams};

fn scenario(seed: u64, params: &ScenarioParams) -> Scenario {
    generate_scenario(64, 80, seed, params).unwrap()
}

fn bits(g: &ElevationGrid) -> Vec<u64> {
    g.values().iter().map(|v| v.to_bits()).collect()
}

#[test]
fn same_seed_gives_identical_scenarios() {
    let p = ScenarioParams::default();
    let a = scenario(7, &p);
    let b = scenario(7, &p);
    assert_eq!(bits(&a.true_bed), bits(&b.true_bed));
    assert_eq!(bits(a.reference.grid()), bits(b.reference.grid()));
    for ((ka, ga), (_, gb)) in a.stack.iter().zip(b.stack.iter()) {
        assert_eq!(bits(ga), bits(gb), "{}", ka.name());
    }
    assert_eq!(a.observations.points(), b.observations.points());
    assert_eq!(a.report, b.report);
    let c = scenario(8, &p);
    assert_ne!(bits(&a.true_bed), bits(&c.true_bed));
}

#[test]
fn noiseless_observations_equal_the_bed() {
    let s = scenario(3, &ScenarioParams::default());
    assert!(!s.observations.points().is_empty());
    for p in s.observations.points() {
        let (r, c) = s.true_bed.cell_of(p.x, p.y).unwrap();
        assert_eq!(p.bed, s.true_bed.get(r, c));
    }
}

#[test]
fn noisy_observations_scatter_around_the_bed() {
    let p = ScenarioParams {
        noise_std: 10.0,
        ..ScenarioParams::default()
    };
    let s = scenario(3, &p);
    let errs: Vec<f64> = s
        .observations
        .points()
        .iter()
        .map(|o| {
            let (r, c) = s.true_bed.cell_of(o.x, o.y).unwrap();
            o.bed - s.true_bed.get(r, c)
        })
        .collect();
    let n = errs.len() as f64;
    let mean = errs.iter().sum::<f64>() / n;
    let std = (errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n).sqrt();
    assert!(mean.abs() < 2.0, "mean {mean}");
    assert!((std - 10.0).abs() < 2.0, "std {std}");
}

#[test]
fn mass_conservation_holds_in_the_interior() {
    for seed in [0, 1, 42] {
        let s = scenario(seed, &ScenarioParams::default());
        let surface = s.stack.get(FieldKind::Surface);
        let h: Vec<f64> = surface.values().iter().zip(s.true_bed.values()).map(|(a, b)| a - b).collect();
        let h = s.true_bed.with_same_geometry(h, vec![true; s.true_bed.len()]).unwrap();
        assert!(h.values().iter().all(|v| *v > 0.0));
        let resid = mass_conservation_residual(
            &h,
            s.stack.get(FieldKind::VelocityX),
            s.stack.get(FieldKind::VelocityY),
            &s.mass_balance,
        );
        let scale = s.mass_balance.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(scale > 0.0);
        assert!(resid <= 1e-6 * scale, "seed {seed}: residual {resid} vs {scale}");
    }
}

#[test]
fn smb_and_thickening_split_the_mass_balance() {
    let s = scenario(5, &ScenarioParams::default());
    let smb = s.stack.get(FieldKind::SurfaceMassBalance).values();
    let dh = s.stack.get(FieldKind::ThickeningRate).values();
    for ((a, b), m) in smb.iter().zip(dh).zip(s.mass_balance.values()) {
        assert!((a - b - m).abs() <= 1e-9 * (1.0 + m.abs()));
    }
}

#[test]
fn line_counts_match_geometry() {
    for lines in [1, 4, 8, 12] {
        let p = ScenarioParams {
            flight_lines: lines,
            ..ScenarioParams::default()
        };
        let s = scenario(11, &p);
        assert_eq!(s.report.line_cells.len(), lines);
        for (got, want) in s.report.line_cells.iter().zip(&s.report.line_expected_cells) {
            assert!((*got as f64 - want).abs() <= 1.0, "{got} vs {want}");
        }
        assert_eq!(s.report.observed_cells, s.observations.observed_cells());
    }
}

#[test]
fn reference_tracks_but_never_copies_the_bed() {
    for seed in [0, 9, 42] {
        let s = scenario(seed, &ScenarioParams::default());
        assert!(s.report.reference_r2 >= 0.5, "r2 {}", s.report.reference_r2);
        let equal = s
            .reference
            .grid()
            .values()
            .iter()
            .zip(s.true_bed.values())
            .filter(|(a, b)| a == b)
            .count();
        assert_eq!(equal, 0);
    }
}

#[test]
fn save_and_load_round_trip() {
    let s = scenario(21, &ScenarioParams::default());
    let dir = tempfile::tempdir().unwrap();
    s.save(dir.path()).unwrap();
    let back = Scenario::load(dir.path()).unwrap();
    assert_eq!(bits(&s.true_bed), bits(&back.true_bed));
    assert_eq!(bits(&s.mass_balance), bits(&back.mass_balance));
    assert_eq!(bits(s.reference.grid()), bits(back.reference.grid()));
    assert_eq!(s.reference.radar_mask(), back.reference.radar_mask());
    assert_eq!(s.observations.points(), back.observations.points());
    assert_eq!(s.params, back.params);
    assert_eq!(s.report, back.report);
}
