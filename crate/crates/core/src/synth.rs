//! Seeded synthetic glacier scenarios with a known bed.
//!
//! The bed is a sum of Gaussian bumps with a carved trough. Ice flux is the
//! discrete gradient of a smooth potential plus the discrete curl of a
//! stream function, so its discrete divergence (the apparent mass balance)
//! is the potential's discrete Laplacian. Velocity is flux over thickness.
//! Radar observations are sampled along straight flight lines, and the
//! reference product blends a low-passed bed with line corrections that
//! decay away from the lines, plus a smooth error field.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::baselines::{idw_at, IdwConfig, SpatialIndex};
use crate::error::{Error, Result};
use crate::features::compute_gradients;
use crate::raster::io::{read_grid, write_grid};
use crate::raster::{
    rasterize_points, read_observations_csv, write_observations_csv, ElevationGrid, FieldKind,
    FieldStack, GeoTransform, ObservationPoint, ObservationSet, ReferenceGrid,
};

pub const MIN_SCENARIO_SIZE: usize = 64;
const THICKNESS_RETRIES: usize = 5;

/// Generation knobs. Lengths given as fractions scale with the grid's
/// shorter side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioParams {
    pub base_elevation: f64,
    pub bumps: usize,
    pub bump_amplitude: f64,
    pub bump_sigma_min_frac: f64,
    pub bump_sigma_max_frac: f64,
    pub trough_depth: f64,
    pub trough_width_frac: f64,
    pub mean_thickness: f64,
    pub thickness_variation: f64,
    pub min_thickness: f64,
    pub surface_smoothing_frac: f64,
    pub max_flux: f64,
    pub curl_share: f64,
    pub dh_dt_amplitude: f64,
    pub flight_lines: usize,
    pub noise_std: f64,
    pub reference_smoothing_frac: f64,
    pub reference_decay_frac: f64,
    pub reference_error_amplitude: f64,
    pub cell_size: f64,
}

impl Default for ScenarioParams {
    fn default() -> Self {
        Self {
            base_elevation: 0.0,
            bumps: 14,
            bump_amplitude: 350.0,
            bump_sigma_min_frac: 0.05,
            bump_sigma_max_frac: 0.16,
            trough_depth: 500.0,
            trough_width_frac: 0.04,
            mean_thickness: 1200.0,
            thickness_variation: 150.0,
            min_thickness: 50.0,
            surface_smoothing_frac: 0.02,
            max_flux: 1.5e5,
            curl_share: 0.5,
            dh_dt_amplitude: 2.0,
            flight_lines: 8,
            noise_std: 0.0,
            reference_smoothing_frac: 0.05,
            reference_decay_frac: 0.04,
            reference_error_amplitude: 25.0,
            cell_size: 1.0,
        }
    }
}

impl ScenarioParams {
    pub fn validate(&self) -> Result<()> {
        let fracs = [
            self.bump_sigma_min_frac,
            self.bump_sigma_max_frac,
            self.trough_width_frac,
            self.surface_smoothing_frac,
            self.reference_smoothing_frac,
            self.reference_decay_frac,
        ];
        if fracs.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
            return Err(Error::InvalidArgument("length fractions must be finite and >= 0".into()));
        }
        if self.bump_sigma_min_frac > self.bump_sigma_max_frac || self.bump_sigma_min_frac <= 0.0 {
            return Err(Error::InvalidArgument("need 0 < bump_sigma_min_frac <= bump_sigma_max_frac".into()));
        }
        if !(self.noise_std >= 0.0) || !(self.min_thickness > 0.0) || !(self.mean_thickness > 0.0) {
            return Err(Error::InvalidArgument(
                "noise_std >= 0, min_thickness > 0 and mean_thickness > 0 required".into(),
            ));
        }
        if !(self.cell_size > 0.0) || !(self.max_flux > 0.0) || !(0.0..=1.0).contains(&self.curl_share) {
            return Err(Error::InvalidArgument("cell_size > 0, max_flux > 0, curl_share in [0, 1] required".into()));
        }
        Ok(())
    }
}

/// Diagnostics recorded alongside the generated fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    /// Max |div(H v) - a| over cells at least two away from the border.
    pub mass_residual: f64,
    pub max_abs_mass_balance: f64,
    pub min_thickness: f64,
    pub thickness_offset: f64,
    /// Cells sampled by each flight line, and the count implied by the
    /// line's geometry.
    pub line_cells: Vec<usize>,
    pub line_expected_cells: Vec<f64>,
    pub observed_cells: usize,
    pub radar_fraction: f64,
    pub reference_r2: f64,
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub params: ScenarioParams,
    pub true_bed: ElevationGrid,
    pub thickness: ElevationGrid,
    pub mass_balance: ElevationGrid,
    pub stack: FieldStack,
    pub observations: ObservationSet,
    pub reference: ReferenceGrid,
    pub report: ScenarioReport,
}

/// Separable Gaussian blur with replicated edges; `sigma <= 0` copies.
pub fn gaussian_blur(values: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    if !(sigma > 0.0) {
        return values.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = taps.iter().sum();
    let taps: Vec<f64> = taps.iter().map(|t| t / norm).collect();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                s += t * values[r * cols + clamp(c as isize + k as isize - radius, cols)];
            }
            tmp[r * cols + c] = s;
        }
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                s += t * tmp[clamp(r as isize + k as isize - radius, rows) * cols + c];
            }
            out[r * cols + c] = s;
        }
    }
    out
}

/// Blurred white noise scaled to unit maximum magnitude.
fn smooth_noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    let white: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    let mut v = gaussian_blur(&white, rows, cols, sigma);
    let m = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if m > 0.0 {
        v.iter_mut().for_each(|x| *x /= m);
    }
    v
}

fn grid(rows: usize, cols: usize, geo: GeoTransform, v: Vec<f64>) -> Result<ElevationGrid> {
    ElevationGrid::new(rows, cols, geo, v)
}

/// Discrete divergence `d(fx)/dx + d(fy)/dy` with the feature gradient stencil.
pub fn discrete_divergence(fx: &ElevationGrid, fy: &ElevationGrid) -> ElevationGrid {
    let (dxx, _) = compute_gradients(fx);
    let (_, dyy) = compute_gradients(fy);
    let v = dxx.values().iter().zip(dyy.values()).map(|(a, b)| a + b).collect();
    fx.with_same_geometry(v, vec![true; fx.len()]).expect("same geometry")
}

/// Max |div(H v) - a| over cells two or more away from the border, where
/// every nested difference is central.
pub fn mass_conservation_residual(
    thickness: &ElevationGrid,
    vx: &ElevationGrid,
    vy: &ElevationGrid,
    mass_balance: &ElevationGrid,
) -> f64 {
    let hv = |v: &ElevationGrid| {
        let vals = thickness.values().iter().zip(v.values()).map(|(h, x)| h * x).collect();
        thickness.with_same_geometry(vals, vec![true; v.len()]).expect("same geometry")
    };
    let div = discrete_divergence(&hv(vx), &hv(vy));
    let (rows, cols) = (div.rows(), div.cols());
    let mut worst = 0.0f64;
    for r in 2..rows.saturating_sub(2) {
        for c in 2..cols.saturating_sub(2) {
            worst = worst.max((div.get(r, c) - mass_balance.get(r, c)).abs());
        }
    }
    worst
}

struct FlightLine {
    cells: Vec<(usize, usize)>,
    expected: f64,
}

/// Straight line through `(r0, c0)` at angle `theta` (radians from the
/// column axis), sampled once per step along its major axis.
fn rasterize_line(rows: usize, cols: usize, r0: f64, c0: f64, theta: f64) -> FlightLine {
    let (s, c) = theta.sin_cos();
    let mut cells = Vec::new();
    let expected;
    if c.abs() >= s.abs() {
        let slope = s / c;
        for col in 0..cols {
            let r = r0 + (col as f64 + 0.5 - c0) * slope;
            if r >= 0.0 && r < rows as f64 {
                cells.push((r.floor() as usize, col));
            }
        }
        expected = major_axis_span(rows as f64, cols as f64, r0, c0, slope);
    } else {
        let slope = c / s;
        for row in 0..rows {
            let cc = c0 + (row as f64 + 0.5 - r0) * slope;
            if cc >= 0.0 && cc < cols as f64 {
                cells.push((row, cc.floor() as usize));
            }
        }
        expected = major_axis_span(cols as f64, rows as f64, c0, r0, slope);
    }
    FlightLine { cells, expected }
}

/// Length of the major-axis interval `[0, major)` over which the minor
/// coordinate `m0 + (t - t0) * slope` stays inside `[0, minor)`.
fn major_axis_span(minor: f64, major: f64, m0: f64, t0: f64, slope: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, major);
    if slope == 0.0 {
        return if (0.0..minor).contains(&m0) { major } else { 0.0 };
    }
    let a = t0 + (0.0 - m0) / slope;
    let b = t0 + (minor - m0) / slope;
    lo = lo.max(a.min(b));
    hi = hi.min(a.max(b));
    (hi - lo).max(0.0)
}

fn r_squared(pred: &[f64], truth: &[f64]) -> f64 {
    let n = truth.len() as f64;
    let mean = truth.iter().sum::<f64>() / n;
    let ss_tot: f64 = truth.iter().map(|t| (t - mean).powi(2)).sum();
    let ss_res: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t).powi(2)).sum();
    1.0 - ss_res / ss_tot
}

pub fn generate_scenario(rows: usize, cols: usize, seed: u64, params: &ScenarioParams) -> Result<Scenario> {
    params.validate()?;
    if rows < MIN_SCENARIO_SIZE || cols < MIN_SCENARIO_SIZE {
        return Err(Error::InvalidArgument(format!(
            "scenarios need at least {MIN_SCENARIO_SIZE}x{MIN_SCENARIO_SIZE} cells, got {rows}x{cols}"
        )));
    }
    let p = params;
    let geo = GeoTransform::new(0.0, 0.0, p.cell_size, p.cell_size)?;
    let side = rows.min(cols) as f64;
    let n = rows * cols;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Bed.
    let mut bed = vec![p.base_elevation; n];
    for _ in 0..p.bumps {
        let (br, bc) = (rng.random_range(0.0..rows as f64), rng.random_range(0.0..cols as f64));
        let sigma = side * rng.random_range(p.bump_sigma_min_frac..=p.bump_sigma_max_frac);
        let amp = p.bump_amplitude * rng.random_range(-1.0..1.0);
        for r in 0..rows {
            for c in 0..cols {
                let d2 = (r as f64 - br).powi(2) + (c as f64 - bc).powi(2);
                bed[r * cols + c] += amp * (-d2 / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    {
        let (tr, tc) = (rng.random_range(0.3..0.7) * rows as f64, rng.random_range(0.3..0.7) * cols as f64);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let meander = rng.random_range(0.05..0.12) * side;
        let (s, c) = theta.sin_cos();
        let width = (p.trough_width_frac * side).max(1e-9);
        for r in 0..rows {
            for col in 0..cols {
                let (dr, dc) = (r as f64 - tr, col as f64 - tc);
                let along = dr * s + dc * c;
                let across = -dr * c + dc * s - meander * (along / side * 2.0 * std::f64::consts::PI).sin();
                bed[r * cols + col] -= p.trough_depth * (-across * across / (2.0 * width * width)).exp();
            }
        }
    }

    // Thickness and surface.
    let smooth_bed = gaussian_blur(&bed, rows, cols, p.surface_smoothing_frac * side);
    let thick_noise = smooth_noise(&mut rng, rows, cols, 0.12 * side);
    let raw_h: Vec<f64> = (0..n)
        .map(|k| p.mean_thickness + p.thickness_variation * thick_noise[k] + smooth_bed[k] - bed[k])
        .collect();
    let mut offset = 0.0;
    let mut tries = 0;
    let thickness = loop {
        let h: Vec<f64> = raw_h.iter().map(|v| v + offset).collect();
        let min = h.iter().copied().fold(f64::INFINITY, f64::min);
        if min >= p.min_thickness {
            break h;
        }
        tries += 1;
        if tries > THICKNESS_RETRIES {
            return Err(Error::InvalidArgument(format!(
                "could not reach positive thickness after {THICKNESS_RETRIES} adjustments (min {min:.1})"
            )));
        }
        offset += (p.min_thickness - min) * 1.5;
    };
    let surface: Vec<f64> = (0..n).map(|k| bed[k] + thickness[k]).collect();

    // Flux from potential and stream function, rescaled to `max_flux`.
    let phi = grid(rows, cols, geo, smooth_noise(&mut rng, rows, cols, 0.15 * side))?;
    let psi = grid(rows, cols, geo, smooth_noise(&mut rng, rows, cols, 0.15 * side))?;
    let (phi_x, phi_y) = compute_gradients(&phi);
    let (psi_x, psi_y) = compute_gradients(&psi);
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gp = max_abs(phi_x.values()).max(max_abs(phi_y.values())).max(1e-300);
    let gs = max_abs(psi_x.values()).max(max_abs(psi_y.values())).max(1e-300);
    let a_phi = p.max_flux * (1.0 - p.curl_share) / gp;
    let a_psi = p.max_flux * p.curl_share / gs;
    let qx: Vec<f64> = (0..n).map(|k| a_phi * phi_x.values()[k] + a_psi * psi_y.values()[k]).collect();
    let qy: Vec<f64> = (0..n).map(|k| a_phi * phi_y.values()[k] - a_psi * psi_x.values()[k]).collect();
    let (lap_x, _) = compute_gradients(&phi_x);
    let (_, lap_y) = compute_gradients(&phi_y);
    let mass_balance: Vec<f64> = (0..n).map(|k| a_phi * (lap_x.values()[k] + lap_y.values()[k])).collect();

    let vx: Vec<f64> = (0..n).map(|k| qx[k] / thickness[k]).collect();
    let vy: Vec<f64> = (0..n).map(|k| qy[k] / thickness[k]).collect();
    let dh_dt: Vec<f64> = smooth_noise(&mut rng, rows, cols, 0.1 * side)
        .into_iter()
        .map(|v| v * p.dh_dt_amplitude)
        .collect();
    let smb: Vec<f64> = (0..n).map(|k| mass_balance[k] + dh_dt[k]).collect();

    let true_bed = grid(rows, cols, geo, bed.clone())?;
    let thickness = grid(rows, cols, geo, thickness)?;
    let mass_balance = grid(rows, cols, geo, mass_balance)?;
    let stack = FieldStack::new(
        grid(rows, cols, geo, surface)?,
        grid(rows, cols, geo, vx)?,
        grid(rows, cols, geo, vy)?,
        grid(rows, cols, geo, dh_dt)?,
        grid(rows, cols, geo, smb)?,
    )?;
    let mass_residual = mass_conservation_residual(
        &thickness,
        stack.get(FieldKind::VelocityX),
        stack.get(FieldKind::VelocityY),
        &mass_balance,
    );

    // Flight lines, evenly spread in angle with jitter.
    let noise = if p.noise_std > 0.0 {
        Some(Normal::new(0.0, p.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let mut points = Vec::new();
    let mut line_cells = Vec::new();
    let mut line_expected_cells = Vec::new();
    for i in 0..p.flight_lines {
        let base = std::f64::consts::PI * i as f64 / p.flight_lines.max(1) as f64;
        let theta = base + rng.random_range(-0.15..0.15);
        let r0 = rng.random_range(0.2..0.8) * rows as f64;
        let c0 = rng.random_range(0.2..0.8) * cols as f64;
        let line = rasterize_line(rows, cols, r0, c0, theta);
        line_cells.push(line.cells.len());
        line_expected_cells.push(line.expected);
        for (r, c) in line.cells {
            let (x, y) = geo.cell_center(r, c);
            let mut v = bed[r * cols + c];
            if let Some(d) = &noise {
                v += d.sample(&mut rng);
            }
            points.push(ObservationPoint { x, y, bed: v });
        }
    }
    let (observations, _) = rasterize_points(&points, &true_bed);

    // Reference product.
    let ref_smooth = gaussian_blur(&bed, rows, cols, p.reference_smoothing_frac * side);
    let residual_points: Vec<ObservationPoint> = observations
        .cell_samples()
        .into_iter()
        .map(|pt| {
            let (r, c) = true_bed.cell_of(pt.x, pt.y).expect("sample inside grid");
            ObservationPoint { bed: pt.bed - ref_smooth[r * cols + c], ..pt }
        })
        .collect();
    let err = smooth_noise(&mut rng, rows, cols, 0.08 * side);
    let decay = (p.reference_decay_frac * side * p.cell_size).max(1e-12);
    let idw_cfg = IdwConfig { neighbors: 16, ..IdwConfig::default() };
    let index = SpatialIndex::new(&residual_points);
    let mut reference = vec![0.0; n];
    for r in 0..rows {
        for c in 0..cols {
            let k = r * cols + c;
            let (x, y) = geo.cell_center(r, c);
            let correction = if residual_points.is_empty() {
                0.0
            } else {
                let d = index.k_nearest(x, y, 1, f64::INFINITY)[0].distance;
                (-d / decay).exp() * idw_at(&index, x, y, &idw_cfg).unwrap_or(0.0)
            };
            reference[k] = ref_smooth[k] + correction + p.reference_error_amplitude * err[k];
        }
    }
    let reference_r2 = r_squared(&reference, &bed);
    let reference = ReferenceGrid::new(grid(rows, cols, geo, reference)?, &observations)?;

    let observed_cells = observations.observed_cells();
    let report = ScenarioReport {
        mass_residual,
        max_abs_mass_balance: max_abs(mass_balance.values()),
        min_thickness: thickness.values().iter().copied().fold(f64::INFINITY, f64::min),
        thickness_offset: offset,
        line_cells,
        line_expected_cells,
        observed_cells,
        radar_fraction: observed_cells as f64 / n as f64,
        reference_r2,
    };
    Ok(Scenario {
        seed,
        params: params.clone(),
        true_bed,
        thickness,
        mass_balance,
        stack,
        observations,
        reference,
        report,
    })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    rows: usize,
    cols: usize,
    seed: u64,
    params: ScenarioParams,
    report: ScenarioReport,
}

const BED_FILE: &str = "true_bed.btg";
const THICKNESS_FILE: &str = "thickness.btg";
const MASS_BALANCE_FILE: &str = "mass_balance.btg";
const REFERENCE_FILE: &str = "reference.btg";
const OBSERVATIONS_FILE: &str = "observations.csv";
const MANIFEST_FILE: &str = "scenario.json";

impl Scenario {
    /// Writes every grid as BTG1, the observations as CSV and a JSON manifest.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_grid(dir.join(BED_FILE), &self.true_bed)?;
        write_grid(dir.join(THICKNESS_FILE), &self.thickness)?;
        write_grid(dir.join(MASS_BALANCE_FILE), &self.mass_balance)?;
        write_grid(dir.join(REFERENCE_FILE), self.reference.grid())?;
        for (kind, g) in self.stack.iter() {
            write_grid(dir.join(format!("{}.btg", kind.name())), g)?;
        }
        write_observations_csv(dir.join(OBSERVATIONS_FILE), self.observations.points())?;
        let manifest = Manifest {
            rows: self.true_bed.rows(),
            cols: self.true_bed.cols(),
            seed: self.seed,
            params: self.params.clone(),
            report: self.report.clone(),
        };
        let path = dir.join(MANIFEST_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let true_bed = read_grid(dir.join(BED_FILE))?;
        if true_bed.rows() != manifest.rows || true_bed.cols() != manifest.cols {
            return Err(Error::Format(format!(
                "manifest says {}x{}, bed grid is {}x{}",
                manifest.rows,
                manifest.cols,
                true_bed.rows(),
                true_bed.cols()
            )));
        }
        let field = |k: FieldKind| read_grid(dir.join(format!("{}.btg", k.name())));
        let stack = FieldStack::new(
            field(FieldKind::Surface)?,
            field(FieldKind::VelocityX)?,
            field(FieldKind::VelocityY)?,
            field(FieldKind::ThickeningRate)?,
            field(FieldKind::SurfaceMassBalance)?,
        )?;
        let points = read_observations_csv(dir.join(OBSERVATIONS_FILE))?;
        let (observations, _) = rasterize_points(&points, &true_bed);
        let reference = ReferenceGrid::new(read_grid(dir.join(REFERENCE_FILE))?, &observations)?;
        Ok(Self {
            seed: manifest.seed,
            params: manifest.params,
            thickness: read_grid(dir.join(THICKNESS_FILE))?,
            mass_balance: read_grid(dir.join(MASS_BALANCE_FILE))?,
            true_bed,
            stack,
            observations,
            reference,
            report: manifest.report,
        })
    }
}
