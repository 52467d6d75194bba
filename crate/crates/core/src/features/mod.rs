//! Model input channels.
//!
//! Channel order is fixed: the five raw fields (surface, vx, vy, dh_dt,
//! smb), then `d/dx` and `d/dy` of each field in the same field order, then
//! the evaluated degree-2 trend surface of each field. Disabled families are
//! simply omitted, so the full stack has 20 channels and the raw-only stack 5.
//!
//! Every channel is z-scored with statistics computed over a caller-chosen
//! region (normally the training cells). A channel with zero spread over
//! that region is flagged constant and written as zeros.

mod gradient;
pub mod io;
mod trend;

use serde::{Deserialize, Serialize};

pub use gradient::compute_gradients;
pub use trend::{fit_trend_surface, scaled_coordinate, trend_basis, TrendSurface, TREND_TERMS};

use crate::error::{Error, Result};
use crate::raster::{ElevationGrid, FieldKind, FieldStack, GeoTransform};

/// Which derived feature families are included.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureToggles {
    pub gradients: bool,
    pub trends: bool,
}

impl Default for FeatureToggles {
    fn default() -> Self {
        Self {
            gradients: true,
            trends: true,
        }
    }
}

impl FeatureToggles {
    pub fn channel_count(&self) -> usize {
        5 + if self.gradients { 10 } else { 0 } + if self.trends { 5 } else { 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
    pub constant: bool,
}

/// Channel-major stack of normalized feature rasters.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    height: usize,
    width: usize,
    geo: GeoTransform,
    names: Vec<String>,
    stats: Vec<ChannelStats>,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl FeatureTensor {
    pub(crate) fn from_parts(
        height: usize,
        width: usize,
        geo: GeoTransform,
        names: Vec<String>,
        stats: Vec<ChannelStats>,
        values: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        let plane = height * width;
        if names.len() != stats.len() || values.len() != names.len() * plane || valid.len() != plane {
            return Err(Error::Dimension(format!(
                "feature tensor parts disagree: {} names, {} stats, {} values, {} validity flags for {}x{}",
                names.len(),
                stats.len(),
                values.len(),
                valid.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            geo,
            names,
            stats,
            values,
            valid,
        })
    }

    pub fn channels(&self) -> usize {
        self.names.len()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn geo(&self) -> GeoTransform {
        self.geo
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn stats(&self) -> &[ChannelStats] {
        &self.stats
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Pixel validity: true where every channel is defined.
    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.height * self.width;
        &self.values[c * plane..(c + 1) * plane]
    }

    /// Copies the `size x size` window at `(row0, col0)` into `out`,
    /// laid out channel-major.
    pub fn copy_patch(&self, row0: usize, col0: usize, size: usize, out: &mut [f64]) {
        let plane = self.height * self.width;
        let mut k = 0;
        for c in 0..self.channels() {
            let ch = &self.values[c * plane..(c + 1) * plane];
            for r in row0..row0 + size {
                let start = r * self.width + col0;
                out[k..k + size].copy_from_slice(&ch[start..start + size]);
                k += size;
            }
        }
    }
}

/// Un-normalized channels in canonical order, with pixel validity.
pub struct RawChannels {
    pub names: Vec<String>,
    pub planes: Vec<Vec<f64>>,
    pub valid: Vec<bool>,
    pub trends: Vec<TrendSurface>,
}

pub fn build_raw_channels(stack: &FieldStack, toggles: FeatureToggles) -> Result<RawChannels> {
    for (kind, grid) in stack.iter() {
        if grid.valid_count() == 0 {
            return Err(Error::EmptyField(kind.name().to_string()));
        }
    }
    let plane = stack.rows() * stack.cols();
    let mut names = Vec::with_capacity(toggles.channel_count());
    let mut grids: Vec<ElevationGrid> = Vec::with_capacity(toggles.channel_count());
    for (kind, grid) in stack.iter() {
        names.push(kind.name().to_string());
        grids.push(grid.clone());
    }
    if toggles.gradients {
        for (kind, grid) in stack.iter() {
            let (dx, dy) = compute_gradients(grid);
            names.push(format!("d{}_dx", kind.name()));
            grids.push(dx);
            names.push(format!("d{}_dy", kind.name()));
            grids.push(dy);
        }
    }
    let mut trends = Vec::new();
    if toggles.trends {
        for (kind, grid) in stack.iter() {
            let fit = fit_trend_surface(grid).map_err(|e| match e {
                Error::DegenerateFit(msg) => Error::DegenerateFit(format!("field `{}`: {msg}", kind.name())),
                other => other,
            })?;
            names.push(format!("trend_{}", kind.name()));
            grids.push(fit.evaluate_grid(grid));
            trends.push(fit);
        }
    }
    let mut valid = vec![true; plane];
    for g in &grids {
        for (v, ok) in valid.iter_mut().zip(g.validity()) {
            *v &= *ok;
        }
    }
    let planes = grids.into_iter().map(|g| g.values().to_vec()).collect();
    Ok(RawChannels {
        names,
        planes,
        valid,
        trends,
    })
}

/// Population mean and standard deviation over `region`-selected valid pixels.
pub fn channel_stats(plane: &[f64], valid: &[bool], region: Option<&[bool]>) -> Result<ChannelStats> {
    let selected = |i: usize| valid[i] && region.is_none_or(|r| r[i]);
    let mut n = 0usize;
    let mut sum = 0.0;
    for (i, v) in plane.iter().enumerate() {
        if selected(i) {
            n += 1;
            sum += v;
        }
    }
    if n == 0 {
        return Err(Error::InvalidArgument(
            "normalization region contains no valid pixels".into(),
        ));
    }
    let mean = sum / n as f64;
    let mut ss = 0.0;
    for (i, v) in plane.iter().enumerate() {
        if selected(i) {
            ss += (v - mean).powi(2);
        }
    }
    let std = (ss / n as f64).sqrt();
    let constant = !(std > 1e-12 * mean.abs().max(1.0));
    Ok(ChannelStats { mean, std, constant })
}

fn assemble(
    stack: &FieldStack,
    raw: RawChannels,
    stats: Vec<ChannelStats>,
) -> Result<FeatureTensor> {
    let plane = stack.rows() * stack.cols();
    let mut values = Vec::with_capacity(raw.planes.len() * plane);
    for (p, st) in raw.planes.iter().zip(&stats) {
        for (i, v) in p.iter().enumerate() {
            values.push(if !raw.valid[i] || st.constant {
                0.0
            } else {
                (v - st.mean) / st.std
            });
        }
    }
    FeatureTensor::from_parts(
        stack.rows(),
        stack.cols(),
        stack.template().geo(),
        raw.names,
        stats,
        values,
        raw.valid,
    )
}

/// Builds and normalizes the feature stack. Statistics come from the valid
/// pixels inside `region` (all valid pixels when `None`).
pub fn build_feature_tensor(
    stack: &FieldStack,
    toggles: FeatureToggles,
    region: Option<&[bool]>,
) -> Result<FeatureTensor> {
    if let Some(r) = region {
        if r.len() != stack.rows() * stack.cols() {
            return Err(Error::Dimension("normalization region size differs from grid".into()));
        }
    }
    let raw = build_raw_channels(stack, toggles)?;
    let stats = raw
        .planes
        .iter()
        .map(|p| channel_stats(p, &raw.valid, region))
        .collect::<Result<Vec<_>>>()?;
    assemble(stack, raw, stats)
}

/// Rebuilds features with previously computed normalization statistics,
/// as done at inference time.
pub fn build_feature_tensor_with_stats(
    stack: &FieldStack,
    toggles: FeatureToggles,
    stats: &[ChannelStats],
) -> Result<FeatureTensor> {
    if stats.len() != toggles.channel_count() {
        return Err(Error::Dimension(format!(
            "{} channel statistics supplied for {} channels",
            stats.len(),
            toggles.channel_count()
        )));
    }
    let raw = build_raw_channels(stack, toggles)?;
    assemble(stack, raw, stats.to_vec())
}

/// Canonical channel names for a toggle set.
pub fn channel_names(toggles: FeatureToggles) -> Vec<String> {
    let mut names: Vec<String> = FieldKind::ALL.iter().map(|k| k.name().to_string()).collect();
    if toggles.gradients {
        for k in FieldKind::ALL {
            names.push(format!("d{}_dx", k.name()));
            names.push(format!("d{}_dy", k.name()));
        }
    }
    if toggles.trends {
        names.extend(FieldKind::ALL.iter().map(|k| format!("trend_{}", k.name())));
    }
    names
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn stack(seed: u64, constant_smb: bool) -> FieldStack {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut mk = |scale: f64| {
            ElevationGrid::from_fn(12, 10, GeoTransform::unit(), |r, c| {
                scale * ((r as f64 * 0.3).sin() + (c as f64 * 0.2).cos()) + rng.random_range(-1.0..1.0)
            })
            .unwrap()
        };
        let s = mk(100.0);
        let vx = mk(10.0);
        let vy = mk(5.0);
        let dh = mk(0.5);
        let smb = if constant_smb {
            ElevationGrid::filled(12, 10, GeoTransform::unit(), 0.3).unwrap()
        } else {
            mk(0.2)
        };
        FieldStack::new(s, vx, vy, dh, smb).unwrap()
    }

    #[test]
    fn channel_counts_follow_toggles() {
        let st = stack(1, false);
        let full = build_feature_tensor(&st, FeatureToggles::default(), None).unwrap();
        assert_eq!(full.channels(), 20);
        assert_eq!(full.names(), channel_names(FeatureToggles::default()).as_slice());
        let raw = build_feature_tensor(
            &st,
            FeatureToggles {
                gradients: false,
                trends: false,
            },
            None,
        )
        .unwrap();
        assert_eq!(raw.channels(), 5);
    }

    #[test]
    fn constant_channel_is_flagged_and_zeroed() {
        let st = stack(2, true);
        let t = build_feature_tensor(&st, FeatureToggles::default(), None).unwrap();
        let idx = t.names().iter().position(|n| n == "smb").unwrap();
        assert!(t.stats()[idx].constant);
        assert!(t.channel(idx).iter().all(|v| *v == 0.0));
        // its gradients and trend are constant too
        for name in ["dsmb_dx", "dsmb_dy", "trend_smb"] {
            let i = t.names().iter().position(|n| n == name).unwrap();
            assert!(t.stats()[i].constant, "{name}");
        }
    }

    #[test]
    fn normalized_channels_are_standardized_over_region() {
        let st = stack(3, false);
        let region: Vec<bool> = (0..120).map(|i| i % 3 != 0).collect();
        let t = build_feature_tensor(&st, FeatureToggles::default(), Some(&region)).unwrap();
        for c in 0..t.channels() {
            if t.stats()[c].constant {
                continue;
            }
            let sel: Vec<f64> = t
                .channel(c)
                .iter()
                .zip(&region)
                .filter(|(_, r)| **r)
                .map(|(v, _)| *v)
                .collect();
            let n = sel.len() as f64;
            let mean = sel.iter().sum::<f64>() / n;
            let sd = (sel.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 1e-9, "channel {c} mean {mean}");
            assert!((sd - 1.0).abs() < 1e-9, "channel {c} sd {sd}");
        }
    }

    #[test]
    fn all_invalid_field_names_the_field() {
        let st = stack(4, false);
        let mut vy = st.get(FieldKind::VelocityY).clone();
        vy.validity_mut().iter_mut().for_each(|v| *v = false);
        let bad = FieldStack::new(
            st.get(FieldKind::Surface).clone(),
            st.get(FieldKind::VelocityX).clone(),
            vy,
            st.get(FieldKind::ThickeningRate).clone(),
            st.get(FieldKind::SurfaceMassBalance).clone(),
        )
        .unwrap();
        let err = build_feature_tensor(&bad, FeatureToggles::default(), None).unwrap_err();
        assert!(matches!(&err, Error::EmptyField(f) if f == "vy"), "{err}");
    }

    #[test]
    fn build_is_deterministic_and_stats_reusable() {
        let st = stack(5, false);
        let a = build_feature_tensor(&st, FeatureToggles::default(), None).unwrap();
        let b = build_feature_tensor(&st, FeatureToggles::default(), None).unwrap();
        assert_eq!(a, b);
        let c = build_feature_tensor_with_stats(&st, FeatureToggles::default(), a.stats()).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn patch_copy_is_channel_major() {
        let st = stack(6, false);
        let t = build_feature_tensor(&st, FeatureToggles::default(), None).unwrap();
        let mut buf = vec![0.0; t.channels() * 9];
        t.copy_patch(2, 4, 3, &mut buf);
        assert_eq!(buf[0], t.channel(0)[2 * 10 + 4]);
        assert_eq!(buf[9 + 4], t.channel(1)[3 * 10 + 5]);
    }
}
