use super::ElevationGrid;
use crate::error::{Error, Result};

/// The five surface covariates, in their fixed channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FieldKind {
    Surface,
    VelocityX,
    VelocityY,
    ThickeningRate,
    SurfaceMassBalance,
}

impl FieldKind {
    pub const ALL: [FieldKind; 5] = [
        FieldKind::Surface,
        FieldKind::VelocityX,
        FieldKind::VelocityY,
        FieldKind::ThickeningRate,
        FieldKind::SurfaceMassBalance,
    ];

    /// Short name, also used as the file stem in scenario directories.
    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Surface => "surface",
            FieldKind::VelocityX => "vx",
            FieldKind::VelocityY => "vy",
            FieldKind::ThickeningRate => "dh_dt",
            FieldKind::SurfaceMassBalance => "smb",
        }
    }
}

/// Co-registered input rasters: surface elevation, velocity components,
/// thickening rate and surface mass balance.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldStack {
    grids: [ElevationGrid; 5],
}

impl FieldStack {
    pub fn new(
        surface: ElevationGrid,
        vx: ElevationGrid,
        vy: ElevationGrid,
        dh_dt: ElevationGrid,
        smb: ElevationGrid,
    ) -> Result<Self> {
        let grids = [surface, vx, vy, dh_dt, smb];
        for (kind, g) in FieldKind::ALL.iter().zip(&grids).skip(1) {
            if !g.same_geometry(&grids[0]) {
                return Err(Error::Dimension(format!(
                    "field `{}` is {}x{} {:?}, surface is {}x{} {:?}",
                    kind.name(),
                    g.rows(),
                    g.cols(),
                    g.geo(),
                    grids[0].rows(),
                    grids[0].cols(),
                    grids[0].geo()
                )));
            }
        }
        Ok(Self { grids })
    }

    pub fn get(&self, kind: FieldKind) -> &ElevationGrid {
        &self.grids[kind as usize]
    }

    pub fn iter(&self) -> impl Iterator<Item = (FieldKind, &ElevationGrid)> {
        FieldKind::ALL.iter().copied().zip(self.grids.iter())
    }

    pub fn rows(&self) -> usize {
        self.grids[0].rows()
    }

    pub fn cols(&self) -> usize {
        self.grids[0].cols()
    }

    pub fn template(&self) -> &ElevationGrid {
        &self.grids[0]
    }
}
