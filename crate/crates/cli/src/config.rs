use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use minco::flatness::{VehicleShape, GRAVITY};
use minco::geometry::{Corridor, CorridorData};
use minco::solver::{Margins, PenaltyWeights, ProblemSpec, Se3Limits, TimeRegularization};

use crate::CliError;

/// A corridor given inline or as a path relative to the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorridorSource {
    Path(PathBuf),
    Inline(CorridorData),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleConfig {
    pub radius: f64,
    pub height: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub omega_max: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        let l = Se3Limits::narrow_gap();
        Self { radius: l.shape.radius, height: l.shape.height, f_min: l.f_min, f_max: l.f_max, omega_max: l.omega_max }
    }
}

/// Everything an optimization run needs. Unset fields fall back to the
/// pipeline defaults; command-line flags override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub corridor: CorridorSource,
    /// Defaults to an interior point of the first element.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<[f64; 3]>,
    /// Defaults to an interior point of the last element.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub goal: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pieces: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_rho: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_time: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resolution: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<PenaltyWeights>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margins: Option<Margins>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<VehicleConfig>,
    /// Result JSON path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Sample CSV path.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<PathBuf>,
}

impl RunConfig {
    pub fn inline(corridor: &Corridor) -> Self {
        Self {
            corridor: CorridorSource::Inline(corridor.to_data()),
            start: None,
            goal: None,
            pieces: None,
            k_rho: None,
            fixed_time: None,
            v_max: None,
            a_max: None,
            resolution: None,
            weights: None,
            margins: None,
            vehicle: None,
            out: None,
            samples: None,
        }
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = crate::read(path)?;
        let mut cfg: RunConfig = crate::parse(&text)?;
        if let CorridorSource::Path(p) = &cfg.corridor {
            if p.is_relative() {
                if let Some(dir) = path.parent() {
                    cfg.corridor = CorridorSource::Path(dir.join(p));
                }
            }
        }
        Ok(cfg)
    }

    pub fn corridor(&self) -> Result<Corridor, CliError> {
        let data = match &self.corridor {
            CorridorSource::Inline(d) => d.clone(),
            CorridorSource::Path(p) => crate::parse(&crate::read(p)?)?,
        };
        Ok(Corridor::try_from(data)?)
    }

    pub fn problem(&self, se3: bool) -> Result<ProblemSpec, CliError> {
        let corridor = self.corridor()?;
        let start = match self.start {
            Some(p) => p,
            None => interior(&corridor, 0)?,
        };
        let goal = match self.goal {
            Some(p) => p,
            None => interior(&corridor, corridor.len() - 1)?,
        };
        let mut spec = if se3 {
            ProblemSpec::se3(corridor, &start, &goal)
        } else {
            ProblemSpec::corridor(corridor, &start, &goal)
        };
        if let Some(k) = self.pieces {
            spec.pieces_per_primitive = k;
        }
        if let Some(k_rho) = self.k_rho {
            spec.time = TimeRegularization::Linear { k_rho };
        }
        if let Some(total) = self.fixed_time {
            spec.time = TimeRegularization::FixedTotal { total };
        }
        if let Some(v) = self.v_max {
            spec.v_max = v;
        }
        if let Some(a) = self.a_max {
            spec.a_max = a;
        }
        if let Some(r) = self.resolution {
            spec.resolution = r;
        }
        if let Some(w) = self.weights {
            spec.weights = w;
        }
        if let Some(m) = self.margins {
            spec.margins = m;
        }
        if se3 {
            let v = self.vehicle.unwrap_or_default();
            spec.se3 = Some(Se3Limits {
                shape: VehicleShape::new(v.radius, v.height)?,
                f_min: v.f_min,
                f_max: v.f_max,
                omega_max: v.omega_max,
            });
            spec.gravity = GRAVITY;
        }
        Ok(spec)
    }
}

fn interior(c: &Corridor, i: usize) -> Result<[f64; 3], CliError> {
    let p = match c {
        Corridor::Polytopes(p) => p[i].chebyshev_center()?.0,
        Corridor::Balls(b) => b[i].center_vec(),
    };
    if p.len() != 3 {
        return Err(CliError::Input("corridor must be three-dimensional".into()));
    }
    Ok([p[0], p[1], p[2]])
}
