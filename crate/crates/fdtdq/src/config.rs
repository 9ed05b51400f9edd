//! JSON run configuration.
//!
//! Physical quantities are either plain numbers in SI units or unit-tagged
//! objects such as `{"value": 30, "unit": "nm"}`. Every geometry field is
//! optional and falls back to the scenario's reference value.
//!
//! ```json
//! {
//!   "scenario": "infinite_well",
//!   "dt_factor": 0.999,
//!   "diag_stride": 1,
//!   "geometry": { "side": {"value": 30, "unit": "nm"}, "cells": 20 }
//! }
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constants::unit_scale;
use crate::error::{Error, Result};
use crate::scenarios::tunneling::height_from_cfl;
use crate::scenarios::{GaussianBarrier, InfiniteWell, Tunneling};

/// A number in SI units, or a `{value, unit}` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Quantity {
    Si(f64),
    Tagged { value: f64, unit: Unit },
}

/// A unit name accepted by [`unit_scale`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Unit {
    name: String,
    scale: f64,
}

impl TryFrom<String> for Unit {
    type Error = Error;

    fn try_from(name: String) -> Result<Self> {
        let scale = unit_scale(&name)?;
        Ok(Unit { name, scale })
    }
}

impl From<Unit> for String {
    fn from(u: Unit) -> String {
        u.name
    }
}

impl Quantity {
    pub fn si(&self) -> f64 {
        match self {
            Quantity::Si(v) => *v,
            Quantity::Tagged { value, unit } => value * unit.scale,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    InfiniteWell,
    Barrier,
    Tunneling,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::InfiniteWell => "infinite_well",
            ScenarioKind::Barrier => "barrier",
            ScenarioKind::Tunneling => "tunneling",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    // Infinite well.
    pub side: Option<Quantity>,
    pub cells: Option<usize>,
    // Barrier.
    pub x0: Option<Quantity>,
    pub wavelength: Option<Quantity>,
    pub step_at: Option<Quantity>,
    pub height: Option<Quantity>,
    pub length: Option<Quantity>,
    pub width: Option<Quantity>,
    pub spacing: Option<Quantity>,
    // Tunneling.
    pub well_cells: Option<usize>,
    pub barrier_cells: Option<usize>,
    pub cells_y: Option<usize>,
    pub cells_z: Option<usize>,
    pub temperature: Option<Quantity>,
    /// Barrier-region CFL limit from which the barrier height is derived
    /// when `height` is absent.
    pub barrier_cfl: Option<Quantity>,
    pub mass: Option<Quantity>,
    /// Physical duration; the default step count is `horizon / Δt`.
    pub horizon: Option<Quantity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioKind,
    #[serde(default = "default_dt_factor")]
    pub dt_factor: f64,
    /// Number of steps; derived from the scenario horizon when absent.
    pub n_t: Option<u64>,
    #[serde(default = "default_stride")]
    pub diag_stride: u64,
    /// Steps between checkpoints; none when absent or zero.
    pub checkpoint_interval: Option<u64>,
    /// Divergence guard on `max ‖ψ‖∞ / initial`.
    #[serde(default = "default_guard")]
    pub guard_factor: f64,
    #[serde(default)]
    pub geometry: Geometry,
}

fn default_dt_factor() -> f64 {
    0.999
}

fn default_stride() -> u64 {
    1
}

fn default_guard() -> f64 {
    crate::stepper::DEFAULT_GUARD_FACTOR
}

/// Reference step count of the reflection run.
pub const BARRIER_STEPS: u64 = 20_000;

impl RunConfig {
    pub fn new(scenario: ScenarioKind) -> Self {
        Self {
            scenario,
            dt_factor: default_dt_factor(),
            n_t: None,
            diag_stride: default_stride(),
            checkpoint_interval: None,
            guard_factor: default_guard(),
            geometry: Geometry::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.diag_stride == 0 {
            return Err(Error::Config("diag_stride must be at least 1".into()));
        }
        if !(self.dt_factor > 0.0 && self.dt_factor.is_finite()) {
            return Err(Error::Config(format!("dt_factor must be positive, got {}", self.dt_factor)));
        }
        if !(self.guard_factor > 1.0) {
            return Err(Error::Config(format!("guard_factor must exceed 1, got {}", self.guard_factor)));
        }
        let g = &self.geometry;
        let used: &[(&str, bool)] = &[
            ("side", g.side.is_some()),
            ("cells", g.cells.is_some()),
            ("x0", g.x0.is_some()),
            ("wavelength", g.wavelength.is_some()),
            ("step_at", g.step_at.is_some()),
            ("length", g.length.is_some()),
            ("width", g.width.is_some()),
            ("well_cells", g.well_cells.is_some()),
            ("barrier_cells", g.barrier_cells.is_some()),
            ("cells_y", g.cells_y.is_some()),
            ("cells_z", g.cells_z.is_some()),
            ("temperature", g.temperature.is_some()),
            ("barrier_cfl", g.barrier_cfl.is_some()),
            ("height", g.height.is_some()),
            ("spacing", g.spacing.is_some()),
            ("horizon", g.horizon.is_some()),
        ];
        let allowed: &[&str] = match self.scenario {
            ScenarioKind::InfiniteWell => &["side", "cells", "horizon"],
            ScenarioKind::Barrier => &["x0", "wavelength", "step_at", "length", "width", "height", "spacing"],
            ScenarioKind::Tunneling => &[
                "well_cells",
                "barrier_cells",
                "cells_y",
                "cells_z",
                "temperature",
                "barrier_cfl",
                "height",
                "spacing",
                "horizon",
            ],
        };
        for (name, set) in used {
            if *set && !allowed.contains(name) {
                return Err(Error::Config(format!(
                    "geometry field '{name}' does not apply to {}",
                    self.scenario.name()
                )));
            }
        }
        Ok(())
    }

    pub fn well(&self) -> InfiniteWell {
        let g = &self.geometry;
        let mut w = InfiniteWell::default();
        if let Some(q) = &g.side {
            w.side = q.si();
        }
        if let Some(n) = g.cells {
            w.cells = n;
        }
        if let Some(m) = &g.mass {
            w.constants.mass = m.si();
        }
        if let Some(h) = &g.horizon {
            w.horizon = h.si();
        }
        w
    }

    pub fn barrier(&self) -> GaussianBarrier {
        let g = &self.geometry;
        let mut b = GaussianBarrier::default();
        let set = |dst: &mut f64, q: &Option<Quantity>| {
            if let Some(q) = q {
                *dst = q.si();
            }
        };
        set(&mut b.x0, &g.x0);
        set(&mut b.wavelength, &g.wavelength);
        set(&mut b.step_at, &g.step_at);
        set(&mut b.height, &g.height);
        set(&mut b.length, &g.length);
        set(&mut b.width, &g.width);
        set(&mut b.spacing, &g.spacing);
        set(&mut b.constants.mass, &g.mass);
        b
    }

    pub fn tunneling(&self) -> Tunneling {
        let g = &self.geometry;
        let mut t = Tunneling::default();
        if let Some(q) = &g.spacing {
            t.spacing = q.si();
        }
        if let Some(m) = &g.mass {
            t.constants.mass = m.si();
        }
        t.well_cells = g.well_cells.unwrap_or(t.well_cells);
        t.barrier_cells = g.barrier_cells.unwrap_or(t.barrier_cells);
        t.cells_y = g.cells_y.unwrap_or(t.cells_y);
        t.cells_z = g.cells_z.unwrap_or(t.cells_z);
        if let Some(q) = &g.temperature {
            t.temperature = q.si();
        }
        if let Some(h) = &g.horizon {
            t.horizon = h.si();
        }
        t.height = match (&g.height, &g.barrier_cfl) {
            (Some(h), _) => h.si(),
            (None, Some(c)) => height_from_cfl(c.si(), [t.spacing; 3], &t.constants),
            (None, None) => height_from_cfl(crate::scenarios::tunneling::BARRIER_CFL, [t.spacing; 3], &t.constants),
        };
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constants::{ELECTRON_VOLT, NANOMETER};

    #[test]
    fn unit_tagged_and_plain_numbers() {
        let cfg = RunConfig::from_json(
            r#"{"scenario": "infinite_well", "geometry": {"side": {"value": 20, "unit": "nm"}, "cells": 12}}"#,
        )
        .unwrap();
        assert_eq!(cfg.well().side, 20.0 * NANOMETER);
        assert_eq!(cfg.well().cells, 12);
        assert_eq!(cfg.diag_stride, 1);
        let cfg = RunConfig::from_json(r#"{"scenario": "barrier", "geometry": {"height": 2.4e-22}}"#).unwrap();
        assert_eq!(cfg.barrier().height, 2.4e-22);
        let cfg =
            RunConfig::from_json(r#"{"scenario": "tunneling", "geometry": {"height": {"value": 0.5, "unit": "eV"}}}"#)
                .unwrap();
        assert!((cfg.tunneling().height - 0.5 * ELECTRON_VOLT).abs() < 1e-30);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            r#"{"scenario": "infinite_well", "diag_stride": 0}"#,
            r#"{"scenario": "wormhole"}"#,
            r#"{"scenario": "barrier", "geometry": {"x0": {"value": 1, "unit": "furlong"}}}"#,
            r#"{"scenario": "barrier", "geometry": {"cells": 3}}"#,
            r#"{"scenario": "barrier", "colour": 3}"#,
            r#"{"scenario": "barrier", "geometry": {"horizon": 1e-12}}"#,
        ] {
            assert!(matches!(RunConfig::from_json(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn defaults_reproduce_reference_scenarios() {
        assert_eq!(RunConfig::new(ScenarioKind::InfiniteWell).well(), InfiniteWell::default());
        assert_eq!(RunConfig::new(ScenarioKind::Barrier).barrier(), GaussianBarrier::default());
        assert_eq!(RunConfig::new(ScenarioKind::Tunneling).tunneling(), Tunneling::default());
    }
}
