//! TOML experiment configuration.
//!
//! ```toml
//! name = "merge"
//! v_max = 1.0
//! t_final = 3000.0
//! output_dir = "out/merge"
//! mode = "compare"            # run-micro | run-macro | compare | converge
//! snapshots = [1000.0]        # optional intermediate profile times
//!
//! [network]
//! roads = [{ id = 1, length = 4000.0 }, { id = 2, length = 4000.0 }, { id = 3, length = 4000.0 }]
//! junctions = [{ id = 0, inc = [1, 2], out = [3] }]
//!
//! [[turning]]                 # only needed where a junction has several exits
//! from = 1
//! to = 3
//! p = 0.8
//!
//! [[initial]]
//! road = 1
//! density = 0.5               # whole road, or
//! # segments = [{ start = 0.0, end = 2000.0, density = 0.8 }]
//!
//! [micro]
//! ell_n = 1.0                 # or vehicles = 3200
//! dt = 0.2
//! seed = 1
//!
//! [macro]
//! cells_per_road = 100        # or dx = 40.0
//! dt = 20.0
//!
//! [convergence]
//! seeds = 16
//! ladder = [{ ell_n = 3.0, dt = 3.0 }, { ell_n = 1.0, dt = 0.2 }]
//! ```
//!
//! Roads not leaving any listed junction start at an implicit origin; roads
//! not entering any listed junction end at an implicit destination.

use std::path::Path as FsPath;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::network::{JunctionId, RoadId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    pub t_final: f64,
    #[serde(default = "default_output_dir")]
    pub output_dir: String,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub snapshots: Vec<f64>,
    #[serde(default)]
    pub execution: Execution,
    pub network: NetworkConfig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub turning: Vec<TurnConfig>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub initial: Vec<InitialConfig>,
    pub micro: MicroConfig,
    #[serde(rename = "macro")]
    pub macro_: MacroConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceConfig>,
}

fn default_v_max() -> f64 {
    1.0
}

fn default_output_dir() -> String {
    "out".to_string()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    RunMicro,
    RunMacro,
    #[default]
    Compare,
    Converge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub roads: Vec<RoadConfig>,
    #[serde(default)]
    pub junctions: Vec<JunctionConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadConfig {
    pub id: RoadId,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JunctionConfig {
    pub id: JunctionId,
    #[serde(default)]
    pub inc: Vec<RoadId>,
    #[serde(default)]
    pub out: Vec<RoadId>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TurnConfig {
    pub from: RoadId,
    pub to: RoadId,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub road: RoadId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segments: Option<Vec<SegmentConfig>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentConfig {
    pub start: f64,
    pub end: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MicroConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ell_n: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicles: Option<usize>,
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adaptive_cfl: bool,
    #[serde(default)]
    pub strict_mass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MacroConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dx: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cells_per_road: Option<usize>,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    pub ladder: Vec<Rung>,
}

fn default_seeds() -> usize {
    16
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rung {
    pub ell_n: f64,
    pub dt: f64,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<FsPath>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Field-level checks; network consistency is checked when the
    /// experiment is built.
    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.t_final >= 0.0 && self.t_final.is_finite()) {
            return bad(format!("t_final {} must be non-negative", self.t_final));
        }
        if !(self.v_max > 0.0) {
            return bad(format!("v_max {} must be positive", self.v_max));
        }
        let roads: Vec<RoadId> = self.network.roads.iter().map(|r| r.id).collect();
        let known = |r: RoadId, what: &str| -> Result<()> {
            if roads.contains(&r) {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} references unknown road {r}")))
            }
        };
        for t in &self.turning {
            known(t.from, "turning")?;
            known(t.to, "turning")?;
        }
        for init in &self.initial {
            known(init.road, "initial density")?;
            match (&init.density, &init.segments) {
                (Some(_), None) | (None, Some(_)) => {}
                _ => return bad(format!("initial density for road {} needs exactly one of `density` or `segments`", init.road)),
            }
        }
        match (self.micro.ell_n, self.micro.vehicles) {
            (Some(ell), None) if ell > 0.0 => {}
            (None, Some(n)) if n > 0 => {}
            _ => return bad("micro needs exactly one of a positive `ell_n` or `vehicles`".into()),
        }
        if !(self.micro.dt > 0.0) {
            return bad(format!("micro dt {} must be positive", self.micro.dt));
        }
        match (self.macro_.dx, self.macro_.cells_per_road) {
            (Some(dx), None) if dx > 0.0 => {}
            (None, Some(n)) if n > 0 => {}
            _ => return bad("macro needs exactly one of a positive `dx` or `cells_per_road`".into()),
        }
        if !(self.macro_.dt > 0.0) {
            return bad(format!("macro dt {} must be positive", self.macro_.dt));
        }
        if let Some(c) = &self.convergence {
            if c.ladder.is_empty() {
                return bad("convergence ladder is empty".into());
            }
            if c.seeds == 0 {
                return bad("convergence needs at least one seed".into());
            }
            if c.ladder.windows(2).any(|w| w[1].ell_n >= w[0].ell_n) {
                return bad("convergence ladder must have decreasing ell_n".into());
            }
            if c.ladder.iter().any(|r| !(r.ell_n > 0.0 && r.dt > 0.0)) {
                return bad("convergence rungs need positive ell_n and dt".into());
            }
        }
        if self.snapshots.iter().any(|&t| !(t >= 0.0)) {
            return bad("snapshot times must be non-negative".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MERGE: &str = include_str!("../../../configs/merge.toml");
    const DIVERGE: &str = include_str!("../../../configs/diverge.toml");
    const CROSS: &str = include_str!("../../../configs/cross2x2.toml");

    #[test]
    fn shipped_configs_parse() {
        for text in [MERGE, DIVERGE, CROSS] {
            let cfg = ExperimentConfig::from_toml(text).unwrap();
            assert!(cfg.network.roads.iter().all(|r| r.length == 4000.0));
            assert_eq!(cfg.macro_.cells_per_road, Some(100));
        }
    }

    #[test]
    fn round_trip() {
        for text in [MERGE, DIVERGE, CROSS] {
            let cfg = ExperimentConfig::from_toml(text).unwrap();
            let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            assert_eq!(cfg, again);
        }
    }

    #[test]
    fn rejects_bad_fields() {
        let mut cfg = ExperimentConfig::from_toml(MERGE).unwrap();
        cfg.micro.vehicles = Some(10);
        assert!(cfg.check().is_err());

        let mut cfg = ExperimentConfig::from_toml(MERGE).unwrap();
        cfg.t_final = -1.0;
        assert!(cfg.check().is_err());

        let mut cfg = ExperimentConfig::from_toml(MERGE).unwrap();
        cfg.turning.push(TurnConfig { from: 9, to: 3, p: 1.0 });
        assert!(cfg.check().is_err());

        assert!(ExperimentConfig::from_toml("name = 1").is_err());
        let typo = MERGE.replace("t_final", "t_finale");
        assert!(ExperimentConfig::from_toml(&typo).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_arbitrary_parameters(
            t in 0.0f64..1e4, ell in 0.01f64..10.0, dt in 0.01f64..5.0, seed in 0u64..(i64::MAX as u64), dens in 0.0f64..1.0
        ) {
            let mut cfg = ExperimentConfig::from_toml(DIVERGE).unwrap();
            cfg.t_final = t;
            cfg.micro.ell_n = Some(ell);
            cfg.micro.dt = dt;
            cfg.micro.seed = seed;
            cfg.initial[0].density = Some(dens);
            let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
            prop_assert_eq!(cfg, again);
        }
    }
}
