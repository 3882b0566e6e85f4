//! Run configuration: one TOML document describing a complete simulation.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::channel::{DriftConfig, LossConfig};
use crate::energy::EnergyConfig;
use crate::protocol::{ProtocolConfig, TimingConfig};
use crate::topology::TopologySpec;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid scenario:\n{}", violations.join("\n"))]
    Invalid { violations: Vec<String> },
    #[error("override path {0:?} does not name a scenario key")]
    BadOverridePath(String),
    #[error("sweep axis {0:?} is not of the form path=value[,value...]")]
    BadSweepAxis(String),
}

/// When a run stops, beyond exhausting `max_frames`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StopCondition {
    /// Stop at the end of the frame in which the end base first decodes a
    /// ping.
    RouteFormed,
    /// Run all of `max_frames`.
    MaxFrames,
    /// Run exactly `ceil(duration_s / frame)` frames.
    FixedDuration { duration_s: f64 },
    /// Stop once the ping stream has re-reached the end base after the
    /// last injected failure.
    Recovered,
}

impl Default for StopCondition {
    fn default() -> Self {
        StopCondition::RouteFormed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailureTarget {
    /// The node named by `node`.
    Fixed,
    /// A uniformly drawn route node (route or route-end) at injection time.
    RandomRoute,
    /// A uniformly drawn non-route sensing node at injection time.
    RandomNonRoute,
}

/// One permanent node death, applied at a frame boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FailureSpec {
    pub target: FailureTarget,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node: Option<u16>,
    /// Absolute injection time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_s: Option<f64>,
    /// Injection time counted from route formation; such failures never
    /// fire in runs where no route forms.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub after_formation_s: Option<f64>,
}

impl FailureSpec {
    fn check(&self, idx: usize, horizon_s: f64, out: &mut Vec<String>) {
        let key = |field: &str| format!("failure[{idx}].{field}");
        match (self.target, self.node) {
            (FailureTarget::Fixed, None) => {
                out.push(format!("{}: fixed target needs a node id", key("node")))
            }
            (FailureTarget::Fixed, Some(_)) => {}
            (_, Some(_)) => out.push(format!(
                "{}: node id only applies to target = \"fixed\"",
                key("node")
            )),
            (_, None) => {}
        }
        match (self.at_s, self.after_formation_s) {
            (None, None) => out.push(format!(
                "{}: give exactly one of at_s or after_formation_s",
                key("at_s")
            )),
            (Some(_), Some(_)) => out.push(format!(
                "{}: at_s and after_formation_s are mutually exclusive",
                key("at_s")
            )),
            (Some(t), None) if !(t >= 0.0) => {
                out.push(format!("{}: must be non-negative", key("at_s")))
            }
            (Some(t), None) if t > horizon_s => out.push(format!(
                "{}: {t} s is beyond the simulated horizon of {horizon_s} s",
                key("at_s")
            )),
            (None, Some(t)) if !(t >= 0.0) => {
                out.push(format!("{}: must be non-negative", key("after_formation_s")))
            }
            _ => {}
        }
    }
}

fn default_true() -> bool {
    true
}

fn default_max_frames() -> u32 {
    4000
}

/// A complete, reproducible run description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    /// Hard frame budget regardless of stop condition.
    #[serde(default = "default_max_frames")]
    pub max_frames: u32,
    /// When false, nodes act even if the frame's worst-case cost exceeds
    /// their stored charge.
    #[serde(default = "default_true")]
    pub energy_gating: bool,
    #[serde(default)]
    pub stop: StopCondition,
    #[serde(default)]
    pub timing: TimingConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub energy: EnergyConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub drift: DriftConfig,
    pub topology: TopologySpec,
    #[serde(default, rename = "failure", skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<FailureSpec>,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Scenario, ScenarioError> {
        let scenario: Scenario = toml::from_str(text)?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: &Path) -> Result<Scenario, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Scenario::from_toml_str(&text)
    }

    /// Every violation at once, each prefixed with the offending key path.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_frames == 0 {
            out.push("max_frames: must be at least 1".into());
        }
        if let Err(e) = self.timing.validate() {
            out.push(format!("timing: {e}"));
        }
        if let Err(e) = self.protocol.validate() {
            out.push(format!("protocol: {e}"));
        }
        if let Err(e) = self.energy.validate() {
            out.push(format!("energy: {e}"));
        }
        if let Err(e) = self.loss.validate() {
            out.push(format!("loss: {e}"));
        }
        if let Err(e) = self.drift.validate() {
            out.push(format!("drift: {e}"));
        }
        if let Err(e) = self.topology.validate() {
            out.push(format!("topology: {e}"));
        }
        let horizon_s = self.max_frames as f64 * self.timing.frame_s();
        if let StopCondition::FixedDuration { duration_s } = self.stop {
            if !(duration_s > 0.0) {
                out.push("stop.duration_s: must be positive".into());
            } else if duration_s > horizon_s {
                out.push(format!(
                    "stop.duration_s: {duration_s} s exceeds max_frames ({horizon_s} s)"
                ));
            }
        }
        for (i, f) in self.failures.iter().enumerate() {
            f.check(i, horizon_s, &mut out);
        }
        out
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let violations = self.violations();
        if violations.is_empty() {
            Ok(())
        } else {
            Err(ScenarioError::Invalid { violations })
        }
    }

    /// The scenario with every default filled in, as TOML.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }
}

/// Set `path` (dotted, e.g. `protocol.frameout`) in a parsed TOML tree,
/// creating intermediate tables as needed. Sweeps apply overrides before
/// the tree is deserialized, so unknown keys still fail loudly there.
pub fn set_by_path(
    root: &mut toml::Value,
    path: &str,
    new: toml::Value,
) -> Result<(), ScenarioError> {
    let mut parts = path.split('.').peekable();
    let mut cursor = root;
    loop {
        let part = match parts.next() {
            Some(p) if !p.is_empty() => p,
            _ => return Err(ScenarioError::BadOverridePath(path.into())),
        };
        let table = cursor
            .as_table_mut()
            .ok_or_else(|| ScenarioError::BadOverridePath(path.into()))?;
        if parts.peek().is_none() {
            table.insert(part.into(), new);
            return Ok(());
        }
        cursor = table
            .entry(part)
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [topology]
        kind = "linear"
    "#;

    #[test]
    fn minimal_scenario_resolves_defaults() {
        let s = Scenario::from_toml_str(MINIMAL).unwrap();
        assert_eq!(s.seed, 0);
        assert_eq!(s.max_frames, 4000);
        assert!(s.energy_gating);
        assert_eq!(s.stop, StopCondition::RouteFormed);
        assert_eq!(s.timing.slots_per_frame, 400);
        assert_eq!(s.protocol.conlimit, 1);
        let resolved = s.resolved_toml();
        assert!(resolved.contains("conlimit = 1"));
        assert!(resolved.contains("slots_per_frame = 400"));
    }

    #[test]
    fn unknown_key_error_names_the_key() {
        let err = Scenario::from_toml_str(
            r#"
            frame_count = 10
            [topology]
            kind = "linear"
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("frame_count"), "{err}");
    }

    #[test]
    fn violations_carry_key_paths() {
        let s = Scenario::from_toml_str(
            r#"
            [timing]
            stl = 3
            [protocol]
            conlimit = 0
            [topology]
            kind = "linear"
            "#,
        );
        let err = match s {
            Err(ScenarioError::Invalid { violations }) => violations,
            other => panic!("expected validation failure, got {other:?}"),
        };
        assert!(err.iter().any(|v| v.starts_with("timing:")), "{err:?}");
        assert!(err.iter().any(|v| v.starts_with("protocol:")), "{err:?}");
    }

    #[test]
    fn failure_specs_are_cross_checked() {
        let s = Scenario::from_toml_str(
            r#"
            max_frames = 10
            [topology]
            kind = "linear"
            [[failure]]
            target = "fixed"
            at_s = 999999.0
            "#,
        );
        let violations = match s {
            Err(ScenarioError::Invalid { violations }) => violations,
            other => panic!("expected validation failure, got {other:?}"),
        };
        assert!(violations.iter().any(|v| v.contains("failure[0].node")));
        assert!(violations.iter().any(|v| v.contains("horizon")));
    }

    #[test]
    fn fixed_duration_must_fit_the_frame_budget() {
        let err = Scenario::from_toml_str(
            r#"
            max_frames = 5
            [stop]
            kind = "fixed-duration"
            duration_s = 2000.0
            [topology]
            kind = "linear"
            "#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("stop.duration_s"), "{err}");
    }

    #[test]
    fn overrides_reach_nested_and_missing_tables() {
        let mut tree: toml::Value = toml::from_str(MINIMAL).unwrap();
        set_by_path(&mut tree, "protocol.frameout", toml::Value::Integer(200)).unwrap();
        set_by_path(&mut tree, "loss.model", "bernoulli".into()).unwrap();
        set_by_path(&mut tree, "loss.rate", toml::Value::Float(0.1)).unwrap();
        let s: Scenario = tree.try_into().unwrap();
        assert_eq!(s.protocol.frameout, 200);
        assert_eq!(s.loss.rate, 0.1);
    }

    #[test]
    fn override_rejects_non_table_traversal() {
        let mut tree: toml::Value = toml::from_str(MINIMAL).unwrap();
        set_by_path(&mut tree, "seed", toml::Value::Integer(9)).unwrap();
        let err = set_by_path(&mut tree, "seed.inner", toml::Value::Integer(1)).unwrap_err();
        assert!(matches!(err, ScenarioError::BadOverridePath(_)));
        let err = set_by_path(&mut tree, "", toml::Value::Integer(1)).unwrap_err();
        assert!(matches!(err, ScenarioError::BadOverridePath(_)));
    }
}
