//! Pipeline deployments: node positions along a 1-D line.
//!
//! Node ids double as indices: node 0 is the origin base station at
//! position 0, the highest id is the end base station. Positions are
//! quantised to 1 m so that the text format round-trips exactly.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{substream, Purpose};

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("failed to read topology file: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: duplicate node id {id}")]
    DuplicateId { line: usize, id: u16 },
    #[error("invalid topology: {0}")]
    Invalid(String),
}

/// Node positions in km along the pipeline, indexed by node id.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub positions_km: Vec<f64>,
    pub range_km: f64,
}

impl Topology {
    pub fn n_nodes(&self) -> u16 {
        self.positions_km.len() as u16
    }

    pub fn distance_km(&self, a: u16, b: u16) -> f64 {
        (self.positions_km[a as usize] - self.positions_km[b as usize]).abs()
    }

    /// Distance from the origin base station to the end base station.
    pub fn length_km(&self) -> f64 {
        let first = self.positions_km.first().copied().unwrap_or(0.0);
        let last = self.positions_km.last().copied().unwrap_or(0.0);
        last - first
    }

    pub fn validate(&self) -> Result<(), TopologyError> {
        if self.positions_km.len() < 3 {
            return Err(TopologyError::Invalid(
                "need at least 3 nodes (two base stations and a sensor)".into(),
            ));
        }
        if self.positions_km.len() > u16::MAX as usize {
            return Err(TopologyError::Invalid("too many nodes for 16-bit ids".into()));
        }
        if self.range_km <= 0.0 {
            return Err(TopologyError::Invalid("range_km must be positive".into()));
        }
        Ok(())
    }
}

fn default_n_nodes() -> u16 {
    300
}

fn default_spacing_km() -> f64 {
    0.5
}

fn default_range_km() -> f64 {
    20.0
}

fn default_p_short() -> f64 {
    0.8
}

fn default_short_gap() -> (f64, f64) {
    (0.1, 2.0)
}

fn default_long_gap() -> (f64, f64) {
    (2.0, 5.0)
}

/// How to lay nodes out. `seed: None` derives the layout from the run
/// seed, so every run of a campaign sees a fresh deployment; a fixed seed
/// pins one deployment across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TopologySpec {
    /// Evenly spaced nodes.
    Linear {
        #[serde(default = "default_n_nodes")]
        n_nodes: u16,
        #[serde(default = "default_spacing_km")]
        spacing_km: f64,
        #[serde(default = "default_range_km")]
        range_km: f64,
    },
    /// Node-by-node generation with a short/long gap mixture: mostly dense
    /// neighbours with occasional long stretches.
    RandomPipeline {
        #[serde(default = "default_n_nodes")]
        n_nodes: u16,
        #[serde(default = "default_p_short")]
        p_short: f64,
        #[serde(default = "default_short_gap")]
        short_gap: (f64, f64),
        #[serde(default = "default_long_gap")]
        long_gap: (f64, f64),
        #[serde(default = "default_range_km")]
        range_km: f64,
        #[serde(default)]
        seed: Option<u64>,
    },
    File {
        path: String,
    },
}

impl TopologySpec {
    pub fn validate(&self) -> Result<(), TopologyError> {
        match self {
            TopologySpec::Linear {
                n_nodes,
                spacing_km,
                range_km,
            } => {
                if *n_nodes < 3 {
                    return Err(TopologyError::Invalid("n_nodes must be at least 3".into()));
                }
                if *spacing_km <= 0.0 || *range_km <= 0.0 {
                    return Err(TopologyError::Invalid(
                        "spacing_km and range_km must be positive".into(),
                    ));
                }
                Ok(())
            }
            TopologySpec::RandomPipeline {
                n_nodes,
                p_short,
                short_gap,
                long_gap,
                range_km,
                ..
            } => {
                if *n_nodes < 3 {
                    return Err(TopologyError::Invalid("n_nodes must be at least 3".into()));
                }
                if !(0.0..=1.0).contains(p_short) {
                    return Err(TopologyError::Invalid("p_short must be in 0..=1".into()));
                }
                for (name, (lo, hi)) in [("short_gap", short_gap), ("long_gap", long_gap)] {
                    if *lo <= 0.0 || hi <= lo {
                        return Err(TopologyError::Invalid(format!(
                            "{name} must be a positive interval (lo, hi]"
                        )));
                    }
                }
                if *range_km <= 0.0 {
                    return Err(TopologyError::Invalid("range_km must be positive".into()));
                }
                Ok(())
            }
            TopologySpec::File { path } => {
                if path.is_empty() {
                    return Err(TopologyError::Invalid("file path is empty".into()));
                }
                Ok(())
            }
        }
    }
}

/// Uniform draw from the half-open interval `(lo, hi]`.
fn draw_gap<R: Rng>(rng: &mut R, (lo, hi): (f64, f64)) -> f64 {
    let u: f64 = rng.gen(); // [0, 1)
    hi - u * (hi - lo)
}

fn quantize_m(pos: f64) -> f64 {
    (pos * 1000.0).round() / 1000.0
}

/// Build the deployment. `fallback_seed` (normally the run seed) is used
/// for random layouts that do not pin their own seed.
pub fn generate(spec: &TopologySpec, fallback_seed: u64) -> Result<Topology, TopologyError> {
    spec.validate()?;
    match spec {
        TopologySpec::Linear {
            n_nodes,
            spacing_km,
            range_km,
        } => {
            let positions = (0..*n_nodes)
                .map(|i| quantize_m(i as f64 * spacing_km))
                .collect();
            Ok(Topology {
                positions_km: positions,
                range_km: *range_km,
            })
        }
        TopologySpec::RandomPipeline {
            n_nodes,
            p_short,
            short_gap,
            long_gap,
            range_km,
            seed,
        } => {
            let mut rng = substream(seed.unwrap_or(fallback_seed), 0, Purpose::Topology);
            let mut positions = Vec::with_capacity(*n_nodes as usize);
            let mut cum = 0.0;
            positions.push(0.0);
            for _ in 1..*n_nodes {
                let gap = if rng.gen_bool(*p_short) {
                    draw_gap(&mut rng, *short_gap)
                } else {
                    draw_gap(&mut rng, *long_gap)
                };
                cum += gap;
                positions.push(quantize_m(cum));
            }
            Ok(Topology {
                positions_km: positions,
                range_km: *range_km,
            })
        }
        TopologySpec::File { path } => load(Path::new(path)),
    }
}

/// Write the deployment as text: a header with the node count and range,
/// then one `id position_km` line per node (3 decimals = 1 m).
pub fn save(topo: &Topology, path: &Path) -> Result<(), TopologyError> {
    let mut out = String::new();
    out.push_str(&format!("{} {}\n", topo.n_nodes(), topo.range_km));
    for (id, pos) in topo.positions_km.iter().enumerate() {
        out.push_str(&format!("{} {:.3}\n", id, pos));
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Topology, TopologyError> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or(TopologyError::Parse {
        line: 1,
        message: "missing header".into(),
    })?;
    let mut parts = header.split_whitespace();
    let n: usize = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(TopologyError::Parse {
            line: 1,
            message: "header must start with the node count".into(),
        })?;
    let range_km: f64 = parts
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or(TopologyError::Parse {
            line: 1,
            message: "header must carry the range in km".into(),
        })?;

    let mut positions = vec![f64::NAN; n];
    let mut seen = vec![false; n];
    for (idx, line) in lines {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id: usize = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(TopologyError::Parse {
                line: line_no,
                message: "expected a node id".into(),
            })?;
        let pos: f64 = parts
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or(TopologyError::Parse {
                line: line_no,
                message: "expected a position in km".into(),
            })?;
        if id >= n {
            return Err(TopologyError::Parse {
                line: line_no,
                message: format!("node id {id} outside 0..{n}"),
            });
        }
        if seen[id] {
            return Err(TopologyError::DuplicateId {
                line: line_no,
                id: id as u16,
            });
        }
        seen[id] = true;
        positions[id] = pos;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(TopologyError::Invalid(format!("node id {missing} missing")));
    }

    let topo = Topology {
        positions_km: positions,
        range_km,
    };
    topo.validate()?;
    Ok(topo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_spec(seed: u64) -> TopologySpec {
        TopologySpec::RandomPipeline {
            n_nodes: 300,
            p_short: default_p_short(),
            short_gap: default_short_gap(),
            long_gap: default_long_gap(),
            range_km: 20.0,
            seed: Some(seed),
        }
    }

    #[test]
    fn linear_three_nodes_at_one_km() {
        let spec = TopologySpec::Linear {
            n_nodes: 3,
            spacing_km: 1.0,
            range_km: 20.0,
        };
        let topo = generate(&spec, 0).unwrap();
        assert_eq!(topo.positions_km, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn linear_default_network_spans_149_5_km() {
        let spec = TopologySpec::Linear {
            n_nodes: 300,
            spacing_km: 0.5,
            range_km: 20.0,
        };
        let topo = generate(&spec, 0).unwrap();
        assert_eq!(topo.n_nodes(), 300);
        assert_eq!(topo.length_km(), 149.5);
        assert_eq!(topo.positions_km[150], 75.0);
    }

    #[test]
    fn linear_generation_ignores_the_seed() {
        let spec = TopologySpec::Linear {
            n_nodes: 50,
            spacing_km: 0.5,
            range_km: 20.0,
        };
        assert_eq!(generate(&spec, 1).unwrap(), generate(&spec, 999).unwrap());
    }

    #[test]
    fn gap_draws_respect_interval_bounds() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1_000_000 {
            let g = draw_gap(&mut rng, (0.1, 2.0));
            assert!(g > 0.1 && g <= 2.0, "short gap {g} out of bounds");
        }
        for _ in 0..100_000 {
            let g = draw_gap(&mut rng, (2.0, 5.0));
            assert!(g > 2.0 && g <= 5.0, "long gap {g} out of bounds");
        }
    }

    #[test]
    fn short_gap_fraction_converges_to_p_short() {
        // Count gap sizes over many generated deployments: the mixture
        // weight must match within 3 sigma of the binomial.
        let mut short = 0u64;
        let mut total = 0u64;
        for seed in 0..200 {
            let topo = generate(&random_spec(seed), 0).unwrap();
            for w in topo.positions_km.windows(2) {
                let gap = w[1] - w[0];
                total += 1;
                if gap <= 2.0 {
                    short += 1;
                }
            }
        }
        let f = short as f64 / total as f64;
        let sigma = (0.8 * 0.2 / total as f64).sqrt();
        assert!(
            (f - 0.8).abs() <= 3.0 * sigma,
            "short fraction {f} outside 0.8 +- {}",
            3.0 * sigma
        );
    }

    #[test]
    fn random_pipeline_lengths_center_on_the_mixture_mean() {
        // Gap mean 0.8 * 1.05 + 0.2 * 3.5 = 1.54 km, so 299 gaps average
        // 460.5 km; 50 instances keep the sample mean within 3 sigma
        // (8.5 km).
        let mut sum = 0.0;
        for seed in 0..50 {
            sum += generate(&random_spec(seed), 0).unwrap().length_km();
        }
        let mean = sum / 50.0;
        assert!(
            (mean - 460.46).abs() < 8.5,
            "mean length {mean} outside oracle band"
        );
    }

    #[test]
    fn random_pipeline_is_reproducible_from_its_seed() {
        let a = generate(&random_spec(11), 0).unwrap();
        let b = generate(&random_spec(11), 12345).unwrap();
        assert_eq!(a, b);
        let c = generate(&random_spec(12), 0).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn save_load_round_trip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pipe.topo");
        let topo = generate(&random_spec(3), 0).unwrap();
        save(&topo, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(topo, loaded);
    }

    #[test]
    fn load_accepts_unsorted_ids() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("unsorted.topo");
        fs::write(&path, "3 20\n2 2.000\n0 0.000\n1 1.000\n").unwrap();
        let topo = load(&path).unwrap();
        assert_eq!(topo.positions_km, vec![0.0, 1.0, 2.0]);
    }

    #[test]
    fn load_rejects_duplicate_ids_with_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dup.topo");
        fs::write(&path, "3 20\n0 0.000\n1 1.000\n1 2.000\n").unwrap();
        match load(&path) {
            Err(TopologyError::DuplicateId { line, id }) => {
                assert_eq!(line, 4);
                assert_eq!(id, 1);
            }
            other => panic!("expected duplicate-id error, got {other:?}"),
        }
    }

    #[test]
    fn load_reports_parse_errors_with_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.topo");
        fs::write(&path, "3 20\n0 0.000\none 1.000\n2 2.000\n").unwrap();
        match load(&path) {
            Err(TopologyError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
