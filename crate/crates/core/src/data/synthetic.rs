//! Seeded synthetic datasets with closed-form node targets.
//!
//! Chains carry a freestream-dependent field
//! `sin(2 pi x) cos(2 pi y) + 0.5 (u0 x + v0 y)`; patches carry
//! `sin(2 pi x) cos(2 pi y) exp(-z)`. The graph target is the node mean.

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::record::{Dataset, DatasetHeader, GraphRecord, Topology};
use crate::error::{Error, Result};

pub const PATCH_CELL_TYPES: [&str; 2] = ["tri", "quad"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryFamily {
    /// Open or closed 2-D surface chains with a freestream condition.
    Chain,
    /// Triangulated/quad planar patches.
    Patch2d,
    /// Height-field surface patches in 3-D.
    Patch3d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    /// Independent random stream, so splits drawn from one seed do not overlap.
    #[serde(default)]
    pub stream: u64,
    pub count: usize,
    pub min_nodes: usize,
    pub max_nodes: usize,
    pub family: GeometryFamily,
    /// Probability that a chain is closed.
    #[serde(default = "half")]
    pub closed_fraction: f64,
}

fn half() -> f64 {
    0.5
}

/// Node target for chain geometry.
pub fn chain_field(x: f64, y: f64, u0: f64, v0: f64) -> f64 {
    (2.0 * PI * x).sin() * (2.0 * PI * y).cos() + 0.5 * (u0 * x + v0 * y)
}

/// Node target for patch geometry.
pub fn patch_field(x: f64, y: f64, z: f64) -> f64 {
    (2.0 * PI * x).sin() * (2.0 * PI * y).cos() * (-z).exp()
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let floor = match self.family {
            GeometryFamily::Chain => 2,
            _ => 4,
        };
        if self.min_nodes > self.max_nodes {
            return Err(Error::Config(format!(
                "empty node-count range {}..={}",
                self.min_nodes, self.max_nodes
            )));
        }
        if self.max_nodes < floor {
            return Err(Error::Config(format!("{:?} graphs need at least {floor} nodes", self.family)));
        }
        if !(0.0..=1.0).contains(&self.closed_fraction) {
            return Err(Error::Config("closed_fraction must be in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<Dataset> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        let records = (0..self.count)
            .map(|k| {
                let id = format!("{}-{}-{k:05}", self.family_tag(), self.stream);
                match self.family {
                    GeometryFamily::Chain => self.chain(&mut rng, id),
                    GeometryFamily::Patch2d => self.patch(&mut rng, id, false),
                    GeometryFamily::Patch3d => self.patch(&mut rng, id, true),
                }
            })
            .collect();
        let cell_types = match self.family {
            GeometryFamily::Chain => None,
            _ => Some(PATCH_CELL_TYPES.iter().map(|s| s.to_string()).collect()),
        };
        Ok(Dataset {
            header: DatasetHeader {
                cell_types,
                description: Some(format!("synthetic {:?}, seed {}, stream {}", self.family, self.seed, self.stream)),
                ..DatasetHeader::default()
            },
            records,
        })
    }

    fn family_tag(&self) -> &'static str {
        match self.family {
            GeometryFamily::Chain => "chain",
            GeometryFamily::Patch2d => "patch2d",
            GeometryFamily::Patch3d => "patch3d",
        }
    }

    fn chain(&self, rng: &mut ChaCha8Rng, id: String) -> GraphRecord {
        let n = rng.random_range(self.min_nodes.max(2)..=self.max_nodes);
        let closed = rng.random_bool(self.closed_fraction);
        let (cx, cy) = (rng.random_range(0.3..0.7), rng.random_range(0.3..0.7));
        let radius = rng.random_range(0.08..0.2);
        let aspect = rng.random_range(0.6..1.4);
        let rot = rng.random_range(0.0..2.0 * PI);
        let (a2, a3) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
        let start = rng.random_range(0.0..2.0 * PI);
        let span = if closed { 2.0 * PI } else { rng.random_range(PI..1.8 * PI) };
        let steps = if closed { n } else { n - 1 };
        let (u0, v0) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));

        let positions: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let t = start + span * k as f64 / steps as f64;
                let rho = radius * (1.0 + a2 * (2.0 * t).cos() + a3 * (3.0 * t).sin());
                let (lx, ly) = (rho * t.cos() * aspect, rho * t.sin());
                vec![cx + lx * rot.cos() - ly * rot.sin(), cy + lx * rot.sin() + ly * rot.cos()]
            })
            .collect();
        let lead = positions
            .iter()
            .enumerate()
            .min_by(|a, b| a.1[0].partial_cmp(&b.1[0]).expect("finite"))
            .map(|(i, _)| i)
            .unwrap();
        let targets: Vec<f64> = positions.iter().map(|p| chain_field(p[0], p[1], u0, v0)).collect();
        GraphRecord {
            id,
            topology: Topology::Chain { closed },
            node_cell_types: None,
            upper: Some((0..n).map(|i| i <= lead).collect()),
            freestream: Some((u0, v0)),
            graph_targets: Some(vec![mean(&targets)]),
            node_targets: Some(targets.into_iter().map(|t| vec![t]).collect()),
            positions,
        }
    }

    fn patch(&self, rng: &mut ChaCha8Rng, id: String, lifted: bool) -> GraphRecord {
        let target = rng.random_range(self.min_nodes.max(4)..=self.max_nodes.max(4));
        let nx = ((target as f64).sqrt().floor() as usize).max(2);
        let mut ny = (target / nx).max(2);
        while nx * ny < self.min_nodes {
            ny += 1;
        }
        let extent = rng.random_range(0.4..0.9);
        let (x0, y0) = (rng.random_range(0.0..1.0 - extent), rng.random_range(0.0..1.0 - extent));
        let (hx, hy) = (extent / (nx - 1) as f64, extent / (ny - 1) as f64);
        let (tilt_x, tilt_y, bump, phase) = (
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(0.0..0.3),
            rng.random_range(0.0..2.0 * PI),
        );

        let mut positions = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let jitter = |r: &mut ChaCha8Rng, h: f64| r.random_range(-0.2..0.2) * h;
                let x = x0 + i as f64 * hx + jitter(rng, hx);
                let y = y0 + j as f64 * hy + jitter(rng, hy);
                let mut p = vec![x, y];
                if lifted {
                    let z = 0.5 + tilt_x * (x - 0.5) + tilt_y * (y - 0.5) + bump * (3.0 * x + phase).sin();
                    p.push(z);
                }
                positions.push(p);
            }
        }

        let idx = |i: usize, j: usize| j * nx + i;
        let mut cells = Vec::new();
        let mut labels: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); nx * ny];
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                if rng.random_bool(0.5) {
                    cells.push(vec![a, b, c, d]);
                    for v in [a, b, c, d] {
                        labels[v].insert("quad");
                    }
                } else {
                    cells.push(vec![a, b, c]);
                    cells.push(vec![a, c, d]);
                    for v in [a, b, c, d] {
                        labels[v].insert("tri");
                    }
                }
            }
        }
        let targets: Vec<f64> = positions
            .iter()
            .map(|p| patch_field(p[0], p[1], p.get(2).copied().unwrap_or(0.0)))
            .collect();
        GraphRecord {
            id,
            topology: Topology::Mesh { cells },
            node_cell_types: Some(labels.into_iter().map(|s| s.into_iter().map(String::from).collect()).collect()),
            upper: None,
            freestream: None,
            graph_targets: Some(vec![mean(&targets)]),
            node_targets: Some(targets.into_iter().map(|t| vec![t]).collect()),
            positions,
        }
    }
}
