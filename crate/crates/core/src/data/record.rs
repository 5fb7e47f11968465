//! Line-delimited dataset files: a header line followed by one JSON graph record per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::scalar::Scalar;

pub const DATASET_FORMAT: &str = "meshgnn-graphs";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Topology {
    Mesh { cells: Vec<Vec<usize>> },
    Chain { closed: bool },
}

/// One sample as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphRecord {
    pub id: String,
    pub positions: Vec<Vec<f64>>,
    pub topology: Topology,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_cell_types: Option<Vec<Vec<String>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub upper: Option<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freestream: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub node_targets: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph_targets: Option<Vec<f64>>,
}

fn matrix<T: Scalar>(rows: &[Vec<f64>], what: &str) -> Result<Array2<T>> {
    let width = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(Error::Shape(format!("{what} rows have unequal lengths")));
    }
    Ok(Array2::from_shape_fn((rows.len(), width), |(i, j)| T::of(rows[i][j])))
}

impl GraphRecord {
    pub fn num_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn dim(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    /// Topology and positions only; features are attached by a preprocessor.
    pub fn to_graph<T: Scalar>(&self) -> Result<Graph<T>> {
        let positions: Array2<T> = matrix(&self.positions, "position")?;
        if !(2..=3).contains(&positions.ncols()) {
            return Err(Error::Shape(format!("record {}: positions must be 2-D or 3-D", self.id)));
        }
        let graph = match &self.topology {
            Topology::Mesh { cells } => Graph::build_from_mesh(positions, cells)?,
            Topology::Chain { closed } => Graph::build_surface_chain(positions, *closed)?,
        };
        Ok(graph)
    }

    pub fn node_target_matrix<T: Scalar>(&self) -> Result<Option<Array2<T>>> {
        self.node_targets.as_ref().map(|t| matrix(t, "node target")).transpose()
    }

    pub fn graph_target_vector<T: Scalar>(&self) -> Option<Array1<T>> {
        self.graph_targets.as_ref().map(|t| t.iter().map(|&x| T::of(x)).collect())
    }

    /// Checks per-node arrays against the node count.
    pub fn check(&self) -> Result<()> {
        let n = self.num_nodes();
        let lens = [
            ("node_cell_types", self.node_cell_types.as_ref().map(Vec::len)),
            ("upper", self.upper.as_ref().map(Vec::len)),
            ("node_targets", self.node_targets.as_ref().map(Vec::len)),
        ];
        for (what, len) in lens {
            if let Some(len) = len {
                if len != n {
                    return Err(Error::Shape(format!("record {}: {what} has {len} entries for {n} nodes", self.id)));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format: String,
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cell_types: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
}

impl Default for DatasetHeader {
    fn default() -> Self {
        Self { format: DATASET_FORMAT.into(), version: DATASET_VERSION, cell_types: None, description: None }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<GraphRecord>,
}

impl Dataset {
    pub fn to_writer(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.to_writer(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn from_reader(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (line, first) = lines
            .next()
            .ok_or(Error::Parse { line: 1, message: "empty dataset file".into() })?;
        let header: DatasetHeader =
            serde_json::from_str(&first?).map_err(|e| Error::Parse { line, message: format!("header: {e}") })?;
        if header.format != DATASET_FORMAT || header.version != DATASET_VERSION {
            return Err(Error::VersionMismatch {
                found: format!("{} v{}", header.format, header.version),
                expected: format!("{DATASET_FORMAT} v{DATASET_VERSION}"),
            });
        }
        let mut records = Vec::new();
        for (line, text) in lines {
            let rec: GraphRecord =
                serde_json::from_str(&text?).map_err(|e| Error::Parse { line, message: e.to_string() })?;
            rec.check().map_err(|e| Error::Parse { line, message: format!("record {}: {e}", rec.id) })?;
            records.push(rec);
        }
        Ok(Self { header, records })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(BufReader::new(File::open(path)?))
    }

    /// Smallest and largest node count.
    pub fn node_count_range(&self) -> Option<(usize, usize)> {
        let counts = self.records.iter().map(GraphRecord::num_nodes);
        Some((counts.clone().min()?, counts.max()?))
    }
}
