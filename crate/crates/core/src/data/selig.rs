//! Selig-format airfoil coordinate files: a name line followed by `x y` pairs
//! running trailing edge, upper surface, leading edge, lower surface, trailing edge.

use serde::{Deserialize, Serialize};

use super::record::{GraphRecord, Topology};
use crate::error::{Error, Result};

/// Accepted chord range; coordinates are expected in `[0, 1]` with rounding slack.
pub const X_RANGE: (f64, f64) = (-0.01, 1.01);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurfaceOrder {
    /// Points up to and including the leading edge are the upper surface.
    #[default]
    UpperFirst,
    LowerFirst,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeligAirfoil {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Index of the minimum-x point.
    pub leading_edge: usize,
    pub upper: Vec<bool>,
}

fn parse_real(tok: &str, line: usize) -> Result<f64> {
    tok.replace('\u{2212}', "-")
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse { line, message: format!("not a real number: `{tok}`") })
}

pub fn parse_selig(text: &str) -> Result<SeligAirfoil> {
    parse_selig_with(text, SurfaceOrder::UpperFirst)
}

pub fn parse_selig_with(text: &str, order: SurfaceOrder) -> Result<SeligAirfoil> {
    let mut lines = text.lines().enumerate();
    let name = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((_, l)) => break l.trim().to_string(),
            None => return Err(Error::Parse { line: 1, message: "empty coordinate file".into() }),
        }
    };
    let mut points = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let fields: Vec<&str> = raw.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 2 {
            return Err(Error::Parse { line, message: format!("expected two columns, found {}", fields.len()) });
        }
        let (x, y) = (parse_real(fields[0], line)?, parse_real(fields[1], line)?);
        if !(X_RANGE.0..=X_RANGE.1).contains(&x) {
            return Err(Error::Parse { line, message: format!("x = {x} outside [{}, {}]", X_RANGE.0, X_RANGE.1) });
        }
        points.push((x, y));
    }
    if points.len() < 3 {
        return Err(Error::Parse {
            line: text.lines().count().max(1),
            message: format!("need at least 3 points, found {}", points.len()),
        });
    }
    let leading_edge = points
        .iter()
        .enumerate()
        .min_by(|a, b| a.1 .0.partial_cmp(&b.1 .0).expect("finite"))
        .map(|(i, _)| i)
        .unwrap();
    let upper = (0..points.len())
        .map(|i| match order {
            SurfaceOrder::UpperFirst => i <= leading_edge,
            SurfaceOrder::LowerFirst => i > leading_edge,
        })
        .collect();
    Ok(SeligAirfoil { name, points, leading_edge, upper })
}

impl SeligAirfoil {
    /// Surface-chain record at the given freestream condition.
    pub fn to_record(&self, id: impl Into<String>, freestream: (f64, f64), closed: bool) -> GraphRecord {
        GraphRecord {
            id: id.into(),
            positions: self.points.iter().map(|&(x, y)| vec![x, y]).collect(),
            topology: Topology::Chain { closed },
            node_cell_types: None,
            upper: Some(self.upper.clone()),
            freestream: Some(freestream),
            node_targets: None,
            graph_targets: None,
        }
    }
}
