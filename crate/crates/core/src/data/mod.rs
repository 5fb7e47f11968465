//! On-disk formats: dataset files, airfoil coordinates, synthetic generators, checkpoints.

pub mod checkpoint;
pub mod record;
pub mod selig;
pub mod synthetic;

pub use checkpoint::{stored_dtype, Checkpoint, ResumeState};
pub use record::{Dataset, DatasetHeader, GraphRecord, Topology};
pub use selig::{parse_selig, SeligAirfoil};
pub use synthetic::{GeometryFamily, SyntheticSpec};
