//! Binary checkpoint container.
//!
//! Layout: 8 magic bytes, `u32` format version, `u32` section count, then
//! sections of `[4-byte tag][u64 length][payload]`, all little-endian.
//! `META` is JSON (dtype, model config, preprocessing), `PARM` holds every
//! parameter as raw `f64` bits in model order, `TRST`/`ADAM` carry optional
//! optimizer state for resuming.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Preprocessor;
use crate::error::{Error, Result};
use crate::model::{GnnConfig, GnnModel};
use crate::nn::Parameters;
use crate::scalar::Scalar;
use crate::train::{AdamConfig, AdamState, PlateauScheduler, TrainConfig};

pub const MAGIC: &[u8; 8] = b"MGNNCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ResumeState<T> {
    pub train: TrainConfig,
    pub epoch: usize,
    pub scheduler: PlateauScheduler,
    pub adam: AdamState<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub model: GnnModel<T>,
    pub preprocessor: Preprocessor,
    pub resume: Option<ResumeState<T>>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    dtype: String,
    model: GnnConfig,
    preprocessor: Preprocessor,
}

#[derive(Serialize, Deserialize)]
struct TrainMeta {
    train: TrainConfig,
    epoch: usize,
    scheduler: PlateauScheduler,
    adam: AdamConfig,
    adam_step: u64,
}

fn push_section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(payload);
}

fn encode_values<'a, T: Scalar>(slices: impl IntoIterator<Item = &'a [T]>) -> Vec<u8> {
    let mut out = Vec::new();
    for s in slices {
        for v in s {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what} at byte {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

fn fill_values<T: Scalar>(payload: &[u8], targets: Vec<&mut [T]>, what: &str) -> Result<()> {
    let total: usize = targets.iter().map(|s| s.len()).sum();
    if payload.len() != total * 8 {
        return Err(Error::Checkpoint(format!("{what}: {} bytes for {total} values", payload.len())));
    }
    let mut chunks = payload.chunks_exact(8);
    for s in targets {
        for v in s.iter_mut() {
            *v = T::of(f64::from_le_bytes(chunks.next().unwrap().try_into().unwrap()));
        }
    }
    Ok(())
}

/// Splits a checkpoint into its tagged sections after checking magic and version.
fn sections(buf: &[u8]) -> Result<Vec<([u8; 4], &[u8])>> {
    let mut r = Reader { buf, pos: 0 };
    let expected = format!("{} v{VERSION}", String::from_utf8_lossy(MAGIC));
    let magic = r
        .take(8, "magic")
        .map_err(|_| Error::VersionMismatch { found: "file shorter than the header".into(), expected: expected.clone() })?;
    let version = r.u32("version");
    if magic != MAGIC || version.as_ref().ok() != Some(&VERSION) {
        let v = version.map_or_else(|_| "?".to_string(), |v| v.to_string());
        return Err(Error::VersionMismatch { found: format!("{} v{v}", String::from_utf8_lossy(magic)), expected });
    }
    let count = r.u32("section count")?;
    let mut out = Vec::new();
    for _ in 0..count {
        let tag: [u8; 4] = r.take(4, "section tag")?.try_into().unwrap();
        let len = usize::try_from(r.u64("section length")?)
            .map_err(|_| Error::Checkpoint("section length overflows".into()))?;
        out.push((tag, r.take(len, &String::from_utf8_lossy(&tag))?));
    }
    if r.pos != buf.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
    }
    Ok(out)
}

/// Scalar type (`"f32"` or `"f64"`) a checkpoint was written with.
pub fn stored_dtype(buf: &[u8]) -> Result<String> {
    #[derive(Deserialize)]
    struct DtypeOnly {
        dtype: String,
    }
    let (_, meta) = sections(buf)?
        .into_iter()
        .find(|(tag, _)| tag == b"META")
        .ok_or_else(|| Error::Checkpoint("missing META section".into()))?;
    Ok(serde_json::from_slice::<DtypeOnly>(meta)?.dtype)
}

impl<T: Scalar> Checkpoint<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut sections = Vec::new();
        let meta = Meta { dtype: T::DTYPE.into(), model: self.model.config().clone(), preprocessor: self.preprocessor.clone() };
        push_section(&mut sections, b"META", &serde_json::to_vec(&meta)?);
        push_section(&mut sections, b"PARM", &encode_values(self.model.param_slices()));
        let mut count = 2u32;
        if let Some(r) = &self.resume {
            let tm = TrainMeta {
                train: r.train.clone(),
                epoch: r.epoch,
                scheduler: r.scheduler.clone(),
                adam: r.adam.config,
                adam_step: r.adam.step,
            };
            push_section(&mut sections, b"TRST", &serde_json::to_vec(&tm)?);
            let moments = r.adam.m.iter().chain(&r.adam.v).map(Vec::as_slice);
            push_section(&mut sections, b"ADAM", &encode_values(moments));
            count += 2;
        }
        let mut out = Vec::with_capacity(16 + sections.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&count.to_le_bytes());
        out.extend_from_slice(&sections);
        Ok(out)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut meta: Option<Meta> = None;
        let mut params: Option<&[u8]> = None;
        let mut train: Option<TrainMeta> = None;
        let mut adam: Option<&[u8]> = None;
        for (tag, payload) in sections(buf)? {
            match &tag {
                b"META" => meta = Some(serde_json::from_slice(payload)?),
                b"PARM" => params = Some(payload),
                b"TRST" => train = Some(serde_json::from_slice(payload)?),
                b"ADAM" => adam = Some(payload),
                other => return Err(Error::Checkpoint(format!("unknown section {:?}", String::from_utf8_lossy(other)))),
            }
        }
        let meta = meta.ok_or_else(|| Error::Checkpoint("missing META section".into()))?;
        if meta.dtype != T::DTYPE {
            return Err(Error::Checkpoint(format!("stored as {}, loading as {}", meta.dtype, T::DTYPE)));
        }
        let mut model = GnnModel::<T>::zeros(&meta.model)?;
        fill_values(params.ok_or_else(|| Error::Checkpoint("missing PARM section".into()))?, model.param_slices_mut(), "PARM")?;
        let resume = match (train, adam) {
            (Some(tm), Some(moments)) => {
                let mut state = AdamState::new(&model, tm.adam);
                state.step = tm.adam_step;
                let targets = state.m.iter_mut().chain(state.v.iter_mut()).map(Vec::as_mut_slice).collect();
                fill_values(moments, targets, "ADAM")?;
                Some(ResumeState { train: tm.train, epoch: tm.epoch, scheduler: tm.scheduler, adam: state })
            }
            (None, None) => None,
            _ => return Err(Error::Checkpoint("TRST and ADAM sections must appear together".into())),
        };
        Ok(Self { model, preprocessor: meta.preprocessor, resume })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
