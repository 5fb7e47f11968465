use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use meshgnn::config::{Dtype, ExperimentConfig, GenConfig};
use meshgnn::data::checkpoint::{stored_dtype, MAGIC};
use meshgnn::data::{parse_selig, Checkpoint, Dataset, GraphRecord, ResumeState, Topology};
use meshgnn::dataset::{EncodingKind, FeatureSpec, Preprocessor, Sample};
use meshgnn::eval::{evaluate_graph_level, evaluate_node_level};
use meshgnn::model::{GnnModel, TaskMode};
use meshgnn::nn::Parameters;
use meshgnn::train::Trainer;
use meshgnn::{Error, Scalar};

use crate::{PredictArgs, TrainArgs};

/// Failure class and exit code for the one-line diagnostic.
pub fn classify(err: &anyhow::Error) -> (&'static str, u8) {
    match err.chain().find_map(|e| e.downcast_ref::<Error>()) {
        Some(Error::Config(_) | Error::Vocabulary { .. } | Error::DegenerateFreestream) => ("bad config", 2),
        Some(Error::Parse { .. } | Error::Json(_) | Error::VersionMismatch { .. } | Error::Checkpoint(_)) => {
            ("parse error", 3)
        }
        Some(Error::NonFiniteLoss { .. }) => ("non-finite loss", 4),
        Some(Error::Io(_)) => ("io error", 5),
        _ if err.chain().any(|e| e.is::<std::io::Error>()) => ("io error", 5),
        _ => ("error", 1),
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| format!("reading {}", path.display()))
}

pub fn gen(config: &Path, out: &Path) -> Result<()> {
    let cfg = GenConfig::load(config).with_context(|| format!("reading {}", config.display()))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for (k, split) in cfg.splits.iter().enumerate() {
        let ds = cfg.spec_for(k).expect("index in range").generate()?;
        let path = out.join(format!("{}.jsonl", split.name));
        ds.save(&path).with_context(|| format!("writing {}", path.display()))?;
        let (lo, hi) = ds.node_count_range().unwrap_or((0, 0));
        eprintln!("{}: {} graphs, {lo}\u{2013}{hi} nodes", path.display(), ds.records.len());
    }
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&args.config).with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    let data = load_dataset(&args.data)?;
    if data.records.is_empty() {
        bail!(Error::Empty(format!("{} has no records", args.data.display())));
    }
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    match cfg.dtype {
        Dtype::F32 => train_as::<f32>(args, &cfg, &data.records),
        Dtype::F64 => train_as::<f64>(args, &cfg, &data.records),
    }
}

fn train_as<T: Scalar>(args: &TrainArgs, cfg: &ExperimentConfig, records: &[GraphRecord]) -> Result<()> {
    let (mut model, prep, mut trainer) = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::<T>::load(path).with_context(|| format!("reading {}", path.display()))?;
            let state = ck
                .resume
                .ok_or_else(|| anyhow!("{} has no optimizer state to resume from", path.display()))?;
            let trainer = Trainer {
                config: cfg.train.clone(),
                adam: state.adam,
                scheduler: state.scheduler,
                epoch: state.epoch,
                log: Default::default(),
            };
            (ck.model, ck.preprocessor, trainer)
        }
        None => {
            let prep = Preprocessor::fit(cfg.features.clone(), records)?;
            let dim = if cfg.features.encoding == EncodingKind::FeatureDesign { 3 } else { records[0].dim() };
            let model = GnnModel::<T>::he_init(&cfg.gnn_config(dim), cfg.train.seed)?;
            let trainer = Trainer::new(&model, cfg.train.clone())?;
            (model, prep, trainer)
        }
    };
    let samples: Vec<Sample<T>> = prep.prepare_all(records)?;
    let graphs: Vec<_> = samples.into_iter().map(|s| s.graph).collect();

    fs::write(args.out.join("config.toml"), cfg.to_toml_string()?)?;
    let log_path = args.out.join("train_log.jsonl");
    let mut log = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .write(true)
            .append(args.resume.is_some())
            .truncate(args.resume.is_none())
            .open(&log_path)
            .with_context(|| format!("opening {}", log_path.display()))?,
    );
    let snapshot = |t: &Trainer<T>, m: &GnnModel<T>| Checkpoint {
        model: m.clone(),
        preprocessor: prep.clone(),
        resume: Some(ResumeState { train: t.config.clone(), epoch: t.epoch, scheduler: t.scheduler.clone(), adam: t.adam.clone() }),
    };
    let every = cfg.checkpoint_every;
    let total = cfg.train.epochs;
    let report_every = (total / 20).max(1);
    eprintln!("training {} parameters on {} graphs for {} epochs", model.num_params(), graphs.len(), total);
    trainer.fit_with(&mut model, &graphs, |t, m, rec| {
        log.write_all(rec.to_json_line().as_bytes())?;
        log.flush()?;
        if every > 0 && t.epoch % every == 0 {
            let dir = args.out.join("checkpoints");
            fs::create_dir_all(&dir)?;
            snapshot(t, m).save(dir.join(format!("epoch-{:05}.ckpt", t.epoch)))?;
        }
        if t.epoch % report_every == 0 || t.epoch == total {
            eprintln!("epoch {:>5}  loss {:.6}  lr {:.3e}", rec.epoch, rec.loss, rec.lr);
        }
        Ok(())
    })?;
    let path = args.out.join("model.ckpt");
    snapshot(&trainer, &model).save(&path).with_context(|| format!("writing {}", path.display()))?;
    eprintln!("wrote {} and {}", path.display(), log_path.display());
    Ok(())
}

fn read_checkpoint(path: &Path) -> Result<(Vec<u8>, String)> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let dtype = stored_dtype(&bytes).with_context(|| format!("reading {}", path.display()))?;
    Ok((bytes, dtype))
}

pub fn eval(checkpoint: &Path, data: &Path, split: Option<String>, csv: Option<PathBuf>) -> Result<()> {
    let (bytes, dtype) = read_checkpoint(checkpoint)?;
    let ds = load_dataset(data)?;
    let split = split.unwrap_or_else(|| data.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned()));
    let report = match dtype.as_str() {
        "f32" => eval_as::<f32>(&bytes, &ds.records, &split)?,
        _ => eval_as::<f64>(&bytes, &ds.records, &split)?,
    };
    print!("{}", report.table());
    let csv = csv.unwrap_or_else(|| checkpoint.with_file_name(format!("eval_{split}.csv")));
    fs::write(&csv, report.per_graph_csv()).with_context(|| format!("writing {}", csv.display()))?;
    eprintln!("per-graph errors written to {}", csv.display());
    Ok(())
}

fn eval_as<T: Scalar>(bytes: &[u8], records: &[GraphRecord], split: &str) -> Result<meshgnn::EvalReport> {
    let ck = Checkpoint::<T>::from_bytes(bytes)?;
    let samples: Vec<Sample<T>> = ck.preprocessor.prepare_all(records)?;
    Ok(match ck.model.config().task {
        TaskMode::NodeLevel => evaluate_node_level(&ck.model, &ck.preprocessor, &samples, split)?,
        TaskMode::GraphLevel => evaluate_graph_level(&ck.model, &samples, split)?,
    })
}

fn predict_record(args: &PredictArgs) -> Result<GraphRecord> {
    if let Some(path) = &args.selig {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let foil = parse_selig(&text).with_context(|| format!("parsing {}", path.display()))?;
        let fs = args.freestream.as_deref().unwrap_or_default();
        if fs.len() != 2 {
            bail!(Error::Config(format!("--freestream takes u0,v0; got {} value(s)", fs.len())));
        }
        let id = path.file_stem().map_or("airfoil".into(), |s| s.to_string_lossy().into_owned());
        return Ok(foil.to_record(id, (fs[0], fs[1]), args.closed));
    }
    let path = args.data.as_ref().expect("clap requires --data or --selig");
    let ds = load_dataset(path)?;
    match (&args.id, ds.records.len()) {
        (Some(id), _) => ds
            .records
            .into_iter()
            .find(|r| &r.id == id)
            .ok_or_else(|| anyhow!("no record with id `{id}` in {}", path.display())),
        (None, 1) => Ok(ds.records.into_iter().next().unwrap()),
        (None, n) => bail!(Error::Config(format!("{} holds {n} records; pick one with --id", path.display()))),
    }
}

pub fn predict(args: &PredictArgs) -> Result<()> {
    let (bytes, dtype) = read_checkpoint(&args.checkpoint)?;
    let rec = predict_record(args)?;
    let csv = match dtype.as_str() {
        "f32" => predict_as::<f32>(&bytes, &rec)?,
        _ => predict_as::<f64>(&bytes, &rec)?,
    };
    match &args.out {
        Some(path) => fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn predict_as<T: Scalar>(bytes: &[u8], rec: &GraphRecord) -> Result<String> {
    let ck = Checkpoint::<T>::from_bytes(bytes)?;
    let sample: Sample<T> = ck.preprocessor.prepare(rec)?;
    let pred = ck.model.predict(&sample.graph)?;
    let header = |prefix: &str, width: usize| -> String {
        if width == 1 {
            prefix.to_string()
        } else {
            (0..width).map(|k| format!("{prefix}_{k}")).collect::<Vec<_>>().join(",")
        }
    };
    let mut out = String::new();
    match pred.nodes {
        Some(nodes) => {
            let physical = ck.preprocessor.denormalize_nodes(&sample, &nodes)?;
            out += &format!("graph_id,node,{}\n", header("prediction", physical.ncols()));
            for (i, row) in physical.outer_iter().enumerate() {
                let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                out += &format!("{},{i},{}\n", rec.id, vals.join(","));
            }
        }
        None => {
            out += &format!("graph_id,{}\n", header("prediction", pred.graph.ncols()));
            let vals: Vec<String> = pred.graph.row(0).iter().map(|v| v.to_string()).collect();
            out += &format!("{},{}\n", rec.id, vals.join(","));
        }
    }
    Ok(out)
}

pub fn inspect(path: &Path) -> Result<()> {
    let mut head = [0u8; 8];
    let is_checkpoint = File::open(path)
        .and_then(|mut f| std::io::Read::read_exact(&mut f, &mut head))
        .is_ok()
        && &head == MAGIC;
    if is_checkpoint {
        let (bytes, dtype) = read_checkpoint(path)?;
        match dtype.as_str() {
            "f32" => inspect_checkpoint::<f32>(&bytes),
            _ => inspect_checkpoint::<f64>(&bytes),
        }
    } else {
        inspect_dataset(&load_dataset(path)?);
        Ok(())
    }
}

fn inspect_dataset(ds: &Dataset) {
    let (lo, hi) = ds.node_count_range().unwrap_or((0, 0));
    let count = |f: &dyn Fn(&GraphRecord) -> bool| ds.records.iter().filter(|r| f(r)).count();
    let dims: std::collections::BTreeSet<usize> = ds.records.iter().map(GraphRecord::dim).collect();
    println!("format:        {} v{}", ds.header.format, ds.header.version);
    if let Some(d) = &ds.header.description {
        println!("description:   {d}");
    }
    println!("graphs:        {}", ds.records.len());
    println!("nodes:         {lo}\u{2013}{hi} nodes");
    println!("dimensions:    {dims:?}");
    println!("mesh graphs:   {}", count(&|r| matches!(r.topology, Topology::Mesh { .. })));
    println!("chain graphs:  {}", count(&|r| matches!(r.topology, Topology::Chain { .. })));
    println!("node targets:  {}", count(&|r| r.node_targets.is_some()));
    println!("graph targets: {}", count(&|r| r.graph_targets.is_some()));
    let cells = ds.header.cell_types.clone().unwrap_or_default();
    let fd = FeatureSpec { encoding: EncodingKind::FeatureDesign, cell_types: cells.clone(), ..FeatureSpec::default() };
    let af = FeatureSpec::default();
    let dim = dims.iter().next().copied().unwrap_or(0);
    println!(
        "feature widths: airfoil node {} edge {}; feature-design node {} edge {} (cell types {:?})",
        af.node_width(),
        af.edge_width(dim),
        fd.node_width(),
        fd.edge_width(dim),
        cells
    );
}

fn inspect_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<()> {
    let ck = Checkpoint::<T>::from_bytes(bytes)?;
    let c = ck.model.config();
    println!("checkpoint:    {} v{}", String::from_utf8_lossy(MAGIC), meshgnn::data::checkpoint::VERSION);
    println!("dtype:         {}", T::DTYPE);
    println!("task:          {:?}", c.task);
    println!("latent size:   {}", c.latent_size);
    println!("steps:         {}", c.steps);
    println!("mlp shape:     depth {} width {}", c.edge_processor.depth, c.edge_processor.width);
    println!("parameters:    {}", ck.model.num_params());
    println!("encoding:      {:?}", ck.preprocessor.spec.encoding);
    println!("targets:       {:?}", ck.preprocessor.spec.node_targets);
    println!("feature widths: node {} edge {}", c.node_input(), c.edge_input());
    match &ck.resume {
        Some(r) => println!("resume:        epoch {}, lr {:.3e}", r.epoch, r.scheduler.lr),
        None => println!("resume:        none"),
    }
    Ok(())
}
