//! Command-line surface. Every subcommand reads one JSON config file plus
//! repeatable `--set key=value` dotted-path overrides, so a run is fully
//! reproducible from its config alone. Exit codes: 0 success, 2 user
//! error (bad flags, paths, configs), 3 internal failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::Checkpoint;
use crate::data::gen::{
    draw_line, draw_rect, generate_dataset, generate_document_dataset, GeneratorConfig,
};
use crate::data::io::{load_dataset, save_dataset};
use crate::data::ppm::write_ppm;
use crate::data::{Dataset, Drawing, RasterImage};
use crate::decoder::predictions_from_logits;
use crate::error::{Error, Result};
use crate::flops::sweep_csv;
use crate::model::{Model, ModelConfig, TaskMode};
use crate::object::InstanceType;
use crate::params::ParamStore;
use crate::pretrain::transfer_to_finetune;
use crate::rng::Rng;
use crate::tape::Tape;
use crate::trainer::{
    evaluate_relations, prepare, train_finetune, train_pretrain, TrainConfig, TrainOutcome,
};

const CIRCUIT_COLOR: [u8; 3] = [40, 80, 220];
const TABLE_COLOR: [u8; 3] = [30, 160, 60];
const LINK_COLOR: [u8; 3] = [200, 40, 40];

#[derive(Parser)]
#[command(
    name = "vired",
    version,
    about = "Relation prediction for engineering drawings"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData(GenDataArgs),
    /// Train the region-classification model from scratch.
    Pretrain(ConfigArgs),
    /// Train the relation model, optionally from a pretrained checkpoint.
    Finetune(ConfigArgs),
    /// Print relation metrics of a checkpoint on a dataset as JSON.
    Eval(ConfigArgs),
    /// Write per-drawing relation probabilities as JSON.
    Predict(ConfigArgs),
    /// Write the FLOPs-per-object-count sweep as CSV.
    Flops(ConfigArgs),
    /// Write prediction overlays (boxes + link segments) as PPM images.
    Render(ConfigArgs),
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config file; omitted where every field has a default.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. --set train.base_lr=3e-4 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: ConfigArgs,
    /// Generator seed (shorthand for the config's seed fields).
    #[arg(long)]
    seed: Option<u64>,
    /// Number of drawings (shorthand for --set count=N).
    #[arg(long)]
    count: Option<usize>,
    /// Output directory (shorthand for --set out=DIR).
    #[arg(long)]
    out: Option<PathBuf>,
}

// ── Per-command configs ─────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenDataConfig {
    /// "relations" (circuit/table drawings) or "documents" (5-class pages).
    kind: String,
    count: usize,
    out: PathBuf,
    /// Document page size; relation drawings size via `generator.canvas`.
    canvas: usize,
    /// Document generator seed; relation drawings seed via `generator.seed`.
    seed: u64,
    generator: GeneratorConfig,
}

impl Default for GenDataConfig {
    fn default() -> Self {
        GenDataConfig {
            kind: "relations".to_string(),
            count: 100,
            out: PathBuf::from("dataset"),
            canvas: 128,
            seed: 0,
            generator: GeneratorConfig::default(),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TrainCommandConfig {
    /// Dataset directory.
    data: PathBuf,
    /// Initial checkpoint (finetune only). A pretraining checkpoint is
    /// converted with the transfer rule; a relation checkpoint loads as-is.
    #[serde(default)]
    init: Option<PathBuf>,
    #[serde(default)]
    train: TrainConfig,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalConfig {
    data: PathBuf,
    checkpoint: PathBuf,
    #[serde(default)]
    seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictConfig {
    data: PathBuf,
    checkpoint: PathBuf,
    /// Output file; omitted prints to stdout.
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FlopsConfig {
    preset: String,
    /// Defaults to the preset's own input resolution.
    image_size: Option<usize>,
    max_n: usize,
    /// Output file; omitted prints to stdout.
    out: Option<PathBuf>,
}

impl Default for FlopsConfig {
    fn default() -> Self {
        FlopsConfig {
            preset: "desk".to_string(),
            image_size: None,
            max_n: 20,
            out: None,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RenderConfig {
    data: PathBuf,
    checkpoint: PathBuf,
    /// Output directory for overlays and predictions.json.
    out: PathBuf,
    #[serde(default)]
    seed: u64,
    /// Minimum probability for a link to be drawn.
    #[serde(default = "default_threshold")]
    threshold: f64,
}

fn default_threshold() -> f64 {
    crate::trainer::RELATION_THRESHOLD
}

/// Prediction record schema shared by `predict` and `render`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub circuit_id: u64,
    pub table_id: u64,
    pub probability: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DrawingPrediction {
    pub image_id: u64,
    pub pairs: Vec<PairRecord>,
}

// ── Config loading and overrides ────────────────────────────────────

fn load_config_value(path: Option<&Path>, sets: &[String]) -> Result<Value> {
    let mut value = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Parse(format!("{}: {e}", p.display())))?
        }
        None => Value::Object(Default::default()),
    };
    if !value.is_object() {
        return Err(Error::Parse("config root must be a JSON object".to_string()));
    }
    for spec in sets {
        apply_override(&mut value, spec)?;
    }
    Ok(value)
}

fn load_config<T: serde::de::DeserializeOwned>(args: &ConfigArgs) -> Result<T> {
    let value = load_config_value(args.config.as_deref(), &args.set)?;
    serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))
}

/// Apply one `key.path=value` override to a JSON tree, creating
/// intermediate objects as needed. The value parses as JSON when it can
/// (numbers, booleans, null, arrays, quoted strings) and falls back to a
/// bare string.
fn apply_override(root: &mut Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set '{spec}': expected KEY=VALUE")))?;
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::Config(format!("--set '{spec}': empty key segment")));
    }
    let mut cur = root;
    let mut parts = key.split('.').peekable();
    while let Some(part) = parts.next() {
        let map = cur.as_object_mut().ok_or_else(|| {
            Error::Config(format!("--set '{key}': '{part}' is not inside an object"))
        })?;
        if parts.peek().is_none() {
            let parsed: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            map.insert(part.to_string(), parsed);
            return Ok(());
        }
        cur = map
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    unreachable!("split produces at least one part");
}

// ── Shared model plumbing ───────────────────────────────────────────

fn model_from_checkpoint(ck: &Checkpoint, mode: TaskMode) -> Result<(Model, ParamStore)> {
    let cfg = ModelConfig::by_name(&ck.preset)?;
    let mut store = ParamStore::new();
    let mut rng = Rng::stream(ck.seed, "model.init");
    let model = Model::new(cfg, mode, &mut store, &mut rng)?;
    ck.apply_to_store(&mut store)?;
    Ok((model, store))
}

fn predict_dataset(
    model: &Model,
    store: &ParamStore,
    dataset: &Dataset,
    seed: u64,
) -> Result<Vec<DrawingPrediction>> {
    let mut out = Vec::with_capacity(dataset.drawings.len());
    for d in &dataset.drawings {
        let prep = prepare(d, model.cfg.image_size, false)?;
        let has_circuit = prep.types.iter().any(|t| *t == InstanceType::Circuit);
        let has_table = prep.types.iter().any(|t| *t == InstanceType::Table);
        let mut pairs_out = Vec::new();
        if has_circuit && has_table {
            let mut rng = Rng::stream(seed, "predict");
            let mut tape = Tape::new(false);
            let (logits, pairs) = model.forward_relations(
                &mut tape,
                store,
                &prep.image,
                &prep.boxes,
                &prep.types,
                prep.image_px,
                &mut rng,
            )?;
            for pred in predictions_from_logits(tape.value(logits), &pairs)? {
                pairs_out.push(PairRecord {
                    circuit_id: prep.annotation_ids[pred.pair.circuit_idx],
                    table_id: prep.annotation_ids[pred.pair.table_idx],
                    probability: pred.probability as f64,
                });
            }
        }
        out.push(DrawingPrediction { image_id: d.id, pairs: pairs_out });
    }
    Ok(out)
}

/// Boxes on the original canvas (circuits blue, tables green, other
/// classes gray) plus a center-to-center segment per kept link.
fn render_overlay(d: &Drawing, links: &[PairRecord]) -> Result<RasterImage> {
    let mut img = d.image.clone();
    for a in &d.annotations {
        let color = match a.category_id {
            0 => CIRCUIT_COLOR,
            1 => TABLE_COLOR,
            _ => [150, 150, 150],
        };
        draw_rect(&mut img, &a.bbox, color);
    }
    for l in links {
        let c = d.annotation(l.circuit_id).ok_or_else(|| {
            Error::Contract(format!("link names unknown annotation {}", l.circuit_id))
        })?;
        let t = d.annotation(l.table_id).ok_or_else(|| {
            Error::Contract(format!("link names unknown annotation {}", l.table_id))
        })?;
        let (cb, tb) = (c.bbox, t.bbox);
        draw_line(
            &mut img,
            (cb.x + cb.w / 2) as i64,
            (cb.y + cb.h / 2) as i64,
            (tb.x + tb.w / 2) as i64,
            (tb.y + tb.h / 2) as i64,
            LINK_COLOR,
        );
    }
    Ok(img)
}

// ── Commands ────────────────────────────────────────────────────────

fn gen_data(args: GenDataArgs) -> Result<()> {
    let mut value = load_config_value(args.common.config.as_deref(), &args.common.set)?;
    let map = value.as_object_mut().expect("checked object root");
    if let Some(seed) = args.seed {
        map.insert("seed".to_string(), seed.into());
        map.entry("generator".to_string())
            .or_insert_with(|| Value::Object(Default::default()))
            .as_object_mut()
            .ok_or_else(|| Error::Config("'generator' is not an object".to_string()))?
            .insert("seed".to_string(), seed.into());
    }
    if let Some(count) = args.count {
        map.insert("count".to_string(), count.into());
    }
    if let Some(out) = &args.out {
        map.insert("out".to_string(), Value::String(out.display().to_string()));
    }
    let cfg: GenDataConfig =
        serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
    let dataset = match cfg.kind.as_str() {
        "relations" => generate_dataset(&cfg.generator, cfg.count)?,
        "documents" => generate_document_dataset(cfg.canvas, cfg.seed, cfg.count)?,
        other => {
            return Err(Error::Config(format!(
                "gen-data kind '{other}' (expected 'relations' or 'documents')"
            )))
        }
    };
    save_dataset(&dataset, &cfg.out)?;
    println!("wrote {} drawings to {}", dataset.drawings.len(), cfg.out.display());
    Ok(())
}

fn print_train_summary(cfg: &TrainConfig, out: &TrainOutcome) {
    let checkpoint = cfg
        .checkpoint_dir
        .as_ref()
        .map(|d| d.join("best.vred").display().to_string());
    println!(
        "{}",
        serde_json::json!({
            "best_epoch": out.best_epoch,
            "best_metric": out.best_metric,
            "epochs": out.history.iter().filter(|r| r.split == "val").count(),
            "checkpoint": checkpoint,
        })
    );
}

fn pretrain_cmd(args: ConfigArgs) -> Result<()> {
    let cfg: TrainCommandConfig = load_config(&args)?;
    if cfg.init.is_some() {
        return Err(Error::Config(
            "pretraining starts from scratch; 'init' applies to finetune".to_string(),
        ));
    }
    let dataset = load_dataset(&cfg.data)?;
    let out = train_pretrain(&cfg.train, &dataset)?;
    print_train_summary(&cfg.train, &out);
    Ok(())
}

fn finetune_cmd(args: ConfigArgs) -> Result<()> {
    let cfg: TrainCommandConfig = load_config(&args)?;
    let dataset = load_dataset(&cfg.data)?;
    let init = match &cfg.init {
        None => None,
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            Some(if ck.tensor("pretrain_head.fc1.weight").is_some() {
                transfer_to_finetune(&ck, cfg.train.seed)?
            } else {
                ck
            })
        }
    };
    let out = train_finetune(&cfg.train, &dataset, init.as_ref())?;
    print_train_summary(&cfg.train, &out);
    Ok(())
}

fn eval_cmd(args: ConfigArgs) -> Result<()> {
    let cfg: EvalConfig = load_config(&args)?;
    let dataset = load_dataset(&cfg.data)?;
    let ck = Checkpoint::load(&cfg.checkpoint)?;
    let (model, store) = model_from_checkpoint(&ck, TaskMode::Relation)?;
    let ev = evaluate_relations(&model, &store, &dataset.drawings, cfg.seed)?;
    println!(
        "{}",
        serde_json::json!({
            "map": ev.map,
            "precision": ev.precision,
            "recall": ev.recall,
            "accuracy": ev.accuracy,
        })
    );
    Ok(())
}

fn predict_cmd(args: ConfigArgs) -> Result<()> {
    let cfg: PredictConfig = load_config(&args)?;
    let dataset = load_dataset(&cfg.data)?;
    let ck = Checkpoint::load(&cfg.checkpoint)?;
    let (model, store) = model_from_checkpoint(&ck, TaskMode::Relation)?;
    let records = predict_dataset(&model, &store, &dataset, cfg.seed)?;
    let json =
        serde_json::to_string(&records).map_err(|e| Error::Parse(e.to_string()))?;
    match &cfg.out {
        Some(p) => fs::write(p, json)?,
        None => println!("{json}"),
    }
    Ok(())
}

fn flops_cmd(args: ConfigArgs) -> Result<()> {
    let cfg: FlopsConfig = load_config(&args)?;
    let model_cfg = ModelConfig::by_name(&cfg.preset)?;
    if cfg.max_n == 0 {
        return Err(Error::Config("flops max_n must be positive".to_string()));
    }
    let image_size = cfg.image_size.unwrap_or(model_cfg.image_size);
    let csv = sweep_csv(&model_cfg, image_size, cfg.max_n);
    match &cfg.out {
        Some(p) => fs::write(p, csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}

fn render_cmd(args: ConfigArgs) -> Result<()> {
    let cfg: RenderConfig = load_config(&args)?;
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(Error::Config(format!(
            "render threshold {} outside [0,1]",
            cfg.threshold
        )));
    }
    let dataset = load_dataset(&cfg.data)?;
    let ck = Checkpoint::load(&cfg.checkpoint)?;
    let (model, store) = model_from_checkpoint(&ck, TaskMode::Relation)?;
    let records = predict_dataset(&model, &store, &dataset, cfg.seed)?;
    fs::create_dir_all(&cfg.out)?;
    let mut kept_records = Vec::with_capacity(records.len());
    for (d, rec) in dataset.drawings.iter().zip(records) {
        let kept: Vec<PairRecord> = rec
            .pairs
            .into_iter()
            .filter(|p| p.probability >= cfg.threshold)
            .collect();
        let img = render_overlay(d, &kept)?;
        write_ppm(&cfg.out.join(format!("{:06}.ppm", d.id)), &img)?;
        kept_records.push(DrawingPrediction { image_id: d.id, pairs: kept });
    }
    let json = serde_json::to_string_pretty(&kept_records)
        .map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(cfg.out.join("predictions.json"), json)?;
    Ok(())
}

// ── Entry point ─────────────────────────────────────────────────────

fn validate_threads_env() -> std::result::Result<(), String> {
    match std::env::var("VIRED_THREADS") {
        Err(std::env::VarError::NotPresent) => Ok(()),
        Err(std::env::VarError::NotUnicode(_)) => {
            Err("VIRED_THREADS must be a positive integer".to_string())
        }
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n >= 1 => Ok(()),
            _ => Err(format!("VIRED_THREADS='{v}' must be a positive integer")),
        },
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Pretrain(a) => pretrain_cmd(a),
        Command::Finetune(a) => finetune_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Predict(a) => predict_cmd(a),
        Command::Flops(a) => flops_cmd(a),
        Command::Render(a) => render_cmd(a),
    }
}

/// Parse and run; returns the process exit code (0 ok, 2 user error,
/// 3 internal error).
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(msg) = validate_threads_env() {
        eprintln!("error: {msg}");
        return 2;
    }
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_user_error() {
                2
            } else {
                3
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_parse_json_values_with_string_fallback() {
        let mut v = serde_json::json!({});
        apply_override(&mut v, "train.base_lr=3e-4").unwrap();
        apply_override(&mut v, "train.preset=tiny").unwrap();
        apply_override(&mut v, "augment=true").unwrap();
        apply_override(&mut v, "generator.circuits=[2,3]").unwrap();
        apply_override(&mut v, "init=null").unwrap();
        assert_eq!(v["train"]["base_lr"], serde_json::json!(3e-4));
        assert_eq!(v["train"]["preset"], serde_json::json!("tiny"));
        assert_eq!(v["augment"], serde_json::json!(true));
        assert_eq!(v["generator"]["circuits"], serde_json::json!([2, 3]));
        assert_eq!(v["init"], serde_json::Value::Null);
    }

    #[test]
    fn override_replaces_existing_values() {
        let mut v = serde_json::json!({"count": 5, "nested": {"a": 1}});
        apply_override(&mut v, "count=9").unwrap();
        apply_override(&mut v, "nested.a=2").unwrap();
        assert_eq!(v, serde_json::json!({"count": 9, "nested": {"a": 2}}));
    }

    #[test]
    fn malformed_overrides_are_config_errors() {
        let mut v = serde_json::json!({});
        for bad in ["no_equals", "=7", "a..b=1", ".x=1"] {
            assert!(matches!(
                apply_override(&mut v, bad),
                Err(Error::Config(_))
            ));
        }
        let mut v = serde_json::json!({"leaf": 3});
        assert!(matches!(
            apply_override(&mut v, "leaf.inner=1"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_config_uses_defaults() {
        let args = ConfigArgs { config: None, set: vec![] };
        let value = load_config_value(args.config.as_deref(), &args.set).unwrap();
        let cfg: GenDataConfig = serde_json::from_value(value).unwrap();
        assert_eq!(cfg.kind, "relations");
        assert_eq!(cfg.count, 100);
        assert_eq!(cfg.out, PathBuf::from("dataset"));
    }

    #[test]
    fn unknown_config_fields_are_rejected() {
        let args = ConfigArgs {
            config: None,
            set: vec!["bogus_field=1".to_string()],
        };
        let err = load_config::<FlopsConfig>(&args).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err:?}");
    }

    #[test]
    fn overlay_link_endpoints_must_exist() {
        use crate::data::gen::generate_drawing;
        let d = generate_drawing(&GeneratorConfig::default(), 0).unwrap();
        let bad = [PairRecord {
            circuit_id: u64::MAX,
            table_id: 0,
            probability: 1.0,
        }];
        assert!(render_overlay(&d, &bad).is_err());
        assert!(render_overlay(&d, &[]).is_ok());
    }

    #[test]
    fn overlay_draws_link_pixels_between_centers() {
        use crate::data::gen::generate_drawing;
        let d = generate_drawing(&GeneratorConfig::default(), 3).unwrap();
        let r = d.relations[0];
        let link = [PairRecord {
            circuit_id: r.circuit_id,
            table_id: r.table_id,
            probability: 0.9,
        }];
        let img = render_overlay(&d, &link).unwrap();
        let count = (0..img.height)
            .flat_map(|y| (0..img.width).map(move |x| (x, y)))
            .filter(|&(x, y)| img.get(x, y) == LINK_COLOR)
            .count();
        let c = d.annotation(r.circuit_id).unwrap().bbox;
        let t = d.annotation(r.table_id).unwrap().bbox;
        let dx = (c.x + c.w / 2) as i64 - (t.x + t.w / 2) as i64;
        let dy = (c.y + c.h / 2) as i64 - (t.y + t.h / 2) as i64;
        // A Bresenham segment paints max(|dx|,|dy|)+1 pixels.
        assert!(count as i64 >= dx.abs().max(dy.abs()) + 1 - 2);
    }
}
