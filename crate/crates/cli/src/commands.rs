use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use candle_core::Device;
use gfd_core::analysis::{
    fingerprint_correlation_vector, stats_of, GlcmConfig, GlcmCorrelationVector,
};
use gfd_core::config::{parse_override, RunConfig};
use gfd_core::data::{composite, load_manifest, Fingerprint, ImageTensor};
use gfd_core::inference::{EvalMode, InferenceModel};
use gfd_core::toy::{write_toy_dataset, ToyConfig};
use gfd_core::training::fit;
use gfd_core::GfdError;
use serde_json::{json, Value};

use crate::{
    Cli, Command, CompositeArgs, EvalArgs, ExtractArgs, GlcmArgs, ImageArgs, ToyArgs, TrainArgs,
};

pub const RUN_CONFIG_FILE: &str = "run_config.json";

pub fn run(cli: &Cli) -> Result<()> {
    let device = device(&cli.device)?;
    match &cli.command {
        Command::Train(a) => train(cli, a, &device),
        Command::Eval(a) => eval(a, &device),
        Command::Attribute(a) => attribute(a, &device),
        Command::Detect(a) => detect(a, &device),
        Command::ExtractFp(a) => extract_fp(a, &device),
        Command::Composite(a) => composite_cmd(a),
        Command::AnalyzeGlcm(a) => analyze_glcm(a),
        Command::ToyData(a) => toy_data(cli, a),
    }
}

fn device(name: &str) -> Result<Device> {
    match name {
        "cpu" => Ok(Device::Cpu),
        other => Err(GfdError::Config(format!(
            "device '{other}' is not available in this build (use cpu)"
        ))
        .into()),
    }
}

fn path_value(p: &Path) -> Value {
    Value::String(p.display().to_string())
}

/// Flag overrides in `dotted.key` form, applied after the config file.
fn train_overrides(cli: &Cli, a: &TrainArgs) -> Result<Vec<(String, Value)>> {
    let mut o: Vec<(String, Value)> = Vec::new();
    if let Some(s) = cli.seed {
        o.push(("train.seed".into(), json!(s)));
    }
    if let Some(t) = &a.task {
        o.push(("train.task".into(), json!(t)));
    }
    if let Some(ab) = &a.ablation {
        o.push(("ablation".into(), json!(ab)));
    }
    if let Some(n) = a.max_iters {
        o.push(("train.max_iters".into(), json!(n)));
    }
    if let Some(n) = a.batch_size {
        o.push(("train.batch_size".into(), json!(n)));
    }
    if let Some(lr) = a.lr {
        o.push(("train.lr".into(), json!(lr)));
    }
    if let Some(n) = a.pretrain_c_iters {
        o.push(("train.pretrain_c_iters".into(), json!(n)));
    }
    if let Some(n) = a.crop {
        o.push(("patch.crop".into(), json!(n)));
    }
    if let Some(n) = a.resize_to {
        o.push(("patch.resize_to".into(), json!(n)));
    }
    for (key, path) in [
        ("paths.manifest", &a.manifest),
        ("paths.out", &a.out),
        ("paths.resume", &a.resume),
    ] {
        if let Some(p) = path {
            o.push((key.into(), path_value(p)));
        }
    }
    for s in &a.set {
        o.push(parse_override(s)?);
    }
    Ok(o)
}

fn train(cli: &Cli, a: &TrainArgs, device: &Device) -> Result<()> {
    let cfg = RunConfig::resolve(a.config.as_deref(), &train_overrides(cli, a)?)?;
    cfg.validate()?;
    let manifest_path = cfg.paths.manifest.clone().ok_or_else(|| {
        GfdError::Config("train needs --manifest (or paths.manifest in the config)".into())
    })?;
    let out =
        cfg.paths.out.clone().ok_or_else(|| {
            GfdError::Config("train needs --out (or paths.out in the config)".into())
        })?;
    log::info!("seed {}", cfg.train.seed);
    let manifest = load_manifest(&manifest_path)?;
    let ckpt_cfg = cfg.checkpoint_config(&manifest);
    fs::create_dir_all(&out)?;
    fs::write(
        out.join(RUN_CONFIG_FILE),
        serde_json::to_string_pretty(&cfg)? + "\n",
    )?;
    let summary = fit(
        &manifest,
        ckpt_cfg,
        &out,
        cfg.paths.resume.as_deref(),
        device,
    )?;
    println!("{}", serde_json::to_string(&summary)?);
    Ok(())
}

fn eval(a: &EvalArgs, device: &Device) -> Result<()> {
    let mode: EvalMode = a.mode.parse()?;
    let manifest_path = a.manifest.as_ref().ok_or_else(|| {
        GfdError::Config(format!(
            "eval --mode {} needs --manifest pointing at the {} test manifest",
            a.mode, a.mode
        ))
    })?;
    let model = InferenceModel::load(&a.ckpt, device)?;
    let manifest = load_manifest(manifest_path)?;
    let report = model.evaluate(&manifest, mode)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &a.report {
        fs::write(path, text.clone() + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn load_images(paths: &[PathBuf]) -> Result<Vec<ImageTensor>> {
    Ok(paths
        .iter()
        .map(|p| ImageTensor::load(p))
        .collect::<gfd_core::Result<_>>()?)
}

fn attribute(a: &ImageArgs, device: &Device) -> Result<()> {
    let model = InferenceModel::load(&a.ckpt, device)?;
    let preds = model.attribute_batch(&load_images(&a.images)?)?;
    for (path, p) in a.images.iter().zip(preds) {
        let label = model.labels().get(p.label)?;
        let line = json!({
            "image": path,
            "label": label.name,
            "index": p.label,
            "confidence": p.confidence,
            "logits": p.logits,
        });
        println!("{line}");
    }
    Ok(())
}

fn detect(a: &ImageArgs, device: &Device) -> Result<()> {
    let model = InferenceModel::load(&a.ckpt, device)?;
    let dets = model.detect_batch(&load_images(&a.images)?)?;
    for (path, d) in a.images.iter().zip(dets) {
        let line = json!({
            "image": path,
            "label": if d.is_fake { "fake" } else { "real" },
            "score": d.score,
        });
        println!("{line}");
    }
    Ok(())
}

/// `out` with its `.npy`/`.png` extension stripped.
fn output_stem(out: &Path) -> PathBuf {
    match out.extension().and_then(|e| e.to_str()) {
        Some("npy" | "png") => out.with_extension(""),
        _ => out.to_path_buf(),
    }
}

fn extract_fp(a: &ExtractArgs, device: &Device) -> Result<()> {
    let model = InferenceModel::load(&a.ckpt, device)?;
    let fp = model.extract_fingerprint(&ImageTensor::load(&a.image)?)?;
    let stem = output_stem(&a.out);
    if let Some(parent) = stem.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let (npy, png) = (stem.with_extension("npy"), stem.with_extension("png"));
    fp.save_npy(&npy)?;
    fp.visualize().save(&png).map_err(GfdError::from)?;
    println!("{}", json!({ "npy": npy, "png": png, "shape": fp.shape() }));
    Ok(())
}

fn composite_cmd(a: &CompositeArgs) -> Result<()> {
    let fp = Fingerprint::load_npy(&a.fp)?;
    let mut carrier = ImageTensor::load(&a.carrier)?;
    let [_, h, w] = fp.shape();
    if a.center_crop {
        if h != w || carrier.height() < h || carrier.width() < w {
            return Err(GfdError::ImageTooSmall {
                size: carrier.height().min(carrier.width()),
                crop: h.max(w),
            }
            .into());
        }
        carrier = carrier.crop((carrier.height() - h) / 2, (carrier.width() - w) / 2, h)?;
    }
    let out = composite(&fp, &carrier, a.carrier.display().to_string())?;
    let stem = output_stem(&a.out);
    out.image.save_png(&stem.with_extension("png"))?;
    ndarray_npy::write_npy(stem.with_extension("npy"), out.image.pixels())
        .map_err(|e| GfdError::Npy(e.to_string()))?;
    println!(
        "{}",
        json!({ "png": stem.with_extension("png"), "npy": stem.with_extension("npy") })
    );
    Ok(())
}

fn collect_npy(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_npy(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "npy") {
            out.push(path);
        }
    }
    Ok(())
}

/// Source of a fingerprint: its first directory below the root, or `all`.
fn source_of(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    let mut parts = rel.components();
    match (parts.next(), parts.next()) {
        (Some(first), Some(_)) => first.as_os_str().to_string_lossy().into_owned(),
        _ => "all".into(),
    }
}

fn column_names(cfg: &GlcmConfig) -> Vec<String> {
    cfg.pairs()
        .into_iter()
        .map(|(d, theta)| format!("d{d}_a{}", theta.to_degrees().round() as i64))
        .collect()
}

fn analyze_glcm(a: &GlcmArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?.glcm,
        None => GlcmConfig::default(),
    };
    if let Some(l) = a.levels {
        cfg.levels = l;
    }
    cfg.validate()?;
    if !a.fp_dir.is_dir() {
        return Err(GfdError::MissingFile(a.fp_dir.clone()).into());
    }
    let mut files = Vec::new();
    collect_npy(&a.fp_dir, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(
            GfdError::Config(format!("no .npy fingerprints under {}", a.fp_dir.display())).into(),
        );
    }

    let columns = column_names(&cfg);
    let mut csv = format!("file,source,{}\n", columns.join(","));
    let mut groups: BTreeMap<String, (Vec<GlcmCorrelationVector>, usize)> = BTreeMap::new();
    for path in &files {
        let source = source_of(&a.fp_dir, path);
        let entry = groups.entry(source.clone()).or_default();
        let fp = Fingerprint::load_npy(path)?;
        let rel = path
            .strip_prefix(&a.fp_dir)
            .unwrap_or(path)
            .display()
            .to_string();
        match fingerprint_correlation_vector(&fp, &cfg) {
            Ok(v) => {
                let values: Vec<String> = v.values.iter().map(|x| format!("{x:.6}")).collect();
                writeln!(csv, "{rel},{source},{}", values.join(","))?;
                entry.0.push(v);
            }
            Err(GfdError::ZeroVariance) => {
                log::warn!("{rel}: degenerate fingerprint skipped");
                entry.1 += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }

    writeln!(
        csv,
        "\n# summary\nsource,stat,count,skipped,{}",
        columns.join(",")
    )?;
    let mut summary = BTreeMap::new();
    for (source, (vectors, skipped)) in &groups {
        let Ok(stats) = stats_of(vectors, *skipped) else {
            log::warn!("source {source}: no valid fingerprints");
            continue;
        };
        for (name, values) in [
            ("mean", &stats.mean),
            ("variance", &stats.variance),
            ("std", &stats.std),
        ] {
            let v: Vec<String> = values.iter().map(|x| format!("{x:.6}")).collect();
            writeln!(
                csv,
                "{source},{name},{},{},{}",
                stats.count,
                stats.skipped,
                v.join(",")
            )?;
        }
        summary.insert(source.clone(), stats);
    }
    fs::write(&a.out, csv).with_context(|| format!("writing {}", a.out.display()))?;
    println!(
        "{}",
        serde_json::to_string(&json!({ "fingerprints": files.len(), "sources": summary }))?
    );
    Ok(())
}

fn toy_data(cli: &Cli, a: &ToyArgs) -> Result<()> {
    let cfg = ToyConfig {
        pool_size: a.pool_size,
        num_generators: a.generators,
        seed: cli.seed.unwrap_or(0),
        ..Default::default()
    };
    let toy = write_toy_dataset(&a.out, &cfg)?;
    println!(
        "{}",
        json!({ "manifest": toy.manifest, "classes": toy.class_names })
    );
    Ok(())
}
