//! Subcommand implementations. Every command writes under `cfg.out` and returns the paths it wrote.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use elrcn_core::dataset::{write_manifest, Dataset};
use elrcn_core::elrcn::{ElrcnConfig, ElrcnModel, FeatureTap, Variant};
use elrcn_core::eval::{aggregate_hde, cde_dataset, hde_folds, loso_split, pooled_report, EvalReport};
use elrcn_core::gradcam::{grad_cam, render_overlay, GradCamTarget};
use elrcn_core::nn::accuracy;
use serde_json::json;

use crate::cache::FlowCache;
use crate::config::{AblationAxis, Protocol, RunConfig};
use crate::pipeline::{load_databases, prepare_all, run_folds, synth_specs, thread_pool, train_model, FoldOutcome};

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<PathBuf> {
    if let Some(parent) = path.parent() {
        create_dir(parent)?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))?;
    Ok(path.to_path_buf())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<PathBuf> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_file(path, text)
}

/// Keeps ASCII alphanumerics, `-` and `_` so ids are safe in file names.
fn file_safe(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn loss_csv(losses: &[f64]) -> String {
    let mut out = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        out.push_str(&format!("{},{l}\n", e + 1));
    }
    out
}

fn dataset_summary(ds: &Dataset) -> serde_json::Value {
    json!({
        "taxonomy": ds.taxonomy(),
        "videos": ds.len(),
        "subjects": ds.subjects().len(),
    })
}

/// Writes each synthetic database to `<out>/data/<database_id>`.
pub fn cmd_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (spec, seed) in synth_specs(cfg, cfg.eval.protocol.databases()) {
        let ds = elrcn_core::dataset::synthesize_dataset(&spec, seed)?;
        let dir = cfg.out.join("data").join(file_safe(&spec.database_id));
        written.push(write_manifest(&ds, &dir)?);
    }
    Ok(written)
}

/// Fills the flow cache for the configured databases and writes a summary.
pub fn cmd_preprocess(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let pool = thread_pool(cfg.jobs)?;
    let cache = FlowCache::new(cfg.cache_dir());
    let mut databases = Vec::new();
    for ds in load_databases(cfg, cfg.eval.protocol.databases())? {
        let prepared = prepare_all(&ds, &cfg.model.pipeline, cfg.variant().needs_motion(), &cache, &pool)?;
        let steps: usize = prepared.iter().map(|p| p.enriched.len()).sum();
        databases.push(json!({ "dataset": dataset_summary(&ds), "enriched_frames": steps }));
    }
    let summary = json!({
        "config": cfg,
        "databases": databases,
        "cache_dir": cache.dir(),
    });
    Ok(vec![write_json(&cfg.out.join("preprocess.json"), &summary)?])
}

/// Trains on every video of the first database and saves the checkpoint.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let pool = thread_pool(cfg.jobs)?;
    let cache = FlowCache::new(cfg.cache_dir());
    let ds = load_databases(cfg, 1)?.remove(0);
    let prepared = prepare_all(&ds, &cfg.model.pipeline, cfg.variant().needs_motion(), &cache, &pool)?;
    let (model, history) = train_model(cfg, &cfg.model, &ds, &prepared)?;
    let (inputs, labels, _) = model.samples_for(&prepared)?;
    let train_accuracy = accuracy(&model, &inputs, &labels)?;
    let stem = format!("{}_s{}", cfg.variant().name(), cfg.seed);
    let ck = cfg.checkpoint_path();
    create_dir(&cfg.out)?;
    model.save(&ck)?;
    let summary = json!({
        "config": cfg,
        "dataset": dataset_summary(&ds),
        "history": history,
        "train_accuracy": train_accuracy,
        "checkpoint": ck,
    });
    Ok(vec![
        ck.clone(),
        write_json(&cfg.out.join(format!("train_{stem}.json")), &summary)?,
        write_file(&cfg.out.join(format!("loss_train_{stem}.csv")), loss_csv(&history.losses))?,
    ])
}

pub struct Evaluation {
    pub dataset: Dataset,
    pub folds: Vec<FoldOutcome>,
    pub report: EvalReport,
}

/// Runs `protocol` for one model configuration.
pub fn evaluate(cfg: &RunConfig, model_cfg: &ElrcnConfig, protocol: Protocol) -> Result<Evaluation> {
    let pool = thread_pool(cfg.jobs)?;
    let cache = FlowCache::new(cfg.cache_dir());
    let dbs = load_databases(cfg, protocol.databases())?;
    let (ds, folds) = match protocol {
        Protocol::Loso => {
            let ds = dbs.into_iter().next().expect("one database");
            let folds = loso_split(&ds)?;
            (ds, folds)
        }
        Protocol::Cde => {
            let keep = if cfg.eval.classes.is_empty() {
                let b = dbs[1].taxonomy();
                dbs[0]
                    .taxonomy()
                    .classes()
                    .iter()
                    .filter(|c| b.index_of(c).is_some())
                    .cloned()
                    .collect()
            } else {
                cfg.eval.classes.clone()
            };
            let ds = cde_dataset(&dbs[0], &dbs[1], &keep)?;
            let folds = loso_split(&ds)?;
            (ds, folds)
        }
        Protocol::Hde => hde_folds(&dbs[0], &dbs[1])?,
    };
    let prepared = prepare_all(&ds, &model_cfg.pipeline, model_cfg.variant.needs_motion(), &cache, &pool)?;
    let outcomes = run_folds(cfg, model_cfg, &ds, &prepared, &folds, &pool)?;
    let reports: Vec<_> = outcomes.iter().map(|o| o.report.clone()).collect();
    let report = match protocol {
        Protocol::Hde => {
            let mut it = reports.into_iter();
            aggregate_hde(it.next().expect("two folds"), it.next().expect("two folds"))?
        }
        _ => pooled_report(reports)?,
    };
    Ok(Evaluation {
        dataset: ds,
        folds: outcomes,
        report,
    })
}

/// Writes `report_<stem>.json`, `confusion_<stem>.csv` and one `loss_<stem>_<fold>.csv` per fold.
pub fn write_evaluation(cfg: &RunConfig, dir: &Path, protocol: Protocol, ev: &Evaluation) -> Result<Vec<PathBuf>> {
    let stem = format!("{}_{}_s{}", protocol.name(), cfg.variant().name(), cfg.seed);
    let histories: Vec<_> = ev
        .folds
        .iter()
        .map(|f| json!({ "fold_id": f.report.fold_id, "history": f.history }))
        .collect();
    let report = json!({
        "protocol": protocol.name(),
        "variant": cfg.variant().name(),
        "seed": cfg.seed,
        "config": cfg,
        "dataset": dataset_summary(&ev.dataset),
        "ledger": cfg.model.ledger(ev.dataset.taxonomy().len())?,
        "report": ev.report,
        "training": histories,
    });
    let mut written = vec![
        write_json(&dir.join(format!("report_{stem}.json")), &report)?,
        write_file(
            &dir.join(format!("confusion_{stem}.csv")),
            ev.report.pooled.to_csv(ev.dataset.taxonomy().classes()),
        )?,
    ];
    for f in &ev.folds {
        let name = format!("loss_{stem}_{}.csv", file_safe(&f.report.fold_id));
        written.push(write_file(&dir.join(name), loss_csv(&f.history.losses))?);
    }
    Ok(written)
}

pub fn cmd_evaluate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let ev = evaluate(cfg, &cfg.model, cfg.eval.protocol)?;
    write_evaluation(cfg, &cfg.out, cfg.eval.protocol, &ev)
}

fn lstm_name(hidden: &[usize]) -> String {
    let units: Vec<String> = hidden.iter().map(usize::to_string).collect();
    format!("lstm_{}", units.join("_"))
}

/// Named model configurations compared by the configured ablation axis.
pub fn ablation_cells(cfg: &RunConfig) -> Result<Vec<(String, ElrcnConfig)>> {
    let base = &cfg.model;
    let cells = match cfg.ablation.axis {
        AblationAxis::None => bail!("ablation.axis is not set"),
        AblationAxis::SpatialOnly => cfg
            .ablation
            .spatial_inputs
            .iter()
            .map(|&v| {
                if v == Variant::Pixels {
                    bail!("spatial_only needs an encoder input, not pixels");
                }
                let mut m = base.clone();
                m.variant = v;
                m.lstm_hidden.clear();
                Ok((v.name().to_string(), m))
            })
            .collect::<Result<Vec<_>>>()?,
        AblationAxis::TemporalOnly => {
            let pixel_side = ElrcnConfig::for_preset(base.preset, Variant::Pixels).pipeline.side;
            cfg.ablation
                .lstm_grid
                .iter()
                .map(|h| {
                    let mut m = base.clone();
                    m.variant = Variant::Pixels;
                    m.pipeline.side = pixel_side;
                    m.lstm_hidden = h.clone();
                    (lstm_name(h), m)
                })
                .collect()
        }
        AblationAxis::FcLayer => [FeatureTap::Last, FeatureTap::SecondLast]
            .into_iter()
            .map(|tap| {
                let mut m = base.clone();
                if m.encoder.fc_dims.len() < 2 {
                    let width = m.encoder.fc_dims.last().copied().unwrap_or(64);
                    m.encoder.fc_dims = vec![width, width];
                }
                m.encoder.tap = tap;
                let name = match tap {
                    FeatureTap::Last => "last",
                    FeatureTap::SecondLast => "second_last",
                };
                (name.to_string(), m)
            })
            .collect(),
        AblationAxis::LstmGrid => cfg
            .ablation
            .lstm_grid
            .iter()
            .map(|h| {
                let mut m = base.clone();
                m.lstm_hidden = h.clone();
                (lstm_name(h), m)
            })
            .collect(),
    };
    for (name, m) in &cells {
        m.validate().with_context(|| format!("ablation cell {name}"))?;
    }
    Ok(cells)
}

/// One evaluation per ablation cell under `<out>/ablate/<axis>/<cell>/`, plus a summary CSV.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let axis_dir = cfg.out.join("ablate").join(cfg.ablation.axis.name());
    let protocol = cfg.eval.protocol;
    let mut written = Vec::new();
    let mut summary = String::from("cell,variant,lstm_hidden,f1_macro,uar,war\n");
    for (name, model) in ablation_cells(cfg)? {
        let mut cell_cfg = cfg.clone();
        cell_cfg.model = model;
        let ev = evaluate(&cell_cfg, &cell_cfg.model, protocol)?;
        let m = ev.report.metrics;
        summary.push_str(&format!(
            "{name},{},{},{},{},{}\n",
            cell_cfg.variant().name(),
            lstm_name(&cell_cfg.model.lstm_hidden),
            m.f1_macro,
            m.uar,
            m.war
        ));
        written.extend(write_evaluation(&cell_cfg, &axis_dir.join(&name), protocol, &ev)?);
    }
    written.push(write_file(&axis_dir.join("summary.csv"), summary)?);
    Ok(written)
}

/// Grad-CAM overlay and raw heatmap for one video of the first database.
pub fn cmd_gradcam(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let gc = &cfg.gradcam;
    let video_id = gc.video_id.as_deref().context("gradcam needs gradcam.video_id")?;
    let ck = gc.checkpoint.clone().unwrap_or_else(|| cfg.checkpoint_path());
    let model = ElrcnModel::load(&ck).with_context(|| format!("loading checkpoint {}", ck.display()))?;
    let ds = load_databases(cfg, 1)?.remove(0);
    let Some(sample) = ds.find(video_id) else {
        bail!("unknown video_id {video_id}");
    };
    let pool = thread_pool(1)?;
    let cache = FlowCache::new(cfg.cache_dir());
    let single = Dataset::new(vec![sample.clone()], ds.taxonomy().clone())?;
    let pipeline = &model.config().pipeline;
    let prepared = prepare_all(&single, pipeline, model.variant().needs_motion(), &cache, &pool)?;
    let (inputs, _, _) = model.samples_for(&prepared)?;
    let (input, step) = if model.config().is_recurrent() {
        (inputs[0].clone(), gc.frame_idx)
    } else {
        let input = inputs
            .get(gc.frame_idx)
            .with_context(|| format!("frame_idx {} out of range for {} frames", gc.frame_idx, inputs.len()))?;
        (input.clone(), 0)
    };
    if step >= input.len() {
        bail!("frame_idx {} out of range for {} steps", gc.frame_idx, input.len());
    }
    let class = gc.class.unwrap_or(sample.label);
    let target = GradCamTarget { step, encoder: gc.encoder, class };
    let heatmap = grad_cam(&model, &input, target)?;
    let frame = match prepared[0].enriched.get(gc.frame_idx) {
        Some(ef) => ef.gray.clone(),
        None => prepared[0].tim_frames[gc.frame_idx].clone(),
    };
    let encoder = serde_json::to_value(gc.encoder)?;
    let stem = format!(
        "gradcam_{}_f{}_c{}_{}",
        file_safe(video_id),
        gc.frame_idx,
        class,
        encoder.as_str().unwrap_or("enc")
    );
    let dir = cfg.out.join("gradcam");
    let png = dir.join(format!("{stem}.png"));
    render_overlay(&heatmap, &frame, &png)?;
    let csv = write_file(&dir.join(format!("{stem}.csv")), heatmap.values_csv())?;
    Ok(vec![png, csv])
}
