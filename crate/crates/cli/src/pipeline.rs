//! Shared plumbing: dataset sourcing, cached preprocessing and per-fold training.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use elrcn_core::dataset::{load_manifest, synthesize_dataset, Dataset, SynthSpec, MANIFEST_FILE};
use elrcn_core::elrcn::{prepare_sample_with, ElrcnConfig, ElrcnModel, PipelineConfig, PreparedSample};
use elrcn_core::eval::{ConfusionMatrix, FoldReport, FoldSplit};
use elrcn_core::nn::{fit, TrainHistory, Trainable};
use rayon::prelude::*;
use serde::Serialize;

use crate::cache::FlowCache;
use crate::config::RunConfig;

/// Synthetic database specs: the configured one, plus a second for two-database protocols.
pub fn synth_specs(cfg: &RunConfig, count: usize) -> Vec<(SynthSpec, u64)> {
    let mut specs = vec![(cfg.data.synth.clone(), cfg.seed)];
    if count > 1 {
        let second = SynthSpec {
            database_id: cfg.data.second_database_id.clone(),
            ..cfg.data.synth.clone()
        };
        specs.push((second, cfg.seed.wrapping_add(1)));
    }
    specs
}

fn manifest_path(dir: &Path) -> PathBuf {
    if dir.is_dir() {
        dir.join(MANIFEST_FILE)
    } else {
        dir.to_path_buf()
    }
}

/// Loads exactly `count` databases from `data.dirs`, or synthesizes them when none are listed.
pub fn load_databases(cfg: &RunConfig, count: usize) -> Result<Vec<Dataset>> {
    if cfg.data.dirs.is_empty() {
        return synth_specs(cfg, count)
            .iter()
            .map(|(spec, seed)| synthesize_dataset(spec, *seed).context("synthesizing dataset"))
            .collect();
    }
    if cfg.data.dirs.len() != count {
        bail!(
            "protocol {} needs {count} database(s), {} configured in data.dirs",
            cfg.eval.protocol.name(),
            cfg.data.dirs.len()
        );
    }
    cfg.data
        .dirs
        .iter()
        .map(|d| {
            let path = manifest_path(d);
            load_manifest(&path).with_context(|| format!("loading {}", path.display()))
        })
        .collect()
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building thread pool")
}

/// Prepares every video (in dataset order), computing flows through the cache.
pub fn prepare_all(
    ds: &Dataset,
    pipeline: &PipelineConfig,
    with_motion: bool,
    cache: &FlowCache,
    pool: &rayon::ThreadPool,
) -> Result<Vec<PreparedSample>> {
    let prepared = pool.install(|| {
        ds.samples()
            .par_iter()
            .map(|s| {
                let mut flow = |a: &_, b: &_| cache.flow(a, b, &pipeline.flow);
                prepare_sample_with(s, pipeline, with_motion, &mut flow)
            })
            .collect::<elrcn_core::error::Result<Vec<_>>>()
    })?;
    Ok(prepared)
}

/// Builds a model for `model_cfg`, optionally seeds its encoders, and trains it on `train`.
pub fn train_model(
    cfg: &RunConfig,
    model_cfg: &ElrcnConfig,
    ds: &Dataset,
    train: &[PreparedSample],
) -> Result<(ElrcnModel, TrainHistory)> {
    let mut model = ElrcnModel::new(model_cfg.clone(), ds.taxonomy())?;
    if let Some(path) = &cfg.pretrained {
        model
            .load_encoder_weights(path)
            .with_context(|| format!("loading pretrained encoder {}", path.display()))?;
    }
    model.fit_gray_mean(train);
    let (inputs, labels, _) = model.samples_for(train)?;
    let history = fit(&mut model, &inputs, &labels, &cfg.train)?;
    Ok((model, history))
}

pub fn confusion(model: &ElrcnModel, test: &[PreparedSample]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.n_classes());
    let (inputs, labels, _) = model.samples_for(test)?;
    for (x, &y) in inputs.iter().zip(&labels) {
        cm.add(y, model.predict(x)?);
    }
    Ok(cm)
}

#[derive(Clone, Debug, Serialize)]
pub struct FoldOutcome {
    pub report: FoldReport,
    pub history: TrainHistory,
}

pub fn run_fold(
    cfg: &RunConfig,
    model_cfg: &ElrcnConfig,
    ds: &Dataset,
    prepared: &[PreparedSample],
    split: &FoldSplit,
) -> Result<FoldOutcome> {
    let pick = |idx: &[usize]| idx.iter().map(|&i| prepared[i].clone()).collect::<Vec<_>>();
    let (train, test) = (pick(&split.train), pick(&split.test));
    let (model, history) =
        train_model(cfg, model_cfg, ds, &train).with_context(|| format!("fold {}", split.fold_id))?;
    let n_train = model.samples_for(&train)?.0.len();
    let cm = confusion(&model, &test)?;
    Ok(FoldOutcome {
        report: FoldReport::new(split.fold_id.clone(), n_train, cm),
        history,
    })
}

/// Trains and tests every fold; results keep fold order regardless of `jobs`.
pub fn run_folds(
    cfg: &RunConfig,
    model_cfg: &ElrcnConfig,
    ds: &Dataset,
    prepared: &[PreparedSample],
    folds: &[FoldSplit],
    pool: &rayon::ThreadPool,
) -> Result<Vec<FoldOutcome>> {
    pool.install(|| {
        folds
            .par_iter()
            .map(|f| run_fold(cfg, model_cfg, ds, prepared, f))
            .collect()
    })
}
