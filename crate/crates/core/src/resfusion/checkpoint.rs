//! A checkpoint is a directory holding one MMFT file per tensor,
//! `manifest.csv` (`name,trainable,dims`) and `checkpoint.toml` with the
//! settings needed to rebuild the model skeleton. Values are stored as
//! 32-bit floats.

use std::path::Path;

use ndarray::{Array2, ArrayViewD, ArrayViewMutD};
use serde::{Deserialize, Serialize};

use super::train::{Classifier, TrainedModel};
use super::{build, ResFusionConfig};
use crate::error::{Error, Result};
use crate::fusion::{AttentionConfig, FusionStats, Modalities, PoolMode};
use crate::io::{read_mmft, write_mmft};
use crate::nn::{Linear, Parameters, Rng};
use crate::tensor::{NormStats, Tensor};

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Meta {
    format_version: u32,
    kind: String,
    input_dim: usize,
    /// Kept as text so the full 64-bit range survives TOML.
    seed: String,
    hidden_dim: usize,
    n_blocks: usize,
    dropout_p: f64,
    n_classes: usize,
    use_residual: bool,
    use_attention: bool,
    use_dropout: bool,
    use_qkv_conv: bool,
    modalities: Modalities,
    pool: PoolMode,
    d_cap: usize,
    stats_epsilon: f64,
}

fn stats_arrays(stats: &FusionStats) -> Vec<(String, &Array2<f64>)> {
    let mut out = Vec::new();
    for (name, s) in [("ct", &stats.ct), ("pet", &stats.pet), ("clinical", &stats.clinical)] {
        out.push((format!("stats.{name}.mean"), &s.mean));
        out.push((format!("stats.{name}.std"), &s.std));
    }
    out
}

fn classifier_visit(c: &Classifier, f: &mut dyn FnMut(&str, bool, ArrayViewD<'_, f64>)) {
    match c {
        Classifier::Mfcn(p) => p.visit("", f),
        Classifier::Linear(l) => l.visit("", f),
    }
}

fn classifier_visit_mut(c: &mut Classifier, f: &mut dyn FnMut(&str, bool, ArrayViewMutD<'_, f64>)) {
    match c {
        Classifier::Mfcn(p) => p.visit_mut("", f),
        Classifier::Linear(l) => l.visit_mut("", f),
    }
}

fn dims_text(shape: &[usize]) -> String {
    shape.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

pub fn save_checkpoint(model: &TrainedModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (kind, input_dim) = match &model.classifier {
        Classifier::Mfcn(p) => ("mfcn", p.input_dim()),
        Classifier::Linear(l) => ("linear", l.in_dim()),
    };
    let cfg = &model.config;
    let meta = Meta {
        format_version: FORMAT_VERSION,
        kind: kind.into(),
        input_dim,
        seed: cfg.seed.to_string(),
        hidden_dim: cfg.hidden_dim,
        n_blocks: cfg.n_blocks,
        dropout_p: cfg.dropout_p,
        n_classes: cfg.n_classes,
        use_residual: cfg.use_residual,
        use_attention: cfg.use_attention,
        use_dropout: cfg.use_dropout,
        use_qkv_conv: cfg.use_qkv_conv,
        modalities: model.modalities,
        pool: model.attention.pool,
        d_cap: model.attention.d_cap,
        stats_epsilon: model.stats.ct.epsilon,
    };
    let text = toml::to_string(&meta).map_err(|e| Error::Config(e.to_string()))?;
    let meta_path = dir.join("checkpoint.toml");
    std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))?;

    let mut rows = vec!["name,trainable,dims".to_string()];
    let mut failure = None;
    let mut write = |name: &str, trainable: bool, view: ArrayViewD<'_, f64>| {
        rows.push(format!("{name},{trainable},{}", dims_text(view.shape())));
        if view.is_empty() || failure.is_some() {
            return;
        }
        let result =
            Tensor::from_array(view.to_owned()).and_then(|t| write_mmft(&t, &dir.join(format!("{name}.mmft"))));
        if let Err(e) = result {
            failure = Some(e);
        }
    };
    classifier_visit(&model.classifier, &mut write);
    for (name, a) in stats_arrays(&model.stats) {
        write(&name, false, a.view().into_dyn());
    }
    if let Some(e) = failure {
        return Err(e);
    }
    let manifest = dir.join("manifest.csv");
    std::fs::write(&manifest, rows.join("\n") + "\n").map_err(|e| Error::io(&manifest, e))
}

fn read_into(dir: &Path, name: &str, mut target: ArrayViewMutD<'_, f64>) -> Result<()> {
    if target.is_empty() {
        return Ok(());
    }
    let path = dir.join(format!("{name}.mmft"));
    let t = read_mmft(&path)?;
    if t.dims() != target.shape() {
        return Err(Error::Consistency(format!(
            "{}: stored dims {:?}, model expects {:?}",
            path.display(),
            t.dims(),
            target.shape()
        )));
    }
    target.iter_mut().zip(t.data()).for_each(|(dst, &src)| *dst = src);
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<TrainedModel> {
    let meta_path = dir.join("checkpoint.toml");
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = toml::from_str(&text).map_err(|e| Error::Format {
        path: meta_path.clone(),
        reason: e.to_string(),
    })?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::Format {
            path: meta_path,
            reason: format!("unsupported checkpoint version {}", meta.format_version),
        });
    }
    let config = ResFusionConfig {
        hidden_dim: meta.hidden_dim,
        n_blocks: meta.n_blocks,
        dropout_p: meta.dropout_p,
        n_classes: meta.n_classes,
        use_residual: meta.use_residual,
        use_attention: meta.use_attention,
        use_dropout: meta.use_dropout,
        use_qkv_conv: meta.use_qkv_conv,
        seed: meta.seed.parse().map_err(|_| Error::Format {
            path: meta_path.clone(),
            reason: format!("bad seed {:?}", meta.seed),
        })?,
    };
    let mut classifier = match meta.kind.as_str() {
        "mfcn" => Classifier::Mfcn(build(&config, meta.input_dim, &mut Rng::new(0))?),
        "linear" => Classifier::Linear(Linear::zeros(config.n_classes, meta.input_dim)),
        other => {
            return Err(Error::Format {
                path: meta_path,
                reason: format!("unknown model kind {other:?}"),
            })
        }
    };

    let manifest_path = dir.join("manifest.csv");
    let manifest = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let mut listed: Vec<(String, String)> = manifest
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| {
            let mut parts = l.split(',');
            let name = parts.next().unwrap_or_default().to_string();
            let dims = parts.nth(1).unwrap_or_default().to_string();
            (name, dims)
        })
        .collect();

    let mut expected = Vec::new();
    let mut failure = None;
    classifier_visit_mut(&mut classifier, &mut |name, _, view| {
        expected.push((name.to_string(), dims_text(view.shape())));
        if failure.is_none() {
            failure = read_into(dir, name, view).err();
        }
    });
    if let Some(e) = failure {
        return Err(e);
    }
    let stats_shape = |name: &str| -> Result<(usize, usize)> {
        let key = format!("stats.{name}.mean");
        let dims = listed
            .iter()
            .find(|(n, _)| *n == key)
            .map(|(_, d)| d.clone())
            .ok_or_else(|| Error::Consistency(format!("{} does not list {key}", manifest_path.display())))?;
        let parts: Vec<usize> = dims.split('x').filter_map(|p| p.parse().ok()).collect();
        match parts.as_slice() {
            [s, b] => Ok((*s, *b)),
            _ => Err(Error::Consistency(format!("bad dims {dims:?} for {key}"))),
        }
    };
    let mut load_stats = |name: &str| -> Result<NormStats> {
        let (s, b) = stats_shape(name)?;
        let mut stats = NormStats::identity(s, b);
        stats.epsilon = meta.stats_epsilon;
        for (field, array) in [("mean", &mut stats.mean), ("std", &mut stats.std)] {
            let key = format!("stats.{name}.{field}");
            read_into(dir, &key, array.view_mut().into_dyn())?;
            expected.push((key, dims_text(&[s, b])));
        }
        Ok(stats)
    };
    let stats = FusionStats {
        ct: load_stats("ct")?,
        pet: load_stats("pet")?,
        clinical: load_stats("clinical")?,
    };
    listed.sort();
    expected.sort();
    if listed != expected {
        return Err(Error::Consistency(format!(
            "{} does not match the model layout",
            manifest_path.display()
        )));
    }
    Ok(TrainedModel {
        config,
        attention: AttentionConfig {
            pool: meta.pool,
            d_cap: meta.d_cap,
        },
        modalities: meta.modalities,
        stats,
        classifier,
    })
}
