use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{DataConfig, ExperimentConfig, MaskingKind, Method};
use super::plot::plot_reconstruction;
use super::report::{render_markdown, report_csv_string, sort_rows, ReportRow};
use super::HarnessError;
use crate::dae::{
    build_pairs, from_pairs, hyperparameter_search, train, write_trial_log, DaeModel, PairSplit,
};
use crate::derive_seed;
use crate::masking::{CorruptedPair, CorruptionSpec};
use crate::metrics::error_metrics_matrices;
use crate::surface::{load_csv, Matrix, SurfaceDataset};
use crate::synthetic::generate_synthetic;
use crate::tps::{select_lambda, tps_inpaint};
use crate::tv::tv_inpaint;

/// How much of the pipeline to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Train autoencoders and write checkpoints only.
    Train,
    /// Evaluate every method, loading autoencoders from checkpoints.
    Evaluate,
    /// Train and evaluate.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    pub n_surfaces: usize,
    pub rows: usize,
    pub cols: usize,
    pub scale_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingInfo {
    pub kind: MaskingKind,
    pub spec: CorruptionSpec,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub test_surfaces: Vec<usize>,
    /// SHA-256 of the masked test inputs every method receives.
    pub test_pairs_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRun {
    pub method: Method,
    pub masking: MaskingKind,
    pub wall_seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selected_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_epoch: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs_run: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub masking_seed: u64,
    pub synthetic_seed: u64,
    pub dataset: DatasetInfo,
    pub maskings: Vec<MaskingInfo>,
    pub runs: Vec<MethodRun>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Empty for [`Stage::Train`].
    pub rows: Vec<ReportRow>,
}

/// Raw (unscaled) dataset named by the config.
pub fn load_dataset(cfg: &ExperimentConfig) -> Result<SurfaceDataset, HarnessError> {
    Ok(match &cfg.data {
        DataConfig::Synthetic { n_surfaces } => generate_synthetic(&cfg.synthetic, *n_surfaces)?,
        DataConfig::Csv { path } => load_csv(path)?,
    })
}

/// SHA-256 over the masked inputs (values and masks) of `pairs`, in order.
pub fn hash_pairs(pairs: &[CorruptedPair]) -> String {
    let mut h = Sha256::new();
    for p in pairs {
        h.update((p.surface_index as u64).to_le_bytes());
        h.update((p.replica as u64).to_le_bytes());
        for v in p.masked.values().as_slice() {
            h.update(v.to_le_bytes());
        }
        h.update(
            p.masked
                .mask()
                .iter()
                .map(|&o| o as u8)
                .collect::<Vec<u8>>(),
        );
    }
    hex::encode(h.finalize())
}

/// Scaled dataset plus the train/test pairs for every configured masking kind.
pub fn prepare_pairs(
    cfg: &ExperimentConfig,
) -> Result<(SurfaceDataset, Vec<(MaskingKind, PairSplit)>), HarnessError> {
    cfg.validate()?;
    let data = load_dataset(cfg)?.scale_to_unit()?;
    let (rows, cols) = data.dims();
    let mut out = Vec::new();
    for kind in cfg.masking.kinds() {
        let spec = cfg.masking.spec(kind, rows, cols).expect("configured kind");
        out.push((kind, build_pairs(&data, &cfg.train_config(spec))?));
    }
    Ok((data, out))
}

/// Writes `masks/{kind}.csv` (long format, one row per cell, unobserved
/// values left empty, yields in original units) and returns the paths.
pub fn export_pairs(cfg: &ExperimentConfig) -> Result<Vec<PathBuf>, HarnessError> {
    let (data, splits) = prepare_pairs(cfg)?;
    let sf = data.scale_factor();
    let dir = cfg.out_dir.join("masks");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let mut paths = Vec::new();
    for (kind, split) in splits {
        let path = dir.join(format!("{kind}.csv"));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
        w.write_record([
            "split", "surface", "date", "replica", "rating", "tenor", "truth", "observed",
        ])?;
        let sides = [("train", &split.train), ("test", &split.test)];
        for (side, pairs) in sides {
            for p in pairs.iter() {
                let date = p.target.date().to_string();
                for (i, rating) in data.ratings().labels().iter().enumerate() {
                    for (j, tenor) in data.tenors().tenors().iter().enumerate() {
                        let truth = p.target.values().get(i, j) / sf;
                        let observed = if p.masked.is_observed(i, j) {
                            format!("{}", p.masked.values().get(i, j) / sf)
                        } else {
                            String::new()
                        };
                        w.write_record([
                            side,
                            &p.surface_index.to_string(),
                            &date,
                            &p.replica.to_string(),
                            rating,
                            &tenor.to_string(),
                            &truth.to_string(),
                            &observed,
                        ])?;
                    }
                }
            }
        }
        w.flush().map_err(csv::Error::from)?;
        paths.push(path);
    }
    Ok(paths)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn mse(a: &Matrix, b: &Matrix) -> f64 {
    a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

/// A seeded subset of the training pairs used to pick TV/TPS λ.
fn validation_subset(train: &[CorruptedPair], n: usize, seed: u64) -> Vec<&CorruptedPair> {
    let mut idx: Vec<usize> = (0..train.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n.max(1).min(train.len()));
    idx.sort_unstable();
    idx.into_iter().map(|k| &train[k]).collect()
}

/// Mean reconstruction MSE per λ; a failed fit scores +∞.
fn lambda_scores<E>(
    lambdas: &[f64],
    val: &[&CorruptedPair],
    fit: impl Fn(&CorruptedPair, f64) -> Result<Matrix, E>,
) -> Vec<f64> {
    lambdas
        .iter()
        .map(|&l| {
            let mut total = 0.0;
            for p in val {
                match fit(p, l) {
                    Ok(r) => total += mse(&r, p.target.values()),
                    Err(_) => return f64::INFINITY,
                }
            }
            total / val.len() as f64
        })
        .collect()
}

struct MethodResult {
    recon_scaled: Vec<Matrix>,
    run: MethodRun,
}

fn method_err(method: Method, masking: MaskingKind) -> impl Fn(String) -> HarnessError {
    move |context| HarnessError::Method {
        method,
        masking,
        context,
    }
}

fn run_pointwise(
    cfg: &ExperimentConfig,
    method: Method,
    kind: MaskingKind,
    pairs: &PairSplit,
) -> Result<MethodResult, HarnessError> {
    let err = method_err(method, kind);
    let (lambdas, n_val) = match method {
        Method::Tv => (&cfg.tv.lambdas, cfg.tv.validation_pairs),
        _ => (&cfg.tps.lambdas, cfg.tps.validation_pairs),
    };
    let val = validation_subset(&pairs.train, n_val, derive_seed(cfg.seed, 10 + kind as u64));
    let solver = cfg.tv.solver;
    let fit = |p: &CorruptedPair, l: f64| -> Result<Matrix, String> {
        match method {
            Method::Tv => tv_inpaint(&p.masked, &solver.with_lambda(l))
                .map(|r| r.surface)
                .map_err(|e| e.to_string()),
            _ => tps_inpaint(&p.masked, l).map_err(|e| e.to_string()),
        }
    };
    let scores = lambda_scores(lambdas, &val, fit);
    let best = select_lambda(lambdas, &scores)
        .ok_or_else(|| err("no λ produced a finite validation score".into()))?;
    let lambda = lambdas[best];
    let recon_scaled = pairs
        .test
        .iter()
        .map(|p| {
            fit(p, lambda).map_err(|e| {
                err(format!(
                    "surface {} replica {}: {e}",
                    p.surface_index, p.replica
                ))
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MethodResult {
        recon_scaled,
        run: MethodRun {
            method,
            masking: kind,
            wall_seconds: 0.0,
            selected_lambda: Some(lambda),
            checkpoint: None,
            best_epoch: None,
            epochs_run: None,
        },
    })
}

fn checkpoint_path(out: &Path, method: Method, kind: MaskingKind) -> PathBuf {
    out.join("checkpoints")
        .join(format!("{method}_{kind}.json"))
}

#[allow(clippy::too_many_arguments)]
fn run_dae(
    cfg: &ExperimentConfig,
    method: Method,
    kind: MaskingKind,
    spec: CorruptionSpec,
    pairs: &PairSplit,
    stage: Stage,
    artifacts: &mut Vec<String>,
    expected_hash: &str,
) -> Result<MethodResult, HarnessError> {
    let err = method_err(method, kind);
    let out = &cfg.out_dir;
    let ckpt = checkpoint_path(out, method, kind);
    let rel = |p: &Path| p.strip_prefix(out).unwrap_or(p).display().to_string();
    let model = if stage == Stage::Evaluate {
        if !ckpt.exists() {
            return Err(HarnessError::MissingCheckpoint(ckpt));
        }
        DaeModel::load(&ckpt).map_err(|e| err(format!("loading {}: {e}", ckpt.display())))?
    } else {
        let mut arch = cfg.dae.architecture(method).expect("dae method");
        let mut tcfg = cfg.train_config(spec);
        if cfg.dae.search_budget > 0 {
            let outcome =
                hyperparameter_search(pairs, &arch, &tcfg, &cfg.dae.search, cfg.dae.search_budget)
                    .map_err(|e| err(format!("search: {e}")))?;
            let log = out
                .join("checkpoints")
                .join(format!("{method}_{kind}_trials.csv"));
            let f = fs::File::create(&log).map_err(io_err(&log))?;
            write_trial_log(&outcome.trials, f)?;
            artifacts.push(rel(&log));
            arch = outcome.architecture;
            tcfg = outcome.config;
        }
        let data = from_pairs(pairs.clone(), &arch)?;
        let model = train(&data, &tcfg).map_err(|e| err(e.to_string()))?;
        model.save(&ckpt)?;
        artifacts.push(rel(&ckpt));
        artifacts.push(rel(&ckpt.with_extension("bin")));
        let log = out
            .join("checkpoints")
            .join(format!("{method}_{kind}_training.csv"));
        let f = fs::File::create(&log).map_err(io_err(&log))?;
        model.write_history(f)?;
        artifacts.push(rel(&log));
        model
    };
    let recon_scaled = if stage == Stage::Train {
        Vec::new()
    } else {
        let got = hash_pairs(&pairs.test);
        if got != expected_hash {
            return Err(HarnessError::Fairness {
                method,
                expected: expected_hash.to_string(),
                got,
            });
        }
        let masked: Vec<_> = pairs.test.iter().map(|p| &p.masked).collect();
        model
            .reconstruct_scaled(&masked)
            .map_err(|e| err(e.to_string()))?
    };
    Ok(MethodResult {
        recon_scaled,
        run: MethodRun {
            method,
            masking: kind,
            wall_seconds: 0.0,
            selected_lambda: None,
            checkpoint: Some(rel(&ckpt)),
            best_epoch: Some(model.best_epoch),
            epochs_run: Some(model.history.len()),
        },
    })
}

/// Runs the configured experiment and writes `report.csv`, `report.md`,
/// `manifest.json`, `plots/` and `checkpoints/` under `cfg.out_dir`.
pub fn run_experiment(cfg: &ExperimentConfig, stage: Stage) -> Result<RunOutcome, HarnessError> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    for sub in ["plots", "checkpoints"] {
        let d = out.join(sub);
        fs::create_dir_all(&d).map_err(io_err(&d))?;
    }
    let raw = load_dataset(cfg)?;
    let data = raw.scale_to_unit()?;
    let (rows, cols) = data.dims();
    let sf = data.scale_factor();
    let methods: Vec<Method> = cfg
        .sorted_methods()
        .into_iter()
        .filter(|m| stage != Stage::Train || m.is_dae())
        .collect();

    let mut maskings = Vec::new();
    let mut runs = Vec::new();
    let mut report_rows = Vec::new();
    let mut artifacts = Vec::new();
    let mut plot_jobs: BTreeMap<(MaskingKind, Method), Vec<Matrix>> = BTreeMap::new();
    let mut split_by_kind = BTreeMap::new();

    for kind in cfg.masking.kinds() {
        let spec = cfg.masking.spec(kind, rows, cols).expect("configured kind");
        let pairs = build_pairs(&data, &cfg.train_config(spec))?;
        let expected = hash_pairs(&pairs.test);
        maskings.push(MaskingInfo {
            kind,
            spec,
            train_pairs: pairs.train.len(),
            test_pairs: pairs.test.len(),
            test_surfaces: pairs.test_surfaces.clone(),
            test_pairs_sha256: expected.clone(),
        });
        let truth: Vec<Matrix> = pairs
            .test
            .iter()
            .map(|p| p.target.values().map(|v| v / sf))
            .collect();

        for &method in &methods {
            let started = Instant::now();
            let mut result = if method.is_dae() {
                run_dae(
                    cfg,
                    method,
                    kind,
                    spec,
                    &pairs,
                    stage,
                    &mut artifacts,
                    &expected,
                )?
            } else {
                if hash_pairs(&pairs.test) != expected {
                    return Err(HarnessError::Fairness {
                        method,
                        expected: expected.clone(),
                        got: hash_pairs(&pairs.test),
                    });
                }
                run_pointwise(cfg, method, kind, &pairs)?
            };
            result.run.wall_seconds = started.elapsed().as_secs_f64();
            runs.push(result.run);
            if stage == Stage::Train {
                continue;
            }
            let recon: Vec<Matrix> = result
                .recon_scaled
                .iter()
                .map(|m| m.map(|v| v / sf))
                .collect();
            let t: Vec<&Matrix> = truth.iter().collect();
            let r: Vec<&Matrix> = recon.iter().collect();
            let metrics = error_metrics_matrices(&t, &r).map_err(|e| HarnessError::Method {
                method,
                masking: kind,
                context: e.to_string(),
            })?;
            report_rows.push(ReportRow {
                method,
                masking: kind,
                metrics,
            });
            plot_jobs.insert(
                (kind, method),
                recon.into_iter().take(cfg.report.plots).collect(),
            );
        }
        split_by_kind.insert(kind, pairs);
    }

    if stage != Stage::Train {
        for ((kind, method), recons) in &plot_jobs {
            let pairs = &split_by_kind[kind];
            for (k, recon) in recons.iter().enumerate() {
                let p = &pairs.test[k];
                let path = out.join("plots").join(format!("{method}_{kind}_{k}.svg"));
                let title = format!(
                    "{method}, {kind} masking, surface {} ({}) replica {}",
                    p.surface_index,
                    p.target.date(),
                    p.replica
                );
                plot_reconstruction(
                    &p.target.values().map(|v| v / sf),
                    &p.masked.scaled(1.0 / sf),
                    recon,
                    data.ratings(),
                    data.tenors(),
                    &title,
                    &path,
                )?;
                artifacts.push(format!("plots/{method}_{kind}_{k}.svg"));
            }
        }
        sort_rows(&mut report_rows);
        let csv_path = out.join("report.csv");
        write_file(&csv_path, report_csv_string(&report_rows))?;
        artifacts.push("report.csv".into());
        if cfg.report.write_markdown {
            let md = out.join("report.md");
            write_file(&md, render_markdown(&report_rows))?;
            artifacts.push("report.md".into());
        }
    }

    let manifest = RunManifest {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        masking_seed: cfg.masking.seed,
        synthetic_seed: cfg.synthetic.seed,
        dataset: DatasetInfo {
            source: match &cfg.data {
                DataConfig::Synthetic { .. } => "synthetic".into(),
                DataConfig::Csv { path } => path.display().to_string(),
            },
            n_surfaces: data.len(),
            rows,
            cols,
            scale_factor: sf,
        },
        maskings,
        runs,
        artifacts,
    };
    let mpath = out.join("manifest.json");
    let mut manifest = manifest;
    manifest.artifacts.push("manifest.json".into());
    write_file(&mpath, serde_json::to_string_pretty(&manifest)?)?;
    Ok(RunOutcome {
        manifest,
        rows: report_rows,
    })
}
