use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use phifno_core::dataset::{self, Dataset};
use phifno_core::fno::{self, FnoParams};
use phifno_core::mesh::{masks_for, zero_level_points};
use phifno_core::phifem::{convergence_study, reconstruct_u};
use phifno_core::training::{self, summarize, Summary, TrainConfig, TrainSample, TrainState};
use phifno_core::{geometry, Execution, FieldGrid};
use serde::Serialize;

use crate::config::{config_error, PredictionSource, RunConfig, SplitName};

fn execution(cfg: &RunConfig) -> Execution {
    if cfg.deterministic {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn generate(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let d = &cfg.dataset;
    let start = Instant::now();
    let ds = dataset::generate(d.n_samples, d.nx, d.ny, cfg.seed, d.sigma_d, &d.generator, execution(cfg))?;
    dataset::write_dataset(&ds, out)?;
    cfg.write_snapshot(out)?;
    println!(
        "generated {} samples at {}x{} ({} resampled draws) in {:.2} s -> {}",
        ds.len(),
        d.nx,
        d.ny,
        ds.failures.len(),
        start.elapsed().as_secs_f64(),
        out.display()
    );
    Ok(())
}

struct Splits {
    all: Dataset,
    train: Dataset,
    val: Dataset,
    test: Dataset,
}

fn load_splits(cfg: &RunConfig) -> anyhow::Result<Splits> {
    let all = dataset::read_dataset(&cfg.dataset.path)?;
    let s = cfg.dataset.split;
    if s.train + s.val + s.test > all.len() {
        return Err(config_error(format!(
            "split sizes {}/{}/{} exceed the {} stored samples",
            s.train,
            s.val,
            s.test,
            all.len()
        )));
    }
    let (train, val, test) = dataset::split(&all, (s.train, s.val, s.test), s.seed)?;
    Ok(Splits { all, train, val, test })
}

fn train_samples(d: &Dataset) -> anyhow::Result<Vec<TrainSample>> {
    d.samples
        .iter()
        .map(|s| Ok(TrainSample::new(s.f.clone(), s.phi.clone(), s.g.clone(), s.w.clone())?))
        .collect()
}

fn train_config(cfg: &RunConfig) -> TrainConfig {
    TrainConfig { seed: cfg.seed, execution: execution(cfg), ..cfg.training }
}

#[derive(Serialize)]
struct TrainSummary {
    epochs: usize,
    best_epoch: Option<usize>,
    best_val_loss: Option<f64>,
    val_e1: Summary,
}

pub fn train(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let splits = load_splits(cfg)?;
    let train_set = train_samples(&splits.train)?;
    let val_set = train_samples(&splits.val)?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(config_error("training needs nonempty train and val splits"));
    }
    cfg.model.check_grid(splits.all.nx, splits.all.ny).map_err(|e| config_error(e.to_string()))?;
    let tcfg = train_config(cfg);
    cfg.write_snapshot(out)?;
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;

    let state = match &cfg.train.resume {
        Some(path) => {
            let s = TrainState::load(path)?;
            if s.params.hyper != cfg.model {
                return Err(config_error("resumed state was trained with different model hyperparameters"));
            }
            println!("resuming at epoch {}", s.next_epoch);
            s
        }
        None => training::initial_state(&train_set, &cfg.model, &tcfg)?,
    };
    let every = cfg.train.checkpoint_every;
    let start = Instant::now();
    let mut hook = |s: &TrainState| -> phifno_core::Result<()> {
        let row = s.log.last().expect("one row per epoch");
        println!(
            "epoch {:>5}  train {:.6e}  val {:.6e}  E1 {:.4}  lr {:.2e}{}",
            row.epoch,
            row.train_loss,
            row.val_loss,
            row.val_e1_mean,
            row.lr,
            if row.is_best { "  *" } else { "" }
        );
        if every > 0 && s.next_epoch.is_multiple_of(every) {
            fno::save_checkpoint(&s.params, &ckpt_dir.join(format!("epoch_{:05}.ckpt", s.next_epoch)))?;
            s.save(&out.join("state.bin"))?;
            training::write_epoch_log(&s.log, &out.join("epochs.csv"))?;
        }
        Ok(())
    };
    let outcome = training::train_from(&train_set, &val_set, &tcfg, state, &mut hook)?;
    let s = &outcome.state;
    fno::save_checkpoint(&outcome.best, &out.join("best.ckpt"))?;
    fno::save_checkpoint(&s.params, &out.join("last.ckpt"))?;
    s.save(&out.join("state.bin"))?;
    training::write_epoch_log(&s.log, &out.join("epochs.csv"))?;
    let eval = training::evaluate(&outcome.best, &val_set, tcfg.execution)?;
    let summary = TrainSummary {
        epochs: s.log.len(),
        best_epoch: s.best_epoch,
        best_val_loss: s.best_val_loss,
        val_e1: eval.summary,
    };
    write_json(&out.join("summary.json"), &summary)?;
    println!(
        "trained {} epochs in {:.1} s; best epoch {:?}, validation E1 median {:.4e}",
        summary.epochs,
        start.elapsed().as_secs_f64(),
        summary.best_epoch,
        summary.val_e1.median
    );
    Ok(())
}

#[derive(Serialize)]
struct CheckpointSummary {
    checkpoint: String,
    split: SplitName,
    summary: Summary,
}

pub fn evaluate(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let splits = load_splits(cfg)?;
    let exec = execution(cfg);
    let ev = &cfg.evaluate;
    let chosen = match ev.split {
        SplitName::Train => &splits.train,
        SplitName::Val => &splits.val,
        SplitName::Test => &splits.test,
        SplitName::All => &splits.all,
    };
    if chosen.is_empty() {
        return Err(config_error("the selected split is empty"));
    }
    let samples = train_samples(chosen)?;
    let indices: Vec<usize> = chosen.samples.iter().map(|s| s.record.index).collect();

    let hausdorff = if ev.hausdorff {
        let reference: Vec<Vec<[f64; 2]>> = splits.train.samples.iter().map(|s| zero_level_points(&s.phi)).collect();
        if reference.is_empty() {
            return Err(config_error("hausdorff column needs a nonempty train split"));
        }
        let per_sample = exec.map_slice(&samples, |s| -> phifno_core::Result<f64> {
            let pts = zero_level_points(&s.phi);
            let mut best = f64::INFINITY;
            for r in &reference {
                best = best.min(geometry::hausdorff_distance(&pts, r)?);
            }
            Ok(best)
        });
        Some(per_sample.into_iter().collect::<phifno_core::Result<Vec<f64>>>()?)
    } else {
        None
    };

    let runs: Vec<(String, Vec<f64>, Vec<f64>)> = match ev.prediction {
        PredictionSource::GroundTruth => {
            let mut e1 = Vec::with_capacity(samples.len());
            for s in &samples {
                e1.push(training::metric_e1(&s.u, &s.u, &s.masks.s0)?);
            }
            vec![("ground_truth".into(), e1, vec![0.0; samples.len()])]
        }
        PredictionSource::Model => {
            let paths: Vec<PathBuf> = if ev.checkpoints.is_empty() { vec![cfg.out.join("best.ckpt")] } else { ev.checkpoints.clone() };
            let mut runs = Vec::new();
            for path in paths {
                let params = fno::load_checkpoint(&path)?;
                params.hyper.check_grid(chosen.nx, chosen.ny).map_err(|e| config_error(e.to_string()))?;
                let r = training::evaluate(&params, &samples, exec)?;
                runs.push((path.display().to_string(), r.e1, r.seconds));
            }
            runs
        }
    };

    std::fs::create_dir_all(out)?;
    cfg.write_snapshot(out)?;
    let csv_path = out.join("evaluation.csv");
    let mut csv = std::io::BufWriter::new(std::fs::File::create(&csv_path)?);
    write!(csv, "checkpoint,index,e1,inference_seconds")?;
    if hausdorff.is_some() {
        write!(csv, ",hausdorff")?;
    }
    writeln!(csv)?;
    let mut summaries = Vec::new();
    for (name, e1, secs) in &runs {
        for k in 0..e1.len() {
            write!(csv, "{},{},{},{}", name, indices[k], e1[k], secs[k])?;
            if let Some(h) = &hausdorff {
                write!(csv, ",{}", h[k])?;
            }
            writeln!(csv)?;
        }
        let summary = summarize(e1)?;
        println!(
            "{name}: n={} mean {:.4e} q1 {:.4e} median {:.4e} q3 {:.4e}",
            summary.count, summary.mean, summary.q1, summary.median, summary.q3
        );
        summaries.push(CheckpointSummary { checkpoint: name.clone(), split: ev.split, summary });
    }
    csv.flush()?;
    write_json(&out.join("evaluation_summary.json"), &summaries)
}

pub fn convergence(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let c = &cfg.convergence;
    let mut res = c.resolutions.clone();
    res.sort_unstable();
    res.dedup();
    if res.len() < 3 || res[0] < 4 {
        return Err(config_error("convergence needs at least three distinct resolutions of at least 4"));
    }
    let rows = convergence_study(&c.case.case(), &c.domain.field()?, &res, c.sigma_d, execution(cfg))?;
    std::fs::create_dir_all(out)?;
    cfg.write_snapshot(out)?;
    let mut text = String::from("n,h,error,order\n");
    for r in &rows {
        let order = r.order.map(|o| o.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{},{},{}\n", r.n, r.h, r.error, order));
        println!("n {:>4}  h {:.4e}  error {:.4e}  order {}", r.n, r.h, r.error, r.order.map(|o| format!("{o:.3}")).unwrap_or("-".into()));
    }
    std::fs::write(out.join("convergence.csv"), text)?;
    Ok(())
}

fn read_grid(path: &Path) -> anyhow::Result<FieldGrid> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading grid {}", path.display()))?;
    let raw: FieldGrid = serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    Ok(FieldGrid::new(raw.nx, raw.ny, raw.values)?)
}

#[derive(Serialize)]
struct PredictReport {
    source: String,
    checkpoint: String,
    nx: usize,
    ny: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    e1: Option<f64>,
}

pub fn predict(cfg: &RunConfig, out: &Path) -> anyhow::Result<()> {
    let p = &cfg.predict;
    let (source, f, phi, g, w_ref) = match (&p.inputs, p.index) {
        (Some(_), Some(_)) => return Err(config_error("predict takes either inputs or index, not both")),
        (None, None) => return Err(config_error("predict needs predict.index or predict.inputs")),
        (Some(raw), None) => {
            let w = raw.w.as_deref().map(read_grid).transpose()?;
            ("raw grids".to_string(), read_grid(&raw.f)?, read_grid(&raw.phi)?, read_grid(&raw.g)?, w)
        }
        (None, Some(i)) => {
            let ds = dataset::read_dataset(&cfg.dataset.path)?;
            let s = ds
                .samples
                .get(i)
                .ok_or_else(|| config_error(format!("index {i} out of range for {} samples", ds.len())))?;
            (format!("dataset sample {i}"), s.f.clone(), s.phi.clone(), s.g.clone(), Some(s.w.clone()))
        }
    };
    let ckpt = p.checkpoint.clone().unwrap_or_else(|| cfg.out.join("best.ckpt"));
    let params: FnoParams = fno::load_checkpoint(&ckpt)?;
    params.hyper.check_grid(phi.nx, phi.ny).map_err(|e| config_error(e.to_string()))?;
    let (net, u) = training::predict(&params, &f, &phi, &g)?;
    let e1 = match w_ref {
        Some(w) => {
            let u_ref = reconstruct_u(&phi, &w, &g)?;
            Some(training::metric_e1(&u_ref, &u, &masks_for(&phi)?.s0)?)
        }
        None => None,
    };
    std::fs::create_dir_all(out)?;
    cfg.write_snapshot(out)?;
    if !params.hyper.predict_u {
        write_json(&out.join("w.json"), &net)?;
    }
    write_json(&out.join("u.json"), &u)?;
    let report = PredictReport { source, checkpoint: ckpt.display().to_string(), nx: phi.nx, ny: phi.ny, e1 };
    write_json(&out.join("report.json"), &report)?;
    match e1 {
        Some(e) => println!("{}: E1 = {e:.4e}", report.source),
        None => println!("{}: prediction written (no reference)", report.source),
    }
    Ok(())
}
