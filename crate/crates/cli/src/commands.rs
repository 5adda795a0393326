use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use kgadv_core::advtrain::{self, best_config_search, fit, FitOptions, Grid, Leaderboard, Model, SearchOutcome, TrainConfig};
use kgadv_core::evalkit::{evaluate_classification, evaluate_link_prediction};
use kgadv_core::kgdata::{load_classification_dataset, ClassificationDataset};
use kgadv_core::numcore::{read_checkpoint, Checkpoint};
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::manifest::{unix_now, vocab_digest, write_atomic, write_atomic_io, ConfigSnapshot, DatasetRecord, FileRecord, RunManifest, VERSION, VOCAB_META};
use crate::{EvalLpArgs, EvalSplit, EvalTcArgs, ExportArgs, GridArgs, Task, TrainArgs};

const METRICS_HEADER: &str = "epoch\tloss_d\tloss_g\tvalid\tseconds";

struct Dataset {
    data: ClassificationDataset,
    record: DatasetRecord,
}

fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Data(format!("{}: not a dataset directory", dir.display())));
    }
    let data = load_classification_dataset(dir)?;
    if data.dropped > 0 {
        log::warn!("{} labeled rows name entities or relations absent from the graph; skipped", data.dropped);
    }
    let files = ["train.txt", "valid.txt", "test.txt"]
        .iter()
        .map(|f| FileRecord::of(&dir.join(f)))
        .collect::<Result<Vec<_>, _>>()?;
    let record = DatasetRecord {
        dir: dir.display().to_string(),
        files,
        vocab_sha256: vocab_digest(&data.kg.vocab),
        entities: data.kg.num_entities(),
        relations: data.kg.num_relations(),
    };
    Ok(Dataset { data, record })
}

fn validated(config: TrainConfig) -> Result<TrainConfig, CliError> {
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

/// Higher is better: filtered MRR on original-direction validation triples,
/// or validation accuracy with thresholds fitted on the same split.
fn validation_metric(model: &Model, ds: &ClassificationDataset, task: Task) -> advtrain::Result<f64> {
    let wrap = |e: kgadv_core::evalkit::EvalError| advtrain::TrainError::InvalidConfig(format!("validation: {e}"));
    match task {
        Task::Lp => Ok(evaluate_link_prediction(model, &ds.kg, ds.kg.valid_original()).map_err(wrap)?.all.mrr),
        Task::Tc => Ok(evaluate_classification(model, &ds.valid, &ds.valid).map_err(wrap)?.valid_accuracy),
    }
}

fn require_validation(ds: &ClassificationDataset, task: Task) -> Result<(), CliError> {
    let empty = match task {
        Task::Lp => ds.kg.valid_original().is_empty(),
        Task::Tc => ds.valid.is_empty(),
    };
    if empty {
        return Err(CliError::Data("validation split is empty".into()));
    }
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<(), CliError> {
    let started = unix_now();
    let config = validated(a.model.config())?;
    let ds = load_dataset(&a.data.data)?;
    if a.eval_every > 0 {
        require_validation(&ds.data, a.task)?;
    }
    create_dir(&a.out)?;
    let vocab = &ds.data.kg.vocab;
    let ent_path = a.out.join("entities.tsv");
    let rel_path = a.out.join("relations.tsv");
    vocab.entities.write_tsv(&ent_path).map_err(|e| CliError::io(&ent_path, e))?;
    vocab.relations.write_tsv(&rel_path).map_err(|e| CliError::io(&rel_path, e))?;

    let ckpt = a.out.join("model.ckpt");
    let metrics = a.out.join("metrics.tsv");
    let mut log = BufWriter::new(fs::File::create(&metrics).map_err(|e| CliError::io(&metrics, e))?);
    writeln!(log, "{METRICS_HEADER}").map_err(|e| CliError::io(&metrics, e))?;

    let mut model = Model::init(ds.data.kg.num_entities(), ds.data.kg.num_relations(), &config)?;
    let mut validate = |m: &Model| validation_metric(m, &ds.data, a.task);
    let summary = fit(
        &mut model,
        &ds.data.kg,
        &config,
        FitOptions {
            validate: if a.eval_every > 0 { Some(&mut validate) } else { None },
            eval_every: a.eval_every.max(1),
            patience: a.patience,
            log: Some(&mut log),
            checkpoint: Some((ckpt.clone(), a.checkpoint_every)),
            checkpoint_meta: vec![(VOCAB_META.to_string(), ds.record.vocab_sha256.clone())],
        },
    )?;
    log.flush().map_err(|e| CliError::io(&metrics, e))?;
    drop(log);

    let manifest = RunManifest {
        version: VERSION.to_string(),
        command: "train".into(),
        task: a.task,
        config: ConfigSnapshot::from(&config),
        seed: config.seed,
        dataset: ds.record,
        started_unix: started,
        finished_unix: unix_now(),
        metric: summary.best_metric,
        outputs: vec![FileRecord::of(&ckpt)?, FileRecord::of(&metrics)?],
    };
    manifest.write(&a.out.join("manifest.json"))?;

    let last = summary.reports.last();
    println!(
        "trained {} epochs{}: L_D {:.6}, L_G {:.6}",
        summary.reports.len(),
        if summary.stopped_early { " (stopped early)" } else { "" },
        last.map_or(f64::NAN, |r| r.mean_loss_d),
        last.map_or(f64::NAN, |r| r.mean_loss_g)
    );
    if let (Some(m), Some(e)) = (summary.best_metric, summary.best_epoch) {
        println!("best validation metric {m:.4} at epoch {e}");
    }
    println!("checkpoint {}", ckpt.display());
    Ok(())
}

/// Loads a checkpoint and refuses it unless it was trained on `ds`'s vocabulary.
fn load_model(path: &Path, ds: &Dataset) -> Result<Model, CliError> {
    if path.as_os_str().is_empty() {
        return Err(CliError::Usage("--checkpoint must not be empty".into()));
    }
    let ck: Checkpoint = read_checkpoint(path)?;
    let (n, m) = (ds.record.entities as u32, ds.record.relations as u32);
    if ck.n != n || ck.m != m {
        return Err(CliError::Data(format!(
            "checkpoint has {} entities and {} relations but the dataset has {n} and {m}",
            ck.n, ck.m
        )));
    }
    match ck.meta_value(VOCAB_META) {
        Some(d) if d != ds.record.vocab_sha256 => {
            return Err(CliError::Data(format!(
                "checkpoint vocabulary digest {d} does not match the dataset's {}",
                ds.record.vocab_sha256
            )))
        }
        None => log::warn!("checkpoint carries no vocabulary digest; only sizes were checked"),
        _ => {}
    }
    Ok(Model::from_checkpoint(ck)?)
}

pub fn eval_lp(a: &EvalLpArgs) -> Result<(), CliError> {
    let ds = load_dataset(&a.data.data)?;
    let model = load_model(&a.checkpoint, &ds)?;
    let kg = &ds.data.kg;
    let triples = match a.split {
        EvalSplit::Test => &kg.test[..],
        EvalSplit::Valid => kg.valid_original(),
    };
    let report = evaluate_link_prediction(&model, kg, triples)?;
    print!("{}", report.render(a.diagnostics));
    if let Some(p) = &a.report {
        write_atomic(p, report.to_tsv().as_bytes())?;
    }
    Ok(())
}

pub fn eval_tc(a: &EvalTcArgs) -> Result<(), CliError> {
    let ds = load_dataset(&a.data.data)?;
    let model = load_model(&a.checkpoint, &ds)?;
    if ds.data.valid.is_empty() || ds.data.test.is_empty() {
        return Err(CliError::Data("labeled valid and test splits must be non-empty".into()));
    }
    if ds.data.valid.iter().all(|r| r.1) {
        log::warn!("validation split has no negative rows; thresholds only see positives");
    }
    let report = evaluate_classification(&model, &ds.data.valid, &ds.data.test)?;
    print!("{}", report.render());
    let table = report.thresholds.to_tsv(&ds.data.kg.vocab);
    match &a.thresholds {
        Some(p) => write_atomic(p, table.as_bytes())?,
        None => print!("{table}"),
    }
    Ok(())
}

/// On-disk grid: value lists, each optional.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridFile {
    pub k: Option<Vec<usize>>,
    pub gamma: Option<Vec<f64>>,
    pub eta: Option<Vec<f64>>,
    pub batch: Option<Vec<usize>>,
    pub weight_decay: Option<Vec<f64>>,
    pub n_critic: Option<Vec<usize>>,
    pub clip: Option<Vec<f64>>,
}

impl GridFile {
    pub fn resolve(self, base: &TrainConfig) -> Grid {
        let single = Grid::single(base);
        Grid {
            k: self.k.unwrap_or(single.k),
            gamma: self.gamma.unwrap_or(single.gamma),
            eta: self.eta.unwrap_or(single.eta),
            batch: self.batch.unwrap_or(single.batch),
            weight_decay: self.weight_decay.unwrap_or(single.weight_decay),
            n_critic: self.n_critic.unwrap_or(single.n_critic),
            clip: self.clip.unwrap_or(single.clip),
        }
    }

    fn of(g: &Grid) -> GridFile {
        GridFile {
            k: Some(g.k.clone()),
            gamma: Some(g.gamma.clone()),
            eta: Some(g.eta.clone()),
            batch: Some(g.batch.clone()),
            weight_decay: Some(g.weight_decay.clone()),
            n_critic: Some(g.n_critic.clone()),
            clip: Some(g.clip.clone()),
        }
    }
}

/// What a grid output directory was started with; resuming requires a match.
#[derive(Debug, PartialEq, Serialize)]
struct GridState {
    task: Task,
    base: ConfigSnapshot,
    grid: GridFile,
    dataset_vocab_sha256: String,
}

pub fn grid(a: &GridArgs) -> Result<(), CliError> {
    let started = unix_now();
    let mut base = a.model.config();
    base.epochs = a.budget_epochs.unwrap_or(base.epochs);
    let grid = match &a.grid {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let file: GridFile = serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?;
            file.resolve(&base)
        }
        None => Grid::default(),
    };
    let candidates: Vec<TrainConfig> = grid.expand(&base).into_iter().map(validated).collect::<Result<_, _>>()?;
    if candidates.is_empty() {
        return Err(CliError::Usage("grid has no candidates".into()));
    }
    let ds = load_dataset(&a.data.data)?;
    require_validation(&ds.data, a.task)?;
    create_dir(&a.out)?;

    let state = GridState {
        task: a.task,
        base: ConfigSnapshot::from(&base),
        grid: GridFile::of(&grid),
        dataset_vocab_sha256: ds.record.vocab_sha256.clone(),
    };
    let state_json = serde_json::to_string_pretty(&state).map_err(|e| CliError::Data(e.to_string()))? + "\n";
    let state_path = a.out.join("grid.json");
    let board_path = a.out.join("leaderboard.tsv");
    let mut board = Leaderboard::default();
    if state_path.exists() {
        let old = fs::read_to_string(&state_path).map_err(|e| CliError::io(&state_path, e))?;
        if old != state_json {
            return Err(CliError::Usage(format!(
                "{} was started with a different grid, task, base configuration or dataset",
                a.out.display()
            )));
        }
        if board_path.exists() {
            let text = fs::read_to_string(&board_path).map_err(|e| CliError::io(&board_path, e))?;
            board = Leaderboard::from_tsv(&text)?;
        }
    } else {
        write_atomic(&state_path, state_json.as_bytes())?;
    }
    println!("{} candidates, {} already evaluated, {} epochs each", candidates.len(), board.scores.len(), base.epochs);

    let kg = &ds.data.kg;
    let outcome = best_config_search(
        &candidates,
        &mut board,
        a.max_candidates,
        |i, c| {
            let mut model = Model::init(kg.num_entities(), kg.num_relations(), c)?;
            fit(&mut model, kg, c, FitOptions::default())?;
            let metric = validation_metric(&model, &ds.data, a.task)?;
            log::info!("candidate {i} [{}]: {metric}", c.key());
            Ok(metric)
        },
        |b| Ok(write_atomic_io(&board_path, b.to_tsv().as_bytes())?),
    )?;

    match outcome {
        SearchOutcome::Interrupted { remaining } => {
            println!("{remaining} candidates remain; re-run the same command to resume");
        }
        SearchOutcome::Complete { best, config } => {
            println!("rank\tindex\tmetric\tconfig");
            for (rank, (i, m)) in board.ranked().iter().enumerate() {
                println!("{}\t{i}\t{m:.6}\t{}", rank + 1, candidates[*i].key());
            }
            let winner = RunManifest {
                version: VERSION.to_string(),
                command: "grid".into(),
                task: a.task,
                config: ConfigSnapshot::from(&config),
                seed: config.seed,
                dataset: ds.record.clone(),
                started_unix: started,
                finished_unix: unix_now(),
                metric: board.scores.get(&best).copied(),
                outputs: vec![FileRecord::of(&board_path)?],
            };
            let path = a.out.join("winner.json");
            winner.write(&path)?;
            println!("winner: candidate {best} ({}), manifest {}", config.key(), path.display());
        }
    }
    Ok(())
}

pub fn export(a: &ExportArgs) -> Result<(), CliError> {
    let ds = load_dataset(&a.data.data)?;
    let model = load_model(&a.checkpoint, &ds)?;
    create_dir(&a.out)?;
    let vocab = &ds.data.kg.vocab;
    let tables = [
        (model.gn.entity_table(), vocab.entities.names(), a.out.join("entity_embeddings.tsv")),
        (model.gn.relation_table(), vocab.relations.names(), a.out.join("relation_embeddings.tsv")),
    ];
    for (id, names, path) in tables {
        let p = model.store.get(id);
        let mut text = String::new();
        for (r, name) in names.iter().enumerate() {
            text.push_str(name);
            for v in p.row(r) {
                text.push('\t');
                text.push_str(&v.to_string());
            }
            text.push('\n');
        }
        write_atomic(&path, text.as_bytes())?;
        println!("{} rows -> {}", names.len(), path.display());
    }
    Ok(())
}
