use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use popcorn::config::RunConfig;
use popcorn::dataset::{check_id, load_dataset, write_dataset};
use popcorn::io::RawTensor;
use popcorn::nn::LatentFeatures;
use popcorn::proximity::{self, build_graph};
use popcorn::report::{build_report, curve_from_logs, evaluate_model, EvaluationResult, StudyResult};
use popcorn::synth::synthesize_dataset;
use popcorn::trainer::split_validation;

use crate::error::{io, CliError, CONFIG, DATA};
use crate::{EvaluateArgs, ReportArgs, SelectArgs, SynthArgs};

pub const CONFIG_FILE: &str = "config.toml";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
pub const RESULT_FILE: &str = "result.json";

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| io(p, e))
}

/// Config file, then `POPCORN_SEED`, then `--seed`; paths made absolute.
pub fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(path).map_err(|e| match e {
        popcorn::Error::Io { .. } => CliError::new(CONFIG, e),
        other => other.into(),
    })?;
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    cfg.data_dir = absolute(&cfg.data_dir)?;
    cfg.out_dir = absolute(&cfg.out_dir)?;
    Ok(cfg)
}

pub fn read_run_config(run: &Path) -> Result<RunConfig, CliError> {
    let path = run.join(CONFIG_FILE);
    let text = fs::read_to_string(&path).map_err(|e| io(&path, e))?;
    Ok(RunConfig::parse(&text)?)
}

pub fn synth_data(a: SynthArgs) -> Result<(), CliError> {
    let cfg = load_config(&a.config, a.seed)?;
    let out = match a.out {
        Some(o) => absolute(&o)?,
        None => cfg.data_dir.clone(),
    };
    let data = synthesize_dataset(&cfg.synth, cfg.seed)?;
    let m = write_dataset(&out, &data, cfg.format, cfg.seed, &cfg.synth)?;
    eprintln!(
        "wrote {} labeled, {} unlabeled, {} test samples to {}",
        m.labeled.len(),
        m.unlabeled.len(),
        m.test.len(),
        out.display()
    );
    Ok(())
}

fn read_ids(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
    let ids: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
    for id in &ids {
        check_id(id)?;
    }
    Ok(ids)
}

fn read_embeddings(tensor: &Path, ids: &Path) -> Result<Vec<(String, LatentFeatures)>, CliError> {
    let bytes = fs::read(tensor).map_err(|e| io(tensor, e))?;
    let t = RawTensor::decode(&bytes)?;
    let ids = read_ids(ids)?;
    let [rows, dim] = t.shape[..] else {
        return Err(CliError::new(
            DATA,
            format!("{}: expected a [n, dim] tensor, got shape {:?}", tensor.display(), t.shape),
        ));
    };
    if rows != ids.len() {
        return Err(CliError::new(
            DATA,
            format!("{}: {rows} rows but {} ids", tensor.display(), ids.len()),
        ));
    }
    Ok(ids
        .into_iter()
        .zip(t.data.chunks(dim.max(1)))
        .map(|(id, row)| (id, LatentFeatures(row.to_vec())))
        .collect())
}

pub fn select_tsv(a: &SelectArgs) -> Result<String, CliError> {
    let u = read_embeddings(&a.unlabeled, &a.unlabeled_ids)?;
    let t = read_embeddings(&a.training, &a.training_ids)?;
    let graph = build_graph(&u, &t)?;
    let r = proximity::select(&graph, a.k, a.p)?;
    let mut out = String::from("rank\tid\tscore\n");
    for (i, (id, score)) in r.selected_ids.iter().zip(&r.scores).enumerate() {
        out.push_str(&format!("{}\t{id}\t{score}\n", i + 1));
    }
    Ok(out)
}

pub fn select(a: SelectArgs) -> Result<(), CliError> {
    let tsv = select_tsv(&a)?;
    match &a.out {
        Some(path) => fs::write(path, tsv).map_err(|e| io(path, e)),
        None => std::io::stdout()
            .write_all(tsv.as_bytes())
            .map_err(|e| io(Path::new("<stdout>"), e)),
    }
}

pub fn default_label(cfg: &RunConfig) -> String {
    match cfg.trainer.max_cycles {
        Some(m) => format!("{}-max{m}", cfg.trainer.strategy),
        None => cfg.trainer.strategy.to_string(),
    }
}

pub fn evaluate(a: EvaluateArgs) -> Result<(), CliError> {
    let cfg = read_run_config(&a.run)?;
    let ckpt_path = a.run.join(FINAL_CHECKPOINT);
    if !ckpt_path.is_file() {
        return Err(CliError::new(
            DATA,
            format!("no final checkpoint at {} (has training finished?)", ckpt_path.display()),
        ));
    }
    let ck = popcorn::checkpoint::load_checkpoint(&ckpt_path)?;
    let data_dir = a.data.clone().unwrap_or_else(|| cfg.data_dir.clone());
    let data = load_dataset(&data_dir)?;
    let label = a.label.clone().unwrap_or_else(|| default_label(&cfg));
    let mut result = evaluate_model(label, cfg.seed, &ck.model, &data.test, cfg.eval.threshold)?;
    let initial_size = split_validation(data.labeled, cfg.trainer.validation_fraction).0.len();
    result.curve = curve_from_logs(ck.initial_log.as_ref(), initial_size, &ck.cycle_logs);
    let out = a.out.clone().unwrap_or_else(|| a.run.join(RESULT_FILE));
    let body = serde_json::to_string_pretty(&result).expect("result serializes") + "\n";
    fs::write(&out, body).map_err(|e| io(&out, e))?;
    eprintln!(
        "{}: mean dice {:.4} over {} test images -> {}",
        result.label,
        result.mean.dice,
        result.images.len(),
        out.display()
    );
    Ok(())
}

pub fn read_result(path: &Path) -> Result<EvaluationResult, CliError> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::new(DATA, format!("{}: {e}", path.display())))
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let results = a.results.iter().map(|p| read_result(p)).collect::<Result<Vec<_>, _>>()?;
    let study = StudyResult::new(results)?;
    build_report(&study, &a.out)?;
    let text_path = a.out.join("report.txt");
    let text = fs::read_to_string(&text_path).map_err(|e| io(&text_path, e))?;
    print!("{text}");
    Ok(())
}
