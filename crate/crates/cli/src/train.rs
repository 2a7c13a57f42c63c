use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use popcorn::checkpoint::{encode_checkpoint, load_checkpoint};
use popcorn::dataset::load_dataset;
use popcorn::pool::DatasetPool;
use popcorn::trainer::{split_validation, Control, LogRecord, Observer, RunStatus, Trainer, TrainerState};

use crate::commands::{load_config, read_run_config, CONFIG_FILE, FINAL_CHECKPOINT};
use crate::error::{io, CliError, CONFIG, RUNTIME};
use crate::TrainArgs;

pub const LOCK_FILE: &str = "run.lock";
pub const LOG_FILE: &str = "log.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";
pub const LATEST_CHECKPOINT: &str = "latest.ckpt";

/// Exclusive claim on a run directory, released on drop.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self, CliError> {
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self(path))
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::new(
                RUNTIME,
                format!("{} exists: another process is using this run (remove it if stale)", path.display()),
            )),
            Err(e) => Err(io(&path, e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| io(path, e))
}

fn log_line(record: &LogRecord, elapsed_ms: u128) -> String {
    let mut v = serde_json::to_value(record).expect("record serializes");
    v.as_object_mut()
        .expect("records are objects")
        .insert("elapsed_ms".into(), serde_json::Value::from(elapsed_ms as u64));
    v.to_string()
}

struct RunObserver {
    dir: PathBuf,
    log: File,
    log_path: PathBuf,
    reproducible: bool,
    started: Instant,
    halt_after: Option<u32>,
}

impl RunObserver {
    /// Open the log so it holds exactly the records already in `state`:
    /// lines beyond the checkpoint are dropped, missing ones regenerated.
    fn open(dir: &Path, state: &TrainerState, reproducible: bool, halt_after: Option<u32>) -> Result<Self, CliError> {
        let log_path = dir.join(LOG_FILE);
        let want = state.record_count();
        let mut lines = Vec::new();
        if want > 0 {
            if let Ok(f) = File::open(&log_path) {
                for line in BufReader::new(f).lines().take(want) {
                    lines.push(line.map_err(|e| io(&log_path, e))?);
                }
            }
            if lines.len() < want {
                lines = state.records().iter().map(|r| log_line(r, 0)).collect();
            }
        }
        let mut body = lines.join("\n");
        if !body.is_empty() {
            body.push('\n');
        }
        write_atomic(&log_path, body.as_bytes())?;
        let log = OpenOptions::new().append(true).open(&log_path).map_err(|e| io(&log_path, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            log,
            log_path,
            reproducible,
            started: Instant::now(),
            halt_after,
        })
    }
}

impl Observer for RunObserver {
    fn record(&mut self, record: &LogRecord) -> popcorn::Result<()> {
        let ms = if self.reproducible {
            0
        } else {
            self.started.elapsed().as_millis()
        };
        let line = log_line(record, ms);
        writeln!(self.log, "{line}").map_err(|e| popcorn::Error::Io {
            path: self.log_path.clone(),
            source: e,
        })?;
        if let LogRecord::Cycle(c) = record {
            eprintln!(
                "cycle {}: promoted {}, |T| = {}, |U| = {}, loss {:.4}",
                c.cycle,
                c.selected_ids.len(),
                c.pool_sizes.0,
                c.pool_sizes.1,
                c.mean_total_loss
            );
        }
        Ok(())
    }

    fn checkpoint(&mut self, state: &TrainerState) -> popcorn::Result<Control> {
        let cycle = state.progress.cycles_completed;
        let bytes = encode_checkpoint(state);
        let ckpt_dir = self.dir.join(CHECKPOINT_DIR);
        let io_err = |path: &Path, e| popcorn::Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let per_cycle = ckpt_dir.join(format!("cycle-{cycle:04}.ckpt"));
        fs::write(&per_cycle, &bytes).map_err(|e| io_err(&per_cycle, e))?;
        let latest = ckpt_dir.join(LATEST_CHECKPOINT);
        let tmp = latest.with_extension("tmp");
        fs::write(&tmp, &bytes).map_err(|e| io_err(&tmp, e))?;
        fs::rename(&tmp, &latest).map_err(|e| io_err(&latest, e))?;
        Ok(if self.halt_after == Some(cycle) {
            Control::Halt
        } else {
            Control::Continue
        })
    }
}

pub fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&a.config, a.seed)?;
    if let Some(s) = a.strategy {
        cfg.trainer.strategy = s;
    }
    if let Some(m) = a.max_cycles {
        cfg.trainer.max_cycles = Some(m);
    }
    if let Some(alpha) = a.alpha {
        cfg.trainer.alpha = alpha;
    }
    if let Some(data) = &a.data {
        cfg.data_dir = std::path::absolute(data).map_err(|e| io(data, e))?;
    }
    if let Some(out) = &a.out {
        cfg.out_dir = std::path::absolute(out).map_err(|e| io(out, e))?;
    }
    cfg.validate()?;

    let dir = cfg.out_dir.clone();
    let ckpt_dir = dir.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt_dir).map_err(|e| io(&ckpt_dir, e))?;
    let _lock = RunLock::acquire(&dir)?;
    let latest = ckpt_dir.join(LATEST_CHECKPOINT);
    if a.resume {
        if dir.join(CONFIG_FILE).exists() && read_run_config(&dir)? != cfg {
            return Err(CliError::new(
                CONFIG,
                format!("configuration differs from the one recorded in {}", dir.join(CONFIG_FILE).display()),
            ));
        }
    } else if latest.exists() {
        return Err(CliError::new(
            CONFIG,
            format!("{} already holds a run; pass --resume or choose another --out", dir.display()),
        ));
    }
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml().as_bytes())?;

    let data = load_dataset(&cfg.data_dir)?;
    let (train, validation) = split_validation(data.labeled, cfg.trainer.validation_fraction);
    let pool = DatasetPool::new(train, data.unlabeled)?;
    let state = if a.resume && latest.exists() {
        let ck = load_checkpoint(&latest)?;
        if ck.model.config() != &cfg.model {
            return Err(CliError::new(CONFIG, "checkpoint model configuration differs from [model]"));
        }
        ck.into_state(pool)?
    } else {
        TrainerState::new(&cfg.trainer, cfg.model.clone(), pool)?
    };
    let mut observer = RunObserver::open(&dir, &state, a.reproducible, a.halt_after_cycle)?;
    let mut trainer = Trainer::new(
        cfg.trainer.clone(),
        cfg.augment.clone(),
        cfg.pairing.clone(),
        state,
        &validation,
        &data.test,
    )?
    .with_hidden_truth(&data.hidden);
    match trainer.run(&mut observer)? {
        RunStatus::Finished => {
            let bytes = encode_checkpoint(trainer.state());
            write_atomic(&dir.join(FINAL_CHECKPOINT), &bytes)?;
            let s = trainer.state();
            eprintln!(
                "{}: finished after {} cycles; |T| = {}, |U| = {}",
                cfg.trainer.strategy,
                s.progress.cycles_completed,
                s.pool.sizes().0,
                s.pool.sizes().1
            );
        }
        RunStatus::Halted => eprintln!("halted after cycle {}", trainer.state().progress.cycles_completed),
    }
    Ok(())
}
