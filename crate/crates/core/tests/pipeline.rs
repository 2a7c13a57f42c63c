use popcorn::augment::AugmentConfig;
use popcorn::checkpoint::{decode_checkpoint, encode_checkpoint};
use popcorn::dataset::{load_dataset, write_dataset};
use popcorn::io::Format;
use popcorn::nn::ModelConfig;
use popcorn::pairing::PairPolicy;
use popcorn::pool::DatasetPool;
use popcorn::report::evaluate_model;
use popcorn::synth::{synthesize_dataset, SynthConfig};
use popcorn::trainer::{
    split_validation, Control, LogRecord, Observer, RunStatus, Strategy, Trainer, TrainerConfig, TrainerState,
};

fn synth() -> SynthConfig {
    SynthConfig {
        n_labeled: 4,
        n_unlabeled: 7,
        n_test: 3,
        image_size: vec![16, 16],
        lesion_radius: [1.5, 2.5],
        ..SynthConfig::default()
    }
}

fn model() -> ModelConfig {
    ModelConfig {
        base_filters: 4,
        patch_size: vec![8, 8],
        ..ModelConfig::default()
    }
}

fn trainer_config(strategy: Strategy) -> TrainerConfig {
    TrainerConfig {
        strategy,
        k: 3,
        n: 1,
        initial_epochs: 3,
        patience: 2,
        batch_size: 2,
        lr: 1e-3,
        seed: 17,
        ..TrainerConfig::default()
    }
}

struct HaltAfter(u32, usize);

impl Observer for HaltAfter {
    fn record(&mut self, _: &LogRecord) -> popcorn::Result<()> {
        self.1 += 1;
        Ok(())
    }

    fn checkpoint(&mut self, state: &TrainerState) -> popcorn::Result<Control> {
        Ok(if state.progress.cycles_completed == self.0 {
            Control::Halt
        } else {
            Control::Continue
        })
    }
}

#[test]
fn nifti_dataset_trains_and_evaluates() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synthesize_dataset(&synth(), 3).unwrap();
    write_dataset(tmp.path(), &data, Format::Nifti1, 3, &synth()).unwrap();
    let loaded = load_dataset(tmp.path()).unwrap();
    assert_eq!(loaded.unlabeled.len(), 7);
    assert_eq!(loaded.hidden.len(), 7);

    let (train, val) = split_validation(loaded.labeled, 0.25);
    assert_eq!((train.len(), val.len()), (3, 1));
    let pool = DatasetPool::new(train, loaded.unlabeled).unwrap();
    let cfg = trainer_config(Strategy::Popcorn);
    let state = TrainerState::new(&cfg, model(), pool).unwrap();
    let mut t = Trainer::new(cfg, AugmentConfig::default(), PairPolicy::default(), state, &val, &loaded.test)
        .unwrap()
        .with_hidden_truth(&loaded.hidden);
    assert_eq!(t.run(&mut ()).unwrap(), RunStatus::Finished);
    let s = t.state();
    assert_eq!(s.cycle_logs.len(), 3);
    assert!(s.cycle_logs.iter().all(|c| c.pseudo_label_dice.is_some()));

    let r = evaluate_model("popcorn", 3, &s.model, &loaded.test, 0.5).unwrap();
    assert_eq!(r.test_ids.len(), 3);
    assert!(r.images.iter().all(|m| (0.0..=1.0).contains(&m.dice)));
}

#[test]
fn library_resume_matches_uninterrupted() {
    let data = synthesize_dataset(&synth(), 9).unwrap();
    let pool = || DatasetPool::new(data.pool.training().to_vec(), data.pool.unlabeled().to_vec()).unwrap();
    let run = |state: TrainerState, observer: &mut dyn Observer| {
        let cfg = trainer_config(Strategy::Popcorn);
        let mut t = Trainer::new(cfg, AugmentConfig::default(), PairPolicy::default(), state, &[], &data.test).unwrap();
        let status = t.run(observer).unwrap();
        (status, t.into_state())
    };
    let cfg = trainer_config(Strategy::Popcorn);

    let (status, whole) = run(TrainerState::new(&cfg, model(), pool()).unwrap(), &mut ());
    assert_eq!(status, RunStatus::Finished);

    let mut halt = HaltAfter(1, 0);
    let (status, partial) = run(TrainerState::new(&cfg, model(), pool()).unwrap(), &mut halt);
    assert_eq!(status, RunStatus::Halted);
    assert_eq!(partial.record_count(), halt.1);
    let bytes = encode_checkpoint(&partial);
    let resumed = decode_checkpoint(&bytes).unwrap().into_state(pool()).unwrap();
    assert_eq!(resumed.pool.sizes(), partial.pool.sizes());
    let (status, finished) = run(resumed, &mut ());
    assert_eq!(status, RunStatus::Finished);

    assert_eq!(encode_checkpoint(&finished), encode_checkpoint(&whole));
    assert_eq!(finished.records(), whole.records());
}

#[test]
fn baseline_trains_once_and_never_promotes() {
    let data = synthesize_dataset(&synth(), 4).unwrap();
    let pool = DatasetPool::new(data.pool.training().to_vec(), data.pool.unlabeled().to_vec()).unwrap();
    for strategy in [Strategy::Baseline, Strategy::BaselineCr] {
        let cfg = trainer_config(strategy);
        let state = TrainerState::new(&cfg, model(), pool.clone()).unwrap();
        let mut t = Trainer::new(cfg, AugmentConfig::default(), PairPolicy::default(), state, &[], &data.test).unwrap();
        t.run(&mut ()).unwrap();
        let s = t.state();
        assert!(s.cycle_logs.is_empty());
        assert_eq!(s.pool.sizes(), (4, 7));
        assert!(s.initial_log.is_some());
    }
}
