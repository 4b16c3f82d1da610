use super::*;
use crate::corpus::TaskCounts;

/// Small enough that every stage runs in well under a second.
fn tiny(root: &Path) -> PipelineConfig {
    let counts = TaskCounts {
        t1: 2,
        t2: 2,
        t3: 2,
    };
    let mut c = PipelineConfig {
        out_dir: root.to_path_buf(),
        corpus: CorpusSpec {
            retain: counts,
            forget: counts,
            general: 3,
            ..CorpusSpec::default()
        },
        model: ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            ..ModelConfig::default()
        },
        ..PipelineConfig::default()
    };
    c.memorize.max_epochs = 2;
    c.memorize.check_every = 1;
    c.memorize.em_target = 0.0;
    c.unlearn.chunk_size = 3;
    c.unlearn.retain_ratio = 1;
    c.unlearn.epochs_per_chunk = 1;
    c.unlearn.lora = None;
    c
}

#[test]
fn full_run_is_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_pipeline(&tiny(a.path())).unwrap();
    let rb = run_pipeline(&tiny(b.path())).unwrap();
    assert_eq!(ra.value, rb.value);
    let (la, lb) = (Layout::new(a.path()), Layout::new(b.path()));
    assert_eq!(
        fs::read(la.report()).unwrap(),
        fs::read(lb.report()).unwrap()
    );
    for dir in ["data", "memorized", "unlearned", "eval"] {
        let ma = Manifest::read(&a.path().join(dir)).unwrap();
        let mb = Manifest::read(&b.path().join(dir)).unwrap();
        assert_eq!(ma, mb, "{dir}");
    }
    assert_eq!(read_report(&la.report()).unwrap(), ra.value);
}

#[test]
fn eval_before_memorize_is_a_stage_order_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let l = Layout::new(dir.path());
    match stage_eval(&cfg, &l.memorized(), &l.data(), &l.baseline(), &l.report()) {
        Err(Error::StageOrder { stage, .. }) => assert_eq!(stage, "gen"),
        other => panic!("unexpected {other:?}"),
    }
    stage_gen(&cfg, &l.data()).unwrap();
    match stage_eval(&cfg, &l.memorized(), &l.data(), &l.baseline(), &l.report()) {
        Err(Error::StageOrder { stage, .. }) => assert_eq!(stage, "memorize"),
        other => panic!("unexpected {other:?}"),
    }
    match stage_unlearn(&cfg, &l.memorized(), &l.data(), &l.unlearned()) {
        Err(Error::StageOrder { stage, .. }) => assert_eq!(stage, "memorize"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn changed_config_warns_and_strict_refuses() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let l = Layout::new(dir.path());
    stage_gen(&cfg, &l.data()).unwrap();
    let other = PipelineConfig {
        corpus: CorpusSpec {
            general: 4,
            ..cfg.corpus.clone()
        },
        ..cfg.clone()
    };
    let out = stage_memorize(&other, &l.data(), &l.memorized()).unwrap();
    assert_eq!(out.warnings.len(), 1, "{:?}", out.warnings);
    let strict = PipelineConfig {
        strict: true,
        ..other
    };
    assert!(matches!(
        stage_memorize(&strict, &l.data(), &l.memorized()),
        Err(Error::Stale { .. })
    ));
}

#[test]
fn sweep_continues_past_failures() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let l = Layout::new(dir.path());
    stage_gen(&cfg, &l.data()).unwrap();
    stage_memorize(&cfg, &l.data(), &l.memorized()).unwrap();
    // chunk size 0 is rejected by validation; the other points still run.
    let values = [
        SweepValue::Value(0),
        SweepValue::Value(2),
        SweepValue::NoChunk,
    ];
    let rows = run_sweep(
        &cfg,
        SweepParam::ChunkSize,
        &values,
        &l.memorized(),
        &l.data(),
        &l.sweep(),
    )
    .unwrap();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].status.starts_with("failed"));
    assert!(rows[1..]
        .iter()
        .all(|r| r.status == "ok" && r.final_score.is_some()));
    assert_eq!(read_table(&l.sweep().join(TABLE_FILE)).unwrap(), rows);
    let plot = fs::read_to_string(l.sweep().join(PLOT_FILE)).unwrap();
    assert_eq!(plot.lines().count(), 4);
    assert!(plot.lines().nth(1).unwrap().contains("nan"));
}

#[test]
fn single_value_sweep_is_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let l = Layout::new(dir.path());
    stage_gen(&cfg, &l.data()).unwrap();
    stage_memorize(&cfg, &l.data(), &l.memorized()).unwrap();
    let rows = run_sweep(
        &cfg,
        SweepParam::EpochsPerChunk,
        &[SweepValue::Value(1)],
        &l.memorized(),
        &l.data(),
        &l.sweep(),
    )
    .unwrap();
    assert_eq!(rows.len(), 1);
    assert!(
        render_report(&read_report(&l.sweep().join("1").join(REPORT_FILE)).unwrap())
            .contains("final score")
    );
}
