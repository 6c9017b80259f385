mod common;

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};

use common::*;
use kgcore::corpus::SentenceSplitter;
use kgcore::dataset::RcInstance;
use kgcore::pipeline::{run_pipeline, PairMode, PipelineConfig, PipelineModels, PipelineOutput, SupportBank};
use kgcore::relclass::PairScorer;
use kgcore::store::GraphStore;
use kgcore::Error;

/// Wraps the planted scorer and starts failing after a number of calls while armed.
struct Flaky<'a> {
    inner: &'a dyn PairScorer,
    armed: AtomicBool,
    calls: AtomicUsize,
    fail_after: usize,
}

impl PairScorer for Flaky<'_> {
    fn id(&self) -> String {
        self.inner.id()
    }
    fn score(&self, q: &RcInstance, s: &RcInstance) -> kgcore::Result<f64> {
        if self.armed.load(Ordering::SeqCst) && self.calls.fetch_add(1, Ordering::SeqCst) >= self.fail_after {
            return Err(Error::InvariantViolation("scorer went away".into()));
        }
        self.inner.score(q, s)
    }
}

fn run(planted: &Planted, scorer: &dyn PairScorer, cfg: &PipelineConfig) -> kgcore::Result<PipelineOutput> {
    let splitter = SentenceSplitter::default();
    let bank = SupportBank::draw(&planted.schema, &planted.support_pool, cfg.k, cfg.seed)?;
    let models = PipelineModels {
        tagger: &planted.tagger,
        encoder: &planted.encoder,
        scorer,
        schema: &planted.schema,
        support: &bank,
        splitter: &splitter,
    };
    run_pipeline(&planted.corpus, &models, cfg, None)
}

#[test]
fn resume_after_abort_matches_uninterrupted_run() {
    let planted = planted_corpus(60, 3);
    let cfg = PipelineConfig {
        theta: 0.5,
        batch_size: 8,
        ..PipelineConfig::default()
    };
    let full = run(&planted, &planted.scorer, &cfg).unwrap();

    let flaky = Flaky {
        inner: &planted.scorer,
        armed: AtomicBool::new(true),
        calls: AtomicUsize::new(0),
        fail_after: 2000,
    };
    let splitter = SentenceSplitter::default();
    let bank = SupportBank::draw(&planted.schema, &planted.support_pool, cfg.k, cfg.seed).unwrap();
    let models = PipelineModels {
        tagger: &planted.tagger,
        encoder: &planted.encoder,
        scorer: &flaky,
        schema: &planted.schema,
        support: &bank,
        splitter: &splitter,
    };
    let checkpoint = match run_pipeline(&planted.corpus, &models, &cfg, None) {
        Err(Error::PipelineAborted { processed, checkpoint, .. }) => {
            assert!(processed > 0 && processed < planted.corpus.len(), "aborted at {processed}");
            assert_eq!(checkpoint.processed, processed);
            checkpoint
        }
        other => panic!("expected an abort, got {:?}", other.map(|o| o.stats)),
    };
    // the checkpoint survives a JSON round trip
    let checkpoint = serde_json::from_str(&serde_json::to_string(&checkpoint).unwrap()).unwrap();
    flaky.armed.store(false, Ordering::SeqCst);
    let resumed = run_pipeline(&planted.corpus, &models, &cfg, Some(checkpoint)).unwrap();
    assert_eq!(resumed.triples, full.triples);
    assert_eq!(resumed.stats, full.stats);
    assert_eq!(resumed.manifest, full.manifest);
}

#[test]
fn resume_rejects_foreign_checkpoint() {
    let planted = planted_corpus(10, 4);
    let cfg = PipelineConfig::default();
    let splitter = SentenceSplitter::default();
    let bank = SupportBank::draw(&planted.schema, &planted.support_pool, 1, 0).unwrap();
    let models = PipelineModels {
        tagger: &planted.tagger,
        encoder: &planted.encoder,
        scorer: &planted.scorer,
        schema: &planted.schema,
        support: &bank,
        splitter: &splitter,
    };
    let other = PipelineConfig {
        theta: 0.9,
        ..cfg.clone()
    };
    let flaky = Flaky {
        inner: &planted.scorer,
        armed: AtomicBool::new(true),
        calls: AtomicUsize::new(0),
        fail_after: 0,
    };
    let failing = PipelineModels { scorer: &flaky, ..models };
    let Err(Error::PipelineAborted { checkpoint, .. }) = run_pipeline(&planted.corpus, &failing, &other, None) else {
        panic!("expected abort");
    };
    let err = run_pipeline(&planted.corpus, &models, &cfg, Some(*checkpoint)).unwrap_err();
    assert!(matches!(err, Error::InvariantViolation(_)), "{err}");
}

#[test]
fn both_directions_doubles_candidates_and_keeps_gold() {
    let planted = planted_corpus(30, 5);
    let forward = run(&planted, &planted.scorer, &PipelineConfig::default()).unwrap();
    let both_cfg = PipelineConfig {
        pair_mode: PairMode::Both,
        ..PipelineConfig::default()
    };
    let both = run(&planted, &planted.scorer, &both_cfg).unwrap();
    assert_eq!(both.stats.candidates, 2 * forward.stats.candidates);
    for t in &forward.triples {
        assert!(both.triples.contains(t));
    }
}

#[test]
fn pipeline_output_loads_into_store() {
    let planted = planted_corpus(40, 6);
    let out = run(&planted, &planted.scorer, &PipelineConfig::default()).unwrap();
    let store = GraphStore::from_triples(&out.triples);
    let stats = store.stats().unwrap();
    assert_eq!(stats.nodes, out.stats.distinct_entities.min(stats.nodes));
    assert!(stats.edges > 0 && stats.edges <= out.triples.len());
    assert_eq!(stats.provenance, out.triples.len());
    // loading twice changes nothing
    for t in &out.triples {
        assert!(!store.upsert_triple(t).unwrap().inserted);
    }
    assert_eq!(store.stats().unwrap(), stats);
}
