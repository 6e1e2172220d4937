//! Acceptance suite: one test per criterion, each printing a PASS line
//! with the measured values. Criteria that specify command behavior drive
//! the compiled binary; the rest exercise the library directly.

mod straightline;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use hin_core::corpus::{
    build_vocab, gen_synthetic, GoldFact, GoldSet, IgnKeys, PreparedCorpus, SynthSpec,
};
use hin_core::eval::{
    evaluate_f1, recall_by_evidence, select_threshold, PredictionRecord,
};
use hin_core::layers::{additive_attention_pool, AttnBound, Mode};
use hin_core::model::{param_manifest, AblationFlag, HinModel, ModelConfig, VocabDims};
use hin_core::rng::{substream, Stream};
use hin_core::tensor::{Tape, Tensor};
use rand::Rng;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hin"))
}

fn run_ok(args: &[&str]) {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "`hin {}` failed: {}",
        args.join(" "),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// The calibrated overfit configuration: full architecture at compact
/// dimensions, tuned to memorize the synthetic corpus quickly.
const OVERFIT_CONFIG: &str = r#"
[model]
d_w = 24
d_t = 4
d_c = 4
d_dist = 4
hidden = 10
subspaces = 2
subspace_dim = 10
dropout = 0.05
coref_buckets = 16
freeze_word_embeddings = false
[train]
epochs = 45
batch_size = 12
learning_rate = 0.003
"#;

fn parse_log(path: &Path) -> (Vec<f64>, Vec<f64>) {
    let text = std::fs::read_to_string(path).expect("train log exists");
    let mut losses = Vec::new();
    let mut f1s = Vec::new();
    for line in text.lines() {
        if !line.starts_with("epoch=") {
            continue;
        }
        let grab = |key: &str| -> f64 {
            line.split_whitespace()
                .find_map(|f| f.strip_prefix(key))
                .and_then(|v| v.parse().ok())
                .unwrap_or_else(|| panic!("malformed log line `{line}`"))
        };
        losses.push(grab("loss="));
        f1s.push(grab("F1="));
    }
    (losses, f1s)
}

// ── criterion 1 ──────────────────────────────────────────────────────

#[test]
fn criterion_1_gradient_fidelity() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("gc");
    let started = Instant::now();
    run_ok(&["gradcheck", "--out", out.to_str().unwrap(), "--seed", "7"]);
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 60.0, "gradcheck took {elapsed:.1}s");

    let table = std::fs::read_to_string(out.join("gradcheck.txt")).unwrap();
    let mut checked = 0usize;
    let mut max_err = 0.0f64;
    for line in table.lines().skip(1) {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields[0] == "max" {
            continue;
        }
        let err: f64 = fields[1].parse().unwrap();
        assert!(err < 1e-4, "parameter {} at {err:.3e}", fields[0]);
        checked += 1;
        max_err = max_err.max(err);
    }
    assert!(checked > 30, "only {checked} parameters in the table");
    println!(
        "criterion 1 (gradient fidelity): PASS — {checked} parameters, \
         max rel err {max_err:.3e}, {elapsed:.1}s"
    );
}

// ── criterion 2 ──────────────────────────────────────────────────────

#[test]
fn criterion_2_overfit_gate() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    // The default synthesis spec is exactly the gate corpus.
    run_ok(&["synth", "--out", data.to_str().unwrap(), "--seed", "7"]);
    let spec = SynthSpec::default();
    assert_eq!(
        (spec.documents, spec.entities_per_doc, spec.relation_count,
         spec.sentences_per_doc, spec.vocab_size, spec.seed),
        (32, 4, 4, 6, 200, 7)
    );

    let config = tmp.path().join("overfit.toml");
    std::fs::write(&config, OVERFIT_CONFIG).unwrap();
    let corpus = data.join("corpus.json");
    let run_dir = tmp.path().join("run");

    let started = Instant::now();
    run_ok(&[
        "train",
        "--train",
        corpus.to_str().unwrap(),
        "--dev",
        corpus.to_str().unwrap(),
        "--config",
        config.to_str().unwrap(),
        "--out",
        run_dir.to_str().unwrap(),
        "--seed",
        "7",
    ]);
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 300.0, "training took {elapsed:.1}s");

    let (losses, f1s) = parse_log(&run_dir.join("train_log.txt"));
    assert!(losses.len() <= 200, "ran {} epochs", losses.len());
    let best_f1 = f1s.iter().cloned().fold(0.0, f64::max);
    assert!(best_f1 >= 0.95, "best training-set F1 {best_f1:.4}");

    // 10-epoch-smoothed loss, strictly decreasing across the run.
    let smoothed: Vec<f64> = (9..losses.len())
        .map(|i| losses[i - 9..=i].iter().sum::<f64>() / 10.0)
        .collect();
    for w in smoothed.windows(2) {
        assert!(w[1] < w[0], "smoothed loss rose: {} -> {}", w[0], w[1]);
    }

    // Scoring the training split through the eval command reproduces it.
    let eval_dir = tmp.path().join("eval");
    run_ok(&[
        "eval",
        "--corpus",
        corpus.to_str().unwrap(),
        "--checkpoint",
        run_dir.join("checkpoint").to_str().unwrap(),
        "--out",
        eval_dir.to_str().unwrap(),
    ]);
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(eval_dir.join("eval_report.json")).unwrap(),
    )
    .unwrap();
    let f1 = report["f1"].as_f64().unwrap();
    assert!(f1 >= 0.95, "eval on the training split gave F1 {f1:.4}");

    println!(
        "criterion 2 (overfit gate): PASS — best F1 {best_f1:.4} in {} epochs, \
         smoothed loss strictly decreasing, {elapsed:.0}s",
        losses.len()
    );
}

// ── criterion 3 ──────────────────────────────────────────────────────

fn random_threshold_fixture(seed: u64) -> (Vec<PredictionRecord>, GoldSet) {
    let mut rng = substream(seed, Stream::Probe, 1234, 0);
    let n = rng.gen_range(1..=100);
    let mut records: Vec<PredictionRecord> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    while records.len() < n {
        let key = (
            format!("d{}", rng.gen_range(0..6)),
            rng.gen_range(0..7usize),
            rng.gen_range(0..7usize),
            rng.gen_range(0..5usize),
        );
        if key.1 == key.2 || !seen.insert(key.clone()) {
            continue;
        }
        records.push(PredictionRecord {
            doc_id: key.0,
            head: key.1,
            tail: key.2,
            relation: key.3,
            score: rng.gen_range(0.0001..1.0),
        });
    }
    let mut facts = Vec::new();
    for r in &records {
        if rng.gen_bool(0.35) {
            facts.push(GoldFact {
                doc_id: r.doc_id.clone(),
                head: r.head,
                tail: r.tail,
                relation: r.relation,
                evidence_len: rng.gen_range(0..9),
                head_names: vec![],
                tail_names: vec![],
            });
        }
    }
    if facts.is_empty() {
        let r = &records[0];
        facts.push(GoldFact {
            doc_id: r.doc_id.clone(),
            head: r.head,
            tail: r.tail,
            relation: r.relation,
            evidence_len: 1,
            head_names: vec![],
            tail_names: vec![],
        });
    }
    (records, GoldSet::from_facts(facts))
}

#[test]
fn criterion_3_threshold_oracle() {
    for seed in 0..50u64 {
        let (records, gold) = random_threshold_fixture(seed);
        let choice = select_threshold(&records, &gold);

        // Exhaustive enumeration over every prefix of the ranked list.
        let mut sorted: Vec<&PredictionRecord> = records.iter().collect();
        sorted.sort_by(|a, b| {
            b.score
                .partial_cmp(&a.score)
                .unwrap()
                .then(a.doc_id.cmp(&b.doc_id))
                .then(a.head.cmp(&b.head))
                .then(a.tail.cmp(&b.tail))
                .then(a.relation.cmp(&b.relation))
        });
        let mut best = (0.0f64, 0usize);
        for k in 1..=sorted.len() {
            let tp = sorted[..k]
                .iter()
                .filter(|r| gold.contains(&r.doc_id, r.head, r.tail, r.relation))
                .count();
            let p = tp as f64 / k as f64;
            let r = tp as f64 / gold.len() as f64;
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            if f1 > 0.0 && f1 >= best.0 {
                best = (f1, k);
            }
        }
        assert_eq!(choice.best_f1, best.0, "seed {seed}");
        assert_eq!(choice.prefix_len, best.1, "seed {seed}");
        if best.1 > 0 {
            assert_eq!(choice.cut_score, Some(sorted[best.1 - 1].score), "seed {seed}");
        }
    }
    println!("criterion 3 (threshold oracle): PASS — 50 fixtures, exact equality");
}

// ── criterion 4 ──────────────────────────────────────────────────────

fn tiny_prepared() -> PreparedCorpus {
    let docs = gen_synthetic(&SynthSpec {
        documents: 2,
        entities_per_doc: 2,
        relation_count: 2,
        sentences_per_doc: 3,
        vocab_size: 30,
        seed: 5,
    })
    .unwrap();
    let (vocab, _) = build_vocab(&docs, None, 1).unwrap();
    PreparedCorpus::prepare(&docs, &vocab, 8, vocab.relations.len()).unwrap()
}

#[test]
fn criterion_4_metric_fixtures() {
    let corpus = tiny_prepared();
    let fact = |h: usize, t: usize| GoldFact {
        doc_id: "d".into(),
        head: h,
        tail: t,
        relation: 0,
        evidence_len: 1,
        head_names: vec![format!("h{h}")],
        tail_names: vec![format!("t{t}")],
    };
    let gold = GoldSet::from_facts(vec![fact(0, 1), fact(1, 0), fact(2, 3), fact(3, 2)]);
    let rec = |h: usize, t: usize, s: f64| PredictionRecord {
        doc_id: "d".into(),
        head: h,
        tail: t,
        relation: 0,
        score: s,
    };
    // 3 predictions, 2 correct, 4 gold.
    let records = vec![rec(0, 1, 0.9), rec(1, 0, 0.8), rec(4, 5, 0.7)];
    let report = evaluate_f1(&records, &gold, 0.0, &IgnKeys::empty(), &corpus);
    assert_eq!(report.precision, 2.0 / 3.0);
    assert_eq!(report.recall, 0.5);
    assert!((report.f1 - 4.0 / 7.0).abs() < 1e-15);
    assert_eq!(report.ign_f1, report.f1);

    // One dev fact shares names and relation with a training fact: it and
    // its prediction leave the Ign universe. Hand recount: 2 predictions
    // remain (1 correct), 3 gold remain.
    let train = GoldSet::from_facts(vec![GoldFact {
        doc_id: "other".into(),
        head: 9,
        tail: 9,
        relation: 0,
        evidence_len: 1,
        head_names: vec!["h0".into()],
        tail_names: vec!["t1".into()],
    }]);
    let ign = IgnKeys::from_gold(&train);
    let report = evaluate_f1(&records, &gold, 0.0, &ign, &corpus);
    assert_eq!(report.ign_gold, 3);
    // Records carry no names through the tiny corpus (unknown doc id), so
    // the prediction side keeps all three; the overlapping gold fact is
    // gone, leaving 1 true positive of 3 predicted and 3 gold.
    assert_eq!(report.ign_predicted, 3);
    assert_eq!(report.ign_true_positives, 1);
    let p = 1.0 / 3.0;
    let r = 1.0 / 3.0;
    assert!((report.ign_f1 - 2.0 * p * r / (p + r)).abs() < 1e-15);
    println!(
        "criterion 4 (metric fixtures): PASS — P=2/3, R=1/2, F1=4/7 exact; \
         Ign recount matches"
    );
}

// ── criterion 5 ──────────────────────────────────────────────────────

#[test]
fn criterion_5_attention_invariants() {
    let docs = gen_synthetic(&SynthSpec::default()).unwrap();
    let (vocab, _) = build_vocab(&docs, None, 1).unwrap();
    let cfg = ModelConfig { relations: vocab.relations.len(), ..ModelConfig::tiny() };
    let model = HinModel::new(cfg.clone(), &vocab, 7).unwrap();

    let mut trials = 0usize;
    for site in ["attn_w", "attn_s"] {
        let mut rng = substream(13, Stream::Probe, site.len() as u64, 0);
        for _ in 0..1000 {
            let n = rng.gen_range(1..=10);
            let d = cfg.d();
            let mut mask: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.75)).collect();
            if !mask.iter().any(|&m| m) {
                mask[rng.gen_range(0..n)] = true;
            }
            let rows: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-3.0..3.0)).collect();

            let mut tape = Tape::new();
            let bind = |tape: &mut Tape, name: &str| {
                let id = model.params.find(&format!("{site}.{name}")).unwrap();
                tape.leaf(model.params.get(id).tensor.clone())
            };
            let bound = AttnBound {
                query: bind(&mut tape, "u"),
                w: bind(&mut tape, "w"),
                b: bind(&mut tape, "b"),
            };
            let h = tape.constant(Tensor::matrix(n, d, rows).unwrap());
            let (_, weights) = additive_attention_pool(&mut tape, h, &bound, &mask).unwrap();
            let w = tape.data(weights);
            let mut sum = 0.0;
            for i in 0..n {
                assert!(w[i] >= 0.0, "negative weight");
                if !mask[i] {
                    assert_eq!(w[i], 0.0, "masked weight not exactly zero");
                }
                sum += w[i];
            }
            assert!((sum - 1.0).abs() < 1e-9, "weights sum to {sum}");
            trials += 1;
        }
    }
    println!("criterion 5 (attention invariants): PASS — {trials} trials across both sites");
}

// ── criterion 6 ──────────────────────────────────────────────────────

#[test]
fn criterion_6_ablation_accounting() {
    let cfg = ModelConfig::default();
    assert_eq!((cfg.d(), cfg.k_eff(), cfg.ds_eff()), (256, 2, 128));
    let dims = VocabDims { words: 1000, types: 6 };
    let count = |c: &ModelConfig| -> i64 {
        param_manifest(c, &dims)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>() as i64)
            .sum()
    };
    let base = count(&cfg);

    // no_bilinear removes the bi-affine tensors — exactly 2·128³ —
    // and the entity net's first layer loses the K·d_s bilinear columns.
    let nb = AblationFlag::NoBilinear.applied_to(&cfg);
    let biaffine_elements: i64 = param_manifest(&cfg, &dims)
        .iter()
        .filter(|(n, _)| n.starts_with("biaffine."))
        .map(|(_, s)| s.iter().product::<usize>() as i64)
        .sum();
    assert_eq!(biaffine_elements, 4_194_304);
    assert_eq!(biaffine_elements, (cfg.k_eff() * cfg.ds_eff().pow(3)) as i64);
    let ge_shrink = (cfg.d() * cfg.k_eff() * cfg.ds_eff()) as i64;
    assert_eq!(base - count(&nb), 4_194_304 + ge_shrink);

    // no_translation removes no component; only the entity net input
    // shrinks by K·d_s columns.
    let nt = AblationFlag::NoTranslation.applied_to(&cfg);
    assert_eq!(base - count(&nt), ge_shrink);
    assert_eq!(ge_shrink, 65_536);
    let names = |c: &ModelConfig| -> Vec<String> {
        param_manifest(c, &dims).into_iter().map(|(n, _)| n).collect()
    };
    assert_eq!(names(&cfg), names(&nt));

    // single_space: projections go from K·(d² + d·d_s) to (d² + d²), the
    // bi-affine stack from K·d_s³ to d³; the entity-net width is unchanged
    // at these dimensions because K·4·d_s = 4·d.
    let ss = AblationFlag::SingleSpace.applied_to(&cfg);
    let proj = |c: &ModelConfig| -> i64 {
        param_manifest(c, &dims)
            .iter()
            .filter(|(n, _)| n.starts_with("proj."))
            .map(|(_, s)| s.iter().product::<usize>() as i64)
            .sum()
    };
    let d = cfg.d() as i64;
    let ds = cfg.ds_eff() as i64;
    let k = cfg.k_eff() as i64;
    assert_eq!(proj(&cfg), k * (d * d + d * ds));
    assert_eq!(proj(&ss), d * d + d * d);
    assert_eq!(ss.ge_input_width(), cfg.ge_input_width());
    let expected_single = (proj(&ss) - proj(&cfg)) + (d * d * d - k * ds * ds * ds);
    assert_eq!(count(&ss) - base, expected_single);

    println!(
        "criterion 6 (ablation accounting): PASS — bi-affine 4,194,304; \
         translation shrink 65,536; single-space delta {expected_single}"
    );
}

// ── criterion 7 ──────────────────────────────────────────────────────

#[test]
fn criterion_7_equation_oracles() {
    let docs = gen_synthetic(&SynthSpec {
        documents: 2,
        entities_per_doc: 3,
        relation_count: 3,
        sentences_per_doc: 3,
        vocab_size: 40,
        seed: 23,
    })
    .unwrap();
    let (vocab, _) = build_vocab(&docs, None, 1).unwrap();
    let cfg = ModelConfig::tiny();
    let model = HinModel::new(cfg.clone(), &vocab, 23).unwrap();
    let corpus = PreparedCorpus::prepare(&docs, &vocab, cfg.coref_buckets, cfg.relations).unwrap();
    let p = straightline::Params(&model.params);
    let close = |a: &[f64], b: &[f64], what: &str| {
        assert_eq!(a.len(), b.len(), "{what}: length");
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-10, "{what}: {x} vs {y}");
        }
    };
    let mut rng = substream(23, Stream::Probe, 9, 9);

    // Bi-affine pairing against the triple loop.
    let ds = cfg.ds_eff();
    let ea: Vec<f64> = (0..ds).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let eb: Vec<f64> = (0..ds).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r_id = model.params.find("biaffine.0").unwrap();
    let mut tape = Tape::new();
    let rv = tape.leaf(model.params.get(r_id).tensor.clone());
    let av = tape.constant_vector(ea.clone());
    let bv = tape.constant_vector(eb.clone());
    let out = tape.biaffine(av, bv, rv).unwrap();
    close(
        tape.data(out),
        &straightline::biaffine_tri(p.data("biaffine.0"), &ea, &eb),
        "biaffine",
    );

    // Attention pooling against the direct recomputation.
    let d = cfg.d();
    let n = 5;
    let rows: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let mut tape = Tape::new();
    let bind = |tape: &mut Tape, name: &str| {
        let id = model.params.find(name).unwrap();
        tape.leaf(model.params.get(id).tensor.clone())
    };
    let bound = AttnBound {
        query: bind(&mut tape, "attn_w.u"),
        w: bind(&mut tape, "attn_w.w"),
        b: bind(&mut tape, "attn_w.b"),
    };
    let h = tape.constant(Tensor::matrix(n, d, rows.clone()).unwrap());
    let (pooled, weights) =
        additive_attention_pool(&mut tape, h, &bound, &vec![true; n]).unwrap();
    let row_vecs: Vec<Vec<f64>> = (0..n).map(|t| rows[t * d..(t + 1) * d].to_vec()).collect();
    let (sl_pooled, sl_weights) = straightline::attention_pool(&p, "attn_w", &row_vecs);
    close(tape.data(pooled), &sl_pooled, "attention pooled");
    close(tape.data(weights), &sl_weights, "attention weights");

    // Entity-level inference and the full pair forward, against the
    // straight-line reimplementation, on every pair of the fixture.
    let mut pairs_checked = 0usize;
    for doc in &corpus.docs {
        let mut r = substream(0, Stream::Dropout, 0, 0);
        let mut df = model.begin_doc(doc, Mode::Eval, &mut r).unwrap();
        for pair in &doc.pairs {
            let ea_v = df.entity_representation(pair.head).unwrap();
            let ea = df.tape.data(ea_v).to_vec();
            let eb_v = df.entity_representation(pair.tail).unwrap();
            let eb = df.tape.data(eb_v).to_vec();
            let (ie_v, _, _) = df.entity_inference(ea_v, eb_v, pair, &mut r).unwrap();
            close(
                &df.tape.data(ie_v).to_vec(),
                &straightline::entity_inference(
                    &cfg,
                    &p,
                    &ea,
                    &eb,
                    pair.dist_ab_idx,
                    pair.dist_ba_idx,
                ),
                "entity inference",
            );
            let pf = df.forward_pair(pair, &mut r).unwrap();
            close(
                &pf.probabilities,
                &straightline::forward_pair(&cfg, &p, doc, pair),
                "forward pair",
            );
            pairs_checked += 1;
        }
    }
    assert!(pairs_checked >= 12);
    println!(
        "criterion 7 (equation oracles): PASS — biaffine, attention, entity \
         inference and {pairs_checked} full pair forwards within 1e-10"
    );
}

// ── criterion 8 ──────────────────────────────────────────────────────

#[test]
fn criterion_8_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    run_ok(&[
        "synth", "--out", data.to_str().unwrap(), "--seed", "7",
        "--docs", "6", "--entities", "3", "--relations", "2",
        "--sentences", "4", "--vocab", "60",
    ]);
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        r#"
        [model]
        d_w = 8
        d_t = 2
        d_c = 2
        d_dist = 2
        hidden = 3
        subspaces = 2
        subspace_dim = 3
        dropout = 0.1
        coref_buckets = 8
        [train]
        epochs = 3
        batch_size = 6
        learning_rate = 0.003
        "#,
    )
    .unwrap();
    let corpus = data.join("corpus.json");
    let train_to = |dir: &PathBuf| {
        run_ok(&[
            "train",
            "--train",
            corpus.to_str().unwrap(),
            "--dev",
            corpus.to_str().unwrap(),
            "--config",
            config.to_str().unwrap(),
            "--out",
            dir.to_str().unwrap(),
            "--seed",
            "7",
        ]);
    };
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    train_to(&a);
    train_to(&b);
    for f in [
        "checkpoint/params.blob",
        "checkpoint/manifest.txt",
        "checkpoint/meta.json",
        "train_log.txt",
        "dev_predictions.tsv",
    ] {
        let fa = std::fs::read(a.join(f)).unwrap();
        let fb = std::fs::read(b.join(f)).unwrap();
        assert_eq!(fa, fb, "{f} differs between identical runs");
    }
    println!("criterion 8 (determinism): PASS — checkpoints and logs byte-identical");
}

// ── criterion 9 ──────────────────────────────────────────────────────

#[test]
fn criterion_9_recall_by_evidence_reporting() {
    // Grouping oracle on a mixed-evidence fixture, exact.
    let fact = |i: usize, ev: usize| GoldFact {
        doc_id: format!("d{}", i % 3),
        head: i,
        tail: i + 1,
        relation: 0,
        evidence_len: ev,
        head_names: vec![],
        tail_names: vec![],
    };
    let evs = [1, 2, 3, 4, 5, 6, 7, 9, 0, 2, 1, 8, 2, 3, 0, 5, 6, 7, 4, 2];
    let gold = GoldSet::from_facts((0..20).map(|i| fact(i, evs[i])).collect());
    let predicted: std::collections::HashSet<_> = (0..20)
        .filter(|i| i % 2 == 0)
        .map(|i| (format!("d{}", i % 3), i, i + 1, 0usize))
        .collect();
    let (table, zero) = recall_by_evidence(&predicted, &gold);
    let mut expect: std::collections::HashMap<String, (usize, usize)> =
        std::collections::HashMap::new();
    for (i, &ev) in evs.iter().enumerate() {
        let label = match ev {
            0 => "0".to_string(),
            e if e >= 7 => ">=7".to_string(),
            e => e.to_string(),
        };
        let slot = expect.entry(label).or_default();
        slot.0 += 1;
        if i % 2 == 0 {
            slot.1 += 1;
        }
    }
    for b in &table {
        let (size, hit) = expect.get(&b.label).copied().unwrap_or((0, 0));
        assert_eq!((b.size, b.recalled), (size, hit), "bucket {}", b.label);
    }
    let (zsize, zhit) = expect.get("0").copied().unwrap();
    assert_eq!((zero.size, zero.recalled), (zsize, zhit));

    // The eval command must produce the same table, re-derived here from
    // the corpus file and the prediction list alone.
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    run_ok(&[
        "synth", "--out", data.to_str().unwrap(), "--seed", "9",
        "--docs", "8", "--entities", "3", "--relations", "3",
        "--sentences", "5", "--vocab", "80",
    ]);
    let corpus = data.join("corpus.json");
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        r#"
        [model]
        d_w = 8
        d_t = 2
        d_c = 2
        d_dist = 2
        hidden = 3
        subspaces = 2
        subspace_dim = 3
        dropout = 0.1
        coref_buckets = 8
        [train]
        epochs = 4
        batch_size = 8
        learning_rate = 0.003
        "#,
    )
    .unwrap();
    let run_dir = tmp.path().join("run");
    run_ok(&[
        "train",
        "--train", corpus.to_str().unwrap(),
        "--dev", corpus.to_str().unwrap(),
        "--config", config.to_str().unwrap(),
        "--out", run_dir.to_str().unwrap(),
        "--seed", "9",
    ]);
    let eval_dir = tmp.path().join("eval");
    run_ok(&[
        "eval",
        "--corpus", corpus.to_str().unwrap(),
        "--checkpoint", run_dir.join("checkpoint").to_str().unwrap(),
        "--out", eval_dir.to_str().unwrap(),
    ]);
    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(eval_dir.join("eval_report.json")).unwrap(),
    )
    .unwrap();
    let delta = report["delta"].as_f64().expect("finite delta on a labeled eval");

    // Independent grouping pass over the corpus + prediction file.
    let corpus_json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&corpus).unwrap()).unwrap();
    let predictions = std::fs::read_to_string(eval_dir.join("predictions.tsv")).unwrap();
    let predicted: std::collections::HashSet<(String, usize, usize, String)> = predictions
        .lines()
        .filter_map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            let score: f64 = f[4].parse().unwrap();
            (score > delta).then(|| {
                (f[0].to_string(), f[1].parse().unwrap(), f[2].parse().unwrap(), f[3].to_string())
            })
        })
        .collect();
    let mut expect: std::collections::HashMap<String, (usize, usize)> =
        std::collections::HashMap::new();
    for doc in corpus_json.as_array().unwrap() {
        let title = doc["title"].as_str().unwrap();
        for label in doc["labels"].as_array().unwrap() {
            let ev = label["evidence"].as_array().unwrap().len();
            let bucket = match ev {
                0 => "0".to_string(),
                e if e >= 7 => ">=7".to_string(),
                e => e.to_string(),
            };
            let key = (
                title.to_string(),
                label["h"].as_u64().unwrap() as usize,
                label["t"].as_u64().unwrap() as usize,
                label["r"].as_str().unwrap().to_string(),
            );
            let slot = expect.entry(bucket).or_default();
            slot.0 += 1;
            if predicted.contains(&key) {
                slot.1 += 1;
            }
        }
    }
    for b in report["evidence_recall"].as_array().unwrap() {
        let label = b["label"].as_str().unwrap();
        let (size, hit) = expect.get(label).copied().unwrap_or((0, 0));
        assert_eq!(b["size"].as_u64().unwrap() as usize, size, "bucket {label} size");
        assert_eq!(b["recalled"].as_u64().unwrap() as usize, hit, "bucket {label} recalled");
    }

    // Published benchmark scores are documented as out-of-scope context;
    // the desk-scale gates above stand in their place.
    let readme = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../README.md"),
    )
    .expect("README.md at the workspace root");
    assert!(
        readme.contains("desk scale") || readme.contains("desk-scale"),
        "README must state the desk-scale verification scope"
    );
    println!(
        "criterion 9 (recall-by-evidence reporting): PASS — grouping oracle \
         exact; eval report matches an independent recount"
    );
}
