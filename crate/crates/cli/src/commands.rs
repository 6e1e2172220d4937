//! Command implementations. Every command is a pure function of its inputs
//! and the seed: rerunning with an identical spec reproduces its outputs
//! byte for byte, and no command mutates its input files.

use std::path::Path;

use hin_core::checkpoint::{load_checkpoint, save_checkpoint, write_atomic, CheckpointMeta};
use hin_core::corpus::{
    build_vocab, gen_synthetic, load_docred_checked, load_vectors, serialize_docred,
    Document, GoldSet, IgnKeys, PreparedCorpus, SynthSpec, Vocabulary,
};
use hin_core::eval::{evaluate_f1, format_records, render_report, score_corpus};
use hin_core::exec::Execution;
use hin_core::model::{AblationFlag, HinModel, ModelConfig};
use hin_core::tensor::Fault;
use hin_core::train::{train_loop, TrainConfig};
use hin_core::{HinError, Result};

use crate::config::FileConfig;

pub fn ensure_exists(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(HinError::io(
            path.display().to_string(),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory"),
        ));
    }
    Ok(())
}

pub fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HinError::io(dir.display().to_string(), e))
}

fn load_corpus(path: &Path, vocab: Option<&Vocabulary>) -> Result<Vec<Document>> {
    ensure_exists(path)?;
    let (docs, stats) = load_docred_checked(path, vocab)?;
    if stats.dropped_empty_sentences > 0 {
        eprintln!(
            "note: dropped {} empty sentence(s) from {}",
            stats.dropped_empty_sentences,
            path.display()
        );
    }
    Ok(docs)
}

// ── synth ────────────────────────────────────────────────────────────

pub fn cmd_synth(config: &FileConfig, seed: u64, out: &Path) -> Result<()> {
    ensure_out_dir(out)?;
    let spec = SynthSpec { seed, ..config.synth.apply(SynthSpec::default()) };
    let docs = gen_synthetic(&spec)?;
    let path = out.join("corpus.json");
    write_atomic(&path, serialize_docred(&docs).as_bytes())?;
    let facts: usize = docs.iter().map(|d| d.facts.len()).sum();
    println!(
        "wrote {} ({} documents, {} facts, seed {})",
        path.display(),
        docs.len(),
        facts,
        seed
    );
    Ok(())
}

// ── train ────────────────────────────────────────────────────────────

pub struct TrainArgs<'a> {
    pub train: &'a Path,
    pub dev: &'a Path,
    pub vectors: Option<&'a Path>,
    pub out: &'a Path,
    pub seed: u64,
    pub exec: Execution,
}

pub fn cmd_train(config: &FileConfig, args: &TrainArgs) -> Result<()> {
    ensure_exists(args.train)?;
    ensure_exists(args.dev)?;
    ensure_out_dir(args.out)?;

    let train_docs = load_corpus(args.train, None)?;
    let dev_docs = load_corpus(args.dev, None)?;
    let vectors = match args.vectors {
        Some(p) => {
            ensure_exists(p)?;
            Some(load_vectors(p)?)
        }
        None => None,
    };

    // Vocabularies cover both splits so dev labels and types resolve.
    let mut all_docs = train_docs.clone();
    all_docs.extend(dev_docs.iter().cloned());
    let (vocab, coverage) = build_vocab(&all_docs, vectors.as_ref(), 1)?;
    if vectors.is_some() {
        println!(
            "pretrained coverage: {} matched, {} randomly initialized (file rows {})",
            coverage.matched, coverage.random_init, coverage.pretrained_rows
        );
    }

    let mut model_cfg = config.model.apply(ModelConfig::default());
    if config.explicit_relations().is_none() {
        model_cfg.relations = vocab.relations.len().max(1);
    }
    if config.model.freeze_word_embeddings.is_none() {
        // Freezing only makes sense when there is something pretrained to
        // keep; a random table stays trainable.
        model_cfg.freeze_word_embeddings = vectors.is_some();
    }
    model_cfg.validate()?;

    let tcfg = TrainConfig { seed: args.seed, ..config.train.apply(TrainConfig::default()) };
    let train_corpus =
        PreparedCorpus::prepare(&train_docs, &vocab, model_cfg.coref_buckets, model_cfg.relations)?;
    let dev_corpus =
        PreparedCorpus::prepare(&dev_docs, &vocab, model_cfg.coref_buckets, model_cfg.relations)?;
    let ign = IgnKeys::from_gold(&train_corpus.gold);

    let mut model = HinModel::new(model_cfg.clone(), &vocab, args.seed)?;
    let outcome = train_loop(&mut model, &train_corpus, &dev_corpus, &ign, &tcfg, args.exec)?;

    let mut log = String::new();
    for line in &outcome.logs {
        log.push_str(&line.render());
        log.push('\n');
    }
    let best = match outcome.best_epoch {
        Some(e) => format!(
            "best epoch {} (dev F1 {:.6})",
            e,
            outcome.best_report.as_ref().map(|r| r.f1).unwrap_or(0.0)
        ),
        None => "no epochs ran".to_string(),
    };
    log.push_str(&best);
    log.push('\n');
    write_atomic(&args.out.join("train_log.txt"), log.as_bytes())?;
    write_atomic(
        &args.out.join("dev_predictions.tsv"),
        format_records(&outcome.dev_records, &vocab).as_bytes(),
    )?;

    let meta = CheckpointMeta {
        config: model_cfg,
        vocab,
        seed: args.seed,
        delta: if outcome.delta.is_finite() { Some(outcome.delta) } else { None },
    };
    save_checkpoint(&args.out.join("checkpoint"), &outcome.params, &meta)?;

    print!("{log}");
    println!("checkpoint written to {}", args.out.join("checkpoint").display());
    Ok(())
}

// ── eval / predict ───────────────────────────────────────────────────

pub struct EvalArgs<'a> {
    pub corpus: &'a Path,
    pub checkpoint: &'a Path,
    pub train_facts: Option<&'a Path>,
    pub out: &'a Path,
    pub delta: Option<f64>,
    pub exec: Execution,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    ensure_exists(args.corpus)?;
    ensure_exists(args.checkpoint)?;
    ensure_out_dir(args.out)?;

    let (model, meta) = load_checkpoint(args.checkpoint)?;
    let docs = load_corpus(args.corpus, Some(&meta.vocab))?;
    if docs.iter().all(|d| d.facts.is_empty()) {
        return Err(HinError::invalid(
            "eval corpus",
            format!(
                "{} carries no labels; use `predict` for unlabeled corpora",
                args.corpus.display()
            ),
        ));
    }
    let corpus = PreparedCorpus::prepare(
        &docs,
        &meta.vocab,
        model.config.coref_buckets,
        model.config.relations,
    )?;
    let ign = match args.train_facts {
        Some(p) => {
            let train_docs = load_corpus(p, Some(&meta.vocab))?;
            IgnKeys::from_gold(&GoldSet::from_docs(&train_docs, &meta.vocab)?)
        }
        None => IgnKeys::empty(),
    };

    let delta = args.delta.unwrap_or_else(|| meta.delta_or_inf());
    let records = score_corpus(&model, &corpus, args.exec)?;
    let report = evaluate_f1(&records, &corpus.gold, delta, &ign, &corpus);

    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| HinError::Json { path: "eval_report.json".into(), source: e })?;
    write_atomic(&args.out.join("eval_report.json"), json.as_bytes())?;
    let text = render_report(&report);
    write_atomic(&args.out.join("eval_report.txt"), text.as_bytes())?;
    let kept: Vec<_> = records.iter().filter(|r| r.score > delta).cloned().collect();
    write_atomic(
        &args.out.join("predictions.tsv"),
        format_records(&kept, &meta.vocab).as_bytes(),
    )?;
    print!("{text}");
    Ok(())
}

pub fn cmd_predict(args: &EvalArgs) -> Result<()> {
    ensure_exists(args.corpus)?;
    ensure_exists(args.checkpoint)?;
    ensure_out_dir(args.out)?;

    let (model, meta) = load_checkpoint(args.checkpoint)?;
    let docs = load_corpus(args.corpus, Some(&meta.vocab))?;
    let corpus = PreparedCorpus::prepare(
        &docs,
        &meta.vocab,
        model.config.coref_buckets,
        model.config.relations,
    )?;
    let delta = args.delta.unwrap_or_else(|| meta.delta_or_inf());
    let records = score_corpus(&model, &corpus, args.exec)?;
    let kept: Vec<_> = records.into_iter().filter(|r| r.score > delta).collect();
    write_atomic(
        &args.out.join("predictions.tsv"),
        format_records(&kept, &meta.vocab).as_bytes(),
    )?;
    println!(
        "wrote {} prediction(s) to {}",
        kept.len(),
        args.out.join("predictions.tsv").display()
    );
    Ok(())
}

// ── gradcheck ────────────────────────────────────────────────────────

pub struct GradcheckArgs<'a> {
    pub out: &'a Path,
    pub seed: u64,
    pub probe_cap: usize,
    pub fault: Option<Fault>,
}

pub fn cmd_gradcheck(config: &FileConfig, args: &GradcheckArgs) -> Result<()> {
    ensure_out_dir(args.out)?;
    let cfg = config.model.apply(ModelConfig::tiny());
    if cfg.d() > 8 {
        return Err(HinError::invalid(
            "gradcheck config",
            format!("token width d = {} exceeds the bound of 8 (use hidden <= 4)", cfg.d()),
        ));
    }
    cfg.validate()?;
    let report = hin_core::model::gradcheck_model(&cfg, args.seed, args.probe_cap, args.fault)?;

    let mut table = String::from("parameter\tmax_rel_err\tprobed\n");
    for c in &report.checks {
        table.push_str(&format!("{}\t{:.6e}\t{}\n", c.name, c.max_rel_err, c.probed));
    }
    table.push_str(&format!("max\t{:.6e}\t-\n", report.max_rel_err()));
    write_atomic(&args.out.join("gradcheck.txt"), table.as_bytes())?;
    print!("{table}");

    report.require(1e-4)
}

// ── ablate ───────────────────────────────────────────────────────────

pub struct AblateArgs<'a> {
    pub train: &'a Path,
    pub dev: &'a Path,
    pub flag: &'a str,
    pub out: &'a Path,
    pub seed: u64,
    pub exec: Execution,
}

pub fn cmd_ablate(config: &FileConfig, args: &AblateArgs) -> Result<()> {
    ensure_exists(args.train)?;
    ensure_exists(args.dev)?;
    ensure_out_dir(args.out)?;
    let flag = AblationFlag::parse(args.flag).ok_or_else(|| {
        HinError::invalid(
            "ablation flag",
            format!(
                "unknown flag `{}`; expected one of {:?}",
                args.flag,
                AblationFlag::all().map(|f| f.name())
            ),
        )
    })?;

    let train_docs = load_corpus(args.train, None)?;
    let dev_docs = load_corpus(args.dev, None)?;
    let mut all_docs = train_docs.clone();
    all_docs.extend(dev_docs.iter().cloned());
    let (vocab, _) = build_vocab(&all_docs, None, 1)?;

    let mut model_cfg = config.model.apply(ModelConfig::default());
    if config.explicit_relations().is_none() {
        model_cfg.relations = vocab.relations.len().max(1);
    }
    if config.model.freeze_word_embeddings.is_none() {
        model_cfg.freeze_word_embeddings = false;
    }
    model_cfg.validate()?;
    let tcfg = TrainConfig { seed: args.seed, ..config.train.apply(TrainConfig::default()) };

    let train_corpus =
        PreparedCorpus::prepare(&train_docs, &vocab, model_cfg.coref_buckets, model_cfg.relations)?;
    let dev_corpus =
        PreparedCorpus::prepare(&dev_docs, &vocab, model_cfg.coref_buckets, model_cfg.relations)?;
    let ign = IgnKeys::from_gold(&train_corpus.gold);

    let outcome = hin_core::ablate::run_ablation(
        &model_cfg,
        flag,
        &vocab,
        &train_corpus,
        &dev_corpus,
        &ign,
        &tcfg,
        args.exec,
    )?;

    let mut summary = format!(
        "ablation {}\nparameters: base {} ablated {} (delta {})\n",
        outcome.flag, outcome.base_param_count, outcome.ablated_param_count, outcome.expected_delta
    );
    for (tag, report) in
        [("base", &outcome.base_report), ("ablated", &outcome.ablated_report)]
    {
        if let Some(r) = report {
            summary.push_str(&format!(
                "{tag}: P {:.6} R {:.6} F1 {:.6} IgnF1 {:.6}\n",
                r.precision, r.recall, r.f1, r.ign_f1
            ));
            let json = serde_json::to_string_pretty(r)
                .map_err(|e| HinError::Json { path: format!("{tag}_report.json"), source: e })?;
            write_atomic(&args.out.join(format!("{tag}_report.json")), json.as_bytes())?;
        }
    }
    write_atomic(&args.out.join("ablate_summary.txt"), summary.as_bytes())?;
    print!("{summary}");
    Ok(())
}
