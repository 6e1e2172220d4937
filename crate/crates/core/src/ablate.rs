//! Paired base-vs-ablated training runs with parameter accounting.

use crate::corpus::{IgnKeys, PreparedCorpus, Vocabulary};
use crate::eval::EvalReport;
use crate::exec::Execution;
use crate::model::{param_count, AblationFlag, HinModel, ModelConfig, VocabDims};
use crate::train::{train_loop, TrainConfig};
use crate::{HinError, Result};

/// Both runs' reports plus the parameter accounting.
pub struct AblationOutcome {
    pub flag: &'static str,
    pub base_report: Option<EvalReport>,
    pub ablated_report: Option<EvalReport>,
    pub base_param_count: usize,
    pub ablated_param_count: usize,
    /// Count delta predicted from the configuration alone.
    pub expected_delta: i64,
    pub base_logs: Vec<crate::train::EpochLog>,
    pub ablated_logs: Vec<crate::train::EpochLog>,
}

/// Train the base and ablated variants under identical seeds and
/// schedules. The configuration-predicted parameter-count delta is
/// asserted against the actually allocated models before any training.
pub fn run_ablation(
    base_cfg: &ModelConfig,
    flag: AblationFlag,
    vocab: &Vocabulary,
    train: &PreparedCorpus,
    dev: &PreparedCorpus,
    ign: &IgnKeys,
    tcfg: &TrainConfig,
    exec: Execution,
) -> Result<AblationOutcome> {
    let ablated_cfg = flag.applied_to(base_cfg);
    let dims = VocabDims { words: vocab.tokens.len(), types: vocab.types.len() };
    let expected_delta =
        param_count(&ablated_cfg, &dims) as i64 - param_count(base_cfg, &dims) as i64;

    let mut base = HinModel::new(base_cfg.clone(), vocab, tcfg.seed)?;
    let mut ablated = HinModel::new(ablated_cfg, vocab, tcfg.seed)?;
    let actual_delta = ablated.num_parameters() as i64 - base.num_parameters() as i64;
    if actual_delta != expected_delta {
        return Err(HinError::invalid(
            "ablation",
            format!(
                "allocated parameter delta {actual_delta} does not match the \
                 configuration-predicted {expected_delta} for `{}`",
                flag.name()
            ),
        ));
    }

    let base_out = train_loop(&mut base, train, dev, ign, tcfg, exec)?;
    let ablated_out = train_loop(&mut ablated, train, dev, ign, tcfg, exec)?;
    Ok(AblationOutcome {
        flag: flag.name(),
        base_param_count: base.num_parameters(),
        ablated_param_count: ablated.num_parameters(),
        expected_delta,
        base_report: base_out.best_report,
        ablated_report: ablated_out.best_report,
        base_logs: base_out.logs,
        ablated_logs: ablated_out.logs,
    })
}
