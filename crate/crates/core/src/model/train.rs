//! Mini-batch training with the cross-entropy, BoN and joint objectives.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::ParallelPair;
use crate::error::{Error, Result};
use crate::loss::{bon_loss, cross_entropy, joint_loss, JointConfig};
use crate::model::adam::{Adam, AdamConfig};
use crate::model::checkpoint::Checkpoint;
use crate::model::nat::{LengthPredictor, ModelDims, NatModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Schedule {
    /// Cross-entropy from scratch.
    CeOnly,
    /// Fine-tune a source checkpoint with the BoN objective alone.
    BonFt,
    /// Joint objective from scratch.
    BonJoint,
    /// Fine-tune a BoN-Joint checkpoint with the BoN objective alone.
    BonJointFt,
}

impl Schedule {
    pub fn is_finetune(self) -> bool {
        matches!(self, Schedule::BonFt | Schedule::BonJointFt)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            Schedule::CeOnly => 0,
            Schedule::BonFt => 1,
            Schedule::BonJoint => 2,
            Schedule::BonJointFt => 3,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Schedule::CeOnly,
            1 => Schedule::BonFt,
            2 => Schedule::BonJoint,
            3 => Schedule::BonJointFt,
            _ => return None,
        })
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::CeOnly => "ce",
            Schedule::BonFt => "bon-ft",
            Schedule::BonJoint => "bon-joint",
            Schedule::BonJointFt => "bon-joint-ft",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" | "ce-only" => Ok(Schedule::CeOnly),
            "bon-ft" => Ok(Schedule::BonFt),
            "bon-joint" => Ok(Schedule::BonJoint),
            "bon-joint-ft" => Ok(Schedule::BonJointFt),
            other => Err(Error::Config(format!("unknown schedule '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: Schedule,
    pub joint: JointConfig,
    pub adam: AdamConfig,
    /// Steps of the from-scratch phase (CE-only, BoN-Joint).
    pub steps: usize,
    /// Steps of BoN fine-tuning (BoN-FT, BoN-Joint+FT).
    pub finetune_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            schedule: Schedule::CeOnly,
            joint: JointConfig::default(),
            adam: AdamConfig::default(),
            steps: 3000,
            finetune_steps: 500,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.joint.validate()?;
        self.adam.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let budget = if self.schedule.is_finetune() {
            self.finetune_steps
        } else {
            self.steps
        };
        if budget == 0 {
            return Err(Error::Config("step budget must be positive".into()));
        }
        Ok(())
    }

    /// BoN weight of the active objective: `alpha` of the joint loss.
    fn objective(&self) -> JointConfig {
        let alpha = match self.schedule {
            Schedule::CeOnly => 1.0,
            Schedule::BonJoint => self.joint.alpha,
            Schedule::BonFt | Schedule::BonJointFt => 0.0,
        };
        JointConfig {
            alpha,
            n: self.joint.n,
        }
    }
}

/// One row of the training log. Losses are batch means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub ce_loss: f64,
    pub bon_loss: f64,
    pub joint_loss: f64,
    pub lr: f64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<StepRecord>,
    /// Sentences whose BoN term was degenerate (shorter than `n`).
    pub degenerate: usize,
}

fn check_corpus(corpus: &[ParallelPair], dims: &ModelDims) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for (i, pair) in corpus.iter().enumerate() {
        let too_big = pair
            .source
            .iter()
            .chain(pair.target.iter())
            .any(|w| w as usize >= dims.vocab);
        if too_big {
            return Err(Error::arg(format!(
                "pair {i} has a token outside the vocabulary"
            )));
        }
        if pair.target.len() > dims.max_len {
            return Err(Error::Capacity {
                requested: pair.target.len(),
                max: dims.max_len,
            });
        }
    }
    Ok(())
}

/// Trains a model according to `cfg`.
///
/// From-scratch schedules initialize parameters from `cfg.seed` (or start
/// from `init` when given); fine-tuning schedules require `init`. The
/// length predictor is trained alongside with its own cross-entropy at
/// equal weight. During training the target length is the reference
/// length.
pub fn train(
    cfg: &TrainConfig,
    dims: &ModelDims,
    corpus: &[ParallelPair],
    init: Option<Checkpoint>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    dims.validate()?;
    check_corpus(corpus, dims)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut model, mut lp, start_step) = match (init, cfg.schedule) {
        (None, s) if s.is_finetune() => {
            return Err(Error::Config(
                "fine-tune requires a source checkpoint".into(),
            ));
        }
        (Some(ckpt), Schedule::BonJointFt)
            if !matches!(
                ckpt.header.schedule,
                Schedule::BonJoint | Schedule::BonJointFt
            ) =>
        {
            return Err(Error::Config(format!(
                "bon-joint-ft fine-tunes a bon-joint checkpoint, got a {} checkpoint",
                ckpt.header.schedule
            )));
        }
        (Some(ckpt), _) => {
            if ckpt.header.dims != *dims {
                return Err(Error::Config(format!(
                    "source checkpoint dimensions {:?} differ from {:?}",
                    ckpt.header.dims, dims
                )));
            }
            (ckpt.model, ckpt.length, ckpt.header.step)
        }
        (None, _) => {
            let model = NatModel::init(*dims, &mut rng)?;
            let lp = LengthPredictor::init(dims, &mut rng);
            (model, lp, 0)
        }
    };

    let objective = cfg.objective();
    let steps = if cfg.schedule.is_finetune() {
        cfg.finetune_steps
    } else {
        cfg.steps
    };
    let mut adam = Adam::new(cfg.adam, model.parameter_count());
    let lp_size: usize = lp.params().iter().map(|(_, m)| m.as_slice().len()).sum();
    let mut lp_adam = Adam::new(cfg.adam, lp_size);

    let started = Instant::now();
    let scale = 1.0 / cfg.batch_size as f64;
    let mut log = Vec::with_capacity(steps);
    let mut degenerate = 0;

    for step in 0..steps {
        let mut grads = NatModel::zeros(*dims);
        let mut lp_grads = LengthPredictor::zeros(dims);
        let (mut ce_sum, mut bon_sum, mut obj_sum) = (0.0, 0.0, 0.0);

        for _ in 0..cfg.batch_size {
            let idx = rng.gen_range(0..corpus.len());
            let pair = &corpus[idx];
            let fwd = model.forward_cached(&pair.source, pair.target.len())?;
            let table = fwd.table();

            let obj = joint_loss(table, &pair.target, &objective)?;
            let ce = cross_entropy(table, &pair.target)?.value;
            let bon = bon_loss(table, &pair.target, objective.n)?;
            if !(obj.value.is_finite() && ce.is_finite() && bon.value.is_finite()) {
                return Err(Error::NumericalFailure {
                    step: start_step as usize + step + 1,
                    sentence: idx,
                });
            }
            if objective.alpha < 1.0 && bon.degenerate {
                degenerate += 1;
            }
            ce_sum += ce;
            bon_sum += bon.value;
            obj_sum += obj.value;

            let mut d_probs = obj.grad;
            d_probs.scale(scale);
            model.backward(&fwd, &d_probs, &mut grads);

            let diff = pair.target.len() as i64 - pair.source.len() as i64;
            let summary = model.encode_summary(&pair.source);
            lp.loss_and_grad(&summary, diff, scale, &mut lp_grads);
        }

        {
            let mut params = model.params_mut();
            let grad_view = grads.params();
            adam.update(
                params
                    .iter_mut()
                    .flat_map(|(_, m)| m.as_mut_slice().iter_mut()),
                grad_view.iter().flat_map(|(_, m)| m.as_slice().iter()),
            );
            let mut lp_params = lp.params_mut();
            let lp_grad_view = lp_grads.params();
            lp_adam.update(
                lp_params
                    .iter_mut()
                    .flat_map(|(_, m)| m.as_mut_slice().iter_mut()),
                lp_grad_view.iter().flat_map(|(_, m)| m.as_slice().iter()),
            );
        }

        let record = StepRecord {
            step: start_step + step as u64 + 1,
            ce_loss: ce_sum * scale,
            bon_loss: bon_sum * scale,
            joint_loss: obj_sum * scale,
            lr: cfg.adam.lr,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        if record.step.is_multiple_of(500) {
            log::debug!(
                "step {} ce {:.4} bon {:.4} objective {:.4}",
                record.step,
                record.ce_loss,
                record.bon_loss,
                record.joint_loss
            );
        }
        log.push(record);
    }

    if degenerate > 0 {
        log::warn!("{degenerate} sentences were shorter than n; their BoN term was zero");
    }
    let total_steps = start_step + steps as u64;
    Ok(TrainOutcome {
        checkpoint: Checkpoint::new(model, lp, cfg.seed, total_steps, cfg.schedule),
        log,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_task, SyntheticTaskSpec, TaskKind};

    fn setup() -> (ModelDims, Vec<ParallelPair>) {
        let spec = SyntheticTaskSpec {
            kind: TaskKind::Copy,
            vocab_size: 6,
            min_len: 1,
            max_len: 5,
            samples: 40,
            seed: 2,
            mapping_seed: 0,
        };
        let dims = ModelDims {
            vocab: spec.total_vocab(),
            d_model: 8,
            hidden: 8,
            max_len: 8,
            max_len_diff: 2,
        };
        (dims, generate_task(&spec).unwrap())
    }

    fn cfg(schedule: Schedule) -> TrainConfig {
        TrainConfig {
            schedule,
            steps: 20,
            finetune_steps: 10,
            batch_size: 4,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn finetune_requires_source() {
        let (dims, corpus) = setup();
        let err = train(&cfg(Schedule::BonFt), &dims, &corpus, None).unwrap_err();
        assert_eq!(
            err.to_string(),
            "configuration error: fine-tune requires a source checkpoint"
        );
        assert!(train(&cfg(Schedule::BonJointFt), &dims, &corpus, None).is_err());
    }

    #[test]
    fn joint_ft_rejects_ce_source() {
        let (dims, corpus) = setup();
        let base = train(&cfg(Schedule::CeOnly), &dims, &corpus, None).unwrap();
        assert!(train(
            &cfg(Schedule::BonJointFt),
            &dims,
            &corpus,
            Some(base.checkpoint)
        )
        .is_err());
    }

    #[test]
    fn finetune_continues_step_count() {
        let (dims, corpus) = setup();
        let base = train(&cfg(Schedule::BonJoint), &dims, &corpus, None).unwrap();
        let ft = train(
            &cfg(Schedule::BonJointFt),
            &dims,
            &corpus,
            Some(base.checkpoint),
        )
        .unwrap();
        assert_eq!(ft.checkpoint.header.step, 30);
        assert_eq!(ft.log.first().unwrap().step, 21);
        assert_eq!(ft.checkpoint.header.schedule, Schedule::BonJointFt);
    }

    #[test]
    fn joint_with_alpha_one_matches_ce_only() {
        let (dims, corpus) = setup();
        let ce = train(&cfg(Schedule::CeOnly), &dims, &corpus, None).unwrap();
        let mut joint_cfg = cfg(Schedule::BonJoint);
        joint_cfg.joint.alpha = 1.0;
        let joint = train(&joint_cfg, &dims, &corpus, None).unwrap();
        assert_eq!(ce.checkpoint.model, joint.checkpoint.model);
        let strip = |log: &[StepRecord]| -> Vec<(f64, f64)> {
            log.iter().map(|r| (r.ce_loss, r.joint_loss)).collect()
        };
        assert_eq!(strip(&ce.log), strip(&joint.log));
    }

    #[test]
    fn degenerate_sentences_are_counted() {
        let (dims, corpus) = setup();
        let out = train(&cfg(Schedule::BonJoint), &dims, &corpus, None).unwrap();
        // min_len 1 guarantees some single-token targets.
        assert!(out.degenerate > 0);
    }

    #[test]
    fn rejects_oversized_targets() {
        let (mut dims, corpus) = setup();
        dims.max_len = 3;
        assert!(matches!(
            train(&cfg(Schedule::CeOnly), &dims, &corpus, None),
            Err(Error::Capacity { .. })
        ));
    }

    #[test]
    fn schedule_names_round_trip() {
        for s in [
            Schedule::CeOnly,
            Schedule::BonFt,
            Schedule::BonJoint,
            Schedule::BonJointFt,
        ] {
            assert_eq!(s.to_string().parse::<Schedule>().unwrap(), s);
            assert_eq!(Schedule::from_code(s.code()), Some(s));
        }
    }
}
