//! Training for prefix adder policies: random-walk corpus synthesis,
//! cross-entropy pre-training, and GRPO fine-tuning with a KL anchor to a
//! frozen reference model and best-design retrieval from a persistent
//! design database.

pub mod adam;
pub mod corpus;
pub mod db;
pub mod grpo;
pub mod pretrain;
pub mod reward;

pub use adam::Adam;
pub use corpus::{gen_corpus, load_corpus, write_corpus, CorpusError};
pub use db::{pareto_of, DbError, DesignDb};
pub use grpo::{
    finetune, grpo_advantages, grpo_step, kl_term, kl_terms, FinetuneReport, GrpoConfig,
    GrpoError, IterationReport, ObjectiveForm, TrainState,
};
pub use pretrain::{
    pretrain, pretrain_loss, pretrain_loss_and_grad, EpochReport, PretrainConfig, PretrainError,
    PretrainReport,
};
pub use reward::{score_design, DesignRecord, RewardError, RewardMode, Source};
