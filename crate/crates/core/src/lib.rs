pub mod cli;
pub mod delta_rank;
pub mod evaluator;
pub mod jsonl;
pub mod logit_kl;
pub mod mastery;
pub mod names;
pub mod restorer;
pub mod tensor_store;
