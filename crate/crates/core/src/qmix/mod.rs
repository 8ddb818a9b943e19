//! QMIX: shared per-agent Q-networks combined by a monotonic, state
//! conditioned mixer, trained centrally from replayed steps and executed
//! with local observations only.

pub mod buffer;
pub mod checkpoint;
pub mod learner;
pub mod network;
pub mod nn;
pub mod schedule;
pub mod train;

pub use buffer::{Batch, ReplayBuffer, Transition};
pub use checkpoint::Checkpoint;
pub use learner::{greedy_index, loss_and_grad, select_actions, select_from_q, td_loss, td_targets, Learner};
pub use network::{NetDims, QmixNet};
pub use schedule::EpsilonSchedule;
pub use train::{curve_csv, eval_seeds, evaluate_policy, CurveRecord, EvalSummary, GreedyPolicy, TrainConfig, Trainer};
