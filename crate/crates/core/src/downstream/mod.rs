//! Consumers of a learned representation: reward shaping, features for a
//! linear learner, and hierarchical control over clusters or latents.

mod features;
mod hrl;
mod shaping;

pub use features::{normalized_features, train_feature_policy, FeatureTask, LinearQConfig};
pub use hrl::{
    cluster_commander, mean_return, policy_gradient, run_meta_episode, train_meta, Checkpoint, Commander, HrlEnv,
    HrlTask, MetaAction, MetaCurvePoint, MetaEpisode, MetaKind, MetaPolicy, ReinforceConfig,
};
pub use shaping::{
    evaluate_greedy, shaped_reward, train_shaped, CurvePoint, QLearnerConfig, ShapedRewardSpec, ShapingTask,
    TabularQLearner,
};
