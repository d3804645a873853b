//! State representations: the ARC encoder, reconstruction-based and
//! dynamics-based baselines, and the dataset they are all trained on.

mod dataset;
mod losses;
mod model;
mod train;

pub use dataset::{collect_dataset, DatasetSource, Split, TrajectoryDataset, Transition, VALIDATION_FRACTION};
pub use losses::{loss_arc, loss_inverse, loss_predictive, loss_slowness, loss_vae, one_hot, NORM_EPS};
pub use model::{write_embedding_csv, Decoder, Encoder, EncoderManifest, RepKind, TrainConfig, TrainReport};
pub use train::{
    fit_arc, fit_decoder, linear_encoder, reconstruction_error, train, train_decoder, TrainedModel,
};
