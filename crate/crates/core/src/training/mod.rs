//! Conditional triplet training: loss, optimizer, schedule and loop.

pub mod loss;
pub mod optim;
pub mod train;

pub use loss::{
    conditional_triplet_loss, cosine_distance, masked_cosine_distance, multi_dim_loss, TripletLoss,
};
pub use optim::{plateau_schedule, Adam, PlateauSchedule};
pub use train::{
    batch_loss, embed_features, embed_segments, sample_probe_triplets, train_loop, training_index,
    triplet_accuracy, validation_loss, validation_split, write_history, EpochRecord, TrainConfig,
    TrainOutcome,
};
