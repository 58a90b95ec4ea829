//! Contrastive alignment of image, text and GPS embeddings.

mod loss;
mod model;
mod train;
mod vectorize;

pub use loss::{contrastive_pair_loss, logit_scale, PairLoss, Reduction, MAX_LOGIT_SCALE};
pub use model::{
    total_loss, AlignmentGrads, AlignmentModel, LossBreakdown, ModelDims, TriModalBatch,
};
pub use train::{train, EpochLog, TrainConfig, Trainer};
pub use vectorize::{
    image_gps_embeddings, normalize, text_description, vectorize_image, vectorize_images,
};
