//! Episodic task engine: class pools, meta-splits and N-way K-shot episodes.

mod episode;
mod pool;
mod split;

pub use episode::{derive_seed, sample_episode, Episode};
pub use pool::{
    load_image, load_image_pool, make_synthetic_pool, resample_bilinear, ClassDescriptor, ClassPool, PoolClass,
    PoolSource, SyntheticPoolSpec, IMAGE_SIDE,
};
pub use split::{split_classes, MetaSplit, SplitPart, SplitSpec, OMNIGLOT_CLASSES};
