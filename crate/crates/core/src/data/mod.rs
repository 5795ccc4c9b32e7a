//! Image I/O, binarization, thinning and Single Crop triplet generation.

pub mod crop;
pub mod dataset;
pub mod io;
pub mod mask;
pub mod synth;
pub mod triplet;

pub use crop::{resize_keep_aspect_then_crop, single_crop, ResizedCrop, ShufflePolicy, ShuffleRecord};
pub use dataset::{datagen, generate, load_dataset, DatagenConfig, GeneratedTriplet, Source};
pub use io::{load_gray_png, load_png, save_attention_map, save_png};
pub use mask::{binarize_adaptive, grayscale, skeletonize, Mask};
pub use synth::{synthesize, SynthConfig};
pub use triplet::{make_triplet, Triplet, TripletConfig};
