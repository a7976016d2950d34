pub mod discriminator;
pub mod extractor;
pub mod generator;
pub mod graph;
pub mod ops;
pub mod tensor;

pub use discriminator::{build_discriminator, discriminator_forward, DiscriminatorParams};
pub use extractor::{ExtractorKind, FeatureExtractor, LayerCounting};
pub use generator::{build_generator, extract_feature_maps, generator_forward, GeneratorParams};
pub use graph::{Graph, ParamSet, ParamSpec};
pub use tensor::{Real, Tensor};
