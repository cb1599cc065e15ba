pub mod bundle;
pub mod camera;
pub mod imagecore;
pub mod landmarks;
pub mod mesh;
pub mod raster;
pub mod synth;
pub mod posefit;
pub mod descriptors;
pub mod learners;
pub mod frontalizer;
pub mod pipeline;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/images.md")]
    mod images {}
    #[doc = include_str!("../../../book/src/reference_bundle.md")]
    mod reference_bundle {}
    #[doc = include_str!("../../../book/src/pose_fitting.md")]
    mod pose_fitting {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    mod synthesis {}
    #[doc = include_str!("../../../book/src/symmetry.md")]
    mod symmetry {}
    #[doc = include_str!("../../../book/src/descriptors.md")]
    mod descriptors {}
    #[doc = include_str!("../../../book/src/learners.md")]
    mod learners {}
    #[doc = include_str!("../../../book/src/benchmarks.md")]
    mod benchmarks {}
}
