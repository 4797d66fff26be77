//! Single-object tracking with correlation-filter classification, anchor-free
//! box regression and an online regression model generator that is rectified
//! against first-frame samples.

pub mod backbone;
pub mod cls;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod optim;
pub mod rmg;
pub mod tensor;
pub mod tracker;

pub use backbone::{BackboneConfig, CropTransform, FeatureExtractor, Features, Image};
pub use cls::{ClsConfig, ClsMemory, ClsModel, ClsSample, Scale};
pub use error::{FcotError, Result};
pub use geometry::{BBox, GridPos, OffsetMaps, ScoreMap};
pub use optim::{LeastSquares, LsqProblem, SupervisionPoint};
pub use rmg::{RegModel, RegSample, RmgConfig};
pub use tensor::{FeatureMap, FilterShape, LinearFilter, PaddingMode};
pub use tracker::{FrameResult, OnlineReg, TrackState, TrackerConfig};
