//! Supervision math: spline smoothing of pose tracks, ego-frame future
//! segments and the K-means action vocabulary.

pub mod bspline;
pub mod ego;
pub mod kmeans;

pub use bspline::{bspline_smooth, BSpline, PoseSequence, SplineMode};
pub use ego::{ego_future_segment, horizon_points, vectorize, HORIZON_INDICES, SEGMENT_POINTS};
pub use kmeans::{kmeans, kmeans_actions, kmeans_restarts, label_action, ActionRule, ActionVocabulary, KMeansRun};
