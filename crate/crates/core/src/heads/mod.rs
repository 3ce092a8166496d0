//! Structured decoding heads, caption templates and the trajectory planner.

pub mod answers;
pub mod caption;
pub mod planner;

pub use answers::{decode_structured, field_logits, text_loss, Field, ObstacleAnswer, StructuredAnswerSet, OBSTACLE_SLOTS};
pub use caption::{render_caption, tokenize, CaptionText};
pub use planner::{gru_decode, make_planning_token, normalized_target, waypoint_loss, TrajectoryModes, HORIZONS};
