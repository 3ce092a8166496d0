//! Fixed sentence frames rendered from structured answers.

use serde::{Deserialize, Serialize};

use crate::heads::answers::StructuredAnswerSet;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionText {
    /// One rendered sentence per task, in task order.
    pub sentences: Vec<String>,
}

impl CaptionText {
    /// Whitespace tokens of the whole caption with punctuation split off.
    pub fn tokens(&self) -> Vec<String> {
        tokenize(&self.sentences.join(" "))
    }

    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }
}

/// Lowercases, separates `.`, `,` and `:` into their own tokens and splits on whitespace.
pub fn tokenize(s: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(s.len() + 16);
    for ch in s.to_lowercase().chars() {
        if matches!(ch, '.' | ',' | ':') {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        } else {
            spaced.push(ch);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

pub fn render_caption(a: &StructuredAnswerSet) -> CaptionText {
    let mut sentences = vec![
        format!("weather is {} under {}.", a.weather, a.illumination),
        format!("drivable area is {} toward {}.", a.drivable_availability, a.free_space_direction),
        format!("terrain is {}, traversability {}.", a.terrain, a.difficulty),
    ];
    let present: Vec<String> = a
        .obstacles
        .iter()
        .enumerate()
        .filter_map(|(j, o)| {
            o.map(|o| format!("obstacle {}: {} at {} {}.", j + 1, o.category, o.direction, o.distance))
        })
        .collect();
    if present.is_empty() {
        sentences.push("no obstacles detected.".into());
    } else {
        sentences.push(present.join(" "));
    }
    sentences.push(format!("suggestion: {}.", a.action));
    CaptionText { sentences }
}
