//! Closed-vocabulary answer fields and their classification heads.

use numkit::{init_linear, linear, ParamStore, Tape, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::moro::{ModelConfig, TaskTokens};
use crate::sim::SceneState;
use crate::vocab::{
    Action, Availability, Difficulty, Direction, Distance, Illumination, ObstacleCategory, Task,
    Terrain, Vocab, Weather,
};

/// Obstacle slots; slot `j` holds the obstacle of distance band `j`.
pub const OBSTACLE_SLOTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObstacleAnswer {
    pub category: ObstacleCategory,
    pub direction: Direction,
    pub distance: Distance,
}

/// Decoded answers for one frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredAnswerSet {
    pub weather: Weather,
    pub illumination: Illumination,
    pub terrain: Terrain,
    pub difficulty: Difficulty,
    pub drivable_availability: Availability,
    pub free_space_direction: Direction,
    pub action: Action,
    /// `None` for absent slots.
    pub obstacles: [Option<ObstacleAnswer>; OBSTACLE_SLOTS],
}

impl StructuredAnswerSet {
    /// Ground-truth answers of a scene.
    pub fn from_scene(s: &SceneState) -> Self {
        Self {
            weather: s.weather,
            illumination: s.illumination,
            terrain: s.terrain,
            difficulty: s.difficulty,
            drivable_availability: s.drivable_availability,
            free_space_direction: s.free_space_direction,
            action: s.action,
            obstacles: std::array::from_fn(|j| {
                s.obstacle_in_slot(j).map(|o| ObstacleAnswer {
                    category: o.category,
                    direction: o.direction,
                    distance: o.distance,
                })
            }),
        }
    }

    pub fn obstacle_count(&self) -> usize {
        self.obstacles.iter().flatten().count()
    }
}

/// One classification head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Weather,
    Illumination,
    Terrain,
    Difficulty,
    Availability,
    FreeSpace,
    Action,
    Present(usize),
    Category(usize),
    Direction(usize),
    Distance(usize),
}

impl Field {
    pub fn all() -> Vec<Field> {
        let mut v = vec![
            Field::Weather,
            Field::Illumination,
            Field::Availability,
            Field::FreeSpace,
            Field::Terrain,
            Field::Difficulty,
        ];
        for j in 0..OBSTACLE_SLOTS {
            v.extend([Field::Present(j), Field::Category(j), Field::Direction(j), Field::Distance(j)]);
        }
        v.push(Field::Action);
        v
    }

    pub fn task(self) -> Task {
        match self {
            Field::Weather | Field::Illumination => Task::Weather,
            Field::Availability | Field::FreeSpace => Task::Drivable,
            Field::Terrain | Field::Difficulty => Task::Traversability,
            Field::Present(_) | Field::Category(_) | Field::Direction(_) | Field::Distance(_) => Task::Obstacle,
            Field::Action => Task::Suggestion,
        }
    }

    pub fn classes(self) -> usize {
        match self {
            Field::Weather => Weather::size(),
            Field::Illumination => Illumination::size(),
            Field::Terrain => Terrain::size(),
            Field::Difficulty => Difficulty::size(),
            Field::Availability => Availability::size(),
            Field::FreeSpace => Direction::size(),
            Field::Action => Action::size(),
            Field::Present(_) => 2,
            Field::Category(_) => ObstacleCategory::size(),
            Field::Direction(_) => Direction::size(),
            Field::Distance(_) => Distance::size(),
        }
    }

    pub fn name(self) -> String {
        match self {
            Field::Weather => "weather".into(),
            Field::Illumination => "illumination".into(),
            Field::Terrain => "terrain".into(),
            Field::Difficulty => "difficulty".into(),
            Field::Availability => "drivable_availability".into(),
            Field::FreeSpace => "free_space_direction".into(),
            Field::Action => "action".into(),
            Field::Present(j) => format!("obstacle{j}.present"),
            Field::Category(j) => format!("obstacle{j}.category"),
            Field::Direction(j) => format!("obstacle{j}.direction"),
            Field::Distance(j) => format!("obstacle{j}.distance"),
        }
    }

    fn param(self) -> String {
        format!("head.{}", self.name())
    }

    /// Target class in `a`, or `None` when the field is unsupervised (the
    /// attributes of an absent obstacle).
    pub fn target(self, a: &StructuredAnswerSet) -> Option<usize> {
        match self {
            Field::Weather => Some(a.weather.index()),
            Field::Illumination => Some(a.illumination.index()),
            Field::Terrain => Some(a.terrain.index()),
            Field::Difficulty => Some(a.difficulty.index()),
            Field::Availability => Some(a.drivable_availability.index()),
            Field::FreeSpace => Some(a.free_space_direction.index()),
            Field::Action => Some(a.action.index()),
            Field::Present(j) => Some(a.obstacles[j].is_some() as usize),
            Field::Category(j) => a.obstacles[j].map(|o| o.category.index()),
            Field::Direction(j) => a.obstacles[j].map(|o| o.direction.index()),
            Field::Distance(j) => a.obstacles[j].map(|o| o.distance.index()),
        }
    }
}

/// Argmax with ties resolved toward the earlier vocabulary entry.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

pub fn init_heads<R: Rng>(store: &mut ParamStore, cfg: &ModelConfig, rng: &mut R) -> Result<()> {
    let inp = cfg.query_dim;
    for f in Field::all() {
        init_linear(store, &f.param(), inp, f.classes(), rng)?;
    }
    Ok(())
}

/// Logits of every field, in [`Field::all`] order; each head reads the mean
/// of its task's output tokens.
pub fn field_logits(
    tape: &mut Tape,
    store: &ParamStore,
    tasks: &[TaskTokens],
) -> Result<Vec<(Field, Var)>> {
    let mut pooled = Vec::with_capacity(tasks.len());
    for t in tasks {
        pooled.push(tape.mean_rows(t.fused));
    }
    let mut out = Vec::new();
    for f in Field::all() {
        let x = pooled[f.task().index()];
        out.push((f, linear(tape, store, x, &f.param())?));
    }
    Ok(out)
}

/// Sum of per-field cross-entropies against `target`.
pub fn text_loss(tape: &mut Tape, logits: &[(Field, Var)], target: &StructuredAnswerSet) -> Result<Option<Var>> {
    let mut total: Option<Var> = None;
    for &(f, l) in logits {
        if let Some(t) = f.target(target) {
            let ce = tape.softmax_xent(l, &[t])?;
            total = Some(match total {
                None => ce,
                Some(acc) => tape.add(acc, ce)?,
            });
        }
    }
    Ok(total)
}

/// Argmax decoding of recorded logits.
pub fn decode_structured(tape: &Tape, logits: &[(Field, Var)]) -> StructuredAnswerSet {
    let pick = |f: Field| -> usize {
        let (_, v) = logits.iter().find(|(g, _)| *g == f).expect("field present");
        argmax(tape.value(*v).data())
    };
    StructuredAnswerSet {
        weather: Weather::from_index(pick(Field::Weather)).unwrap(),
        illumination: Illumination::from_index(pick(Field::Illumination)).unwrap(),
        terrain: Terrain::from_index(pick(Field::Terrain)).unwrap(),
        difficulty: Difficulty::from_index(pick(Field::Difficulty)).unwrap(),
        drivable_availability: Availability::from_index(pick(Field::Availability)).unwrap(),
        free_space_direction: Direction::from_index(pick(Field::FreeSpace)).unwrap(),
        action: Action::from_index(pick(Field::Action)).unwrap(),
        obstacles: std::array::from_fn(|j| {
            (pick(Field::Present(j)) == 1).then(|| ObstacleAnswer {
                category: ObstacleCategory::from_index(pick(Field::Category(j))).unwrap(),
                direction: Direction::from_index(pick(Field::Direction(j))).unwrap(),
                distance: Distance::from_index(pick(Field::Distance(j))).unwrap(),
            })
        }),
    }
}
