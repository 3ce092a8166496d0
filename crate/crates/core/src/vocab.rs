//! Closed answer vocabularies shared by the simulator, the decoding heads and
//! the caption templates.

use serde::{Deserialize, Serialize};

/// A closed vocabulary whose members render as fixed lowercase tokens.
pub trait Vocab: Copy + Eq + Sized + 'static {
    const ALL: &'static [Self];
    fn as_str(self) -> &'static str;

    fn index(self) -> usize {
        Self::ALL.iter().position(|&v| v == self).unwrap()
    }

    fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    fn parse(s: &str) -> Option<Self> {
        Self::ALL.iter().copied().find(|v| v.as_str() == s)
    }

    fn size() -> usize {
        Self::ALL.len()
    }
}

macro_rules! vocab {
    ($(#[$m:meta])* $name:ident { $($variant:ident => $s:literal),+ $(,)? }) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),+ }

        impl Vocab for $name {
            const ALL: &'static [Self] = &[$($name::$variant),+];
            fn as_str(self) -> &'static str {
                match self { $($name::$variant => $s),+ }
            }
        }

        impl std::fmt::Display for $name {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

vocab!(Weather {
    Sunny => "sunny",
    Cloudy => "cloudy",
    Rainy => "rainy",
    Snowy => "snowy",
    Foggy => "foggy",
});

vocab!(Illumination {
    BrightLight => "bright_light",
    Daylight => "daylight",
    Twilight => "twilight",
    Darkness => "darkness",
});

vocab!(Terrain {
    Dirt => "dirt",
    Gravel => "gravel",
    Grass => "grass",
    Mud => "mud",
    Sand => "sand",
    Snow => "snow",
    Rock => "rock",
});

vocab!(Difficulty {
    Easy => "easy",
    Moderate => "moderate",
    Hard => "hard",
    Impassable => "impassable",
});

vocab!(Availability {
    Clear => "clear",
    PartiallyBlocked => "partially_blocked",
    Blocked => "blocked",
});

vocab!(
    /// Coarse bearing relative to the ego heading.
    Direction {
        Front => "front",
        FrontLeft => "front_left",
        FrontRight => "front_right",
        Left => "left",
        Right => "right",
    }
);

vocab!(ObstacleCategory {
    Vehicle => "vehicle",
    Pedestrian => "pedestrian",
    Animal => "animal",
    Rock => "rock",
    Tree => "tree",
    Pole => "pole",
    Building => "building",
    Unknown => "unknown",
});

vocab!(Distance {
    Near => "near",
    Mid => "mid",
    Far => "far",
});

vocab!(Action {
    GoStraight => "go_straight",
    TurnLeft => "turn_left",
    TurnRight => "turn_right",
    Stop => "stop",
});

vocab!(
    /// Expert branch of the modality router, in tie-break order.
    Branch {
        Lidar => "l",
        Camera => "c",
        Fusion => "lc",
    }
);

vocab!(
    /// Caption tasks, each owning one group of queries.
    Task {
        Weather => "weather",
        Drivable => "drivable",
        Traversability => "traversability",
        Obstacle => "obstacle",
        Suggestion => "suggestion",
    }
);

impl Task {
    /// Tasks whose queries attend through a locality window.
    pub fn localized(self) -> bool {
        matches!(self, Task::Traversability | Task::Obstacle | Task::Suggestion)
    }
}

impl Branch {
    /// Routing target for a record with the given sensor availability.
    pub fn from_availability(lidar: bool, camera: bool) -> Option<Self> {
        match (lidar, camera) {
            (true, true) => Some(Branch::Fusion),
            (true, false) => Some(Branch::Lidar),
            (false, true) => Some(Branch::Camera),
            (false, false) => None,
        }
    }

    pub fn one_hot(self) -> [f64; 3] {
        let mut y = [0.0; 3];
        y[self.index()] = 1.0;
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabularies_match_the_benchmark_lists() {
        let w: Vec<_> = Weather::ALL.iter().map(|v| v.as_str()).collect();
        assert_eq!(w, ["sunny", "cloudy", "rainy", "snowy", "foggy"]);
        let t: Vec<_> = Terrain::ALL.iter().map(|v| v.as_str()).collect();
        assert_eq!(t, ["dirt", "gravel", "grass", "mud", "sand", "snow", "rock"]);
        let c: Vec<_> = ObstacleCategory::ALL.iter().map(|v| v.as_str()).collect();
        assert_eq!(
            c,
            ["vehicle", "pedestrian", "animal", "rock", "tree", "pole", "building", "unknown"]
        );
        let a: Vec<_> = Action::ALL.iter().map(|v| v.as_str()).collect();
        assert_eq!(a, ["go_straight", "turn_left", "turn_right", "stop"]);
        assert_eq!(Availability::size(), 3);
        assert_eq!(Distance::size(), 3);
        assert_eq!(Direction::size(), 5);
        assert_eq!(Illumination::size(), 4);
        assert_eq!(Difficulty::size(), 4);
    }

    #[test]
    fn routing_targets_follow_availability() {
        assert_eq!(Branch::from_availability(true, false).unwrap().one_hot(), [1.0, 0.0, 0.0]);
        assert_eq!(Branch::from_availability(false, true).unwrap().one_hot(), [0.0, 1.0, 0.0]);
        assert_eq!(Branch::from_availability(true, true).unwrap().one_hot(), [0.0, 0.0, 1.0]);
        assert_eq!(Branch::from_availability(false, false), None);
    }

    #[test]
    fn parse_and_index_round_trip() {
        for &d in Direction::ALL {
            assert_eq!(Direction::parse(d.as_str()), Some(d));
            assert_eq!(Direction::from_index(d.index()), Some(d));
        }
        assert_eq!(Illumination::parse("bright_light"), Some(Illumination::BrightLight));
        assert_eq!(Weather::parse("hail"), None);
        let json = serde_json::to_string(&Availability::PartiallyBlocked).unwrap();
        assert_eq!(json, "\"partially_blocked\"");
    }
}
