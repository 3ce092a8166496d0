//! Ground-truth scene sampling.

use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{direction_bin, Geometry};
use crate::labeler::{ego_future_segment, PoseSequence};
use crate::sim::config::{Marginal, SimConfig};
use crate::vocab::{
    Action, Availability, Difficulty, Direction, Distance, Illumination, ObstacleCategory, Terrain,
    Vocab, Weather,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub category: ObstacleCategory,
    pub direction: Direction,
    pub distance: Distance,
    /// Ego-frame position in meters.
    pub ego_xy: [f64; 2],
}

/// Structured ground truth of one synthetic frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub weather: Weather,
    pub illumination: Illumination,
    pub terrain: Terrain,
    pub difficulty: Difficulty,
    pub drivable_availability: Availability,
    pub free_space_direction: Direction,
    /// At most one obstacle per distance band, ordered near to far.
    pub obstacles: Vec<Obstacle>,
    pub action: Action,
    /// 20 ego-frame points at 0.5 s spacing over the next 10 s.
    pub future_trajectory: Vec<[f64; 2]>,
}

/// Time of the labeled frame within the simulated pose track.
pub const T_NOW: f64 = 2.0;
const TRACK_RATE: f64 = 10.0;
const TRACK_END: f64 = 12.5;

/// Difficulty weights given the terrain, in vocabulary order.
fn difficulty_prior(t: Terrain) -> [f64; 4] {
    match t {
        Terrain::Dirt => [0.45, 0.35, 0.15, 0.05],
        Terrain::Gravel => [0.4, 0.35, 0.2, 0.05],
        Terrain::Grass => [0.5, 0.3, 0.15, 0.05],
        Terrain::Mud => [0.15, 0.35, 0.35, 0.15],
        Terrain::Sand => [0.25, 0.4, 0.25, 0.1],
        Terrain::Snow => [0.2, 0.35, 0.3, 0.15],
        Terrain::Rock => [0.1, 0.3, 0.4, 0.2],
    }
}

fn draw<V: Vocab, R: Rng>(m: &Marginal, rng: &mut R) -> V {
    let idx = WeightedIndex::new(&m.0).expect("validated marginal").sample(rng);
    V::from_index(idx).unwrap()
}

/// Cruise speed (m/s) and yaw rate (rad/s) of the maneuver a scene implies.
pub fn maneuver(difficulty: Difficulty, availability: Availability, free: Direction) -> (f64, f64) {
    if difficulty == Difficulty::Impassable || availability == Availability::Blocked {
        return (0.0, 0.0);
    }
    let mut v = match difficulty {
        Difficulty::Easy => 2.0,
        Difficulty::Moderate => 1.5,
        _ => 1.0,
    };
    if availability == Availability::PartiallyBlocked {
        v *= 0.75;
    }
    let w = match free {
        Direction::Front => 0.0,
        Direction::FrontLeft => 0.12,
        Direction::Left => 0.25,
        Direction::FrontRight => -0.12,
        Direction::Right => -0.25,
    };
    (v, w)
}

/// Noisy world-frame pose track: cruise straight until `T_NOW`, then follow
/// the maneuver.
pub fn simulate_track<R: Rng>(speed: f64, yaw_rate: f64, cfg: &SimConfig, rng: &mut R) -> PoseSequence {
    let start = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0)];
    let heading0: f64 = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let past_speed = if speed > 0.0 { speed } else { rng.random_range(0.0..0.3) };
    let pos_noise = Normal::new(0.0, cfg.pose_noise.max(0.0)).unwrap();
    let head_noise = Normal::new(0.0, cfg.heading_noise.max(0.0)).unwrap();
    let n = (TRACK_END * TRACK_RATE).round() as usize + 1;
    let mut times = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / TRACK_RATE;
        let (dx, dy, th) = if t <= T_NOW {
            let d = past_speed * (t - T_NOW);
            (d * heading0.cos(), d * heading0.sin(), heading0)
        } else {
            let tau = t - T_NOW;
            let th = heading0 + yaw_rate * tau;
            if yaw_rate.abs() < 1e-12 {
                (speed * tau * heading0.cos(), speed * tau * heading0.sin(), th)
            } else {
                let r = speed / yaw_rate;
                (r * (th.sin() - heading0.sin()), -r * (th.cos() - heading0.cos()), th)
            }
        };
        times.push(t);
        poses.push([
            start[0] + dx + pos_noise.sample(rng),
            start[1] + dy + pos_noise.sample(rng),
            th + head_noise.sample(rng),
        ]);
    }
    PoseSequence::new(times, poses).expect("simulated track is well-formed")
}

/// Angular extent (degrees) of a direction bin restricted to x >= 0.
fn bin_angles(d: Direction) -> (f64, f64) {
    match d {
        Direction::Front => (-22.0, 22.0),
        Direction::FrontLeft => (23.0, 67.0),
        Direction::FrontRight => (-67.0, -23.0),
        Direction::Left => (68.0, 89.0),
        Direction::Right => (-89.0, -68.0),
    }
}

fn band_ranges(g: &Geometry, d: Distance) -> (f64, f64) {
    match d {
        Distance::Near => (2.0, g.near_edge - 1e-6),
        Distance::Mid => (g.near_edge, g.far_edge),
        Distance::Far => (g.far_edge + 1e-6, g.far_edge + 10.0),
    }
}

/// Directions a band can host inside the BEV footprint.
pub fn band_directions(d: Distance) -> &'static [Direction] {
    match d {
        Distance::Far => &[Direction::Front, Direction::FrontLeft, Direction::FrontRight],
        _ => Direction::ALL,
    }
}

fn sample_obstacle<R: Rng>(g: &Geometry, band: Distance, rng: &mut R) -> Obstacle {
    let dirs = band_directions(band);
    let (r0, r1) = band_ranges(g, band);
    loop {
        let direction = dirs[rng.random_range(0..dirs.len())];
        let (a0, a1) = bin_angles(direction);
        for _ in 0..64 {
            let a = rng.random_range(a0..a1).to_radians();
            let r = rng.random_range(r0..r1);
            let (x, y) = (r * a.cos(), r * a.sin());
            if g.in_bev(x, y) && direction_bin(x, y) == direction && g.distance_bin(r) == band {
                let category = ObstacleCategory::ALL[rng.random_range(0..ObstacleCategory::size())];
                return Obstacle {
                    category,
                    direction,
                    distance: band,
                    ego_xy: [x, y],
                };
            }
        }
    }
}

/// Everything but the action, plus the raw pose track it was labeled from.
pub(crate) fn sample_unlabeled<R: Rng>(cfg: &SimConfig, rng: &mut R) -> (SceneState, PoseSequence) {
    let weather: Weather = draw(&cfg.weather, rng);
    let illumination: Illumination = draw(&cfg.illumination, rng);
    let terrain: Terrain = draw(&cfg.terrain, rng);
    let prior = difficulty_prior(terrain);
    let dw = Marginal(prior.iter().zip(&cfg.difficulty.0).map(|(a, b)| a * b).collect());
    let difficulty: Difficulty = draw(&dw, rng);
    let drivable_availability: Availability = draw(&cfg.availability, rng);
    let free_space_direction: Direction = draw(&cfg.free_space, rng);
    let mut obstacles = Vec::new();
    for &band in Distance::ALL {
        if rng.random::<f64>() < cfg.obstacle_rate {
            obstacles.push(sample_obstacle(&cfg.geometry, band, rng));
        }
    }
    let (v, w) = maneuver(difficulty, drivable_availability, free_space_direction);
    let jitter = |rng: &mut R| rng.random_range(0.95..1.05);
    let speed = v * jitter(rng);
    let yaw = w * jitter(rng);
    let track = simulate_track(speed, yaw, cfg, rng);
    let future_trajectory =
        ego_future_segment(&track, T_NOW, cfg.spline).expect("simulated track covers the horizon");
    let scene = SceneState {
        weather,
        illumination,
        terrain,
        difficulty,
        drivable_availability,
        free_space_direction,
        obstacles,
        action: Action::Stop,
        future_trajectory,
    };
    (scene, track)
}

impl SceneState {
    /// Obstacle occupying distance band `slot` (0 near, 1 mid, 2 far).
    pub fn obstacle_in_slot(&self, slot: usize) -> Option<&Obstacle> {
        let band = Distance::from_index(slot)?;
        self.obstacles.iter().find(|o| o.distance == band)
    }
}
