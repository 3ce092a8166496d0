//! Sensor corruptions applied to rendered features.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::sim::render::ModalityFeatureSet;
use crate::sim::scene::SceneState;
use crate::vocab::{Branch, Illumination, Weather};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CameraDegradation {
    None,
    GaussianNoise { sigma: f64 },
    Blur { radius: usize },
    Blackout,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LidarDegradation {
    None,
    GaussianNoise { sigma: f64 },
    Sparsify { keep: f64 },
    Blackout,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationSpec {
    pub camera: CameraDegradation,
    pub lidar: LidarDegradation,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self::CLEAN
    }
}

impl DegradationSpec {
    pub const CLEAN: Self = Self {
        camera: CameraDegradation::None,
        lidar: LidarDegradation::None,
    };
    pub const CAMERA_BLACKOUT: Self = Self {
        camera: CameraDegradation::Blackout,
        lidar: LidarDegradation::None,
    };
    pub const LIDAR_BLACKOUT: Self = Self {
        camera: CameraDegradation::None,
        lidar: LidarDegradation::Blackout,
    };

    pub fn is_clean(&self) -> bool {
        *self == Self::CLEAN
    }

    pub fn camera_present(&self) -> bool {
        self.camera != CameraDegradation::Blackout
    }

    pub fn lidar_present(&self) -> bool {
        self.lidar != LidarDegradation::Blackout
    }

    /// Routing target implied by which sensors survive.
    pub fn routing_label(&self) -> Option<Branch> {
        Branch::from_availability(self.lidar_present(), self.camera_present())
    }
}

impl fmt::Display for CameraDegradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::None => write!(f, "none"),
            Self::GaussianNoise { sigma } => write!(f, "noise:{sigma}"),
            Self::Blur { radius } => write!(f, "blur:{radius}"),
            Self::Blackout => write!(f, "blackout"),
        }
    }
}

impl fmt::Display for LidarDegradation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::None => write!(f, "none"),
            Self::GaussianNoise { sigma } => write!(f, "noise:{sigma}"),
            Self::Sparsify { keep } => write!(f, "sparsify:{keep}"),
            Self::Blackout => write!(f, "blackout"),
        }
    }
}

impl fmt::Display for DegradationSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "camera={},lidar={}", self.camera, self.lidar)
    }
}

fn split_kind(s: &str) -> (&str, Option<&str>) {
    match s.split_once(':') {
        Some((k, v)) => (k.trim(), Some(v.trim())),
        None => (s.trim(), None),
    }
}

fn arg<T: FromStr>(s: &str, v: Option<&str>) -> Result<T> {
    v.and_then(|v| v.parse().ok())
        .ok_or_else(|| Error::Config(format!("corruption '{s}' needs a numeric argument")))
}

fn check_sigma(sigma: f64) -> Result<f64> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(sigma)
    } else {
        Err(Error::Config(format!("noise sigma must be non-negative, got {sigma}")))
    }
}

impl FromStr for CameraDegradation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match split_kind(s) {
            ("none", None) => Ok(Self::None),
            ("blackout", None) => Ok(Self::Blackout),
            ("noise", v) => Ok(Self::GaussianNoise { sigma: check_sigma(arg(s, v)?)? }),
            ("blur", v) => Ok(Self::Blur { radius: arg(s, v)? }),
            _ => Err(Error::Config(format!("unknown camera corruption '{s}'"))),
        }
    }
}

impl FromStr for LidarDegradation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match split_kind(s) {
            ("none", None) => Ok(Self::None),
            ("blackout", None) => Ok(Self::Blackout),
            ("noise", v) => Ok(Self::GaussianNoise { sigma: check_sigma(arg(s, v)?)? }),
            ("sparsify", v) => {
                let keep: f64 = arg(s, v)?;
                if !(0.0..=1.0).contains(&keep) {
                    return Err(Error::Config(format!("keep fraction must lie in [0, 1], got {keep}")));
                }
                Ok(Self::Sparsify { keep })
            }
            _ => Err(Error::Config(format!("unknown lidar corruption '{s}'"))),
        }
    }
}

impl FromStr for DegradationSpec {
    type Err = Error;
    /// Parses `camera=<c>,lidar=<l>`; either part may be omitted.
    fn from_str(s: &str) -> Result<Self> {
        let mut d = Self::CLEAN;
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part.split_once('=') {
                Some(("camera", v)) => d.camera = v.parse()?,
                Some(("lidar", v)) => d.lidar = v.parse()?,
                _ => return Err(Error::Config(format!("bad corruption cell '{s}'"))),
            }
        }
        Ok(d)
    }
}

fn add_noise<R: Rng>(block: &mut [f32], sigma: f64, rng: &mut R) {
    if sigma == 0.0 {
        return;
    }
    let n = Normal::new(0.0, sigma).unwrap();
    for v in block {
        *v = (*v as f64 + n.sample(rng)) as f32;
    }
}

fn box_blur(block: &mut [f32], rows: usize, cols: usize, dim: usize, radius: usize) {
    if radius == 0 {
        return;
    }
    let src: Vec<f64> = block.iter().map(|&v| v as f64).collect();
    let mut acc = vec![0.0; dim];
    for r in 0..rows {
        for c in 0..cols {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let (r0, r1) = (r.saturating_sub(radius), (r + radius).min(rows - 1));
            let (c0, c1) = (c.saturating_sub(radius), (c + radius).min(cols - 1));
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    let t = &src[(rr * cols + cc) * dim..(rr * cols + cc + 1) * dim];
                    acc.iter_mut().zip(t).for_each(|(a, v)| *a += v);
                }
            }
            let n = ((r1 - r0 + 1) * (c1 - c0 + 1)) as f64;
            let dst = &mut block[(r * cols + c) * dim..(r * cols + c + 1) * dim];
            dst.iter_mut().zip(&acc).for_each(|(d, a)| *d = (a / n) as f32);
        }
    }
}

/// Applies `d` to a copy of `f`. Blackout zeroes the block and clears the
/// availability flag.
pub fn apply_degradation(f: &ModalityFeatureSet, d: &DegradationSpec, rng_seed: u64) -> ModalityFeatureSet {
    let mut out = f.clone();
    let mut rng = seed::rng(rng_seed, seed::DEGRADE);
    let dim = out.dim;
    let (cr, cc) = (out.cam_rows, out.cam_cols);
    match d.camera {
        CameraDegradation::None => {}
        CameraDegradation::GaussianNoise { sigma } => add_noise(out.camera_block_mut(), sigma, &mut rng),
        CameraDegradation::Blur { radius } => box_blur(out.camera_block_mut(), cr, cc, dim, radius),
        CameraDegradation::Blackout => {
            out.camera_block_mut().iter_mut().for_each(|v| *v = 0.0);
            out.camera_present = false;
        }
    }
    match d.lidar {
        LidarDegradation::None => {}
        LidarDegradation::GaussianNoise { sigma } => add_noise(out.lidar_block_mut(), sigma, &mut rng),
        LidarDegradation::Sparsify { keep } => {
            for cell in out.lidar_block_mut().chunks_exact_mut(dim) {
                if rng.random::<f64>() >= keep {
                    cell.iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        LidarDegradation::Blackout => {
            out.lidar_block_mut().iter_mut().for_each(|v| *v = 0.0);
            out.lidar_present = false;
        }
    }
    out
}

/// Draws a corruption whose side depends on the scene: darkness, twilight and
/// fog make camera faults likelier, rain and snow LiDAR faults.
pub fn sample_degradation<R: Rng>(s: &SceneState, rate: f64, rng: &mut R) -> DegradationSpec {
    if rng.random::<f64>() >= rate {
        return DegradationSpec::CLEAN;
    }
    let mut cam_w = 1.0;
    match s.illumination {
        Illumination::Darkness => cam_w += 2.0,
        Illumination::Twilight => cam_w += 1.0,
        _ => {}
    }
    if s.weather == Weather::Foggy {
        cam_w += 1.0;
    }
    let lidar_w = 1.0 + if matches!(s.weather, Weather::Rainy | Weather::Snowy) { 1.0 } else { 0.0 };
    let kind: f64 = rng.random();
    if rng.random::<f64>() * (cam_w + lidar_w) < cam_w {
        let camera = if kind < 0.5 {
            CameraDegradation::Blackout
        } else if kind < 0.8 {
            CameraDegradation::GaussianNoise { sigma: 0.5 }
        } else {
            CameraDegradation::Blur { radius: 1 }
        };
        DegradationSpec {
            camera,
            lidar: LidarDegradation::None,
        }
    } else {
        let lidar = if kind < 0.5 {
            LidarDegradation::Blackout
        } else if kind < 0.8 {
            LidarDegradation::GaussianNoise { sigma: 0.5 }
        } else {
            LidarDegradation::Sparsify { keep: 0.5 }
        };
        DegradationSpec {
            camera: CameraDegradation::None,
            lidar,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs_round_trip_through_text() {
        for s in [
            "camera=none,lidar=none",
            "camera=blackout,lidar=none",
            "camera=noise:0.5,lidar=sparsify:0.25",
            "camera=blur:2,lidar=blackout",
            "camera=none,lidar=noise:1",
        ] {
            let d: DegradationSpec = s.parse().unwrap();
            assert_eq!(d.to_string(), s);
        }
        assert_eq!("camera=blackout".parse::<DegradationSpec>().unwrap(), DegradationSpec::CAMERA_BLACKOUT);
        assert!("camera=fog".parse::<DegradationSpec>().is_err());
        assert!("lidar=sparsify:2".parse::<DegradationSpec>().is_err());
    }

    #[test]
    fn labels_follow_blackouts() {
        assert_eq!(DegradationSpec::CLEAN.routing_label(), Some(Branch::Fusion));
        assert_eq!(DegradationSpec::CAMERA_BLACKOUT.routing_label(), Some(Branch::Lidar));
        assert_eq!(DegradationSpec::LIDAR_BLACKOUT.routing_label(), Some(Branch::Camera));
        let both = DegradationSpec {
            camera: CameraDegradation::Blackout,
            lidar: LidarDegradation::Blackout,
        };
        assert_eq!(both.routing_label(), None);
        let noisy = DegradationSpec {
            camera: CameraDegradation::GaussianNoise { sigma: 1.0 },
            lidar: LidarDegradation::None,
        };
        assert_eq!(noisy.routing_label(), Some(Branch::Fusion));
    }

    #[test]
    fn blur_of_constant_grid_is_identity() {
        let mut b = vec![2.5f32; 3 * 4 * 2];
        box_blur(&mut b, 3, 4, 2, 1);
        assert!(b.iter().all(|&v| v == 2.5));
    }
}
