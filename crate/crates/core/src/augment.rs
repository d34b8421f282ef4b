//! Skeleton augmentation: random joint occlusion and random rotation about
//! the vertical axis, applied to disjoint subsets of each training epoch.

use std::f64::consts::TAU;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Mode;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OcclusionMode {
    /// One joint mask for the whole sequence.
    #[default]
    Sequence,
    /// A fresh mask for every frame.
    Frame,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Fraction of sequences occluded.
    pub alpha: f64,
    /// Fraction of sequences rotated.
    pub beta: f64,
    /// Upper bound on the fraction of joints occluded.
    pub max_occlusion: f64,
    /// Coordinate index of the vertical axis within each 3-channel group.
    pub axis: usize,
    pub occlusion_mode: OcclusionMode,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            alpha: 1.0 / 3.0,
            beta: 1.0 / 3.0,
            max_occlusion: 0.5,
            axis: 1,
            occlusion_mode: OcclusionMode::Sequence,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |x: f64| (0.0..=1.0).contains(&x);
        if !unit(self.alpha) || !unit(self.beta) || self.alpha + self.beta > 1.0 + 1e-12 {
            return Err(Error::invalid(format!(
                "augmentation fractions alpha={} beta={} must lie in [0, 1] with alpha + beta <= 1",
                self.alpha, self.beta
            )));
        }
        if !unit(self.max_occlusion) {
            return Err(Error::invalid(format!("max_occlusion {} outside [0, 1]", self.max_occlusion)));
        }
        if self.axis > 2 {
            return Err(Error::invalid(format!("rotation axis {} must be 0, 1 or 2", self.axis)));
        }
        Ok(())
    }
}

fn dims(x: &Tensor) -> Result<(usize, usize, usize)> {
    match x.shape() {
        &[c, t, v] => Ok((c, t, v)),
        s => Err(Error::invalid(format!("sequence must be C0 x T x V, got {s:?}"))),
    }
}

/// Zero the given joints in every frame and channel.
pub fn occlude_joints(x: &Tensor, joints: &[usize]) -> Result<Tensor> {
    let (c, t, v) = dims(x)?;
    let mut out = x.clone();
    let d = out.data_mut();
    for &j in joints {
        if j >= v {
            return Err(Error::invalid(format!("joint {j} out of range for {v} joints")));
        }
        for k in 0..c * t {
            d[k * v + j] = 0.0;
        }
    }
    Ok(out)
}

fn occlusion_count(v: usize, max_fraction: f64, rng: &mut impl Rng) -> usize {
    let hi = (max_fraction * v as f64).floor() as usize;
    rng.random_range(0..=hi)
}

/// Zero a uniformly sized random subset of joints (between none and
/// `max_fraction` of them) across the whole sequence. Returns the occluded
/// joints in ascending order.
pub fn random_occlusion(x: &Tensor, max_fraction: f64, rng: &mut impl Rng) -> Result<(Tensor, Vec<usize>)> {
    let (_, _, v) = dims(x)?;
    let k = occlusion_count(v, max_fraction, rng);
    let mut joints = index::sample(rng, v, k).into_vec();
    joints.sort_unstable();
    Ok((occlude_joints(x, &joints)?, joints))
}

/// Per-frame variant of [`random_occlusion`].
pub fn random_frame_occlusion(x: &Tensor, max_fraction: f64, rng: &mut impl Rng) -> Result<Tensor> {
    let (c, t, v) = dims(x)?;
    let mut out = x.clone();
    let d = out.data_mut();
    for ti in 0..t {
        let k = occlusion_count(v, max_fraction, rng);
        for j in index::sample(rng, v, k) {
            for ch in 0..c {
                d[(ch * t + ti) * v + j] = 0.0;
            }
        }
    }
    Ok(out)
}

/// Rotate every consecutive 3-channel group by `theta` about coordinate
/// `axis`.
pub fn rotate_axial(x: &Tensor, axis: usize, theta: f64) -> Result<Tensor> {
    let (c, t, v) = dims(x)?;
    if c % 3 != 0 {
        return Err(Error::invalid(format!("rotation needs a multiple of 3 channels, got {c}")));
    }
    if axis > 2 {
        return Err(Error::invalid(format!("rotation axis {axis} must be 0, 1 or 2")));
    }
    let (u, w) = ((axis + 1) % 3, (axis + 2) % 3);
    let (s, co) = theta.sin_cos();
    let plane = t * v;
    let mut out = x.clone();
    let src = x.data();
    let d = out.data_mut();
    for g in 0..c / 3 {
        let (bu, bw) = ((3 * g + u) * plane, (3 * g + w) * plane);
        for k in 0..plane {
            let (a, b) = (src[bu + k], src[bw + k]);
            d[bu + k] = co * a - s * b;
            d[bw + k] = s * a + co * b;
        }
    }
    Ok(out)
}

/// Rotation by a uniformly drawn angle. Inputs with two channels are
/// returned unchanged, as a planar skeleton has no vertical axis to turn
/// about. Returns the angle used.
pub fn random_axial_rotation(x: &Tensor, axis: usize, rng: &mut impl Rng) -> Result<(Tensor, f64)> {
    let (c, _, _) = dims(x)?;
    if c == 2 {
        log::warn!("skipping rotation for a 2-channel sequence");
        return Ok((x.clone(), 0.0));
    }
    let theta = rng.random_range(0.0..TAU);
    Ok((rotate_axial(x, axis, theta)?, theta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Treatment {
    Occluded,
    Rotated,
    Untouched,
}

/// Randomly assign `round(alpha n)` sequences to occlusion and
/// `round((alpha + beta) n) - round(alpha n)` to rotation.
pub fn partition(n: usize, alpha: f64, beta: f64, rng: &mut impl Rng) -> Vec<Treatment> {
    let n_occ = ((alpha * n as f64).round() as usize).min(n);
    let n_rot = (((alpha + beta) * n as f64).round() as usize).min(n) - n_occ;
    let mut out: Vec<Treatment> = (0..n)
        .map(|i| match i {
            i if i < n_occ => Treatment::Occluded,
            i if i < n_occ + n_rot => Treatment::Rotated,
            _ => Treatment::Untouched,
        })
        .collect();
    out.shuffle(rng);
    out
}

/// Augment one epoch's sequences. Evaluation mode returns the input as is.
pub fn apply_saep(
    batch: &[Tensor],
    cfg: &AugmentConfig,
    rng: &mut impl Rng,
    mode: Mode,
) -> Result<(Vec<Tensor>, Vec<Treatment>)> {
    if mode == Mode::Eval {
        return Ok((batch.to_vec(), vec![Treatment::Untouched; batch.len()]));
    }
    cfg.validate()?;
    let plan = partition(batch.len(), cfg.alpha, cfg.beta, rng);
    let out = batch
        .iter()
        .zip(&plan)
        .map(|(x, p)| match p {
            Treatment::Occluded => match cfg.occlusion_mode {
                OcclusionMode::Sequence => random_occlusion(x, cfg.max_occlusion, rng).map(|r| r.0),
                OcclusionMode::Frame => random_frame_occlusion(x, cfg.max_occlusion, rng),
            },
            Treatment::Rotated => random_axial_rotation(x, cfg.axis, rng).map(|r| r.0),
            Treatment::Untouched => Ok(x.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((out, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(c: usize, t: usize, v: usize) -> Tensor {
        Tensor::from_fn([c, t, v], |i| ((i * 37 % 101) as f64) / 10.0 - 5.0)
    }

    #[test]
    fn zero_angle_is_identity() {
        let x = seq(6, 4, 5);
        assert!(rotate_axial(&x, 1, 0.0).unwrap().max_abs_diff(&x) < 1e-15);
    }

    #[test]
    fn rotation_round_trip_and_axis_fixed() {
        let x = seq(3, 2, 3);
        let r = rotate_axial(&x, 1, 1.1).unwrap();
        let back = rotate_axial(&r, 1, -1.1).unwrap();
        assert!(back.max_abs_diff(&x) < 1e-12);
        for k in 0..6 {
            assert_eq!(r.data()[6 + k], x.data()[6 + k]);
        }
    }

    #[test]
    fn rotation_rejects_bad_channels() {
        assert!(rotate_axial(&seq(4, 2, 2), 1, 0.3).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = seq(2, 3, 3);
        assert_eq!(random_axial_rotation(&x, 1, &mut rng).unwrap().0, x);
    }

    #[test]
    fn occlusion_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = seq(6, 5, 9);
        for _ in 0..200 {
            let (y, joints) = random_occlusion(&x, 0.5, &mut rng).unwrap();
            assert!(joints.len() <= 4);
            for j in 0..9 {
                let zero = (0..30).all(|k| y.data()[k * 9 + j] == 0.0);
                assert_eq!(zero, joints.contains(&j) || (0..30).all(|k| x.data()[k * 9 + j] == 0.0));
            }
        }
    }

    #[test]
    fn thirds_partition() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = partition(9, 1.0 / 3.0, 1.0 / 3.0, &mut rng);
        let count = |t| p.iter().filter(|&&x| x == t).count();
        assert_eq!(count(Treatment::Occluded), 3);
        assert_eq!(count(Treatment::Rotated), 3);
        assert_eq!(count(Treatment::Untouched), 3);
        let all = partition(5, 1.0, 0.0, &mut rng);
        assert!(all.iter().all(|&t| t == Treatment::Occluded));
    }

    #[test]
    fn eval_mode_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = vec![seq(6, 3, 4), seq(6, 2, 4)];
        let (out, _) = apply_saep(&batch, &AugmentConfig::default(), &mut rng, Mode::Eval).unwrap();
        assert_eq!(out, batch);
    }

    #[test]
    fn config_validation() {
        let bad = AugmentConfig {
            alpha: 0.7,
            beta: 0.6,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert!(AugmentConfig::default().validate().is_ok());
    }
}
