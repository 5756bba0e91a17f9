//! Dynamic-resolution frame sampling.
//!
//! A ladder of `G` sampling configurations interpolates linearly between a
//! temporal-scanning endpoint (many small frames) and a spatial-focus
//! endpoint (few large frames). Rung `g` uses weight `r = (g - 1) / (G - 1)`:
//!
//! ```text
//! N_g      = round((1 - r) * N_L + r * N_H)
//! (H_g, W_g) = round((1 - r) * (H_L, W_L) + r * (H_H, W_H))
//! ```
//!
//! Rounding is half-up; both endpoints are reproduced exactly.

use std::sync::Arc;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::videotool::{resize_pixels, Frame, TimedFrame, VideoSource};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LadderError {
    #[error("ladder needs at least 2 rungs, got {0}")]
    TooFewRungs(usize),
    #[error("invalid ladder endpoints: {0}")]
    Endpoints(String),
}

/// One endpoint of the ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Resolution {
    pub frames: u32,
    pub height: u32,
    pub width: u32,
}

impl Resolution {
    pub const fn new(frames: u32, height: u32, width: u32) -> Self {
        Resolution { frames, height, width }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LadderEndpoints {
    pub low: Resolution,
    pub high: Resolution,
}

impl Default for LadderEndpoints {
    /// 64 frames at 224x224 up to 32 frames at 448x448.
    fn default() -> Self {
        LadderEndpoints { low: Resolution::new(64, 224, 224), high: Resolution::new(32, 448, 448) }
    }
}

impl LadderEndpoints {
    pub fn validate(&self) -> Result<(), LadderError> {
        let (l, h) = (self.low, self.high);
        if h.frames < 1 || l.frames < h.frames {
            return Err(LadderError::Endpoints(format!(
                "need low frames >= high frames >= 1, got {} and {}",
                l.frames, h.frames
            )));
        }
        if l.height < 1 || h.height < l.height || l.width < 1 || h.width < l.width {
            return Err(LadderError::Endpoints(format!(
                "need 1 <= low size <= high size, got {}x{} and {}x{}",
                l.height, l.width, h.height, h.width
            )));
        }
        Ok(())
    }
}

/// One rung of the ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// 1-based rung index.
    pub g: usize,
    pub r: f64,
    #[serde(rename = "N")]
    pub frames: u32,
    #[serde(rename = "H")]
    pub height: u32,
    #[serde(rename = "W")]
    pub width: u32,
}

fn lerp_round(a: u32, b: u32, r: f64) -> u32 {
    let v = (1.0 - r) * a as f64 + r * b as f64;
    ((v + 0.5).floor() as u32).max(1)
}

/// Builds the `rungs`-step ladder between the endpoints.
pub fn build_ladder(endpoints: &LadderEndpoints, rungs: usize) -> Result<Vec<SamplingConfig>, LadderError> {
    if rungs < 2 {
        return Err(LadderError::TooFewRungs(rungs));
    }
    endpoints.validate()?;
    let (lo, hi) = (endpoints.low, endpoints.high);
    Ok((1..=rungs)
        .map(|g| {
            let r = (g - 1) as f64 / (rungs - 1) as f64;
            SamplingConfig {
                g,
                r,
                frames: lerp_round(lo.frames, hi.frames, r),
                height: lerp_round(lo.height, hi.height, r),
                width: lerp_round(lo.width, hi.width, r),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceOrigin {
    InitialUniform,
    Tool,
}

/// Timestamped frames available to the policy.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceSet {
    pub items: Vec<TimedFrame>,
    pub origin: EvidenceOrigin,
}

impl EvidenceSet {
    pub fn empty(origin: EvidenceOrigin) -> Self {
        EvidenceSet { items: Vec::new(), origin }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn timestamps(&self) -> impl Iterator<Item = f64> + '_ {
        self.items.iter().map(|i| i.timestamp)
    }
}

/// Uniform sample positions: `(requested timestamp, frame index)` pairs.
///
/// For `n >= 2` both ends of `[0, duration]` are included and the frame
/// index is spread evenly over `0..frame_count`; for `n == 1` the temporal
/// midpoint is used.
pub fn uniform_positions(source: &VideoSource, n: usize) -> Vec<(f64, usize)> {
    let last = (source.frame_count() - 1) as u64;
    let d = source.duration();
    match n {
        0 => Vec::new(),
        1 => vec![(d / 2.0, ((last + 1) / 2) as usize)],
        _ => {
            let steps = (n - 1) as u64;
            (0..n as u64)
                .map(|i| {
                    let t = if i == steps { d } else { d * i as f64 / steps as f64 };
                    // round-half-up of i * last / steps, in integers
                    let idx = (2 * i * last + steps) / (2 * steps);
                    (t, idx as usize)
                })
                .collect()
        }
    }
}

/// The initial evidence set for one rung: `config.frames` uniform frames
/// resized to `config.height x config.width`.
pub fn initial_evidence(source: &VideoSource, config: &SamplingConfig) -> EvidenceSet {
    // Frames that share an image share its resized copy too.
    let mut resized: Vec<(Arc<RgbImage>, Arc<RgbImage>)> = Vec::new();
    let items = uniform_positions(source, config.frames as usize)
        .into_iter()
        .map(|(t, idx)| {
            let raw = source.frame(idx);
            let pixels = match resized.iter().find(|(src, _)| Arc::ptr_eq(src, &raw.pixels)) {
                Some((_, out)) => Arc::clone(out),
                None => {
                    let out = resize_pixels(&raw.pixels, config.height, config.width);
                    resized.push((Arc::clone(&raw.pixels), Arc::clone(&out)));
                    out
                }
            };
            TimedFrame { frame: Frame { pixels, ..raw }, timestamp: t }
        })
        .collect();
    EvidenceSet { items, origin: EvidenceOrigin::InitialUniform }
}
