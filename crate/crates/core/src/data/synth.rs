//! Synthetic multi-scale cohorts with a planted survival signal.
//!
//! Each slide draws a latent risk `z ~ U(0, 1)` and an event time
//! `T_max * (1 - z) * exp(eps)`, `eps ~ N(0, 0.1^2)`. Features are `N(0, 1)`
//! noise; the signal modes add `z`-dependent structure to three disjoint
//! coordinate blocks of width `d_in / 8`:
//!
//! * block A: a slide-wide offset on every coarse patch,
//! * block B: a fixed motif on a fraction `z` of the source patches,
//! * block C: a rare spike on fine patches (probability proportional to `z`).
//!
//! `single_scale` plants all three on the fine patches instead.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::bag::{write_bag, FeatureBag, Scale, ScaleFeatures};
use super::manifest::{write_manifest, ManifestRecord, MANIFEST_FILE};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalMode {
    MultiScale,
    SingleScale,
    None,
}

impl SignalMode {
    pub fn name(self) -> &'static str {
        match self {
            SignalMode::MultiScale => "multi",
            SignalMode::SingleScale => "single",
            SignalMode::None => "none",
        }
    }
}

impl fmt::Display for SignalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SignalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "multi" | "multi_scale" | "multi-scale" => Ok(SignalMode::MultiScale),
            "single" | "single_scale" | "single-scale" => Ok(SignalMode::SingleScale),
            "none" => Ok(SignalMode::None),
            _ => Err(Error::Config(format!("unknown signal mode {s:?} (expected multi, single or none)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_slides: usize,
    pub d_in: usize,
    /// Poisson means for coarse, source and fine patch counts.
    pub mean_counts: [f64; 3],
    pub signal: SignalMode,
    /// Probability that a slide gets an independent censoring time.
    pub censor_rate: f64,
    /// Time scale in days.
    pub t_max: f64,
    pub seed: u64,
}

impl SynthConfig {
    pub const DEFAULT_MEANS: [f64; 3] = [9.0, 35.0, 135.0];

    pub fn new(n_slides: usize, seed: u64) -> Self {
        Self {
            n_slides,
            d_in: 32,
            mean_counts: Self::DEFAULT_MEANS,
            signal: SignalMode::MultiScale,
            censor_rate: 0.3,
            t_max: 3650.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.censor_rate) {
            return Err(Error::Config(format!("censor_rate must lie in [0, 1), got {}", self.censor_rate)));
        }
        if self.d_in == 0 || (self.signal != SignalMode::None && self.d_in < 8) {
            return Err(Error::Config(format!("d_in = {} leaves no room for the signal blocks (need >= 8)", self.d_in)));
        }
        if self.mean_counts.iter().any(|m| !(m.is_finite() && *m > 0.0)) {
            return Err(Error::Config(format!("mean patch counts must be positive, got {:?}", self.mean_counts)));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::Config(format!("t_max must be positive, got {}", self.t_max)));
        }
        Ok(())
    }
}

/// Slide-wide offset added to block A, scaled by `2 z - 1`.
const OFFSET_AMPLITUDE: f64 = 1.5;
/// Motif amplitude on block B.
const MOTIF_AMPLITUDE: f64 = 2.0;
/// Spike amplitude on block C and its per-patch probability at `z = 1`.
const SPIKE_AMPLITUDE: f64 = 2.0;
const SPIKE_RATE: f64 = 0.02;

#[derive(Debug, Clone)]
pub struct SynthSlide {
    pub id: String,
    pub bag: FeatureBag,
    pub time: f64,
    pub event: bool,
    /// Planted latent risk.
    pub z: f64,
    /// Event time before censoring and rounding.
    pub latent_time: f64,
}

pub fn slide_id(i: usize) -> String {
    format!("s{i:04}")
}

/// Generates the cohort. Slide `i` depends only on `(seed, i)`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<Vec<SynthSlide>> {
    cfg.validate()?;
    (0..cfg.n_slides).map(|i| synth_slide(cfg, i)).collect()
}

fn synth_slide(cfg: &SynthConfig, i: usize) -> Result<SynthSlide> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(i as u64);
    let unit = Normal::<f64>::new(0.0, 1.0).expect("unit normal");
    let jitter = Normal::<f64>::new(0.0, 0.1).expect("time noise");

    let z: f64 = rng.random();
    let latent = cfg.t_max * (1.0 - z) * jitter.sample(&mut rng).exp();
    let (mut time, mut event) = (latent, true);
    if rng.random::<f64>() < cfg.censor_rate {
        let c = rng.random::<f64>() * cfg.t_max;
        if c < latent {
            time = c;
            event = false;
        }
    }
    // two decimals keep the manifest readable; never round to zero
    let time = ((time * 100.0).round() / 100.0).max(0.01);

    let d = cfg.d_in;
    let b = d / 8;
    let mut scales: [ScaleFeatures; 3] = Default::default();
    for s in Scale::ALL {
        let mean = cfg.mean_counts[s.index()];
        let n = (Poisson::new(mean).map_err(|e| Error::Config(e.to_string()))?.sample(&mut rng) as usize).max(1);
        let side = (1..).find(|k| k * k >= n).unwrap();
        let mut feats: Vec<f64> = (0..n * d).map(|_| unit.sample(&mut rng)).collect();
        let planted = match cfg.signal {
            SignalMode::None => &[][..],
            SignalMode::MultiScale => match s {
                Scale::Coarse => &[Plant::Offset][..],
                Scale::Source => &[Plant::Motif][..],
                Scale::Fine => &[Plant::Spike][..],
            },
            SignalMode::SingleScale => match s {
                Scale::Fine => &[Plant::Offset, Plant::Motif, Plant::Spike][..],
                _ => &[][..],
            },
        };
        for p in planted {
            p.apply(&mut feats, n, d, b, z, &mut rng);
        }
        scales[s.index()] = ScaleFeatures {
            features: feats.into_iter().map(|v| v as f32).collect(),
            coords: (0..n).map(|k| [(k % side) as i32, (k / side) as i32]).collect(),
        };
    }
    Ok(SynthSlide { id: slide_id(i), bag: FeatureBag { d_in: d, scales }, time, event, z, latent_time: latent })
}

enum Plant {
    Offset,
    Motif,
    Spike,
}

impl Plant {
    fn apply(&self, feats: &mut [f64], n: usize, d: usize, b: usize, z: f64, rng: &mut ChaCha8Rng) {
        match self {
            Plant::Offset => {
                let shift = OFFSET_AMPLITUDE * (2.0 * z - 1.0);
                for row in feats.chunks_mut(d) {
                    row[..b].iter_mut().for_each(|v| *v += shift);
                }
            }
            Plant::Motif => {
                for row in feats.chunks_mut(d) {
                    if rng.random::<f64>() < z {
                        for (j, v) in row[b..2 * b].iter_mut().enumerate() {
                            // square wave with period four
                            let sign = if (j / 2) % 2 == 0 { 1.0 } else { -1.0 };
                            *v += MOTIF_AMPLITUDE * sign;
                        }
                    }
                }
            }
            Plant::Spike => {
                debug_assert_eq!(feats.len(), n * d);
                for row in feats.chunks_mut(d) {
                    if rng.random::<f64>() < SPIKE_RATE * z {
                        row[2 * b..3 * b].iter_mut().for_each(|v| *v += SPIKE_AMPLITUDE);
                    }
                }
            }
        }
    }
}

/// Writes `bags/<id>.xfb` and `manifest.tsv` under `dir`.
pub fn write_dataset(dir: impl AsRef<Path>, slides: &[SynthSlide]) -> Result<()> {
    let dir = dir.as_ref();
    let bags = dir.join("bags");
    std::fs::create_dir_all(&bags).map_err(|e| Error::io(&bags, e))?;
    let mut records = Vec::with_capacity(slides.len());
    for s in slides {
        let rel = PathBuf::from("bags").join(format!("{}.xfb", s.id));
        write_bag(&s.bag, dir.join(&rel))?;
        records.push(ManifestRecord { slide_id: s.id.clone(), time: s.time, event: s.event, bag_path: rel });
    }
    write_manifest(&records, dir.join(MANIFEST_FILE))
}
