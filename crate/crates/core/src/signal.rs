//! Energy preservation of Laplacian-guided downsampling on a path graph.
//!
//! A random Fourier signal on `n` nodes is smoothed, then reduced to the
//! nodes with the largest (or smallest) Laplacian variation plus both
//! endpoints, and rebuilt by linear interpolation. The energy gap
//! `δ_E = Σ yᵢ² − Σ ŷᵢ²` measures how much of the signal was lost.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SignalError {
    #[error("signal needs at least {min} samples, got {n}")]
    TooShort { n: usize, min: usize },
    #[error("k = {k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error("noise_sd must be finite and non-negative")]
    BadNoise,
    #[error("csv error: {0}")]
    Csv(String),
}

pub type Result<T> = std::result::Result<T, SignalError>;

/// Shortest signal `generate_signal` produces.
pub const MIN_SAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Signal1D {
    pub samples: Vec<f64>,
    pub terms: usize,
    pub noise_sd: f64,
    pub seed: u64,
}

/// `y(t) = Σₖ aₖ sin(2πkt/n) + bₖ cos(2πkt/n) + ε` with standard normal
/// coefficients and `ε ~ N(0, noise_sd²)`.
pub fn generate_signal(n: usize, terms: usize, noise_sd: f64, seed: u64) -> Result<Signal1D> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coefficients: Vec<(f64, f64)> = (0..terms)
        .map(|_| (StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)))
        .collect();
    let samples = fourier_series(n, &coefficients, noise_sd, &mut rng)?;
    Ok(Signal1D { samples, terms, noise_sd, seed })
}

/// Fourier series with given `(aₖ, bₖ)` for `k = 1..`, plus noise from `rng`.
pub fn fourier_series(n: usize, coefficients: &[(f64, f64)], noise_sd: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if n < MIN_SAMPLES {
        return Err(SignalError::TooShort { n, min: MIN_SAMPLES });
    }
    let noise = Normal::new(0.0, noise_sd).map_err(|_| SignalError::BadNoise)?;
    Ok((0..n)
        .map(|t| {
            let clean: f64 = coefficients
                .iter()
                .enumerate()
                .map(|(i, &(a, b))| {
                    let w = 2.0 * PI * (i + 1) as f64 * t as f64 / n as f64;
                    a * w.sin() + b * w.cos()
                })
                .sum();
            if noise_sd > 0.0 {
                clean + noise.sample(rng)
            } else {
                clean
            }
        })
        .collect())
}

/// Each pass replaces `yᵢ` with the mean of itself and its path neighbours.
pub fn smooth(samples: &[f64], passes: usize) -> Vec<f64> {
    let mut y = samples.to_vec();
    for _ in 0..passes {
        y = (0..y.len())
            .map(|i| {
                let lo = i.saturating_sub(1);
                let hi = (i + 1).min(y.len() - 1);
                y[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect();
    }
    y
}

/// `Σ yᵢ²`.
pub fn energy(samples: &[f64]) -> f64 {
    samples.iter().map(|y| y * y).sum()
}

/// `|(L y)ᵢ|` on the path graph.
pub fn path_variation(samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    (0..n)
        .map(|i| {
            let mut v = 0.0;
            if i > 0 {
                v += samples[i] - samples[i - 1];
            }
            if i + 1 < n {
                v += samples[i] - samples[i + 1];
            }
            v.abs()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleMode {
    LaplacianMax,
    LaplacianMin,
}

impl SampleMode {
    pub fn name(self) -> &'static str {
        match self {
            SampleMode::LaplacianMax => "laplacian_max",
            SampleMode::LaplacianMin => "laplacian_min",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Downsampled {
    /// Sorted, always containing `0` and `n - 1`.
    pub selected: Vec<usize>,
    pub reconstruction: Vec<f64>,
    pub delta_e: f64,
}

/// Keeps both endpoints plus the `k` interior nodes ranked first by `mode`
/// (ties to the smaller index) and interpolates linearly between them.
///
/// `k` may be at most `n`; any `k ≥ n − 2` keeps every node.
pub fn downsample_reconstruct(samples: &[f64], mode: SampleMode, k: usize) -> Result<Downsampled> {
    let n = samples.len();
    if n < 2 {
        return Err(SignalError::TooShort { n, min: 2 });
    }
    if k == 0 || k > n {
        return Err(SignalError::KOutOfRange { k, max: n });
    }
    let s = path_variation(samples);
    let mut interior: Vec<usize> = (1..n - 1).collect();
    interior.sort_by(|&a, &b| {
        let by_value = match mode {
            SampleMode::LaplacianMax => s[b].total_cmp(&s[a]),
            SampleMode::LaplacianMin => s[a].total_cmp(&s[b]),
        };
        by_value.then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = interior.into_iter().take(k).collect();
    selected.push(0);
    selected.push(n - 1);
    selected.sort_unstable();

    let mut reconstruction = vec![0.0; n];
    for pair in selected.windows(2) {
        let (l, r) = (pair[0], pair[1]);
        for (i, out) in reconstruction.iter_mut().enumerate().take(r + 1).skip(l) {
            let t = (i - l) as f64 / (r - l) as f64;
            *out = if i == l {
                samples[l]
            } else if i == r {
                samples[r]
            } else {
                samples[l] + t * (samples[r] - samples[l])
            };
        }
    }
    let delta_e = energy(samples) - energy(&reconstruction);
    Ok(Downsampled { selected, reconstruction, delta_e })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DemoConfig {
    pub n: usize,
    pub terms: usize,
    pub noise_sd: f64,
    pub smoothing: usize,
    pub seeds: usize,
    pub first_seed: u64,
    /// Interior sample counts; empty means `⌈n/3⌉`.
    pub k_values: Vec<usize>,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self { n: 25, terms: 8, noise_sd: 0.1, smoothing: 2, seeds: 100, first_seed: 0, k_values: Vec::new() }
    }
}

impl DemoConfig {
    pub fn ks(&self) -> Vec<usize> {
        if self.k_values.is_empty() {
            vec![self.n.div_ceil(3)]
        } else {
            self.k_values.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub seed: u64,
    pub k: usize,
    pub mode: SampleMode,
    pub e_orig: f64,
    pub e_recon: f64,
    pub delta_e: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSummary {
    pub k: usize,
    /// Fraction of seeds where max mode has strictly smaller `|δ_E|`.
    pub max_win_rate: f64,
    pub median_abs_delta_max: f64,
    pub median_abs_delta_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoReport {
    pub config: DemoConfig,
    pub trials: Vec<Trial>,
    pub summary: Vec<KSummary>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let m = values.len() / 2;
    if values.len() % 2 == 1 {
        values[m]
    } else {
        (values[m - 1] + values[m]) / 2.0
    }
}

/// Runs generate → smooth → downsample for every seed and `k`, both modes.
pub fn run_demo(config: &DemoConfig) -> Result<DemoReport> {
    let ks = config.ks();
    let seeds: Vec<u64> = (0..config.seeds as u64).map(|s| config.first_seed + s).collect();
    let per_seed: Vec<Vec<Trial>> = seeds
        .par_iter()
        .map(|&seed| {
            let sig = generate_signal(config.n, config.terms, config.noise_sd, seed)?;
            let y = smooth(&sig.samples, config.smoothing);
            let e_orig = energy(&y);
            let mut trials = Vec::new();
            for &k in &ks {
                for mode in [SampleMode::LaplacianMax, SampleMode::LaplacianMin] {
                    let d = downsample_reconstruct(&y, mode, k)?;
                    trials.push(Trial { seed, k, mode, e_orig, e_recon: e_orig - d.delta_e, delta_e: d.delta_e });
                }
            }
            Ok(trials)
        })
        .collect::<Result<_>>()?;
    let trials: Vec<Trial> = per_seed.into_iter().flatten().collect();

    let summary = ks
        .iter()
        .map(|&k| {
            let pick = |mode| -> Vec<f64> {
                trials.iter().filter(|t| t.k == k && t.mode == mode).map(|t| t.delta_e.abs()).collect()
            };
            let mut max = pick(SampleMode::LaplacianMax);
            let mut min = pick(SampleMode::LaplacianMin);
            let wins = max.iter().zip(&min).filter(|(a, b)| a < b).count();
            KSummary {
                k,
                max_win_rate: if max.is_empty() { 0.0 } else { wins as f64 / max.len() as f64 },
                median_abs_delta_max: if max.is_empty() { 0.0 } else { median(&mut max) },
                median_abs_delta_min: if min.is_empty() { 0.0 } else { median(&mut min) },
            }
        })
        .collect();
    Ok(DemoReport { config: config.clone(), trials, summary })
}

impl DemoReport {
    /// `seed,k,mode,E_orig,E_recon,delta_E`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| SignalError::Csv(e.to_string());
        w.write_record(["seed", "k", "mode", "E_orig", "E_recon", "delta_E"]).map_err(err)?;
        for t in &self.trials {
            w.write_record([
                t.seed.to_string(),
                t.k.to_string(),
                t.mode.name().to_string(),
                t.e_orig.to_string(),
                t.e_recon.to_string(),
                t.delta_e.to_string(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| SignalError::Csv(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Curves of one trial for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub seed: u64,
    pub k: usize,
    pub signal: Vec<f64>,
    pub max: Downsampled,
    pub min: Downsampled,
}

pub fn plot_data(config: &DemoConfig, seed: u64, k: usize) -> Result<PlotData> {
    let sig = generate_signal(config.n, config.terms, config.noise_sd, seed)?;
    let signal = smooth(&sig.samples, config.smoothing);
    Ok(PlotData {
        seed,
        k,
        max: downsample_reconstruct(&signal, SampleMode::LaplacianMax, k)?,
        min: downsample_reconstruct(&signal, SampleMode::LaplacianMin, k)?,
        signal,
    })
}
