//! Relevance thresholds and their calibration.
//!
//! The natural threshold is `η = 0.5`, the decision boundary of a binary
//! Yes/No ranker. The adaptive threshold is read off a validation set: the
//! relevance probabilities of correct and incorrect recalls are smoothed into
//! two density curves and `η` is the x-coordinate where they cross.
//!
//! Densities are Gaussian kernel estimates (Silverman bandwidth) on a uniform
//! grid over `[0, 1]`, reflected at both ends so mass near 0 and 1 is not
//! lost, and renormalised to unit trapezoidal area.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NATURAL_ETA: f64 = 0.5;
pub const DEFAULT_GRID_SIZE: usize = 512;
pub const MIN_GRID_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdSource {
    /// `η = 0.5`.
    Natural,
    /// Density-curve intersection on held-out data.
    Adaptive,
    /// Set explicitly by the user (e.g. `η = 0` to disable filtering).
    Manual,
}

impl fmt::Display for ThresholdSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThresholdSource::Natural => "natural",
            ThresholdSource::Adaptive => "adaptive",
            ThresholdSource::Manual => "manual",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCurve {
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

impl DensityCurve {
    /// Trapezoidal integral over the grid.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.grid, &self.density)
    }

    /// Grid point with the highest density.
    pub fn argmax(&self) -> f64 {
        let (i, _) =
            self.density
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &d)| {
                    if d > best.1 {
                        (i, d)
                    } else {
                        best
                    }
                });
        self.grid[i]
    }

    /// Two whitespace-separated columns, `x density`, one grid point per line.
    pub fn to_columns(&self) -> String {
        self.grid
            .iter()
            .zip(&self.density)
            .map(|(x, d)| format!("{x:.6} {d:.6}\n"))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurves {
    pub positive: DensityCurve,
    pub negative: DensityCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Threshold {
    pub eta: f64,
    pub source: ThresholdSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub curves: Option<CalibrationCurves>,
}

impl Default for Threshold {
    fn default() -> Self {
        Self::natural()
    }
}

impl Threshold {
    pub fn natural() -> Self {
        Self {
            eta: NATURAL_ETA,
            source: ThresholdSource::Natural,
            curves: None,
        }
    }

    pub fn manual(eta: f64) -> Result<Self> {
        let t = Self {
            eta,
            source: ThresholdSource::Manual,
            curves: None,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::invalid(format!(
                "threshold {} outside [0, 1]",
                self.eta
            )));
        }
        if self.source == ThresholdSource::Natural && self.eta != NATURAL_ETA {
            return Err(Error::invalid("natural threshold must be 0.5"));
        }
        Ok(())
    }

    pub fn without_curves(&self) -> Self {
        Self {
            curves: None,
            ..self.clone()
        }
    }
}

/// One scored recall from a validation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSample {
    pub relevance_p: f64,
    pub is_correct: bool,
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman's rule, `0.9 · min(σ, IQR/1.34) · n^(-1/5)`, never below `floor`.
pub fn silverman_bandwidth(samples: &[f64], floor: f64) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => 0.0,
    };
    (0.9 * spread * n.powf(-0.2)).max(floor)
}

fn uniform_grid(size: usize) -> Vec<f64> {
    let step = 1.0 / (size - 1) as f64;
    (0..size).map(|i| i as f64 * step).collect()
}

/// Gaussian KDE of probabilities on `grid_size` uniform points over `[0, 1]`.
///
/// The bandwidth never drops below one grid step, so a degenerate sample set
/// yields a single kernel centred on its value.
pub fn estimate_density(samples: &[f64], grid_size: usize) -> Result<DensityCurve> {
    if samples.len() < 2 {
        return Err(Error::invalid(
            "density estimation needs at least 2 samples",
        ));
    }
    if grid_size < MIN_GRID_SIZE {
        return Err(Error::invalid(format!(
            "grid size must be at least {MIN_GRID_SIZE}"
        )));
    }
    if let Some(bad) = samples
        .iter()
        .find(|p| !p.is_finite() || !(0.0..=1.0).contains(*p))
    {
        return Err(Error::invalid(format!("probability {bad} outside [0, 1]")));
    }
    let grid = uniform_grid(grid_size);
    let h = silverman_bandwidth(samples, grid[1]);
    let inv_2h2 = 1.0 / (2.0 * h * h);
    let kernel = |u: f64| (-u * u * inv_2h2).exp();
    let mut density: Vec<f64> = grid
        .iter()
        .map(|&x| {
            samples
                .iter()
                .map(|&s| kernel(x - s) + kernel(x + s) + kernel(x - (2.0 - s)))
                .sum()
        })
        .collect();
    let area = trapezoid(&grid, &density);
    for d in &mut density {
        *d /= area;
    }
    Ok(DensityCurve { grid, density })
}

/// Where `pos − neg` changes sign, interpolated within the bracketing cell.
///
/// A single crossing is returned whichever way it goes. With several, the
/// highest crossing where `pos` overtakes `neg` wins. Returns `None` when the
/// curves never cross (including identical curves).
pub fn find_intersection(pos: &DensityCurve, neg: &DensityCurve) -> Result<Option<f64>> {
    if pos.grid != neg.grid || pos.density.len() != pos.grid.len() {
        return Err(Error::invalid("density curves must share one grid"));
    }
    let grid = &pos.grid;
    let diff: Vec<f64> = pos
        .density
        .iter()
        .zip(&neg.density)
        .map(|(p, n)| p - n)
        .collect();
    let scale = pos
        .density
        .iter()
        .chain(&neg.density)
        .fold(0.0_f64, |m, &d| m.max(d.abs()));
    let tol = 1e-12 * scale;
    let signed: Vec<usize> = (0..diff.len()).filter(|&i| diff[i].abs() > tol).collect();

    // (x, rising) for each sign change between consecutive non-zero points.
    let crossings: Vec<(f64, bool)> = signed
        .windows(2)
        .filter(|w| diff[w[0]].signum() != diff[w[1]].signum())
        .map(|w| {
            let (i, j) = (w[0], w[1]);
            let x = if j == i + 1 {
                grid[i] + (grid[j] - grid[i]) * diff[i] / (diff[i] - diff[j])
            } else {
                0.5 * (grid[i + 1] + grid[j - 1])
            };
            (x, diff[i] < 0.0)
        })
        .collect();

    Ok(match crossings.as_slice() {
        [] => None,
        [(x, _)] => Some(*x),
        many => many
            .iter()
            .rev()
            .find(|(_, rising)| *rising)
            .map(|(x, _)| *x),
    })
}

/// Adaptive threshold from labelled validation recalls, falling back to the
/// natural threshold when the two densities do not cross.
pub fn calibrate(samples: &[CalibrationSample], grid_size: usize) -> Result<Threshold> {
    let (correct, incorrect): (Vec<_>, Vec<_>) = samples.iter().partition(|s| s.is_correct);
    if correct.len() < 2 || incorrect.len() < 2 {
        return Err(Error::invalid(format!(
            "calibration needs at least 2 correct and 2 incorrect recalls (got {} and {})",
            correct.len(),
            incorrect.len()
        )));
    }
    let ps = |v: &[&CalibrationSample]| v.iter().map(|s| s.relevance_p).collect::<Vec<_>>();
    let positive = estimate_density(&ps(&correct), grid_size)?;
    let negative = estimate_density(&ps(&incorrect), grid_size)?;
    let crossing = find_intersection(&positive, &negative)?;
    let curves = Some(CalibrationCurves { positive, negative });
    Ok(match crossing {
        Some(eta) => Threshold {
            eta: eta.clamp(0.0, 1.0),
            source: ThresholdSource::Adaptive,
            curves,
        },
        None => Threshold {
            curves,
            ..Threshold::natural()
        },
    })
}
