//! Sampled single-photon fringes: synthetic measurement, shot noise,
//! least-squares sinusoid fits, visibilities and phase differences.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interferometer::{Configuration, FringeCoefficients, Polarization};
use crate::qstate::wrap_phase;

pub const MIN_GRID: usize = 8;
pub const DEFAULT_GRID: usize = 64;
/// Amplitude below which a fringe counts as flat.
pub const DEFAULT_FLAT_THRESHOLD: f64 = 1e-3;

pub const CSV_HEADER: &str = "config,theta,delta,pol,counts_per_point,seed";

/// Which fringe a record holds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeLabel {
    pub config: Configuration,
    pub theta: f64,
    pub delta: f64,
    pub pol: Polarization,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FringeRecord {
    pub label: FringeLabel,
    pub phi_grid: Vec<f64>,
    pub values: Vec<f64>,
    /// Present when `values` are normalized Poisson counts.
    pub counts_per_point: Option<u64>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub offset: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub residual_rms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Noise {
    pub counts_per_point: u64,
    pub seed: u64,
}

/// Whether extrema come from a sinusoid fit or from the raw samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Extremes {
    #[default]
    Fit,
    Raw,
}

/// `n` uniform points on [0, 2π).
pub fn uniform_grid(n: usize) -> Vec<f64> {
    (0..n).map(|k| 2.0 * PI * k as f64 / n as f64).collect()
}

/// Sample a fringe on a uniform grid, optionally as Poisson counts
/// normalized by the per-point budget.
pub fn sample_fringe(
    label: FringeLabel,
    coeffs: &FringeCoefficients,
    pump_phase: f64,
    grid_size: usize,
    noise: Option<Noise>,
) -> Result<FringeRecord> {
    let grid = uniform_grid(grid_size);
    sample_with(label, &grid, |phi| coeffs.eval(phi, pump_phase), noise)
}

/// Sample an arbitrary probability function on the given grid.
pub fn sample_with(
    label: FringeLabel,
    grid: &[f64],
    probability: impl Fn(f64) -> f64,
    noise: Option<Noise>,
) -> Result<FringeRecord> {
    if grid.len() < MIN_GRID {
        return Err(Error::GridTooSmall(grid.len()));
    }
    let exact: Vec<f64> = grid.iter().map(|&phi| probability(phi).max(0.0)).collect();
    let values = match noise {
        None => exact,
        Some(Noise { counts_per_point, seed }) => {
            if counts_per_point == 0 {
                return Err(Error::ParameterDomain("counts per point must be at least 1".into()));
            }
            let n = counts_per_point as f64;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            exact
                .iter()
                .map(|&p| {
                    let mean = n * p;
                    if mean > 0.0 {
                        Poisson::new(mean).expect("finite positive mean").sample(&mut rng) / n
                    } else {
                        0.0
                    }
                })
                .collect()
        }
    };
    Ok(FringeRecord {
        label,
        phi_grid: grid.to_vec(),
        values,
        counts_per_point: noise.map(|n| n.counts_per_point),
        seed: noise.map(|n| n.seed),
    })
}

/// Least-squares fit of `a + b sin φ + c cos φ`.
pub fn fit_sinusoid(f: &FringeRecord) -> Result<FitResult> {
    if f.phi_grid.len() != f.values.len() {
        return Err(Error::IllConditioned(format!("{} phases but {} values", f.phi_grid.len(), f.values.len())));
    }
    if f.phi_grid.len() < 3 {
        return Err(Error::IllConditioned(format!("{} points cannot fix three coefficients", f.phi_grid.len())));
    }
    let mut normal = Matrix3::<f64>::zeros();
    let mut rhs = Vector3::<f64>::zeros();
    for (&phi, &y) in f.phi_grid.iter().zip(&f.values) {
        let (s, c) = phi.sin_cos();
        let row = Vector3::new(1.0, s, c);
        normal += row * row.transpose();
        rhs += row * y;
    }
    let eig = normal.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo.is_nan() || lo <= 1e-10 * hi {
        return Err(Error::IllConditioned(format!("normal matrix condition {:.3e}", hi / lo.max(f64::MIN_POSITIVE))));
    }
    let coef = normal
        .cholesky()
        .ok_or_else(|| Error::IllConditioned("normal matrix not positive definite".into()))?
        .solve(&rhs);
    let (a, b, c) = (coef[0], coef[1], coef[2]);
    let sq: f64 = f
        .phi_grid
        .iter()
        .zip(&f.values)
        .map(|(&phi, &y)| {
            let r = y - (a + b * phi.sin() + c * phi.cos());
            r * r
        })
        .sum();
    Ok(FitResult {
        offset: a,
        amplitude: b.hypot(c),
        phase: wrap_phase(c.atan2(b)),
        residual_rms: (sq / f.values.len() as f64).sqrt(),
    })
}

fn raw_extremes(f: &FringeRecord) -> (f64, f64) {
    let max = f.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = f.values.iter().copied().fold(f64::INFINITY, f64::min);
    (max, min)
}

/// Peak-to-trough excursion over φ.
pub fn p_minus(f: &FringeRecord, mode: Extremes) -> Result<f64> {
    match mode {
        Extremes::Fit => Ok(2.0 * fit_sinusoid(f)?.amplitude),
        Extremes::Raw => {
            if f.values.is_empty() {
                return Err(Error::IllConditioned("empty fringe".into()));
            }
            let (max, min) = raw_extremes(f);
            Ok(max - min)
        }
    }
}

/// `(max − min)/(max + min)`.
pub fn visibility(f: &FringeRecord, mode: Extremes) -> Result<f64> {
    let (num, den) = match mode {
        Extremes::Fit => {
            let fit = fit_sinusoid(f)?;
            (fit.amplitude, fit.offset)
        }
        Extremes::Raw => {
            let (max, min) = raw_extremes(f);
            (max - min, max + min)
        }
    };
    if den <= 0.0 {
        return Err(Error::ZeroDenominator);
    }
    Ok(num / den)
}

/// `wrap(a.phase − b.phase)`; both fringes must have amplitude above
/// `flat_threshold`.
pub fn phase_difference(a: &FitResult, b: &FitResult, flat_threshold: f64) -> Result<f64> {
    for fit in [a, b] {
        if fit.amplitude <= flat_threshold {
            return Err(Error::FlatFringe { amplitude: fit.amplitude });
        }
    }
    Ok(wrap_phase(a.phase - b.phase))
}

/// Format a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

impl FringeRecord {
    /// CSV form: a metadata header and row, then `phi,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CSV_HEADER}").unwrap();
        writeln!(
            out,
            "{},{},{},{},{},{}",
            self.label.config,
            fmt_f64(self.label.theta),
            fmt_f64(self.label.delta),
            self.label.pol,
            self.counts_per_point.map(|n| n.to_string()).unwrap_or_default(),
            self.seed.map(|n| n.to_string()).unwrap_or_default(),
        )
        .unwrap();
        writeln!(out, "phi,value").unwrap();
        for (phi, v) in self.phi_grid.iter().zip(&self.values) {
            writeln!(out, "{},{}", fmt_f64(*phi), fmt_f64(*v)).unwrap();
        }
        out
    }

    /// Parse the CSV form; `source` names the input in error messages.
    pub fn from_csv(text: &str, source: &str) -> Result<FringeRecord> {
        let err = |line: usize, message: String| Error::Parse { path: source.to_string(), line, message };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));

        let (n, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        if header != CSV_HEADER {
            return Err(err(n, format!("expected header {CSV_HEADER:?}")));
        }
        let (n, meta) = lines.next().ok_or_else(|| err(2, "missing metadata row".into()))?;
        let fields: Vec<&str> = meta.split(',').collect();
        if fields.len() != 6 {
            return Err(err(n, format!("metadata row has {} fields, expected 6", fields.len())));
        }
        let float = |s: &str, what: &str| s.trim().parse::<f64>().map_err(|e| err(n, format!("{what}: {e}")));
        let opt_int = |s: &str, what: &str| -> Result<Option<u64>> {
            if s.trim().is_empty() {
                Ok(None)
            } else {
                s.trim().parse::<u64>().map(Some).map_err(|e| err(n, format!("{what}: {e}")))
            }
        };
        let label = FringeLabel {
            config: fields[0].parse().map_err(|e: Error| err(n, e.to_string()))?,
            theta: float(fields[1], "theta")?,
            delta: float(fields[2], "delta")?,
            pol: fields[3].parse().map_err(|e: Error| err(n, e.to_string()))?,
        };
        let counts_per_point = opt_int(fields[4], "counts_per_point")?;
        let seed = opt_int(fields[5], "seed")?;

        let (n, cols) = lines.next().ok_or_else(|| err(3, "missing phi,value header".into()))?;
        if cols != "phi,value" {
            return Err(err(n, "expected \"phi,value\"".into()));
        }
        let mut phi_grid = Vec::new();
        let mut values = Vec::new();
        for (n, line) in lines {
            if line.is_empty() {
                continue;
            }
            let (phi, value) =
                line.split_once(',').ok_or_else(|| err(n, format!("expected two fields, got {line:?}")))?;
            let phi: f64 = phi.trim().parse().map_err(|e| err(n, format!("phi: {e}")))?;
            let value: f64 = value.trim().parse().map_err(|e| err(n, format!("value: {e}")))?;
            if let Some(&last) = phi_grid.last() {
                if phi <= last {
                    return Err(err(n, "phi grid must be strictly increasing".into()));
                }
            }
            if !(0.0..2.0 * PI).contains(&phi) {
                return Err(err(n, format!("phi {phi} outside [0, 2π)")));
            }
            if value < 0.0 {
                return Err(err(n, format!("negative value {value}")));
            }
            phi_grid.push(phi);
            values.push(value);
        }
        let last_line = text.lines().count();
        if phi_grid.len() < MIN_GRID {
            return Err(err(last_line, format!("{} samples, need at least {MIN_GRID}", phi_grid.len())));
        }
        Ok(FringeRecord { label, phi_grid, values, counts_per_point, seed })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<FringeRecord> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv(&text, &path.display().to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn label() -> FringeLabel {
        FringeLabel { config: Configuration::A, theta: 0.0, delta: 0.0, pol: Polarization::H }
    }

    fn worked_hh_fringe() -> FringeCoefficients {
        FringeCoefficients { offset: 0.35, amplitude: 0.5 * 0.4f64.sqrt(), phase_offset: 0.0 }
    }

    #[test]
    fn exact_sampling_reaches_peak() {
        let f = sample_fringe(label(), &worked_hh_fringe(), 0.0, 64, None).unwrap();
        let max = f.values.iter().copied().fold(0.0, f64::max);
        // φ = π/2 is on the 64-point grid.
        assert!((max - (0.35 + 0.5 * 0.4f64.sqrt())).abs() < 1e-15);
        assert!(f.counts_per_point.is_none());
    }

    #[test]
    fn grid_too_small() {
        assert!(matches!(sample_fringe(label(), &worked_hh_fringe(), 0.0, 7, None), Err(Error::GridTooSmall(7))));
    }

    #[test]
    fn flat_fringe() {
        let flat = FringeCoefficients { offset: 0.3, amplitude: 0.0, phase_offset: 0.0 };
        let f = sample_fringe(label(), &flat, 0.4, 16, None).unwrap();
        assert!(f.values.iter().all(|&v| v == 0.3));
        assert_eq!(p_minus(&f, Extremes::Raw).unwrap(), 0.0);
        assert!(p_minus(&f, Extremes::Fit).unwrap() < 1e-15);
        assert!(visibility(&f, Extremes::Fit).unwrap() < 1e-15);
    }

    #[test]
    fn p_minus_of_worked_example() {
        let f = sample_fringe(label(), &worked_hh_fringe(), 0.0, 64, None).unwrap();
        let expected = 0.4f64.sqrt();
        assert!((p_minus(&f, Extremes::Fit).unwrap() - expected).abs() < 1e-12);
        assert!((p_minus(&f, Extremes::Raw).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn visibility_examples() {
        let full = FringeCoefficients { offset: 0.5, amplitude: 0.5, phase_offset: 0.0 };
        let f = sample_fringe(label(), &full, 0.0, 64, None).unwrap();
        assert!((visibility(&f, Extremes::Fit).unwrap() - 1.0).abs() < 1e-12);
        let f = sample_fringe(label(), &worked_hh_fringe(), 0.0, 64, None).unwrap();
        assert!((visibility(&f, Extremes::Fit).unwrap() - 0.5 * 0.4f64.sqrt() / 0.35).abs() < 1e-12);
    }

    #[test]
    fn visibility_zero_denominator() {
        let dark = FringeCoefficients { offset: 0.0, amplitude: 0.0, phase_offset: 0.0 };
        let f = sample_fringe(label(), &dark, 0.0, 16, None).unwrap();
        assert!(matches!(visibility(&f, Extremes::Fit), Err(Error::ZeroDenominator)));
        assert!(matches!(visibility(&f, Extremes::Raw), Err(Error::ZeroDenominator)));
    }

    #[test]
    fn fit_recovers_sinusoid() {
        let c = FringeCoefficients { offset: 0.5, amplitude: 0.3, phase_offset: 1.0 };
        let fit = fit_sinusoid(&sample_fringe(label(), &c, 0.0, 64, None).unwrap()).unwrap();
        assert!((fit.offset - 0.5).abs() < 1e-12);
        assert!((fit.amplitude - 0.3).abs() < 1e-12);
        assert!((fit.phase - 1.0).abs() < 1e-12);
        assert!(fit.residual_rms < 1e-12);
    }

    #[test]
    fn fit_subtracts_pump_phase() {
        let c = FringeCoefficients {
            offset: 0.4,
            amplitude: 0.5 * 0.6f64.sqrt() * 0.18f64.sqrt() / 0.24f64.sqrt(),
            phase_offset: 3.0 * PI / 4.0,
        };
        let fit = fit_sinusoid(&sample_fringe(label(), &c, 0.45 * PI, 64, None).unwrap()).unwrap();
        assert!((fit.phase - wrap_phase(3.0 * PI / 4.0 - 0.45 * PI)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_grid_is_ill_conditioned() {
        let f = FringeRecord {
            label: label(),
            phi_grid: vec![0.5; 10],
            values: vec![0.1; 10],
            counts_per_point: None,
            seed: None,
        };
        assert!(matches!(fit_sinusoid(&f), Err(Error::IllConditioned(_))));
    }

    #[test]
    fn phase_difference_rules() {
        let a = FitResult { offset: 0.4, amplitude: 0.3, phase: 3.0, residual_rms: 0.0 };
        let b = FitResult { offset: 0.4, amplitude: 0.3, phase: -3.0, residual_rms: 0.0 };
        assert!((phase_difference(&a, &b, 1e-3).unwrap() - wrap_phase(6.0)).abs() < 1e-15);
        assert_eq!(phase_difference(&a, &a, 1e-3).unwrap(), 0.0);
        let flat = FitResult { amplitude: 1e-4, ..a };
        assert!(matches!(phase_difference(&a, &flat, 1e-3), Err(Error::FlatFringe { .. })));
    }

    #[test]
    fn noisy_sampling_is_seeded() {
        let noise = Some(Noise { counts_per_point: 1000, seed: 42 });
        let a = sample_fringe(label(), &worked_hh_fringe(), 0.1, 32, noise).unwrap();
        let b = sample_fringe(label(), &worked_hh_fringe(), 0.1, 32, noise).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.counts_per_point, Some(1000));
        // Normalized counts are multiples of 1/N.
        assert!(a.values.iter().all(|v| ((v * 1000.0).round() - v * 1000.0).abs() < 1e-9));
    }

    #[test]
    fn csv_round_trip_is_byte_stable() {
        let f = sample_fringe(label(), &worked_hh_fringe(), 0.3, 16, Some(Noise { counts_per_point: 500, seed: 7 })).unwrap();
        let text = f.to_csv();
        let back = FringeRecord::from_csv(&text, "mem").unwrap();
        assert_eq!(back, f);
        assert_eq!(back.to_csv(), text);
    }

    #[test]
    fn truncated_csv_names_line() {
        let f = sample_fringe(label(), &worked_hh_fringe(), 0.0, 16, None).unwrap();
        let text = f.to_csv();
        let mut truncated: String = text.lines().take(8).collect::<Vec<_>>().join("\n");
        truncated.push_str("\n0.5");
        match FringeRecord::from_csv(&truncated, "cut.csv") {
            Err(Error::Parse { path, line, .. }) => {
                assert_eq!(path, "cut.csv");
                assert_eq!(line, 9);
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
