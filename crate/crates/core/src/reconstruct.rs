//! Tomography from the sixteen canonical fringes and the two blocked-port
//! levels: configuration identification, loss estimation and the closed-form
//! inversion to a density matrix.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fringes::{
    fit_sinusoid, p_minus, phase_difference, sample_fringe, Extremes, FitResult, FringeLabel, FringeRecord, Noise,
    DEFAULT_FLAT_THRESHOLD, DEFAULT_GRID,
};
use crate::interferometer::{canonical_setting, fringe_coefficients, Configuration, ImperfectionModel, Polarization};
use crate::qstate::{
    fidelity, to_params, trace_distance, validate, wrap_phase, DensityMatrix, Emission, StateDiagnostics, StateParams,
    Tolerances, PAIRS,
};

/// Flat-fringe threshold used for noiseless data.
pub const EXACT_FLAT_THRESHOLD: f64 = 1e-10;
/// Largest tolerated `|Σ I − 1|` before renormalizing is refused.
pub const DEFAULT_RENORM_TOLERANCE: f64 = 0.05;
/// Largest tolerated disagreement between the two estimates of a modulus.
pub const DEFAULT_DEFECT_BOUND: f64 = 0.1;
/// Relative visibility gap below which two candidates count as tied.
const TIE_TOLERANCE: f64 = 1e-9;

/// Human-readable name of the canonical setting that isolates `e`.
pub fn setting_name(e: Emission) -> &'static str {
    match e {
        Emission::HH => "(0,0,H)",
        Emission::HV => "(0,pi/4,V)",
        Emission::VH => "(pi/4,0,H)",
        Emission::VV => "(pi/4,pi/4,V)",
    }
}

/// The four canonical fringes of one configuration, indexed by the
/// emission each setting isolates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigFringes {
    pub fringes: [FringeRecord; 4],
}

impl ConfigFringes {
    pub fn get(&self, e: Emission) -> &FringeRecord {
        &self.fringes[e.index()]
    }

    /// Fringe whose visibility selects `config`.
    pub fn selector(&self, config: Configuration) -> &FringeRecord {
        self.get(config.reference())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
#[allow(clippy::large_enum_variant)]
pub enum ConfigData {
    Present(ConfigFringes),
    /// The delay setting never produced a visible selector fringe.
    Absent {
        peak_visibility: f64,
        selector_visibility: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    /// Indexed by configuration A..D.
    pub configs: [ConfigData; 4],
    /// Blocked-port level `(δ = π/4, H)`.
    pub p0_h: FringeRecord,
    /// Blocked-port level `(δ = 0, V)`.
    pub p0_v: FringeRecord,
}

impl MeasurementSet {
    pub fn config(&self, c: Configuration) -> &ConfigData {
        &self.configs[c.index()]
    }

    pub fn is_absent(&self, c: Configuration) -> bool {
        matches!(self.config(c), ConfigData::Absent { .. })
    }

    pub fn is_noisy(&self) -> bool {
        self.records().any(|r| r.counts_per_point.is_some())
    }

    pub fn records(&self) -> impl Iterator<Item = &FringeRecord> {
        self.configs
            .iter()
            .flat_map(|c| match c {
                ConfigData::Present(f) => f.fringes.iter().collect::<Vec<_>>(),
                ConfigData::Absent { .. } => Vec::new(),
            })
            .chain([&self.p0_h, &self.p0_v])
    }
}

/// Every fringe of every configuration, before absent ones are dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct FullMeasurement {
    pub configs: [ConfigFringes; 4],
    pub p0_h: FringeRecord,
    pub p0_v: FringeRecord,
}

impl FullMeasurement {
    /// Mark configurations whose selector visibility is at or below the
    /// threshold as absent. `None` picks the default for the data kind.
    pub fn classify(self, flat_threshold: Option<f64>) -> Result<MeasurementSet> {
        let noisy = self.p0_h.counts_per_point.is_some();
        let threshold = flat_threshold.unwrap_or(if noisy { DEFAULT_FLAT_THRESHOLD } else { EXACT_FLAT_THRESHOLD });
        let mut out = Vec::with_capacity(4);
        for (config, fr) in Configuration::ALL.into_iter().zip(self.configs) {
            let selector_visibility = fit_visibility(&fit_sinusoid(fr.selector(config))?);
            if selector_visibility > threshold {
                out.push(ConfigData::Present(fr));
            } else {
                let mut peak: f64 = 0.0;
                for f in &fr.fringes {
                    peak = peak.max(fit_visibility(&fit_sinusoid(f)?));
                }
                out.push(ConfigData::Absent { peak_visibility: peak, selector_visibility });
            }
        }
        let configs: [ConfigData; 4] = out.try_into().expect("four configurations");
        Ok(MeasurementSet { configs, p0_h: self.p0_h, p0_v: self.p0_v })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationOptions {
    pub grid_size: usize,
    /// `None` for exact probabilities.
    pub counts_per_point: Option<u64>,
    pub seed: u64,
    /// Pump phase of each configuration A..D.
    pub pump_phases: [f64; 4],
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self { grid_size: DEFAULT_GRID, counts_per_point: None, seed: 0, pump_phases: [0.0; 4] }
    }
}

/// Pump phases in (−π, π] drawn deterministically from `seed`.
pub fn seeded_pump_phases(seed: u64) -> [f64; 4] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x70_75_6d_70);
    std::array::from_fn(|_| wrap_phase(rng.random_range(-PI..PI)))
}

fn label(config: Configuration, e: Emission) -> FringeLabel {
    let (theta, delta, pol) = canonical_setting(e);
    FringeLabel { config, theta, delta, pol }
}

/// Simulate all sixteen canonical fringes and both blocked-port levels.
pub fn simulate_full(p: &StateParams, imp: &ImperfectionModel, opts: &SimulationOptions) -> Result<FullMeasurement> {
    p.check_domain(&Tolerances::default())?;
    imp.check()?;
    let mut seeds = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut noise = || opts.counts_per_point.map(|n| Noise { counts_per_point: n, seed: seeds.next_u64() });

    let mut configs = Vec::with_capacity(4);
    for config in Configuration::ALL {
        let pump = opts.pump_phases[config.index()];
        let mut fringes = Vec::with_capacity(4);
        for e in Emission::ALL {
            let l = label(config, e);
            let coeffs = fringe_coefficients(p, config, l.theta, l.delta, l.pol, imp)?;
            fringes.push(sample_fringe(l, &coeffs, pump, opts.grid_size, noise())?);
        }
        configs.push(ConfigFringes { fringes: fringes.try_into().expect("four fringes") });
    }

    let pump = opts.pump_phases[0];
    let mut level = |delta: f64, pol: Polarization| -> Result<FringeRecord> {
        let l = FringeLabel { config: Configuration::A, theta: 0.0, delta, pol };
        let coeffs = fringe_coefficients(p, l.config, l.theta, l.delta, l.pol, imp)?;
        sample_fringe(l, &coeffs, pump, opts.grid_size, noise())
    };
    let p0_h = level(FRAC_PI_4, Polarization::H)?;
    let p0_v = level(0.0, Polarization::V)?;

    Ok(FullMeasurement { configs: configs.try_into().expect("four configurations"), p0_h, p0_v })
}

/// [`simulate_full`] followed by [`FullMeasurement::classify`] at the
/// default threshold.
pub fn simulate(p: &StateParams, imp: &ImperfectionModel, opts: &SimulationOptions) -> Result<MeasurementSet> {
    simulate_full(p, imp, opts)?.classify(None)
}

fn fit_visibility(fit: &FitResult) -> f64 {
    if fit.offset > 0.0 {
        fit.amplitude / fit.offset
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Configuration identification

/// Fringes recorded at one delay setting.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub fringes: ConfigFringes,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiedConfig {
    pub config: Configuration,
    /// `None` when the selector never exceeds the threshold.
    pub candidate: Option<String>,
    pub max_visibility: f64,
    /// All candidates reaching the maximum within a relative 1e-9.
    pub tied: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Identification {
    pub configs: Vec<IdentifiedConfig>,
    /// Some selector maximum was shared by several candidates.
    pub degenerate: bool,
}

impl Identification {
    pub fn mapping(&self) -> BTreeMap<Configuration, Option<String>> {
        self.configs.iter().map(|c| (c.config, c.candidate.clone())).collect()
    }

    pub fn absent(&self) -> Vec<Configuration> {
        self.configs.iter().filter(|c| c.candidate.is_none()).map(|c| c.config).collect()
    }
}

/// Assign each configuration the candidate maximizing its selector
/// visibility.
pub fn identify_configurations(candidates: &[Candidate], flat_threshold: f64) -> Result<Identification> {
    let mut configs = Vec::with_capacity(4);
    let mut degenerate = false;
    for config in Configuration::ALL {
        let mut vis = Vec::with_capacity(candidates.len());
        for c in candidates {
            vis.push(fit_visibility(&fit_sinusoid(c.fringes.selector(config))?));
        }
        let max = vis.iter().copied().fold(0.0, f64::max);
        if candidates.is_empty() || max <= flat_threshold {
            configs.push(IdentifiedConfig { config, candidate: None, max_visibility: max, tied: Vec::new() });
            continue;
        }
        let tied: Vec<String> = candidates
            .iter()
            .zip(&vis)
            .filter(|(_, &v)| v >= max * (1.0 - TIE_TOLERANCE))
            .map(|(c, _)| c.id.clone())
            .collect();
        degenerate |= tied.len() > 1;
        let best = candidates.iter().zip(&vis).find(|(_, &v)| v == max).map(|(c, _)| c.id.clone());
        configs.push(IdentifiedConfig { config, candidate: best, max_visibility: max, tied });
    }
    Ok(Identification { configs, degenerate })
}

// ---------------------------------------------------------------------------
// Inversion

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructOptions {
    /// Amplitude at or below which a fringe is flat. `None`: 1e-3 for
    /// noisy data, 1e-10 for exact data.
    pub flat_threshold: Option<f64>,
    pub renorm_tolerance: f64,
    pub defect_bound: f64,
    pub psd_project: bool,
    #[serde(skip)]
    pub extremes: Extremes,
    pub tolerances: Tolerances,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self {
            flat_threshold: None,
            renorm_tolerance: DEFAULT_RENORM_TOLERANCE,
            defect_bound: DEFAULT_DEFECT_BOUND,
            psd_project: false,
            extremes: Extremes::Fit,
            tolerances: Tolerances::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEstimate {
    pub b1_sq: f64,
    pub b2_sq: f64,
    pub t_h: f64,
    pub gamma: f64,
    pub p0_h: f64,
    pub p0_v: f64,
}

/// Which fringes of which configuration fed an estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Source {
    pub config: Configuration,
    pub fringes: Vec<&'static str>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagonalMethod {
    /// `Γ (P⁻)²` of the selector fringe.
    Fringe,
    /// Blocked-port level minus the partner intensity.
    LevelFallback,
    /// Both configurations sharing a level are absent; the level is split
    /// evenly.
    LevelSplit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiagonalEstimate {
    pub element: Emission,
    pub value: f64,
    pub method: DiagonalMethod,
    pub sources: Vec<Source>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OffDiagonalEstimate {
    pub row: Emission,
    pub col: Emission,
    pub modulus: f64,
    /// Argument of the `(row, col)` entry; `None` when no fringe pair
    /// defines it.
    pub phase: Option<f64>,
    /// `|m₁ − m₂|` when both configurations are present.
    pub modulus_defect: Option<f64>,
    /// Wrapped gap between the two phase estimates.
    pub phase_mismatch: Option<f64>,
    pub sources: Vec<Source>,
}

impl OffDiagonalEstimate {
    pub fn element(&self) -> String {
        format!("{},{}", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Scored {
    Raw,
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AbsentConfig {
    pub config: Configuration,
    pub peak_visibility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReconstructionReport {
    /// Raw inversion, Hermitian by construction.
    pub matrix: DensityMatrix,
    pub projected: Option<DensityMatrix>,
    /// Parameters of the raw matrix, or of its PSD projection when the raw
    /// matrix is not a valid state.
    pub params: StateParams,
    pub scored: Scored,
    pub loss: LossEstimate,
    pub absent: Vec<AbsentConfig>,
    pub diagonal: Vec<DiagonalEstimate>,
    pub off_diagonal: Vec<OffDiagonalEstimate>,
    /// Diagonal sum before normalization.
    pub diagonal_sum: f64,
    pub flat_threshold: f64,
    pub diagnostics: StateDiagnostics,
    pub fidelity_vs_truth: Option<f64>,
    pub trace_distance_vs_truth: Option<f64>,
}

impl ReconstructionReport {
    /// Element name → configurations and fringes used.
    pub fn per_element_source(&self) -> BTreeMap<String, Vec<Source>> {
        let mut out: BTreeMap<String, Vec<Source>> =
            self.diagonal.iter().map(|d| (format!("{0},{0}", d.element), d.sources.clone())).collect();
        out.extend(self.off_diagonal.iter().map(|o| (o.element(), o.sources.clone())));
        out
    }

    pub fn consistency_defects(&self) -> BTreeMap<String, f64> {
        self.off_diagonal.iter().filter_map(|o| o.modulus_defect.map(|d| (o.element(), d))).collect()
    }

    pub fn phase_mismatches(&self) -> BTreeMap<String, f64> {
        self.off_diagonal.iter().filter_map(|o| o.phase_mismatch.map(|d| (o.element(), d))).collect()
    }
}

#[derive(Clone, Copy)]
struct Stats {
    fit: FitResult,
    p_minus: f64,
}

/// Fits of every usable record, computed once.
struct Analyzed {
    threshold: f64,
    stats: [Option<[Stats; 4]>; 4],
    absent: [Option<(f64, f64)>; 4],
    p0_h: f64,
    p0_v: f64,
}

impl Analyzed {
    fn new(m: &MeasurementSet, opts: &ReconstructOptions) -> Result<Self> {
        let threshold =
            opts.flat_threshold.unwrap_or(if m.is_noisy() { DEFAULT_FLAT_THRESHOLD } else { EXACT_FLAT_THRESHOLD });
        let mut stats = [None; 4];
        let mut absent = [None; 4];
        for c in Configuration::ALL {
            match m.config(c) {
                ConfigData::Present(fr) => {
                    let mut s = Vec::with_capacity(4);
                    for f in &fr.fringes {
                        let fit = fit_sinusoid(f)?;
                        let pm = match opts.extremes {
                            Extremes::Fit => 2.0 * fit.amplitude,
                            Extremes::Raw => p_minus(f, Extremes::Raw)?,
                        };
                        s.push(Stats { fit, p_minus: pm });
                    }
                    stats[c.index()] = Some(s.try_into().ok().expect("four fringes"));
                }
                ConfigData::Absent { peak_visibility, selector_visibility } => {
                    absent[c.index()] = Some((*peak_visibility, *selector_visibility));
                }
            }
        }
        Ok(Self { threshold, stats, absent, p0_h: fit_sinusoid(&m.p0_h)?.offset, p0_v: fit_sinusoid(&m.p0_v)?.offset })
    }

    fn get(&self, c: Configuration) -> Option<&[Stats; 4]> {
        self.stats[c.index()].as_ref()
    }

    fn selector_visibility(&self, c: Configuration) -> Option<f64> {
        match (self.get(c), self.absent[c.index()]) {
            (Some(s), _) => Some(fit_visibility(&s[c.reference().index()].fit)),
            (None, Some((_, v))) => Some(v),
            _ => None,
        }
    }

    fn loss(&self, tol: &Tolerances) -> Result<LossEstimate> {
        let (p0_h, p0_v) = (self.p0_h, self.p0_v);
        let b1_sq = 2.0 * (p0_h + p0_v);
        let b2_sq = 1.0 - b1_sq;
        if p0_h <= tol.zero {
            return Err(Error::DegenerateState(format!(
                "blocked-port level P_H0 = {p0_h:.3e}: I_HH + I_VH vanishes and the transmission is undefined"
            )));
        }
        if b2_sq <= tol.zero {
            return Err(Error::DegenerateState(format!("reference weight |b2|^2 = {b2_sq:.3e} vanishes")));
        }
        if self.get(Configuration::A).is_none() && self.get(Configuration::C).is_none() {
            return Err(Error::DegenerateState("configurations A and C are both absent".into()));
        }
        let va = self.selector_visibility(Configuration::A).unwrap_or(0.0);
        let vc = self.selector_visibility(Configuration::C).unwrap_or(0.0);
        let t_sq = (va * va + vc * vc) * (1.0 - 2.0 * p0_v).powi(2) / (8.0 * p0_h * b2_sq);
        if t_sq <= 0.0 {
            return Err(Error::DegenerateState("selector visibilities of A and C both vanish".into()));
        }
        Ok(LossEstimate { b1_sq, b2_sq, t_h: t_sq.sqrt(), gamma: 1.0 / (4.0 * t_sq * b1_sq * b2_sq), p0_h, p0_v })
    }

    fn diagonal(&self, loss: &LossEstimate) -> Result<Vec<DiagonalEstimate>> {
        let from_fringe = |e: Emission| {
            let c = Configuration::for_reference(e);
            self.get(c).map(|s| {
                let pm = s[e.index()].p_minus;
                (loss.gamma * pm * pm, Source { config: c, fringes: vec![setting_name(e)] })
            })
        };
        let mut out = Vec::with_capacity(4);
        for e in Emission::ALL {
            // HH/VH share the H level, HV/VV the V level.
            let partner = Emission::from_index(e.index() ^ 2);
            let level = if e.detected_is_v() { loss.p0_v } else { loss.p0_h };
            let pair_sum = 2.0 * level / loss.b1_sq;
            let est = match (from_fringe(e), from_fringe(partner)) {
                (Some((v, src)), _) => {
                    DiagonalEstimate { element: e, value: v, method: DiagonalMethod::Fringe, sources: vec![src] }
                }
                (None, Some((v, src))) => DiagonalEstimate {
                    element: e,
                    value: pair_sum - v,
                    method: DiagonalMethod::LevelFallback,
                    sources: vec![src],
                },
                (None, None) => {
                    if pair_sum > self.threshold {
                        return Err(Error::MissingConfiguration {
                            config: Configuration::for_reference(e),
                            element: format!("{e},{e}"),
                        });
                    }
                    DiagonalEstimate {
                        element: e,
                        value: 0.5 * pair_sum,
                        method: DiagonalMethod::LevelSplit,
                        sources: Vec::new(),
                    }
                }
            };
            out.push(est);
        }
        Ok(out)
    }

    /// Modulus and phase of `ρ(a, b)` from the configuration `c`, which must
    /// be the configuration of `a` or of `b`.
    fn pair_in(&self, c: Configuration, a: Emission, b: Emission, gamma: f64) -> Option<(f64, Option<f64>)> {
        let s = self.get(c)?;
        let r = c.reference();
        let other = if r == a { b } else { a };
        let (sel, oth) = (&s[r.index()], &s[other.index()]);
        if oth.fit.amplitude <= self.threshold {
            return Some((0.0, None));
        }
        let modulus = gamma * sel.p_minus * oth.p_minus;
        // ψ_c(x) − ψ_c(r) = φ(x, r), hence φ(a, b) = ψ(a) − ψ(b) in either case.
        let phase = if r == b {
            phase_difference(&oth.fit, &sel.fit, self.threshold).ok()
        } else {
            phase_difference(&sel.fit, &oth.fit, self.threshold).ok()
        };
        Some((modulus, phase))
    }

    fn off_diagonal(&self, loss: &LossEstimate) -> Vec<OffDiagonalEstimate> {
        PAIRS
            .iter()
            .map(|&(a, b)| {
                let mut moduli = Vec::new();
                let mut phases = Vec::new();
                let mut sources = Vec::new();
                for e in [a, b] {
                    let c = Configuration::for_reference(e);
                    if let Some((m, ph)) = self.pair_in(c, a, b, loss.gamma) {
                        moduli.push(m);
                        phases.extend(ph);
                        sources.push(Source { config: c, fringes: vec![setting_name(a), setting_name(b)] });
                    }
                }
                let modulus = if moduli.is_empty() { 0.0 } else { moduli.iter().sum::<f64>() / moduli.len() as f64 };
                let modulus_defect = (moduli.len() == 2).then(|| (moduli[0] - moduli[1]).abs());
                let (phase, phase_mismatch) = match phases.as_slice() {
                    [] => (None, None),
                    [p] => (Some(*p), None),
                    [p, q, ..] => {
                        let mean = (Complex64::from_polar(1.0, *p) + Complex64::from_polar(1.0, *q)).arg();
                        (Some(wrap_phase(mean)), Some(wrap_phase(p - q).abs()))
                    }
                };
                let modulus = if phase.is_some() { modulus } else { 0.0 };
                OffDiagonalEstimate { row: a, col: b, modulus, phase, modulus_defect, phase_mismatch, sources }
            })
            .collect()
    }
}

pub fn estimate_loss(m: &MeasurementSet) -> Result<LossEstimate> {
    estimate_loss_with(m, &ReconstructOptions::default())
}

pub fn estimate_loss_with(m: &MeasurementSet, opts: &ReconstructOptions) -> Result<LossEstimate> {
    Analyzed::new(m, opts)?.loss(&opts.tolerances)
}

/// `I_e = Γ (P⁻)²` from each selector fringe, with the blocked-port
/// fallback for absent configurations.
pub fn diagonal_elements(m: &MeasurementSet, loss: &LossEstimate) -> Result<Vec<DiagonalEstimate>> {
    Analyzed::new(m, &ReconstructOptions::default())?.diagonal(loss)
}

/// Moduli and phases of the six upper-triangle entries.
pub fn off_diagonal_elements(m: &MeasurementSet, loss: &LossEstimate) -> Result<Vec<OffDiagonalEstimate>> {
    Ok(Analyzed::new(m, &ReconstructOptions::default())?.off_diagonal(loss))
}

pub fn assemble(m: &MeasurementSet, truth: Option<&DensityMatrix>) -> Result<ReconstructionReport> {
    assemble_with(m, truth, &ReconstructOptions::default())
}

pub fn assemble_with(
    m: &MeasurementSet,
    truth: Option<&DensityMatrix>,
    opts: &ReconstructOptions,
) -> Result<ReconstructionReport> {
    let an = Analyzed::new(m, opts)?;
    let loss = an.loss(&opts.tolerances)?;
    let diagonal = an.diagonal(&loss)?;
    let off_diagonal = an.off_diagonal(&loss);

    let diagonal_sum: f64 = diagonal.iter().map(|d| d.value).sum();
    if (diagonal_sum - 1.0).abs() > opts.renorm_tolerance {
        return Err(Error::InconsistentData(format!(
            "diagonal sums to {diagonal_sum:.6}, more than {} from 1",
            opts.renorm_tolerance
        )));
    }
    for o in &off_diagonal {
        if let Some(d) = o.modulus_defect {
            if d > opts.defect_bound {
                return Err(Error::InconsistentData(format!(
                    "element {}: estimates from configurations {} disagree by {d:.3e}",
                    o.element(),
                    o.sources.iter().map(|s| s.config.as_str()).collect::<Vec<_>>().join(" and ")
                )));
            }
        }
    }

    let scale = 1.0 / diagonal_sum;
    let mut rows = [[Complex64::new(0.0, 0.0); 4]; 4];
    for d in &diagonal {
        rows[d.element.index()][d.element.index()] = Complex64::new(d.value * scale, 0.0);
    }
    for o in &off_diagonal {
        let z = Complex64::from_polar(o.modulus * scale, o.phase.unwrap_or(0.0));
        rows[o.row.index()][o.col.index()] = z;
        rows[o.col.index()][o.row.index()] = z.conj();
    }
    let matrix = DensityMatrix::from_rows(rows);
    let diagnostics = validate(&matrix);
    let projected = opts.psd_project.then(|| matrix.project_psd());
    let (scored, target) = if diagnostics.is_valid {
        (Scored::Raw, matrix.clone())
    } else {
        (Scored::Projected, projected.clone().unwrap_or_else(|| matrix.project_psd()))
    };
    let params = to_params(&target)?;
    let (fidelity_vs_truth, trace_distance_vs_truth) = match truth {
        Some(t) => (Some(fidelity(&target, t)?), Some(trace_distance(&target, t)?)),
        None => (None, None),
    };

    let absent = Configuration::ALL
        .into_iter()
        .filter_map(|c| an.absent[c.index()].map(|(peak, _)| AbsentConfig { config: c, peak_visibility: peak }))
        .collect();

    Ok(ReconstructionReport {
        matrix,
        projected,
        params,
        scored,
        loss,
        absent,
        diagonal,
        off_diagonal,
        diagonal_sum,
        flat_threshold: an.threshold,
        diagnostics,
        fidelity_vs_truth,
        trace_distance_vs_truth,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{from_params, generalized_bell, random_state};

    fn worked() -> StateParams {
        generalized_bell(0.4, 0.18f64.sqrt() / 0.24f64.sqrt(), -3.0 * PI / 4.0).unwrap()
    }

    fn opts_with_pump() -> SimulationOptions {
        SimulationOptions { pump_phases: [0.45 * PI, -1.0, 2.5, 0.3], ..Default::default() }
    }

    #[test]
    fn worked_example_round_trip() {
        let p = worked();
        let truth = from_params(&p).unwrap();
        let m = simulate(&p, &ImperfectionModel::ideal(), &opts_with_pump()).unwrap();
        assert!(m.is_absent(Configuration::B) && m.is_absent(Configuration::C));
        let r = assemble(&m, Some(&truth)).unwrap();
        assert!(r.matrix.max_abs_diff(&truth) < 1e-12);
        assert!(r.fidelity_vs_truth.unwrap() > 1.0 - 1e-12);
        assert_eq!(r.scored, Scored::Raw);
        assert!((r.loss.gamma - 1.0).abs() < 1e-12);
        let absent: Vec<_> = r.absent.iter().map(|a| a.config).collect();
        assert_eq!(absent, vec![Configuration::B, Configuration::C]);
        assert!(r.absent.iter().all(|a| a.peak_visibility < 1e-12));
        let hv = &r.diagonal[Emission::HV.index()];
        assert_eq!(hv.method, DiagonalMethod::LevelFallback);
        assert_eq!(hv.sources[0].config, Configuration::D);
    }

    #[test]
    fn worked_example_hh_vv_element() {
        let m = simulate(&worked(), &ImperfectionModel::ideal(), &opts_with_pump()).unwrap();
        let loss = estimate_loss(&m).unwrap();
        let off = off_diagonal_elements(&m, &loss).unwrap();
        let hh_vv = off.iter().find(|o| o.row == Emission::HH && o.col == Emission::VV).unwrap();
        assert!((hh_vv.modulus - 0.18f64.sqrt()).abs() < 1e-12);
        assert!((hh_vv.phase.unwrap() + 3.0 * PI / 4.0).abs() < 1e-12);
        assert!(hh_vv.modulus_defect.unwrap() < 1e-12);
        assert!(hh_vv.phase_mismatch.unwrap() < 1e-12);
        let configs: Vec<_> = hh_vv.sources.iter().map(|s| s.config).collect();
        assert_eq!(configs, vec![Configuration::A, Configuration::D]);
        // Elements touching HV or VH have no present configuration on one
        // side and zero coherence on the other.
        for o in off.iter().filter(|o| !(o.row == Emission::HH && o.col == Emission::VV)) {
            assert_eq!(o.modulus, 0.0);
            assert!(o.phase.is_none());
        }
    }

    #[test]
    fn phase_sign_conventions() {
        // Distinct phases on every pair pin all six orientations.
        let p = random_state(11);
        let truth = from_params(&p).unwrap();
        let m = simulate(&p, &ImperfectionModel::ideal(), &opts_with_pump()).unwrap();
        let r = assemble(&m, None).unwrap();
        for o in &r.off_diagonal {
            let expected = truth.entry(o.row, o.col).arg();
            assert!(wrap_phase(o.phase.unwrap() - expected).abs() < 1e-10, "{}", o.element());
        }
    }

    #[test]
    fn maximally_mixed_diagonals() {
        let p = StateParams::incoherent([0.25; 4]);
        let m = simulate(&p, &ImperfectionModel::ideal(), &SimulationOptions::default()).unwrap();
        let loss = estimate_loss(&m).unwrap();
        let diag = diagonal_elements(&m, &loss).unwrap();
        for d in &diag {
            assert!((d.value - 0.25).abs() < 1e-12);
            assert_eq!(d.method, DiagonalMethod::Fringe);
        }
        let off = off_diagonal_elements(&m, &loss).unwrap();
        assert!(off.iter().all(|o| o.modulus == 0.0 && o.phase.is_none()));
    }

    #[test]
    fn loss_recovered() {
        let imp = ImperfectionModel::new(0.3, 0.4, 0.7).unwrap();
        let m = simulate(&random_state(5), &imp, &SimulationOptions::default()).unwrap();
        let loss = estimate_loss(&m).unwrap();
        assert!((loss.b1_sq - 0.3).abs() < 1e-12);
        assert!((loss.b2_sq - 0.7).abs() < 1e-12);
        assert!((loss.t_h - 0.7).abs() < 1e-12);
        assert!((loss.gamma - 1.0 / (4.0 * 0.49 * 0.21)).abs() < 1e-10);
    }

    #[test]
    fn loss_degenerate_without_h_level() {
        let p = StateParams::incoherent([0.0, 0.5, 0.0, 0.5]);
        let m = simulate(&p, &ImperfectionModel::ideal(), &SimulationOptions::default()).unwrap();
        assert!(matches!(estimate_loss(&m), Err(Error::DegenerateState(_))));
    }

    #[test]
    fn pure_product_state_uses_split() {
        let p = StateParams::incoherent([1.0, 0.0, 0.0, 0.0]);
        let truth = from_params(&p).unwrap();
        let m = simulate(&p, &ImperfectionModel::ideal(), &SimulationOptions::default()).unwrap();
        let r = assemble(&m, Some(&truth)).unwrap();
        assert!(r.matrix.max_abs_diff(&truth) < 1e-12);
        assert_eq!(r.diagonal[Emission::HV.index()].method, DiagonalMethod::LevelSplit);
        assert_eq!(r.diagonal[Emission::VH.index()].method, DiagonalMethod::LevelFallback);
    }

    #[test]
    fn inconsistent_diagonal_sum_rejected() {
        let mut m = simulate(&random_state(3), &ImperfectionModel::ideal(), &SimulationOptions::default()).unwrap();
        if let ConfigData::Present(f) = &mut m.configs[0] {
            for v in &mut f.fringes[0].values {
                *v *= 3.0;
            }
        }
        assert!(matches!(assemble(&m, None), Err(Error::InconsistentData(_))));
    }

    #[test]
    fn identification_of_true_configs() {
        let p = random_state(21);
        let full = simulate_full(&p, &ImperfectionModel::ideal(), &opts_with_pump()).unwrap();
        let order = [2usize, 0, 3, 1];
        let candidates: Vec<Candidate> =
            order.iter().map(|&i| Candidate { id: format!("delay{i}"), fringes: full.configs[i].clone() }).collect();
        let id = identify_configurations(&candidates, DEFAULT_FLAT_THRESHOLD).unwrap();
        for (i, c) in Configuration::ALL.into_iter().enumerate() {
            assert_eq!(id.mapping()[&c], Some(format!("delay{i}")));
        }
    }

    #[test]
    fn identification_of_pure_state_is_degenerate() {
        // A pure state with every J = 1 and equal weights.
        let mut p = StateParams::incoherent([0.25; 4]);
        for &(a, b) in PAIRS.iter() {
            p.set_coherence(a, b, 1.0, 0.0);
        }
        let full = simulate_full(&p, &ImperfectionModel::ideal(), &SimulationOptions::default()).unwrap();
        let candidates: Vec<Candidate> =
            (0..4).map(|i| Candidate { id: i.to_string(), fringes: full.configs[i].clone() }).collect();
        let id = identify_configurations(&candidates, DEFAULT_FLAT_THRESHOLD).unwrap();
        assert!(id.degenerate);
        assert!(id.configs.iter().all(|c| c.tied.len() == 4));
    }

    #[test]
    fn seeded_pump_phases_are_deterministic() {
        assert_eq!(seeded_pump_phases(9), seeded_pump_phases(9));
        assert_ne!(seeded_pump_phases(9), seeded_pump_phases(10));
        assert!(seeded_pump_phases(9).iter().all(|p| p.abs() <= PI));
    }
}
