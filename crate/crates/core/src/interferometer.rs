//! Closed-form single-photon detection probabilities.
//!
//! Source Q1 emits the unknown state, Q2 emits the reference `|H_u H_d>`.
//! A configuration fixes which Q1 emission Q2 is made fully coherent with;
//! every other cross-source coherence then follows from the state itself.

use std::f64::consts::FRAC_PI_4;
use std::fmt;
use std::str::FromStr;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qstate::{wrap_phase, Emission, StateParams, Tolerances};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Configuration {
    A,
    B,
    C,
    D,
}

impl Configuration {
    pub const ALL: [Configuration; 4] = [Configuration::A, Configuration::B, Configuration::C, Configuration::D];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The Q1 emission made coherent with Q2's reference emission.
    pub fn reference(self) -> Emission {
        match self {
            Configuration::A => Emission::HH,
            Configuration::B => Emission::HV,
            Configuration::C => Emission::VH,
            Configuration::D => Emission::VV,
        }
    }

    pub fn for_reference(e: Emission) -> Configuration {
        match e {
            Emission::HH => Configuration::A,
            Emission::HV => Configuration::B,
            Emission::VH => Configuration::C,
            Emission::VV => Configuration::D,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Configuration::A => "A",
            Configuration::B => "B",
            Configuration::C => "C",
            Configuration::D => "D",
        }
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Configuration {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" => Ok(Configuration::A),
            "B" => Ok(Configuration::B),
            "C" => Ok(Configuration::C),
            "D" => Ok(Configuration::D),
            other => Err(Error::ParameterDomain(format!("unknown configuration {other:?}"))),
        }
    }
}

/// Polarization the detected photon is projected onto.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Polarization {
    H,
    V,
}

impl fmt::Display for Polarization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Polarization::H => "H",
            Polarization::V => "V",
        })
    }
}

impl FromStr for Polarization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "H" => Ok(Polarization::H),
            "V" => Ok(Polarization::V),
            other => Err(Error::ParameterDomain(format!("unknown polarization {other:?}"))),
        }
    }
}

/// The wave-plate angles and projection that isolate one emission's fringe:
/// HH ↔ (0, 0, H), HV ↔ (0, π/4, V), VH ↔ (π/4, 0, H), VV ↔ (π/4, π/4, V).
pub fn canonical_setting(e: Emission) -> (f64, f64, Polarization) {
    let theta = if e.undetected_is_v() { FRAC_PI_4 } else { 0.0 };
    let (delta, pol) = if e.detected_is_v() { (FRAC_PI_4, Polarization::V) } else { (0.0, Polarization::H) };
    (theta, delta, pol)
}

/// Cross-source coherence in one configuration, indexed by Q1 emission.
/// Phases exclude the pump-phase term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossCoherence {
    pub j: [f64; 4],
    pub phi: [f64; 4],
}

impl CrossCoherence {
    pub fn j(&self, e: Emission) -> f64 {
        self.j[e.index()]
    }

    pub fn phi(&self, e: Emission) -> f64 {
        self.phi[e.index()]
    }
}

/// Unequal source weights and H-polarization loss between the sources.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImperfectionModel {
    pub b1_sq: f64,
    /// `arg b1 - arg b2`.
    pub arg_b: f64,
    /// Amplitude transmission of H-polarized undetected photons.
    pub t_h: f64,
}

impl ImperfectionModel {
    pub fn ideal() -> Self {
        Self { b1_sq: 0.5, arg_b: 0.0, t_h: 1.0 }
    }

    pub fn new(b1_sq: f64, arg_b: f64, t_h: f64) -> Result<Self> {
        let m = Self { b1_sq, arg_b, t_h };
        m.check()?;
        Ok(m)
    }

    pub fn check(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.b1_sq) {
            return Err(Error::ParameterDomain(format!("|b1|^2 = {} outside [0, 1]", self.b1_sq)));
        }
        if !(0.0..=1.0).contains(&self.t_h) {
            return Err(Error::ParameterDomain(format!("T_H = {} outside [0, 1]", self.t_h)));
        }
        if !self.arg_b.is_finite() {
            return Err(Error::ParameterDomain("arg b is not finite".into()));
        }
        Ok(())
    }

    pub fn b2_sq(&self) -> f64 {
        1.0 - self.b1_sq
    }

    pub fn r_h(&self) -> f64 {
        (1.0 - self.t_h * self.t_h).max(0.0).sqrt()
    }
}

impl Default for ImperfectionModel {
    fn default() -> Self {
        Self::ideal()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    /// Undetected-arm half-wave plate angle.
    pub theta: f64,
    /// Detected-arm half-wave plate angle.
    pub delta: f64,
    pub pol: Polarization,
    /// Tunable phase `arg b1 - arg b2 + phi_u - phi_d`.
    pub phi: f64,
    /// Pump phase of the active configuration.
    pub pump_phase: f64,
}

/// `P(φ) = offset + amplitude · sin(φ − pump_phase + phase_offset)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FringeCoefficients {
    pub offset: f64,
    pub amplitude: f64,
    pub phase_offset: f64,
}

impl FringeCoefficients {
    pub fn eval(&self, phi: f64, pump_phase: f64) -> f64 {
        self.offset + self.amplitude * (phi - pump_phase + self.phase_offset).sin()
    }
}

/// Half-wave plate Jones matrix `[[cos 2γ, sin 2γ], [sin 2γ, −cos 2γ]]`.
pub fn hwp(gamma: f64) -> Matrix2<f64> {
    let (s, c) = (2.0 * gamma).sin_cos();
    Matrix2::new(c, s, s, -c)
}

/// Cross-source indistinguishability and phase for every Q1 emission.
pub fn cross_coherence(config: Configuration, p: &StateParams) -> CrossCoherence {
    let r = config.reference();
    let mut out = CrossCoherence { j: [0.0; 4], phi: [0.0; 4] };
    for e in Emission::ALL {
        out.j[e.index()] = p.indistinguishability(e, r);
        out.phi[e.index()] = p.phase(e, r);
    }
    out
}

/// The two interference terms of a fringe as signed amplitudes and phases
/// (excluding the pump phase): `Σ amp_k · sin(φ − pump + phase_k)`.
fn interference_terms(
    p: &StateParams,
    cc: &CrossCoherence,
    theta: f64,
    delta: f64,
    pol: Polarization,
    imp: &ImperfectionModel,
) -> [(f64, f64); 2] {
    let (s2t, c2t) = (2.0 * theta).sin_cos();
    let (s2d, c2d) = (2.0 * delta).sin_cos();
    let prefactor = (imp.b1_sq * imp.b2_sq()).sqrt() * imp.t_h;
    let (weight, via_h, via_v) = match pol {
        Polarization::H => (c2d, Emission::HH, Emission::VH),
        Polarization::V => (s2d, Emission::HV, Emission::VV),
    };
    let term = |e: Emission, arm: f64| (prefactor * weight * arm * p.intensity(e).sqrt() * cc.j(e), cc.phi(e));
    [term(via_h, c2t), term(via_v, s2t)]
}

fn background(p: &StateParams, delta: f64, pol: Polarization, imp: &ImperfectionModel) -> f64 {
    let (s2d, c2d) = (2.0 * delta).sin_cos();
    match pol {
        Polarization::H => {
            0.5 * imp.b1_sq * (p.intensity(Emission::HH) + p.intensity(Emission::VH)) + 0.5 * imp.b2_sq() * c2d * c2d
        }
        Polarization::V => {
            0.5 * imp.b1_sq * (p.intensity(Emission::HV) + p.intensity(Emission::VV)) + 0.5 * imp.b2_sq() * s2d * s2d
        }
    }
}

/// Probability of detecting the d-photon with polarization `s.pol`.
pub fn detection_probability(p: &StateParams, config: Configuration, s: &Settings, imp: &ImperfectionModel) -> f64 {
    let cc = cross_coherence(config, p);
    let terms = interference_terms(p, &cc, s.theta, s.delta, s.pol, imp);
    background(p, s.delta, s.pol, imp)
        + terms.iter().map(|&(amp, ph)| amp * (s.phi - s.pump_phase + ph).sin()).sum::<f64>()
}

/// The equal-weight, lossless form with its literal ¼ and ½ prefactors.
pub fn ideal_detection_probability(p: &StateParams, config: Configuration, s: &Settings) -> f64 {
    let cc = cross_coherence(config, p);
    let (s2t, c2t) = (2.0 * s.theta).sin_cos();
    let (s2d, c2d) = (2.0 * s.delta).sin_cos();
    let sq = |e: Emission| p.intensity(e).sqrt();
    let fringe = |e: Emission| (s.phi + cc.phi(e) - s.pump_phase).sin();
    match s.pol {
        Polarization::H => {
            0.25 * (p.intensity(Emission::HH) + p.intensity(Emission::VH))
                + 0.25 * c2d * c2d
                + 0.5
                    * c2d
                    * (sq(Emission::HH) * cc.j(Emission::HH) * c2t * fringe(Emission::HH)
                        + sq(Emission::VH) * cc.j(Emission::VH) * s2t * fringe(Emission::VH))
        }
        Polarization::V => {
            0.25 * (p.intensity(Emission::HV) + p.intensity(Emission::VV))
                + 0.25 * s2d * s2d
                + 0.5
                    * s2d
                    * (sq(Emission::HV) * cc.j(Emission::HV) * c2t * fringe(Emission::HV)
                        + sq(Emission::VV) * cc.j(Emission::VV) * s2t * fringe(Emission::VV))
        }
    }
}

/// Offset, amplitude and phase of a single-sinusoid fringe.
///
/// Only settings where one of the two interference terms vanishes (below
/// `Tolerances::zero`) are accepted; the four canonical settings always
/// qualify. The amplitude is returned nonnegative, any sign going into the
/// phase as +π.
pub fn fringe_coefficients(
    p: &StateParams,
    config: Configuration,
    theta: f64,
    delta: f64,
    pol: Polarization,
    imp: &ImperfectionModel,
) -> Result<FringeCoefficients> {
    let tol = Tolerances::default();
    let cc = cross_coherence(config, p);
    let terms = interference_terms(p, &cc, theta, delta, pol, imp);
    if terms.iter().all(|&(amp, _)| amp.abs() > tol.zero) {
        return Err(Error::SumOfSinusoids { theta, delta });
    }
    // Phasor sum keeps the residual term exactly.
    let phasor: Complex64 = terms.iter().map(|&(amp, ph)| Complex64::from_polar(amp, ph)).sum();
    let dominant = if terms[0].0.abs() >= terms[1].0.abs() { terms[0] } else { terms[1] };
    let (amplitude, phase_offset) = if phasor.norm() > 0.0 {
        (phasor.norm(), phasor.arg())
    } else {
        (0.0, if dominant.0 < 0.0 { wrap_phase(dominant.1 + std::f64::consts::PI) } else { dominant.1 })
    };
    Ok(FringeCoefficients { offset: background(p, delta, pol, imp), amplitude, phase_offset: wrap_phase(phase_offset) })
}

/// Fringe visibility `(max − min)/(max + min)` at a single-sinusoid setting.
pub fn visibility_at(
    p: &StateParams,
    config: Configuration,
    theta: f64,
    delta: f64,
    pol: Polarization,
    imp: &ImperfectionModel,
) -> Result<f64> {
    let fc = fringe_coefficients(p, config, theta, delta, pol, imp)?;
    Ok(if fc.offset > 0.0 { fc.amplitude / fc.offset } else { 0.0 })
}
