//! Independent forward model used to check the closed forms.
//!
//! Builds the joint two-source density operator over explicit two-photon
//! kets, substitutes the path-identity relation for the Q2 undetected mode
//! (with loss into a separate lost-photon mode), traces out the undetected
//! photon and evaluates `Tr{ρ_d E⁻ E⁺}`. Nothing here calls into the
//! closed-form probabilities.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::interferometer::{cross_coherence, Configuration, ImperfectionModel, Polarization};
use crate::qstate::{from_params, Emission, StateParams};

/// Mode of the undetected photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UMode {
    H1,
    V1,
    H2,
    /// H-polarized photon removed by the loss element.
    Lost,
}

/// Mode of the detected photon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DMode {
    H1,
    V1,
    H2,
}

pub const D_MODES: [DMode; 3] = [DMode::H1, DMode::V1, DMode::H2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ket {
    pub u: UMode,
    pub d: DMode,
}

fn q1_ket(e: Emission) -> Ket {
    let u = if e.undetected_is_v() { UMode::V1 } else { UMode::H1 };
    let d = if e.detected_is_v() { DMode::V1 } else { DMode::H1 };
    Ket { u, d }
}

/// A two-photon density operator with its basis carried alongside.
#[derive(Debug, Clone)]
pub struct JointState {
    pub basis: Vec<Ket>,
    pub operator: DMatrix<Complex64>,
}

/// Detected-photon state over (H_d1, V_d1, H_d2).
#[derive(Debug, Clone)]
pub struct ReducedDState {
    pub operator: DMatrix<Complex64>,
}

impl JointState {
    pub fn trace(&self) -> Complex64 {
        self.operator.trace()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (&self.operator - self.operator.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }
}

impl ReducedDState {
    pub fn trace(&self) -> Complex64 {
        self.operator.trace()
    }

    pub fn entry(&self, row: DMode, col: DMode) -> Complex64 {
        self.operator[(d_index(row), d_index(col))]
    }
}

fn d_index(d: DMode) -> usize {
    match d {
        DMode::H1 => 0,
        DMode::V1 => 1,
        DMode::H2 => 2,
    }
}

/// Joint state of both sources before the undetected beams are aligned.
/// Basis: the four Q1 kets in (HH, HV, VH, VV) order, then `|H_u2 H_d2>`.
pub fn joint_state(p: &StateParams, config: Configuration, pump_phase: f64, imp: &ImperfectionModel) -> JointState {
    let mut basis: Vec<Ket> = Emission::ALL.iter().map(|&e| q1_ket(e)).collect();
    basis.push(Ket { u: UMode::H2, d: DMode::H2 });

    let rho = from_params(p).expect("state parameters must be valid");
    let b1 = Complex64::from_polar(imp.b1_sq.sqrt(), imp.arg_b);
    let b2 = Complex64::new(imp.b2_sq().sqrt(), 0.0);
    let cc = cross_coherence(config, p);

    let mut op = DMatrix::<Complex64>::zeros(5, 5);
    for r in 0..4 {
        for c in 0..4 {
            op[(r, c)] = rho.matrix()[(r, c)] * imp.b1_sq;
        }
    }
    op[(4, 4)] = Complex64::new(imp.b2_sq(), 0.0);
    for e in Emission::ALL {
        let amp = p.intensity(e).sqrt() * cc.j(e);
        let cross = b1 * b2.conj() * Complex64::from_polar(amp, cc.phi(e) - pump_phase);
        op[(e.index(), 4)] = cross;
        op[(4, e.index())] = cross.conj();
    }
    JointState { basis, operator: op }
}

/// Replace `|H_u2>` by `e^{-iφ_u}[T_H(cos2θ |H_u1> + sin2θ |V_u1>) + R_H |H_0>]`.
///
/// The output basis is the product of undetected modes (H_u1, V_u1, H_0)
/// with detected modes (H_d1, V_d1, H_d2).
pub fn apply_path_identity(j: &JointState, theta: f64, phi_u: f64, imp: &ImperfectionModel) -> JointState {
    let u_out = [UMode::H1, UMode::V1, UMode::Lost];
    let out_basis: Vec<Ket> = u_out.iter().flat_map(|&u| D_MODES.iter().map(move |&d| Ket { u, d })).collect();
    let position = |k: Ket| out_basis.iter().position(|&b| b == k).unwrap();

    let (s2t, c2t) = (2.0 * theta).sin_cos();
    let phase = Complex64::from_polar(1.0, -phi_u);
    // Isometry from the input basis to the output basis, column by column.
    let mut map = DMatrix::<Complex64>::zeros(out_basis.len(), j.basis.len());
    for (col, ket) in j.basis.iter().enumerate() {
        match ket.u {
            UMode::H2 => {
                let images = [(UMode::H1, imp.t_h * c2t), (UMode::V1, imp.t_h * s2t), (UMode::Lost, imp.r_h())];
                for (u, amp) in images {
                    map[(position(Ket { u, d: ket.d }), col)] += phase * amp;
                }
            }
            _ => map[(position(*ket), col)] = Complex64::new(1.0, 0.0),
        }
    }
    JointState { basis: out_basis, operator: &map * &j.operator * map.adjoint() }
}

/// Partial trace over the undetected photon.
pub fn reduce_d(j: &JointState) -> ReducedDState {
    let mut out = DMatrix::<Complex64>::zeros(3, 3);
    for (r, kr) in j.basis.iter().enumerate() {
        for (c, kc) in j.basis.iter().enumerate() {
            if kr.u == kc.u {
                out[(d_index(kr.d), d_index(kc.d))] += j.operator[(r, c)];
            }
        }
    }
    ReducedDState { operator: out }
}

/// `Tr{ρ_d E⁻ E⁺}` for the detector field behind the beamsplitter.
///
/// `E⁺ = [a_d1(μ) + i e^{iφ_d}(HWP(δ) a_d2)_μ] / √2`; Q2 never emits a
/// V-polarized detected photon, so only `a_d2(H)` acts on this basis.
pub fn oracle_probability(r: &ReducedDState, pol: Polarization, delta: f64, phase_d: f64) -> f64 {
    let (s2d, c2d) = (2.0 * delta).sin_cos();
    let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
    let arm = Complex64::new(0.0, 1.0) * Complex64::from_polar(inv_sqrt2, phase_d);
    // Amplitudes <vac|E⁺|k> for k in (H_d1, V_d1, H_d2).
    let amps = match pol {
        Polarization::H => [Complex64::new(inv_sqrt2, 0.0), Complex64::new(0.0, 0.0), arm * c2d],
        Polarization::V => [Complex64::new(0.0, 0.0), Complex64::new(inv_sqrt2, 0.0), arm * s2d],
    };
    let e = DVector::from_column_slice(&amps);
    // Σ_kl ρ_kl e_k conj(e_l)
    let value = (e.transpose() * &r.operator * e.map(|z| z.conj()))[(0, 0)];
    value.re
}

/// Full oracle pipeline for one setting. The tunable phase seen by the
/// closed form is `imp.arg_b + phi_u − phi_d`.
#[allow(clippy::too_many_arguments)]
pub fn oracle_detection_probability(
    p: &StateParams,
    config: Configuration,
    pump_phase: f64,
    imp: &ImperfectionModel,
    theta: f64,
    delta: f64,
    pol: Polarization,
    phi_u: f64,
    phi_d: f64,
) -> f64 {
    let joint = joint_state(p, config, pump_phase, imp);
    let aligned = apply_path_identity(&joint, theta, phi_u, imp);
    oracle_probability(&reduce_d(&aligned), pol, delta, phi_d)
}
