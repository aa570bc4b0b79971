//! Two-qubit states in intensity / indistinguishability / phase form and as
//! 4×4 density matrices over the basis (HH, HV, VH, VV).
//!
//! The first letter of an [`Emission`] is the polarization of the undetected
//! photon, the second that of the detected photon. The off-diagonal entry at
//! row `a`, column `b` is `sqrt(I_a I_b) * J(a,b) * exp(i phi(a,b))`, so
//! `phi(a,b)` is the argument of that entry and `phi(b,a) = -phi(a,b)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix4, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the four basic two-photon emissions `|mu_u nu_d>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Emission {
    HH,
    HV,
    VH,
    VV,
}

impl Emission {
    pub const ALL: [Emission; 4] = [Emission::HH, Emission::HV, Emission::VH, Emission::VV];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Emission {
        Self::ALL[i]
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Emission::HH => "HH",
            Emission::HV => "HV",
            Emission::VH => "VH",
            Emission::VV => "VV",
        }
    }

    /// True when the undetected photon is V-polarized.
    pub fn undetected_is_v(self) -> bool {
        matches!(self, Emission::VH | Emission::VV)
    }

    /// True when the detected photon is V-polarized.
    pub fn detected_is_v(self) -> bool {
        matches!(self, Emission::HV | Emission::VV)
    }
}

impl fmt::Display for Emission {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Emission {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "HH" => Ok(Emission::HH),
            "HV" => Ok(Emission::HV),
            "VH" => Ok(Emission::VH),
            "VV" => Ok(Emission::VV),
            other => Err(Error::ParameterDomain(format!("unknown emission label {other:?}"))),
        }
    }
}

/// The six unordered emission pairs, in row-major upper-triangle order.
pub const PAIRS: [(Emission, Emission); 6] = [
    (Emission::HH, Emission::HV),
    (Emission::HH, Emission::VH),
    (Emission::HH, Emission::VV),
    (Emission::HV, Emission::VH),
    (Emission::HV, Emission::VV),
    (Emission::VH, Emission::VV),
];

/// Index into [`PAIRS`] and whether `(a, b)` is the stored orientation.
/// Panics on `a == b`.
pub fn pair_index(a: Emission, b: Emission) -> (usize, bool) {
    assert_ne!(a, b, "pair_index needs two distinct emissions");
    let (lo, hi, forward) = if a < b { (a, b, true) } else { (b, a, false) };
    let idx = PAIRS.iter().position(|&p| p == (lo, hi)).unwrap();
    (idx, forward)
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_phase(x: f64) -> f64 {
    let y = x.rem_euclid(2.0 * PI);
    if y > PI {
        y - 2.0 * PI
    } else {
        y
    }
}

/// Numerical tolerances used by validation and parameter extraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub norm: f64,
    pub herm: f64,
    pub psd: f64,
    pub zero: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { norm: 1e-9, herm: 1e-9, psd: 1e-9, zero: 1e-9 }
    }
}

/// The fifteen-parameter description of a two-qubit state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateParams {
    intensities: [f64; 4],
    indistinguishabilities: [f64; 6],
    /// `phi(a, b)` for the orientation stored in [`PAIRS`].
    phases: [f64; 6],
}

impl StateParams {
    /// A fully incoherent state with the given emission weights.
    pub fn incoherent(intensities: [f64; 4]) -> Self {
        Self { intensities, indistinguishabilities: [0.0; 6], phases: [0.0; 6] }
    }

    /// Set `J(a,b)` and `phi(a,b)`; `phi(b,a)` follows by antisymmetry.
    pub fn with_coherence(mut self, a: Emission, b: Emission, j: f64, phi: f64) -> Self {
        self.set_coherence(a, b, j, phi);
        self
    }

    pub fn set_coherence(&mut self, a: Emission, b: Emission, j: f64, phi: f64) {
        let (idx, forward) = pair_index(a, b);
        self.indistinguishabilities[idx] = j;
        self.phases[idx] = wrap_phase(if forward { phi } else { -phi });
    }

    pub fn intensity(&self, e: Emission) -> f64 {
        self.intensities[e.index()]
    }

    pub fn intensities(&self) -> [f64; 4] {
        self.intensities
    }

    /// `J(a,b)`; equals 1 on the diagonal.
    pub fn indistinguishability(&self, a: Emission, b: Emission) -> f64 {
        if a == b {
            return 1.0;
        }
        self.indistinguishabilities[pair_index(a, b).0]
    }

    /// `phi(a,b)`, the argument of entry (a, b); zero on the diagonal.
    pub fn phase(&self, a: Emission, b: Emission) -> f64 {
        if a == b {
            return 0.0;
        }
        let (idx, forward) = pair_index(a, b);
        if forward {
            self.phases[idx]
        } else {
            wrap_phase(-self.phases[idx])
        }
    }

    /// `phi(a,b)` when it carries meaning, i.e. the pair has nonzero coherence.
    pub fn defined_phase(&self, a: Emission, b: Emission) -> Option<f64> {
        (a == b || self.indistinguishability(a, b) > 0.0).then(|| self.phase(a, b))
    }

    /// Field-level checks: I and J within [0, 1] and unit total intensity.
    pub fn check_domain(&self, tol: &Tolerances) -> Result<()> {
        for e in Emission::ALL {
            let v = self.intensity(e);
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::ParameterDomain(format!("I_{e} = {v} outside [0, 1]")));
            }
        }
        for (k, &(a, b)) in PAIRS.iter().enumerate() {
            let j = self.indistinguishabilities[k];
            if !(0.0..=1.0).contains(&j) || !j.is_finite() {
                return Err(Error::ParameterDomain(format!("J({a},{b}) = {j} outside [0, 1]")));
            }
            if !self.phases[k].is_finite() {
                return Err(Error::ParameterDomain(format!("phi({a},{b}) is not finite")));
            }
        }
        let total: f64 = self.intensities.iter().sum();
        if (total - 1.0).abs() > tol.norm {
            return Err(Error::ParameterDomain(format!("sum of intensities is {total}, expected 1")));
        }
        Ok(())
    }
}

/// A 4×4 complex matrix in the (HH, HV, VH, VV) basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix(Matrix4<Complex64>);

impl DensityMatrix {
    pub fn from_matrix(m: Matrix4<Complex64>) -> Self {
        Self(m)
    }

    pub fn from_rows(rows: [[Complex64; 4]; 4]) -> Self {
        Self(Matrix4::from_fn(|r, c| rows[r][c]))
    }

    pub fn zeros() -> Self {
        Self(Matrix4::zeros())
    }

    pub fn maximally_mixed() -> Self {
        Self(Matrix4::identity() * Complex64::new(0.25, 0.0))
    }

    /// `|e><e|` for one basis emission.
    pub fn projector(e: Emission) -> Self {
        let mut m = Matrix4::zeros();
        m[(e.index(), e.index())] = Complex64::new(1.0, 0.0);
        Self(m)
    }

    pub fn matrix(&self) -> &Matrix4<Complex64> {
        &self.0
    }

    pub fn entry(&self, row: Emission, col: Emission) -> Complex64 {
        self.0[(row.index(), col.index())]
    }

    pub fn trace(&self) -> Complex64 {
        self.0.trace()
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> [f64; 4] {
        let mut ev: Vec<f64> = hermitian_eigen(&hermitian_part(&self.0)).0.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        [ev[0], ev[1], ev[2], ev[3]]
    }

    /// Largest absolute entrywise difference.
    pub fn max_abs_diff(&self, other: &DensityMatrix) -> f64 {
        (self.0 - other.0).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Clip negative eigenvalues of the Hermitian part and renormalize the trace.
    pub fn project_psd(&self) -> DensityMatrix {
        let (vals, vecs) = hermitian_eigen(&hermitian_part(&self.0));
        let clipped: Vec<f64> = vals.iter().map(|&v| v.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        let mut out = Matrix4::zeros();
        for (k, &v) in clipped.iter().enumerate() {
            let col = vecs.column(k);
            out += col * col.adjoint() * Complex64::new(v / total, 0.0);
        }
        DensityMatrix(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateDiagnostics {
    pub hermiticity_defect: f64,
    pub trace_defect: f64,
    pub min_eigenvalue: f64,
    pub is_valid: bool,
}

fn hermitian_part(m: &Matrix4<Complex64>) -> Matrix4<Complex64> {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

fn hermitian_eigen(m: &Matrix4<Complex64>) -> (nalgebra::Vector4<f64>, Matrix4<Complex64>) {
    let eig = SymmetricEigen::new(*m);
    (eig.eigenvalues, eig.eigenvectors)
}

/// Build the density matrix of a parameter set.
pub fn from_params(p: &StateParams) -> Result<DensityMatrix> {
    from_params_with(p, &Tolerances::default())
}

pub fn from_params_with(p: &StateParams, tol: &Tolerances) -> Result<DensityMatrix> {
    p.check_domain(tol)?;
    let mut m = Matrix4::zeros();
    for a in Emission::ALL {
        m[(a.index(), a.index())] = Complex64::new(p.intensity(a), 0.0);
    }
    for &(a, b) in PAIRS.iter() {
        let modulus = (p.intensity(a) * p.intensity(b)).sqrt() * p.indistinguishability(a, b);
        let z = Complex64::from_polar(modulus, p.phase(a, b));
        m[(a.index(), b.index())] = z;
        m[(b.index(), a.index())] = z.conj();
    }
    Ok(DensityMatrix(m))
}

/// Read the parameters back off a valid density matrix.
///
/// Pairs whose entry modulus or either diagonal is below `tol.zero` get
/// `J = 0` and `phi = 0`; [`StateParams::defined_phase`] then reports `None`.
pub fn to_params(m: &DensityMatrix) -> Result<StateParams> {
    to_params_with(m, &Tolerances::default())
}

pub fn to_params_with(m: &DensityMatrix, tol: &Tolerances) -> Result<StateParams> {
    let diag = validate_with(m, tol);
    if !diag.is_valid {
        return Err(Error::InvalidState(format!(
            "hermiticity defect {:.3e}, trace defect {:.3e}, min eigenvalue {:.3e}",
            diag.hermiticity_defect, diag.trace_defect, diag.min_eigenvalue
        )));
    }
    let mut intensities = [0.0; 4];
    for e in Emission::ALL {
        intensities[e.index()] = m.entry(e, e).re.clamp(0.0, 1.0);
    }
    let mut p = StateParams::incoherent(intensities);
    for &(a, b) in PAIRS.iter() {
        let z = m.entry(a, b);
        let (ia, ib) = (intensities[a.index()], intensities[b.index()]);
        if z.norm() <= tol.zero || ia <= tol.zero || ib <= tol.zero {
            continue;
        }
        let j = (z.norm() / (ia * ib).sqrt()).min(1.0);
        p.set_coherence(a, b, j, z.arg());
    }
    Ok(p)
}

pub fn validate(m: &DensityMatrix) -> StateDiagnostics {
    validate_with(m, &Tolerances::default())
}

pub fn validate_with(m: &DensityMatrix, tol: &Tolerances) -> StateDiagnostics {
    let a = m.matrix();
    let mut herm: f64 = 0.0;
    for r in 0..4 {
        for c in 0..4 {
            herm = herm.max((a[(r, c)] - a[(c, r)].conj()).norm());
        }
    }
    let tr = m.trace();
    let trace_defect = (tr - Complex64::new(1.0, 0.0)).norm();
    let min_eigenvalue = m.eigenvalues()[0];
    let finite = a.iter().all(|z| z.re.is_finite() && z.im.is_finite());
    StateDiagnostics {
        hermiticity_defect: herm,
        trace_defect,
        min_eigenvalue,
        is_valid: finite && herm <= tol.herm && trace_defect <= tol.norm && min_eigenvalue >= -tol.psd,
    }
}

/// Random valid state, deterministic in `seed`.
///
/// Mixes `k` random pure states (`k` uniform in 1..=4) with random weights.
/// A third of draws make one weight dominant (near-pure states) and a third
/// blend the result with the maximally mixed state, so the ensemble covers
/// rank-deficient, near-pure and well-conditioned full-rank states.
pub fn random_state(seed: u64) -> StateParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..=4usize);
    let mut weights: Vec<f64> = (0..k).map(|_| -rng.random::<f64>().max(1e-300).ln()).collect();
    let style = rng.random_range(0..3u8);
    if style == 1 && k > 1 {
        for w in weights.iter_mut().skip(1) {
            *w *= 1e-3;
        }
    }
    let total: f64 = weights.iter().sum();
    let mut m = Matrix4::<Complex64>::zeros();
    for w in weights {
        let mut v = nalgebra::Vector4::<Complex64>::from_fn(|_, _| {
            Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        });
        v /= Complex64::new(v.norm(), 0.0);
        m += v * v.adjoint() * Complex64::new(w / total, 0.0);
    }
    if style == 2 {
        let mix: f64 = rng.random();
        m = m * Complex64::new(1.0 - mix, 0.0) + Matrix4::identity() * Complex64::new(mix / 4.0, 0.0);
    }
    // Exact Hermitian symmetry and unit trace before parameter extraction.
    let m = hermitian_part(&m);
    let tr = m.trace().re;
    let m = m / Complex64::new(tr, 0.0);
    to_params(&DensityMatrix(m)).expect("random ensemble is a valid state")
}

/// `I_HH |HH><HH| + I_VV |VV><VV|` plus a single HH–VV coherence with
/// indistinguishability `j` and phase `phi(HH, VV) = phase`.
pub fn generalized_bell(i_hh: f64, j: f64, phase: f64) -> Result<StateParams> {
    if !(0.0..=1.0).contains(&i_hh) {
        return Err(Error::ParameterDomain(format!("I_HH = {i_hh} outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&j) {
        return Err(Error::ParameterDomain(format!("J = {j} outside [0, 1]")));
    }
    Ok(StateParams::incoherent([i_hh, 0.0, 0.0, 1.0 - i_hh]).with_coherence(Emission::HH, Emission::VV, j, phase))
}

/// Uhlmann fidelity `(Tr sqrt(sqrt(a) b sqrt(a)))^2`.
pub fn fidelity(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    require_valid(a, "first argument")?;
    require_valid(b, "second argument")?;
    let (vals, vecs) = hermitian_eigen(&hermitian_part(&a.0));
    let mut sqrt_a = Matrix4::<Complex64>::zeros();
    for (k, &v) in vals.iter().enumerate() {
        let col = vecs.column(k);
        sqrt_a += col * col.adjoint() * Complex64::new(v.max(0.0).sqrt(), 0.0);
    }
    let inner = hermitian_part(&(sqrt_a * b.0 * sqrt_a));
    let (mu, _) = hermitian_eigen(&inner);
    let root_trace: f64 = mu.iter().map(|&x| x.max(0.0).sqrt()).sum();
    Ok((root_trace * root_trace).clamp(0.0, 1.0))
}

/// Trace distance `½ Σ |eig(a − b)|`.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    require_valid(a, "first argument")?;
    require_valid(b, "second argument")?;
    let (vals, _) = hermitian_eigen(&hermitian_part(&(a.0 - b.0)));
    Ok(0.5 * vals.iter().map(|v| v.abs()).sum::<f64>())
}

fn require_valid(m: &DensityMatrix, what: &str) -> Result<()> {
    let d = validate(m);
    if d.is_valid {
        Ok(())
    } else {
        Err(Error::InvalidState(format!(
            "{what}: hermiticity defect {:.3e}, trace defect {:.3e}, min eigenvalue {:.3e}",
            d.hermiticity_defect, d.trace_defect, d.min_eigenvalue
        )))
    }
}
