//! JSON state formats, named presets and the on-disk measurement layout.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::fringes::FringeRecord;
use crate::interferometer::{canonical_setting, Configuration, ImperfectionModel};
use crate::qstate::{
    from_params, generalized_bell, random_state, to_params, DensityMatrix, Emission, StateParams, PAIRS,
};
use crate::reconstruct::{ConfigData, ConfigFringes, MeasurementSet};

pub const BASIS: [&str; 4] = ["HH", "HV", "VH", "VV"];
pub const MANIFEST_NAME: &str = "measurements.json";

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct C {
    re: f64,
    im: f64,
}

#[derive(Serialize, Deserialize)]
struct MatrixForm {
    basis: Vec<String>,
    matrix: Vec<Vec<C>>,
}

#[derive(Serialize, Deserialize, Default)]
struct ParamForm {
    #[serde(rename = "I")]
    intensities: BTreeMap<String, f64>,
    #[serde(rename = "J", default)]
    indistinguishabilities: BTreeMap<String, f64>,
    #[serde(default)]
    phi: BTreeMap<String, f64>,
}

/// Either JSON state form.
#[derive(Deserialize)]
#[serde(untagged)]
enum AnyForm {
    Matrix(MatrixForm),
    Params(ParamForm),
}

fn matrix_form(m: &DensityMatrix) -> MatrixForm {
    MatrixForm {
        basis: BASIS.iter().map(|s| s.to_string()).collect(),
        matrix: Emission::ALL
            .iter()
            .map(|&r| {
                Emission::ALL
                    .iter()
                    .map(|&c| {
                        let z = m.entry(r, c);
                        C { re: z.re, im: z.im }
                    })
                    .collect()
            })
            .collect(),
    }
}

fn matrix_from_form(f: &MatrixForm) -> Result<DensityMatrix> {
    if f.basis.len() != 4 || f.matrix.len() != 4 || f.matrix.iter().any(|r| r.len() != 4) {
        return Err(Error::InvalidState("matrix form needs a 4-entry basis and a 4×4 matrix".into()));
    }
    // Allow any ordering of the basis labels.
    let mut perm = [0usize; 4];
    let mut seen = [false; 4];
    for (k, label) in f.basis.iter().enumerate() {
        let e: Emission = label.parse()?;
        if seen[e.index()] {
            return Err(Error::InvalidState(format!("basis label {label} repeated")));
        }
        seen[e.index()] = true;
        perm[e.index()] = k;
    }
    let mut rows = [[Complex64::new(0.0, 0.0); 4]; 4];
    for r in 0..4 {
        for c in 0..4 {
            let z = f.matrix[perm[r]][perm[c]];
            rows[r][c] = Complex64::new(z.re, z.im);
        }
    }
    Ok(DensityMatrix::from_rows(rows))
}

fn param_form(p: &StateParams) -> ParamForm {
    let mut f = ParamForm::default();
    for e in Emission::ALL {
        f.intensities.insert(e.to_string(), p.intensity(e));
    }
    for &(a, b) in PAIRS.iter() {
        let key = format!("{a},{b}");
        f.indistinguishabilities.insert(key.clone(), p.indistinguishability(a, b));
        f.phi.insert(key, p.phase(a, b));
    }
    f
}

fn parse_pair(key: &str) -> Result<(Emission, Emission)> {
    let (a, b) = key
        .split_once(',')
        .ok_or_else(|| Error::ParameterDomain(format!("pair key {key:?} is not of the form \"HH,VV\"")))?;
    let (a, b): (Emission, Emission) = (a.parse()?, b.parse()?);
    if a == b {
        return Err(Error::ParameterDomain(format!("pair key {key:?} repeats a label")));
    }
    Ok((a, b))
}

fn params_from_form(f: &ParamForm) -> Result<StateParams> {
    let mut intensities = [0.0; 4];
    for (k, &v) in &f.intensities {
        let e: Emission = k.parse()?;
        intensities[e.index()] = v;
    }
    let mut p = StateParams::incoherent(intensities);
    for (key, &j) in &f.indistinguishabilities {
        let (a, b) = parse_pair(key)?;
        // Phase may be keyed in either orientation.
        let phi = f.phi.get(key).copied().or_else(|| f.phi.get(&format!("{b},{a}")).map(|x| -x)).unwrap_or(0.0);
        p.set_coherence(a, b, j, phi);
    }
    for key in f.phi.keys() {
        let (a, b) = parse_pair(key)?;
        if !f.indistinguishabilities.contains_key(key) && !f.indistinguishabilities.contains_key(&format!("{b},{a}")) {
            return Err(Error::ParameterDomain(format!("phase given for {key} without a J value")));
        }
    }
    p.check_domain(&Default::default())?;
    Ok(p)
}

impl Serialize for DensityMatrix {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        matrix_form(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for DensityMatrix {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = MatrixForm::deserialize(d)?;
        matrix_from_form(&f).map_err(D::Error::custom)
    }
}

impl Serialize for StateParams {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        param_form(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let f = ParamForm::deserialize(d)?;
        params_from_form(&f).map_err(D::Error::custom)
    }
}

/// Parse a state in either JSON form. Matrix input must be a valid state.
pub fn state_from_json(text: &str) -> Result<StateParams> {
    match serde_json::from_str::<AnyForm>(text)? {
        AnyForm::Matrix(f) => to_params(&matrix_from_form(&f)?),
        AnyForm::Params(f) => params_from_form(&f),
    }
}

pub fn read_state(path: &Path) -> Result<StateParams> {
    state_from_json(&std::fs::read_to_string(path)?)
}

/// Parse either JSON form into a matrix without requiring a valid state.
pub fn matrix_from_json(text: &str) -> Result<DensityMatrix> {
    match serde_json::from_str::<AnyForm>(text)? {
        AnyForm::Matrix(f) => matrix_from_form(&f),
        AnyForm::Params(f) => from_params(&params_from_form(&f)?),
    }
}

pub fn matrix_to_json(m: &DensityMatrix) -> String {
    serde_json::to_string_pretty(m).expect("matrix serializes")
}

pub fn params_to_json(p: &StateParams) -> String {
    serde_json::to_string_pretty(p).expect("parameters serialize")
}

/// Built-in states:
///
/// - `worked`: `I_HH = 0.4`, `I_VV = 0.6`, `J(HH,VV) = √0.18/√0.24`, `φ(HH,VV) = −3π/4`
/// - `bell`: `(|HH> + |VV>)/√2`
/// - `mixed-max`: `I/4`
/// - `werner:<p>`: `p |Φ+><Φ+| + (1 − p) I/4`, `p ∈ [0, 1]`
/// - `random:<seed>`: [`random_state`]
pub fn preset(name: &str) -> Result<StateParams> {
    let name = name.trim();
    let arg = |prefix: &str| {
        name.strip_prefix(prefix).map(|rest| rest.trim_start_matches([':', '(']).trim_end_matches(')').to_string())
    };
    match name {
        "worked" => generalized_bell(0.4, 0.18f64.sqrt() / 0.24f64.sqrt(), -3.0 * PI / 4.0),
        "bell" => generalized_bell(0.5, 1.0, 0.0),
        "mixed-max" => Ok(StateParams::incoherent([0.25; 4])),
        _ => {
            if let Some(p) = arg("werner") {
                let p: f64 = p.parse().map_err(|_| Error::ParameterDomain(format!("bad Werner weight {p:?}")))?;
                werner(p)
            } else if let Some(s) = arg("random") {
                let s: u64 = s.parse().map_err(|_| Error::ParameterDomain(format!("bad seed {s:?}")))?;
                Ok(random_state(s))
            } else {
                Err(Error::ParameterDomain(format!(
                    "unknown preset {name:?}; expected worked, bell, mixed-max, werner:<p> or random:<seed>"
                )))
            }
        }
    }
}

pub fn werner(p: f64) -> Result<StateParams> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::ParameterDomain(format!("Werner weight {p} outside [0, 1]")));
    }
    let corner = 0.5 * p + 0.25 * (1.0 - p);
    let side = 0.25 * (1.0 - p);
    let j = if corner > 0.0 { 0.5 * p / corner } else { 0.0 };
    Ok(StateParams::incoherent([corner, side, side, corner]).with_coherence(Emission::HH, Emission::VV, j, 0.0))
}

// ---------------------------------------------------------------------------
// Measurement directories

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
enum ConfigEntry {
    Present { fringes: BTreeMap<Emission, String> },
    Absent { peak_visibility: f64, selector_visibility: f64 },
}

/// How a measurement set was produced; informational only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationMeta {
    pub seed: u64,
    pub grid_size: usize,
    pub counts_per_point: Option<u64>,
    pub pump_phases: [f64; 4],
    pub imperfections: ImperfectionModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    basis: Vec<String>,
    configs: BTreeMap<Configuration, ConfigEntry>,
    p0_h: String,
    p0_v: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    simulation: Option<SimulationMeta>,
}

fn fringe_file(c: Configuration, e: Emission) -> String {
    format!("{c}_{e}.csv")
}

/// Write one CSV per fringe plus a JSON manifest into `dir`; returns the
/// manifest path.
pub fn write_measurement_set(m: &MeasurementSet, dir: &Path, meta: Option<&SimulationMeta>) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let mut configs = BTreeMap::new();
    for c in Configuration::ALL {
        let entry = match m.config(c) {
            ConfigData::Present(fr) => {
                let mut files = BTreeMap::new();
                for e in Emission::ALL {
                    let name = fringe_file(c, e);
                    fr.get(e).write_csv(&dir.join(&name))?;
                    files.insert(e, name);
                }
                ConfigEntry::Present { fringes: files }
            }
            ConfigData::Absent { peak_visibility, selector_visibility } => {
                ConfigEntry::Absent { peak_visibility: *peak_visibility, selector_visibility: *selector_visibility }
            }
        };
        configs.insert(c, entry);
    }
    let (p0_h, p0_v) = ("P0_H.csv".to_string(), "P0_V.csv".to_string());
    m.p0_h.write_csv(&dir.join(&p0_h))?;
    m.p0_v.write_csv(&dir.join(&p0_v))?;
    let manifest = Manifest {
        basis: BASIS.iter().map(|s| s.to_string()).collect(),
        configs,
        p0_h,
        p0_v,
        simulation: meta.cloned(),
    };
    let path = dir.join(MANIFEST_NAME);
    std::fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

fn check_label(f: &FringeRecord, path: &Path, config: Configuration, e: Emission) -> Result<()> {
    let (theta, delta, pol) = canonical_setting(e);
    let l = &f.label;
    if l.config != config || (l.theta - theta).abs() > 1e-12 || (l.delta - delta).abs() > 1e-12 || l.pol != pol {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 2,
            message: format!("expected configuration {config} at the {e} setting"),
        });
    }
    Ok(())
}

/// Load a measurement set from its manifest (a file, or a directory
/// containing `measurements.json`).
pub fn read_measurement_set(path: &Path) -> Result<(MeasurementSet, Option<SimulationMeta>)> {
    let manifest_path = if path.is_dir() { path.join(MANIFEST_NAME) } else { path.to_path_buf() };
    let dir = manifest_path.parent().map(Path::to_path_buf).unwrap_or_default();
    let text = std::fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: manifest_path.display().to_string(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let mut configs = Vec::with_capacity(4);
    for c in Configuration::ALL {
        let entry = manifest.configs.get(&c).ok_or_else(|| Error::Parse {
            path: manifest_path.display().to_string(),
            line: 0,
            message: format!("configuration {c} missing from manifest"),
        })?;
        configs.push(match entry {
            ConfigEntry::Absent { peak_visibility, selector_visibility } => {
                ConfigData::Absent { peak_visibility: *peak_visibility, selector_visibility: *selector_visibility }
            }
            ConfigEntry::Present { fringes } => {
                let mut records = Vec::with_capacity(4);
                for e in Emission::ALL {
                    let name = fringes.get(&e).ok_or_else(|| Error::Parse {
                        path: manifest_path.display().to_string(),
                        line: 0,
                        message: format!("configuration {c} lacks the {e} fringe"),
                    })?;
                    let p = dir.join(name);
                    let f = FringeRecord::read_csv(&p)?;
                    check_label(&f, &p, c, e)?;
                    records.push(f);
                }
                ConfigData::Present(ConfigFringes { fringes: records.try_into().expect("four fringes") })
            }
        });
    }
    let m = MeasurementSet {
        configs: configs.try_into().expect("four configurations"),
        p0_h: FringeRecord::read_csv(&dir.join(&manifest.p0_h))?,
        p0_v: FringeRecord::read_csv(&dir.join(&manifest.p0_v))?,
    };
    Ok((m, manifest.simulation))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn param_form_round_trip() {
        let p = random_state(4);
        let back = state_from_json(&params_to_json(&p)).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn matrix_form_round_trip() {
        let p = preset("worked").unwrap();
        let m = from_params(&p).unwrap();
        let text = matrix_to_json(&m);
        let back: DensityMatrix = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        let q = state_from_json(&text).unwrap();
        assert!(
            (q.indistinguishability(Emission::HH, Emission::VV) - p.indistinguishability(Emission::HH, Emission::VV))
                .abs()
                < 1e-12
        );
    }

    #[test]
    fn reversed_phase_key_negates() {
        let text = r#"{"I": {"HH": 0.5, "VV": 0.5}, "J": {"VV,HH": 1.0}, "phi": {"VV,HH": 0.7}}"#;
        let p = state_from_json(text).unwrap();
        assert!((p.phase(Emission::HH, Emission::VV) + 0.7).abs() < 1e-15);
        let text = r#"{"I": {"HH": 0.5, "VV": 0.5}, "J": {"HH,VV": 1.0}, "phi": {"VV,HH": 0.7}}"#;
        let p = state_from_json(text).unwrap();
        assert!((p.phase(Emission::HH, Emission::VV) + 0.7).abs() < 1e-15);
    }

    #[test]
    fn permuted_basis_accepted() {
        let text = r#"{"basis": ["VV","HH","HV","VH"], "matrix": [
            [{"re":0.6,"im":0}, {"re":0,"im":0}, {"re":0,"im":0}, {"re":0,"im":0}],
            [{"re":0,"im":0}, {"re":0.4,"im":0}, {"re":0,"im":0}, {"re":0,"im":0}],
            [{"re":0,"im":0}, {"re":0,"im":0}, {"re":0,"im":0}, {"re":0,"im":0}],
            [{"re":0,"im":0}, {"re":0,"im":0}, {"re":0,"im":0}, {"re":0,"im":0}]]}"#;
        let p = state_from_json(text).unwrap();
        assert_eq!(p.intensities(), [0.4, 0.0, 0.0, 0.6]);
    }

    #[test]
    fn invalid_inputs() {
        assert!(state_from_json(r#"{"I": {"HH": 0.7}}"#).is_err());
        assert!(state_from_json(r#"{"I": {"HH": 1.0}, "phi": {"HH,VV": 1.0}}"#).is_err());
        assert!(state_from_json(r#"{"I": {"XX": 1.0}}"#).is_err());
        assert!(preset("nonsense").is_err());
        assert!(preset("werner:1.5").is_err());
    }

    #[test]
    fn presets() {
        let bell = from_params(&preset("bell").unwrap()).unwrap();
        assert!((bell.eigenvalues()[3] - 1.0).abs() < 1e-12);
        let w = from_params(&preset("werner:0.5").unwrap()).unwrap();
        assert!((w.entry(Emission::HH, Emission::VV).re - 0.25).abs() < 1e-15);
        assert!((w.entry(Emission::HH, Emission::HH).re - 0.375).abs() < 1e-15);
        assert_eq!(preset("werner(0.5)").unwrap(), preset("werner:0.5").unwrap());
        let w1 = from_params(&preset("werner:1").unwrap()).unwrap();
        assert!(w1.max_abs_diff(&bell) < 1e-15);
        assert_eq!(preset("random:7").unwrap(), random_state(7));
    }
}
