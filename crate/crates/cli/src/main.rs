use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use pathtomo_core::graph::export_graph;
use pathtomo_core::io::{
    matrix_from_json, matrix_to_json, params_to_json, preset, read_measurement_set, read_state, write_measurement_set,
    SimulationMeta,
};
use pathtomo_core::qstate::{from_params, random_state, validate, DensityMatrix};
use pathtomo_core::reconstruct::{
    assemble_with, seeded_pump_phases, simulate_full, ReconstructOptions, ReconstructionReport, SimulationOptions,
};
use pathtomo_core::{Emission, ImperfectionModel, StateParams};

#[derive(Parser)]
#[command(name = "pathtomo", version, about = "Two-qubit tomography from single-photon fringes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the sixteen canonical fringes and both blocked-port levels.
    Simulate {
        #[command(flatten)]
        state: StateArgs,
        #[command(flatten)]
        sim: SimArgs,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reconstruct a density matrix from a measurement directory.
    Reconstruct {
        /// Measurement manifest, or the directory holding it.
        #[arg(long)]
        input: PathBuf,
        /// True state to score against.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        rec: RecArgs,
        /// Report file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Simulate, reconstruct and compare in one step.
    Roundtrip {
        #[command(flatten)]
        state: StateArgs,
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        rec: RecArgs,
        /// Instead of one state, sweep this many random states starting at
        /// `--seed` and summarize the fidelities.
        #[arg(long)]
        sweep: Option<u64>,
    },
    /// Graph notation of a state as DOT.
    ExportGraph {
        #[command(flatten)]
        state: StateArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print Hermiticity, trace and positivity diagnostics.
    Validate {
        #[command(flatten)]
        state: StateArgs,
    },
}

#[derive(Args)]
struct StateArgs {
    /// State JSON file, matrix or parameter form.
    #[arg(long, conflicts_with = "preset")]
    state: Option<PathBuf>,
    /// worked, bell, mixed-max, werner:<p> or random:<seed>.
    #[arg(long)]
    preset: Option<String>,
}

impl StateArgs {
    fn params(&self) -> Result<StateParams> {
        match (&self.state, &self.preset) {
            (Some(path), _) => read_state(path).with_context(|| format!("reading state {}", path.display())),
            (None, Some(name)) => Ok(preset(name)?),
            (None, None) => bail!("give --state <file> or --preset <name>"),
        }
    }
}

#[derive(Args)]
struct SimArgs {
    /// Seed for shot noise and seeded pump phases.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Phase points per fringe.
    #[arg(long, default_value_t = 64)]
    grid: usize,
    /// Counts per grid point; 0 gives exact probabilities.
    #[arg(long, default_value_t = 0)]
    counts: u64,
    /// Amplitude transmission of H-polarized undetected photons.
    #[arg(long, default_value_t = 1.0)]
    th: f64,
    /// Emission weight of the source under test.
    #[arg(long, default_value_t = 0.5)]
    b1sq: f64,
    /// Relative phase of the two emission amplitudes, radians.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    arg_b: f64,
    /// zero, seeded, or four comma-separated radians for A..D.
    #[arg(long, default_value = "seeded", allow_hyphen_values = true)]
    pump_phase_policy: String,
}

impl SimArgs {
    fn imperfections(&self) -> Result<ImperfectionModel> {
        Ok(ImperfectionModel::new(self.b1sq, self.arg_b, self.th)?)
    }

    fn pump_phases(&self, seed: u64) -> Result<[f64; 4]> {
        match self.pump_phase_policy.as_str() {
            "zero" => Ok([0.0; 4]),
            "seeded" => Ok(seeded_pump_phases(seed)),
            list => {
                let list = list.strip_prefix("list:").unwrap_or(list);
                let values: Vec<f64> = list
                    .split(',')
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .with_context(|| format!("bad pump-phase list {list:?}"))?;
                values
                    .try_into()
                    .map_err(|v: Vec<f64>| anyhow::anyhow!("pump-phase list needs 4 values, got {}", v.len()))
            }
        }
    }

    fn options(&self, seed: u64) -> Result<SimulationOptions> {
        Ok(SimulationOptions {
            grid_size: self.grid,
            counts_per_point: (self.counts > 0).then_some(self.counts),
            seed,
            pump_phases: self.pump_phases(seed)?,
        })
    }
}

#[derive(Args)]
struct RecArgs {
    /// Report the PSD-projected matrix alongside the raw one.
    #[arg(long)]
    psd_project: bool,
    /// Fringe amplitude treated as flat; default depends on the data.
    #[arg(long)]
    flat_threshold: Option<f64>,
    /// Largest allowed gap between the two estimates of a modulus.
    #[arg(long)]
    defect_bound: Option<f64>,
}

impl RecArgs {
    fn options(&self) -> ReconstructOptions {
        let mut o = ReconstructOptions {
            psd_project: self.psd_project,
            flat_threshold: self.flat_threshold,
            ..Default::default()
        };
        if let Some(b) = self.defect_bound {
            o.defect_bound = b;
        }
        o
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate_cmd(state: &StateArgs, sim: &SimArgs, out: &Path) -> Result<()> {
    let p = state.params()?;
    let imp = sim.imperfections()?;
    let opts = sim.options(sim.seed)?;
    let m = simulate_full(&p, &imp, &opts)?.classify(None)?;
    let meta = SimulationMeta {
        seed: sim.seed,
        grid_size: sim.grid,
        counts_per_point: opts.counts_per_point,
        pump_phases: opts.pump_phases,
        imperfections: imp,
    };
    let manifest = write_measurement_set(&m, out, Some(&meta))?;
    std::fs::write(out.join("truth.json"), matrix_to_json(&from_params(&p)?) + "\n")?;
    std::fs::write(out.join("state.json"), params_to_json(&p) + "\n")?;
    let absent: Vec<String> =
        pathtomo_core::Configuration::ALL.into_iter().filter(|&c| m.is_absent(c)).map(|c| c.to_string()).collect();
    println!("wrote {}", manifest.display());
    if !absent.is_empty() {
        println!("absent configurations: {}", absent.join(", "));
    }
    Ok(())
}

fn reconstruct_cmd(input: &Path, truth: Option<&Path>, rec: &RecArgs, out: Option<&Path>) -> Result<()> {
    let (m, _) = read_measurement_set(input)?;
    let truth = truth
        .map(|path| -> Result<DensityMatrix> {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(matrix_from_json(&text)?)
        })
        .transpose()?;
    let report = assemble_with(&m, truth.as_ref(), &rec.options())?;
    write_or_print(out, &(serde_json::to_string_pretty(&report)? + "\n"))
}

fn print_matrix_pair(title: &str, truth: &DensityMatrix, got: &DensityMatrix, imaginary: bool) {
    println!("{title:<38}retrieved");
    for r in Emission::ALL {
        let row = |m: &DensityMatrix| {
            Emission::ALL
                .iter()
                .map(|&c| {
                    let z = m.entry(r, c);
                    format!("{:8.4}", if imaginary { z.im } else { z.re })
                })
                .collect::<String>()
        };
        println!("{r}  {}    {}", row(truth), row(got));
    }
}

fn summarize(report: &ReconstructionReport, truth: &DensityMatrix) {
    let l = &report.loss;
    println!("Gamma = {:.12}  |b1|^2 = {:.12}  T_H = {:.12}", l.gamma, l.b1_sq, l.t_h);
    if !report.absent.is_empty() {
        let names: Vec<String> =
            report.absent.iter().map(|a| format!("{} (peak visibility {:.2e})", a.config, a.peak_visibility)).collect();
        println!("absent: {}", names.join(", "));
    }
    println!("max element error = {:.3e}", report.matrix.max_abs_diff(truth));
    if let (Some(f), Some(t)) = (report.fidelity_vs_truth, report.trace_distance_vs_truth) {
        println!("fidelity = {f:.15}  trace distance = {t:.3e}");
    }
}

fn roundtrip_cmd(state: &StateArgs, sim: &SimArgs, rec: &RecArgs, sweep: Option<u64>) -> Result<()> {
    let imp = sim.imperfections()?;
    let Some(n) = sweep else {
        let p = state.params()?;
        let truth = from_params(&p)?;
        let m = simulate_full(&p, &imp, &sim.options(sim.seed)?)?.classify(None)?;
        let report = assemble_with(&m, Some(&truth), &rec.options())?;
        println!("basis order HH, HV, VH, VV");
        print_matrix_pair("Re(true)", &truth, &report.matrix, false);
        println!();
        print_matrix_pair("Im(true)", &truth, &report.matrix, true);
        println!();
        summarize(&report, &truth);
        return Ok(());
    };
    if n == 0 {
        bail!("--sweep needs at least one state");
    }
    let mut infidelities = Vec::with_capacity(n as usize);
    for seed in sim.seed..sim.seed + n {
        let p = random_state(seed);
        let truth = from_params(&p)?;
        let m = simulate_full(&p, &imp, &sim.options(seed)?)?.classify(None)?;
        let report = assemble_with(&m, Some(&truth), &rec.options()).with_context(|| format!("state seed {seed}"))?;
        infidelities.push(1.0 - report.fidelity_vs_truth.expect("truth supplied"));
    }
    infidelities.sort_by(f64::total_cmp);
    let bins = [1e-12, 1e-9, 1e-6, 1e-3, 1e-2];
    println!("{n} random states (seeds {}..{})", sim.seed, sim.seed + n);
    println!(
        "1 - F: min {:.3e}  median {:.3e}  max {:.3e}",
        infidelities[0],
        infidelities[infidelities.len() / 2],
        infidelities[infidelities.len() - 1]
    );
    let mut lower = f64::NEG_INFINITY;
    for b in bins {
        let count = infidelities.iter().filter(|&&x| x > lower && x <= b).count();
        println!("  1 - F <= {b:.0e}: {count}");
        lower = b;
    }
    println!("  1 - F >  {:.0e}: {}", bins[bins.len() - 1], infidelities.iter().filter(|&&x| x > lower).count());
    Ok(())
}

fn validate_cmd(state: &StateArgs) -> Result<bool> {
    let m = match (&state.state, &state.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            matrix_from_json(&text)?
        }
        _ => from_params(&state.params()?)?,
    };
    let d = validate(&m);
    println!("{}", serde_json::to_string_pretty(&d)?);
    Ok(d.is_valid)
}

fn run(cli: Cli) -> Result<bool> {
    match &cli.command {
        Command::Simulate { state, sim, out } => simulate_cmd(state, sim, out)?,
        Command::Reconstruct { input, truth, rec, out } => {
            reconstruct_cmd(input, truth.as_deref(), rec, out.as_deref())?
        }
        Command::Roundtrip { state, sim, rec, sweep } => roundtrip_cmd(state, sim, rec, *sweep)?,
        Command::ExportGraph { state, out } => write_or_print(out.as_deref(), &export_graph(&state.params()?))?,
        Command::Validate { state } => return validate_cmd(state),
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
