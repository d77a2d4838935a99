use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use rhostab::certify::{self, CertifyOptions};
use rhostab::feedback::{self, GainMap, LoopDescriptor, OverallVerdict, Theorem1Verdict};
use rhostab::lti::StateSpaceSystem;
use rhostab::paa::{self, IdentExperiment};
use rhostab::{Error, Signal};

const CERTIFIED: u8 = 0;
const FAILED: u8 = 1;
const NOT_CERTIFIED: u8 = 2;

#[derive(Parser)]
#[command(name = "rhostab", version, about = "Weighted passivity and small-gain certification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Certify one LTI system on a weighted circle.
    Certify {
        file: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 512)]
        grid: usize,
        /// SPR offset subtracted from the feedthrough.
        #[arg(long, default_value_t = 0.0)]
        offset: f64,
        #[arg(long, value_enum, default_value_t = Kind::Passivity)]
        kind: Kind,
    },
    /// Simulate a weighted feedback loop and evaluate the stability verdicts.
    Loop {
        file: PathBuf,
        /// Number of simulated steps (overrides the descriptor).
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value = "./out")]
        out: PathBuf,
    },
    /// Run a recursive identification experiment.
    Identify {
        file: PathBuf,
        #[arg(long, default_value = "./out")]
        out: PathBuf,
    },
    /// Print the tool version.
    Version,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Kind {
    Gain,
    Passivity,
    OutputPassivity,
    Spr,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    inputs: Vec<String>,
    config: &'a C,
    version: &'a str,
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            let ill_posed = err
                .chain()
                .any(|c| matches!(c.downcast_ref::<Error>(), Some(Error::IllPosed(_))));
            ExitCode::from(if ill_posed { NOT_CERTIFIED } else { FAILED })
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Certify {
            file,
            rho,
            grid,
            offset,
            kind,
        } => cmd_certify(&file, rho, grid, offset, kind),
        Command::Loop { file, horizon, out } => cmd_loop(&file, horizon, &out),
        Command::Identify { file, out } => cmd_identify(&file, &out),
        Command::Version => {
            println!("rhostab {}", env!("CARGO_PKG_VERSION"));
            Ok(CERTIFIED)
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn cmd_certify(file: &Path, rho: f64, grid: usize, offset: f64, kind: Kind) -> Result<u8> {
    let text = read(file)?;
    let sys = StateSpaceSystem::from_json(&text).with_context(|| format!("parsing {}", file.display()))?;
    let opts = CertifyOptions::with_grid(grid);
    let (ok, doc) = match kind {
        Kind::Gain => {
            let g = certify::rho_gain(&sys, rho, &opts)?;
            let mut doc = serde_json::to_value(g)?;
            doc["rho"] = json!(rho);
            doc["kind"] = json!("gain");
            (g.is_finite(), doc)
        }
        Kind::Passivity => {
            let c = certify::rho_passivity_index(&sys, rho, &opts)?;
            (c.is_strict(), serde_json::to_value(c)?)
        }
        Kind::OutputPassivity => {
            let c = certify::output_passivity_index(&sys, rho, &opts)?;
            (c.is_strict(), serde_json::to_value(c)?)
        }
        Kind::Spr => {
            let (ok, c) = certify::spr_check(&sys, rho, offset, &opts)?;
            let mut doc = serde_json::to_value(c)?;
            doc["offset"] = json!(offset);
            (ok, doc)
        }
    };
    print!("{}", to_json(&doc)?);
    Ok(if ok { CERTIFIED } else { NOT_CERTIFIED })
}

/// `count` horizons spread evenly over `0..steps`.
fn spread(steps: usize, count: usize) -> Vec<i64> {
    let mut hs: Vec<i64> = (1..=count).map(|k| (k * steps / count) as i64 - 1).filter(|h| *h >= 0).collect();
    hs.dedup();
    hs
}

fn cmd_loop(file: &Path, horizon: Option<usize>, out: &Path) -> Result<u8> {
    let text = read(file)?;
    let mut desc = LoopDescriptor::from_json(&text).with_context(|| format!("parsing {}", file.display()))?;
    if let Some(h) = horizon {
        anyhow::ensure!(h > 0, "--horizon must be positive");
        desc.horizon = h;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = Manifest {
        command: "loop",
        inputs: vec![file.display().to_string()],
        config: &desc,
        version: env!("CARGO_PKG_VERSION"),
        seed: None,
    };
    write(&out.join("manifest.json"), &to_json(&manifest)?)?;

    let lp = desc.build_loop()?;
    let analysis = feedback::analyze(&lp, &desc.certify)?;
    let base = file.parent().unwrap_or(Path::new("."));
    let steps = desc.horizon;
    let last = steps as i64 - 1;
    let horizons = spread(steps, 10);
    let mut inputs: Vec<(Signal, Signal)> = Vec::new();
    let mut runs = Vec::new();
    for (k, pair) in desc.inputs.iter().enumerate() {
        let u1 = pair.u1.load(base, steps, lp.dim())?;
        let u2 = pair.u2.load(base, steps, lp.dim())?;
        let trace = lp.solve(&u1, &u2, last)?;
        let name = format!("trace_{k}.csv");
        write(&out.join(&name), &trace.to_csv())?;
        let proof = (analysis.theorem1 == Theorem1Verdict::Bounded).then(|| analysis.proof_bound(&trace, &horizons));
        let profile = trace.boundedness_profile();
        runs.push(json!({
            "index": k,
            "trace": name,
            "max_residual": trace.max_residual(),
            "final_ratio": profile.last().copied(),
            "trend_ratio": (profile.len() >= 4).then(|| feedback::trend_ratio(&profile)),
            "proof_bound": proof,
        }));
        inputs.push((u1, u2));
    }
    let empirical = feedback::empirical_gain(&lp, &inputs, &horizons, &GainMap::default())?;
    let verdict = analysis.overall();
    let doc = json!({
        "verdict": verdict,
        "analysis": analysis,
        "empirical_gain": empirical,
        "runs": runs,
    });
    let text = to_json(&doc)?;
    write(&out.join("verdicts.json"), &text)?;
    print!("{text}");
    Ok(if verdict == OverallVerdict::Inconclusive { NOT_CERTIFIED } else { CERTIFIED })
}

fn cmd_identify(file: &Path, out: &Path) -> Result<u8> {
    let text = read(file)?;
    let exp = IdentExperiment::from_json(&text).with_context(|| format!("parsing {}", file.display()))?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let manifest = Manifest {
        command: "identify",
        inputs: vec![file.display().to_string()],
        config: &exp,
        version: env!("CARGO_PKG_VERSION"),
        seed: Some(exp.seed),
    };
    write(&out.join("manifest.json"), &to_json(&manifest)?)?;

    let mut run = paa::run_identification(&exp)?;
    write(&out.join("theta.csv"), &run.trajectory_csv(&exp.plant))?;
    run.report.theta_trajectory_ref = Some("theta.csv".into());
    let text = to_json(&run.report)?;
    write(&out.join("report.json"), &text)?;
    print!("{text}");
    if run.report.overflow {
        let reason = run.report.stop_reason.map(|r| format!("{r:?}")).unwrap_or_default();
        eprintln!("run stopped at step {}: {reason}", run.report.overflow_step.unwrap_or_default());
        return Ok(NOT_CERTIFIED);
    }
    Ok(CERTIFIED)
}
