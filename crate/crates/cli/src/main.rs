use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};

use synpo_core::config::{PipelineConfig, Preset};
use synpo_core::data::{save_mask, Manifest};
use synpo_core::eval::{evaluate, EvalReport};
use synpo_core::pipeline::{run_all, CaseMeta, CaseRun};
use synpo_core::segmenter::{FileSegmenter, OracleSegmenter, Segmenter};
use synpo_core::sweep::{argmax, sweep_alpha, to_csv, to_svg};
use synpo_core::synth::{generate_suite, write_suite, SynthSpec};
use synpo_core::Scalar;

#[derive(Parser)]
#[command(
    name = "synpo",
    version,
    about = "Point-prompt synthesis for few-shot medical segmentation"
)]
struct Cli {
    /// Overrides the seed in the config or synth spec.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Band preset; sets alpha and beta.
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    /// Worker threads for per-case parallelism.
    #[arg(long, global = true, default_value_t = 1)]
    workers: usize,
    /// Floating-point precision for the numeric core.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Chaos,
    Synapse,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic suite with an oracle scene per case.
    Synth {
        /// Generator settings (JSON); defaults give the 60-case suite.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every case and write prompts, masks and the Dice report.
    Run(RunArgs),
    /// Run every case and write only the Dice report.
    Eval(RunArgs),
    /// Evaluate an alpha grid with beta = alpha - 1.5.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            default_value = "-0.5,0,0.5,1,1.5,2,2.5"
        )]
        alpha_grid: Vec<f64>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Case list (JSON).
    #[arg(long)]
    manifest: PathBuf,
    /// Pipeline config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `oracle` or `replay:DIR`.
    #[arg(long, default_value = "oracle")]
    segmenter: String,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

struct Failed(usize);

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(Failed(0)) => ExitCode::SUCCESS,
        Ok(Failed(n)) => {
            eprintln!("{n} case(s) failed; see the report for details");
            ExitCode::from(1)
        }
        Err(e) => {
            // Library errors already embed their source in the message.
            let mut msg = String::new();
            for cause in e.chain().map(ToString::to_string) {
                if !msg.contains(&cause) {
                    msg = if msg.is_empty() {
                        cause
                    } else {
                        format!("{msg}: {cause}")
                    };
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: &Cli) -> anyhow::Result<Failed> {
    match (&cli.command, cli.precision) {
        (Command::Synth { spec, out }, _) => synth(cli, spec.as_deref(), out),
        (cmd, Precision::F32) => execute::<f32>(cli, cmd),
        (cmd, Precision::F64) => execute::<f64>(cli, cmd),
    }
}

fn synth(cli: &Cli, spec: Option<&Path>, out: &Path) -> anyhow::Result<Failed> {
    let mut spec = match spec {
        Some(p) => SynthSpec::load(p)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.seed = seed;
    }
    let cases = generate_suite(&spec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write_suite(out, &cases)?;
    println!("wrote {} cases to {}", cases.len(), out.join("manifest.json").display());
    Ok(Failed(0))
}

struct Setup {
    manifest: Manifest,
    metas: Vec<CaseMeta>,
    config: PipelineConfig,
    segmenter: Box<dyn Segmenter>,
}

fn setup(cli: &Cli, args: &RunArgs) -> anyhow::Result<Setup> {
    let manifest = Manifest::load(&args.manifest)?;
    let mut config = match &args.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(p) = cli.preset {
        config = config.with_preset(match p {
            PresetArg::Chaos => Preset::Chaos,
            PresetArg::Synapse => Preset::Synapse,
        });
    }
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    config.validate()?;
    let segmenter: Box<dyn Segmenter> = match args.segmenter.split_once(':') {
        None if args.segmenter == "oracle" => Box::new(OracleSegmenter::from_manifest(&manifest)?),
        Some(("replay", dir)) if !dir.is_empty() => Box::new(FileSegmenter::new(dir)),
        _ => bail!("unknown segmenter {:?} (expected oracle or replay:DIR)", args.segmenter),
    };
    let metas = manifest
        .cases
        .iter()
        .map(|c| CaseMeta {
            id: c.id.clone(),
            organ: c.organ.clone(),
            fold: c.fold,
        })
        .collect();
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    Ok(Setup {
        manifest,
        metas,
        config,
        segmenter,
    })
}

fn execute<T: Scalar>(cli: &Cli, cmd: &Command) -> anyhow::Result<Failed> {
    match cmd {
        Command::Synth { .. } => unreachable!(),
        Command::Run(args) | Command::Eval(args) => {
            let s = setup(cli, args)?;
            let load = |i: usize| s.manifest.load_case::<T>(&s.manifest.cases[i]);
            let runs = run_all(&s.metas, load, &s.config, s.segmenter.as_ref(), cli.workers)?;
            if matches!(cmd, Command::Run(_)) {
                write_case_outputs(&args.out, &runs)?;
            }
            let report = evaluate(&runs);
            write_report(&args.out, &report)?;
            println!(
                "{} cases, mean Dice {:.4} ± {:.4}, {} failed, {} without ground truth",
                report.cases.len(),
                report.overall.mean,
                report.overall.std,
                report.failed,
                report.skipped
            );
            Ok(Failed(report.failed))
        }
        Command::Sweep { run: args, alpha_grid } => {
            let s = setup(cli, args)?;
            let load = |i: usize| s.manifest.load_case::<T>(&s.manifest.cases[i]);
            let rows = sweep_alpha(&s.metas, load, &s.config, s.segmenter.as_ref(), alpha_grid, cli.workers)?;
            write(&args.out.join("sweep.csv"), &to_csv(&rows))?;
            write(&args.out.join("sweep.svg"), &to_svg(&rows))?;
            print!("{}", to_csv(&rows));
            let best = argmax(&rows).ok_or_else(|| anyhow!("empty sweep"))?;
            println!("best alpha {} (beta {})", rows[best].alpha, rows[best].beta);
            Ok(Failed(rows.iter().map(|r| r.failed).max().unwrap_or(0)))
        }
    }
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_report(out: &Path, report: &EvalReport) -> anyhow::Result<()> {
    write(&out.join("report.json"), &report.to_json())?;
    write(&out.join("report.csv"), &report.to_csv())
}

fn write_case_outputs<T: Scalar>(out: &Path, runs: &[CaseRun<T>]) -> anyhow::Result<()> {
    let prompts = out.join("prompts");
    let masks = out.join("masks");
    fs::create_dir_all(&prompts)?;
    fs::create_dir_all(&masks)?;
    for run in runs {
        let Ok(outcome) = &run.result else { continue };
        let id = &run.meta.id;
        write(
            &prompts.join(format!("{id}.json")),
            &(serde_json::to_string_pretty(&outcome.prompts)? + "\n"),
        )?;
        save_mask(masks.join(format!("{id}_coarse.npy")), &outcome.coarse)?;
        save_mask(masks.join(format!("{id}_final.npy")), &outcome.final_mask)?;
    }
    Ok(())
}
