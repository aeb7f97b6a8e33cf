//! The `ddunet` command line.

pub mod checkpoint;
pub mod config;
pub mod run;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use checkpoint::{Checkpoint, OptimizerState};
pub use config::{RunConfig, Split, ENV_PREFIX};
pub use run::{evaluate_samples, load_dataset, train, Dataset, SplitEval, TrainOutcome};

use crate::data::{load_subject, phantom_subject, preprocess_subject, save_nifti, save_subject, NiftiDtype, NiftiVolume};
use crate::engine::Tensor;
use crate::error::{Error, Result};
use crate::gradsuite;
use crate::network::{describe, predict, ArchitectureConfig, ModelParams};
use crate::objectives::{argmax_labels, Region};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const AFTER_HELP: &str = "\
Configuration is resolved as: defaults < --config file < DDUNET_* environment
variables < --set key=value < --seed/--out. An environment variable
DDUNET_<SECTION>_<KEY> sets section.key, e.g. DDUNET_OPTIM_MAX_LR=3e-4.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical failure.";

#[derive(Parser, Debug)]
#[command(name = "ddunet", version, about = "Dual-decoder attention 3D U-Net for brain tumor segmentation", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write synthetic phantom subjects as NIfTI files.
    Synth {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Cubic extent in voxels.
        #[arg(long, default_value_t = 32)]
        size: usize,
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Write .nii instead of .nii.gz.
        #[arg(long)]
        uncompressed: bool,
    },
    /// Train a model; writes config echo, metrics CSV and checkpoints.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Run directory (run.out).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Run seed (run.seed).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on a data split.
    Evaluate {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        /// train, test or all.
        #[arg(long, default_value = "test")]
        split: String,
        /// Overrides applied on top of the checkpoint's config.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Directory for the evaluation CSV (defaults to the checkpoint's).
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Segment one subject directory.
    Predict {
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "DIR")]
        subject: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Also write the final-level attention maps.
        #[arg(long)]
        attention: bool,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Finite-difference gradient verification at 64-bit.
    Gradcheck {
        /// An operation scope or `all`.
        #[arg(long, default_value = "all")]
        scope: String,
        #[arg(long, default_value_t = gradsuite::DEFAULT_INSTANCES)]
        instances: usize,
    },
    /// Print the resolved config and the model layout.
    Info {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Describe a checkpoint instead.
        #[arg(long, value_name = "PATH")]
        checkpoint: Option<PathBuf>,
    },
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) => EXIT_USAGE,
        Error::Io { .. } | Error::Format(_) | Error::Shape(_) => EXIT_DATA,
        Error::NonFinite(_) | Error::Tape(_) => EXIT_NUMERIC,
    }
}

fn env_vars() -> Vec<(String, String)> {
    std::env::vars_os()
        .filter_map(|(k, v)| Some((k.into_string().ok()?, v.into_string().ok()?)))
        .collect()
}

/// Defaults, then `--config`, environment and `--set`.
pub fn resolve_config(args: &ConfigArgs, env: Vec<(String, String)>) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    cfg.apply_env(env)?;
    for s in &args.set {
        cfg.apply_assignment(s)?;
    }
    Ok(cfg)
}

/// A checkpoint with its config after environment and `--set` overrides.
pub fn open_checkpoint(path: &Path, set: &[String], env: Vec<(String, String)>) -> Result<(RunConfig, ModelParams<f32>)> {
    let ck = Checkpoint::<f32>::load(path)?;
    let mut cfg = RunConfig::parse(&ck.config)?;
    cfg.apply_env(env)?;
    for s in set {
        cfg.apply_assignment(s)?;
    }
    cfg.validate()?;
    ck.params
        .check_against(&cfg.model)
        .map_err(|e| Error::Config(format!("checkpoint does not match its model config: {e}")))?;
    run::check_data_compatibility(&cfg.model)?;
    run::check_extents(&cfg.model, &cfg.data.crop)?;
    Ok((cfg, ck.params))
}

pub fn cmd_synth(out: &Path, seed: u64, size: usize, count: usize, gzip: bool) -> Result<Vec<PathBuf>> {
    (0..count)
        .map(|i| save_subject(&phantom_subject(seed, size, i)?, out, gzip))
        .collect()
}

pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    train(cfg, |line| println!("{line}"))
}

fn parse_splits(s: &str) -> Result<Vec<Split>> {
    match s {
        "all" => Ok(vec![Split::Train, Split::Test]),
        s => Ok(vec![s.parse()?]),
    }
}

/// Table of mean Dice, sensitivity and specificity per region.
pub fn summary_table(split: Split, ev: &SplitEval) -> String {
    let mut s = format!("{} split, {} subjects, mean loss {}\n", split.name(), ev.scores.volumes, ev.loss);
    s.push_str(&format!("{:<6}", ""));
    for r in Region::ALL {
        s.push_str(&format!("{:>9}", r.short_name()));
    }
    s.push('\n');
    for (label, kind) in [("Dice", "dice"), ("Sens", "sens"), ("Spec", "spec")] {
        s.push_str(&format!("{label:<6}"));
        for r in Region::ALL {
            let v = ev.scores.get(&format!("{kind}_{}", r.short_name())).unwrap_or(f64::NAN);
            s.push_str(&format!("{v:>9.4}"));
        }
        s.push('\n');
    }
    s
}

pub fn evaluation_csv(rows: &[(Split, SplitEval)]) -> String {
    let header = run::csv_header();
    let header = header.split(',').filter(|c| *c != "epoch" && *c != "lr").collect::<Vec<_>>().join(",");
    let mut out = header + "\n";
    for (split, ev) in rows {
        let row = run::csv_row(0, *split, 0.0, ev);
        let fields: Vec<&str> = row.split(',').collect();
        out.push_str(&[&fields[1..3], &fields[4..]].concat().join(","));
        out.push('\n');
    }
    out
}

pub fn cmd_evaluate(checkpoint: &Path, split: &str, set: &[String], out: Option<&Path>) -> Result<Vec<(Split, SplitEval)>> {
    let splits = parse_splits(split)?;
    let (cfg, params) = open_checkpoint(checkpoint, set, env_vars())?;
    let data = load_dataset(&cfg)?;
    let mut rows = Vec::new();
    for s in splits {
        let samples = data.split(s);
        if samples.is_empty() {
            return Err(Error::Format(format!("the {} split is empty", s.name())));
        }
        let ev = evaluate_samples(&params, &cfg, samples)?;
        print!("{}", summary_table(s, &ev));
        rows.push((s, ev));
    }
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(format!("evaluate_{split}.csv"));
    std::fs::write(&path, evaluation_csv(&rows)).map_err(|e| Error::io(&path, e))?;
    println!("wrote {}", path.display());
    Ok(rows)
}

#[derive(Clone, Debug, Default)]
pub struct PredictOutputs {
    pub labels: PathBuf,
    pub attention: Vec<PathBuf>,
    /// Set when attention export was requested from a gate-free model.
    pub notice: Option<String>,
}

pub fn cmd_predict(checkpoint: &Path, subject_dir: &Path, out: &Path, export_attention: bool, set: &[String]) -> Result<PredictOutputs> {
    let (cfg, params) = open_checkpoint(checkpoint, set, env_vars())?;
    let subject = load_subject(subject_dir)?;
    let sample = preprocess_subject(&subject, cfg.data.crop)?;
    let x = run::stack(&[&sample.image])?;
    let capture = export_attention && cfg.model.has_gates();
    let art = predict(&params, &cfg.model, &x, capture)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let [d, h, w] = cfg.data.crop;
    let labels: Vec<f32> = argmax_labels(&art.logits)?.into_iter().map(f32::from).collect();
    let vol = NiftiVolume::from_tensor(&Tensor::from_vec(&[d, h, w], labels)?, NiftiDtype::U8)?;
    let mut result = PredictOutputs { labels: out.join(format!("{}_pred.nii.gz", subject.id)), ..Default::default() };
    save_nifti(&vol, &result.labels)?;

    if export_attention && !capture {
        result.notice = Some("no attention maps in this variant (the model has no attention gates)".into());
    }
    for map in art.attention.iter().filter(|m| m.level == 0) {
        let alpha = map.alpha.reshape(&[d, h, w])?;
        let path = out.join(format!("attn_final_{}.nii.gz", ArchitectureConfig::decoder_tag(map.decoder)));
        save_nifti(&NiftiVolume::from_tensor(&alpha, NiftiDtype::F32)?, &path)?;
        result.attention.push(path);
    }
    Ok(result)
}

/// Prints one line per (scope, target) and a verdict per scope.
pub fn cmd_gradcheck(scope: &str, instances: usize) -> Result<bool> {
    let reports = gradsuite::run(scope, instances)?;
    let mut all_passed = true;
    for r in &reports {
        let mut targets: Vec<&str> = Vec::new();
        for c in &r.checks {
            if !targets.contains(&c.target.as_str()) {
                targets.push(&c.target);
            }
        }
        for t in targets {
            let checks: Vec<_> = r.checks.iter().filter(|c| c.target == t).collect();
            let worst = checks
                .iter()
                .max_by(|a, b| a.report.max_rel_error.total_cmp(&b.report.max_rel_error))
                .expect("non-empty");
            let ok = checks.iter().all(|c| c.report.passed);
            let mut line = format!(
                "{:<22} {:<18} max_rel_error {:.3e} (seed {}) {}",
                r.scope,
                t,
                worst.report.max_rel_error,
                worst.seed,
                if ok { "PASS" } else { "FAIL" }
            );
            if !ok {
                line.push_str(&format!(" analytic {:e} numeric {:e}", worst.report.analytic, worst.report.numeric));
                if let Some(e) = &worst.report.error {
                    line.push_str(&format!(" error: {e}"));
                }
            }
            println!("{line}");
        }
        println!(
            "{:<22} {} instances, {} replaced for crossing a kink: {}",
            r.scope,
            r.instances,
            r.skipped_seeds.len(),
            if r.passed() { "PASS" } else { "FAIL" }
        );
        all_passed &= r.passed();
    }
    let passed = reports.iter().filter(|r| r.passed()).count();
    println!("gradcheck: {passed}/{} scopes passed (tolerance {:e}, step {:e})", reports.len(), gradsuite::TOLERANCE, gradsuite::STEP);
    Ok(all_passed)
}

pub fn cmd_info(cfg: &RunConfig) -> Result<String> {
    cfg.validate()?;
    let extent = cfg.data.crop.iter().copied().min().unwrap_or(0);
    let mut s = cfg.render();
    s.push('\n');
    s.push_str(&format!("model at {extent}^3 input:\n"));
    s.push_str(&describe(&cfg.model, extent)?.to_string());
    s.push('\n');
    Ok(s)
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth { out, seed, size, count, uncompressed } => {
            let dirs = cmd_synth(&out, seed, size, count, !uncompressed)?;
            println!("wrote {} subjects under {}", dirs.len(), out.display());
        }
        Command::Train { cfg, out, seed } => {
            let mut c = resolve_config(&cfg, env_vars())?;
            if let Some(o) = out {
                c.run.out = o;
            }
            if let Some(s) = seed {
                c.run.seed = s;
            }
            let r = cmd_train(&c)?;
            match r.best_epoch {
                Some(e) => println!("best epoch {e}; run directory {}", r.run_dir.display()),
                None => println!("no evaluation ran; run directory {}", r.run_dir.display()),
            }
        }
        Command::Evaluate { checkpoint, split, set, out } => {
            cmd_evaluate(&checkpoint, &split, &set, out.as_deref())?;
        }
        Command::Predict { checkpoint, subject, out, attention, set } => {
            let r = cmd_predict(&checkpoint, &subject, &out, attention, &set)?;
            println!("wrote {}", r.labels.display());
            for p in &r.attention {
                println!("wrote {}", p.display());
            }
            if let Some(n) = r.notice {
                println!("{n}");
            }
        }
        Command::Gradcheck { scope, instances } => {
            if !cmd_gradcheck(&scope, instances)? {
                return Ok(EXIT_NUMERIC);
            }
        }
        Command::Info { cfg, checkpoint } => {
            let c = match checkpoint {
                Some(p) => {
                    let (c, params) = open_checkpoint(&p, &cfg.set, env_vars())?;
                    println!("checkpoint {} with {} tensors", p.display(), params.len());
                    c
                }
                None => resolve_config(&cfg, env_vars())?,
            };
            print!("{}", cmd_info(&c)?);
        }
    }
    Ok(EXIT_OK)
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
