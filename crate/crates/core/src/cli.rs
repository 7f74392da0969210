//! Command-line front end. [`run_cli`] is the whole program; the binary only
//! forwards process arguments and streams to it.
//!
//! Exit codes: 0 success, 2 input or parse error, 3 instrumentation
//! conflict, 4 tuning infeasible, 5 I/O failure.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::advisor::{recommend_threads, train, Dataset, DecisionTree, TrainParams};
use crate::counters::SyntheticCounterModel;
use crate::rewrite::{
    emit_manifest, instrument, parse_manifest, source_digest, strip, InstrumentationOptions, ManifestEntry,
    RegionManifest, RewriteError,
};
use crate::runtime::{seconds, write_atomic, RunResult, RuntimeEnv, ThreadPlan, ENV_OUT, ENV_PLAN, RESULT_FILE};
use crate::scan::{parse_config, scan_sources, select_regions, InstrumentationConfig, Region, RegionId};
use crate::tuner::{
    build_plan, emit_trials, fit_cost_model, run_trials, speedup, CandidateSet, CommandExecutor, CostModelParams,
    ModelExecutor, TrialExecutor, TuneError,
};

/// File name of the merged manifest written by `instrument`.
pub const MANIFEST_FILE: &str = "pdttagger.manifest";
/// File name of the compiler wrapper written by `instrument --emit-wrapper`.
pub const WRAPPER_FILE: &str = "pdtcc";

#[derive(Debug, Parser)]
#[command(
    name = "pdttagger",
    version,
    about = "Instrument OpenMP regions, profile them and tune per-region thread counts"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Debug, Subcommand)]
pub enum Cmd {
    /// List the OpenMP regions found in C sources.
    Regions {
        #[arg(required = true)]
        sources: Vec<PathBuf>,
        /// Region selection file (`function [file [start-end]]` per line).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Write instrumented copies of the sources plus a merged manifest.
    Instrument {
        #[arg(required = true)]
        sources: Vec<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_dir: PathBuf,
        /// Do not add `num_threads(...)` clauses.
        #[arg(long)]
        no_thread_clause: bool,
        /// Also write a compiler wrapper script.
        #[arg(long)]
        emit_wrapper: bool,
    },
    /// Remove instrumentation, restoring the original sources.
    Strip {
        #[arg(required = true)]
        sources: Vec<PathBuf>,
        /// Write stripped files here instead of to standard output.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run a program (or the cost-model simulator) once under a thread plan.
    Run {
        #[command(flatten)]
        target: Target,
        /// Thread plan file; defaults to a uniform plan of `--threads`.
        #[arg(long)]
        plan: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: u32,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Simulated visits per region (model runs only).
        #[arg(long, default_value_t = 1)]
        visits: u32,
        /// Attach synthetic counters (model runs only).
        #[arg(long)]
        counters: bool,
    },
    /// Run one trial per candidate thread count and write a thread plan.
    Tune {
        #[command(flatten)]
        target: Target,
        /// Comma-separated thread counts; defaults to cores, 2x and 4x cores.
        #[arg(long)]
        candidates: Option<String>,
        #[arg(long)]
        cores: Option<u32>,
        /// Restrict tuning to these region ids (comma-separated).
        #[arg(long)]
        regions: Option<String>,
        #[arg(long, default_value_t = 1)]
        visits: u32,
        #[arg(long)]
        trials_out: Option<PathBuf>,
        #[arg(long)]
        plan_out: Option<PathBuf>,
        /// Fit a cost model to the trials and write it here (needs `--cores`).
        #[arg(long)]
        fit_out: Option<PathBuf>,
    },
    /// Train a decision tree from a labeled dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Depth limit, or `none` for unbounded.
        #[arg(long, default_value = "4", value_parser = parse_depth)]
        max_depth: Depth,
        #[arg(long, default_value_t = 1)]
        min_samples_leaf: usize,
        /// Fraction of samples (taken from the end) held out for evaluation.
        #[arg(long)]
        holdout: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify features with a trained tree.
    Predict {
        #[arg(long)]
        tree: PathBuf,
        /// `name=value` pairs, comma-separated.
        #[arg(long, conflicts_with = "result_file", required_unless_present = "result_file")]
        features: Option<String>,
        /// Classify every profile in a result file.
        #[arg(long)]
        result_file: Option<PathBuf>,
        /// Also print the recommended thread count.
        #[arg(long)]
        cores: Option<u32>,
    },
    /// Render a result file.
    Report {
        #[arg(long)]
        result: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Text)]
        format: Format,
        /// Manifest used to label regions.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct Target {
    /// Shell command template; `{threads}` and `{out}` are expanded.
    #[arg(long)]
    pub exec: Option<String>,
    /// Cost-model parameter file to simulate instead of running a program.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Xml,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Depth(pub Option<usize>);

fn parse_depth(s: &str) -> Result<Depth, String> {
    match s {
        "none" | "unbounded" => Ok(Depth(None)),
        _ => s
            .parse()
            .map(|d| Depth(Some(d)))
            .map_err(|_| format!("expected a depth or `none`, got `{s}`")),
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Conflict(_) => 3,
            CliError::Infeasible(_) => 4,
            CliError::Io { .. } => 5,
        }
    }
}

fn input(e: impl std::fmt::Display) -> CliError {
    CliError::Input(e.to_string())
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    write_atomic(path, contents).map_err(|e| match e {
        crate::runtime::RuntimeError::Io { path, source } => CliError::Io { path, source },
        other => CliError::Input(other.to_string()),
    })
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_cli<I, S>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                2
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let mut o = String::new();
    let mut w = String::new();
    let res = execute(cli.command, &mut o, &mut w);
    let _ = out.write_all(o.as_bytes());
    let _ = err.write_all(w.as_bytes());
    match res {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cmd: Cmd, out: &mut String, warn: &mut String) -> Result<(), CliError> {
    match cmd {
        Cmd::Regions { sources, config } => cmd_regions(&sources, config.as_deref(), out, warn),
        Cmd::Instrument {
            sources,
            config,
            out_dir,
            no_thread_clause,
            emit_wrapper,
        } => cmd_instrument(
            &sources,
            config.as_deref(),
            &out_dir,
            no_thread_clause,
            emit_wrapper,
            out,
            warn,
        ),
        Cmd::Strip { sources, out_dir } => cmd_strip(&sources, out_dir.as_deref(), out),
        Cmd::Run {
            target,
            plan,
            threads,
            out_dir,
            visits,
            counters,
        } => cmd_run(&target, plan.as_deref(), threads, &out_dir, visits, counters, out),
        Cmd::Tune {
            target,
            candidates,
            cores,
            regions,
            visits,
            trials_out,
            plan_out,
            fit_out,
        } => cmd_tune(
            TuneArgs {
                target,
                candidates,
                cores,
                regions,
                visits,
                trials_out,
                plan_out,
                fit_out,
            },
            out,
            warn,
        ),
        Cmd::Train {
            data,
            max_depth,
            min_samples_leaf,
            holdout,
            out: path,
        } => cmd_train(&data, max_depth.0, min_samples_leaf, holdout, &path, out),
        Cmd::Predict {
            tree,
            features,
            result_file,
            cores,
        } => cmd_predict(&tree, features.as_deref(), result_file.as_deref(), cores, out, warn),
        Cmd::Report {
            result,
            format,
            manifest,
        } => cmd_report(&result, format, manifest.as_deref(), out, warn),
    }
}

struct Loaded {
    texts: Vec<(String, String)>,
    selected: Vec<Region>,
}

fn load_and_select(sources: &[PathBuf], config: Option<&Path>, warn: &mut String) -> Result<Loaded, CliError> {
    let config = match config {
        Some(p) => parse_config(&read(p)?).map_err(|e| input(format!("{}: {e}", p.display())))?,
        None => InstrumentationConfig::default(),
    };
    let mut texts = Vec::new();
    for p in sources {
        texts.push((p.to_string_lossy().into_owned(), read(p)?));
    }
    let regions = scan_sources(texts.iter().map(|(f, t)| (f.as_str(), t.as_str()))).map_err(input)?;
    let sel = select_regions(&regions, &config);
    for e in &sel.unmatched {
        let _ = writeln!(warn, "warning: config entry `{}` matched no region", e.function);
    }
    texts.sort();
    Ok(Loaded {
        texts,
        selected: sel.regions,
    })
}

pub fn cmd_regions(
    sources: &[PathBuf],
    config: Option<&Path>,
    out: &mut String,
    warn: &mut String,
) -> Result<(), CliError> {
    let loaded = load_and_select(sources, config, warn)?;
    for r in &loaded.selected {
        let _ = writeln!(
            out,
            "{} {} {}:{}-{} {}",
            r.id, r.kind, r.file, r.pragma_line, r.block_end, r.function
        );
    }
    let _ = writeln!(out, "{} regions", loaded.selected.len());
    Ok(())
}

pub fn cmd_instrument(
    sources: &[PathBuf],
    config: Option<&Path>,
    out_dir: &Path,
    no_thread_clause: bool,
    emit_wrapper: bool,
    out: &mut String,
    warn: &mut String,
) -> Result<(), CliError> {
    let opts = InstrumentationOptions {
        inject_thread_clause: !no_thread_clause,
        ..Default::default()
    };
    let loaded = load_and_select(sources, config, warn)?;
    let mut outputs: BTreeMap<PathBuf, String> = BTreeMap::new();
    let mut entries: Vec<ManifestEntry> = Vec::new();
    for (file, text) in &loaded.texts {
        let mine: Vec<Region> = loaded.selected.iter().filter(|r| &r.file == file).cloned().collect();
        let (instrumented, manifest) = instrument(text, &mine, &opts).map_err(|e| match e {
            RewriteError::Scan(s) => input(s),
            other => CliError::Conflict(format!("{file}: {other}")),
        })?;
        entries.extend(manifest.entries);
        let name = Path::new(file)
            .file_name()
            .ok_or_else(|| input(format!("{file}: not a file name")))?;
        let dest = out_dir.join(name);
        if outputs.insert(dest.clone(), instrumented).is_some() {
            return Err(input(format!("two inputs would both be written to {}", dest.display())));
        }
    }
    entries.sort_by_key(|e| e.id);
    let manifest = RegionManifest {
        entries,
        source_digest: source_digest(
            &loaded
                .texts
                .iter()
                .map(|(f, t)| (f.as_str(), t.as_str()))
                .collect::<Vec<_>>(),
        ),
    };
    for (dest, text) in &outputs {
        write(dest, text)?;
    }
    write(&out_dir.join(opts.header_name()), &opts.hook_header())?;
    write(&out_dir.join(MANIFEST_FILE), &emit_manifest(&manifest))?;
    if emit_wrapper {
        let path = out_dir.join(WRAPPER_FILE);
        write(&path, &wrapper_script())?;
        make_executable(&path)?;
    }
    let _ = writeln!(
        out,
        "instrumented {} regions in {} files -> {}",
        manifest.entries.len(),
        outputs.len(),
        out_dir.display()
    );
    Ok(())
}

#[cfg(unix)]
fn make_executable(path: &Path) -> Result<(), CliError> {
    use std::os::unix::fs::PermissionsExt;
    std::fs::set_permissions(path, std::fs::Permissions::from_mode(0o755)).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(not(unix))]
fn make_executable(_: &Path) -> Result<(), CliError> {
    Ok(())
}

/// Compiler wrapper: instruments every `.c` argument into a scratch
/// directory, then calls the real compiler on the instrumented copies.
/// Use it as `CC` in a makefile; the hook library is linked via
/// `PDTTAGGER_LIBS`.
pub fn wrapper_script() -> String {
    r#"#!/bin/sh
# Compiler wrapper written by `pdttagger instrument --emit-wrapper`.
#   CC=./pdtcc make
# Environment:
#   PDTTAGGER_CC      real compiler (default: cc)
#   PDTTAGGER_BIN     pdttagger executable (default: pdttagger)
#   PDTTAGGER_CONFIG  optional region selection file
#   PDTTAGGER_LIBS    extra link arguments for the hook library
set -e
real_cc=${PDTTAGGER_CC:-cc}
tool=${PDTTAGGER_BIN:-pdttagger}
work=$(mktemp -d "${TMPDIR:-/tmp}/pdtcc.XXXXXX")
trap 'rm -rf "$work"' EXIT
linking=yes
for a in "$@"; do
  case "$a" in -c|-S|-E) linking=no ;; esac
done
n=0
for a in "$@"; do
  shift
  case "$a" in
    *.c)
      n=$((n + 1))
      d="$work/$n"
      if [ -n "$PDTTAGGER_CONFIG" ]; then
        "$tool" instrument "$a" --config "$PDTTAGGER_CONFIG" --out-dir "$d" >/dev/null
      else
        "$tool" instrument "$a" --out-dir "$d" >/dev/null
      fi
      set -- "$@" -I "$d" "$d/$(basename "$a")"
      ;;
    *) set -- "$@" "$a" ;;
  esac
done
if [ "$linking" = yes ]; then
  # shellcheck disable=SC2086
  exec "$real_cc" "$@" $PDTTAGGER_LIBS
fi
exec "$real_cc" "$@"
"#
    .to_string()
}

pub fn cmd_strip(sources: &[PathBuf], out_dir: Option<&Path>, out: &mut String) -> Result<(), CliError> {
    let opts = InstrumentationOptions::default();
    for p in sources {
        let stripped = strip(&read(p)?, &opts);
        match out_dir {
            Some(dir) => {
                let name = p
                    .file_name()
                    .ok_or_else(|| input(format!("{}: not a file name", p.display())))?;
                write(&dir.join(name), &stripped)?;
            }
            None => out.push_str(&stripped),
        }
    }
    Ok(())
}

fn load_plan(plan: Option<&Path>, threads: u32) -> Result<ThreadPlan, CliError> {
    match plan {
        Some(p) => ThreadPlan::parse(&read(p)?).map_err(|e| input(format!("{}: {e}", p.display()))),
        None if threads > 0 => Ok(ThreadPlan::uniform(threads)),
        None => Err(input("--threads must be positive")),
    }
}

fn load_model(path: &Path) -> Result<CostModelParams, CliError> {
    CostModelParams::parse(&read(path)?).map_err(|e| input(format!("{}: {e}", path.display())))
}

fn synthetic_counters(model: &CostModelParams) -> SyntheticCounterModel {
    use crate::counters::RegionRates;
    let mut m = SyntheticCounterModel::default();
    for (&id, c) in &model.regions {
        // Roughly 1e9 cycles per simulated second.
        let cycles = ((c.t_serial + c.work_parallel) * 1e9).max(1.0) as u64;
        m.regions.insert(id, RegionRates::new(cycles, cycles));
    }
    m
}

pub fn cmd_run(
    target: &Target,
    plan: Option<&Path>,
    threads: u32,
    out_dir: &Path,
    visits: u32,
    counters: bool,
    out: &mut String,
) -> Result<(), CliError> {
    let plan = load_plan(plan, threads)?;
    let result = if let Some(model) = &target.model {
        let model = load_model(model)?;
        let mut exec = ModelExecutor::new(model.clone());
        exec.visits = visits;
        if counters {
            exec.counters = Some(synthetic_counters(&model));
        }
        let rt = exec.simulate(plan, "model");
        let mut env = RuntimeEnv::from_process();
        env.out_dir = out_dir.to_path_buf();
        let (result, files) = rt.finalize(&env).map_err(|e| match e {
            crate::runtime::RuntimeError::Io { path, source } => CliError::Io { path, source },
            other => input(other),
        })?;
        for f in files {
            let _ = writeln!(out, "wrote {}", f.display());
        }
        result
    } else {
        let template = target.exec.as_deref().unwrap_or_default();
        std::fs::create_dir_all(out_dir).map_err(|source| CliError::Io {
            path: out_dir.to_path_buf(),
            source,
        })?;
        let plan_path = out_dir.join("pdttagger.plan");
        write(&plan_path, &plan.emit())?;
        let out_str = out_dir.to_string_lossy();
        let cmd = template
            .replace("{threads}", &plan.default_threads.to_string())
            .replace("{out}", &out_str);
        let status = Command::new("sh")
            .arg("-c")
            .arg(&cmd)
            .env("OMP_NUM_THREADS", plan.default_threads.to_string())
            .env(ENV_OUT, out_dir)
            .env(ENV_PLAN, &plan_path)
            .status()
            .map_err(|source| CliError::Io {
                path: PathBuf::from("sh"),
                source,
            })?;
        if !status.success() {
            return Err(input(format!("`{cmd}` exited with {status}")));
        }
        let path = out_dir.join(RESULT_FILE);
        RunResult::parse(&read(&path)?).map_err(|e| input(format!("{}: {e}", path.display())))?
    };
    let visits: u64 = result.profiles.iter().map(|p| p.visits).sum();
    let _ = writeln!(
        out,
        "run {}: {} profiles, {} visits",
        result.run_id,
        result.profiles.len(),
        visits
    );
    Ok(())
}

struct TuneArgs {
    target: Target,
    candidates: Option<String>,
    cores: Option<u32>,
    regions: Option<String>,
    visits: u32,
    trials_out: Option<PathBuf>,
    plan_out: Option<PathBuf>,
    fit_out: Option<PathBuf>,
}

fn cmd_tune(a: TuneArgs, out: &mut String, warn: &mut String) -> Result<(), CliError> {
    let candidates = match (&a.candidates, a.cores) {
        (Some(list), _) => CandidateSet::parse(list).map_err(input)?,
        (None, Some(c)) => CandidateSet::smt(c, false).map_err(input)?,
        (None, None) => return Err(input("give --candidates or --cores")),
    };
    let regions: Vec<RegionId> = match &a.regions {
        Some(list) => list
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| input(format!("bad region id `{s}`"))))
            .collect::<Result<_, _>>()?,
        None => Vec::new(),
    };
    let mut executor: Box<dyn TrialExecutor> = match (&a.target.exec, &a.target.model) {
        (Some(t), _) => Box::new(CommandExecutor::new(t.clone())),
        (None, Some(m)) => {
            let mut e = ModelExecutor::new(load_model(m)?);
            e.visits = a.visits;
            Box::new(e)
        }
        (None, None) => return Err(input("give --exec or --model")),
    };
    let report = match run_trials(executor.as_mut(), &regions, &candidates) {
        Ok(r) => r,
        Err(TuneError::InsufficientTrials { succeeded, excluded }) => {
            for (c, why) in excluded {
                let _ = writeln!(warn, "warning: candidate {c} failed: {why}");
            }
            return Err(CliError::Infeasible(format!(
                "need at least 2 successful trials, got {succeeded}"
            )));
        }
        Err(e) => return Err(input(e)),
    };
    for (c, why) in &report.excluded {
        let _ = writeln!(warn, "warning: candidate {c} excluded: {why}");
    }
    let outcome = build_plan(&report.trials).map_err(|e| match e {
        TuneError::InsufficientTrials { .. } => CliError::Infeasible(e.to_string()),
        other => input(other),
    })?;
    for w in &outcome.warnings {
        let _ = writeln!(warn, "warning: {w}");
    }
    for d in &outcome.decisions {
        let _ = write!(out, "region {} -> {} threads", d.region, d.threads);
        if let Some(&(base_n, base)) = d.times.first() {
            let best = d.times.iter().find(|t| t.0 == d.threads).map_or(base, |t| t.1);
            if let Ok(s) = speedup(base, best) {
                let _ = write!(out, " (speedup {s:.3} vs {base_n})");
            }
        }
        out.push('\n');
    }
    let _ = writeln!(out, "default -> {} threads", outcome.plan.default_threads);
    if let Some(p) = &a.trials_out {
        write(p, &emit_trials(&report.trials))?;
    }
    if let Some(p) = &a.plan_out {
        write(p, &outcome.plan.emit())?;
    }
    if let Some(p) = &a.fit_out {
        let cores = a.cores.ok_or_else(|| input("--fit-out needs --cores"))?;
        let mut fitted = CostModelParams {
            cores,
            regions: BTreeMap::new(),
        };
        for d in &outcome.decisions {
            let obs: BTreeMap<u32, f64> = d.times.iter().copied().collect();
            match fit_cost_model(&obs, cores) {
                Ok(fit) => {
                    let _ = writeln!(
                        out,
                        "region {} fit max error {:.2}%",
                        d.region,
                        100.0 * fit.max_relative_error()
                    );
                    fitted.regions.insert(d.region, fit.cost);
                }
                Err(e) => {
                    let _ = writeln!(warn, "warning: region {}: {e}", d.region);
                }
            }
        }
        write(p, &fitted.emit())?;
    }
    Ok(())
}

pub fn cmd_train(
    data: &Path,
    max_depth: Option<usize>,
    min_samples_leaf: usize,
    holdout: Option<f64>,
    path: &Path,
    out: &mut String,
) -> Result<(), CliError> {
    let dataset = Dataset::parse(&read(data)?).map_err(|e| input(format!("{}: {e}", data.display())))?;
    let (train_set, test_set) = match holdout {
        Some(f) if (0.0..1.0).contains(&f) => dataset.holdout(f),
        Some(f) => return Err(input(format!("--holdout must be in [0, 1), got {f}"))),
        None => (dataset.clone(), Dataset::new(dataset.features.clone(), Vec::new())),
    };
    let params = TrainParams {
        max_depth,
        min_samples_leaf,
    };
    let tree = train(&train_set, &params).map_err(input)?;
    write(path, &tree.export())?;
    let acc = tree.accuracy(&train_set).map_err(input)?;
    let _ = writeln!(
        out,
        "training accuracy {:.1}% ({} samples, depth {})",
        100.0 * acc,
        train_set.samples.len(),
        tree.depth()
    );
    if !test_set.samples.is_empty() {
        let acc = tree.accuracy(&test_set).map_err(input)?;
        let _ = writeln!(
            out,
            "holdout accuracy {:.1}% ({} samples)",
            100.0 * acc,
            test_set.samples.len()
        );
    }
    Ok(())
}

fn parse_features(list: &str) -> Result<(Vec<String>, Vec<f64>), CliError> {
    let mut names = Vec::new();
    let mut values = Vec::new();
    for pair in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| input(format!("expected name=value, got `{pair}`")))?;
        let v: f64 = v
            .trim()
            .parse()
            .ok()
            .filter(|x: &f64| x.is_finite())
            .ok_or_else(|| input(format!("bad value in `{pair}`")))?;
        names.push(k.trim().to_string());
        values.push(v);
    }
    Ok((names, values))
}

fn cmd_predict(
    tree: &Path,
    features: Option<&str>,
    result_file: Option<&Path>,
    cores: Option<u32>,
    out: &mut String,
    warn: &mut String,
) -> Result<(), CliError> {
    let tree = DecisionTree::import(&read(tree)?).map_err(|e| input(format!("{}: {e}", tree.display())))?;
    let render = |class| match cores {
        Some(c) => format!("{class} -> {} threads", recommend_threads(class, c)),
        None => class.to_string(),
    };
    if let Some(list) = features {
        let (names, values) = parse_features(list)?;
        let class = tree.predict_row(&names, &values).map_err(input)?;
        let _ = writeln!(out, "{}", render(class));
        return Ok(());
    }
    let path = result_file.expect("clap requires one of the inputs");
    let result = RunResult::parse(&read(path)?).map_err(|e| input(format!("{}: {e}", path.display())))?;
    for p in &result.profiles {
        let derived = match p.features() {
            Ok(d) => d,
            Err(e) => {
                let _ = writeln!(warn, "warning: region {} threads {}: {e}", p.region_id, p.thread_count);
                continue;
            }
        };
        if derived.has_missing() {
            let _ = writeln!(
                warn,
                "warning: region {} threads {}: missing counters for {}",
                p.region_id,
                p.thread_count,
                derived.missing.iter().map(|e| e.name()).collect::<Vec<_>>().join(", ")
            );
            continue;
        }
        let class = tree.predict(&derived.features).map_err(input)?;
        let _ = writeln!(
            out,
            "region {} threads {}: {}",
            p.region_id,
            p.thread_count,
            render(class)
        );
    }
    Ok(())
}

/// Human-readable table sorted by total time, largest first.
pub fn render_report(result: &RunResult, manifest: Option<&RegionManifest>) -> String {
    let mut rows: Vec<_> = result.profiles.iter().collect();
    rows.sort_by(|a, b| {
        b.total_time_ns
            .cmp(&a.total_time_ns)
            .then(a.region_id.cmp(&b.region_id))
            .then(a.thread_count.cmp(&b.thread_count))
    });
    let mut out = format!("run {} default threads {}\n", result.run_id, result.default_threads);
    let _ = writeln!(
        out,
        "{:>6} {:>7} {:>8} {:>14} {:>14} {:>14} {:>14}  location",
        "region", "threads", "visits", "total[s]", "mean[s]", "min[s]", "max[s]"
    );
    for p in rows {
        let loc = manifest
            .and_then(|m| m.get(p.region_id))
            .map(|e| format!("{} {}:{} {}", e.kind, e.file, e.pragma_line, e.function))
            .unwrap_or_default();
        let row = format!(
            "{:>6} {:>7} {:>8} {:>14} {:>14} {:>14} {:>14}  {}",
            p.region_id,
            p.thread_count,
            p.visits,
            seconds(p.total_time_ns),
            seconds(p.mean_time_ns()),
            seconds(p.min_time_ns),
            seconds(p.max_time_ns),
            loc
        );
        let _ = writeln!(out, "{}", row.trim_end());
        for (event, count) in &p.counter_totals {
            let _ = writeln!(out, "{:>16} {event} {count}", "");
        }
    }
    out
}

fn cmd_report(
    path: &Path,
    format: Format,
    manifest: Option<&Path>,
    out: &mut String,
    warn: &mut String,
) -> Result<(), CliError> {
    let result = RunResult::parse(&read(path)?).map_err(|e| input(format!("{}: {e}", path.display())))?;
    let manifest = match manifest {
        Some(p) => Some(parse_manifest(&read(p)?).map_err(|e| input(format!("{}: {e}", p.display())))?),
        None => None,
    };
    if !result.unbalanced_regions.is_empty() {
        let ids: Vec<String> = result.unbalanced_regions.iter().map(|i| i.to_string()).collect();
        let _ = writeln!(warn, "warning: unbalanced regions: {}", ids.join(" "));
    }
    match format {
        Format::Text => out.push_str(&render_report(&result, manifest.as_ref())),
        Format::Xml => {
            let counters = result.profiles.iter().any(|p| !p.counter_totals.is_empty());
            out.push_str(&result.emit_viz(manifest.as_ref(), counters));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(args: &[&str]) -> (i32, String, String) {
        let mut o = Vec::new();
        let mut e = Vec::new();
        let code = run_cli(std::iter::once("pdttagger").chain(args.iter().copied()), &mut o, &mut e);
        (code, String::from_utf8(o).unwrap(), String::from_utf8(e).unwrap())
    }

    #[test]
    fn unknown_flag_is_an_input_error() {
        let (code, _, err) = run(&["regions", "x.c", "--bogus"]);
        assert_eq!(code, 2);
        assert!(err.contains("--bogus"));
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run(&["--help"]);
        assert_eq!(code, 0);
        for sub in [
            "regions",
            "instrument",
            "strip",
            "run",
            "tune",
            "train",
            "predict",
            "report",
        ] {
            assert!(out.contains(sub), "{sub}");
        }
    }

    #[test]
    fn missing_file_is_io_error() {
        let (code, _, _) = run(&["regions", "/nonexistent/dir/x.c"]);
        assert_eq!(code, 5);
    }

    #[test]
    fn depth_values() {
        assert_eq!(parse_depth("none").unwrap(), Depth(None));
        assert_eq!(parse_depth("3").unwrap(), Depth(Some(3)));
        assert!(parse_depth("x").is_err());
    }

    #[test]
    fn feature_pairs() {
        let (n, v) = parse_features("ipc=0.4, l2_mpki=3").unwrap();
        assert_eq!(n, vec!["ipc", "l2_mpki"]);
        assert_eq!(v, vec![0.4, 3.0]);
        assert!(parse_features("ipc").is_err());
        assert!(parse_features("ipc=nan").is_err());
    }
}
