//! `bidvl <subcommand>`: batch entry point over training, sampling,
//! evaluation and the verification suites.
//!
//! Exit codes: 0 success, 1 configuration or input error, 2 numeric
//! failure, 3 a verification suite reported a failed check.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::bilevel::{train, ArchSpec, BiDvlModels, LossReport, TrainConfig, TrainObserver};
use crate::data::{
    apply_override, load_checkpoint, parse_config, render_config, save_checkpoint, Checkpoint, Rng,
    METRICS_HEADER,
};
use crate::error::{Error, Result};
use crate::eval::{energy_grid, evaluate, held_out_set, ood_report, training_set, recon_pass, EvalProtocol};
use crate::nets::Activation;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "BIDVL_SEED";

#[derive(Parser, Debug)]
#[command(name = "bidvl", version, about = "Bi-level doubly variational learning of energy-based latent variable models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Config file of `key = value` lines.
    #[arg(short = 'c', long = "config", global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(short = 'o', long = "out", global = true, default_value = "bidvl-out")]
    pub out: PathBuf,
    /// Config override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Number of random cases for the verification suites.
    #[arg(long, global = true)]
    pub seeds: Option<usize>,
    /// Checkpoint file, or a directory of checkpoints for `eval`.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Sample or held-out set size.
    #[arg(long, global = true)]
    pub n: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Train and write metrics.csv plus checkpoints.
    Train,
    /// Draw generator samples from a checkpoint.
    Sample,
    /// Reconstruct a held-out split through the posterior mean.
    Recon,
    /// Out-of-distribution AUROC of the negative energy.
    Ood,
    /// Finite-difference check of every network gradient.
    Gradcheck,
    /// Exact-enumeration checks of the bi-level identities.
    Oracle,
    /// Full evaluation report, plus the energy landscape for 2-D data.
    Eval,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Sample => "sample",
            Command::Recon => "recon",
            Command::Ood => "ood",
            Command::Gradcheck => "gradcheck",
            Command::Oracle => "oracle",
            Command::Eval => "eval",
        }
    }
}

const DEFAULT_HELD_OUT: usize = 4096;
const DEFAULT_SAMPLES: usize = 1000;

enum Outcome {
    Done,
    VerificationFailed,
}

pub fn exit_code(err: &Error) -> i32 {
    if err.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_CONFIG
    }
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(Outcome::Done) => EXIT_OK,
        Ok(Outcome::VerificationFailed) => {
            eprintln!("bidvl {}: verification failed", cli.command.name());
            EXIT_VERIFICATION
        }
        Err(e) => {
            eprintln!("bidvl {}: {}", cli.command.name(), e);
            exit_code(&e)
        }
    }
}

/// Config file (or defaults), then `--set` overrides, then the seed variable.
pub fn resolve_config(path: Option<&Path>, overrides: &[String], env_seed: Option<&str>) -> Result<TrainConfig> {
    let mut cfg = match path {
        Some(p) => parse_config(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => TrainConfig::default(),
    };
    for o in overrides {
        apply_override(&mut cfg, o)?;
    }
    if let Some(s) = env_seed {
        cfg.seed = s
            .trim()
            .parse()
            .map_err(|_| Error::config(0, format!("{} must be an unsigned integer, got `{}`", SEED_ENV, s)))?;
    }
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<Outcome> {
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = resolve_config(cli.config.as_deref(), &cli.set, env_seed.as_deref())?;
    match cli.command {
        Command::Train => cmd_train(cli, &cfg),
        Command::Sample => cmd_sample(cli, &cfg),
        Command::Recon => cmd_recon(cli, &cfg),
        Command::Ood => cmd_ood(cli, &cfg),
        Command::Gradcheck => cmd_gradcheck(cli),
        Command::Oracle => cmd_oracle(cli),
        Command::Eval => cmd_eval(cli, &cfg),
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn out_dir(cli: &Cli) -> Result<&Path> {
    fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    Ok(&cli.out)
}

pub fn checkpoint_file_name(iteration: u64) -> String {
    format!("ckpt_{:08}.bdvl", iteration)
}

/// Streams metric rows and checkpoints into an output directory.
struct DirObserver {
    dir: PathBuf,
    metrics: std::io::BufWriter<fs::File>,
    last: Option<PathBuf>,
}

impl TrainObserver for DirObserver {
    fn on_step(&mut self, iter: u64, report: &LossReport) -> Result<()> {
        writeln!(self.metrics, "{}", report.csv_row(iter)).map_err(|e| Error::io(self.dir.join("metrics.csv"), e))
    }

    fn on_checkpoint(&mut self, ckpt: &Checkpoint, _models: &BiDvlModels) -> Result<()> {
        self.metrics.flush().map_err(|e| Error::io(self.dir.join("metrics.csv"), e))?;
        let path = self.dir.join(checkpoint_file_name(ckpt.iteration));
        save_checkpoint(&path, ckpt)?;
        self.last = Some(path);
        Ok(())
    }
}

fn cmd_train(cli: &Cli, cfg: &TrainConfig) -> Result<Outcome> {
    let dir = out_dir(cli)?.to_path_buf();
    write(&dir.join("config.txt"), render_config(cfg).as_bytes())?;
    let data = training_set(cfg)?;
    let metrics_path = dir.join("metrics.csv");
    let file = fs::File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let mut obs = DirObserver { dir: dir.clone(), metrics: std::io::BufWriter::new(file), last: None };
    writeln!(obs.metrics, "{}", METRICS_HEADER).map_err(|e| Error::io(&metrics_path, e))?;
    let result = train(cfg, &data, &ArchSpec::default(), &mut obs);
    obs.metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
    let models = match result {
        Ok(m) => m,
        Err(e) => {
            if let Some(last) = &obs.last {
                eprintln!("last good checkpoint: {}", last.display());
            }
            return Err(e);
        }
    };
    save_checkpoint(dir.join("final.bdvl"), &models.to_checkpoint(cfg.max_iters))?;
    println!("trained {} iterations; checkpoints in {}", cfg.max_iters, dir.display());
    Ok(Outcome::Done)
}

fn load_models(cli: &Cli) -> Result<BiDvlModels> {
    let path = cli
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::config(0, "this subcommand needs --checkpoint PATH"))?;
    BiDvlModels::from_checkpoint(&load_checkpoint(path)?, Activation::Relu)
}

fn rows_csv(header: &str, t: &crate::tensor::Tensor) -> String {
    let mut s = format!("{}\n", header);
    for i in 0..t.rows() {
        let row: Vec<String> = t.row(i).iter().map(|v| v.to_string()).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

fn column_header(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|i| format!("{}{}", prefix, i)).collect()
}

fn cmd_sample(cli: &Cli, cfg: &TrainConfig) -> Result<Outcome> {
    let models = load_models(cli)?;
    let n = cli.n.unwrap_or(DEFAULT_SAMPLES);
    let samples = models.sample(&mut Rng::split(cfg.seed, 0x5a), n)?;
    let path = out_dir(cli)?.join("samples.csv");
    write(&path, rows_csv(&column_header("x", models.d_v()).join(","), &samples).as_bytes())?;
    println!("wrote {} samples to {}", n, path.display());
    Ok(Outcome::Done)
}

fn cmd_recon(cli: &Cli, cfg: &TrainConfig) -> Result<Outcome> {
    let models = load_models(cli)?;
    let test = held_out_set(cfg, cli.n.unwrap_or(DEFAULT_HELD_OUT))?;
    let (xhat, err) = recon_pass(&models, &test)?;
    let d = test.cols();
    let mut both = Vec::with_capacity(test.len() * 2);
    for i in 0..test.rows() {
        both.extend_from_slice(test.row(i));
        both.extend_from_slice(xhat.row(i));
    }
    let table = crate::tensor::Tensor::matrix(test.rows(), 2 * d, both)?;
    let header = [column_header("x", d), column_header("xhat", d)].concat().join(",");
    let path = out_dir(cli)?.join("recon.csv");
    write(&path, rows_csv(&header, &table).as_bytes())?;
    println!("rmse {}", err);
    Ok(Outcome::Done)
}

fn cmd_ood(cli: &Cli, cfg: &TrainConfig) -> Result<Outcome> {
    let models = load_models(cli)?;
    let protocol = EvalProtocol::for_config(cfg, cli.n.unwrap_or(DEFAULT_HELD_OUT))?;
    let report = ood_report(&models.eblvm.energy, &protocol.held_out, &protocol.ood_sets)?;
    let mut s = String::from("ood_set,auroc\n");
    for (k, v) in &report {
        s.push_str(&format!("{},{}\n", k, v));
        println!("auroc {} {}", k, v);
    }
    write(&out_dir(cli)?.join("ood.csv"), s.as_bytes())?;
    Ok(Outcome::Done)
}

fn cmd_gradcheck(cli: &Cli) -> Result<Outcome> {
    let rows = crate::gradcheck::gradcheck_suite(cli.seeds.unwrap_or(10), 1e-4)?;
    let csv = crate::gradcheck::report_csv(&rows);
    write(&out_dir(cli)?.join("gradcheck.csv"), csv.as_bytes())?;
    let worst = rows.iter().map(|r| r.check.max_rel_err).fold(0.0, f64::max);
    let failed = rows.iter().filter(|r| !r.check.passed).count();
    println!("gradcheck: {} checks, {} failed, max relative error {:e}", rows.len(), failed, worst);
    Ok(if failed == 0 { Outcome::Done } else { Outcome::VerificationFailed })
}

fn cmd_oracle(cli: &Cli) -> Result<Outcome> {
    let checks = crate::oracle::verification_suite(cli.seeds.unwrap_or(50), 0)?;
    write(&out_dir(cli)?.join("oracle.csv"), crate::oracle::report_csv(&checks).as_bytes())?;
    for c in &checks {
        let verdict = if c.passed() { "≤" } else { ">" };
        println!("{} max deviation {:e} {} {:e}", c.name, c.max_deviation, verdict, c.tolerance);
    }
    Ok(if checks.iter().all(|c| c.passed()) { Outcome::Done } else { Outcome::VerificationFailed })
}

fn checkpoint_paths(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| Error::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("ckpt_") && n.ends_with(".bdvl")))
        .collect();
    out.sort();
    if out.is_empty() {
        return Err(Error::config(0, format!("no checkpoints in {}", path.display())));
    }
    Ok(out)
}

fn cmd_eval(cli: &Cli, cfg: &TrainConfig) -> Result<Outcome> {
    let root = cli
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::config(0, "eval needs --checkpoint PATH (file or directory)"))?;
    let paths = checkpoint_paths(root)?;
    let n = cli.n.unwrap_or(DEFAULT_HELD_OUT);
    let protocol = EvalProtocol::for_config(cfg, n)?;
    let dir = out_dir(cli)?.to_path_buf();

    let mut per_ckpt = String::from("iteration,auroc_uniform\n");
    let mut best: Option<(u64, f64)> = None;
    let mut last = None;
    for p in &paths {
        let ckpt = load_checkpoint(p)?;
        let models = BiDvlModels::from_checkpoint(&ckpt, Activation::Relu)?;
        let a = ood_report(&models.eblvm.energy, &protocol.held_out, &protocol.ood_sets)?["uniform"];
        per_ckpt.push_str(&format!("{},{}\n", ckpt.iteration, a));
        if best.map_or(true, |(_, b)| a > b) {
            best = Some((ckpt.iteration, a));
        }
        last = Some(models);
    }
    let models = last.expect("at least one checkpoint");
    let report = evaluate(&models, &protocol)?;
    let mut csv = report.to_csv();
    if let Some((it, a)) = best {
        csv.push_str(&format!("best_auroc_uniform,{}\nbest_auroc_iteration,{}\n", a, it));
    }
    write(&dir.join("eval.csv"), csv.as_bytes())?;
    write(&dir.join("ood_by_checkpoint.csv"), per_ckpt.as_bytes())?;
    if models.d_v() == 2 {
        let grid = energy_grid(&models.eblvm.energy, -1.0, 1.0, 64)?;
        write(&dir.join("energy.csv"), grid.to_csv().as_bytes())?;
        write(&dir.join("energy.pgm"), &grid.to_pgm())?;
    }
    print!("{}", csv);
    Ok(Outcome::Done)
}
