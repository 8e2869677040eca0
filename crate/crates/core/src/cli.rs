//! Command-line front end: `prune`, `search`, `derive`, `account`,
//! `oracle` and `replay`.
//!
//! Every run writes into its own directory: `run.json` (command plus fully
//! resolved inputs), `config.json`, `log.jsonl` and the command outputs.
//! `replay` re-executes a `run.json` and compares the outputs byte by byte.

use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::accounting::{estimate_compute, estimate_memory, expected_memory_random, memory_csv};
use crate::config::{DataSpec, RunConfig};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::oneshot::{run_search, SearchState};
use crate::oracle::{build_fitness_table, enumerate_space, survival_study, OracleBudget, SurvivalMethod};
use crate::pruning::{partial_prune, random_mask, MaskFile, MaskProvenance, PruneMode, Semantics};
use crate::ranking::{Aggregate, Ranker, RankerSpec};
use crate::search_space::{architecture_fraction, derive_genotype, Genotype};
use crate::supernet::Supernet;

pub const OUTPUT_ROOT_ENV: &str = "ZOSNAS_OUTPUT_ROOT";
pub const RUN_FILE: &str = "run.json";
const RUN_VERSION: u32 = 1;
/// Outputs that carry wall-clock time and are skipped by replay.
const NONDETERMINISTIC: [&str; 1] = ["timing.jsonl"];

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "zosnas",
    version,
    about = "Zero-shot pruning and masked one-shot architecture search"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Preset {
    /// Planted-signal chain space (3 edges x 4 ops).
    Toy,
    /// DARTS cells on CIFAR-10 (needs --cifar-dir).
    Darts,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Algorithmic,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SemanticsArg {
    ArchitectureFraction,
    OperationKeepProbability,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RankerArg {
    Nngp,
    Tabular,
    Constant,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Run configuration (JSON); flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in configuration used when no --config is given.
    #[arg(long, value_enum, default_value = "toy")]
    pub preset: Preset,
    #[arg(long)]
    pub cifar_dir: Option<PathBuf>,
    /// Sets the data and init seeds (and the random-mask seed).
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub init_seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output directory; defaults to `<output root>/<command>-<config digest>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = OUTPUT_ROOT_ENV, default_value = "runs")]
    pub output_root: PathBuf,
    /// Overwrite an existing output directory.
    #[arg(long)]
    pub force: bool,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mask the search space (partial pruning or random masking).
    Prune {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long)]
        xi: Option<f64>,
        #[arg(long, value_enum)]
        semantics: Option<SemanticsArg>,
        /// Replaces the configured rankers with one of this kind.
        #[arg(long, value_enum)]
        ranker: Option<RankerArg>,
        /// Fitness table for --ranker tabular.
        #[arg(long)]
        table: Option<PathBuf>,
    },
    /// Masked one-shot search.
    Search {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Total epochs, warmup included.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        warmup: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Partial-channel divisor K.
        #[arg(long)]
        divisor: Option<usize>,
    },
    /// Genotype of a search checkpoint.
    Derive {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Analytic memory and compute of one weight step.
    Account {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long)]
        divisor: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Keep probability for the expected random-mask report.
        #[arg(long)]
        xi: Option<f64>,
    },
    /// Exhaustive fitness table and pruning-survival study.
    Oracle {
        #[command(flatten)]
        run: RunArgs,
        /// Training epochs per architecture.
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        survival_seeds: Option<usize>,
        #[arg(long)]
        top_q: Option<f64>,
        #[arg(long)]
        cap: Option<usize>,
        /// Pruning level of both survival methods.
        #[arg(long)]
        xi: Option<f64>,
    },
    /// Re-execute a run directory and compare its outputs byte by byte.
    Replay {
        run_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        workers: Option<usize>,
    },
}

/// Everything a run needs, with inputs inlined so that replay does not
/// depend on files outside the run directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub version: u32,
    pub command: String,
    #[serde(default)]
    pub config: Option<RunConfig>,
    #[serde(default)]
    pub mask: Option<MaskFile>,
    #[serde(default)]
    pub checkpoint: Option<PathBuf>,
    #[serde(default)]
    pub expected_xi: Option<f64>,
}

impl RunRecord {
    fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("run record serializes") + "\n"
    }

    fn digest(&self) -> String {
        hex::encode(&Sha256::digest(self.to_json().as_bytes())[..6])
    }
}

/// Exit code of an error: 2 usage/configuration, 3 data or file format,
/// 4 numeric or other computation failure.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_data() {
        EXIT_DATA
    } else if matches!(
        e.root(),
        Error::Config(_) | Error::Contract(_) | Error::CapExceeded { .. } | Error::EmptyEdge { .. }
    ) {
        EXIT_USAGE
    } else {
        EXIT_NUMERIC
    }
}

/// Structured run log: one JSON object per line in `log.jsonl`, plus a
/// human summary on stderr.
pub struct RunLog {
    file: File,
}

impl RunLog {
    fn create(dir: &Path) -> Result<Self> {
        Ok(RunLog {
            file: File::create(dir.join("log.jsonl"))?,
        })
    }

    pub fn event(&mut self, event: &str, fields: Value) -> Result<()> {
        let mut obj = json!({ "event": event });
        if let (Some(o), Value::Object(f)) = (obj.as_object_mut(), &fields) {
            o.extend(f.clone());
        }
        writeln!(self.file, "{obj}")?;
        let summary: Vec<String> = match &fields {
            Value::Object(f) => f
                .iter()
                .filter(|(_, v)| !v.is_array() && !v.is_object())
                .map(|(k, v)| format!("{k}={v}"))
                .collect(),
            _ => vec![],
        };
        eprintln!("[{event}] {}", summary.join(" "));
        Ok(())
    }
}

fn resolve_config(run: &RunArgs) -> Result<RunConfig> {
    let mut cfg = match (&run.config, run.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Preset::Toy) => RunConfig::toy(),
        (None, Preset::Darts) => RunConfig::darts(
            run.cifar_dir
                .clone()
                .ok_or_else(|| Error::Config("the darts preset needs --cifar-dir".into()))?,
        ),
    };
    if let (Some(dir), DataSpec::Cifar10 { path }) = (&run.cifar_dir, &mut cfg.data) {
        *path = dir.clone();
    }
    if let Some(s) = run.seed {
        cfg.seeds.data = s;
        cfg.seeds.init = s;
        cfg.prune.seed = s;
    }
    if let Some(s) = run.data_seed {
        cfg.seeds.data = s;
    }
    if let Some(s) = run.init_seed {
        cfg.seeds.init = s;
    }
    Ok(cfg)
}

fn load_mask(path: &Option<PathBuf>) -> Result<Option<MaskFile>> {
    path.as_deref().map(MaskFile::load).transpose()
}

/// Builds the run record of a command (everything but `replay`).
pub fn record_for(command: &Command) -> Result<(RunRecord, &OutputArgs)> {
    let mut rec = RunRecord {
        version: RUN_VERSION,
        command: String::new(),
        config: None,
        mask: None,
        checkpoint: None,
        expected_xi: None,
    };
    let output = match command {
        Command::Prune {
            run,
            mode,
            xi,
            semantics,
            ranker,
            table,
        } => {
            let mut cfg = resolve_config(run)?;
            if let Some(m) = mode {
                cfg.prune.mode = match m {
                    ModeArg::Algorithmic => PruneMode::Algorithmic,
                    ModeArg::Random => PruneMode::Random,
                };
                cfg.prune.semantics = None;
            }
            if let Some(x) = xi {
                cfg.prune.xi = *x;
            }
            if let Some(s) = semantics {
                cfg.prune.semantics = Some(match s {
                    SemanticsArg::ArchitectureFraction => Semantics::ArchitectureFraction,
                    SemanticsArg::OperationKeepProbability => Semantics::OperationKeepProbability,
                });
            }
            if let Some(r) = ranker {
                cfg.prune.rankers = vec![match r {
                    RankerArg::Nngp => RankerSpec::NngpFrobenius {
                        datapoints: 64,
                        batch_size: 32,
                        seed: cfg.prune.seed,
                    },
                    RankerArg::Tabular => RankerSpec::Tabular {
                        table: table
                            .as_ref()
                            .ok_or_else(|| Error::Config("--ranker tabular needs --table".into()))?
                            .display()
                            .to_string(),
                        aggregate: Aggregate::Max,
                    },
                    RankerArg::Constant => RankerSpec::Constant { value: 1.0 },
                }];
            }
            rec.command = "prune".into();
            rec.config = Some(cfg);
            &run.output
        }
        Command::Search {
            run,
            mask,
            epochs,
            warmup,
            batch_size,
            divisor,
        } => {
            let mut cfg = resolve_config(run)?;
            if let Some(e) = epochs {
                cfg.schedule.search_epochs = *e;
            }
            if let Some(w) = warmup {
                cfg.schedule.warmup_epochs = *w;
            }
            if let Some(b) = batch_size {
                cfg.schedule.batch_size = *b;
            }
            if let Some(k) = divisor {
                cfg.supernet.partial_channel_divisor = *k;
            }
            rec.command = "search".into();
            rec.config = Some(cfg);
            rec.mask = load_mask(mask)?;
            &run.output
        }
        Command::Derive { checkpoint, output } => {
            rec.command = "derive".into();
            rec.checkpoint = Some(checkpoint.clone());
            output
        }
        Command::Account {
            run,
            mask,
            divisor,
            batch_size,
            xi,
        } => {
            let mut cfg = resolve_config(run)?;
            if let Some(k) = divisor {
                cfg.supernet.partial_channel_divisor = *k;
            }
            if let Some(b) = batch_size {
                cfg.schedule.batch_size = *b;
            }
            if let Some(x) = xi {
                if !(*x > 0.0 && *x < 1.0) {
                    return Err(Error::Config(format!("--xi must lie strictly inside (0, 1), got {x}")));
                }
            }
            rec.command = "account".into();
            rec.config = Some(cfg);
            rec.mask = load_mask(mask)?;
            rec.expected_xi = *xi;
            &run.output
        }
        Command::Oracle {
            run,
            epochs,
            survival_seeds,
            top_q,
            cap,
            xi,
        } => {
            let mut cfg = resolve_config(run)?;
            if let Some(e) = epochs {
                cfg.oracle.epochs = *e;
            }
            if let Some(s) = survival_seeds {
                cfg.oracle.survival_seeds = *s;
            }
            if let Some(q) = top_q {
                cfg.oracle.top_q = *q;
            }
            if let Some(c) = cap {
                cfg.oracle.cap = *c;
            }
            if let Some(x) = xi {
                for m in &mut cfg.oracle.methods {
                    match m {
                        SurvivalMethod::Random { xi } | SurvivalMethod::Algorithmic { xi, .. } => *xi = *x,
                    }
                }
            }
            rec.command = "oracle".into();
            rec.config = Some(cfg);
            &run.output
        }
        Command::Replay { .. } => return Err(Error::Contract("replay has no run record of its own".into())),
    };
    if let Some(cfg) = &rec.config {
        cfg.validate()?;
    }
    Ok((rec, output))
}

fn workers(w: Option<usize>) -> usize {
    w.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1)
}

/// Creates `dir`, refusing to touch an existing non-empty one unless
/// `force`.
fn prepare_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() {
        let occupied = fs::read_dir(dir)?.next().is_some();
        if occupied && !force {
            return Err(Error::Config(format!(
                "output directory {} already exists; pass --force to overwrite it",
                dir.display()
            )));
        }
        if occupied {
            fs::remove_dir_all(dir)?;
        }
    }
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::Io(e).context(path.display().to_string()))
}

fn pretty<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("output serializes") + "\n"
}

/// Runs a record into `dir` (which must exist and be empty).
pub fn execute(rec: &RunRecord, dir: &Path, workers: usize) -> Result<()> {
    if rec.version != RUN_VERSION {
        return Err(Error::Format {
            what: RUN_FILE.into(),
            expected: format!("version {RUN_VERSION}"),
            actual: rec.version.to_string(),
        });
    }
    write(dir, RUN_FILE, rec.to_json())?;
    if let Some(cfg) = &rec.config {
        write(dir, "config.json", cfg.to_json())?;
    }
    let mut log = RunLog::create(dir)?;
    let need_cfg = || {
        rec.config.as_ref().ok_or_else(|| Error::Malformed {
            what: RUN_FILE.into(),
            reason: format!("{} needs a config", rec.command),
        })
    };
    match rec.command.as_str() {
        "prune" => cmd_prune(need_cfg()?, dir, workers, &mut log),
        "search" => cmd_search(need_cfg()?, rec.mask.as_ref(), dir, &mut log),
        "derive" => {
            let ck = rec.checkpoint.as_ref().ok_or_else(|| Error::Malformed {
                what: RUN_FILE.into(),
                reason: "derive needs a checkpoint".into(),
            })?;
            cmd_derive(ck, dir, &mut log)
        }
        "account" => cmd_account(need_cfg()?, rec.mask.as_ref(), rec.expected_xi, dir, &mut log),
        "oracle" => cmd_oracle(need_cfg()?, dir, workers, &mut log),
        other => Err(Error::Malformed {
            what: RUN_FILE.into(),
            reason: format!("unknown command {other}"),
        }),
    }
}

fn cmd_prune(cfg: &RunConfig, dir: &Path, workers: usize, log: &mut RunLog) -> Result<()> {
    let space = cfg.validate()?;
    let p = &cfg.prune;
    let semantics = p.semantics();
    let (masked, fractions, audit) = match p.mode {
        PruneMode::Random => {
            let m = random_mask(&space, p.xi, p.seed)?;
            let f = architecture_fraction(&m, &space)?;
            (m, vec![1.0, f], None)
        }
        PruneMode::Algorithmic => {
            let data = cfg.data.load(cfg.seeds.data)?;
            let rankers: Vec<Box<dyn Ranker>> = p
                .rankers
                .iter()
                .map(|r| r.build(&space, &cfg.supernet, &data))
                .collect::<Result<_>>()?;
            let refs: Vec<&dyn Ranker> = rankers.iter().map(|r| r.as_ref()).collect();
            let (m, audit) = partial_prune(&space, p.xi, semantics, &refs, workers)?;
            (m, audit.trajectory(1.0), Some(audit))
        }
    };
    let provenance = MaskProvenance {
        mode: p.mode,
        xi: p.xi,
        semantics,
        seed: p.seed,
        rankers: p.rankers.iter().map(RankerSpec::name).collect(),
        fractions: fractions.clone(),
    };
    let mask = MaskFile::new(&masked, provenance);
    mask.save(&dir.join("mask.json"))?;
    if let Some(a) = &audit {
        write(dir, "audit.jsonl", a.to_jsonl())?;
        for r in &a.rounds {
            log.event(
                "prune_round",
                json!({ "round": r.round, "fraction_before": r.fraction_before, "fraction_after": r.fraction_after, "pruned": r.pruned }),
            )?;
        }
    }
    log.event(
        "prune_done",
        json!({
            "kept_ops": mask.kept_count(),
            "total_ops": space.total_candidates(),
            "architecture_fraction": architecture_fraction(&masked, &space)?,
            "trajectory": fractions,
        }),
    )?;
    Ok(())
}

#[derive(Serialize)]
struct GenotypeFile<'a> {
    key: String,
    genotype: &'a Genotype,
}

fn write_genotype(dir: &Path, g: &Genotype) -> Result<()> {
    write(
        dir,
        "genotype.json",
        pretty(&GenotypeFile {
            key: g.key(),
            genotype: g,
        }),
    )
}

fn cmd_search(cfg: &RunConfig, mask: Option<&MaskFile>, dir: &Path, log: &mut RunLog) -> Result<()> {
    let base = cfg.validate()?;
    let space = match mask {
        Some(m) => m.apply(&base)?,
        None => base.clone(),
    };
    let data = cfg.data.load(cfg.seeds.data)?;
    let net = Supernet::new(space.clone(), cfg.supernet.clone(), cfg.seeds.init)?;
    let initial = net.alphas.alpha.clone();
    let mut metrics = File::create(dir.join("metrics.jsonl"))?;
    let mut timing = File::create(dir.join("timing.jsonl"))?;
    let ck_path = dir.join("checkpoint.zsns");
    let mut hook = |state: &SearchState, m: &crate::oneshot::EpochMetrics, secs: f64| -> Result<()> {
        writeln!(metrics, "{}", serde_json::to_string(m)?)?;
        writeln!(timing, "{}", json!({ "epoch": m.epoch, "seconds": secs }))?;
        state.to_container().save(&ck_path)?;
        log.event(
            "epoch",
            json!({
                "epoch": m.epoch,
                "warmup": m.warmup,
                "train_loss": m.train_loss,
                "val_acc": m.val_acc,
                "mean_alpha_entropy": m.mean_alpha_entropy,
            }),
        )
    };
    let out = run_search(net, &data, &cfg.schedule, cfg.seeds.data, &mut hook)?;
    write_genotype(dir, &out.genotype)?;
    write(dir, "alphas.json", pretty(&out.state.net.alphas.alpha))?;
    let untouched = space
        .edges
        .iter()
        .zip(initial.iter().zip(&out.state.net.alphas.alpha))
        .all(|(e, (a0, a1))| e.mask.iter().zip(a0.iter().zip(a1)).all(|(&m, (x, y))| m || x == y));
    log.event(
        "search_done",
        json!({
            "genotype": out.genotype.key(),
            "unmasked_ops": space.unmasked_total(),
            "masked_alphas_untouched": untouched,
        }),
    )?;
    Ok(())
}

fn cmd_derive(checkpoint: &Path, dir: &Path, log: &mut RunLog) -> Result<()> {
    let c = Container::load(checkpoint, None)?;
    let mut net_c = c.clone();
    net_c.kind = "supernet".into();
    net_c
        .tensors
        .retain(|(n, _)| n.starts_with("param/") || n.starts_with("alpha/"));
    let net = Supernet::from_container(&net_c)?;
    let g = derive_genotype(&net.space, &net.alphas.alpha)?;
    write_genotype(dir, &g)?;
    log.event("derive_done", json!({ "genotype": g.key() }))
}

fn cmd_account(cfg: &RunConfig, mask: Option<&MaskFile>, xi: Option<f64>, dir: &Path, log: &mut RunLog) -> Result<()> {
    let base = cfg.validate()?;
    let space = match mask {
        Some(m) => m.apply(&base)?,
        None => base.clone(),
    };
    let batch = cfg.schedule.batch_size;
    let mem = estimate_memory(&space, &cfg.supernet, batch)?;
    let comp = estimate_compute(&space, &cfg.supernet, batch)?;
    let plain_cfg = cfg.supernet.clone().with_divisor(1);
    let plain = estimate_memory(&base, &plain_cfg, batch)?;
    let plain_compute = estimate_compute(&base, &plain_cfg, batch)?;
    let ratio = |a: u64, b: u64| a as f64 / b as f64;
    let mut ratios = json!({
        "total_vs_plain": ratio(mem.total_elements, plain.total_elements),
        "activation_vs_plain": ratio(mem.retained_activation_elements, plain.retained_activation_elements),
        "parameter_vs_plain": ratio(mem.parameter_elements, plain.parameter_elements),
        "forward_macs_vs_plain": ratio(comp.forward_macs, plain_compute.forward_macs),
    });
    let expected = match xi {
        Some(x) => {
            let e = expected_memory_random(&space, &cfg.supernet, batch, x)?;
            ratios["expected_random_total_vs_plain"] = json!(e.total_elements / plain.total_elements as f64);
            ratios["expected_random_activation_vs_plain"] =
                json!(e.retained_activation_elements / plain.retained_activation_elements as f64);
            Some(e)
        }
        None => None,
    };
    write(
        dir,
        "memory.json",
        pretty(
            &json!({ "batch": batch, "report": mem, "plain": plain, "expected_random": expected, "ratios": ratios }),
        ),
    )?;
    write(
        dir,
        "compute.json",
        pretty(&json!({ "batch": batch, "report": comp, "plain": plain_compute })),
    )?;
    write(dir, "ops.csv", memory_csv(&mem, &comp))?;
    log.event(
        "account_done",
        json!({
            "total_elements": mem.total_elements,
            "retained_activation_elements": mem.retained_activation_elements,
            "parameter_elements": mem.parameter_elements,
            "forward_macs": comp.forward_macs,
            "total_vs_plain": ratios["total_vs_plain"],
            "activation_vs_plain": ratios["activation_vs_plain"],
        }),
    )
}

fn cmd_oracle(cfg: &RunConfig, dir: &Path, workers: usize, log: &mut RunLog) -> Result<()> {
    let space = cfg.validate()?;
    let o = &cfg.oracle;
    let archs = enumerate_space(&space, o.cap)?.len();
    log.event(
        "oracle_start",
        json!({ "architectures": archs, "epochs": o.epochs, "workers": workers }),
    )?;
    let data = cfg.data.load(cfg.seeds.data)?;
    let budget = OracleBudget {
        epochs: o.epochs,
        schedule: cfg.schedule.clone(),
        cap: o.cap,
    };
    let mut table = build_fitness_table(
        &space,
        &data,
        &cfg.supernet,
        &budget,
        cfg.seeds.data,
        cfg.seeds.init,
        workers,
    )?;
    table.provenance.task = serde_json::to_string(&cfg.data)?;
    table.save(&dir.join("fitness.json"))?;
    let (best, best_fit) = table.argmax().map(|(k, f)| (k.to_string(), f)).unwrap_or_default();
    log.event(
        "fitness_table",
        json!({ "entries": table.len(), "failures": table.failures.len(), "argmax": best, "best_fitness": best_fit }),
    )?;
    let report = survival_study(&table, &space, &o.methods, o.survival_seeds, o.top_q, workers)?;
    write(dir, "survival.json", pretty(&report))?;
    write(dir, "histogram.csv", report.histogram_csv())?;
    for m in &report.methods {
        log.event(
            "survival",
            json!({
                "method": m.name,
                "top_q_survival": m.top_q_survival,
                "predicted": m.predicted_top_q_survival,
                "top1_survival": m.top1_survival,
                "median_shift": m.median_shift,
                "median_after_std": m.median_after_std,
            }),
        )?;
    }
    Ok(())
}

fn replay(run_dir: &Path, out: Option<PathBuf>, force: bool, workers: usize) -> Result<()> {
    let path = run_dir.join(RUN_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::Io(e).context(path.display().to_string()))?;
    let rec: RunRecord = serde_json::from_str(&text).map_err(|e| Error::Json(e).context(path.display().to_string()))?;
    let target = out.unwrap_or_else(|| {
        let name = run_dir
            .file_name()
            .map_or("run".into(), |n| n.to_string_lossy().into_owned());
        run_dir.with_file_name(format!("{name}.replay"))
    });
    prepare_dir(&target, force)?;
    execute(&rec, &target, workers)?;
    let mut names: Vec<String> = fs::read_dir(run_dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| !NONDETERMINISTIC.contains(&n.as_str()))
        .collect();
    names.sort();
    let mut differing = Vec::new();
    for n in &names {
        let same = fs::read(target.join(n)).ok() == Some(fs::read(run_dir.join(n))?);
        eprintln!("[replay] {n}: {}", if same { "identical" } else { "DIFFERENT" });
        if !same {
            differing.push(n.clone());
        }
    }
    if differing.is_empty() {
        println!("{}", target.display());
        Ok(())
    } else {
        Err(Error::Invariant(format!("replay differs in {}", differing.join(", "))))
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match &cli.command {
        Command::Replay {
            run_dir,
            out,
            force,
            workers: w,
        } => replay(run_dir, out.clone(), *force, workers(*w)),
        other => record_for(other).and_then(|(rec, output)| {
            let dir = output
                .out
                .clone()
                .unwrap_or_else(|| output.output_root.join(format!("{}-{}", rec.command, rec.digest())));
            prepare_dir(&dir, output.force)?;
            execute(&rec, &dir, workers(output.workers))?;
            println!("{}", dir.display());
            Ok(())
        }),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
