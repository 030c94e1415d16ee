use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dbgen::benchmarks::{make_problem, EnvironmentSchedule};
use dbgen::dataset::{build_triplet_sets, generate_offline, Dataset};
use dbgen::generate::{parse_mask_dims, Strategy};
use dbgen::harness::{self, AppConfig, Archive, Mode, RunResult};
use dbgen::model::checkpoint::Checkpoint;
use dbgen::model::{train, EpochTelemetry, ModelParams};
use dbgen::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "dbgen", version, about = "Generative population initialization for dynamic multi-objective optimization")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct Common {
    /// TOML file with [dataset], [train] and [run] tables.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    problem: Option<String>,
    /// Change severity n_t.
    #[arg(long, global = true)]
    nt: Option<u32>,
    /// Change frequency tau_t.
    #[arg(long, global = true)]
    taut: Option<u32>,
    #[arg(long, global = true)]
    mode: Option<Mode>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, global = true)]
    ncand: Option<usize>,
    #[arg(long, global = true)]
    sigma: Option<f64>,
    #[arg(long, global = true)]
    rho: Option<f64>,
    /// Comma-separated basis indices to zero before sampling.
    #[arg(long, global = true)]
    mask_dims: Option<String>,
    #[arg(long, global = true, value_parser = ["centroid", "all-point"])]
    strategy: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the offline training corpus into --out-dir.
    GenData,
    /// Train a model on a corpus and write a checkpoint.
    Train {
        /// Directory written by gen-data.
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run dynamic tracking for every configured seed.
    Run,
    /// Recompute metrics from archived populations.
    Eval {
        /// Archive files; defaults to every archive in --out-dir.
        archives: Vec<PathBuf>,
    },
    /// Train and run each of the five ablation variants on one corpus.
    Ablate {
        #[arg(long)]
        dataset: PathBuf,
        /// Print the jobs without running them.
        #[arg(long)]
        list: bool,
    },
    /// Per-environment mean latents of a model.
    DumpLatents {
        #[arg(long, default_value_t = 100)]
        samples: usize,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(c: &Common) -> Result<AppConfig> {
    let mut cfg = match &c.config {
        Some(p) => AppConfig::load(p)?,
        None => AppConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.dataset.seed = s;
        cfg.train.seed = s;
        cfg.run.seeds = vec![s];
    }
    let run = &mut cfg.run;
    if let Some(p) = &c.problem {
        run.problem = p.clone();
    }
    if let Some(v) = c.nt {
        run.schedule.severity = v;
    }
    if let Some(v) = c.taut {
        run.schedule.frequency = v;
    }
    if let Some(m) = c.mode {
        run.mode = m;
    }
    if let Some(p) = &c.checkpoint {
        run.checkpoint = Some(p.clone());
    }
    if let Some(v) = c.ncand {
        run.generate.n_cand = v;
    }
    if let Some(v) = c.sigma {
        run.generate.sigma_r = v;
    }
    if let Some(v) = c.rho {
        run.generate.rho = v;
    }
    if let Some(s) = &c.mask_dims {
        run.generate.masked_dims = parse_mask_dims(s)?;
    }
    if let Some(s) = &c.strategy {
        run.generate.strategy = s.parse::<Strategy>()?;
    }
    Ok(cfg)
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.common)?;
    let out = &cli.common.out_dir;
    match cli.command {
        Command::GenData => {
            let data = generate_offline(&cfg.dataset)?;
            fs::create_dir_all(out)?;
            let fp = data.save(out)?;
            println!("{} records, fingerprint {fp}", data.records.len());
        }
        Command::Train { dataset } => {
            let ckpt = train_model(&cfg, &dataset, out)?;
            let path = cfg.run.checkpoint.clone().unwrap_or_else(|| out.join("model.ckpt"));
            ckpt.save(&path)?;
            println!("checkpoint {}", path.display());
        }
        Command::Run => {
            let model = load_model(&cfg)?;
            let results = harness::run_seeds(&cfg.run, model.as_ref(), harness::worker_count())?;
            harness::save_results(&results, out)?;
            report(&results);
        }
        Command::Eval { archives } => {
            let paths = if archives.is_empty() { find_archives(out)? } else { archives };
            if paths.is_empty() {
                return Err(Error::Config(format!("no archives in {}", out.display())));
            }
            println!("archive,migd,mhv");
            for p in paths {
                let r = Archive::load(&p)?.evaluate()?;
                println!("{},{:e},{:e}", p.display(), r.migd, r.mhv);
            }
        }
        Command::Ablate { dataset, list } => {
            for (name, ablation) in harness::ablation_variants() {
                let dir = out.join(name);
                if list {
                    println!("{name}\t{}", dir.display());
                    continue;
                }
                let mut c = cfg.clone();
                c.train.ablation = ablation;
                let ckpt = train_model(&c, &dataset, &dir)?;
                let path = dir.join("model.ckpt");
                ckpt.save(&path)?;
                c.run.mode = Mode::Dbgen;
                c.run.checkpoint = Some(path);
                c.run.ablation = Some(ablation);
                let results = harness::run_seeds(&c.run, Some(&ckpt.params), harness::worker_count())?;
                harness::save_results(&results, &dir)?;
                print!("{name}: ");
                report(&results);
            }
        }
        Command::DumpLatents { samples } => {
            let model = load_model(&AppConfig {
                run: harness::RunConfig {
                    mode: Mode::Dbgen,
                    ..cfg.run.clone()
                },
                ..cfg.clone()
            })?
            .expect("dbgen mode loads a model");
            let problem = make_problem(&cfg.run.problem, cfg.run.num_vars)?;
            let s = cfg.run.schedule;
            let schedule = EnvironmentSchedule::new(s.severity, s.frequency, s.num_environments)?;
            let seed = cfg.run.seeds.first().copied().unwrap_or(0);
            let rows = harness::dump_latents(&model, &problem, &schedule, samples, seed)?;
            fs::create_dir_all(out)?;
            let mut buf = Vec::new();
            harness::write_latents_csv(&rows, &mut buf)?;
            let path = out.join("latents.csv");
            fs::write(&path, buf)?;
            println!("{} rows to {}", rows.len(), path.display());
        }
    }
    Ok(())
}

fn train_model(cfg: &AppConfig, dataset: &Path, out: &Path) -> Result<Checkpoint> {
    let (data, distances, fp) = Dataset::load(dataset)?;
    let sets = build_triplet_sets(&distances, cfg.dataset.triplet_k)?;
    let set = data.training_set(&sets)?;
    log::info!("training on {} records", set.len());
    let (params, log) = train(&set, &cfg.train)?;
    fs::create_dir_all(out)?;
    fs::write(out.join("train.csv"), epoch_csv(&log))?;
    Checkpoint::new(params, data.header.labels.clone(), fp)
}

fn epoch_csv(log: &[EpochTelemetry]) -> String {
    let mut s = String::from("epoch,batches,rec,pred,contrast,aux,kl,total\n");
    for e in log {
        let l = &e.loss;
        s.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e},{:e},{:e}\n",
            e.epoch, e.batches, l.rec, l.pred, l.contrast, l.aux, l.kl, l.total
        ));
    }
    s
}

/// The checkpoint for dbgen mode, checked against the problem before any evaluation.
fn load_model(cfg: &AppConfig) -> Result<Option<ModelParams>> {
    if cfg.run.mode != Mode::Dbgen {
        return Ok(None);
    }
    let path = cfg
        .run
        .checkpoint
        .as_ref()
        .ok_or_else(|| Error::Config("dbgen mode needs --checkpoint".into()))?;
    let ckpt = Checkpoint::load(path).map_err(|e| match e {
        Error::Io(io) => Error::Config(format!("cannot read checkpoint {}: {io}", path.display())),
        other => other,
    })?;
    let problem = make_problem(&cfg.run.problem, cfg.run.num_vars)?;
    harness::check_model(&problem, &ckpt.params, cfg.run.ablation.as_ref())?;
    Ok(Some(ckpt.params))
}

fn find_archives(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("archive-") && n.ends_with(".bin"))
        })
        .collect();
    v.sort();
    Ok(v)
}

fn report(results: &[RunResult]) {
    for r in results {
        println!(
            "{} {} seed {}: MIGD {:.4e} MHV {:.4e} ({} evaluations + {} window)",
            r.problem,
            r.mode,
            r.seed,
            r.migd(),
            r.mhv(),
            r.evaluations,
            r.window_evaluations
        );
    }
}
