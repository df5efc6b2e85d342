use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use peercollab::cooperation::Cadence;
use peercollab::criteria::Criterion;
use peercollab::data::{self, Split};
use peercollab::eval::{evaluate, EvalConfig};
use peercollab::harness::experiments::{default_fractions, write_prune_rows};
use peercollab::harness::output::{self, write_metrics, CHECKPOINT_DIR, MODEL_CHECKPOINT};
use peercollab::harness::{self, load_run_config, GridSpec, Mode, RunConfig, Variant};
use peercollab::models::{checkpoint, Model, ModelKind};
use peercollab::params::Scope;
use peercollab::synthetic;
use peercollab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "peercollab",
    version,
    about = "Peer-collaboration training for top-N recommenders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Filter and densify an interaction log (or write the synthetic one).
    Ingest {
        /// Tab-separated `user item timestamp` file; synthetic data when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one configuration and write metrics and checkpoints.
    Train(RunArgs),
    /// Re-evaluate a finished run's reported checkpoint.
    Evaluate {
        #[arg(long)]
        out: PathBuf,
        /// Checkpoint directory; the run's reported model when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Train (or load) a model, then magnitude-prune and fine-tune it.
    Prune {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated pruning fractions.
        #[arg(long, value_delimiter = ',')]
        fractions: Option<Vec<f64>>,
        #[arg(long, default_value_t = 0)]
        fine_tune_epochs: usize,
        /// Prune this checkpoint instead of training one.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run an ablation grid over a base configuration.
    Grid {
        #[command(flatten)]
        run: RunArgs,
        /// TOML file with axis lists (modes, criteria, alphas, variants, scopes, seeds).
        #[arg(long)]
        grid: PathBuf,
    },
    /// Write plot-data tables from a run, grid, or prune directory.
    Report {
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<ModelKind>,
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    criterion: Option<Criterion>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    scope: Option<Scope>,
    #[arg(long)]
    eta1: Option<f64>,
    #[arg(long)]
    eta2: Option<f64>,
    #[arg(long)]
    variant: Option<Variant>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long = "coop-every")]
    coop_every: Option<Cadence>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    parallel: bool,
    /// Interaction file; the synthetic dataset when omitted.
    #[arg(long)]
    data: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self, default_mode: Mode) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => {
                let model = self
                    .model
                    .ok_or_else(|| Error::Config("--model is required without --config".into()))?;
                RunConfig::new(model, default_mode)
            }
        };
        macro_rules! set {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    cfg.$field = v;
                }
            )*};
        }
        set!(model, mode, criterion, alpha, gamma, bins, scope, variant, seed, epochs, coop_every, out);
        if self.eta1.is_some() {
            cfg.eta1 = self.eta1;
        }
        if self.eta2.is_some() {
            cfg.eta2 = self.eta2;
        }
        if self.t.is_some() {
            cfg.t = self.t;
        }
        if self.data.is_some() {
            cfg.data = self.data.clone();
        }
        cfg.parallel |= self.parallel;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_result(r: &peercollab::eval::EvalResult) {
    let cols: Vec<String> =
        r.at.iter()
            .map(|(n, m)| format!("MRR@{n} {:.4}  HIT@{n} {:.4}  NDCG@{n} {:.4}", m.mrr, m.hit, m.ndcg))
            .collect();
    println!("{:<20} {:<5} {}", r.model, r.split.as_str(), cols.join("  "));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, out, seed } => {
            fs::create_dir_all(&out)?;
            let path = out.join("interactions.tsv");
            match input {
                Some(p) => {
                    let ds = data::ingest(&p)?;
                    ds.write_tsv(&path)?;
                    println!(
                        "{} users, {} items, {} interactions",
                        ds.n_users(),
                        ds.n_items(),
                        ds.n_interactions()
                    );
                }
                None => {
                    let mut cfg = synthetic::SyntheticConfig::default();
                    if let Some(s) = seed {
                        cfg.seed = s;
                    }
                    let log = synthetic::generate(&cfg);
                    synthetic::write_tsv(&log, &path)?;
                    println!("{} synthetic interactions", log.len());
                }
            }
            println!("wrote {}", path.display());
        }
        Command::Train(args) => {
            let cfg = args.resolve(Mode::Single)?;
            let (_, outcome) = harness::run_to_dir(&cfg)?;
            print_result(&outcome.valid);
            print_result(&outcome.test);
            println!("outputs in {}", cfg.out.display());
        }
        Command::Evaluate { out, checkpoint: ckpt } => {
            let cfg = load_run_config(&out)?;
            let dir = ckpt.unwrap_or_else(|| out.join(CHECKPOINT_DIR).join(MODEL_CHECKPOINT));
            let loaded = checkpoint::load(&dir)?;
            let model = Model::from_params(cfg.model, loaded.params, &cfg.hyper_params())?;
            let ds = cfg.dataset()?;
            let eval_cfg: EvalConfig = cfg.eval_config();
            let mut results = Vec::new();
            for split in [Split::Valid, Split::Test] {
                let r = evaluate(&model, &ds, split, &eval_cfg)?;
                print_result(&r);
                results.push(r);
            }
            let mut f = fs::File::create(out.join("evaluate.csv"))?;
            write_metrics(&mut f, &cfg.run_id(), &results.iter().collect::<Vec<_>>())?;
        }
        Command::Prune {
            run: args,
            fractions,
            fine_tune_epochs,
            checkpoint: ckpt,
        } => {
            let cfg = args.resolve(Mode::Single)?;
            let fractions = fractions.unwrap_or_else(default_fractions);
            let ds = cfg.dataset()?;
            let model = match ckpt {
                Some(dir) => Model::from_params(cfg.model, checkpoint::load(&dir)?.params, &cfg.hyper_params())?,
                None => {
                    let outcome = harness::run(&cfg, &ds)?;
                    output::write_run(&outcome, &cfg.out)?;
                    outcome.model()?
                }
            };
            let rows = harness::run_prune_experiment(&cfg, &ds, &model, &fractions, fine_tune_epochs)?;
            write_prune_rows(&rows, &cfg.out)?;
            for r in rows
                .iter()
                .filter(|r| r.metric == peercollab::eval::Metric::Mrr && r.n == 5)
            {
                println!(
                    "rho {:.2}: MRR@5 {:.4} -> {:.4} (degradation {:.3}){}",
                    r.fraction,
                    r.unpruned,
                    r.pruned,
                    r.degradation(),
                    r.tuned_degradation()
                        .map_or(String::new(), |d| format!(", after fine-tune {d:.3}"))
                );
            }
        }
        Command::Grid { run: args, grid } => {
            let cfg = args.resolve(Mode::PcLw)?;
            let spec = GridSpec::load(&grid)?;
            let ds = cfg.dataset()?;
            let rows = harness::run_ablation_grid(&cfg, &spec, &ds, &cfg.out)?;
            println!(
                "{} runs; summary in {}",
                rows.len(),
                cfg.out.join("grid_summary.csv").display()
            );
        }
        Command::Report { out } => {
            for f in harness::write_report(&out)? {
                println!("wrote {}", out.join(f).display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
