use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};

use hiperfact::derivation::{TreeMode, UniqueMode, WriteMode};
use hiperfact::engine::{Engine, EngineConfig, MetricsFormat, Preset};
use hiperfact::{synth, Backend, JoinAlgo, Layout, RnlMode, Table};

#[derive(Parser)]
#[command(name = "hiperfact", version, about = "Parallel forward-chaining rule engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration, e.g. LPIM+HJ/AR/CR+PF/PW/SU.
    Config {
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Write a synthetic university data set.
    Generate {
        #[arg(long)]
        scale: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Load a fact file and report how many distinct facts it holds.
    Load {
        #[arg(long)]
        facts: PathBuf,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Run inference to a fixpoint.
    Infer {
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        rules: PathBuf,
        /// Run every derivation rule, not only those a query depends on.
        #[arg(long)]
        all: bool,
        /// Write the final fact set here.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Answer a query rule or inline conditions as TSV.
    Query {
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        rules: Option<PathBuf>,
        #[command(flatten)]
        target: QueryTarget,
        #[command(flatten)]
        engine: EngineArgs,
    },
    /// Load, infer and query, then report metrics.
    Bench {
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        rules: PathBuf,
        /// Query rules to run; all queries when omitted.
        #[arg(long)]
        name: Vec<String>,
        #[arg(long, default_value = "tsv")]
        metrics: MetricsFormat,
        #[arg(long)]
        metrics_out: Option<PathBuf>,
        #[command(flatten)]
        engine: EngineArgs,
    },
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct QueryTarget {
    /// Name of a rule in the rules file.
    #[arg(long)]
    name: Option<String>,
    /// Inline conditions, e.g. "(Person ?p livesIn ?c string)".
    #[arg(long = "where")]
    conditions: Option<String>,
}

#[derive(Args)]
struct EngineArgs {
    /// Start from a preset; other flags override its fields.
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    index: Option<Backend>,
    #[arg(long)]
    join: Option<JoinAlgo>,
    #[arg(long)]
    rnl: Option<RnlMode>,
    #[arg(long)]
    result: Option<Layout>,
    #[arg(long)]
    tree: Option<TreeMode>,
    #[arg(long)]
    write: Option<WriteMode>,
    #[arg(long)]
    unique: Option<UniqueMode>,
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long = "block-size")]
    block_size: Option<usize>,
    #[arg(long)]
    max_passes: Option<usize>,
}

impl EngineArgs {
    fn config(&self) -> EngineConfig {
        let mut c = self.preset.map(EngineConfig::preset).unwrap_or_default();
        macro_rules! set {
            ($($field:ident <- $arg:ident),+) => {
                $(if let Some(v) = self.$arg { c.$field = v; })+
            };
        }
        set!(index <- index, join <- join, rnl <- rnl, result <- result, tree <- tree, write <- write,
             unique <- unique, threads <- threads, block_size_bytes <- block_size, max_passes <- max_passes);
        c
    }

    fn engine(&self) -> anyhow::Result<Engine> {
        let cfg = self.config();
        log::info!("configuration {cfg}");
        Ok(Engine::new(cfg)?)
    }
}

fn load(e: &mut Engine, facts: &Path, rules: Option<&Path>) -> anyhow::Result<()> {
    e.load_facts(facts).with_context(|| format!("loading {}", facts.display()))?;
    if let Some(r) = rules {
        e.load_rules(r).with_context(|| format!("loading {}", r.display()))?;
    }
    Ok(())
}

fn print_table(t: &Table, e: &Engine) -> anyhow::Result<()> {
    let mut out = BufWriter::new(io::stdout().lock());
    out.write_all(t.to_tsv(e.dictionary())?.as_bytes())?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Config { engine } => {
            let c = engine.config();
            println!("{c}");
            println!("threads={} block_size={} max_passes={}", c.threads, c.block_size_bytes, c.max_passes);
        }
        Command::Generate { scale, seed, output } => {
            let f = File::create(&output).with_context(|| format!("creating {}", output.display()))?;
            let n = synth::generate(scale, seed, BufWriter::new(f))?;
            eprintln!("{n} facts written to {}", output.display());
        }
        Command::Load { facts, engine } => {
            let mut e = engine.engine()?;
            load(&mut e, &facts, None)?;
            println!("{}", e.index().len());
        }
        Command::Infer { facts, rules, all, output, engine } => {
            let mut e = engine.engine()?;
            load(&mut e, &facts, Some(&rules))?;
            let stats = if all { e.infer_all()? } else { e.infer()? };
            eprintln!("{stats}");
            if let Some(path) = output {
                std::fs::write(&path, e.dump_facts()?).with_context(|| format!("writing {}", path.display()))?;
            }
        }
        Command::Query { facts, rules, target, engine } => {
            let mut e = engine.engine()?;
            load(&mut e, &facts, rules.as_deref())?;
            let t = match (target.name, target.conditions) {
                (Some(name), _) => e.query(&name)?,
                (None, Some(c)) => e.query_where(&c).context("inline conditions")?,
                (None, None) => bail!("either --name or --where is required"),
            };
            print_table(&t, &e)?;
        }
        Command::Bench { facts, rules, name, metrics, metrics_out, engine } => {
            let mut e = engine.engine()?;
            load(&mut e, &facts, Some(&rules))?;
            e.infer()?;
            let names: Vec<String> = if name.is_empty() {
                e.graph().rules().iter().filter(|r| r.is_query()).map(|r| r.name.clone()).collect()
            } else {
                name
            };
            for n in &names {
                let rows = e.query(n)?.len();
                log::info!("{n}: {rows} rows");
            }
            let report = e.metrics().report(metrics);
            match metrics_out {
                Some(path) => std::fs::write(&path, report).with_context(|| format!("writing {}", path.display()))?,
                None => eprint!("{report}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
