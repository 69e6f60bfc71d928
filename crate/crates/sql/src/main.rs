use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dcg_core::grammar::LearnableParams;
use dcg_core::oracle::{FnHandle, OracleRegistry, OracleRequest, RawAnswer, RemoteHandle, ReplayHandle, TableHandle};
use dcg_core::trainer::{fit, OptimizerConfig};
use dcg_sql::dataset::{learned_registry, read_records};
use dcg_sql::exec::{instantiate, Checker};
use dcg_sql::{schema_facts, ColumnDomain, Mode, Schema, Scope, SqlModel};
use rand::rngs::StdRng;
use rand::SeedableRng;

#[derive(Parser)]
#[command(name = "dcg-sql", about = "Grammar-constrained text-to-SQL")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct SchemaArgs {
    /// Schema file (JSON); with --spider-db, a Spider tables.json file.
    #[arg(long)]
    schema: PathBuf,
    /// Database id to import from a Spider tables file.
    #[arg(long)]
    spider_db: Option<String>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[command(flatten)]
    schema: SchemaArgs,
    #[arg(long, default_value = "task1")]
    grammar_scope: Scope,
    /// Offer every database column at each column position.
    #[arg(long)]
    cfg_ablation: bool,
    /// table:<file>, replay:<file>, remote:<url>, uniform or learned.
    #[arg(long, default_value = "uniform")]
    oracle: String,
    /// Learned weights written by `train`.
    #[arg(long)]
    params: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the query for a question.
    Gen {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        nl: String,
        #[arg(long, default_value = "exact")]
        mode: Mode,
        /// Gold condition values, in slot order.
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
    /// Probability of a query for a question.
    Score {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        nl: String,
        #[arg(long)]
        sql: String,
    },
    /// Fit per-prompt oracle weights on a dataset of {nl, db, sql, values} lines.
    Train {
        /// Schema files, one per database in the dataset.
        #[arg(long, required = true)]
        schema: Vec<PathBuf>,
        #[arg(long, default_value = "task1")]
        grammar_scope: Scope,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 100)]
        epochs: usize,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        batch_size: Option<usize>,
        /// Where to write the learned weights.
        #[arg(long, default_value = "params.json")]
        out: PathBuf,
        /// Loss trace as line-delimited JSON.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Execute queries from a file, one per line, against a SQLite database.
    Validate {
        #[arg(long)]
        db: PathBuf,
        #[arg(long)]
        sql_file: PathBuf,
    },
    /// List derivable queries, value slots filled with 1.
    Enumerate {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 100)]
        limit: usize,
    },
    /// Print the facts derived from a schema.
    Facts {
        #[command(flatten)]
        schema: SchemaArgs,
    },
    /// Create a SQLite database with the schema's tables and random rows.
    InitDb {
        #[command(flatten)]
        schema: SchemaArgs,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 5)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_schema(a: &SchemaArgs) -> Result<Schema> {
    let bytes = std::fs::read(&a.schema).with_context(|| format!("reading {}", a.schema.display()))?;
    Ok(match &a.spider_db {
        Some(db) => Schema::from_spider(&bytes, db)?,
        None => Schema::from_json(&bytes)?,
    })
}

fn load_params(path: &Path) -> Result<LearnableParams> {
    let f = File::open(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

fn uniform() -> OracleRegistry {
    OracleRegistry::with_default(Arc::new(FnHandle(|r: &OracleRequest| {
        let n = r.domain().len();
        Ok(RawAnswer::Probs(vec![1.0 / n as f64; n]))
    })))
}

fn registry(spec: &str, model: &SqlModel) -> Result<OracleRegistry> {
    let (kind, arg) = spec.split_once(':').unwrap_or((spec, ""));
    Ok(match kind {
        "uniform" => uniform(),
        "learned" => learned_registry(&model.grammar),
        "table" => OracleRegistry::with_default(Arc::new(TableHandle::from_file(arg)?)),
        "replay" => OracleRegistry::with_default(Arc::new(ReplayHandle::from_file(arg)?)),
        "remote" => OracleRegistry::with_default(Arc::new(RemoteHandle::new(arg))),
        _ => bail!("unknown oracle {spec:?}; expected table:<file>, replay:<file>, remote:<url>, uniform or learned"),
    })
}

fn load_model(a: &ModelArgs) -> Result<(SqlModel, OracleRegistry)> {
    let columns = if a.cfg_ablation { ColumnDomain::Database } else { ColumnDomain::Table };
    let mut model = SqlModel::new(load_schema(&a.schema)?, a.grammar_scope, columns)?;
    if let Some(p) = &a.params {
        model.grammar.learnable_groups.extend(load_params(p)?);
    }
    let reg = registry(&a.oracle, &model)?;
    Ok((model, reg))
}

fn run(cmd: Cmd) -> Result<bool> {
    match cmd {
        Cmd::Gen { model, nl, mode, values } => {
            let (m, reg) = load_model(&model)?;
            let r = m.generate(&nl, &reg, mode, &values)?;
            let out = serde_json::json!({
                "sql": r.sql,
                "probability": r.probability,
                "mode": format!("{:?}", r.mode).to_lowercase(),
                "tokens": r.tokens,
            });
            println!("{}", serde_json::to_string_pretty(&out)?);
        }
        Cmd::Score { model, nl, sql } => {
            let (m, reg) = load_model(&model)?;
            println!("{}", m.score(&nl, &reg, &sql)?);
        }
        Cmd::Train { schema, grammar_scope, dataset, epochs, lr, seed, batch_size, out, trace } => {
            let mut models = BTreeMap::new();
            for path in &schema {
                let s = Schema::from_json(&std::fs::read(path).with_context(|| format!("reading {}", path.display()))?)?;
                models.insert(s.db.clone(), SqlModel::dcg(s, grammar_scope)?);
            }
            let f = File::open(&dataset).with_context(|| format!("reading {}", dataset.display()))?;
            let records = read_records(BufReader::new(f))?;
            let mut per_db: BTreeMap<String, Vec<_>> = BTreeMap::new();
            for r in &records {
                let m = models.get(&r.db).with_context(|| format!("no schema for database {}", r.db))?;
                per_db.entry(r.db.clone()).or_default().push(m.example(&r.nl, &r.sql)?);
            }
            let cfg = OptimizerConfig { learning_rate: lr, batch_size, epochs, seed, ..Default::default() };
            let mut learned = LearnableParams::new();
            let mut trace_out = trace.map(|p| File::create(p).map(BufWriter::new)).transpose()?;
            for (db, examples) in &per_db {
                let m = models.get_mut(db).expect("grouped by known databases");
                let reg = learned_registry(&m.grammar);
                let report = fit(examples, &mut m.grammar, &reg, &cfg, &mut |_, _| {})?;
                eprintln!(
                    "{db}: {} examples, final loss {:.6}, {} quarantined",
                    examples.len(),
                    report.final_loss().unwrap_or(f64::NAN),
                    report.quarantined.len()
                );
                if let Some(w) = trace_out.as_mut() {
                    report.write_trace(w)?;
                }
                learned.extend(m.grammar.learnable_groups.clone());
            }
            serde_json::to_writer(BufWriter::new(File::create(&out)?), &learned)?;
            eprintln!("wrote {} groups to {}", learned.len(), out.display());
        }
        Cmd::Validate { db, sql_file } => {
            let checker = Checker::open(&db).with_context(|| format!("opening {}", db.display()))?;
            let f = File::open(&sql_file).with_context(|| format!("reading {}", sql_file.display()))?;
            let mut failures = 0;
            for line in BufReader::new(f).lines() {
                let sql = line?;
                match checker.check(&sql) {
                    Ok(()) => println!("PASS {sql}"),
                    Err(e) => {
                        failures += 1;
                        println!("FAIL {sql} -- {e}");
                    }
                }
            }
            return Ok(failures == 0);
        }
        Cmd::Enumerate { model, limit } => {
            let (m, _) = load_model(&model)?;
            let (seqs, truncated) = m.enumerate(limit)?;
            for s in &seqs {
                println!("{}", m.render(s, &[])?);
            }
            if truncated {
                eprintln!("stopped after {limit}; {} derivations in total", m.count()?);
            }
        }
        Cmd::Facts { schema } => {
            for f in schema_facts(&load_schema(&schema)?) {
                println!("{}.", f.0);
            }
        }
        Cmd::InitDb { schema, out, rows, seed } => {
            let s = load_schema(&schema)?;
            instantiate(&s, &out, rows, &mut StdRng::seed_from_u64(seed))?;
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse().cmd) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
