use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use uqe::engine::{load_table_file, EngineConfig, EngineError, QueryOptions, QueryResult, Session};
use uqe::eval::{run_eval, EvalTask, Fixture};

#[derive(Parser)]
#[command(name = "uqe", version, about = "Query unstructured columns with SQL and a semantic oracle")]
struct Cli {
    /// Key-value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set seed=7`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Load a JSONL or CSV file into the catalog.
    Ingest {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        schema: PathBuf,
        /// Catalog name; defaults to the data file's stem.
        #[arg(long)]
        name: Option<String>,
    },
    /// Run one query.
    Query {
        /// Catalog table name, or a path to a stored table file.
        #[arg(long)]
        db: String,
        /// Query text, or a file containing it.
        #[arg(long)]
        uql: String,
        #[arg(long)]
        budget: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Print every candidate plan with its estimated cost.
        #[arg(long)]
        explain: bool,
        /// Evaluate by brute force over every row.
        #[arg(long)]
        exact: bool,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
        /// Print diagnostics after the result.
        #[arg(long)]
        diagnostics: bool,
        /// Write the search trace of a retrieval as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Score repeated runs of a fixture query against its exhaustive answer.
    Eval {
        #[arg(long, value_parser = parse_task)]
        task: EvalTask,
        #[arg(long)]
        fixture: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Interactive session; statements end with `;`.
    Repl {
        #[arg(long)]
        db: Option<String>,
    },
}

fn parse_task(s: &str) -> Result<EvalTask, String> {
    s.parse()
}

fn load_config(cli: &Cli) -> Result<EngineConfig, EngineError> {
    let (mut text, base) = match &cli.config {
        Some(p) => (
            std::fs::read_to_string(p).map_err(|e| EngineError::Config(format!("{}: {e}", p.display())))?,
            p.parent().map(Path::to_path_buf).unwrap_or_default(),
        ),
        None => (String::new(), PathBuf::from(".")),
    };
    for o in &cli.overrides {
        text.push('\n');
        text.push_str(o);
    }
    Ok(EngineConfig::parse(&text, &base)?)
}

fn open_db(session: &mut Session, db: &str) -> Result<(), EngineError> {
    let path = Path::new(db);
    if path.extension().is_some_and(|e| e == "json") && path.exists() {
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("db").to_string();
        session.register(&name, load_table_file(path)?);
        session.use_table(&name)
    } else {
        session.use_table(db)
    }
}

fn print_result(result: &QueryResult, format: Format, diagnostics: bool) -> Result<(), String> {
    let mut out = std::io::stdout().lock();
    let mut text = result.explain.clone().unwrap_or_default();
    match format {
        Format::Text => {
            text.push_str(&result.table.render_text());
            if diagnostics {
                text.push_str(&result.diagnostics_text());
            }
        }
        Format::Json => {
            let mut json = result.table.to_json();
            if diagnostics {
                json["diagnostics"] = result.diagnostics_json();
            }
            text.push_str(&serde_json::to_string_pretty(&json).map_err(|e| e.to_string())?);
            text.push('\n');
        }
        Format::Csv => text.push_str(&result.table.render_csv().map_err(|e| e.to_string())?),
    }
    out.write_all(text.as_bytes()).map_err(|e| e.to_string())?;
    if let Some(name) = &result.stored_as {
        eprintln!("stored as `{name}`");
    }
    Ok(())
}

/// The query with a caret under the byte the parser rejected.
fn pointed(uql: &str, err: &EngineError) -> Option<String> {
    let EngineError::Parse(e) = err else { return None };
    let offset = e.offset()?.min(uql.len());
    let line_start = uql[..offset].rfind('\n').map_or(0, |i| i + 1);
    let line_end = uql[offset..].find('\n').map_or(uql.len(), |i| offset + i);
    let col = uql[line_start..offset].chars().count();
    Some(format!("{}\n{}^", &uql[line_start..line_end], " ".repeat(col)))
}

fn repl(mut session: Session) -> Result<(), String> {
    let stdin = std::io::stdin();
    let mut buffer = String::new();
    let mut explain = false;
    print!("uqe> ");
    std::io::stdout().flush().ok();
    for line in stdin.lock().lines() {
        let line = line.map_err(|e| e.to_string())?;
        let trimmed = line.trim();
        if buffer.is_empty() && trimmed.starts_with('.') {
            match trimmed {
                ".quit" | ".exit" => return Ok(()),
                ".explain" => {
                    explain = !explain;
                    println!("explain {}", if explain { "on" } else { "off" });
                }
                ".tables" => {
                    for n in session.catalog().names() {
                        println!("{n}");
                    }
                }
                other => println!("unknown command `{other}` (.tables, .explain, .quit)"),
            }
        } else {
            buffer.push_str(&line);
            buffer.push('\n');
            if trimmed.ends_with(';') {
                let uql = buffer.trim().trim_end_matches(';').to_string();
                buffer.clear();
                let opts = QueryOptions {
                    explain,
                    ..QueryOptions::default()
                };
                match session.run_query(&uql, &opts) {
                    Ok(r) => print_result(&r, Format::Text, true)?,
                    Err(e) => {
                        if let Some(p) = pointed(&uql, &e) {
                            eprintln!("{p}");
                        }
                        eprintln!("error: {e}");
                    }
                }
            }
        }
        print!("{}", if buffer.is_empty() { "uqe> " } else { "...> " });
        std::io::stdout().flush().ok();
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), String> {
    let config = load_config(&cli).map_err(|e| e.to_string())?;
    match cli.command {
        Command::Ingest { data, schema, name } => {
            let name = name
                .or_else(|| data.file_stem().and_then(|s| s.to_str()).map(str::to_string))
                .ok_or("cannot derive a table name; pass --name")?;
            let mut session = Session::new(config).map_err(|e| e.to_string())?;
            let table = session.ingest(&name, &data, &schema).map_err(|e| e.to_string())?;
            println!(
                "ingested `{name}`: {} rows, {} columns",
                table.num_rows(),
                table.num_columns()
            );
        }
        Command::Query {
            db,
            uql,
            budget,
            seed,
            explain,
            exact,
            format,
            diagnostics,
            trace,
        } => {
            let uql = match Path::new(&uql) {
                p if p.is_file() => std::fs::read_to_string(p).map_err(|e| e.to_string())?,
                _ => uql,
            };
            let mut session = Session::new(config).map_err(|e| e.to_string())?;
            open_db(&mut session, &db).map_err(|e| e.to_string())?;
            let opts = QueryOptions {
                budget,
                seed,
                explain,
                exact,
            };
            let result = session.run_query(uql.trim(), &opts).map_err(|e| match pointed(uql.trim(), &e) {
                Some(p) => format!("{e}\n{p}"),
                None => e.to_string(),
            })?;
            print_result(&result, format, diagnostics)?;
            if let Some(path) = trace {
                let file = std::fs::File::create(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                result.write_trace_csv(file).map_err(|e| e.to_string())?;
            }
        }
        Command::Eval {
            task,
            fixture,
            format,
        } => {
            let f = Fixture::load(&fixture).map_err(|e| e.to_string())?;
            let report = run_eval(task, &f).map_err(|e| e.to_string())?;
            match format {
                Format::Json => println!("{}", serde_json::to_string_pretty(&report.to_json()).map_err(|e| e.to_string())?),
                _ => print!("{}", report.render_text()),
            }
        }
        Command::Repl { db } => {
            let mut session = Session::new(config).map_err(|e| e.to_string())?;
            if let Some(db) = db {
                open_db(&mut session, &db).map_err(|e| e.to_string())?;
            }
            repl(session)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
