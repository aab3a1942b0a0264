//! Command-line harness: table/trace generation, group planning, engine
//! builds, classification, pipeline simulation, benchmark reports and
//! update replay. All I/O uses the line-JSON formats documented in
//! docs/formats.md. Errors print a machine-readable JSON object on
//! stderr and exit nonzero.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use rtst::engine::{Engine, UpdateKind};
use rtst::gen::{generate_packets, generate_table, generate_updates, GenConfig};
use rtst::io as rio;
use rtst::partition::partition;
use rtst::report::{bench, replay_updates, Report};
use rtst::sim::SimConfig;
use rtst::{FieldSchema, FlowTable};

#[derive(Parser)]
#[command(name = "rtst", version, about = "flow-table lookup engine and pipeline simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SchemaArg {
    /// `openflow356`, `fivetuple104`, or a path to a schema JSON file
    #[arg(long, default_value = "openflow356")]
    schema: String,
}

impl SchemaArg {
    fn load(&self) -> Result<FieldSchema> {
        match self.schema.as_str() {
            "openflow356" => Ok(FieldSchema::openflow_356()),
            "fivetuple104" => Ok(FieldSchema::five_tuple_104()),
            path => {
                let file = File::open(path)
                    .with_context(|| format!("cannot open schema file `{path}`"))?;
                serde_json::from_reader(BufReader::new(file))
                    .with_context(|| format!("cannot parse schema file `{path}`"))
            }
        }
    }
}

#[derive(Args, Clone)]
struct TableArg {
    /// flow-table file, one JSON flow per line
    #[arg(long)]
    table: PathBuf,
    #[command(flatten)]
    schema: SchemaArg,
}

impl TableArg {
    fn load(&self) -> Result<FlowTable> {
        let schema = self.schema.load()?;
        let file = File::open(&self.table)
            .with_context(|| format!("cannot open table `{}`", self.table.display()))?;
        Ok(rio::read_table(BufReader::new(file), &schema)?)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random flow table plus optional packet/update traces
    Gen {
        #[command(flatten)]
        schema: SchemaArg,
        #[arg(long, default_value_t = 1024)]
        flows: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// draw pairwise-disjoint source prefixes
        #[arg(long)]
        disjoint_sa: bool,
        /// smallest prefix length generated for SA/DA fields
        #[arg(long, default_value_t = 8)]
        min_prefix_len: u32,
        #[arg(long)]
        out_table: PathBuf,
        /// also emit this many packets (half drawn from flow ranges)
        #[arg(long, default_value_t = 0)]
        packets: usize,
        #[arg(long)]
        out_packets: Option<PathBuf>,
        /// also emit this many updates
        #[arg(long, default_value_t = 0)]
        updates: usize,
        #[arg(long)]
        out_updates: Option<PathBuf>,
    },
    /// Partition a table into groups of disjoint flows
    Plan {
        #[command(flatten)]
        table: TableArg,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the engine and print a summary report (no simulation)
    Build {
        #[command(flatten)]
        table: TableArg,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Classify packets against a table
    Classify {
        #[command(flatten)]
        table: TableArg,
        #[arg(long)]
        packets: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// include per-group visited-node traces
        #[arg(long)]
        traces: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the cycle-level pipeline simulator
    Sim {
        #[command(flatten)]
        table: TableArg,
        #[arg(long)]
        packets: PathBuf,
        /// update trace applied through write bubbles during the run
        #[arg(long)]
        updates: Option<PathBuf>,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 337.0)]
        clock_mhz: f64,
        #[arg(long, default_value_t = 2)]
        lanes: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build + simulate a clean run + report, optionally appending CSV
    Bench {
        #[command(flatten)]
        table: TableArg,
        #[arg(long)]
        packets: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 337.0)]
        clock_mhz: f64,
        #[arg(long, default_value_t = 2)]
        lanes: usize,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Apply an update trace, reporting per-op outcomes
    Replay {
        #[command(flatten)]
        table: TableArg,
        #[arg(long)]
        updates: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Dump the engine's trees as JSON (per level, in address order)
    Dump {
        #[command(flatten)]
        table: TableArg,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn out_writer(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create `{}`", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn read_lines(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("cannot open `{}`", path.display()))?,
    ))
}

#[allow(clippy::too_many_arguments)]
fn run_sim(
    table: TableArg,
    packets: PathBuf,
    updates: Option<PathBuf>,
    k: Option<usize>,
    clock_mhz: f64,
    lanes: usize,
    report_path: Option<PathBuf>,
    csv: Option<PathBuf>,
) -> Result<()> {
    let table = table.load()?;
    let pkts = rio::read_packets(read_lines(&packets)?, &table.schema)?;
    let ops = match &updates {
        Some(p) => rio::read_updates(read_lines(p)?, &table.schema)?,
        None => Vec::new(),
    };
    let cfg = SimConfig { clock_mhz, lanes };
    let (report, _) = bench(&table, &pkts, &ops, k, &cfg)?;
    let mut w = out_writer(&report_path)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    if let Some(csv_path) = csv {
        let add_header = !csv_path.exists();
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&csv_path)
            .with_context(|| format!("cannot open `{}`", csv_path.display()))?;
        if add_header {
            writeln!(f, "{}", Report::csv_header())?;
        }
        writeln!(f, "{}", report.csv_row())?;
    }
    Ok(())
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Gen {
            schema,
            flows,
            seed,
            disjoint_sa,
            min_prefix_len,
            out_table,
            packets,
            out_packets,
            updates,
            out_updates,
        } => {
            let mut cfg = GenConfig::new(schema.load()?, flows, seed);
            cfg.disjoint_sa = disjoint_sa;
            cfg.min_prefix_len = min_prefix_len;
            let table = generate_table(&cfg)?;
            let mut w = out_writer(&Some(out_table))?;
            rio::write_table(&mut w, &table)?;
            w.flush()?;
            if packets > 0 {
                let Some(path) = out_packets else {
                    bail!("--packets given without --out-packets");
                };
                let pkts = generate_packets(&table, packets, seed);
                let mut w = out_writer(&Some(path))?;
                rio::write_packets(&mut w, &table.schema, &pkts)?;
                w.flush()?;
            }
            if updates > 0 {
                let Some(path) = out_updates else {
                    bail!("--updates given without --out-updates");
                };
                let ops = generate_updates(&table, updates, seed);
                let mut w = out_writer(&Some(path))?;
                rio::write_updates(&mut w, &table.schema, &ops)?;
                w.flush()?;
            }
            Ok(())
        }
        Command::Plan { table, k, out } => {
            let table = table.load()?;
            let plan = partition(&table, k)?;
            let mut w = out_writer(&out)?;
            serde_json::to_writer_pretty(&mut w, &plan)?;
            writeln!(w)?;
            w.flush()?;
            Ok(())
        }
        Command::Build { table, k, out } => {
            let table = table.load()?;
            let engine = Engine::build_auto(&table, k)?;
            let report = Report::from_engine(&engine, None, 337.0);
            let mut w = out_writer(&out)?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
            w.flush()?;
            Ok(())
        }
        Command::Classify { table, packets, k, traces, out } => {
            let table = table.load()?;
            let engine = Engine::build_auto(&table, k)?;
            let mut w = out_writer(&out)?;
            for (i, line) in read_lines(&packets)?.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let pkt = rio::packet_from_line(&table.schema, &line, i + 1)?;
                let result =
                    if traces { engine.classify_traced(&pkt)? } else { engine.classify(&pkt)? };
                let matched = result.best.map(|m| {
                    serde_json::json!({
                        "flow_id": m.flow_id,
                        "priority": m.priority,
                        "action": engine.action_name(m.action_token),
                    })
                });
                let mut obj = serde_json::json!({ "packet": i, "matched": matched });
                if traces {
                    obj["per_group_traces"] = serde_json::to_value(&result.per_group_traces)?;
                }
                writeln!(w, "{obj}")?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Sim { table, packets, updates, k, clock_mhz, lanes, report } => {
            run_sim(table, packets, updates, k, clock_mhz, lanes, report, None)
        }
        Command::Bench { table, packets, k, clock_mhz, lanes, report, csv } => {
            run_sim(table, packets, None, k, clock_mhz, lanes, report, csv)
        }
        Command::Replay { table, updates, k, out } => {
            let table = table.load()?;
            let mut engine = Engine::build_auto(&table, k)?;
            let ops = rio::read_updates(read_lines(&updates)?, &table.schema)?;
            let outcomes = replay_updates(&mut engine, &ops);
            let mut w = out_writer(&out)?;
            for (op, outcome) in ops.iter().zip(&outcomes) {
                let mut obj = serde_json::to_value(outcome)?;
                obj["op"] = serde_json::json!(match op.kind() {
                    UpdateKind::Modify => "modify",
                    UpdateKind::Delete => "delete",
                    UpdateKind::Insert => "insert",
                });
                obj["flow_id"] = serde_json::json!(op.flow().id);
                writeln!(w, "{obj}")?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Dump { table, k, out } => {
            let table = table.load()?;
            let engine = Engine::build_auto(&table, k)?;
            let mut w = out_writer(&out)?;
            serde_json::to_writer_pretty(&mut w, &rio::dump_engine(&engine))?;
            writeln!(w)?;
            w.flush()?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let err = serde_json::json!({
                "error": e.to_string(),
                "chain": e.chain().skip(1).map(|c| c.to_string()).collect::<Vec<_>>(),
            });
            eprintln!("{err}");
            ExitCode::FAILURE
        }
    }
}
