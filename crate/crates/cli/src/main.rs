//! `tript`: generate or ingest triple data, build an index in one of the
//! three families, run queries against it, and reproduce the size and
//! I/O-cost experiments as CSV.
//!
//! Exit codes: 0 success, 1 runtime failure (I/O, bad data), 2 usage.

use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use tript_core::bench::{
    self, ExperimentConfig, K1Report, ResultRow, Source, DEFAULT_SIZES,
};
use tript_core::data::{
    clean, gen_realistic, gen_synthetic, parse_bgp, read_run, sample, write_run, GenSpec,
    IngestConfig, NtReader, RUN_MAGIC,
};
use tript_core::eval::{eval_bgp, open_index};
use tript_core::model::{stats, Graph, Triple};
use tript_core::pager::{Family, PageStore};
use tript_core::baselines::{HexIndex, MapIndex};
use tript_core::triplet::TripletIndex;

/// Cache capacity, in blocks, when running unmetered.
const CACHE_BLOCKS: usize = 4096;

#[derive(Parser)]
#[command(name = "tript", version, about = "Paged triple indexes: build, query, benchmark")]
struct Cli {
    /// Seed for every random choice (generation, sampling, benchmarks).
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,

    /// Store block size in bytes (power of two, at least 512).
    #[arg(long, global = true, default_value_t = 8192)]
    block_size: u32,

    /// Fixed atom field width; longer atoms fail index builds.
    #[arg(long, global = true, default_value_t = 64)]
    atom_width: u16,

    /// Count every block read (the default).
    #[arg(long, global = true, overrides_with = "unmetered")]
    metered: bool,

    /// Keep an in-memory block cache while querying; the meter then counts
    /// only cache misses. Benchmarks ignore this and stay metered.
    #[arg(long, global = true)]
    unmetered: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic graph and write it as a canonical run file.
    Gen {
        /// "1" (uniform pool), "2" (distinct positions), or "realistic".
        #[arg(long, default_value = "1")]
        variant: String,
        /// Number of triples.
        #[arg(short)]
        n: u64,
        /// Output run file.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Parse N-Triples, optionally sample, clean, and write a run file.
    Ingest {
        /// Input N-Triples file.
        input: PathBuf,
        /// Output run file.
        #[arg(short, long)]
        out: PathBuf,
        /// Atom byte budget; defaults to --atom-width.
        #[arg(long)]
        max_atom_len: Option<usize>,
        /// Keep only a uniform sample of this many triples.
        #[arg(long)]
        sample: Option<u64>,
    },
    /// Print cardinality statistics for a run file or N-Triples file.
    Stats { input: PathBuf },
    /// Build an index over a run file or N-Triples file.
    Build {
        /// Index family: triplet, map, or hex.
        #[arg(long, value_parser = parse_family)]
        family: Family,
        /// Input data file.
        input: PathBuf,
        /// Output index file.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Evaluate a query against a built index; rows go to stdout.
    Query {
        /// Index file from `build`.
        index: PathBuf,
        /// Query text, e.g. "SELECT ?x WHERE { ?x type MP3 }".
        query: String,
        /// Print the execution trace to stderr.
        #[arg(long)]
        explain: bool,
    },
    /// Run an experiment and emit CSV.
    Bench {
        #[command(subcommand)]
        which: BenchCmd,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Allocated blocks per built index.
    Size(BenchArgs),
    /// Block reads for fully bound single-triple lookups.
    K0(BenchArgs),
    /// Block reads for two-pattern joins in four scenario shapes.
    K1(BenchArgs),
}

#[derive(Args)]
struct BenchArgs {
    /// Dataset: "1", "2", "both" synthetic variants, or "realistic".
    /// Ignored when --input is given.
    #[arg(long, default_value = "both")]
    variant: String,
    /// Run file to benchmark instead of generated data.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Comma-separated graph-size checkpoints.
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<u64>,
    /// Measurements per cell.
    #[arg(long, default_value_t = 10)]
    trials: u32,
    /// Write the CSV here instead of stdout.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn parse_family(s: &str) -> Result<Family, String> {
    s.parse().map_err(|e| format!("{e}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

/// Reads a graph from either format: run files are recognized by their
/// magic, anything else parses as N-Triples (malformed lines are counted
/// and skipped, reported on stderr).
fn read_graph(path: &Path) -> Result<Graph> {
    let mut head = [0u8; 8];
    let n = File::open(path)
        .with_context(|| format!("opening {}", path.display()))?
        .read(&mut head)?;
    if n == 8 && &head == RUN_MAGIC {
        let (g, _) = read_run(path)?;
        return Ok(g);
    }
    let file = File::open(path)?;
    let mut reader = NtReader::new(BufReader::new(file));
    let mut triples: Vec<Triple> = Vec::new();
    for t in reader.by_ref() {
        triples.push(t?);
    }
    if reader.skipped() > 0 {
        eprintln!("skipped {} malformed line(s)", reader.skipped());
    }
    Ok(Graph::from_triples(triples))
}

fn run(cli: Cli) -> Result<()> {
    match &cli.cmd {
        Cmd::Gen { variant, n, out } => {
            let g = match variant.as_str() {
                "realistic" => gen_realistic(*n, cli.seed)?,
                v => {
                    let variant: u8 = v
                        .parse()
                        .map_err(|_| anyhow::anyhow!("variant must be 1, 2, or realistic"))?;
                    gen_synthetic(&GenSpec {
                        n: *n,
                        variant,
                        seed: cli.seed,
                    })?
                }
            };
            write_run(out, &g, cli.atom_width)?;
            println!("{} triples -> {}", g.len(), out.display());
        }
        Cmd::Ingest {
            input,
            out,
            max_atom_len,
            sample: keep,
        } => {
            let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
            let mut reader = NtReader::new(BufReader::new(file));
            let mut triples: Vec<Triple> = Vec::new();
            for t in reader.by_ref() {
                triples.push(t?);
            }
            let skipped = reader.skipped();
            let cfg = IngestConfig {
                max_atom_len: max_atom_len.unwrap_or(cli.atom_width as usize),
                sample_size: *keep,
                seed: cli.seed,
            };
            let sampled = match cfg.sample_size {
                Some(k) => sample(triples, k, cfg.seed),
                None => triples,
            };
            let (g, report) = clean(sampled, &cfg);
            write_run(out, &g, cli.atom_width)?;
            println!(
                "parsed {} (skipped {skipped}), kept {} ({} truncated, {} duplicates) -> {}",
                report.input + skipped,
                g.len(),
                report.truncated,
                report.duplicates,
                out.display()
            );
        }
        Cmd::Stats { input } => {
            let st = stats(&read_graph(input)?);
            println!("triples: {}", st.triples);
            println!("subjects: {}", st.subjects);
            println!("predicates: {}", st.predicates);
            println!("objects: {}", st.objects);
            println!("atoms: {}", st.atoms);
            println!("subject&object: {}", st.subject_object);
            println!("subject&predicate: {}", st.subject_predicate);
            println!("predicate&object: {}", st.predicate_object);
            println!("avg atom bytes: {:.2}", st.avg_atom_len);
        }
        Cmd::Build { family, input, out } => {
            let g = read_graph(input)?;
            let mut store = PageStore::create(out, cli.block_size)?;
            match family {
                Family::Triplet => {
                    TripletIndex::build(&mut store, &g, cli.atom_width)?;
                }
                Family::Map => {
                    MapIndex::build(&mut store, &g, cli.atom_width)?;
                }
                Family::Hex => {
                    HexIndex::build(&mut store, &g, cli.atom_width)?;
                }
            }
            println!(
                "{} index over {} triples: {} blocks of {} -> {}",
                family.as_str(),
                g.len(),
                store.stats().allocated,
                cli.block_size,
                out.display()
            );
        }
        Cmd::Query {
            index,
            query,
            explain,
        } => {
            let mut store = PageStore::open(index)?;
            if cli.unmetered {
                store.set_cache(Some(CACHE_BLOCKS));
            }
            let idx = open_index(&store)?;
            let bgp = parse_bgp(query)?;
            let result = eval_bgp(&mut store, &idx, &bgp)?;
            if *explain {
                eprintln!("{}", result.explain);
            }
            let mut stdout = std::io::stdout().lock();
            for row in &result.rows {
                let line: Vec<String> = bgp
                    .select
                    .iter()
                    .map(|v| row[v.as_str()].to_string())
                    .collect();
                writeln!(stdout, "{}", line.join(","))?;
            }
        }
        Cmd::Bench { which } => {
            let (kind, args) = match which {
                BenchCmd::Size(a) => ("size", a),
                BenchCmd::K0(a) => ("k0", a),
                BenchCmd::K1(a) => ("k1", a),
            };
            let source = match (&args.input, args.variant.as_str()) {
                (Some(path), _) => Source::RunFile(path.clone()),
                (None, "both") => Source::Synthetic,
                (None, "realistic") => Source::Realistic,
                (None, v) => {
                    let v: u8 = v
                        .parse()
                        .map_err(|_| anyhow::anyhow!("variant must be 1, 2, both, or realistic"))?;
                    Source::SyntheticVariant(v)
                }
            };
            let cfg = ExperimentConfig {
                source,
                sizes: if args.sizes.is_empty() {
                    DEFAULT_SIZES.to_vec()
                } else {
                    args.sizes.clone()
                },
                trials: args.trials,
                seed: cli.seed,
                block_size: cli.block_size,
                atom_width: cli.atom_width,
                families: vec![Family::Triplet, Family::Hex, Family::Map],
            };
            let dir = tempfile::tempdir().context("creating a scratch directory")?;
            let rows: Vec<ResultRow> = match kind {
                "size" => bench::run_size(dir.path(), &cfg)?,
                "k0" => bench::run_k0(dir.path(), &cfg)?,
                _ => {
                    let K1Report { rows, notes } = bench::run_k1(dir.path(), &cfg)?;
                    for note in notes {
                        eprintln!("note: {note}");
                    }
                    rows
                }
            };
            let csv = bench::to_csv(&bench::with_averages(rows));
            match &args.out {
                Some(path) => std::fs::write(path, csv)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{csv}"),
            }
        }
    }
    Ok(())
}
