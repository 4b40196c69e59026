//! Command-line front end: encode, decode, simulate, verify, and batch-sweep
//! sparse matrix stream designs.
//!
//! Exit codes: 0 success, 1 input or usage error, 2 verification mismatch.
//! Set SPARSESPACE_LOG to any non-empty value (other than "0") for progress
//! diagnostics on stderr.

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use sparsespace::designs::{
    design_blocked_spmv, design_cisr_spmv, BlockedDesignParams, CisrDesignParams,
    DesignDescriptor, DesignKind,
};
use sparsespace::inverse::{decode, decoded_slot_rows};
use sparsespace::matrix::{random_sparse, spmv_oracle, DenseMatrix, DenseVector};
use sparsespace::mtx::{parse_matrix_market, serialize_matrix_market};
use sparsespace::sim::{stats, Trace};
use sparsespace::transform::{encode, EncodedMatrix, Structure};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(
    name = "sparsespace",
    version,
    about = "Sparse matrices as invertible transformation chains, simulated as streaming SpMV designs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Encode a Matrix Market file into machine streams (JSON)
    Encode(EncodeArgs),
    /// Decode an encoded JSON file back to Matrix Market
    Decode(DecodeArgs),
    /// Simulate a design over a matrix and print y, optionally verifying
    /// against the dense oracle
    Spmv(SpmvArgs),
    /// Sweep generated matrices across a design grid and print a CSV table
    Bench(BenchArgs),
    /// Pretty-print streams, structure, and decoded row indices side by side
    Inspect(InspectArgs),
}

#[derive(Args, Clone)]
struct DesignArgs {
    /// Design name: cisr or blocked
    #[arg(long, default_value = "cisr")]
    design: String,
    /// Machine count (default: 4 for cisr, 2 for blocked)
    #[arg(short = 'm', long)]
    machines: Option<usize>,
    /// Block size k for the blocked design; each block holds k/2 values
    #[arg(short = 'k', long)]
    k: Option<usize>,
    /// Fused accumulator count for the cisr design (default: 2 when the
    /// machine count is even, else 1)
    #[arg(long)]
    adders: Option<usize>,
    /// Linear-array levels for the blocked design
    #[arg(long)]
    levels: Option<usize>,
}

impl DesignArgs {
    fn descriptor(&self) -> Result<DesignDescriptor> {
        let kind = DesignKind::from_str(&self.design)?;
        let d = match kind {
            DesignKind::Cisr => {
                let machines = self.machines.unwrap_or(4);
                let adders = self
                    .adders
                    .unwrap_or(if machines.is_multiple_of(2) { 2 } else { 1 });
                DesignDescriptor::Cisr(CisrDesignParams { machines, adders })
            }
            DesignKind::Blocked => DesignDescriptor::Blocked(BlockedDesignParams {
                k: self.k.unwrap_or(4),
                machines: self.machines.unwrap_or(2),
                linear_array_levels: self.levels.unwrap_or(4),
            }),
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Args)]
struct EncodeArgs {
    /// Matrix Market input file
    matrix: PathBuf,
    #[command(flatten)]
    design: DesignArgs,
    /// Output file (stdout when omitted)
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    /// Encoded matrix JSON file
    encoded: PathBuf,
    /// Output file (stdout when omitted)
    #[arg(short = 'o', long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SpmvArgs {
    /// Matrix Market input file
    matrix: PathBuf,
    /// x vector file, one value per line
    #[arg(long, conflicts_with = "ones")]
    x: Option<PathBuf>,
    /// Use an all-ones x vector
    #[arg(long)]
    ones: bool,
    #[command(flatten)]
    design: DesignArgs,
    /// Compare the simulated y against the dense oracle
    #[arg(long)]
    verify: bool,
    /// Output format: csv (y as CSV on stdout, stats JSON on stderr) or
    /// json (single document on stdout)
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Args)]
struct BenchArgs {
    /// Generated matrix rows
    #[arg(long, default_value_t = 64)]
    rows: usize,
    /// Generated matrix columns
    #[arg(long, default_value_t = 64)]
    cols: usize,
    /// Comma-separated density grid
    #[arg(long, default_value = "0.01,0.05,0.2")]
    densities: String,
    /// Comma-separated machine-count grid
    #[arg(long, default_value = "1,2,4")]
    machines: String,
    /// Comma-separated design names
    #[arg(long, default_value = "cisr,blocked")]
    designs: String,
    /// Comma-separated k grid for blocked rows
    #[arg(long, default_value = "4")]
    ks: String,
    /// Generator seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct InspectArgs {
    /// Matrix Market file (encoded with the design flags) or an encoded
    /// matrix JSON file (used as is)
    input: PathBuf,
    #[command(flatten)]
    design: DesignArgs,
}

fn verbose() -> bool {
    std::env::var("SPARSESPACE_LOG")
        .map(|v| !v.is_empty() && v != "0")
        .unwrap_or(false)
}

fn vlog(msg: impl std::fmt::Display) {
    if verbose() {
        eprintln!("sparsespace: {msg}");
    }
}

fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let m = parse_matrix_market(&text).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    vlog(format!(
        "read {}x{} matrix with {} nonzeros from {}",
        m.n_rows(),
        m.n_cols(),
        m.nnz(),
        path.display()
    ));
    Ok(m)
}

fn read_x(path: &Path) -> Result<DenseVector> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        entries.push(
            t.parse::<f64>()
                .map_err(|_| anyhow!("{}: line {}: cannot parse `{t}`", path.display(), n + 1))?,
        );
    }
    Ok(DenseVector::new(entries))
}

fn write_out(output: Option<&Path>, text: &str) -> Result<()> {
    match output {
        Some(path) => std::fs::write(path, text)
            .with_context(|| format!("cannot write {}", path.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn encode_with(descriptor: &DesignDescriptor, a: &DenseMatrix) -> Result<EncodedMatrix> {
    let spec = descriptor.representation();
    let e = encode(a, &spec)?;
    vlog(format!(
        "encoded as `{}`: {} machines, stream length {}",
        spec.name, e.machines, e.stream_length
    ));
    Ok(e)
}

fn cmd_encode(args: &EncodeArgs) -> Result<ExitCode> {
    let descriptor = args.design.descriptor()?;
    let a = read_matrix(&args.matrix)?;
    let e = encode_with(&descriptor, &a)?;
    let mut json = e.to_json();
    json.push('\n');
    write_out(args.output.as_deref(), &json)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_decode(args: &DecodeArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.encoded)
        .with_context(|| format!("cannot read {}", args.encoded.display()))?;
    let e = EncodedMatrix::from_json(&text)
        .map_err(|err| anyhow!("{}: invalid encoded matrix: {err}", args.encoded.display()))?;
    let a = decode(&e).map_err(|err| anyhow!("{}: {err}", args.encoded.display()))?;
    write_out(args.output.as_deref(), &serialize_matrix_market(&a))?;
    Ok(ExitCode::SUCCESS)
}

fn run_design(
    descriptor: &DesignDescriptor,
    a: &DenseMatrix,
    x: &DenseVector,
) -> Result<(DenseVector, Trace)> {
    let out = match descriptor {
        DesignDescriptor::Cisr(p) => design_cisr_spmv(a, x, *p)?,
        DesignDescriptor::Blocked(p) => design_blocked_spmv(a, x, *p)?,
    };
    Ok(out)
}

/// First index where the simulated result leaves the tolerance: exact for
/// integer data, 1e-6 relative per component otherwise.
fn first_mismatch(y: &DenseVector, oracle: &DenseVector, integer_data: bool) -> Option<usize> {
    y.as_slice()
        .iter()
        .zip(oracle.as_slice())
        .position(|(&got, &want)| {
            if integer_data || want == 0.0 {
                got != want
            } else {
                (got - want).abs() > 1e-6 * want.abs()
            }
        })
}

fn y_csv(y: &DenseVector) -> String {
    let mut out = String::from("i,y\n");
    for (i, v) in y.as_slice().iter().enumerate() {
        let _ = writeln!(out, "{i},{v}");
    }
    out
}

fn cmd_spmv(args: &SpmvArgs) -> Result<ExitCode> {
    let descriptor = args.design.descriptor()?;
    if !args.ones && args.x.is_none() {
        bail!("provide an x vector with --x <file> or use --ones");
    }
    let a = read_matrix(&args.matrix)?;
    let x = match &args.x {
        Some(path) => read_x(path)?,
        None => DenseVector::ones(a.n_cols()),
    };
    if x.len() != a.n_cols() {
        bail!(
            "x has length {} but the matrix has {} columns",
            x.len(),
            a.n_cols()
        );
    }

    let (y, trace) = run_design(&descriptor, &a, &x)?;
    let run_stats = stats(&trace);

    let verified = if args.verify {
        let oracle = spmv_oracle(&a, &x)?;
        let integer_data = a.is_integer_valued() && x.is_integer_valued();
        if let Some(i) = first_mismatch(&y, &oracle, integer_data) {
            eprintln!(
                "verification failed at index {i}: simulated {} vs oracle {}",
                y.get(i),
                oracle.get(i)
            );
            return Ok(ExitCode::from(2));
        }
        vlog("verified against the dense oracle");
        true
    } else {
        false
    };

    match args.format.as_str() {
        "csv" => {
            print!("{}", y_csv(&y));
            eprintln!("{}", serde_json::to_string(&run_stats)?);
        }
        "json" => {
            let doc = serde_json::json!({
                "y": y.as_slice(),
                "stats": run_stats,
                "verified": verified,
            });
            println!("{}", serde_json::to_string_pretty(&doc)?);
        }
        other => bail!("unknown format `{other}` (expected csv or json)"),
    }
    Ok(ExitCode::SUCCESS)
}

fn parse_list<T: FromStr>(what: &str, list: &str) -> Result<Vec<T>> {
    list.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| anyhow!("cannot parse {what} entry `{s}`"))
        })
        .collect()
}

fn cmd_bench(args: &BenchArgs) -> Result<ExitCode> {
    let densities: Vec<f64> = parse_list("density", &args.densities)?;
    let machine_grid: Vec<usize> = parse_list("machines", &args.machines)?;
    let design_names: Vec<String> = args
        .designs
        .split(',')
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect();
    let ks: Vec<usize> = parse_list("k", &args.ks)?;
    for name in &design_names {
        DesignKind::from_str(name)?;
    }

    // One row per configuration, ordered by configuration key.
    let mut configs: Vec<(String, f64, usize, Option<usize>)> = Vec::new();
    for name in &design_names {
        for &density in &densities {
            for &m in &machine_grid {
                match DesignKind::from_str(name)? {
                    DesignKind::Cisr => configs.push((name.clone(), density, m, None)),
                    DesignKind::Blocked => {
                        for &k in &ks {
                            configs.push((name.clone(), density, m, Some(k)));
                        }
                    }
                }
            }
        }
    }
    configs.sort_by(|a, b| {
        (&a.0, &a.2, a.3)
            .cmp(&(&b.0, &b.2, b.3))
            .then(a.1.total_cmp(&b.1))
    });

    let mut out =
        String::from("matrix,design,m,k,stream_length,padded_slots,utilization,degenerate\n");
    for (design, density, m, k) in configs {
        let a = random_sparse(args.rows, args.cols, density, args.seed);
        let label = format!("r{}c{}d{}s{}", args.rows, args.cols, density, args.seed);
        let descriptor = match DesignKind::from_str(&design)? {
            DesignKind::Cisr => DesignDescriptor::Cisr(CisrDesignParams {
                machines: m,
                adders: 1,
            }),
            DesignKind::Blocked => DesignDescriptor::Blocked(BlockedDesignParams {
                k: k.expect("blocked rows carry k"),
                machines: m,
                linear_array_levels: 4,
            }),
        };
        descriptor.validate()?;
        let e = encode_with(&descriptor, &a)?;
        let total = e.machines * e.stream_length;
        let nnz = e.nnz();
        let degenerate = total == 0;
        let utilization = if degenerate {
            0.0
        } else {
            nnz as f64 / total as f64
        };
        let _ = writeln!(
            out,
            "{label},{design},{m},{},{},{},{utilization},{degenerate}",
            k.map(|k| k.to_string()).unwrap_or_default(),
            e.stream_length,
            total - nnz,
        );
    }
    print!("{out}");
    Ok(ExitCode::SUCCESS)
}

fn inspect_report(e: &EncodedMatrix) -> Result<String> {
    let decoded = decoded_slot_rows(e)?;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "machines: {}  stream_length: {}  nnz: {}  origin: {}x{}",
        e.machines,
        e.stream_length,
        e.nnz(),
        e.origin_dims.0,
        e.origin_dims.1
    );
    match &e.structure {
        Structure::RowLen(row_len) => {
            for (m, lens) in row_len.iter().enumerate() {
                let _ = writeln!(out, "structure row_len[{m}]: {lens:?}");
            }
        }
        Structure::RowBlocks {
            blocks_per_row,
            factor,
        } => {
            let _ = writeln!(
                out,
                "structure row_blocks (factor {factor}): {blocks_per_row:?}"
            );
        }
    }
    for m in 0..e.machines {
        let _ = writeln!(out, "machine {m}:");
        let _ = writeln!(
            out,
            "  {:>4}  {:>10}  {:>5}  {:>8}  {:>5}",
            "pos", "value", "idx", "origin", "row"
        );
        for pos in 0..e.stream_length {
            let origin = match e.provenance[m][pos].coords() {
                Some((i, j)) => format!("({i},{j})"),
                None => "pad".to_string(),
            };
            let _ = writeln!(
                out,
                "  {:>4}  {:>10}  {:>5}  {:>8}  {:>5}",
                pos, e.values[m][pos], e.col_idx[m][pos], origin, decoded[m][pos]
            );
        }
    }
    Ok(out)
}

fn cmd_inspect(args: &InspectArgs) -> Result<ExitCode> {
    let e = if args.input.extension().is_some_and(|ext| ext == "json") {
        let text = std::fs::read_to_string(&args.input)
            .with_context(|| format!("cannot read {}", args.input.display()))?;
        EncodedMatrix::from_json(&text)
            .map_err(|err| anyhow!("{}: invalid encoded matrix: {err}", args.input.display()))?
    } else {
        let descriptor = args.design.descriptor()?;
        let a = read_matrix(&args.input)?;
        encode_with(&descriptor, &a)?
    };
    print!("{}", inspect_report(&e)?);
    Ok(ExitCode::SUCCESS)
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::Encode(args) => cmd_encode(args),
        Command::Decode(args) => cmd_decode(args),
        Command::Spmv(args) => cmd_spmv(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Inspect(args) => cmd_inspect(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.kind() == ErrorKind::DisplayHelp || e.kind() == ErrorKind::DisplayVersion => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
