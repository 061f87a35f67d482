//! `selfext` command-line front end.
//!
//! Every subcommand renders its whole output in memory and then writes it to
//! `--output` (or stdout), so a failed run never leaves a partial file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{
    toy_forward, RopeConfig, ToyDecoderConfig, ToyDecoderWeights, DEFAULT_BASE,
};
use crate::error::{Error, Result};
use crate::grouping::GroupingFunction;
use crate::posmap::{
    assign_positions, literal_capacity_report, max_context_length, PositionAssignment,
};

pub const DEFAULT_CAPACITY: usize = 32;
pub const DEFAULT_RATE: f64 = 0.02;
pub const DEFAULT_WINDOW: usize = 1024;
pub const DEFAULT_TRAIN_LEN: usize = 4096;

#[derive(Debug, Parser)]
#[command(name = "selfext", version, about = "Grouped attention position tools")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the token → group-index map as JSON.
    Map(MapArgs),
    /// Write the relative-position matrix (CSV) or the key/query assignment (JSON).
    Relpos(RelposArgs),
    /// Tabulate the maximum context length for one or more grouping functions.
    Capacity(CapacityArgs),
    /// Compare constant and logistic grouping at a shared window and length.
    Compare(CompareArgs),
    /// Per-position NLL of a seeded toy decoder, plain vs merged attention.
    Toynll(ToynllArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Grouping function selection. At most one of the three modes may be given;
/// with none, logistic growth with the default capacity and rate is used.
#[derive(Debug, Clone, Default, Args)]
pub struct GroupingArgs {
    /// Logistic capacity C (largest group size).
    #[arg(long)]
    pub capacity: Option<usize>,
    /// Logistic growth rate r.
    #[arg(long)]
    pub rate: Option<f64>,
    /// Constant group size G (Self-Extend grouping).
    #[arg(long)]
    pub constant: Option<usize>,
    /// Explicit group sizes, comma separated; the last repeats.
    #[arg(long, value_delimiter = ',')]
    pub tabulated: Option<Vec<usize>>,
}

impl GroupingArgs {
    pub fn resolve(&self) -> Result<GroupingFunction> {
        let logistic = self.capacity.is_some() || self.rate.is_some();
        let modes = [logistic, self.constant.is_some(), self.tabulated.is_some()];
        if modes.iter().filter(|&&m| m).count() > 1 {
            return Err(Error::Usage(
                "choose one of --capacity/--rate, --constant or --tabulated".into(),
            ));
        }
        if let Some(size) = self.constant {
            return GroupingFunction::constant(size);
        }
        if let Some(sizes) = &self.tabulated {
            return GroupingFunction::tabulated(sizes.clone());
        }
        GroupingFunction::logistic(
            self.capacity.unwrap_or(DEFAULT_CAPACITY),
            self.rate.unwrap_or(DEFAULT_RATE),
        )
    }
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; standard output when omitted.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[command(flatten)]
    pub grouping: GroupingArgs,
    /// Sequence length.
    #[arg(long = "n")]
    pub n: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct RelposArgs {
    #[command(flatten)]
    pub grouping: GroupingArgs,
    #[arg(long = "n")]
    pub n: usize,
    /// Neighbor window W.
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    /// Pretraining context length L.
    #[arg(long = "train-len", default_value_t = DEFAULT_TRAIN_LEN)]
    pub train_len: usize,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    #[command(flatten)]
    pub grouping: GroupingArgs,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long = "train-len", default_value_t = DEFAULT_TRAIN_LEN)]
    pub train_len: usize,
    /// Values substituted for C (logistic) or G (constant), one row each.
    #[arg(long, value_delimiter = ',')]
    pub sweep: Option<Vec<usize>>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Logistic capacity C.
    #[arg(long, default_value_t = DEFAULT_CAPACITY)]
    pub capacity: usize,
    /// Logistic growth rate r.
    #[arg(long, default_value_t = DEFAULT_RATE)]
    pub rate: f64,
    /// Constant group size G; defaults to C.
    #[arg(long)]
    pub constant: Option<usize>,
    #[arg(long = "n")]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long = "train-len", default_value_t = DEFAULT_TRAIN_LEN)]
    pub train_len: usize,
    #[command(flatten)]
    pub out: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ToynllArgs {
    #[command(flatten)]
    pub grouping: GroupingArgs,
    /// Number of tokens to generate when --tokens is not given.
    #[arg(long = "n", default_value_t = 64)]
    pub n: usize,
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    pub window: usize,
    #[arg(long = "train-len", default_value_t = DEFAULT_TRAIN_LEN)]
    pub train_len: usize,
    /// Seed for weights and generated tokens.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 256)]
    pub vocab: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 2)]
    pub heads: usize,
    #[arg(long = "head-dim", default_value_t = 16)]
    pub head_dim: usize,
    /// RoPE base b.
    #[arg(long, default_value_t = DEFAULT_BASE)]
    pub base: f64,
    /// Load weights from this file instead of generating them.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Also write the weights in use to this file.
    #[arg(long = "save-weights")]
    pub save_weights: Option<PathBuf>,
    /// Token ids separated by whitespace or commas.
    #[arg(long)]
    pub tokens: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutputArgs,
}

/// Parses `args` (program name first) and runs the selected subcommand.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help / --version
            e.print()?;
            return Ok(());
        }
        Err(e) => return Err(usage_error(&e)),
    };
    execute(&cli.command)
}

fn usage_error(e: &clap::Error) -> Error {
    let text = e.to_string();
    let line = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("invalid arguments")
        .trim_start_matches("error: ");
    Error::Usage(line.to_string())
}

pub fn execute(command: &Command) -> Result<()> {
    let (text, out) = match command {
        Command::Map(args) => (cmd_map(args)?, &args.out),
        Command::Relpos(args) => (cmd_relpos(args)?, &args.out),
        Command::Capacity(args) => (cmd_capacity(args)?, &args.out),
        Command::Compare(args) => (cmd_compare(args)?, &args.out),
        Command::Toynll(args) => (cmd_toynll(args)?, &args.out),
    };
    emit(&text, out.output.as_deref())
}

fn emit(text: &str, path: Option<&Path>) -> Result<()> {
    match path {
        Some(path) => std::fs::write(path, text)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
        }
    }
    Ok(())
}

pub fn cmd_map(args: &MapArgs) -> Result<String> {
    let function = args.grouping.resolve()?;
    Ok(function.build_map_parallel(args.n).to_json() + "\n")
}

pub fn cmd_relpos(args: &RelposArgs) -> Result<String> {
    let function = args.grouping.resolve()?;
    let assignment = assign_positions(args.n, args.window, args.train_len, &function)?;
    Ok(match args.format {
        Format::Json => assignment.to_json() + "\n",
        Format::Csv => relpos_csv(&assignment),
    })
}

/// Row `i` holds keys `0..=i`; the upper triangle is left as empty cells.
pub fn relpos_csv(assignment: &PositionAssignment) -> String {
    let n = assignment.len();
    let mut out = String::new();
    for (i, row) in assignment.rel_pos_matrix().into_iter().enumerate() {
        let cells: Vec<String> = row.iter().map(usize::to_string).collect();
        out.push_str(&cells.join(","));
        out.push_str(&",".repeat(n - 1 - i));
        out.push('\n');
    }
    out
}

#[derive(Debug, Serialize)]
struct CapacityRow {
    scheme: &'static str,
    function: GroupingFunction,
    train_len: usize,
    window: usize,
    max_context_length: usize,
    literal_formula: usize,
    difference: i64,
}

fn scheme_name(function: &GroupingFunction) -> &'static str {
    match function.rule() {
        crate::grouping::Rule::Logistic { .. } => "self",
        crate::grouping::Rule::Constant { .. } => "se",
        crate::grouping::Rule::Tabulated { .. } => "tabulated",
    }
}

pub fn cmd_capacity(args: &CapacityArgs) -> Result<String> {
    let base = args.grouping.resolve()?;
    let functions = match &args.sweep {
        None => vec![base],
        Some(values) => values
            .iter()
            .map(|&v| match base.rule() {
                crate::grouping::Rule::Logistic { growth_rate, .. } => {
                    GroupingFunction::logistic(v, *growth_rate)
                }
                crate::grouping::Rule::Constant { .. } => GroupingFunction::constant(v),
                crate::grouping::Rule::Tabulated { .. } => Err(Error::Usage(
                    "--sweep applies to --capacity or --constant, not --tabulated".into(),
                )),
            })
            .collect::<Result<Vec<_>>>()?,
    };
    let rows = functions
        .into_iter()
        .map(|function| {
            let report = literal_capacity_report(args.train_len, args.window, &function)?;
            Ok(CapacityRow {
                scheme: scheme_name(&function),
                function,
                train_len: args.train_len,
                window: args.window,
                max_context_length: report.simulated,
                literal_formula: report.literal_formula,
                difference: report.difference,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(match args.format {
        Format::Json => serde_json::to_string(&rows)? + "\n",
        Format::Csv => {
            let mut out = String::from(
                "scheme,function,train_len,window,max_context_length,literal_formula,difference\n",
            );
            for r in &rows {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    r.scheme,
                    r.function,
                    r.train_len,
                    r.window,
                    r.max_context_length,
                    r.literal_formula,
                    r.difference
                )
                .expect("writing to a String");
            }
            out
        }
    })
}

/// Structural summary of one scheme at a fixed sequence length.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeReport {
    pub scheme: &'static str,
    pub function: GroupingFunction,
    pub max_context_length: usize,
    pub exceeds_capacity: bool,
    pub max_rel_pos: Option<usize>,
    pub groups: usize,
    pub intermediate_groups: usize,
    pub intermediate_fraction: f64,
    /// Group size → number of groups of that size present in the map.
    pub group_size_histogram: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareReport {
    pub n: usize,
    pub window: usize,
    pub train_len: usize,
    pub schemes: Vec<SchemeReport>,
    pub warning: Option<String>,
}

/// Summarizes `function` at length `n`. A group is intermediate when its size
/// is below the function's capacity.
pub fn scheme_report(
    n: usize,
    window: usize,
    train_len: usize,
    function: &GroupingFunction,
) -> Result<SchemeReport> {
    let assignment = assign_positions(n, window, train_len, function)?;
    let capacity = max_context_length(train_len, window, function)?;
    let groups = assignment.map().max_group().map_or(0, |g| g + 1);
    let mut histogram = BTreeMap::new();
    for j in 0..groups {
        *histogram.entry(function.size_of_group(j)).or_insert(0) += 1;
    }
    let intermediate_groups: usize = histogram
        .range(..function.capacity())
        .map(|(_, count)| count)
        .sum();
    Ok(SchemeReport {
        scheme: scheme_name(function),
        function: function.clone(),
        max_context_length: capacity,
        exceeds_capacity: n > capacity,
        max_rel_pos: assignment.max_rel_pos(),
        groups,
        intermediate_groups,
        intermediate_fraction: if groups == 0 {
            0.0
        } else {
            intermediate_groups as f64 / groups as f64
        },
        group_size_histogram: histogram,
    })
}

pub fn compare_report(args: &CompareArgs) -> Result<CompareReport> {
    let se = GroupingFunction::constant(args.constant.unwrap_or(args.capacity))?;
    let logistic = GroupingFunction::logistic(args.capacity, args.rate)?;
    let schemes = vec![
        scheme_report(args.n, args.window, args.train_len, &se)?,
        scheme_report(args.n, args.window, args.train_len, &logistic)?,
    ];
    let warning = schemes.iter().all(|s| s.exceeds_capacity).then(|| {
        format!(
            "n={} exceeds the maximum context length of every scheme; relative positions leave the trained range",
            args.n
        )
    });
    Ok(CompareReport {
        n: args.n,
        window: args.window,
        train_len: args.train_len,
        schemes,
        warning,
    })
}

pub fn cmd_compare(args: &CompareArgs) -> Result<String> {
    Ok(serde_json::to_string_pretty(&compare_report(args)?)? + "\n")
}

fn read_tokens(path: &Path) -> Result<Vec<usize>> {
    std::fs::read_to_string(path)?
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| {
                Error::InvalidConfig(format!("bad token id `{s}` in {}", path.display()))
            })
        })
        .collect()
}

pub fn cmd_toynll(args: &ToynllArgs) -> Result<String> {
    let function = args.grouping.resolve()?;
    let weights = match &args.weights {
        Some(path) => ToyDecoderWeights::load(path).map_err(|e| match e {
            Error::Io(io) => {
                Error::InvalidConfig(format!("cannot read weights {}: {io}", path.display()))
            }
            other => other,
        })?,
        None => ToyDecoderWeights::generate(ToyDecoderConfig {
            vocab: args.vocab,
            layers: args.layers,
            heads: args.heads,
            head_dim: args.head_dim,
            seed: args.seed,
        })?,
    };
    if let Some(path) = &args.save_weights {
        weights.save(path)?;
    }
    let tokens = match &args.tokens {
        Some(path) => read_tokens(path)?,
        None => {
            // Offset keeps the token stream independent of the weight stream.
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed ^ 0x746f_6b65_6e73);
            let vocab = weights.config().vocab;
            (0..args.n).map(|_| rng.gen_range(0..vocab)).collect()
        }
    };
    let rope = RopeConfig::new(args.base, weights.config().head_dim)?;
    let assignment = assign_positions(tokens.len(), args.window, args.train_len, &function)?;
    let plain = toy_forward(&tokens, &weights, &rope, None)?;
    let merged = toy_forward(&tokens, &weights, &rope, Some(&assignment))?;
    let mut out = String::from("position,nll_vanilla,nll_merged\n");
    for (p, (a, b)) in plain.iter().zip(&merged).enumerate() {
        writeln!(out, "{p},{a},{b}").expect("writing to a String");
    }
    Ok(out)
}
