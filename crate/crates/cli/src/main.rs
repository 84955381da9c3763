//! `secular`: samplers, exact tables and experiments from the command line.
//!
//! Exit status: 0 when every requested verdict passes, 1 when a verdict
//! fails, 2 for usage and configuration errors.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use secular_core::cbe::{secular_coefficients, ExpectedBracketTable};
use secular_core::combinat::{abs_moment_2k, count_magic, joint_moment, Composition};
use secular_core::ewens::{
    ewens_pmf, longest_cycle_cdf, partitions, shortest_cycle_survival, t0n_pmf, CycleCounts, PThetaTable,
};
use secular_core::harness::{self, sci, ConfigOverrides, ExperimentKind, DEFAULT_SEED};
use secular_core::hmc::sample_hmc;
use secular_core::par::map_replicates;
use secular_core::{GaussianStream, Theta};

/// Environment variable read for the seed when `--seed` is absent.
const SEED_ENV: &str = "SECULAR_SEED";

#[derive(Parser, Debug)]
#[command(name = "secular", version, about = "Secular coefficients of CβE matrices and holomorphic multiplicative chaos")]
struct Cli {
    /// Worker threads for Monte Carlo replicates (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample chaos coefficients c_0..c_order; CSV rows `replicate,k,re,im`.
    SampleHmc {
        #[command(flatten)]
        theta: ThetaArg,
        /// Highest coefficient index.
        #[arg(long)]
        order: usize,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Sample characteristic-polynomial coefficients of a CβE matrix; CSV rows `replicate,k,re,im`.
    SampleCbe {
        #[command(flatten)]
        theta: ThetaArg,
        /// Matrix size N.
        #[arg(long)]
        size: usize,
        /// Highest coefficient index (default: N).
        #[arg(long)]
        order: Option<usize>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Exact moments: E|c_n|^{2k}, or a joint moment with `moments joint`.
    #[command(args_conflicts_with_subcommands = true)]
    Moments {
        #[command(subcommand)]
        joint: Option<MomentsCommand>,
        #[command(flatten)]
        theta: OptionalTheta,
        /// Coefficient index.
        #[arg(long)]
        n: Option<usize>,
        /// Moment order: prints E|c_n|^{2k} (k ≤ 3).
        #[arg(long)]
        k: Option<usize>,
        /// At θ = 1, print the exact integer count of k×k magic squares with margins n.
        #[arg(long)]
        exact_int: bool,
        /// With --size: print E|c_n^{(N)}|² for a CβE matrix of that size instead.
        #[arg(long)]
        size: Option<usize>,
    },
    /// Exact laws attached to the Ewens sampling formula.
    Ewens {
        /// Permutation size.
        #[arg(long)]
        n: Option<usize>,
        #[command(flatten)]
        theta: ThetaArg,
        /// Cut-off δ values for `cdelta` (comma separated).
        #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.7")]
        delta: Vec<f64>,
        /// Right end of the grid for `pdensity`.
        #[arg(long, default_value_t = 5.0)]
        x_max: f64,
        /// Grid spacing for `pdensity`.
        #[arg(long, default_value_t = 0.05)]
        dx: f64,
        #[arg(value_enum)]
        table: EwensTable,
    },
    /// Run a statistical experiment; flags override the config file.
    Experiment {
        /// convergence, moment-ratio, tightness, bracket, secular-gap or sobolev.
        name: String,
        /// Flat JSON file whose keys mirror the flags below.
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        theta: OptionalTheta,
        /// Coefficient grid n (comma separated).
        #[arg(long, value_delimiter = ',')]
        n: Option<Vec<usize>>,
        /// Matrix-size grid N (comma separated).
        #[arg(long, value_delimiter = ',')]
        size: Option<Vec<usize>>,
        /// Monte Carlo replicates per grid point (at least 100).
        #[arg(long)]
        replicates: Option<u64>,
        /// Base seed; replicate r uses stream (seed, r). Falls back to $SECULAR_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Lower cut δ of the bracket process, in (0, 1].
        #[arg(long)]
        delta: Option<f64>,
        /// KS threshold, relative tolerance, band factor or slope tolerance, by experiment.
        #[arg(long)]
        threshold: Option<f64>,
        /// Output path; `.json` and `.csv` files are written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the deterministic exact-identity suite.
    SelfCheck,
}

#[derive(Subcommand, Debug)]
enum MomentsCommand {
    /// E[Π c_{μ_i} · conj Π c_{ν_j}] by magic-square enumeration.
    Joint {
        #[command(flatten)]
        theta: ThetaArg,
        /// Row composition μ (comma separated).
        #[arg(long, value_delimiter = ',', required = true)]
        mu: Vec<u32>,
        /// Column composition ν (comma separated, same total as μ).
        #[arg(long, value_delimiter = ',', required = true)]
        nu: Vec<u32>,
        /// At θ = 1, print the exact integer count of magic squares.
        #[arg(long)]
        exact_int: bool,
    },
}

#[derive(Args, Debug, Clone, Copy)]
#[group(required = true, multiple = false)]
struct ThetaArg {
    /// Inverse temperature θ > 0.
    #[arg(long)]
    theta: Option<f64>,
    /// β > 0, converted to θ = 2/β.
    #[arg(long)]
    beta: Option<f64>,
}

/// As [`ThetaArg`] but may be omitted.
#[derive(Args, Debug, Clone, Copy)]
#[group(required = false, multiple = false)]
struct OptionalTheta {
    /// Inverse temperature θ > 0.
    #[arg(long)]
    theta: Option<f64>,
    /// β > 0, converted to θ = 2/β.
    #[arg(long)]
    beta: Option<f64>,
}

impl OptionalTheta {
    fn required(self) -> anyhow::Result<ThetaArg> {
        if self.theta.is_none() && self.beta.is_none() {
            bail!("--theta or --beta is required");
        }
        Ok(ThetaArg {
            theta: self.theta,
            beta: self.beta,
        })
    }
}

impl ThetaArg {
    fn resolve(self) -> secular_core::Result<Theta> {
        match (self.theta, self.beta) {
            (Some(t), _) => Theta::new(t),
            (None, Some(b)) => Theta::from_beta(b),
            (None, None) => unreachable!("clap requires one of --theta, --beta"),
        }
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Number of independent samples.
    #[arg(long, default_value_t = 1)]
    replicates: u64,
    /// Base seed; replicate r uses stream (seed, r). Falls back to $SECULAR_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Write CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum EwensTable {
    /// Probability of each cycle type.
    Pmf,
    /// P(longest cycle ≤ r), r = 1..n.
    Longest,
    /// P(shortest cycle > q), q = 0..n.
    Shortest,
    /// P(T_{0n} = r), r = 0..n.
    T0n,
    /// Limiting density p_θ(x) on a grid.
    Pdensity,
    /// Limit constant C_δ.
    Cdelta,
}

/// Failure classes mapped to exit codes.
enum Failure {
    Usage(anyhow::Error),
    Verdict,
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

impl From<secular_core::Error> for Failure {
    fn from(e: secular_core::Error) -> Self {
        Failure::Usage(e.into())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = configure_threads(cli.threads) {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verdict) => ExitCode::from(1),
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn configure_threads(threads: Option<usize>) -> anyhow::Result<()> {
    let Some(n) = threads else { return Ok(()) };
    if n == 0 {
        bail!("--threads must be at least 1");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn seed_or_env(seed: Option<u64>) -> anyhow::Result<Option<u64>> {
    if seed.is_some() {
        return Ok(seed);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => Ok(Some(v.trim().parse().with_context(|| format!("${SEED_ENV} = {v:?} is not a u64"))?)),
        Err(_) => Ok(None),
    }
}

fn emit(text: &str, out: Option<&PathBuf>) -> anyhow::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::SampleHmc { theta, order, run } => {
            let theta = theta.resolve()?;
            let seed = seed_or_env(run.seed)?.unwrap_or(DEFAULT_SEED);
            let rows = map_replicates(run.replicates, |r| {
                sample_hmc(order, theta, GaussianStream::new(seed, r)).coeffs().coeffs().to_vec()
            });
            emit(&coefficient_csv(&rows), run.out.as_ref())?;
        }
        Command::SampleCbe { theta, size, order, run } => {
            let theta = theta.resolve()?;
            let seed = seed_or_env(run.seed)?.unwrap_or(DEFAULT_SEED);
            let order = order.unwrap_or(size);
            let rows = map_replicates(run.replicates, |r| {
                secular_coefficients(size, order, theta, GaussianStream::new(seed, r))
            })
            .into_iter()
            .collect::<secular_core::Result<Vec<_>>>()?;
            emit(&coefficient_csv(&rows), run.out.as_ref())?;
        }
        Command::Moments {
            joint,
            theta,
            n,
            k,
            exact_int,
            size,
        } => match joint {
            Some(MomentsCommand::Joint {
                theta,
                mu,
                nu,
                exact_int,
            }) => {
                let theta = theta.resolve()?;
                let (mu, nu) = (Composition::new(mu), Composition::new(nu));
                if exact_int {
                    require_critical(theta)?;
                    println!("{}", count_magic(&mu, &nu)?);
                } else {
                    println!("{}", joint_moment(&mu, &nu, theta)?);
                }
            }
            None => {
                let theta = theta.required()?.resolve()?;
                let n = n.context("--n is required")?;
                if let Some(size) = size {
                    if n == 0 || n >= size {
                        return Err(anyhow::anyhow!("--size needs 1 <= n < N").into());
                    }
                    println!("{}", ExpectedBracketTable::new(size, theta).secular_second_moment(n, size));
                    return Ok(());
                }
                let k = k.context("--k is required")?;
                if exact_int {
                    require_critical(theta)?;
                    let margins = Composition::new(vec![u32::try_from(n).context("n too large")?; k]);
                    println!("{}", count_magic(&margins, &margins)?);
                } else {
                    println!("{}", abs_moment_2k(n, k, theta)?);
                }
            }
        },
        Command::Ewens {
            n,
            theta,
            delta,
            x_max,
            dx,
            table,
        } => {
            let theta = theta.resolve()?;
            print!("{}", ewens_table(table, n, theta, &delta, x_max, dx)?);
        }
        Command::Experiment {
            name,
            config,
            theta,
            n,
            size,
            replicates,
            seed,
            delta,
            threshold,
            out,
        } => {
            let kind: ExperimentKind = name.parse()?;
            let file = match &config {
                Some(path) => ConfigOverrides::from_json_file(path)
                    .with_context(|| format!("reading config {}", path.display()))?,
                None => ConfigOverrides::default(),
            };
            let flags = ConfigOverrides {
                experiment: None,
                theta: theta.theta,
                beta: theta.beta,
                n,
                size,
                replicates,
                seed,
                delta,
                threshold,
                out,
            };
            let mut merged = flags.or(file);
            if merged.seed.is_none() {
                merged.seed = seed_or_env(None)?;
            }
            let config = merged.resolve(kind)?;
            let report = harness::run_experiment(&config)?;
            if let Some(path) = &config.out {
                report.write(path)?;
            }
            for v in &report.verdicts {
                println!("{} {}: {}", if v.passed { "PASS" } else { "FAIL" }, v.criterion, v.detail);
            }
            println!(
                "{} {} in {:.1}s",
                kind,
                if report.passed { "passed" } else { "failed" },
                report.wall_clock_seconds
            );
            if report.config.out.is_none() {
                print!("{}", report.to_csv());
            }
            if !report.passed {
                return Err(Failure::Verdict);
            }
        }
        Command::SelfCheck => {
            let report = harness::self_check()?;
            for c in &report.checks {
                let status = match (c.passed, c.diagnostic) {
                    (_, true) => "INFO",
                    (true, false) => "PASS",
                    (false, false) => "FAIL",
                };
                println!("{status} {}: {:e} (target {:e}, tolerance {:e})", c.name, c.value, c.target, c.tolerance);
            }
            if !report.passed() {
                return Err(Failure::Verdict);
            }
        }
    }
    Ok(())
}

fn require_critical(theta: Theta) -> anyhow::Result<()> {
    if theta.get() != 1.0 {
        bail!("--exact-int counts magic squares and needs theta = 1");
    }
    Ok(())
}

fn coefficient_csv(rows: &[Vec<secular_core::Complex64>]) -> String {
    let mut out = String::from("replicate,k,re,im\n");
    for (r, coeffs) in rows.iter().enumerate() {
        for (k, c) in coeffs.iter().enumerate() {
            let _ = writeln!(out, "{r},{k},{},{}", sci(c.re), sci(c.im));
        }
    }
    out
}

fn cycle_type(m: &CycleCounts) -> String {
    let mut parts = Vec::new();
    for k in (1..=m.n()).rev() {
        for _ in 0..m.count(k) {
            parts.push(k.to_string());
        }
    }
    parts.join("+")
}

fn ewens_table(table: EwensTable, n: Option<usize>, theta: Theta, delta: &[f64], x_max: f64, dx: f64) -> anyhow::Result<String> {
    let need_n = || n.filter(|&n| n >= 1).context("--n >= 1 is required for this table");
    let mut out = String::new();
    match table {
        EwensTable::Pmf => {
            let n = need_n()?;
            out.push_str("cycle_type,probability\n");
            for m in partitions(n) {
                writeln!(out, "{},{}", cycle_type(&m), sci(ewens_pmf(&m, theta)?))?;
            }
        }
        EwensTable::Longest => {
            let n = need_n()?;
            out.push_str("r,cdf\n");
            for r in 1..=n {
                writeln!(out, "{r},{}", sci(longest_cycle_cdf(n, r, theta)?))?;
            }
        }
        EwensTable::Shortest => {
            let n = need_n()?;
            out.push_str("q,survival\n");
            for q in 0..=n {
                writeln!(out, "{q},{}", sci(shortest_cycle_survival(n, q, theta)?))?;
            }
        }
        EwensTable::T0n => {
            let n = need_n()?;
            out.push_str("r,probability\n");
            for (r, p) in t0n_pmf(n, n, theta).pmf.iter().enumerate() {
                writeln!(out, "{r},{}", sci(*p))?;
            }
        }
        EwensTable::Pdensity => {
            if !(dx > 0.0 && x_max > 0.0) {
                bail!("--dx and --x-max must be positive");
            }
            let table = PThetaTable::new(theta);
            out.push_str("x,density\n");
            let steps = (x_max / dx).round() as usize;
            for i in 1..=steps {
                let x = i as f64 * dx;
                writeln!(out, "{},{}", sci(x), sci(table.density(x)?))?;
            }
        }
        EwensTable::Cdelta => {
            let table = PThetaTable::new(theta);
            out.push_str("delta,c_delta\n");
            for &d in delta {
                writeln!(out, "{},{}", sci(d), sci(table.c_delta(d)?))?;
            }
        }
    }
    Ok(out)
}
