use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hnlq::bench::{
    calibrate_beta0, default_grid, run_dr_ip, run_dr_vector, scheme_codec, verify_lemmas, write_csv, Beta0,
    DitherChoice, ExperimentConfig, LemmaConfig, Objective, Scheme,
};
use hnlq::{HierarchicalCodec, InnerProductLut, Lattice, LatticeKind};

/// Distortion-rate experiments for hierarchical nested-lattice quantization.
#[derive(Parser)]
#[command(name = "bench", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Vector distortion-rate sweep of N(0, I_d) samples.
    DrVector(RunArgs),
    /// Inner-product distortion-rate sweep of Gaussian pairs in R^n.
    DrIp(RunArgs),
    /// Print pilot distortions over the beta0 grid.
    Calibrate(CalibrateArgs),
    /// Check the encoder/decoder identities and the sandwich property; prints JSON.
    VerifyLemmas(LemmaArgs),
    /// Build an inner-product lookup table and write it to disk.
    BuildLut(LutArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum LatticeArg {
    Z,
    D4,
    A2,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long, value_enum, default_value = "d4")]
    lattice: LatticeArg,
    /// Dimension for `--lattice z`.
    #[arg(long, default_value_t = 4)]
    d: usize,
    /// Nesting ratios; comma separated.
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<u32>>,
    /// Layer counts; comma separated.
    #[arg(long = "m", value_delimiter = ',')]
    m: Option<Vec<usize>>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, value_delimiter = ',')]
    scheme: Option<Vec<Scheme>>,
    /// Vector length for dr-ip.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long, default_value_t = 1.0 / 3.0)]
    alpha: f64,
    /// Initial scale, or `auto` to calibrate on a pilot run.
    #[arg(long, default_value = "auto")]
    beta0: Beta0,
    #[arg(long, value_enum)]
    dither: Option<DitherChoice>,
    /// What `--beta0 auto` minimizes on the pilot run.
    #[arg(long, value_enum, default_value = "gap")]
    objective: Objective,
    #[arg(long)]
    rotate: bool,
    /// Pilot samples (or pairs) for `--beta0 auto`.
    #[arg(long)]
    pilot: Option<usize>,
    /// Use N = 5000.
    #[arg(long)]
    full: bool,
    /// CSV output; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Calibrate for inner products instead of vectors.
    #[arg(long)]
    ip: bool,
}

#[derive(Args)]
struct LemmaArgs {
    #[arg(long, value_enum, value_delimiter = ',')]
    lattice: Option<Vec<LatticeArg>>,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, value_delimiter = ',', default_values_t = [3, 4])]
    q: Vec<u32>,
    #[arg(long = "m", value_delimiter = ',', default_values_t = [1, 2, 3])]
    m: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    samples: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LutArgs {
    #[arg(long, value_enum, default_value = "d4")]
    lattice: LatticeArg,
    #[arg(long, default_value_t = 4)]
    d: usize,
    #[arg(long, default_value_t = 4)]
    q: u32,
    #[arg(long)]
    out: PathBuf,
}

fn lattice_of(arg: LatticeArg, d: usize) -> (LatticeKind, usize) {
    match arg {
        LatticeArg::Z => (LatticeKind::Integer, d),
        LatticeArg::D4 => (LatticeKind::Checkerboard, 4),
        LatticeArg::A2 => (LatticeKind::Hexagonal, 2),
    }
}

fn experiment(args: &RunArgs, inner_product: bool) -> ExperimentConfig {
    let mut cfg = if inner_product {
        ExperimentConfig::inner_product_defaults()
    } else {
        ExperimentConfig::vector_defaults()
    };
    let c = &args.common;
    (cfg.lattice, cfg.d) = lattice_of(c.lattice, c.d);
    if !inner_product {
        cfg.n = cfg.d;
    }
    if let Some(q) = &c.q {
        cfg.qs = q.clone();
    }
    if let Some(m) = &c.m {
        cfg.ms = m.clone();
    }
    if let Some(s) = &args.scheme {
        cfg.schemes = s.clone();
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if args.full {
        cfg.samples = 5000;
    }
    if let Some(s) = args.samples {
        cfg.samples = s;
    }
    if let Some(p) = args.pilot {
        cfg.pilot_samples = p;
    }
    if let Some(d) = args.dither {
        cfg.dither = d;
    }
    cfg.seed = c.seed;
    cfg.alpha = args.alpha;
    cfg.beta0 = args.beta0;
    cfg.rotate = args.rotate;
    cfg.objective = args.objective;
    cfg.grid = default_grid();
    cfg
}

fn output(path: &Option<PathBuf>) -> io::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn log_reduced_ratios(cfg: &ExperimentConfig) -> hnlq::Result<()> {
    if !cfg.schemes.contains(&Scheme::VoronoiReduced) {
        return Ok(());
    }
    let lattice = cfg.lattice()?;
    for &q in &cfg.qs {
        for &m in &cfg.ms {
            let (codec, exact) = scheme_codec(Scheme::VoronoiReduced, &lattice, q, m)?;
            eprintln!(
                "voronoi-reduced q={q} M={m}: r = {} (exact {})",
                codec.q(),
                exact.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> hnlq::Result<bool> {
    match cli.command {
        Command::DrVector(args) => {
            let cfg = experiment(&args, false);
            log_reduced_ratios(&cfg)?;
            write_csv(output(&args.out)?, &run_dr_vector(&cfg)?)?;
        }
        Command::DrIp(args) => {
            let cfg = experiment(&args, true);
            log_reduced_ratios(&cfg)?;
            write_csv(output(&args.out)?, &run_dr_ip(&cfg)?)?;
        }
        Command::Calibrate(args) => {
            let mut cfg = experiment(&args.run, args.ip);
            cfg.beta0 = Beta0::Auto;
            cfg.validate()?;
            let mut out = output(&args.run.out)?;
            writeln!(out, "scheme,q,M,beta0,pilot_score,selected")?;
            for &q in &cfg.qs {
                for &m in &cfg.ms {
                    for &scheme in &cfg.schemes {
                        let (best, scores) = calibrate_beta0(&cfg, scheme, q, m, args.ip)?;
                        for (b, s) in cfg.grid.iter().zip(&scores) {
                            writeln!(out, "{},{q},{m},{b},{s},{}", scheme.name(), *b == best)?;
                        }
                    }
                }
            }
            out.flush()?;
        }
        Command::VerifyLemmas(args) => {
            let lattices = args
                .lattice
                .clone()
                .unwrap_or_else(|| vec![LatticeArg::Z, LatticeArg::A2, LatticeArg::D4]);
            let mut cases = Vec::new();
            for &l in &lattices {
                let (kind, d) = lattice_of(l, args.d);
                for &q in &args.q {
                    for &m in &args.m {
                        cases.push((kind, d, q, m));
                    }
                }
            }
            let cfg = LemmaConfig {
                cases,
                samples: args.samples,
                seed: args.seed,
                ..LemmaConfig::default()
            };
            let report = verify_lemmas(&cfg)?;
            let mut out = output(&args.out)?;
            writeln!(out, "{}", report.to_json())?;
            out.flush()?;
            return Ok(report.pass);
        }
        Command::BuildLut(args) => {
            let (kind, d) = lattice_of(args.lattice, args.d);
            let codec = HierarchicalCodec::new(Lattice::new(kind, d)?, args.q, 1)?;
            let lut = InnerProductLut::build(&codec)?;
            lut.write_to(BufWriter::new(File::create(&args.out)?))?;
            eprintln!(
                "wrote {} entries ({} bytes) to {}",
                lut.len(),
                lut.size_bytes(),
                args.out.display()
            );
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
