use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use urnflow::embedding::{CountSampler, TreeSummary};
use urnflow::harness::{self, Centering, ExperimentConfig, GofTest, HarnessError, Mode, ScaleMode};
use urnflow::limits::{self, LimitContext, ScalingFunctions, PLOT_POINTS};
use urnflow::model::{self, check_assumptions, mean_matrix, AssumptionReport};
use urnflow::rng;
use urnflow::spectral::{decompose, SpectralReport};
use urnflow::urn::{self, Checkpoints};

/// Two alternating urns: simulation, exact laws and limit theorems.
///
/// Type indices (`--j0`, `--j`) are zero-based. Laws are JSON files or the
/// built-in names three_type, above, boundary, below, doubling.
#[derive(Parser)]
#[command(name = "urnflow", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one urn trajectory and print `n,B_1..B_J,survived` as CSV.
    Simulate {
        #[arg(long)]
        law: String,
        #[arg(long, default_value_t = 0)]
        j0: usize,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// `geom`, `all`, or a comma-separated list of step counts.
        #[arg(long, default_value = "geom")]
        checkpoints: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Grow the Galton-Watson embedding and print generation sizes and the
    /// martingale estimate as JSON.
    Embed {
        #[arg(long)]
        law: String,
        #[arg(long, default_value_t = 0)]
        j0: usize,
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Exact law of `B(n)` as CSV `B_1..B_J,prob`.
    Exact {
        #[arg(long)]
        law: String,
        #[arg(long, default_value_t = 0)]
        j0: usize,
        #[arg(long)]
        steps: usize,
    },
    /// Spectral decomposition, regime and model assumptions as JSON.
    Analyze {
        #[arg(long)]
        law: String,
        #[arg(long, default_value_t = 0)]
        j: usize,
    },
    /// Law of large numbers check.
    Lln(ExperimentArgs),
    /// Normality test of the rescaled fluctuations.
    Clt(ExperimentArgs),
    /// Urn simulation and embedding against the exact law.
    Equivalence(ExperimentArgs),
    /// Residuals of the expansion above `sqrt(rho)`.
    Expansion(ExperimentArgs),
    /// Print the exact transition table of the three-type example.
    Example,
    /// Variance profile JSON and the scaling functions over one period.
    Profile {
        #[arg(long)]
        law: String,
        #[arg(long, default_value_t = 0)]
        j: usize,
        #[arg(long, default_value_t = limits::GRID_POINTS)]
        grid: usize,
        /// Where to write the `x,uppsi,f..` CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TestArg {
    Ks,
    Ad,
}

#[derive(Clone, Copy, ValueEnum)]
enum CenteringArg {
    Linear,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScaleArg {
    Theory,
    NoLog,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    law: String,
    #[arg(long, default_value_t = 0)]
    j0: usize,
    #[arg(long, default_value_t = 0)]
    j: usize,
    #[arg(long, alias = "n", default_value_t = 10_000)]
    steps: u64,
    #[arg(long, default_value_t = 200)]
    replicates: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    alpha: f64,
    #[arg(long, value_enum, default_value = "ks")]
    test: TestArg,
    #[arg(long, value_enum)]
    centering: Option<CenteringArg>,
    #[arg(long, value_enum, default_value = "theory")]
    scale: ScaleArg,
    /// Keep extinct replicates instead of resampling them.
    #[arg(long)]
    keep_extinct: bool,
    #[arg(long)]
    lln_c: Option<f64>,
    #[arg(long, default_value_t = 0.0)]
    limit_shift: f64,
    /// Checkpoints of the expansion study.
    #[arg(long, value_delimiter = ',', default_value = "256,4096")]
    expansion_steps: Vec<u64>,
    /// Per-replicate samples CSV.
    #[arg(long)]
    samples: Option<String>,
    /// Report JSON path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Record wall-clock time in the report.
    #[arg(long)]
    timing: bool,
}

impl ExperimentArgs {
    fn config(&self, mode: Mode) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(&self.law, mode);
        c.j0 = self.j0;
        c.j = self.j;
        c.steps = self.steps;
        c.replicates = self.replicates;
        c.seed = self.seed;
        c.alpha = self.alpha;
        c.test = match self.test {
            TestArg::Ks => GofTest::Ks,
            TestArg::Ad => GofTest::Ad,
        };
        c.centering = self.centering.map(|x| match x {
            CenteringArg::Linear => Centering::Linear,
            CenteringArg::Full => Centering::Full,
        });
        c.scale = match self.scale {
            ScaleArg::Theory => ScaleMode::Theory,
            ScaleArg::NoLog => ScaleMode::NoLog,
        };
        c.reject_extinct = !self.keep_extinct;
        c.lln_c = self.lln_c;
        c.limit_shift = self.limit_shift;
        c.expansion_steps = self.expansion_steps.clone();
        c.samples_path = self.samples.clone();
        c.timing = self.timing;
        c
    }
}

#[derive(Serialize)]
struct Analysis {
    spectral: SpectralReport,
    regime: &'static str,
    hypotheses: limits::Hypotheses,
    gamma_simple: bool,
    assumptions: AssumptionReport,
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<(), HarnessError> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable") + "\n"
}

fn parse_checkpoints(s: &str, rho: f64) -> Result<Checkpoints, HarnessError> {
    match s {
        "geom" => Ok(Checkpoints::Geometric { rho }),
        "all" => Ok(Checkpoints::All),
        list => list
            .split(',')
            .map(|x| x.trim().parse::<u64>())
            .collect::<Result<Vec<_>, _>>()
            .map(Checkpoints::List)
            .map_err(|_| HarnessError::InvalidConfig(format!("bad checkpoint list {list:?}"))),
    }
}

fn execute(cmd: Command) -> Result<i32, HarnessError> {
    match cmd {
        Command::Simulate {
            law: name,
            j0,
            steps,
            seed,
            checkpoints,
            out,
        } => {
            let law = harness::load_law(&name)?;
            law.check_type(j0)?;
            let rho = decompose(&mean_matrix(&law))
                .map(|sd| sd.rho)
                .unwrap_or(2.0);
            let cp = parse_checkpoints(&checkpoints, rho)?;
            let t = urn::run(&law, &name, j0, steps, &cp, seed);
            emit(out.as_ref(), &t.to_csv())?;
            Ok(0)
        }
        Command::Embed {
            law: name,
            j0,
            depth,
            seed,
        } => {
            let law = harness::load_law(&name)?;
            law.check_type(j0)?;
            let sd = decompose(&mean_matrix(&law))?;
            let z = CountSampler::new(&law).generations(j0, depth, &mut rng::stream(seed, 0));
            let last = z.last().expect("root generation");
            let w: f64 =
                sd.v.iter()
                    .zip(last)
                    .map(|(a, &b)| a * b as f64)
                    .sum::<f64>()
                    * sd.rho.powi(-((z.len() - 1) as i32));
            let summary = TreeSummary {
                depth: z.len() - 1,
                survived: last.iter().any(|&x| x > 0),
                w_hat: w,
                z,
            };
            print!("{}", to_json(&summary));
            Ok(0)
        }
        Command::Exact {
            law: name,
            j0,
            steps,
        } => {
            let law = harness::load_law(&name)?;
            let dist = model::exact_distribution(&law, j0, steps)?;
            print!("{}", model::distribution_csv(&dist));
            Ok(0)
        }
        Command::Analyze { law: name, j } => {
            let law = harness::load_law(&name)?;
            law.check_type(j)?;
            let sd = decompose(&mean_matrix(&law))?;
            let reg = limits::regime(&sd, &law, j);
            let a = Analysis {
                spectral: sd.report(),
                regime: reg.case,
                hypotheses: reg.hypotheses,
                gamma_simple: reg.gamma_simple,
                assumptions: check_assumptions(&law),
            };
            print!("{}", to_json(&a));
            Ok(0)
        }
        Command::Lln(a) => experiment(&a, Mode::Lln),
        Command::Clt(a) => experiment(&a, Mode::Clt),
        Command::Equivalence(a) => experiment(&a, Mode::Equivalence),
        Command::Expansion(a) => experiment(&a, Mode::Expansion),
        Command::Example => {
            let (table, ok) = harness::example_table()?;
            print!("{table}");
            Ok(if ok { 0 } else { 1 })
        }
        Command::Profile {
            law: name,
            j,
            grid,
            csv,
        } => {
            let law = harness::load_law(&name)?;
            law.check_type(j)?;
            let sd = decompose(&mean_matrix(&law))?;
            let ctx = LimitContext::new(&sd, &law)?;
            let profile = ctx.profile(-sd.rho * sd.u[j], 1.0, j, grid)?;
            let reg = limits::regime(&sd, &law, j);
            print!("{}", to_json(&profile.report(&reg)));
            if let Some(p) = csv {
                let sf = ScalingFunctions::new(&sd, &profile)?;
                std::fs::write(p, sf.plot_csv(PLOT_POINTS))?;
            }
            Ok(0)
        }
    }
}

fn experiment(a: &ExperimentArgs, mode: Mode) -> Result<i32, HarnessError> {
    let law = harness::load_law(&a.law)?;
    let report = harness::run(&law, &a.config(mode))?;
    emit(a.out.as_ref(), &(report.to_json() + "\n"))?;
    Ok(report.verdict.exit_code())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli.cmd) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
