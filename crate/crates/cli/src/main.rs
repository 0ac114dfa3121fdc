//! `hsgp` command-line front end.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use hsgp::config::TrainConfig;
use hsgp::cubeio::{read_cube, read_model, read_response, write_cube, write_model, write_response};
use hsgp::metrics::ReconstructionReport;
use hsgp::pipeline::{estimate_transform, reconstruct, simulate_rgb, train};
use hsgp::synth::{generate, smooth_response, write_truth, SynthSpec};
use hsgp::{Error, ErrorKind};
use log::info;

#[derive(Parser, Debug)]
#[command(name = "hsgp", version, about = "Hyperspectral recovery from RGB images")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn a model from hyperspectral training cubes.
    Train(TrainArgs),
    /// Recover a hyperspectral cube from a 3-channel cube.
    Reconstruct(ReconstructArgs),
    /// Project a hyperspectral cube to RGB through a response.
    Rgbsim(RgbsimArgs),
    /// Score an estimate against ground truth.
    Evaluate(EvaluateArgs),
    /// Least-squares camera response from matched RGB and hyperspectral cubes.
    EstimateTransform(EstimateArgs),
    /// Generate a synthetic scene.
    Synth(SynthArgs),
}

macro_rules! config_flags {
    ($($field:ident),* $(,)?) => {
        /// Training parameters. Each flag overrides the same key from `--config`.
        #[derive(Args, Debug, Default)]
        struct ConfigFlags {
            $(
                #[arg(long = stringify!($field), value_name = "VALUE")]
                $field: Option<String>,
            )*
        }

        impl ConfigFlags {
            fn pairs(&self) -> Vec<(&'static str, &str)> {
                let mut out = Vec::new();
                $(
                    if let Some(v) = &self.$field {
                        out.push((stringify!($field), v.as_str()));
                    }
                )*
                out
            }
        }
    };
}

config_flags!(
    a_o,
    b_o,
    c_o,
    d_o,
    e_o,
    f_o,
    g_o,
    h_o,
    lambda_eps_o,
    lambda_s_o,
    eta_init,
    length_scale,
    gibbs_iters,
    burn_in,
    kernel_distance,
    eta_quadratic,
    s_prior_precision,
    clusters,
    patch_size,
    atoms,
    pixel_fraction,
    kmeans_iters,
    kmeans_tol,
    kmeans_center,
    delta,
    prior_epochs,
    delta1,
);

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training cubes.
    #[arg(long, num_args = 1.., required = true)]
    cubes: Vec<PathBuf>,
    /// Camera response table.
    #[arg(long)]
    response: PathBuf,
    /// Scale each response row to unit sum.
    #[arg(long)]
    normalize_response: bool,
    #[arg(long)]
    out: PathBuf,
    /// `key=value` file of training parameters.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Use the prior dictionary instead of Gaussian Process posterior means.
    #[arg(long)]
    dl_variant: bool,
    #[command(flatten)]
    params: ConfigFlags,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rgb: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    stride: usize,
}

#[derive(Args, Debug)]
struct RgbsimArgs {
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    response: PathBuf,
    #[arg(long)]
    normalize_response: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// Infeasible pixel count reported by `reconstruct`, echoed into the report.
    #[arg(long, default_value_t = 0)]
    infeasible: usize,
    /// Write the report here as well as to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    /// 3-channel cube.
    #[arg(long)]
    rgb: PathBuf,
    /// Hyperspectral cube of the same scene.
    #[arg(long)]
    cube: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Known response to compare against.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output cube.
    #[arg(long)]
    out: PathBuf,
    /// Also write the generating atoms and codes.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Also write a random smooth camera response.
    #[arg(long)]
    response: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 64)]
    rows: usize,
    #[arg(long, default_value_t = 64)]
    cols: usize,
    #[arg(long, default_value_t = 31)]
    bands: usize,
    #[arg(long, default_value_t = 8)]
    atoms: usize,
    #[arg(long, default_value_t = 2)]
    sparsity: usize,
    #[arg(long, default_value_t = 1e4)]
    noise_precision: f64,
}

fn config_for(args: &TrainArgs) -> hsgp::Result<TrainConfig> {
    let mut config = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
        config.apply_text(&text)?;
    }
    for (k, v) in args.params.pairs() {
        config.set(k, v)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.dl_variant {
        config.dl_variant = true;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_train(args: &TrainArgs) -> hsgp::Result<()> {
    let config = config_for(args)?;
    let (t, _) = read_response(&args.response, args.normalize_response)?;
    let cubes = args.cubes.iter().map(read_cube).collect::<hsgp::Result<Vec<_>>>()?;
    let start = Instant::now();
    let model = train(&cubes, &t, &config)?;
    let elapsed = start.elapsed();
    write_model(&model, &args.out)?;
    for (c, m) in model.clusters.iter().enumerate() {
        match m.lambda_eps {
            Some(l) => println!("cluster {c}: K_c={} lambda_eps={l:.6e}", m.atoms()),
            None => println!("cluster {c}: K_c={}", m.atoms()),
        }
    }
    println!("total_atoms={} train_seconds={:.3}", model.total_atoms(), elapsed.as_secs_f64());
    Ok(())
}

fn cmd_reconstruct(args: &ReconstructArgs) -> hsgp::Result<()> {
    let model = read_model(&args.model)?;
    let rgb = read_cube(&args.rgb)?;
    let start = Instant::now();
    let out = reconstruct(&model, &rgb, args.stride)?;
    let elapsed = start.elapsed();
    write_cube(&out.cube, &args.out)?;
    println!("infeasible_pixels={}", out.infeasible_pixels);
    println!("negative_fraction={}", out.negative_fraction);
    println!("reconstruct_seconds={:.3}", elapsed.as_secs_f64());
    Ok(())
}

fn cmd_rgbsim(args: &RgbsimArgs) -> hsgp::Result<()> {
    let (t, _) = read_response(&args.response, args.normalize_response)?;
    let cube = read_cube(&args.cube)?;
    write_cube(&simulate_rgb(&cube, &t)?, &args.out)
}

fn cmd_evaluate(args: &EvaluateArgs) -> hsgp::Result<()> {
    let est = read_cube(&args.estimate)?;
    let gt = read_cube(&args.truth)?;
    let negative = est.data().iter().filter(|&&v| v < 0.0).count() as f64 / est.data().len().max(1) as f64;
    let report = ReconstructionReport::evaluate(&est, &gt, negative, args.infeasible)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(path) = &args.out {
        write_text(path, &text)?;
    }
    Ok(())
}

fn cmd_estimate(args: &EstimateArgs) -> hsgp::Result<()> {
    let rgb = read_cube(&args.rgb)?;
    let cube = read_cube(&args.cube)?;
    if rgb.pixels() != cube.pixels() {
        return Err(Error::Dimension(format!(
            "RGB cube has {} pixels, hyperspectral cube {}",
            rgb.pixels(),
            cube.pixels()
        )));
    }
    let t = estimate_transform(&rgb.to_matrix(), &cube.to_matrix())?;
    write_response(&t, cube.wavelengths(), &args.out)?;
    if let Some(path) = &args.reference {
        let (reference, _) = read_response(path, false)?;
        if reference.matrix().shape() != t.matrix().shape() {
            return Err(Error::Dimension("reference response has a different shape".into()));
        }
        println!("max_abs_error={:e}", (t.matrix() - reference.matrix()).amax());
    }
    Ok(())
}

fn cmd_synth(args: &SynthArgs) -> hsgp::Result<()> {
    let spec = SynthSpec {
        bands: args.bands,
        rows: args.rows,
        cols: args.cols,
        atoms: args.atoms,
        sparsity: args.sparsity,
        noise_precision: args.noise_precision,
        seed: args.seed,
        ..SynthSpec::default()
    };
    let scene = generate(&spec)?;
    write_cube(&scene.cube, &args.out)?;
    if let Some(path) = &args.truth {
        write_truth(&scene, path)?;
    }
    if let Some(path) = &args.response {
        write_response(&smooth_response(spec.bands, spec.seed)?, &spec.wavelengths(), path)?;
    }
    info!("wrote {}x{}x{} scene", spec.rows, spec.cols, spec.bands);
    Ok(())
}

fn write_text(path: &Path, text: &str) -> hsgp::Result<()> {
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn run(cli: &Cli) -> hsgp::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidParameter("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::Rgbsim(a) => cmd_rgbsim(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::EstimateTransform(a) => cmd_estimate(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Usage => 1,
        ErrorKind::Io => 2,
        ErrorKind::Numerical => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
