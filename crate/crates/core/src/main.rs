use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use afm::descriptor::{load_sketch_file, write_pointlist};
use afm::feature_maps::SpectraSet;
use afm::kernel_lab::{
    harmonic_spectrum, joint_lp_spectrum, orientation_spectrum, read_spectra, spatial_signatures,
    spectrum_for_dim, write_spectrum, FrequencyPool, KernelSignature, Spectrum, ORIENTATION_SIGMA,
    SPATIAL_SIGMAS,
};
use afm::retrieval::synth::{synth_class_corpus, synth_corpus, PlantedQuery, SynthConfig};
use afm::retrieval::{evaluate_map, evaluate_p_at, GroundTruth, Index, Quant, P_AT};
use afm::service::{AppState, Engine, ServiceConfig};
use afm::{AfmError, Result};

#[derive(Parser)]
#[command(name = "afm", version, about = "Asymmetric feature maps and sketch retrieval")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build and inspect kernel approximations.
    #[command(subcommand)]
    Approx(Approx),
    /// Build an index from a directory of point lists and PBM/PGM images.
    Index(IndexArgs),
    /// Rank an index against one sketch.
    Query(QueryArgs),
    /// Batch evaluation: mAP and P@n over a directory of query sketches.
    Eval(EvalArgs),
    /// Run the HTTP query service.
    Serve(ServeArgs),
    /// Write a planted-transform synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum Approx {
    /// Joint LP over the default frequency pool.
    FitJoint {
        #[arg(long, value_delimiter = ',', default_values_t = SPATIAL_SIGMAS)]
        sigmas: Vec<f64>,
        /// Target |Ω|, found by bisection on γ.
        #[arg(long, conflicts_with = "gamma")]
        nfreq: Option<usize>,
        /// Solve once at this sparsity weight instead.
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Fourier-periodization baseline for one kernel.
    FitHarmonic {
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 7)]
        nfreq: usize,
        /// Wrapped (2π-periodic) kernel.
        #[arg(long)]
        periodic: bool,
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
    /// Per-kernel C∞ of harmonic and joint fits, or of given spectrum files.
    ErrorTable {
        #[arg(long, value_delimiter = ',', default_values_t = SPATIAL_SIGMAS)]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 7)]
        nfreq: usize,
        /// Spectrum files to tabulate instead of fitting.
        #[arg(long = "spectrum")]
        spectra: Vec<PathBuf>,
    },
    /// Spatial joint fit plus orientation harmonics, as one spectra file.
    BuildSpectra {
        #[arg(long, value_delimiter = ',', default_values_t = SPATIAL_SIGMAS)]
        sigmas: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        nfreq_x: usize,
        #[arg(long, default_value_t = ORIENTATION_SIGMA)]
        sigma_phi: f64,
        #[arg(long, default_value_t = 2)]
        nfreq_phi: usize,
        #[arg(long, short)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long, short)]
    input: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Spectra file (bundled default when omitted).
    #[arg(long)]
    spectra: Option<PathBuf>,
    #[arg(long, default_value = "f32")]
    quant: Quant,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    spectra: Option<PathBuf>,
    /// Aux vectors for query expansion.
    #[arg(long)]
    aux: Option<PathBuf>,
    /// full | proj | proj-disc
    #[arg(long, default_value = "proj")]
    rank: String,
    /// xy | xy-star | x-over-y | none
    #[arg(long, default_value = "xy-star")]
    rerank: String,
    #[arg(long, default_value_t = 100)]
    shortlist: usize,
    #[arg(long, default_value_t = 3)]
    nbhd: usize,
    #[arg(long, default_value_t = 3)]
    pre_factor: usize,
    /// Average query expansion over the top N.
    #[arg(long)]
    qe: Option<usize>,
}

impl PipelineArgs {
    fn service_config(&self) -> ServiceConfig {
        ServiceConfig {
            index: Some(self.index.clone()),
            spectra: self.spectra.clone(),
            aux: self.aux.clone(),
            rank: self.rank.clone(),
            rerank: self.rerank.clone(),
            shortlist: self.shortlist,
            nbhd: self.nbhd,
            pre_factor: self.pre_factor,
            qe_top_n: self.qe,
            ..ServiceConfig::default()
        }
    }

    fn engine(&self) -> Result<Engine> {
        let cfg = self.service_config();
        cfg.validate()?;
        Ok(Engine::load(&cfg)?.expect("index configured"))
    }
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Point list or PBM/PGM sketch.
    #[arg(long, short)]
    query: PathBuf,
    #[arg(short, default_value_t = 10)]
    k: usize,
    /// JSON output, same shape as the HTTP response.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    pipeline: PipelineArgs,
    /// Directory of query sketches; ids are file stems.
    #[arg(long)]
    queries: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Count "similar" labels as positives instead of ignoring them.
    #[arg(long)]
    similar_positive: bool,
}

#[derive(Args)]
struct ServeArgs {
    /// TOML config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    index: Option<PathBuf>,
    #[arg(long)]
    spectra: Option<PathBuf>,
    #[arg(long)]
    aux: Option<PathBuf>,
    #[arg(long)]
    thumbs: Option<PathBuf>,
    /// Overridden by AFM_BIND.
    #[arg(long)]
    bind: Option<String>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, short)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1000)]
    items: usize,
    #[arg(long, default_value_t = 50)]
    queries: usize,
    /// Class-structured corpus with one-hot aux vectors instead.
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long, default_value_t = 10)]
    per_class: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| AfmError::file(path, e))?,
    ))
}

fn emit_spectrum(s: &Spectrum, out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            write_spectrum(&mut w, s)?;
            w.flush()?;
            eprintln!("wrote {}", p.display());
        }
        None => write_spectrum(std::io::stdout().lock(), s)?,
    }
    Ok(())
}

fn print_errors(sigs: &[KernelSignature], s: &Spectrum) {
    eprintln!("|Ω| = {}", s.nfreq());
    for (sig, c) in sigs.iter().zip(&s.linf_errors) {
        eprintln!("  σ = {:<6} C∞ = {c:.6}", sig.sigma());
    }
}

fn approx(cmd: Approx) -> Result<()> {
    let pool = FrequencyPool::default();
    match cmd {
        Approx::FitJoint {
            sigmas,
            nfreq,
            gamma,
            out,
        } => {
            let sigs = spatial_signatures(&sigmas)?;
            let s = match gamma {
                Some(g) => joint_lp_spectrum(&sigs, &pool, g)?,
                None => spectrum_for_dim(&sigs, &pool, nfreq.unwrap_or(5))?,
            };
            print_errors(&sigs, &s);
            emit_spectrum(&s, out.as_deref())
        }
        Approx::FitHarmonic {
            sigma,
            nfreq,
            periodic,
            out,
        } => {
            let sig = if periodic {
                afm::kernel_lab::orientation_signature(sigma)?
            } else {
                afm::kernel_lab::make_rbf_signature(sigma, false, None)?
            };
            let fit = harmonic_spectrum(&sig, pool.lambda_max(), nfreq, pool.grid().len())?;
            if !fit.clamped.is_empty() {
                eprintln!("clamped negative coefficients at ω = {:?}", fit.clamped);
            }
            print_errors(std::slice::from_ref(&sig), &fit.spectrum);
            emit_spectrum(&fit.spectrum, out.as_deref())
        }
        Approx::ErrorTable {
            sigmas,
            nfreq,
            spectra,
        } => {
            let sigs = spatial_signatures(&sigmas)?;
            let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
            if spectra.is_empty() {
                let harmonic = sigs
                    .iter()
                    .map(|s| {
                        harmonic_spectrum(s, pool.lambda_max(), nfreq, pool.grid().len())
                            .map(|f| f.spectrum.linf_errors[0])
                    })
                    .collect::<Result<Vec<_>>>()?;
                columns.push((format!("harmonic({nfreq})"), harmonic));
                let joint = spectrum_for_dim(&sigs, &pool, nfreq)?;
                columns.push((format!("joint({nfreq})"), joint.linf_errors.clone()));
            } else {
                for path in &spectra {
                    let f = File::open(path).map_err(|e| AfmError::file(path, e))?;
                    let s = read_spectra(std::io::BufReader::new(f))?.remove(0);
                    let errs = sigs
                        .iter()
                        .enumerate()
                        .map(|(i, sig)| s.linf_error(sig, i.min(s.nkernels() - 1), pool.grid()))
                        .collect();
                    columns.push((path.display().to_string(), errs));
                }
            }
            print!("{:<8}", "sigma");
            for (name, _) in &columns {
                print!(" {name:>14}");
            }
            println!();
            for (i, sig) in sigs.iter().enumerate() {
                print!("{:<8}", sig.sigma());
                for (_, errs) in &columns {
                    print!(" {:>14.6}", errs[i]);
                }
                println!();
            }
            Ok(())
        }
        Approx::BuildSpectra {
            sigmas,
            nfreq_x,
            sigma_phi,
            nfreq_phi,
            out,
        } => {
            let sigs = spatial_signatures(&sigmas)?;
            let spatial = spectrum_for_dim(&sigs, &pool, nfreq_x)?;
            print_errors(&sigs, &spatial);
            let set = SpectraSet::new(spatial, orientation_spectrum(sigma_phi, nfreq_phi)?)?;
            let mut w = create(&out)?;
            set.write(&mut w)?;
            w.flush()?;
            eprintln!("wrote {}", out.display());
            Ok(())
        }
    }
}

/// Files of `dir` in name order.
fn sorted_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| AfmError::file(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn load_spectra(path: Option<&Path>) -> Result<SpectraSet> {
    match path {
        Some(p) => SpectraSet::load(p),
        None => Ok(SpectraSet::default_set()),
    }
}

fn index(args: IndexArgs) -> Result<()> {
    let spectra = load_spectra(args.spectra.as_deref())?;
    let files = sorted_files(&args.input)?;
    let mut items = Vec::with_capacity(files.len());
    let mut skipped = 0;
    for path in &files {
        match load_sketch_file(path).and_then(|pl| pl.normalized()) {
            Ok(points) => items.push((stem(path), points)),
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                skipped += 1;
            }
        }
    }
    let index = Index::build(&items, &spectra, args.quant)?;
    index.save(&args.out)?;
    eprintln!(
        "indexed {} of {} files ({skipped} skipped) into {}",
        index.len(),
        files.len(),
        args.out.display()
    );
    Ok(())
}

fn query(args: QueryArgs) -> Result<()> {
    let engine = args.pipeline.engine()?;
    let points = load_sketch_file(&args.query)?.normalized()?;
    let hits = engine.query(&points, &engine.pipeline, args.k)?;
    if args.json {
        let body = serde_json::json!({ "results": hits, "method": engine.pipeline.describe() });
        println!("{body}");
    } else {
        println!("# {}", engine.pipeline.describe());
        println!("rank\tid\tscore\tscale\tmirror\tdx\tdy");
        for (i, h) in hits.iter().enumerate() {
            println!(
                "{}\t{}\t{:.6}\t{}\t{}\t{}\t{}",
                i + 1,
                h.id,
                h.score,
                h.scale,
                h.mirror,
                h.dx,
                h.dy
            );
        }
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let engine = args.pipeline.engine()?;
    let gt = GroundTruth::load(&args.gt)?;
    let mut runs = Vec::new();
    for path in sorted_files(&args.queries)? {
        let points = match load_sketch_file(&path).and_then(|pl| pl.normalized()) {
            Ok(p) => p,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let hits = engine.query(&points, &engine.pipeline, engine.index.len())?;
        runs.push((stem(&path), hits.into_iter().map(|h| h.id).collect::<Vec<_>>()));
    }
    println!("# {} over {} queries", engine.pipeline.describe(), runs.len());
    println!("mAP\t{:.4}", evaluate_map(&runs, &gt, args.similar_positive));
    for n in P_AT {
        println!("P@{n}\t{:.4}", evaluate_p_at(&runs, &gt, n, args.similar_positive));
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let mut cfg = match &args.config {
        Some(p) => ServiceConfig::load(p)?,
        None => ServiceConfig::default(),
    };
    cfg.index = args.index.or(cfg.index);
    cfg.spectra = args.spectra.or(cfg.spectra);
    cfg.aux = args.aux.or(cfg.aux);
    cfg.thumbs = args.thumbs.or(cfg.thumbs);
    if let Some(b) = args.bind {
        cfg.bind = b;
    }
    cfg.validate()?;
    let engine = Engine::load(&cfg)?;
    match &engine {
        Some(e) => log::info!("loaded {} entries", e.index.len()),
        None => log::warn!("no index configured; queries will answer 503"),
    }
    let addr = cfg.bind_address();
    let state = Arc::new(AppState {
        engine: engine.map(Arc::new),
        config: cfg,
    });
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        log::info!("listening on {}", listener.local_addr()?);
        afm::service::serve(listener, state).await
    })
}

fn write_planted(path: &Path, queries: &[PlantedQuery]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "# query source scale mirror dx dy")?;
    for q in queries {
        writeln!(w, "{} {} {} {} {} {}", q.id, q.source, q.scale, q.mirror, q.dx, q.dy)?;
    }
    w.flush()?;
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let (corpus, aux) = match args.classes {
        Some(n) => {
            let cc = synth_class_corpus(args.seed, n, args.per_class, 0.05);
            (cc.corpus, Some(cc.aux))
        }
        None => {
            let cfg = SynthConfig {
                n_items: args.items,
                n_queries: args.queries,
                ..SynthConfig::default()
            };
            (synth_corpus(args.seed, &cfg), None)
        }
    };
    let items_dir = args.out.join("items");
    let queries_dir = args.out.join("queries");
    for d in [&items_dir, &queries_dir] {
        std::fs::create_dir_all(d).map_err(|e| AfmError::file(d, e))?;
    }
    for (id, pl) in &corpus.items {
        let mut w = create(&items_dir.join(format!("{id}.pts")))?;
        write_pointlist(&mut w, pl)?;
        w.flush()?;
    }
    for q in &corpus.queries {
        let mut w = create(&queries_dir.join(format!("{}.pts", q.id)))?;
        write_pointlist(&mut w, &q.points)?;
        w.flush()?;
    }
    let mut w = create(&args.out.join("gt.txt"))?;
    corpus.ground_truth.write(&mut w)?;
    w.flush()?;
    write_planted(&args.out.join("planted.txt"), &corpus.queries)?;
    if let Some(aux) = aux {
        let mut w = create(&args.out.join("aux.txt"))?;
        aux.write(&mut w)?;
        w.flush()?;
    }
    eprintln!(
        "wrote {} items and {} queries to {}",
        corpus.items.len(),
        corpus.queries.len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Approx(a) => approx(a),
        Command::Index(a) => index(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
