//! `slime` command line: match extraction, evaluation and grid inspection.

mod config;
mod overlay;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use slime::eval::{self, aggregate, evaluate_pair, EvalConfig, GroundTruth, Mask, MetricReport};
use slime::geometry::{ransac_fundamental, ransac_homography, RansacConfig};
use slime::matcher::{emit_matches, ingest_matches};
use slime::pipeline::{dedup_coordinates, run_slime_with_matches};
use slime::{build_block_grid, run_slime, BuiltinMatcher, Match, RasterImage, SlimeOutput};

use config::{MatcherChoice, Overrides, RunConfig, SceneKind};

/// Threshold of the final model fit when the flag has no value, px.
const FINAL_RANSAC_DEFAULT: &str = "3";
/// Iteration cap of the final model fit.
const FINAL_RANSAC_ITERS: usize = 10_000;

#[derive(Parser)]
#[command(name = "slime", version, about = "Plane-hypothesis two-view image matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Match two images and write the final matches.
    Match(MatchArgs),
    /// Score matches against ground truth, for one pair or a manifest.
    Eval(EvalArgs),
    /// List the block and tile windows of an image.
    Grid(GridArgs),
}

#[derive(Args)]
struct MatchArgs {
    img1: PathBuf,
    img2: PathBuf,
    /// Match file to write (tab-separated interchange format).
    #[arg(short, long)]
    output: PathBuf,
    /// TOML configuration; flags take precedence over its values.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// `builtin` or `ingest:<match file>`.
    #[arg(long)]
    matcher: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses one per core.
    #[arg(long)]
    threads: Option<usize>,
    /// Also write `<output>.ransac.tsv` holding the inliers of a final robust
    /// fit with this threshold (px).
    #[arg(long, num_args = 0..=1, default_missing_value = FINAL_RANSAC_DEFAULT)]
    final_ransac: Option<f64>,
    /// Model of the final fit.
    #[arg(long, value_enum)]
    scene: Option<SceneKind>,
    /// Pipeline setting `key=value`, e.g. `t_perp=10` or `delaunay.max_rounds=4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Diagnostics file; defaults to `<output>.diagnostics.txt`.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Side-by-side PNG with one line per match.
    #[arg(long)]
    overlay: Option<PathBuf>,
    /// Ground truth used to colour the overlay.
    #[arg(long)]
    gt: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Images of a single pair (dimensions only).
    #[arg(requires_all = ["img2", "matches", "gt"], conflicts_with = "manifest")]
    img1: Option<PathBuf>,
    img2: Option<PathBuf>,
    #[arg(long)]
    matches: Option<PathBuf>,
    #[arg(long)]
    gt: Option<PathBuf>,
    /// Valid-region masks of a single pair; override the ground-truth file.
    #[arg(long, num_args = 2, value_names = ["MASK1", "MASK2"])]
    masks: Option<Vec<PathBuf>>,
    /// One pair per line: `img1 img2 gt [mask1 mask2]`, paths relative to the manifest.
    #[arg(long, requires = "matches_dir")]
    manifest: Option<PathBuf>,
    /// Match files of a manifest run: the k-th pair (from 1) reads `<dir>/<k>.tsv`.
    #[arg(long)]
    matches_dir: Option<PathBuf>,
    #[arg(long, default_value_t = eval::T_PERP)]
    t_perp: f64,
    /// Also write the key=value report here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GridArgs {
    image: PathBuf,
    /// Listing file; stdout when absent.
    #[arg(long)]
    listing: Option<PathBuf>,
    /// Writes `<prefix>-s1.png` .. `<prefix>-s3.png` and `<prefix>-tiles.png`.
    #[arg(long)]
    overlay: Option<PathBuf>,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Match(a) => cmd_match(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Grid(a) => cmd_grid(a),
    }
}

fn load_image(p: &Path) -> Result<RasterImage> {
    RasterImage::load(p).with_context(|| format!("reading image {}", p.display()))
}

fn load_matches(p: &Path) -> Result<Vec<Match>> {
    let f = File::open(p).with_context(|| format!("opening match file {}", p.display()))?;
    Ok(ingest_matches(BufReader::new(f))
        .with_context(|| format!("reading match file {}", p.display()))?
        .into_vec())
}

fn load_gt(p: &Path) -> Result<GroundTruth> {
    let f = File::open(p).with_context(|| format!("opening ground truth {}", p.display()))?;
    GroundTruth::load(BufReader::new(f)).with_context(|| format!("reading ground truth {}", p.display()))
}

/// Empty input writes an empty file rather than a lone header.
fn write_matches(p: &Path, matches: &[Match]) -> Result<()> {
    let mut w = BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?);
    if !matches.is_empty() {
        emit_matches(&mut w, matches)?;
    }
    w.flush()?;
    Ok(())
}

fn write_text(p: &Path, text: &str) -> Result<()> {
    std::fs::write(p, text).with_context(|| format!("writing {}", p.display()))
}

fn run(img1: &RasterImage, img2: &RasterImage, cfg: &RunConfig) -> Result<SlimeOutput> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .context("starting worker pool")?;
    let out = pool.install(|| match &cfg.matcher {
        MatcherChoice::Builtin => {
            let matcher = BuiltinMatcher {
                nnr_threshold: cfg.pipeline.nnr_threshold,
                ..BuiltinMatcher::default()
            };
            run_slime(img1, img2, &matcher, &cfg.pipeline).map_err(anyhow::Error::from)
        }
        MatcherChoice::Ingest(p) => {
            let input = load_matches(p)?;
            eval::check_matches_within(&input, img1.dims(), img2.dims())
                .with_context(|| format!("ingested matches {}", p.display()))?;
            run_slime_with_matches(img1.dims(), img2.dims(), &input, &cfg.pipeline).map_err(anyhow::Error::from)
        }
    })?;
    Ok(out)
}

fn final_fit(matches: &[Match], threshold: f64, scene: SceneKind, seed: u64) -> Vec<Match> {
    let rc = RansacConfig::new(threshold, FINAL_RANSAC_ITERS, seed);
    let inliers = match scene {
        SceneKind::Homography => ransac_homography(matches, &rc).inlier_indices,
        SceneKind::Fundamental => ransac_fundamental(matches, &rc).inlier_indices,
    };
    inliers.into_iter().map(|i| matches[i]).collect()
}

fn cmd_match(a: MatchArgs) -> Result<()> {
    let flags = Overrides {
        seed: a.seed,
        threads: a.threads,
        matcher: a.matcher,
        final_ransac: a.final_ransac,
        scene: a.scene,
        set: a.set,
    };
    let cfg = RunConfig::resolve(a.config.as_deref(), &flags)?;
    let img1 = load_image(&a.img1)?;
    let img2 = load_image(&a.img2)?;
    let gt = a.gt.as_deref().map(load_gt).transpose()?;

    let start = Instant::now();
    let out = run(&img1, &img2, &cfg)?;
    log::info!("matched in {:.2?}", start.elapsed());
    let matches = dedup_coordinates(out.matches.as_slice());
    write_matches(&a.output, &matches)?;

    let mut diag = out.diagnostics.report();
    diag.push_str(&format!("emitted={}\n", matches.len()));
    if matches.is_empty() {
        eprintln!("note: no matches survived; wrote an empty match file");
    }
    if let Some(t) = cfg.final_ransac {
        let kept = final_fit(&matches, t, cfg.scene, cfg.pipeline.ransac_seed);
        write_matches(&a.output.with_extension("ransac.tsv"), &kept)?;
        diag.push_str(&format!("final_ransac_inliers={}\n", kept.len()));
    }
    let diag_path = a.diagnostics.unwrap_or_else(|| a.output.with_extension("diagnostics.txt"));
    write_text(&diag_path, &diag)?;

    if let Some(p) = &a.overlay {
        overlay::match_overlay(&img1, &img2, &matches, gt.as_ref(), cfg.pipeline.t_perp)
            .save(p)
            .with_context(|| format!("writing overlay {}", p.display()))?;
    }
    Ok(())
}

struct PairJob {
    img1: PathBuf,
    img2: PathBuf,
    gt: PathBuf,
    masks: Option<(PathBuf, PathBuf)>,
    matches: PathBuf,
}

fn relative_to(base: &Path, p: &str) -> PathBuf {
    let p = Path::new(p);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn parse_manifest(path: &Path, matches_dir: &Path) -> Result<Vec<PairJob>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut jobs = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let t = line.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        let f: Vec<&str> = t.split_whitespace().collect();
        if f.len() != 3 && f.len() != 5 {
            bail!("{}:{}: expected `img1 img2 gt [mask1 mask2]`", path.display(), n + 1);
        }
        jobs.push(PairJob {
            img1: relative_to(base, f[0]),
            img2: relative_to(base, f[1]),
            gt: relative_to(base, f[2]),
            masks: (f.len() == 5).then(|| (relative_to(base, f[3]), relative_to(base, f[4]))),
            matches: matches_dir.join(format!("{}.tsv", jobs.len() + 1)),
        });
    }
    Ok(jobs)
}

fn image_dims(p: &Path) -> Result<(usize, usize)> {
    let (w, h) = image::image_dimensions(p).with_context(|| format!("reading image {}", p.display()))?;
    Ok((w as usize, h as usize))
}

fn evaluate_job(job: &PairJob, cfg: &EvalConfig) -> Result<MetricReport> {
    let dims1 = image_dims(&job.img1)?;
    let dims2 = image_dims(&job.img2)?;
    let gt = load_gt(&job.gt)?;
    let matches = load_matches(&job.matches)?;
    // mask paths inside a ground-truth file are relative to that file
    let mask_paths = job.masks.clone().or_else(|| {
        let base = job.gt.parent().unwrap_or(Path::new("."));
        gt.masks.as_ref().map(|(a, b)| (base.join(a), base.join(b)))
    });
    let masks = match &mask_paths {
        Some((a, b)) => Some((Mask::load(a)?, Mask::load(b)?)),
        None => None,
    };
    let report = evaluate_pair(&matches, &gt, dims1, dims2, masks.as_ref().map(|(a, b)| (a, b)), cfg)
        .with_context(|| format!("evaluating {}", job.matches.display()))?;
    Ok(report)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    if a.t_perp.is_nan() || a.t_perp <= 0.0 {
        bail!("--t-perp must be positive");
    }
    let cfg = EvalConfig {
        t_perp: a.t_perp,
        ..EvalConfig::default()
    };
    let mut text = String::new();
    let key_values = if let Some(manifest) = &a.manifest {
        let dir = a.matches_dir.as_deref().expect("clap enforces --matches-dir");
        let jobs = parse_manifest(manifest, dir)?;
        let mut reports = Vec::with_capacity(jobs.len());
        for (k, job) in jobs.iter().enumerate() {
            let r = evaluate_job(job, &cfg)?;
            text.push_str(&format!("pair {}: {}", k + 1, r.human()));
            reports.push(r);
        }
        let d = aggregate(&reports);
        text.push_str(&format!(
            "{} pairs: mean coverage {:.2}%  mean precision {:.2}%  accuracy {:.2}%  no matches {}  only wrong {}\n",
            d.pairs,
            100.0 * d.mean_coverage,
            100.0 * d.mean_precision,
            100.0 * d.accuracy,
            d.no_matches,
            d.only_wrong
        ));
        d.key_values()
    } else {
        let (Some(img1), Some(img2), Some(matches), Some(gt)) = (a.img1, a.img2, a.matches, a.gt) else {
            bail!("give either IMG1 IMG2 --matches --gt, or --manifest with --matches-dir");
        };
        let job = PairJob {
            img1,
            img2,
            gt,
            masks: a.masks.map(|m| (m[0].clone(), m[1].clone())),
            matches,
        };
        let r = evaluate_job(&job, &cfg)?;
        text.push_str(&r.human());
        r.key_values()
    };
    print!("{text}{key_values}");
    if let Some(p) = &a.report {
        write_text(p, &key_values)?;
    }
    Ok(())
}

fn cmd_grid(a: GridArgs) -> Result<()> {
    let dims = image_dims(&a.image)?;
    let grid = build_block_grid(dims).with_context(|| format!("building grid for {}", a.image.display()))?;
    let listing = grid.listing();
    match &a.listing {
        Some(p) => write_text(p, &listing)?,
        None => print!("{listing}"),
    }
    if let Some(prefix) = &a.overlay {
        let img = load_image(&a.image)?;
        for (name, raster) in overlay::grid_overlays(&img, &grid)? {
            let mut file = prefix.as_os_str().to_owned();
            file.push(format!("-{name}.png"));
            let p = PathBuf::from(file);
            raster.save(&p).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    Ok(())
}
