use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hypevpr::hierarchy::{Encoder, FeatureGrid};
use hypevpr::hypgeo::BallPoint;
use hypevpr::index::{
    build_index, exhaustive_search, load_index, persist_index, read_grid_file, retrieve,
    write_grid_file, DatabaseIndex, EvalCounter, Geotag, PanoramaInput, RetrievalConfig,
    ScoredResult, StoredLevels, Variant,
};
use hypevpr::synth::{
    evaluate_recall, generate_dataset, generate_queries, grid_search_weights, SceneSpec,
};
use hypevpr::{verify, viz};

/// Seed-stream used for validation queries written by `synth`.
const VALIDATION_STREAM: u64 = 1;
const MAX_RECALL_K: usize = 20;

#[derive(Parser)]
#[command(
    name = "hypevpr",
    version,
    about = "Hierarchical hyperbolic place-recognition toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panorama/query corpus.
    Synth(SynthArgs),
    /// Encode panorama feature grids into an index file.
    Build(BuildArgs),
    /// Rank index records for one or more query grids.
    Query(QueryArgs),
    /// Export per-descriptor norm/angle CSV.
    Viz(VizArgs),
    /// Measure recall, evaluation counts and latency over a query set.
    Bench(BenchArgs),
    /// Run the built-in invariant suites.
    Verify,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 100)]
    panoramas: usize,
    #[arg(long, default_value_t = 5)]
    levels: usize,
    /// Feature channels per grid cell.
    #[arg(long, default_value_t = 64)]
    dim: usize,
    /// Cells per leaf as HEIGHTxWIDTH.
    #[arg(long, default_value = "4x4")]
    grid: String,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    /// Total number of queries.
    #[arg(long, default_value_t = 100)]
    queries: usize,
    /// Additional queries from an independent draw, for weight selection.
    #[arg(long, default_value_t = 0)]
    validation_queries: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct BuildArgs {
    /// Directory holding `pano_<id>.hfgr` files (or a `synth` output directory).
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 5)]
    levels: usize,
    /// Comma-separated levels to keep, e.g. `1,5`; defaults to all.
    #[arg(long)]
    store_levels: Option<String>,
    #[arg(long, default_value_t = 1.0)]
    curvature: f64,
    /// Descriptor dimension; defaults to the feature channel count.
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    /// Grid file; every grid in it is a separate query.
    #[arg(long)]
    query: PathBuf,
    #[arg(long, default_value_t = 100)]
    kprime: usize,
    /// Comma-separated rescoring levels (may be empty for root-only ranking).
    #[arg(long, default_value = "")]
    levels: String,
    /// Comma-separated weights for level 1 followed by each rescoring level.
    #[arg(long)]
    weights: Option<String>,
    #[arg(long, default_value_t = 10)]
    topk: usize,
    #[arg(long)]
    json: bool,
}

#[derive(clap::Args)]
struct VizArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Hier,
    Exhaustive,
}

#[derive(Clone, Copy, ValueEnum, Serialize)]
enum Preset {
    #[value(name = "O")]
    O,
    #[value(name = "B")]
    B,
    #[value(name = "L")]
    L,
    #[value(name = "SW")]
    SW,
}

impl Preset {
    fn variant(self) -> Variant {
        match self {
            Preset::O => Variant::One,
            Preset::B => Variant::Balanced,
            Preset::L => Variant::Leaf,
            Preset::SW => Variant::SlidingWindow,
        }
    }
}

#[derive(clap::Args)]
struct BenchArgs {
    #[arg(long)]
    index: PathBuf,
    /// A `synth` output directory (queries/ and ground_truth.csv).
    #[arg(long)]
    queries: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Hier)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = Preset::L)]
    preset: Preset,
    #[arg(long, default_value_t = 100)]
    kprime: usize,
    /// Explicit fusion weights (level 1 first); overrides the preset's uniform weights.
    #[arg(long)]
    weights: Option<String>,
    /// Comma-separated grid of per-level weights to search on the validation queries.
    #[arg(long)]
    weight_grid: Option<String>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct TruthRow {
    query: usize,
    panorama: u64,
    leaf: usize,
}

#[derive(Serialize, Deserialize)]
struct GeotagRow {
    id: u64,
    lat: f64,
    lon: f64,
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| anyhow!("invalid {what} entry {t:?}")))
        .collect()
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| anyhow!("grid must look like 4x4, got {s:?}"))?;
    Ok((
        h.trim().parse().context("grid height")?,
        w.trim().parse().context("grid width")?,
    ))
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w =
        csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r =
        csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .with_context(|| format!("malformed {}", path.display()))
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let (grid_height, grid_width) = parse_grid(&a.grid)?;
    let spec = SceneSpec {
        n_panoramas: a.panoramas,
        channels: a.dim,
        grid_height,
        grid_width,
        levels: a.levels,
        noise: a.noise,
        n_queries: a.queries,
        seed: a.seed,
    };
    let ds = generate_dataset(&spec)?;
    let pano_dir = a.out.join("panoramas");
    let query_dir = a.out.join("queries");
    fs::create_dir_all(&pano_dir)?;
    fs::create_dir_all(&query_dir)?;
    for p in &ds.panoramas {
        write_grid_file(
            pano_dir.join(format!("pano_{:06}.hfgr", p.id)),
            &p.leaf_grids,
        )?;
    }
    let write_queries = |dir: &Path, qs: &[hypevpr::synth::SyntheticQuery]| -> Result<()> {
        for (i, q) in qs.iter().enumerate() {
            write_grid_file(
                dir.join(format!("query_{i:06}.hfgr")),
                std::slice::from_ref(&q.grid),
            )?;
        }
        let rows = qs.iter().enumerate().map(|(i, q)| TruthRow {
            query: i,
            panorama: q.panorama,
            leaf: q.leaf,
        });
        write_csv(&dir.join("ground_truth.csv"), rows)
    };
    write_queries(&query_dir, &ds.queries)?;
    if a.validation_queries > 0 {
        let dir = a.out.join("validation");
        fs::create_dir_all(&dir)?;
        let qs = generate_queries(&ds, a.validation_queries, a.noise, VALIDATION_STREAM)?;
        write_queries(&dir, &qs)?;
    }
    let tags = ds.panoramas.iter().filter_map(|p| {
        p.geotag.map(|g| GeotagRow {
            id: p.id,
            lat: g.lat,
            lon: g.lon,
        })
    });
    write_csv(&a.out.join("geotags.csv"), tags)?;
    println!(
        "wrote {} panoramas and {} queries to {}",
        ds.panoramas.len(),
        ds.queries.len(),
        a.out.display()
    );
    Ok(())
}

fn panorama_files(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("cannot read {}", dir.display()))? {
        let path = entry?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if let Some(id) = name
            .strip_prefix("pano_")
            .and_then(|n| n.strip_suffix(".hfgr"))
        {
            let id = id
                .parse()
                .with_context(|| format!("bad panorama file name {name}"))?;
            out.push((id, path));
        }
    }
    out.sort();
    Ok(out)
}

fn cmd_build(a: BuildArgs) -> Result<()> {
    let dir = if a.features.join("panoramas").is_dir() {
        a.features.join("panoramas")
    } else {
        a.features.clone()
    };
    let files = panorama_files(&dir)?;
    if files.is_empty() {
        bail!("no pano_<id>.hfgr files in {}", dir.display());
    }
    let geotags: BTreeMap<u64, Geotag> = [a.features.join("geotags.csv"), dir.join("geotags.csv")]
        .iter()
        .find(|p| p.is_file())
        .map(|p| read_csv::<GeotagRow>(p))
        .transpose()?
        .unwrap_or_default()
        .into_iter()
        .map(|g| {
            (
                g.id,
                Geotag {
                    lat: g.lat,
                    lon: g.lon,
                },
            )
        })
        .collect();
    let inputs = files
        .iter()
        .map(|(id, path)| {
            let leaf_grids =
                read_grid_file(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(PanoramaInput {
                id: *id,
                geotag: geotags.get(id).copied(),
                leaf_grids,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let channels = inputs[0]
        .leaf_grids
        .first()
        .map(FeatureGrid::channels)
        .ok_or_else(|| anyhow!("empty panorama file"))?;
    let encoder =
        Encoder::with_defaults(a.curvature, channels, a.dim.unwrap_or(channels), a.levels)?;
    let stored = match &a.store_levels {
        Some(s) => StoredLevels::new(&parse_list(s, "stored level")?, a.levels)?,
        None => StoredLevels::all(a.levels),
    };
    let index = build_index(&inputs, &encoder, stored)?;
    let bytes = persist_index(&index, &a.out)?;
    println!(
        "indexed {} panoramas ({bytes} bytes) into {}",
        index.len(),
        a.out.display()
    );
    Ok(())
}

/// Encoder compatible with `index` for query grids with `channels` channels.
fn query_encoder(index: &DatabaseIndex, channels: usize) -> Result<Encoder> {
    let ball = index.ball();
    Ok(Encoder::with_defaults(
        ball.curvature(),
        channels,
        ball.dim(),
        index.depth(),
    )?)
}

fn embed_all(index: &DatabaseIndex, grids: &[FeatureGrid]) -> Result<Vec<BallPoint>> {
    let Some(first) = grids.first() else {
        return Ok(Vec::new());
    };
    let enc = query_encoder(index, first.channels())?;
    Ok(grids
        .iter()
        .map(|g| enc.embed_query(g))
        .collect::<hypevpr::Result<Vec<_>>>()?)
}

#[derive(Serialize)]
struct QueryHit {
    rank: usize,
    id: u64,
    score: f64,
    distances: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lon: Option<f64>,
}

fn hit(index: &DatabaseIndex, r: &ScoredResult) -> QueryHit {
    let tag = index.record(r.id).and_then(|rec| rec.geotag());
    QueryHit {
        rank: r.rank,
        id: r.id,
        score: r.score,
        distances: r
            .distances
            .iter()
            .map(|(l, d)| (l.to_string(), *d))
            .collect(),
        lat: tag.map(|g| g.lat),
        lon: tag.map(|g| g.lon),
    }
}

fn config_from(
    index: &DatabaseIndex,
    kprime: usize,
    levels: Vec<usize>,
    weights: Option<&str>,
    k: usize,
) -> Result<RetrievalConfig> {
    let depth = index.depth();
    let k = k.min(kprime).min(index.len()).max(1);
    let cfg = RetrievalConfig::uniform(kprime, levels, k, depth)?;
    Ok(match weights {
        Some(w) => cfg.with_weights(parse_list(w, "weight")?)?,
        None => cfg,
    })
}

fn cmd_query(a: QueryArgs) -> Result<()> {
    let index = load_index(&a.index).with_context(|| format!("loading {}", a.index.display()))?;
    let grids =
        read_grid_file(&a.query).with_context(|| format!("reading {}", a.query.display()))?;
    let cfg = config_from(
        &index,
        a.kprime,
        parse_list(&a.levels, "level")?,
        a.weights.as_deref(),
        a.topk,
    )?;
    let queries = embed_all(&index, &grids)?;
    let mut all = Vec::new();
    for q in &queries {
        let res = retrieve(&index, q, &cfg, &mut EvalCounter::new())?;
        all.push(res.iter().map(|r| hit(&index, r)).collect::<Vec<_>>());
    }
    let mut out = std::io::stdout().lock();
    if a.json {
        serde_json::to_writer_pretty(&mut out, &all)?;
        writeln!(out)?;
    } else {
        for (qi, hits) in all.iter().enumerate() {
            for h in hits {
                writeln!(out, "{qi}\t{}\t{}\t{:.6}", h.rank, h.id, h.score)?;
            }
        }
    }
    Ok(())
}

fn cmd_viz(a: VizArgs) -> Result<()> {
    let index = load_index(&a.index).with_context(|| format!("loading {}", a.index.display()))?;
    let rows = viz::descriptor_rows(&index)?;
    let mut text = String::from(viz::CSV_HEADER);
    text.push('\n');
    for r in &rows {
        text.push_str(&r.csv_line());
        text.push('\n');
    }
    fs::write(&a.out, text).with_context(|| format!("cannot write {}", a.out.display()))?;
    Ok(())
}

#[derive(Serialize)]
struct BenchConfig {
    mode: Mode,
    preset: Preset,
    #[serde(skip_serializing_if = "Option::is_none")]
    k_prime: Option<usize>,
    levels: Vec<usize>,
    weights: Vec<f64>,
    weights_tuned: bool,
    curvature: f64,
    depth: usize,
    stored_levels: Vec<usize>,
}

#[derive(Serialize)]
struct RecallAt {
    #[serde(rename = "1")]
    r1: f64,
    #[serde(rename = "5")]
    r5: f64,
    #[serde(rename = "10")]
    r10: f64,
    #[serde(rename = "20")]
    r20: f64,
}

#[derive(Serialize)]
struct BenchReport {
    n_records: usize,
    n_queries: usize,
    config: BenchConfig,
    recall_at: RecallAt,
    mean_eval_count: f64,
    mean_query_micros: f64,
    storage_bytes: u64,
}

fn load_query_set(index: &DatabaseIndex, dir: &Path) -> Result<(Vec<BallPoint>, Vec<u64>)> {
    let truth: Vec<TruthRow> = read_csv(&dir.join("ground_truth.csv"))?;
    let grids = truth
        .iter()
        .map(|t| {
            let path = dir.join(format!("query_{:06}.hfgr", t.query));
            let mut g =
                read_grid_file(&path).with_context(|| format!("reading {}", path.display()))?;
            if g.len() != 1 {
                bail!("{} holds {} grids, expected 1", path.display(), g.len());
            }
            Ok(g.remove(0))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((
        embed_all(index, &grids)?,
        truth.iter().map(|t| t.panorama).collect(),
    ))
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let index = load_index(&a.index).with_context(|| format!("loading {}", a.index.display()))?;
    let storage_bytes = fs::metadata(&a.index)?.len();
    let qdir = if a.queries.join("queries").is_dir() {
        a.queries.join("queries")
    } else {
        a.queries.clone()
    };
    let (queries, truth) = load_query_set(&index, &qdir)?;
    if queries.is_empty() {
        bail!("no queries in {}", qdir.display());
    }
    let depth = index.depth();
    let k = MAX_RECALL_K;
    let exhaustive = matches!(a.mode, Mode::Exhaustive) || matches!(a.preset, Preset::SW);
    let levels = a.preset.variant().rescore_levels(depth);
    let mut cfg = config_from(&index, a.kprime, levels.clone(), a.weights.as_deref(), k)?;
    let mut weights_tuned = false;
    if let (Some(grid), false) = (&a.weight_grid, exhaustive) {
        let vdir = a.queries.join("validation");
        if !vdir.is_dir() {
            bail!(
                "--weight-grid needs validation queries in {}",
                vdir.display()
            );
        }
        let (vq, vt) = load_query_set(&index, &vdir)?;
        cfg = grid_search_weights(&index, &vq, &vt, &cfg, &parse_list(grid, "weight")?)?.0;
        weights_tuned = true;
    }
    let k = k.min(index.len());
    let runs = queries
        .par_iter()
        .map(|q| {
            let mut counter = EvalCounter::new();
            let t = Instant::now();
            let res = if exhaustive {
                exhaustive_search(&index, q, k, &mut counter)?
            } else {
                retrieve(&index, q, &cfg, &mut counter)?
            };
            let micros = t.elapsed().as_secs_f64() * 1e6;
            Ok((
                res.iter().map(|r| r.id).collect::<Vec<_>>(),
                counter.get(),
                micros,
            ))
        })
        .collect::<hypevpr::Result<Vec<_>>>()?;
    let n = runs.len() as f64;
    let ids: Vec<Vec<u64>> = runs.iter().map(|r| r.0.clone()).collect();
    let recall = |k| evaluate_recall(&ids, &truth, k);
    let recall_at = RecallAt {
        r1: recall(1)?,
        r5: recall(5)?,
        r10: recall(10)?,
        r20: recall(20)?,
    };
    let report = BenchReport {
        n_records: index.len(),
        n_queries: runs.len(),
        config: BenchConfig {
            mode: if exhaustive {
                Mode::Exhaustive
            } else {
                Mode::Hier
            },
            preset: a.preset,
            k_prime: (!exhaustive).then(|| cfg.k_prime()),
            levels: if exhaustive {
                vec![depth]
            } else {
                cfg.levels().to_vec()
            },
            weights: if exhaustive {
                Vec::new()
            } else {
                cfg.weights().to_vec()
            },
            weights_tuned,
            curvature: index.ball().curvature(),
            depth,
            stored_levels: index.stored_levels().iter().collect(),
        },
        recall_at,
        mean_eval_count: runs.iter().map(|r| r.1 as f64).sum::<f64>() / n,
        mean_query_micros: runs.iter().map(|r| r.2).sum::<f64>() / n,
        storage_bytes,
    };
    let json = serde_json::to_string_pretty(&report)?;
    match &a.report {
        Some(p) => {
            fs::write(p, json + "\n").with_context(|| format!("cannot write {}", p.display()))?
        }
        None => writeln!(std::io::stdout().lock(), "{json}")?,
    }
    Ok(())
}

fn cmd_verify() -> Result<()> {
    let outcomes = verify::run_all();
    for c in &outcomes {
        println!(
            "{} {}: {}",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    let failed = outcomes.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        bail!("{failed} invariant suite(s) failed");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if !matches!(cli.command, Command::Bench(_)) {
        // only `bench` fans out across threads
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build_global();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Build(a) => cmd_build(a),
        Command::Query(a) => cmd_query(a),
        Command::Viz(a) => cmd_viz(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Verify => cmd_verify(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("invalid arguments"));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e)
            if e.downcast_ref::<std::io::Error>()
                .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe) =>
        {
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}
