use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use provfilter::annindex::{self, Backend, IndexParams, DIM};
use provfilter::config::Config;
use provfilter::evalharness::bench::{rows_tsv, to_records, MixedGaussian};
use provfilter::evalharness::synth::render_base_image;
use provfilter::evalharness::{self, bench_backends, generate_corpus, read_manifest, GenOptions, ImageRole};
use provfilter::imagecore::load_image;
use provfilter::pipeline::{run_query, FeatureStore, ImageSource};

#[derive(Parser)]
#[command(name = "provfilter", version, about = "Two-tier image provenance filtering")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract features for every gallery image of a manifest and build an index.
    Index(IndexArgs),
    /// Run one query image against a saved index.
    Query(QueryArgs),
    /// Run all manifest queries and write a recall report.
    Eval(EvalArgs),
    /// Compare indexing backends on build time, latency, memory and recall@1.
    Bench(BenchArgs),
    /// Generate a synthetic composite corpus from a directory of base images.
    Gen(GenArgs),
    /// Render procedural base images.
    Base(BaseArgs),
}

#[derive(Args)]
struct IndexArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long, default_value = "kdforest")]
    backend: Backend,
    #[arg(long)]
    out: PathBuf,
    /// Keypoints per gallery image; defaults to the config value.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Backend parameters as key=value, e.g. `trees=4 checks=inf`.
    #[arg(long, num_args = 1..)]
    params: Vec<String>,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Defaults to the image file stem.
    #[arg(long)]
    id: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Report path; a per-query TSV is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Also write every query's lists and mask here.
    #[arg(long)]
    results: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Manifest whose gallery descriptors form the benchmark corpus.
    #[arg(long, required_unless_present = "synthetic")]
    corpus: Option<PathBuf>,
    /// Use this many mixed-Gaussian descriptors instead of a corpus.
    #[arg(long, conflicts_with = "corpus")]
    synthetic: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "brute,kdtree,kdforest,pq,hkmeans")]
    backends: Vec<Backend>,
    #[arg(long, default_value_t = 1000)]
    queries: usize,
    #[arg(long, default_value_t = 5)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 500)]
    budget: usize,
    #[arg(long, num_args = 1..)]
    params: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    base: PathBuf,
    #[arg(long, default_value_t = 100)]
    distractors: usize,
    #[arg(long, default_value_t = 10)]
    composites: usize,
    /// Donors per composite: a count (`2`) or an inclusive range (`1-2`).
    #[arg(long, default_value = "1-2")]
    donors: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BaseArgs {
    #[arg(long, default_value_t = 120)]
    count: usize,
    #[arg(long, default_value_t = 256)]
    width: usize,
    #[arg(long, default_value_t = 192)]
    height: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Index(a) => index(a),
        Command::Query(a) => query(a),
        Command::Eval(a) => eval(a),
        Command::Bench(a) => bench(a),
        Command::Gen(a) => gen(a),
        Command::Base(a) => base(a),
    }
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => Config::load(p).with_context(|| format!("loading config {}", p.display())),
        None => Ok(Config::default()),
    }
}

fn apply_params(params: &mut IndexParams, pairs: &[String]) -> Result<()> {
    for kv in pairs {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("expected key=value, got {kv:?}");
        };
        params.set(k, v)?;
    }
    Ok(())
}

fn manifest_dir(manifest: &Path) -> Result<PathBuf> {
    let dir = manifest.parent().unwrap_or(Path::new("."));
    let dir = if dir.as_os_str().is_empty() { Path::new(".") } else { dir };
    dir.canonicalize().with_context(|| format!("resolving {}", dir.display()))
}

fn gallery_store(manifest: &Path, budget: usize, config: &Config) -> Result<FeatureStore> {
    let entries = read_manifest(manifest)?;
    let dir = manifest_dir(manifest)?;
    let images: Vec<_> = entries
        .iter()
        .filter(|e| e.is_gallery())
        .map(|e| (e.image_id.clone(), ImageSource::Path(dir.join(&e.path))))
        .collect();
    if images.is_empty() {
        bail!("{} lists no gallery images", manifest.display());
    }
    Ok(FeatureStore::extract(images, budget, &config.detector)?)
}

fn index(a: IndexArgs) -> Result<()> {
    let mut config = load_config(a.config.as_deref())?;
    config.index.backend = a.backend;
    apply_params(&mut config.index.params, &a.params)?;
    if let Some(s) = a.seed {
        config.seed = s;
    }
    let budget = a.budget.unwrap_or(config.budgets.index);
    let store = gallery_store(&a.corpus, budget, &config)?;
    let handle = store.build_index(&config)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    annindex::save_index(&handle, &a.out)?;
    store.save(&a.out)?;
    let s = handle.stats();
    eprintln!(
        "indexed {} images, {} descriptors, backend {}, {} bytes, built in {:.2}s",
        store.len(),
        s.n,
        s.backend,
        s.memory_bytes,
        s.build_seconds
    );
    Ok(())
}

fn query(a: QueryArgs) -> Result<()> {
    let config = load_config(a.config.as_deref())?;
    let handle = annindex::load_index(&a.index)?;
    let store = FeatureStore::load(&a.index)?;
    let img = load_image(&a.image)?;
    let id = a
        .id
        .unwrap_or_else(|| a.image.file_stem().and_then(|s| s.to_str()).unwrap_or("query").to_string());
    let r = run_query(&id, &img, &handle, &store, &config)?;
    r.write_to_dir(&a.out)?;
    println!("{}", r.final_list.to_tsv().trim_end());
    eprintln!(
        "verdict {:?}, r_best {}, {} tier-2 lists, {:.3}s",
        r.verdict,
        r.r_best.as_deref().unwrap_or("-"),
        r.tier2.len(),
        r.timings.total
    );
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let config = load_config(Some(&a.config))?;
    let handle = annindex::load_index(&a.index)?;
    let store = FeatureStore::load(&a.index)?;
    let entries = read_manifest(&a.manifest)?;
    let dir = manifest_dir(&a.manifest)?;
    let (report, outcomes) = evalharness::run_eval(&entries, &dir, &handle, &store, &config)?;
    std::fs::write(&a.out, report.to_json() + "\n").with_context(|| format!("writing {}", a.out.display()))?;
    std::fs::write(a.out.with_extension("tsv"), report.rows_tsv())?;
    if let Some(rdir) = &a.results {
        for r in outcomes.iter().filter_map(|o| o.result.as_ref()) {
            r.write_to_dir(rdir)?;
        }
    }
    for k in [1, 10, 50] {
        use evalharness::{ListKind, Role};
        let get = |l, r| report.recall(l, r, k).unwrap_or(0.0);
        eprintln!(
            "R@{k:<3} host {:.3} -> {:.3}   donor {:.3} -> {:.3}",
            get(ListKind::Tier1, Role::Host),
            get(ListKind::Final, Role::Host),
            get(ListKind::Tier1, Role::Donor),
            get(ListKind::Final, Role::Donor)
        );
    }
    if report.failed_queries > 0 {
        eprintln!("{} queries failed", report.failed_queries);
    }
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let mut params = IndexParams::default();
    apply_params(&mut params, &a.params)?;
    let (records, queries): (_, Vec<[f32; DIM]>) = match (&a.corpus, a.synthetic) {
        (_, Some(n)) => {
            let mix = MixedGaussian::new(64, a.seed);
            (to_records(&mix.sample(n, a.seed ^ 1)), mix.sample(a.queries, a.seed ^ 2))
        }
        (Some(manifest), None) => {
            let config = Config::default();
            let store = gallery_store(manifest, a.budget, &config)?;
            let entries = read_manifest(manifest)?;
            let dir = manifest_dir(manifest)?;
            let qimgs: Vec<_> = entries
                .iter()
                .filter(|e| e.role == ImageRole::Query)
                .map(|e| (e.image_id.clone(), ImageSource::Path(dir.join(&e.path))))
                .collect();
            let qstore = FeatureStore::extract(qimgs, a.budget, &config.detector)?;
            let mut qs: Vec<[f32; DIM]> = qstore.records().into_iter().map(|r| r.vector).collect();
            if qs.is_empty() {
                qs = store.records().into_iter().map(|r| r.vector).collect();
            }
            let step = (qs.len() / a.queries.max(1)).max(1);
            let qs = qs.into_iter().step_by(step).take(a.queries).collect();
            (store.records(), qs)
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let configs: Vec<(Backend, IndexParams)> = a.backends.iter().map(|&b| (b, params)).collect();
    let rows = bench_backends(&records, &queries, &configs, a.seed, a.reps)?;
    let table = rows_tsv(&rows);
    std::fs::write(&a.out, &table)?;
    print!("{table}");
    Ok(())
}

fn parse_donors(s: &str) -> Result<(usize, usize)> {
    let parse = |t: &str| t.trim().parse::<usize>().with_context(|| format!("bad donor count {t:?}"));
    match s.split_once('-') {
        Some((lo, hi)) => Ok((parse(lo)?, parse(hi)?)),
        None => {
            let n = parse(s)?;
            Ok((n, n))
        }
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let (donors_min, donors_max) = parse_donors(&a.donors)?;
    let opts = GenOptions {
        n_distractors: a.distractors,
        n_composites: a.composites,
        donors_min,
        donors_max,
        seed: a.seed,
        ..GenOptions::default()
    };
    let corpus = generate_corpus(&a.base, &opts, &a.out)?;
    eprintln!(
        "wrote {} gallery images and {} queries to {}",
        corpus.gallery.len(),
        corpus.queries.len(),
        a.out.display()
    );
    Ok(())
}

fn base(a: BaseArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out)?;
    for i in 0..a.count {
        let img = render_base_image(a.width, a.height, a.seed.wrapping_add(i as u64));
        img.save(a.out.join(format!("base{i:05}.png")))?;
    }
    eprintln!("rendered {} images into {}", a.count, a.out.display());
    Ok(())
}
