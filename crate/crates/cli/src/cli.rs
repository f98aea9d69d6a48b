use std::collections::HashMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use kgalign_core::align::{explain_predictions, test_candidates, RemovalTarget, DEFAULT_TOP_N};
use kgalign_core::training::loss_csv;
use kgalign_core::{
    evaluate, gen_synthetic_pair, partition_graph, removal_analysis, train_with, AlignmentModel, Checkpoint, GraphPair, KnowledgeGraph,
    Metric, ModelConfig, Normalization, SeedAlignment, Side, SyntheticConfig, TrainConfig,
};

use crate::decisions::DecisionBook;
use crate::server::{router, AppState, DECISION_LOG};

pub const DATA_DIR_ENV: &str = "IALIGN_DATA_DIR";
pub const DEFAULT_DATA_DIR: &str = "data";
pub const DEFAULT_TRAIN_FRACTION: f64 = 0.3;
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Parser, Debug)]
#[command(name = "kgalign", version, about = "Interpretable knowledge-graph entity alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and write a checkpoint directory.
    Train(TrainArgs),
    /// Hits@k of a checkpoint on the test split.
    Eval(EvalArgs),
    /// Top-1 predictions of the test split with attribute and neighbor explanations.
    Explain(ExplainArgs),
    /// Feature-removal analysis: Hits@1 and explanation Jaccard per run.
    Removal(RemovalArgs),
    /// Partition one or both graphs and report the edge cut.
    Partition(PartitionArgs),
    /// Write a synthetic pair: a.tsv, b.tsv and gold.tsv.
    GenSynthetic(GenArgs),
    /// Serve predictions and explanations for curation over HTTP.
    Serve(ServeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Triples of graph A (TSV: head, predicate, tail-or-literal, R|A).
    #[arg(long)]
    pub kg_a: PathBuf,
    /// Triples of graph B.
    #[arg(long)]
    pub kg_b: PathBuf,
    /// Known alignment (TSV: A entity, B entity).
    #[arg(long)]
    pub seed: PathBuf,
    /// Share of `--seed` pairs used for training; the rest is the test split.
    #[arg(long, default_value_t = DEFAULT_TRAIN_FRACTION)]
    pub train_fraction: f64,
}

impl DataArgs {
    fn load(&self, split_seed: u64) -> Result<(GraphPair, SeedAlignment)> {
        let a = KnowledgeGraph::parse_file(&self.kg_a, Side::A)?;
        let b = KnowledgeGraph::parse_file(&self.kg_b, Side::B)?;
        let seeds = SeedAlignment::load(&self.seed, &a, &b, self.train_fraction, split_seed)?;
        log::info!(
            "loaded {} + {} entities, {} seed pairs ({} train)",
            a.num_entities(),
            b.num_entities(),
            seeds.len(),
            seeds.train_pairs().len()
        );
        Ok((GraphPair::new(a, b), seeds))
    }
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint directory to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    pub epochs: usize,
    /// Parts per graph (default: one part per ~512 entities).
    #[arg(long)]
    pub parts: Option<usize>,
    #[arg(long, default_value_t = ModelConfig::default().dim)]
    pub dim: usize,
    #[arg(long, default_value_t = ModelConfig::default().heads)]
    pub heads: usize,
    #[arg(long, default_value_t = ModelConfig::default().layers)]
    pub layers: usize,
    #[arg(long, default_value_t = TrainConfig::default().margin)]
    pub margin: f64,
    #[arg(long, default_value_t = TrainConfig::default().negatives)]
    pub negatives: usize,
    #[arg(long, default_value_t = TrainConfig::default().lr)]
    pub lr: f64,
    /// Seeds parameter init, sampling and the train/test split.
    #[arg(long, default_value_t = 0)]
    pub seed_rng: u64,
}

#[derive(Args, Debug)]
pub struct CheckpointArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Split seed (default: the one the checkpoint was trained with).
    #[arg(long)]
    pub seed_rng: Option<u64>,
    #[arg(long, default_value = "cosine")]
    pub metric: Metric,
}

impl CheckpointArgs {
    fn load(&self) -> Result<(GraphPair, SeedAlignment, Checkpoint)> {
        let ck = Checkpoint::load(&self.ckpt)?;
        let (pair, seeds) = self.data.load(self.seed_rng.unwrap_or(ck.config.rng_seed))?;
        ck.verify(&pair)?;
        Ok((pair, seeds, ck))
    }
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    /// Also write the report as CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    #[arg(long, default_value_t = DEFAULT_TOP_N)]
    pub top_n: usize,
    /// JSON output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RemovalArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    #[arg(long, default_value = "attributes")]
    pub target: RemovalTarget,
    #[arg(long, default_value_t = 5)]
    pub runs: usize,
    /// Synonym table for Jaccard (TSV: name, canonical name). Without it,
    /// B-side names are mapped the way the synthetic generator renames them.
    #[arg(long)]
    pub synonyms: Option<PathBuf>,
    /// CSV output file (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PartitionArgs {
    #[arg(long)]
    pub kg_a: PathBuf,
    #[arg(long)]
    pub kg_b: Option<PathBuf>,
    #[arg(long)]
    pub parts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed_rng: u64,
    /// Write `side, entity, part` rows as TSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    #[arg(long, default_value_t = SyntheticConfig::default().n_entities)]
    pub n: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().attr_per_entity)]
    pub attr_per_entity: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().rel_density)]
    pub rel_density: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().char_noise)]
    pub char_noise: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().rel_dropout)]
    pub rel_dropout: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().rng_seed)]
    pub seed_rng: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub common: CheckpointArgs,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = DEFAULT_TOP_N)]
    pub top_n: usize,
    /// Holds the decision log and an optional `ui/` bundle.
    #[arg(long, env = DATA_DIR_ENV, default_value = DEFAULT_DATA_DIR)]
    pub data_dir: PathBuf,
    /// Queue the highest-scoring predictions first.
    #[arg(long)]
    pub highest_first: bool,
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Explain(a) => cmd_explain(a),
        Command::Removal(a) => cmd_removal(a),
        Command::Partition(a) => cmd_partition(a),
        Command::GenSynthetic(a) => cmd_gen(a),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let (pair, seeds) = a.data.load(a.seed_rng)?;
    let cfg = TrainConfig {
        model: ModelConfig {
            dim: a.dim,
            heads: a.heads,
            layers: a.layers,
            ..ModelConfig::default()
        },
        epochs: a.epochs,
        margin: a.margin,
        negatives: a.negatives,
        lr: a.lr,
        rng_seed: a.seed_rng,
        num_parts: a.parts,
        ..TrainConfig::default()
    };
    let out = train_with::<f64>(&cfg, &pair, &seeds, |l, _| {
        log::info!(
            "epoch {}: align {:.4} he1 {:.4} he2 {:.4} reg {:.4}",
            l.epoch,
            l.l_align,
            l.l_he1,
            l.l_he2,
            l.l_reg
        );
        Ok(())
    });
    let out = match out {
        Ok(o) => o,
        Err(kgalign_core::Error::Diverged { epoch, last_good }) => {
            last_good.save(&a.out)?;
            bail!("training diverged at epoch {epoch}; saved the checkpoint of epoch {} to {}", last_good.epoch, a.out.display());
        }
        Err(e) => return Err(e.into()),
    };
    out.checkpoint.save(&a.out)?;
    write(&a.out.join(LOSS_FILE), &loss_csv(&out.history))?;
    let table = AlignmentModel::<f64>::from_checkpoint(&out.checkpoint, &pair)?.embed_all(&pair)?;
    let report = evaluate(&table, &seeds.test_pairs(), &test_candidates(&seeds), Metric::Cosine, &[1, 10], 1)?;
    println!("trained {} epochs, checkpoint in {}", out.checkpoint.epoch, a.out.display());
    print!("{}", report.summary());
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let (pair, seeds, ck) = a.common.load()?;
    let table = AlignmentModel::<f64>::from_checkpoint(&ck, &pair)?.embed_all(&pair)?;
    let report = evaluate(&table, &seeds.test_pairs(), &test_candidates(&seeds), a.common.metric, &[1, 10], 1)?;
    print!("{}", report.summary());
    if let Some(out) = &a.out {
        write(out, &report.to_csv())?;
    }
    Ok(())
}

fn explained(c: &CheckpointArgs, top_n: usize) -> Result<(GraphPair, Vec<kgalign_core::Explanation>)> {
    let (pair, seeds, ck) = c.load()?;
    let model = AlignmentModel::<f64>::from_checkpoint(&ck, &pair)?;
    let (table, ex) = model.explain_all(&pair, top_n)?;
    let report = evaluate(&table, &seeds.test_pairs(), &test_candidates(&seeds), c.metric, &[1], 1)?;
    let explanations = explain_predictions(&report, &ex, &table.joint);
    Ok((pair, explanations))
}

fn cmd_explain(a: ExplainArgs) -> Result<()> {
    let (_, explanations) = explained(&a.common, a.top_n)?;
    let json = serde_json::to_string_pretty(&explanations)?;
    match &a.out {
        Some(p) => write(p, &json),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn load_synonyms(path: &Path) -> Result<Normalization> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut map = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let Some((from, to)) = line.split_once('\t') else {
            bail!("{}: line {}: expected `name<TAB>canonical`", path.display(), i + 1);
        };
        map.insert(from.to_string(), to.to_string());
    }
    Ok(Normalization::new(map))
}

fn cmd_removal(a: RemovalArgs) -> Result<()> {
    if a.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let (pair, seeds, ck) = a.common.load()?;
    let norm = match &a.synonyms {
        Some(p) => load_synonyms(p)?,
        None => Normalization::synthetic(&pair),
    };
    let report = removal_analysis::<f64>(&ck, &pair, &seeds, a.target, a.runs, a.common.metric, &norm)?;
    match &a.out {
        Some(p) => write(p, &report.to_csv()),
        None => {
            print!("{}", report.to_csv());
            Ok(())
        }
    }
}

fn cmd_partition(a: PartitionArgs) -> Result<()> {
    let mut rows = String::from("side\tentity\tpart\n");
    let mut graphs = vec![(Side::A, &a.kg_a)];
    if let Some(b) = &a.kg_b {
        graphs.push((Side::B, b));
    }
    for (side, path) in graphs {
        let kg = KnowledgeGraph::parse_file(path, side)?;
        let p = partition_graph(&kg, a.parts, a.seed_rng)?;
        let sizes: Vec<usize> = p.parts.iter().map(Vec::len).collect();
        println!("{side:?}: {} parts, edge cut {}, sizes {sizes:?}", p.parts.len(), p.edge_cut);
        for (i, part) in p.parts.iter().enumerate() {
            for &v in part {
                rows.push_str(&format!("{side:?}\t{}\t{i}\n", kg.entities().name(v)));
            }
        }
    }
    if let Some(out) = &a.out {
        write(out, &rows)?;
    }
    Ok(())
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let cfg = SyntheticConfig {
        n_entities: a.n,
        attr_per_entity: a.attr_per_entity,
        rel_density: a.rel_density,
        char_noise: a.char_noise,
        rel_dropout: a.rel_dropout,
        rng_seed: a.seed_rng,
    };
    let pair = gen_synthetic_pair(&cfg)?;
    pair.write_dir(&a.out)?;
    println!(
        "wrote {} entities per side ({} + {} relation triples) to {}",
        a.n,
        pair.a.rel_triples().len(),
        pair.b.rel_triples().len(),
        a.out.display()
    );
    Ok(())
}

/// Loads everything `serve` needs; split out so tests can build the router.
pub fn serve_state(a: &ServeArgs) -> Result<AppState> {
    let (pair, explanations) = explained(&a.common, a.top_n)?;
    let book = DecisionBook::open(&a.data_dir.join(DECISION_LOG))?;
    Ok(AppState::new(pair, explanations, book, a.highest_first))
}

fn cmd_serve(a: ServeArgs) -> Result<()> {
    let state = Arc::new(serve_state(&a)?);
    let ui = a.data_dir.join("ui");
    let app = router(state.clone(), Some(&ui));
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .with_context(|| format!("bad address {}:{}", a.host, a.port))?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await.with_context(|| format!("binding {addr}"))?;
        println!("serving {} pairs on http://{}", state.len(), listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
