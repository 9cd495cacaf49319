//! `otpl`: optimal-transport pseudo-labeling pipeline for molecule-protein
//! link prediction. Subcommands mirror the workflow stages: `synth`,
//! `score-train`, `pseudo`, `kg-train`, `eval`, and `ablate`.

mod config;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use config::{require, RunConfig};
use otpl_core::embeddings::{l2_normalize, load_embeddings, save_embeddings, EmbeddingMatrix};
use otpl_core::kg::{inject_pseudo_edges, load_triples, save_triples, Split};
use otpl_core::kge::{load_checkpoint as load_kge, save_checkpoint as save_kge, train_kg};
use otpl_core::metrics::{evaluate_link_prediction, evaluate_screening, LabeledScores, MetricsReport};
use otpl_core::pipeline::{labeled_pairs_from, make_labels, run_ablation, AblationSpec, PreparedData};
use otpl_core::pseudo::{load_labels, save_labels, Strategy};
use otpl_core::rng::mix;
use otpl_core::score::{
    load_checkpoint as load_smp, save_checkpoint as save_smp, train_score_model,
};
use otpl_core::synth::{gen_embeddings, gen_planted_kg, INTERACTS_RELATION};

#[derive(Parser)]
#[command(name = "otpl", version, about = "OT pseudo-labeling and KG link prediction")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Suppress informational output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Args)]
struct StageArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the config's `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate synthetic embeddings, a planted KG, and hidden pairs.
    Synth(StageArgs),
    /// Train the pairwise score model on labeled pairs.
    ScoreTrain(StageArgs),
    /// Generate pseudo-labels from a trained score model.
    Pseudo(StageArgs),
    /// Train a KG embedding, optionally with injected pseudo-labels.
    KgTrain(StageArgs),
    /// Evaluate link prediction or virtual screening.
    Eval(StageArgs),
    /// Run the pseudo-label strategy grid over several seeds.
    Ablate(StageArgs),
}

struct Ctx {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    quiet: bool,
}

impl Ctx {
    fn new(args: &StageArgs, quiet: bool) -> Result<Self> {
        let cfg = RunConfig::load(&args.config)?;
        let seed = args.seed.or(cfg.seed).unwrap_or(42);
        let out = args
            .out
            .clone()
            .or_else(|| cfg.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out)
            .with_context(|| format!("creating output directory {}", out.display()))?;
        Ok(Self { cfg, seed, out, quiet })
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", msg.as_ref());
        }
    }

    fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.cmd {
        Cmd::Synth(a) => run("synth", a, cli.quiet, cmd_synth),
        Cmd::ScoreTrain(a) => run("score-train", a, cli.quiet, cmd_score_train),
        Cmd::Pseudo(a) => run("pseudo", a, cli.quiet, cmd_pseudo),
        Cmd::KgTrain(a) => run("kg-train", a, cli.quiet, cmd_kg_train),
        Cmd::Eval(a) => run("eval", a, cli.quiet, cmd_eval),
        Cmd::Ablate(a) => run("ablate", a, cli.quiet, cmd_ablate),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(
    stage: &str,
    args: &StageArgs,
    quiet: bool,
    f: fn(&Ctx) -> Result<()>,
) -> Result<()> {
    let ctx = Ctx::new(args, quiet)?;
    f(&ctx).with_context(|| format!("stage {stage}"))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn cmd_synth(ctx: &Ctx) -> Result<()> {
    let section = ctx.cfg.synth.clone().unwrap_or_default();
    let synth_cfg = section.resolve(mix(ctx.seed, "synth"));
    let emb = gen_embeddings::<f64>(&synth_cfg)?;
    let planted = gen_planted_kg::<f64>(&synth_cfg, section.extra_relations())?;

    // One embedding file holding both namespaces.
    let mut ids = emb.mols.ids.clone();
    ids.extend(emb.prots.ids.clone());
    let mut rows = Vec::with_capacity(ids.len());
    for i in 0..emb.mols.len() {
        rows.push(emb.mols.row(i).to_vec());
    }
    for j in 0..emb.prots.len() {
        rows.push(emb.prots.row(j).to_vec());
    }
    let all = EmbeddingMatrix::new(ids, synth_cfg.dim, otpl_core::linalg::Mat::from_rows(&rows));

    let emb_path = ctx.artifact("embeddings.tsv");
    let kg_path = ctx.artifact("triples.tsv");
    let hidden_path = ctx.artifact("hidden.tsv");
    save_embeddings(&all, &emb_path)?;
    save_triples(&planted.kg, &kg_path)?;
    let mut hidden_kg = otpl_core::KnowledgeGraph64::new();
    for (m, p) in &planted.hidden_true_pairs {
        hidden_kg.add_triple(m.clone(), INTERACTS_RELATION, p.clone());
    }
    save_triples(&hidden_kg, &hidden_path)?;

    ctx.say(format!("{}: {} embeddings, dim {}", emb_path.display(), all.len(), all.dim));
    ctx.say(format!(
        "{}: {} triples, {} entities, {} relations",
        kg_path.display(),
        planted.kg.n_triples(),
        planted.kg.n_entities(),
        planted.kg.n_relations()
    ));
    ctx.say(format!("{}: {} hidden pairs", hidden_path.display(), planted.hidden_true_pairs.len()));
    Ok(())
}

fn split_namespaces(
    path: &Path,
    mol_ns: &str,
    prot_ns: &str,
) -> Result<(EmbeddingMatrix<f64>, EmbeddingMatrix<f64>)> {
    let all: EmbeddingMatrix<f64> = load_embeddings(path)?;
    let mols = l2_normalize(&all.filter_namespace(mol_ns))?;
    let prots = l2_normalize(&all.filter_namespace(prot_ns))?;
    if mols.is_empty() || prots.is_empty() {
        bail!(
            "embeddings in {} contain {} `{mol_ns}` rows and {} `{prot_ns}` rows; both sides must be nonempty",
            path.display(),
            mols.len(),
            prots.len()
        );
    }
    Ok((mols, prots))
}

fn cmd_score_train(ctx: &Ctx) -> Result<()> {
    let section = ctx.cfg.score_train.clone().unwrap_or_default();
    let cfg = section.resolve()?;
    let (mol_ns, prot_ns) = section.namespaces();
    let emb_path = require(&section.embeddings, "score_train.embeddings")?;
    let triples_path = require(&section.triples, "score_train.triples")?;
    let relation = section.relation.as_deref().unwrap_or(INTERACTS_RELATION);

    let (mols, prots) = split_namespaces(emb_path, &mol_ns, &prot_ns)?;
    let kg: otpl_core::KnowledgeGraph64 = load_triples(triples_path)?;
    let pairs = labeled_pairs_from(&kg, relation, &mols, &prots)?;
    ctx.say(format!("training on {} labeled `{relation}` pairs", pairs.len()));

    let out = train_score_model(&pairs, &mols, &prots, &cfg, mix(ctx.seed, "score-train"))?;
    let ckpt = ctx.artifact("score.smp1");
    save_smp(&out.params, &ckpt)?;
    write_json(
        &ctx.artifact("score_trace.json"),
        &serde_json::json!({
            "train_loss": out.train_loss,
            "val_loss": out.val_loss,
            "best_epoch": out.best_epoch,
            "seed": ctx.seed,
        }),
    )?;
    ctx.say(format!(
        "{}: best validation loss {:.6} at epoch {}",
        ckpt.display(),
        out.val_loss.iter().copied().fold(f64::INFINITY, f64::min),
        out.best_epoch
    ));
    Ok(())
}

fn cmd_pseudo(ctx: &Ctx) -> Result<()> {
    let section = ctx.cfg.pseudo.clone().unwrap_or_default();
    let cfg = section.resolve()?;
    let (mol_ns, prot_ns) = section.namespaces();
    let ckpt_path = require(&section.checkpoint, "pseudo.checkpoint")?;
    let emb_path = require(&section.embeddings, "pseudo.embeddings")?;

    let params: otpl_core::ScoreModelParams64 = load_smp(ckpt_path)?;
    let (mols, prots) = split_namespaces(emb_path, &mol_ns, &prot_ns)?;
    let matched = section.random_matched_count.unwrap_or(0);
    if cfg.strategy == Strategy::Random && matched == 0 {
        bail!("pseudo.random_matched_count must be set (> 0) for the random strategy");
    }

    let data = PreparedData {
        mols,
        prots,
        kg: otpl_core::KnowledgeGraph64::new(),
        hidden: Vec::new(),
        labeled_pairs: Vec::new(),
    };
    let run = make_labels(&params, &data, &cfg, matched, mix(ctx.seed, "pseudo"))?;

    let labels_path = ctx.artifact("pseudo.tsv");
    save_labels(&run.labels, &labels_path)?;
    write_json(
        &ctx.artifact("pseudo_summary.json"),
        &serde_json::json!({
            "strategy": cfg.strategy.name(),
            "pair_count": run.labels.len(),
            "skipped_rows": run.labels.skipped_rows,
            "objective": run.objective,
            "seed": ctx.seed,
        }),
    )?;
    ctx.say(format!(
        "{}: {} pseudo-labels ({})",
        labels_path.display(),
        run.labels.len(),
        cfg.strategy.name()
    ));
    Ok(())
}

fn load_graph_with_labels(
    triples: &Path,
    pseudo_labels: &Option<PathBuf>,
) -> Result<otpl_core::KnowledgeGraph64> {
    let kg: otpl_core::KnowledgeGraph64 = load_triples(triples)?;
    match pseudo_labels {
        Some(path) => {
            let labels: otpl_core::PseudoLabelSet64 = load_labels(path)?;
            let (kg, stats) = inject_pseudo_edges(&kg, &labels);
            if stats.added_entities > 0 {
                eprintln!("note: pseudo labels added {} new entities", stats.added_entities);
            }
            Ok(kg)
        }
        None => Ok(kg),
    }
}

fn cmd_kg_train(ctx: &Ctx) -> Result<()> {
    let section = ctx.cfg.kg_train.clone().unwrap_or_default();
    let (family, mut cfg) = section.resolve(mix(ctx.seed, "kg-train"))?;
    let triples_path = require(&section.triples, "kg_train.triples")?;
    let kg = load_graph_with_labels(triples_path, &section.pseudo_labels)?;
    let counts: Vec<String> =
        kg.relation_counts().iter().map(|(r, c)| format!("{r}={c}")).collect();
    ctx.say(format!(
        "training {} on {} triples ({} pseudo; {})",
        family.name(),
        kg.n_triples(),
        kg.n_pseudo(),
        counts.join(", ")
    ));
    cfg.seed = mix(ctx.seed, "kg-train");
    let result = train_kg(&kg, family, &cfg)?;
    let ckpt = ctx.artifact("kg.kge1");
    save_kge(&result.params, &ckpt)?;
    write_json(
        &ctx.artifact("kg_trace.json"),
        &serde_json::json!({
            "family": family.name(),
            "alpha": cfg.alpha,
            "loss": result.trace,
            "seed": ctx.seed,
        }),
    )?;
    ctx.say(format!(
        "{}: final loss {:.6}",
        ckpt.display(),
        result.trace.last().copied().unwrap_or(f64::NAN)
    ));
    Ok(())
}

fn cmd_eval(ctx: &Ctx) -> Result<()> {
    let section = ctx.cfg.eval.clone().unwrap_or_default();
    let mode = section.mode.as_deref().unwrap_or("link_prediction");
    let report = match mode {
        "link_prediction" => eval_link_prediction(ctx, &section)?,
        "screening" => eval_screening(ctx, &section)?,
        other => bail!("eval.mode `{other}` is not `link_prediction` or `screening`"),
    };
    let path = ctx.artifact("metrics.json");
    report.save(&path).context("writing metrics report")?;
    ctx.say(format!("{}:", path.display()));
    for (k, v) in &report.values {
        ctx.say(format!("  {k} = {v:.4}"));
    }
    Ok(())
}

fn eval_link_prediction(ctx: &Ctx, section: &config::EvalSection) -> Result<MetricsReport> {
    let ckpt = require(&section.checkpoint, "eval.checkpoint")?;
    let triples = require(&section.triples, "eval.triples")?;
    let test_path = require(&section.test_triples, "eval.test_triples")?;
    let kg = load_graph_with_labels(triples, &section.pseudo_labels)?;
    let model: otpl_core::KgModelParams64 = load_kge(ckpt)?;
    if model.n_entities() != kg.n_entities() || model.n_relations() != kg.n_relations() {
        bail!(
            "checkpoint tables ({} entities, {} relations) do not match the graph ({}, {}); \
             pass the same triples and pseudo-label files used for training",
            model.n_entities(),
            model.n_relations(),
            kg.n_entities(),
            kg.n_relations()
        );
    }
    let test_kg: otpl_core::KnowledgeGraph64 = load_triples(test_path)?;
    let mut test: Vec<otpl_core::kg::Triple> =
        test_kg.triples().iter().map(|t| test_kg.materialize(t)).collect();
    // Every test triple is a known truth: all of them join the filter even
    // when only a subsample is queried.
    let mut filter_kg = kg.clone();
    for t in &test {
        filter_kg.add_triple(t.head.clone(), t.relation.name(), t.tail.clone());
    }
    if filter_kg.n_entities() != kg.n_entities() {
        bail!("test triples mention entities absent from the training graph");
    }
    let max_queries = section.max_queries.unwrap_or(0);
    if max_queries > 0 && max_queries < test.len() {
        let mut rng = otpl_core::rng::stage_rng(ctx.seed, "eval-subsample");
        otpl_core::rng::seeded_shuffle(&mut test, &mut rng);
        test.truncate(max_queries);
    }
    let split = Split { train: kg.clone(), test };
    let (mut report, _) = evaluate_link_prediction(&model, &split, &filter_kg, &section.ks())?;
    report.seed = Some(ctx.seed);
    report.config.insert("mode".into(), serde_json::json!("link_prediction"));
    Ok(report)
}

/// Screening TSV: `<target_id>\t<score>\t<label 0|1>` per line, `#` comments.
fn eval_screening(ctx: &Ctx, section: &config::EvalSection) -> Result<MetricsReport> {
    let scores_path = require(&section.scores, "eval.scores")?;
    let text = std::fs::read_to_string(scores_path)
        .with_context(|| format!("reading {}", scores_path.display()))?;
    let mut per_target: BTreeMap<String, (Vec<f64>, Vec<bool>)> = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            bail!("{}:{}: expected `<target>\\t<score>\\t<label>`", scores_path.display(), idx + 1);
        }
        let score: f64 = fields[1]
            .parse()
            .with_context(|| format!("{}:{}: bad score", scores_path.display(), idx + 1))?;
        let label = match fields[2] {
            "0" => false,
            "1" => true,
            other => bail!("{}:{}: label must be 0 or 1, got `{other}`", scores_path.display(), idx + 1),
        };
        let entry = per_target.entry(fields[0].to_string()).or_default();
        entry.0.push(score);
        entry.1.push(label);
    }
    let data: Vec<(String, LabeledScores<f64>)> = per_target
        .into_iter()
        .map(|(name, (scores, labels))| Ok((name, LabeledScores::new(scores, labels)?)))
        .collect::<Result<_, otpl_core::Error>>()?;
    let mut report = evaluate_screening(&data, &section.fractions(), section.bedroc_alpha())?;
    report.seed = Some(ctx.seed);
    report.config.insert("mode".into(), serde_json::json!("screening"));
    Ok(report)
}

fn cmd_ablate(ctx: &Ctx) -> Result<()> {
    let ablate = ctx.cfg.ablate.clone().unwrap_or_default();
    let synth = ctx.cfg.synth.clone().unwrap_or_default();
    let score = ctx.cfg.score_train.clone().unwrap_or_default();
    let pseudo = ctx.cfg.pseudo.clone().unwrap_or_default();
    let kg = ctx.cfg.kg_train.clone().unwrap_or_default();

    let (family, kg_cfg) = kg.resolve(0)?;
    let family = match &ablate.family {
        Some(name) => otpl_core::kge::Family::parse(name).map_err(|e| anyhow::anyhow!("{e}"))?,
        None => family,
    };
    let spec = AblationSpec {
        synth: synth.resolve(0),
        extra_relations: synth.extra_relations(),
        score: score.resolve()?,
        pseudo: pseudo.resolve()?,
        kg: kg_cfg,
        family,
        strategies: ablate.strategies()?,
        seeds: ablate.seeds(ctx.seed),
        ks: ablate.ks.clone().unwrap_or_else(|| vec![1, 3, 5]),
        max_eval_queries: ablate.max_eval_queries.unwrap_or(200),
    };
    ctx.say(format!(
        "ablation: {} strategies x {} seeds, family {}",
        spec.strategies.len(),
        spec.seeds.len(),
        spec.family.name()
    ));
    let report = run_ablation(&spec)?;
    let path = ctx.artifact("ablation.json");
    write_json(&path, &report.to_json())?;
    for (name, summary) in &report.strategies {
        let h5 = summary.mean.get("hits@5").copied().unwrap_or(f64::NAN);
        ctx.say(format!("  {name:<16} hits@5 = {h5:.4} ({} errors)", summary.errors.len()));
    }
    ctx.say(format!("{path:?} written", path = path.display()));
    Ok(())
}
