//! tasd: synth / train / generate / evaluate / serialize command surface.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use tasd_core::{
    infer, load_checkpoint, load_dataset, metric_report, run_pipeline, save_checkpoint,
    save_dataset, save_drafts, serialize_text, split_dataset, synth_dataset, DecodeStrategy,
    Mode, RunConfig, TableSchema, TokenSeq, TrPass, Vocab,
};

#[derive(Parser)]
#[command(name = "tasd", version, about = "Table-structure-aware two-pass text generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic dataset.
    Synth(SynthArgs),
    /// Train the two-pass pipeline and write run artifacts.
    Train(TrainArgs),
    /// Generate text from a trained run directory.
    Generate(GenerateArgs),
    /// Score hypothesis lines against reference lines.
    Evaluate(EvaluateArgs),
    /// Print the template serialization of every table in a dataset.
    Serialize(SerializeArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Output JSON-lines path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    n_records: usize,
    /// Table rows.
    #[arg(long, default_value_t = 3)]
    m: usize,
    /// Table columns.
    #[arg(long, default_value_t = 3)]
    n: usize,
    /// Distinct words available for cell and metadata text.
    #[arg(long, default_value_t = 20)]
    word_pool: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "open")]
    schema: String,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration JSON.
    #[arg(long)]
    config: PathBuf,
    /// TASD, wo-d, wo-tas or wo-1st-tas.
    #[arg(long, default_value = "TASD")]
    mode: String,
    /// Override the config's reconstruction setting: on, off, first or second.
    #[arg(long)]
    tr: Option<String>,
    /// Directory for checkpoints, vocab, drafts and the resolved config.
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// Run directory produced by `tasd train`.
    #[arg(long)]
    run_dir: PathBuf,
    /// Dataset to describe (targets may be empty).
    #[arg(long)]
    data: PathBuf,
    /// Write {id, draft, final_text} JSON lines here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the final text, one line per record.
    #[arg(long)]
    text_out: Option<PathBuf>,
    /// Beam width (beam search strategy).
    #[arg(long, conflicts_with = "greedy")]
    beam: Option<usize>,
    /// Use greedy decoding.
    #[arg(long)]
    greedy: bool,
    /// Cap on total sequence length, prefix included.
    #[arg(long)]
    max_len: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Reference texts, one per line.
    #[arg(long)]
    refs: PathBuf,
    /// Hypothesis texts, one per line, aligned with --refs.
    #[arg(long)]
    hyps: PathBuf,
    /// Write the metric report JSON here as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SerializeArgs {
    /// Dataset JSON-lines file.
    data: PathBuf,
    /// Write serializations here, one line per record, instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_schema(s: &str) -> Result<TableSchema> {
    match s.to_ascii_lowercase().as_str() {
        "open" => Ok(TableSchema::Open),
        "numeric" => Ok(TableSchema::Numeric),
        other => bail!("unknown schema {other:?}; expected open or numeric"),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    if args.n_records == 0 || args.m == 0 || args.n == 0 || args.word_pool == 0 {
        bail!("n-records, m, n and word-pool must all be positive");
    }
    let schema = parse_schema(&args.schema)?;
    let ds = synth_dataset(args.n_records, args.m, args.n, args.word_pool, args.seed, schema);
    save_dataset(&ds, &args.out)?;
    println!("wrote {} records to {}", ds.records.len(), args.out.display());
    Ok(())
}

fn apply_tr_override(cfg: &mut RunConfig, tr: &str) -> Result<()> {
    match tr.to_ascii_lowercase().as_str() {
        "on" => cfg.tr.enabled = true,
        "off" => cfg.tr.enabled = false,
        "first" => {
            cfg.tr.enabled = true;
            cfg.tr.pass = TrPass::First;
        }
        "second" => {
            cfg.tr.enabled = true;
            cfg.tr.pass = TrPass::Second;
        }
        other => bail!("unknown --tr value {other:?}; expected on, off, first or second"),
    }
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let mut cfg = RunConfig::load(&args.config)?;
    let mode: Mode = args.mode.parse()?;
    if let Some(tr) = &args.tr {
        apply_tr_override(&mut cfg, tr)?;
    }
    cfg.validate()?;
    let data_path = cfg
        .data
        .path
        .clone()
        .context("config has no data.path; training needs a dataset")?;
    let ds = load_dataset(Path::new(&data_path), cfg.data.totto_filter)?;
    let split = split_dataset(ds, &cfg.data.split)?;
    println!(
        "dataset: {} train / {} val / {} test records",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    let res = run_pipeline::<f64>(&split, &cfg, mode)?;
    fs::create_dir_all(&args.out_dir)
        .with_context(|| format!("creating {}", args.out_dir.display()))?;
    let dir = &args.out_dir;
    res.vocab.save(&dir.join("vocab.txt"))?;
    save_checkpoint(&res.m1.model, &res.vocab, &dir.join("m1.ckpt"))?;
    if let Some(m2) = &res.m2 {
        save_checkpoint(&m2.model, &res.vocab, &dir.join("m2.ckpt"))?;
    }
    let mut drafts = res.train_drafts.clone();
    drafts.extend(res.val_drafts.iter().cloned());
    save_drafts(&drafts, &dir.join("drafts.jsonl"))?;
    let resolved = serde_json::json!({ "mode": mode, "config": cfg });
    fs::write(dir.join("run.json"), serde_json::to_string_pretty(&resolved)?)?;
    let history = serde_json::json!({
        "m1": {
            "history": res.m1.history,
            "best_epoch": res.m1.best_epoch,
            "best_val_loss": res.m1.best_val_loss,
        },
        "m2": res.m2.as_ref().map(|m| serde_json::json!({
            "history": m.history,
            "best_epoch": m.best_epoch,
            "best_val_loss": m.best_val_loss,
        })),
    });
    fs::write(dir.join("history.json"), serde_json::to_string_pretty(&history)?)?;
    println!(
        "m1: best val loss {:.6} at epoch {} ({} epochs run)",
        res.m1.best_val_loss,
        res.m1.best_epoch,
        res.m1.history.len()
    );
    if let Some(m2) = &res.m2 {
        println!(
            "m2: best val loss {:.6} at epoch {} ({} epochs run)",
            m2.best_val_loss,
            m2.best_epoch,
            m2.history.len()
        );
    }
    println!("artifacts in {}", dir.display());
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let dir = &args.run_dir;
    let run_text = fs::read_to_string(dir.join("run.json"))
        .with_context(|| format!("reading {}/run.json", dir.display()))?;
    let run: serde_json::Value = serde_json::from_str(&run_text)?;
    let mode: Mode = serde_json::from_value(run["mode"].clone())
        .context("run.json has no readable mode")?;
    let cfg: RunConfig = serde_json::from_value(run["config"].clone())
        .context("run.json has no readable config")?;
    let vocab = Vocab::load(&dir.join("vocab.txt"))?;
    let m1 = load_checkpoint(&dir.join("m1.ckpt"), &vocab)?;
    let m2_path = dir.join("m2.ckpt");
    let m2 = if mode.two_pass() {
        Some(load_checkpoint(&m2_path, &vocab).context("mode has a second pass; m2.ckpt missing or unreadable")?)
    } else {
        None
    };
    let mut dcfg = cfg.decode.clone();
    if let Some(width) = args.beam {
        if width == 0 {
            bail!("--beam must be positive");
        }
        dcfg.strategy = DecodeStrategy::Beam;
        dcfg.beam_width = width;
    }
    if args.greedy {
        dcfg.strategy = DecodeStrategy::Greedy;
    }
    if let Some(max_len) = args.max_len {
        dcfg.max_len = max_len;
    }
    dcfg.validate()?;
    let ds = load_dataset(&args.data, cfg.data.totto_filter)?;
    // Reassemble a result shell so inference follows the trained mode.
    let res = tasd_core::PipelineResult {
        mode,
        vocab,
        m1: tasd_core::TrainedModel { model: m1, history: vec![], best_epoch: 0, best_val_loss: f64::NAN },
        m2: m2.map(|m| tasd_core::TrainedModel {
            model: m,
            history: vec![],
            best_epoch: 0,
            best_val_loss: f64::NAN,
        }),
        train_drafts: vec![],
        val_drafts: vec![],
    };
    let outs = infer(&res, &ds.records, &dcfg)?;
    let mut lines = String::new();
    for o in &outs {
        lines.push_str(&serde_json::to_string(o)?);
        lines.push('\n');
    }
    match &args.out {
        Some(p) => fs::write(p, &lines).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{lines}"),
    }
    if let Some(p) = &args.text_out {
        let text: String = outs.iter().map(|o| format!("{}\n", o.final_text)).collect();
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let refs = fs::read_to_string(&args.refs)
        .with_context(|| format!("reading {}", args.refs.display()))?;
    let hyps = fs::read_to_string(&args.hyps)
        .with_context(|| format!("reading {}", args.hyps.display()))?;
    let ref_lines: Vec<&str> = refs.lines().collect();
    let hyp_lines: Vec<&str> = hyps.lines().collect();
    if ref_lines.len() != hyp_lines.len() {
        bail!(
            "{} reference lines but {} hypothesis lines",
            ref_lines.len(),
            hyp_lines.len()
        );
    }
    // A shared vocabulary over both files keeps token ids consistent; with
    // min_count 1 nothing is collapsed to <unk>.
    let corpus: Vec<String> =
        ref_lines.iter().chain(&hyp_lines).map(|l| l.to_string()).collect();
    let vocab = Vocab::build(&corpus, 1);
    let tokenize =
        |lines: &[&str]| -> Vec<TokenSeq> { lines.iter().map(|l| vocab.tokenize(l)).collect() };
    let report = metric_report(&tokenize(&hyp_lines), &tokenize(&ref_lines))?;
    let js = serde_json::to_string_pretty(&report)?;
    println!("{js}");
    if let Some(p) = &args.out {
        fs::write(p, &js).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_serialize(args: SerializeArgs) -> Result<()> {
    let ds = load_dataset(&args.data, false)?;
    let mut out = String::new();
    for rec in &ds.records {
        out.push_str(&serialize_text(&rec.table));
        out.push('\n');
    }
    match &args.out {
        Some(p) => fs::write(p, &out).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{out}"),
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Generate(a) => cmd_generate(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Serialize(a) => cmd_serialize(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
