use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use pkchat_core::keywords::{resolve_entity, CorpusStats, KeywordExtractor, Method};
use pkchat_core::kg::{linearize, synth_kg, KgStore, SynthKgOptions, TripleFormat};
use pkchat_core::metrics::{evaluate, gold_pairs, run_eval};
use pkchat_core::model::{DecodeConfig, TokenSource};
use pkchat_core::text::{corpus_stats, gen_synthetic_corpus, read_corpus, tokenize, write_corpus, SynthOptions};
use pkchat_core::trainer::{train, train_tagger, write_trace_csv, Checkpoint, TrainConfig};
use serde_json::json;

use crate::api::{router, AppState};
use crate::orchestrator::{kg_stats, Orchestrator, Session};

#[derive(Parser, Debug)]
#[command(name = "pkchat", version, about = "Knowledge-grounded chat with a copy mechanism")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model and its keyword tagger, then write a checkpoint.
    Train(TrainArgs),
    /// Score generated replies against a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Interactive terminal chat.
    Chat {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        kg: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        kg: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Append closed-session transcripts to this JSON-lines file.
        #[arg(long)]
        transcripts: Option<PathBuf>,
    },
    /// Triple store utilities.
    #[command(subcommand)]
    Kg(KgCommand),
    /// Scenario corpus utilities.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Run one keyword extraction method over a sentence.
    Extract {
        #[arg(long)]
        method: Method,
        #[arg(long)]
        text: String,
        /// Checkpoint holding the tagger (needed for `crf`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Graph for IDF statistics and entity resolution.
        #[arg(long)]
        kg: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub kg: PathBuf,
    /// JSON training configuration; missing fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Loss trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub crf_epochs: usize,
}

#[derive(Subcommand, Debug)]
pub enum KgCommand {
    /// Load a triple file and report counts.
    Load {
        file: PathBuf,
        #[arg(long)]
        format: Option<TripleFormat>,
    },
    /// Print the linearized neighborhood of an entity.
    Query {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long)]
        entity: String,
    },
    /// Write the synthetic two-topic graph as TSV.
    Synth {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand, Debug)]
pub enum CorpusCommand {
    /// Generate synthetic scenarios grounded in a graph.
    Gen {
        #[arg(long)]
        kg: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 32)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scenario and round counts.
    Stats { file: PathBuf },
}

pub fn load_kg(path: &Path) -> anyhow::Result<KgStore> {
    let (kg, report) = KgStore::load(path, TripleFormat::from_path(path))?;
    log::info!("{}: {} rows, {} triples, {} duplicates", path.display(), report.rows, report.added, report.duplicates);
    Ok(kg)
}

pub fn load_orchestrator(checkpoint: &Path, kg: &Path, tau: f64) -> anyhow::Result<Orchestrator> {
    let ckpt = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let kg = load_kg(kg)?;
    let extractor = KeywordExtractor::new(kg_stats(&kg), ckpt.crf.clone());
    Ok(Orchestrator::new(ckpt.model()?, kg, extractor, tau))
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let mut cfg: TrainConfig = match &args.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p).with_context(|| p.display().to_string())?)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    let scenarios = read_corpus(&args.corpus)?;
    let kg = load_kg(&args.kg)?;
    let out = train(&scenarios, &cfg)?;
    let mut ckpt = out.checkpoint;
    let (crf, ll) = train_tagger(&out.train_scenarios, &kg, args.crf_epochs, 0.1)?;
    log::info!("tagger log-likelihood {:.3} after {} epochs", ll.last().copied().unwrap_or(f64::NAN), ll.len());
    ckpt.crf = Some(crf);
    ckpt.save(&args.out)?;
    if let Some(p) = &args.trace {
        write_trace_csv(&out.trace, p)?;
    }
    if let (Some(first), Some(last)) = (out.trace.first(), out.trace.last()) {
        println!("step {}: total {:.4} -> step {}: total {:.4}", first.step, first.loss.total, last.step, last.loss.total);
    }
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, corpus: &Path, report: Option<&Path>) -> anyhow::Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = ckpt.model()?;
    let scenarios = read_corpus(corpus)?;
    let decode = DecodeConfig::default();
    let (rep, _) = run_eval(&model, &scenarios, &decode)?;
    let gold = evaluate(&gold_pairs(&scenarios))?;
    println!("{}", rep.table());
    println!("gold-response knowledge F1 {:.4}", gold.knowledge_f1);
    if let Some(path) = report {
        let doc = json!({
            "report": rep,
            "gold_report": gold,
            "checkpoint": checkpoint.display().to_string(),
            "checkpoint_step": ckpt.step,
            "model_config": ckpt.config,
            "train_config": ckpt.train_config,
            "corpus": corpus.display().to_string(),
            "decode": decode,
        });
        std::fs::write(path, serde_json::to_string_pretty(&doc)?)?;
    }
    Ok(())
}

/// Renders a reply with copied tokens as `{word@index}`.
pub fn render_attributed(result: &crate::orchestrator::TurnResult) -> String {
    result
        .tokens
        .iter()
        .map(|t| match (t.source, t.copy_index) {
            (TokenSource::Copy, Some(i)) => format!("{{{}@{i}}}", t.text),
            (TokenSource::Copy, None) => format!("{{{}}}", t.text),
            (TokenSource::Vocab, _) => t.text.clone(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_chat(checkpoint: &Path, kg: &Path, tau: f64) -> anyhow::Result<()> {
    let orch = load_orchestrator(checkpoint, kg, tau)?;
    let mut session = Session::new("terminal");
    let stdin = std::io::stdin();
    let mut out = std::io::stdout();
    write!(out, "> ")?;
    out.flush()?;
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            write!(out, "> ")?;
            out.flush()?;
            continue;
        }
        match orch.handle_message(&mut session, &line) {
            Ok(r) => {
                if r.topic_switched {
                    writeln!(out, "[topic -> {} (score {:.3})]", r.entity.as_deref().unwrap_or("?"), r.ts_score)?;
                } else if r.fallback {
                    writeln!(out, "[no entity found; keeping current knowledge]")?;
                }
                writeln!(out, "{}", render_attributed(&r))?;
            }
            Err(e) => writeln!(out, "error: {e}")?,
        }
        write!(out, "> ")?;
        out.flush()?;
    }
    Ok(())
}

fn cmd_serve(checkpoint: &Path, kg: &Path, port: u16, tau: f64, transcripts: Option<PathBuf>) -> anyhow::Result<()> {
    let orch = load_orchestrator(checkpoint, kg, tau)?;
    let mut state = AppState::new(orch, checkpoint.display().to_string());
    state.transcripts = transcripts;
    let app = router(Arc::new(state));
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(("0.0.0.0", port)).await?;
        log::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}

fn cmd_extract(method: Method, text: &str, checkpoint: Option<&Path>, kg: Option<&Path>) -> anyhow::Result<()> {
    let crf = match checkpoint {
        Some(p) => Checkpoint::load(p)?.crf,
        None => None,
    };
    if method == Method::Crf && crf.is_none() {
        bail!("the crf method needs --checkpoint with a trained tagger");
    }
    let kg = kg.map(load_kg).transpose()?;
    let stats = kg.as_ref().map(kg_stats).unwrap_or_else(CorpusStats::default);
    let extractor = KeywordExtractor::new(stats, crf);
    let cands = extractor.extract(method, &tokenize(text))?;
    for c in &cands {
        println!("{}\t{:.4}\t{}..{}", c.text, c.score, c.span.0, c.span.1);
    }
    if let Some(kg) = &kg {
        match resolve_entity(&cands, kg) {
            Some(r) => println!("entity: {}", r.entity),
            None => println!("entity: none"),
        }
    }
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Train(args) => cmd_train(&args),
        Command::Eval { checkpoint, corpus, report } => cmd_eval(&checkpoint, &corpus, report.as_deref()),
        Command::Chat { checkpoint, kg, tau } => cmd_chat(&checkpoint, &kg, tau),
        Command::Serve { checkpoint, kg, port, tau, transcripts } => cmd_serve(&checkpoint, &kg, port, tau, transcripts),
        Command::Kg(KgCommand::Load { file, format }) => {
            let fmt = format.unwrap_or_else(|| TripleFormat::from_path(&file));
            let (kg, report) = KgStore::load(&file, fmt)?;
            println!("rows {} added {} duplicates {} entities {}", report.rows, report.added, report.duplicates, kg.entity_names().len());
            Ok(())
        }
        Command::Kg(KgCommand::Query { kg, entity }) => {
            let kg = load_kg(&kg)?;
            let name = kg.display_name(&entity).unwrap_or(&entity).to_string();
            for line in linearize(&kg.neighborhood(&entity), &name) {
                println!("{line}");
            }
            Ok(())
        }
        Command::Kg(KgCommand::Synth { seed, out }) => {
            let kg = synth_kg(&SynthKgOptions { seed, ..SynthKgOptions::default() })?;
            kg.save_tsv(&out)?;
            println!("wrote {} triples to {}", kg.len(), out.display());
            Ok(())
        }
        Command::Corpus(CorpusCommand::Gen { kg, seed, n, out }) => {
            let kg = load_kg(&kg)?;
            let scenarios = gen_synthetic_corpus(&kg, &SynthOptions { seed, n_scenarios: n, ..SynthOptions::default() })?;
            write_corpus(&out, &scenarios)?;
            println!("wrote {} scenarios to {}", scenarios.len(), out.display());
            Ok(())
        }
        Command::Corpus(CorpusCommand::Stats { file }) => {
            let s = corpus_stats(&read_corpus(&file)?);
            println!("scenarios {} rounds {} average {:.2}", s.scenarios, s.rounds, s.avg_rounds);
            Ok(())
        }
        Command::Extract { method, text, checkpoint, kg } => {
            cmd_extract(method, &text, checkpoint.as_deref(), kg.as_deref())
        }
    }
}

/// Logging from `PKCHAT_LOG` (error, info or debug; info when unset).
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("PKCHAT_LOG", "info");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::orchestrator::{TokenOut, TurnResult};

    #[test]
    fn serve_defaults() {
        let cli = Cli::try_parse_from(["pkchat", "serve", "--checkpoint", "m.ckpt", "--kg", "g.tsv"]).unwrap();
        match cli.command {
            Command::Serve { port, tau, transcripts, .. } => {
                assert_eq!((port, tau), (8080, 0.5));
                assert!(transcripts.is_none());
            }
            other => panic!("parsed as {other:?}"),
        }
    }

    #[test]
    fn extract_needs_known_method() {
        assert!(Cli::try_parse_from(["pkchat", "extract", "--method", "crf", "--text", "hi"]).is_ok());
        assert!(Cli::try_parse_from(["pkchat", "extract", "--method", "magic", "--text", "hi"]).is_err());
    }

    #[test]
    fn train_requires_corpus_and_out() {
        assert!(Cli::try_parse_from(["pkchat", "train", "--kg", "g.tsv", "--out", "m.ckpt"]).is_err());
        let cli = Cli::try_parse_from(["pkchat", "train", "--corpus", "c.jsonl", "--kg", "g.tsv", "--out", "m.ckpt"]).unwrap();
        let Command::Train(args) = cli.command else { panic!("not train") };
        assert_eq!(args.crf_epochs, 20);
        assert!(args.steps.is_none());
    }

    #[test]
    fn copied_tokens_are_braced() {
        let tok = |text: &str, source, copy_index| TokenOut { text: text.into(), source, copy_index };
        let r = TurnResult {
            response: "it is lava cooling .".into(),
            tokens: vec![
                tok("it", TokenSource::Vocab, None),
                tok("is", TokenSource::Vocab, None),
                tok("lava", TokenSource::Copy, Some(6)),
                tok("cooling", TokenSource::Copy, None),
                tok(".", TokenSource::Vocab, None),
            ],
            topic_switched: false,
            ts_score: 0.0,
            entity: None,
            knowledge: vec![],
            fallback: false,
        };
        assert_eq!(render_attributed(&r), "it is {lava@6} {cooling} .");
    }
}
