//! The `gemrec` command line.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or validation
//! errors. Errors go to stderr as `error[<code>]: <message>`, or as an
//! [`ApiError`](crate::server::ApiError) JSON object under `--json`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::catalog::{self, Catalog, LoadOptions, PromptId};
use crate::elicitation::{self, Mode, PairwisePreference};
use crate::error::{Error, Result};
use crate::jsonl;
use crate::layout::{self, LayoutParams};
use crate::ltr::{self, BprModel, BprParams, PreferenceDataset, Split};
use crate::metrics::{self, GreWeights};
use crate::retrieval;
use crate::server::{self, ApiError, AppState, ServerConfig};
use crate::simuser::{self, ModeChoice, SimulationConfig};

#[derive(Debug, Parser)]
#[command(name = "gemrec", version, about = "Generative model recommendation engine")]
pub struct Cli {
    /// Catalog directory (models.jsonl, prompts.jsonl, images.jsonl, *.bin).
    #[arg(long, env = "GEMREC_DATA_ROOT", global = true)]
    pub root: Option<PathBuf>,
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load and validate a catalog, then print its summary line.
    Ingest {
        /// Accept catalogs where some (model, prompt) cells have no image.
        #[arg(long)]
        sparse: bool,
    },
    /// Pre-rank a prompt's models by GRE-Score, best first.
    Prerank {
        #[arg(long)]
        prompt: PromptId,
        /// Weights for accuracy, distinctiveness and popularity.
        #[arg(long, default_value = "1.0,0.8,0.2")]
        lambda: GreWeights,
        /// Drop images whose NSFW score exceeds this value.
        #[arg(long, default_value_t = retrieval::DEFAULT_NSFW_THRESHOLD)]
        nsfw_threshold: f64,
    },
    /// Write a prompt's pairwise cosine similarity matrix as CSV.
    Heatmap {
        #[arg(long)]
        prompt: PromptId,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute a prompt's 2D t-SNE gallery layout as JSON.
    Layout {
        #[arg(long)]
        prompt: PromptId,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to 30, lowered automatically for small prompts.
        #[arg(long)]
        perplexity: Option<f64>,
        /// Weights used for the drawing order.
        #[arg(long, default_value = "1.0,0.8,0.2")]
        lambda: GreWeights,
        #[arg(long)]
        out: PathBuf,
    },
    /// Drive full ranking sessions with simulated users and write their preferences.
    Simulate {
        #[arg(long)]
        prompt: PromptId,
        #[arg(long, default_value_t = 10)]
        users: usize,
        /// battle, dragsort, or both (random per session).
        #[arg(long, default_value = "both")]
        mode: ModeChoice,
        /// Choice sharpness; `inf` makes users deterministic.
        #[arg(long, default_value_t = f64::INFINITY)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "1.0,0.8,0.2")]
        lambda: GreWeights,
        #[arg(long, default_value_t = retrieval::DEFAULT_NSFW_THRESHOLD)]
        nsfw_threshold: f64,
        #[arg(long, default_value_t = elicitation::DEFAULT_MIN_POOL)]
        min_pool: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a BPR matrix-factorization ranker on a preferences JSONL file.
    Train {
        #[arg(long)]
        preferences: PathBuf,
        #[arg(long, default_value_t = 16)]
        factors: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 0.01)]
        reg: f64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank models for a user with a trained model.
    ///
    /// Users the model has never seen fall back to the GRE-Score prior, which
    /// needs `--root`.
    Rank {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        user: String,
        /// Restrict to one prompt's NSFW-safe models.
        #[arg(long)]
        prompt: Option<PromptId>,
        #[arg(long)]
        top: Option<usize>,
        #[arg(long, default_value = "1.0,0.8,0.2")]
        lambda: GreWeights,
        #[arg(long, default_value_t = retrieval::DEFAULT_NSFW_THRESHOLD)]
        nsfw_threshold: f64,
    },
    /// Serve the JSON API.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "1.0,0.8,0.2")]
        lambda: GreWeights,
        #[arg(long, default_value_t = retrieval::DEFAULT_NSFW_THRESHOLD)]
        nsfw_threshold: f64,
        #[arg(long, default_value_t = elicitation::DEFAULT_MIN_POOL)]
        min_pool: usize,
        /// Trained BPR model for /rank.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Directory holding image files, addressed by image uri.
        #[arg(long)]
        assets: Option<PathBuf>,
        /// Where the event, selection and preference logs live [default: <root>/state].
        #[arg(long)]
        state_dir: Option<PathBuf>,
    },
}

/// Entry point for the binary.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run(std::env::args_os(), &mut stdout.lock(), &mut stderr.lock())
}

/// Parse `args` and run the command, returning the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let rendered = e.render().to_string();
            if code == 0 {
                let _ = write!(out, "{rendered}");
            } else {
                let _ = write!(err, "{rendered}");
            }
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            if cli.json {
                let body = serde_json::to_string(&ApiError::from(&e)).unwrap_or_default();
                let _ = writeln!(err, "{body}");
            } else {
                let _ = writeln!(err, "error[{}]: {e}", e.code());
            }
            2
        }
    }
}

fn root(cli: &Cli) -> Result<&Path> {
    cli.root
        .as_deref()
        .ok_or_else(|| Error::BadRequest("--root (or GEMREC_DATA_ROOT) is required".into()))
}

fn load(cli: &Cli) -> Result<Catalog> {
    catalog::load_catalog(root(cli)?, LoadOptions::default())
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())?;
    Ok(())
}

fn emit_json(out: &mut dyn Write, value: &serde_json::Value) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string(value)?)?;
    Ok(())
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Ingest { sparse } => {
            let catalog = catalog::load_catalog(root(cli)?, LoadOptions { sparse: *sparse })?;
            if cli.json {
                emit_json(
                    out,
                    &json!({
                        "models": catalog.models().len(),
                        "prompts": catalog.prompts().len(),
                        "images": catalog.images().len(),
                        "dim": catalog.dim(),
                    }),
                )
            } else {
                emit(out, &format!("{}\n", catalog::summary_line(&catalog)))
            }
        }
        Command::Prerank {
            prompt,
            lambda,
            nsfw_threshold,
        } => {
            let catalog = load(cli)?;
            let ranked = retrieval::pre_rank(&catalog, *prompt, lambda, *nsfw_threshold)?;
            if cli.json {
                return emit_json(out, &serde_json::to_value(&ranked)?);
            }
            let mut text =
                String::from("rank\tmodel_id\tq_accuracy\tq_distinctiveness\tq_popularity\tgre_score\n");
            for e in &ranked {
                let mv = &e.metric_vector;
                let _ = writeln!(
                    text,
                    "{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                    e.rank, e.model_id, mv.q_accuracy, mv.q_distinctiveness, mv.q_popularity, e.gre_score
                );
            }
            emit(out, &text)
        }
        Command::Heatmap { prompt, out: path } => {
            let catalog = load(cli)?;
            let matrix = metrics::similarity_matrix(&catalog, *prompt)?;
            let aps = metrics::average_pairwise_similarity(&matrix)?;
            std::fs::write(path, heatmap_csv(&matrix, aps))?;
            if cli.json {
                emit_json(out, &json!({ "prompt_id": prompt, "models": matrix.n(), "aps": aps }))
            } else {
                emit(out, &format!("prompt_id={prompt} models={} APS={aps}\n", matrix.n()))
            }
        }
        Command::Layout {
            prompt,
            seed,
            perplexity,
            lambda,
            out: path,
        } => {
            let catalog = load(cli)?;
            let n = catalog.images_for_prompt(*prompt)?.len();
            let params = match perplexity {
                Some(p) => LayoutParams {
                    perplexity: *p,
                    seed: *seed,
                    ..LayoutParams::default()
                },
                None => LayoutParams {
                    seed: *seed,
                    ..LayoutParams::default()
                }
                .fitted_to(n),
            };
            let layout = layout::compute_layout(&catalog, *prompt, &params, lambda)?;
            let body = layout.to_json();
            std::fs::write(path, format!("{}\n", serde_json::to_string_pretty(&body)?))?;
            if cli.json {
                emit_json(out, &body)
            } else {
                emit(
                    out,
                    &format!(
                        "prompt_id={prompt} points={} perplexity={} kl_initial={} kl_final={}\n",
                        layout.points.len(),
                        params.perplexity,
                        layout.kl_initial,
                        layout.kl_final
                    ),
                )
            }
        }
        Command::Simulate {
            prompt,
            users,
            mode,
            beta,
            seed,
            lambda,
            nsfw_threshold,
            min_pool,
            out: path,
        } => {
            let catalog = load(cli)?;
            let cfg = SimulationConfig {
                mode: *mode,
                beta: *beta,
                seed: *seed,
                weights: *lambda,
                nsfw_threshold: *nsfw_threshold,
                min_pool: *min_pool,
                ..SimulationConfig::new(*prompt, *users)
            };
            let result = simuser::simulate(&catalog, &cfg)?;
            jsonl::write_records(path, &result.preferences)?;
            let battles = result.sessions.iter().filter(|s| s.mode == Mode::Battle).count();
            let summary = json!({
                "sessions": result.sessions.len(),
                "battle": battles,
                "dragsort": result.sessions.len() - battles,
                "preferences": result.preferences.len(),
            });
            if cli.json {
                emit_json(out, &summary)
            } else {
                emit(
                    out,
                    &format!(
                        "sessions={} battle={} dragsort={} preferences={}\n",
                        summary["sessions"], summary["battle"], summary["dragsort"], summary["preferences"]
                    ),
                )
            }
        }
        Command::Train {
            preferences,
            factors,
            lr,
            reg,
            epochs,
            seed,
            out: path,
        } => {
            let prefs: Vec<PairwisePreference> = jsonl::read_records(preferences)?;
            let dataset = PreferenceDataset::from_preferences(&prefs, Split::Train)?;
            let params = BprParams {
                factors: *factors,
                learning_rate: *lr,
                l2_reg: *reg,
                epochs: *epochs,
                seed: *seed,
            };
            let trained = ltr::bpr_train(&dataset, &params)?;
            trained.model.save(path)?;
            let final_loss = trained.loss_trace.last().copied().unwrap_or(f64::NAN);
            let accuracy = ltr::evaluate_pairwise_accuracy(&trained.model, &dataset)?;
            if cli.json {
                emit_json(
                    out,
                    &json!({
                        "users": trained.model.user_ids().len(),
                        "items": trained.model.item_ids().len(),
                        "triples": dataset.len(),
                        "final_loss": final_loss,
                        "train_accuracy": accuracy,
                    }),
                )
            } else {
                emit(
                    out,
                    &format!(
                        "users={} items={} triples={} final_loss={final_loss:.6} train_accuracy={accuracy:.4}\n",
                        trained.model.user_ids().len(),
                        trained.model.item_ids().len(),
                        dataset.len()
                    ),
                )
            }
        }
        Command::Rank {
            model,
            user,
            prompt,
            top,
            lambda,
            nsfw_threshold,
        } => {
            let model = BprModel::load(model)?;
            let mut resp = if cli.root.is_some() {
                let catalog = load(cli)?;
                server::rank_for_user(&catalog, Some(&model), user, *prompt, lambda, *nsfw_threshold)?
            } else {
                if !model.has_user(user) {
                    return Err(Error::unknown_id("user", user));
                }
                let ranking = ltr::bpr_rank(&model, user, model.item_ids())?;
                server::RankResponse {
                    user_id: user.clone(),
                    source: "bpr".into(),
                    ranking: ranking
                        .into_iter()
                        .map(|(model_id, score)| server::RankedModel { model_id, score })
                        .collect(),
                }
            };
            if let Some(k) = top {
                resp.ranking.truncate(*k);
            }
            if cli.json {
                return emit_json(out, &serde_json::to_value(&resp)?);
            }
            let mut text = format!("# user={} source={}\nrank\tmodel_id\tscore\n", resp.user_id, resp.source);
            for (i, r) in resp.ranking.iter().enumerate() {
                let _ = writeln!(text, "{}\t{}\t{:.6}", i + 1, r.model_id, r.score);
            }
            emit(out, &text)
        }
        Command::Serve {
            host,
            port,
            seed,
            lambda,
            nsfw_threshold,
            min_pool,
            model,
            assets,
            state_dir,
        } => {
            let root = root(cli)?;
            let catalog = Arc::new(load(cli)?);
            let mut config = ServerConfig::new(state_dir.clone().unwrap_or_else(|| root.join("state")));
            config.seed = *seed;
            config.weights = *lambda;
            config.nsfw_threshold = *nsfw_threshold;
            config.min_pool = *min_pool;
            config.assets_dir = assets.clone();
            let state = AppState::open(catalog, config)?;
            if let Some(path) = model {
                state.set_model(Some(BprModel::load(path)?));
            }
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .map_err(|_| Error::BadRequest(format!("invalid address {host}:{port}")))?;
            writeln!(out, "listening on http://{addr}/api/v1")?;
            out.flush()?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(server::serve(Arc::new(state), addr))
        }
    }
}

/// CSV body for `heatmap`: header of model ids, one row per model, then `APS=`.
pub fn heatmap_csv(matrix: &metrics::SimilarityMatrix, aps: f64) -> String {
    let mut s = String::from("model_id");
    for id in &matrix.model_order {
        let _ = write!(s, ",{id}");
    }
    s.push('\n');
    for (i, id) in matrix.model_order.iter().enumerate() {
        let _ = write!(s, "{id}");
        for v in matrix.row(i) {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    let _ = writeln!(s, "APS={aps}");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = run(args.iter().copied(), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn usage_errors_exit_one() {
        let (code, _, err) = run_str(&["gemrec", "frobnicate"]);
        assert_eq!(code, 1);
        assert!(err.contains("Usage"));
        assert_eq!(run_str(&["gemrec", "prerank", "--prompt", "x"]).0, 1);
        assert_eq!(run_str(&["gemrec", "prerank", "--prompt", "1", "--lambda", "1,2"]).0, 1);
    }

    #[test]
    fn help_exits_zero() {
        let (code, out, _) = run_str(&["gemrec", "--help"]);
        assert_eq!(code, 0);
        for sub in ["ingest", "prerank", "heatmap", "layout", "simulate", "train", "rank", "serve"] {
            assert!(out.contains(sub), "{sub} missing from help");
        }
    }

    #[test]
    fn data_errors_exit_two() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_str().unwrap();
        let (code, _, err) = run_str(&["gemrec", "--root", root, "ingest"]);
        assert_eq!(code, 2);
        assert!(err.starts_with("error[missing_file]"), "{err}");

        let (code, _, err) = run_str(&["gemrec", "--root", root, "--json", "ingest"]);
        assert_eq!(code, 2);
        let body: ApiError = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(body.code, "missing_file");
    }

    #[test]
    fn heatmap_csv_layout() {
        let m = metrics::SimilarityMatrix::from_values(1, vec![3, 7], vec![1.0, 0.25, 0.25, 1.0]).unwrap();
        assert_eq!(heatmap_csv(&m, 0.25), "model_id,3,7\n3,1,0.25\n7,0.25,1\nAPS=0.25\n");
    }
}
