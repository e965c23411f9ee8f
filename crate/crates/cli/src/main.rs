use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use loom_core::analytics::{
    asymmetry_stats, build_transition_matrix, compare_corpora, load_corpus, metrics_table, AnalyticsError,
};
use loom_core::config::{Config, ConfigError};
use loom_core::domain::{
    DomainError, PersonaId, ProposalRound, SessionId, Sparkle, StoryBeat, StorySession, Verdict, WordRange,
};
use loom_core::engine::{EngineError, StoryEngine};
use loom_core::error::ErrorClass;
use loom_core::export::{export_json, export_text};
use loom_core::replay::{replay, ReplayError, ReplayScript};
use loom_core::store::{PortfolioStore, StoreError};

#[derive(Parser)]
#[command(name = "loom", version, about = "Write stories with a panel of persona models")]
struct Cli {
    /// Session portfolio directory.
    #[arg(long, global = true, env = "LOOM_PORTFOLIO")]
    portfolio: Option<PathBuf>,
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print results and errors as JSON.
    #[arg(long, global = true)]
    json: bool,
    /// Use the offline mock backend.
    #[arg(long, global = true)]
    mock: bool,
    /// Mock backend seed (implies --mock).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Fixed verifier reply for the mock backend (implies --mock).
    #[arg(long, global = true)]
    mock_verdict: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Start a session and run the first round.
    New {
        /// Read the sparkle from a file.
        #[arg(long, conflicts_with = "sparkle")]
        sparkle_file: Option<PathBuf>,
        /// The sparkle text itself.
        #[arg(long)]
        sparkle: Option<String>,
        /// Number of beats in the story (default 6).
        #[arg(long)]
        beats: Option<u8>,
        /// Segment length as LOWER-UPPER words.
        #[arg(long)]
        words: Option<String>,
        #[arg(long)]
        language: Option<String>,
        /// Session id; random when omitted.
        #[arg(long)]
        id: Option<String>,
    },
    /// Show the open round's ranked proposals.
    Beats { id: String },
    /// Run a fresh round for the next beat.
    Round { id: String },
    /// Regenerate one persona's proposal in the open round.
    Retry { id: String, persona: String },
    /// Select a proposal (optionally edited), expand it and open the next round.
    Pick {
        id: String,
        persona: String,
        /// Replace the proposal with the beat JSON in this file first.
        #[arg(long)]
        edit_file: Option<PathBuf>,
    },
    /// Rewrite a segment by instruction.
    Refine {
        id: String,
        /// Segment index, counted from 0.
        segment: usize,
        #[arg(long)]
        instruction: String,
    },
    /// Replace a segment's prose with the contents of a file.
    Edit {
        id: String,
        /// Segment index, counted from 0.
        segment: usize,
        #[arg(long)]
        prose_file: PathBuf,
    },
    /// Talk ideas through without touching the draft.
    Brainstorm {
        id: String,
        #[arg(long)]
        message: String,
    },
    /// Print the story text or the session JSON.
    Export {
        id: String,
        #[arg(long, value_enum, default_value_t = Format::Txt)]
        format: Format,
    },
    /// Mark the story complete before all beats are written.
    Finish { id: String },
    /// List sessions in the portfolio.
    Sessions,
    /// Narrative metrics for a story or a corpus directory.
    Metrics { path: PathBuf },
    /// Paired comparison of two corpora.
    Compare { a: PathBuf, b: PathBuf },
    /// Persona transition counts over a portfolio.
    Transitions {
        /// Portfolio to scan; defaults to --portfolio.
        portfolio: Option<PathBuf>,
    },
    /// Run a scripted session end to end.
    Replay {
        script: PathBuf,
        /// Stop once this many steps are complete.
        #[arg(long)]
        stop_after: Option<usize>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Txt,
    Json,
}

struct CliError {
    class: ErrorClass,
    message: String,
}

impl CliError {
    fn new(class: ErrorClass, message: impl Into<String>) -> Self {
        Self {
            class,
            message: message.into(),
        }
    }
}

macro_rules! classed {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                Self::new(e.class(), e.to_string())
            }
        }
    )*};
}
classed!(EngineError, StoreError, ReplayError);

impl From<DomainError> for CliError {
    fn from(e: DomainError) -> Self {
        Self::new(ErrorClass::Invalid, e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        Self::new(ErrorClass::Invalid, e.to_string())
    }
}

impl From<AnalyticsError> for CliError {
    fn from(e: AnalyticsError) -> Self {
        let class = match e {
            AnalyticsError::Corpus { .. } => ErrorClass::NotFound,
            _ => ErrorClass::Invalid,
        };
        Self::new(class, e.to_string())
    }
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::new(ErrorClass::Invalid, format!("{}: {e}", path.display())))
}

struct Ctx {
    json: bool,
    config: Config,
    mock: Option<(Option<u64>, Option<String>)>,
}

impl Ctx {
    fn engine(&self, default_seed: Option<u64>) -> Result<StoryEngine, CliError> {
        let mut config = self.config.clone();
        if let Some((seed, verdict)) = &self.mock {
            let seed = seed.or(default_seed).or(match config.backend.kind {
                loom_core::gateway::BackendKind::Mock { seed, .. } => Some(seed),
                _ => None,
            });
            config.use_mock(seed.unwrap_or(0), verdict.clone());
        }
        Ok(config.engine()?)
    }

    fn store(&self) -> Result<PortfolioStore, CliError> {
        Ok(PortfolioStore::open(&self.config.portfolio_dir)?)
    }

    fn load(&self, id: &str) -> Result<(PortfolioStore, StorySession), CliError> {
        let store = self.store()?;
        let id = SessionId::new(id).map_err(|_| CliError::new(ErrorClass::NotFound, format!("session `{id}` not found")))?;
        let session = store.load(&id)?;
        Ok((store, session))
    }

    fn emit(&self, value: serde_json::Value, text: impl FnOnce() -> String) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(&value).expect("json"));
        } else {
            let text = text();
            print!("{text}");
            if !text.ends_with('\n') {
                println!();
            }
        }
    }
}

fn verdict_label(v: &Verdict) -> String {
    match v {
        Verdict::Pending { reason } => match reason {
            Some(r) => format!("pending ({r})"),
            None => "pending".to_owned(),
        },
        Verdict::Checked(c) if c.has_error => format!("inconsistent: {}", c.error_description),
        Verdict::Checked(c) if c.parse_warning => "consistent (unparsed verifier reply)".to_owned(),
        Verdict::Checked(_) => "consistent".to_owned(),
    }
}

fn round_text(round: &ProposalRound) -> String {
    let mut out = format!("Beat {} proposals\n", round.beat_index + 1);
    for p in &round.proposals {
        out.push_str(&format!(
            "\n#{} {}  [{}]\n   {} / {}\n   characters: {}\n",
            p.rank.unwrap_or(0),
            p.persona_id,
            verdict_label(&p.verdict),
            p.beat.setting.location,
            p.beat.setting.time,
            p.beat.characters.join(", "),
        ));
        for e in &p.beat.key_events {
            out.push_str(&format!("   - {e}\n"));
        }
        out.push_str(&format!("   why: {}\n", p.rationale));
    }
    for f in &round.failures {
        out.push_str(&format!("\n!! {} failed ({}): {}\n", f.persona_id, f.class, f.message));
    }
    out
}

fn open_round(session: &StorySession) -> Result<&ProposalRound, CliError> {
    session.current_round().ok_or_else(|| {
        CliError::new(
            ErrorClass::Conflict,
            format!("session `{}` has no open round (status {})", session.session_id.as_str(), session.status),
        )
    })
}

fn parse_words(s: &str) -> Result<WordRange, CliError> {
    let (lo, hi) = s
        .split_once('-')
        .ok_or_else(|| CliError::new(ErrorClass::Invalid, "--words must look like 800-1000"))?;
    let num = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| CliError::new(ErrorClass::Invalid, format!("--words: {e}")))
    };
    Ok(WordRange::new(num(lo)?, num(hi)?)?)
}

async fn run(cli: Cli) -> Result<(), CliError> {
    let mut config = Config::from_env(cli.config.as_deref())?;
    if let Some(dir) = &cli.portfolio {
        config.portfolio_dir = dir.clone();
    }
    let mock = (cli.mock || cli.seed.is_some() || cli.mock_verdict.is_some()).then(|| (cli.seed, cli.mock_verdict.clone()));
    let ctx = Ctx {
        json: cli.json,
        config,
        mock,
    };

    match cli.command {
        Command::New {
            sparkle_file,
            sparkle,
            beats,
            words,
            language,
            id,
        } => {
            let text = match (sparkle_file, sparkle) {
                (Some(path), _) => read_file(&path)?,
                (None, Some(text)) => text,
                (None, None) => return Err(CliError::new(ErrorClass::Invalid, "give --sparkle-file or --sparkle")),
            };
            let mut sparkle = Sparkle::new(text.trim())?;
            if let Some(n) = beats {
                sparkle = sparkle.with_beats(n)?;
            }
            if let Some(w) = words {
                sparkle = sparkle.with_segment_words(parse_words(&w)?)?;
            }
            if let Some(lang) = language {
                sparkle = sparkle.with_language(lang)?;
            }
            let store = ctx.store()?;
            let id = id.map(SessionId::new).transpose()?;
            if let Some(id) = &id {
                if store.exists(id) {
                    return Err(CliError::new(ErrorClass::Conflict, format!("session `{}` already exists", id.as_str())));
                }
            }
            let session = ctx.engine(None)?.create_session(id, sparkle).await?;
            store.save(&session)?;
            let round = open_round(&session)?;
            ctx.emit(json!({"session_id": session.session_id, "round": round}), || {
                format!("{}\n", session.session_id.as_str())
            });
        }
        Command::Beats { id } => {
            let (_, session) = ctx.load(&id)?;
            let round = open_round(&session)?;
            ctx.emit(json!(round), || round_text(round));
        }
        Command::Round { id } => {
            let (store, mut session) = ctx.load(&id)?;
            ctx.engine(None)?.next_round(&mut session).await?;
            store.save(&session)?;
            let round = open_round(&session)?;
            ctx.emit(json!(round), || round_text(round));
        }
        Command::Retry { id, persona } => {
            let (store, mut session) = ctx.load(&id)?;
            ctx.engine(None)?
                .retry_persona(&mut session, &PersonaId::from(persona.as_str()))
                .await?;
            store.save(&session)?;
            let round = open_round(&session)?;
            ctx.emit(json!(round), || round_text(round));
        }
        Command::Pick { id, persona, edit_file } => {
            let edit = match edit_file {
                Some(path) => Some(
                    serde_json::from_str::<StoryBeat>(&read_file(&path)?)
                        .map_err(|e| CliError::new(ErrorClass::Invalid, format!("{}: {e}", path.display())))?,
                ),
                None => None,
            };
            let (store, mut session) = ctx.load(&id)?;
            let engine = ctx.engine(None)?;
            let persona = PersonaId::from(persona.as_str());
            // Each completed step is saved, so a failure later in the chain keeps earlier work.
            let result = async {
                if let Some(beat) = edit {
                    engine.edit_beat(&mut session, &persona, beat).await?;
                }
                engine.select(&mut session, &persona)?;
                engine.expand(&mut session).await?;
                store.save(&session)?;
                if session.status == loom_core::domain::SessionStatus::AwaitingSelection {
                    engine.next_round(&mut session).await?;
                }
                Ok::<_, CliError>(())
            }
            .await;
            store.save(&session)?;
            result?;
            let segment = session.segments.last().expect("expanded");
            ctx.emit(json!({"segment": segment, "status": session.status}), || segment.prose.clone());
        }
        Command::Refine {
            id,
            segment,
            instruction,
        } => {
            let (store, mut session) = ctx.load(&id)?;
            let seg = ctx.engine(None)?.refine(&mut session, segment, &instruction).await?.clone();
            store.save(&session)?;
            ctx.emit(json!(seg), || seg.prose.clone());
        }
        Command::Edit { id, segment, prose_file } => {
            let prose = read_file(&prose_file)?;
            let (store, mut session) = ctx.load(&id)?;
            let seg = ctx.engine(None)?.manual_edit(&mut session, segment, &prose).await?.clone();
            store.save(&session)?;
            ctx.emit(json!(seg), || format!("segment {} now has {} words\n", seg.beat_index, seg.word_count));
        }
        Command::Brainstorm { id, message } => {
            let (store, mut session) = ctx.load(&id)?;
            let reply = ctx.engine(None)?.brainstorm(&mut session, &message).await?;
            store.save(&session)?;
            ctx.emit(json!({"reply": reply}), || reply.clone());
        }
        Command::Export { id, format } => {
            let (_, session) = ctx.load(&id)?;
            match format {
                Format::Txt => print!("{}", export_text(&session)),
                Format::Json => print!("{}", export_json(&session)),
            }
        }
        Command::Finish { id } => {
            let (store, mut session) = ctx.load(&id)?;
            ctx.engine(None)?.finish(&mut session)?;
            store.save(&session)?;
            ctx.emit(json!({"session_id": session.session_id, "status": session.status}), || {
                format!("{} complete with {} segments\n", session.session_id.as_str(), session.segments.len())
            });
        }
        Command::Sessions => {
            let list = ctx.store()?.list()?;
            ctx.emit(json!(list), || {
                let mut rows = vec![["session", "status", "beats", "words"].map(String::from).to_vec()];
                for s in &list {
                    rows.push(vec![
                        s.session_id.clone(),
                        s.status.map_or_else(|| "corrupt".to_owned(), |st| st.to_string()),
                        format!("{}/{}", s.beats, s.target_beats),
                        s.words.to_string(),
                    ]);
                }
                loom_core::analytics::table(&rows)
            });
        }
        Command::Metrics { path } => {
            let corpus = load_corpus(&path)?;
            ctx.emit(json!(corpus), || metrics_table(&corpus));
        }
        Command::Compare { a, b } => {
            let comparison = compare_corpora(&load_corpus(&a)?, &load_corpus(&b)?)?;
            ctx.emit(json!(comparison), || comparison.to_table());
        }
        Command::Transitions { portfolio } => {
            let store = match portfolio {
                Some(dir) => PortfolioStore::open(dir)?,
                None => ctx.store()?,
            };
            let logs: Vec<_> = store.load_all()?.into_iter().map(|s| s.selection_log).collect();
            let roster = ctx.config.engine().map(|e| e.roster).unwrap_or_else(|_| loom_core::domain::Roster::builtin());
            let matrix = build_transition_matrix(&roster, &logs)?;
            let stats = asymmetry_stats(&matrix).ok();
            ctx.emit(json!({"matrix": matrix, "asymmetry": stats}), || {
                let mut out = matrix.to_table();
                if let Some(stats) = &stats {
                    out.push('\n');
                    out.push_str(&stats.to_table());
                }
                out
            });
        }
        Command::Replay { script, stop_after } => {
            let script = ReplayScript::from_json(&read_file(&script)?)?;
            let seed = ctx.mock.as_ref().and_then(|(s, _)| *s).or(script.seed).unwrap_or(0);
            let engine = ctx.engine(Some(seed))?;
            let store = ctx.store()?;
            let outcome = replay(&engine, &script, seed, Some(&store), stop_after).await?;
            ctx.emit(
                json!({"session_id": outcome.session.session_id, "status": outcome.session.status,
                       "steps_done": outcome.done, "steps_total": outcome.total, "steps_run": outcome.ran}),
                || format!("{}\n", outcome.session.session_id.as_str()),
            );
        }
    }
    Ok(())
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    let json = cli.json;
    match run(cli).await {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let code = e.class.exit_code();
            if json {
                eprintln!(
                    "{}",
                    json!({"error": {"class": e.class, "message": e.message, "exit_code": code}})
                );
            } else {
                eprintln!("error ({}): {}", e.class, e.message);
            }
            ExitCode::from(code as u8)
        }
    }
}
