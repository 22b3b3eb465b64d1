//! In-memory conversation sessions.
//!
//! Each session sits behind its own mutex, so operations on one session are
//! serialized while different sessions proceed independently. Expansion only
//! holds the lock long enough to copy the transcript.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use shorthand::dialogdata::ContextMode;
use shorthand::expander::{ExpandError, Expander, ExpansionQuery, ExpansionResult};
use shorthand::{normalize_phrase, Abbreviation};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    User,
    Partner,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionTurn {
    pub author: Author,
    pub text: String,
    /// Set on user turns typed as free text rather than picked from the offered options.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub manual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub backend: String,
    pub k: usize,
    pub context_mode: ContextMode,
    pub created_at: DateTime<Utc>,
    pub turns: Vec<SessionTurn>,
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("unknown backend {0}")]
    UnknownBackend(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error(transparent)]
    Expand(#[from] ExpandError),
    #[error("journal: {0}")]
    Journal(#[from] std::io::Error),
}

impl SessionError {
    pub fn code(&self) -> &'static str {
        match self {
            SessionError::UnknownSession(_) => "unknown_session",
            SessionError::UnknownBackend(_) => "unknown_backend",
            SessionError::Invalid(_) => "invalid_request",
            SessionError::Expand(e) if e.is_retryable() => "backend_unavailable",
            SessionError::Expand(ExpandError::InvalidQuery(_)) => "invalid_request",
            SessionError::Expand(_) => "backend_error",
            SessionError::Journal(_) => "internal",
        }
    }

    pub fn retryable(&self) -> bool {
        matches!(self, SessionError::Expand(e) if e.is_retryable())
    }
}

/// One journal line. Replaying a session's lines rebuilds it.
#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
enum JournalEntry {
    Created {
        id: String,
        backend: String,
        k: usize,
        context_mode: ContextMode,
        created_at: DateTime<Utc>,
    },
    Turn {
        #[serde(flatten)]
        turn: SessionTurn,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct ExpandOutcome {
    pub context: Vec<String>,
    pub result: ExpansionResult,
}

/// Named expansion backends available to sessions.
pub type Backends = BTreeMap<String, Arc<dyn Expander>>;

pub struct SessionStore {
    backends: Backends,
    default_backend: String,
    default_k: usize,
    seed: u64,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    /// Options last shown per session, used only to flag free-text selections.
    offered: Mutex<HashMap<String, Vec<String>>>,
    journal_dir: Option<PathBuf>,
}

impl SessionStore {
    pub fn new(backends: Backends, default_backend: impl Into<String>) -> Self {
        SessionStore {
            backends,
            default_backend: default_backend.into(),
            default_k: shorthand::expander::DEFAULT_K,
            seed: 0,
            sessions: RwLock::default(),
            offered: Mutex::default(),
            journal_dir: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Appends every change to `<dir>/<session id>.jsonl`, and loads any
    /// sessions already journaled there.
    pub fn with_journal(mut self, dir: impl Into<PathBuf>) -> Result<Self, SessionError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) == Some("jsonl") {
                if let Some(s) = replay(&path)? {
                    sessions.insert(s.id.clone(), Arc::new(Mutex::new(s)));
                }
            }
        }
        self.sessions = RwLock::new(sessions);
        self.journal_dir = Some(dir);
        Ok(self)
    }

    pub fn backend_names(&self) -> impl Iterator<Item = &str> {
        self.backends.keys().map(String::as_str)
    }

    pub fn default_backend(&self) -> &str {
        &self.default_backend
    }

    pub fn create_session(
        &self,
        backend: Option<&str>,
        k: Option<usize>,
        context_mode: Option<ContextMode>,
    ) -> Result<Session, SessionError> {
        let backend = backend.unwrap_or(&self.default_backend);
        if !self.backends.contains_key(backend) {
            return Err(SessionError::UnknownBackend(backend.to_string()));
        }
        let k = k.unwrap_or(self.default_k);
        if k == 0 {
            return Err(SessionError::Invalid("k must be at least 1".into()));
        }
        let session = Session {
            id: uuid::Uuid::new_v4().simple().to_string(),
            backend: backend.to_string(),
            k,
            context_mode: context_mode.unwrap_or(ContextMode::Full),
            created_at: Utc::now(),
            turns: Vec::new(),
        };
        self.journal(
            &session.id,
            &JournalEntry::Created {
                id: session.id.clone(),
                backend: session.backend.clone(),
                k,
                context_mode: session.context_mode,
                created_at: session.created_at,
            },
        )?;
        self.sessions
            .write()
            .unwrap()
            .insert(session.id.clone(), Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<Session>>, SessionError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::UnknownSession(id.to_string()))
    }

    pub fn get(&self, id: &str) -> Result<Session, SessionError> {
        Ok(self.handle(id)?.lock().unwrap().clone())
    }

    pub fn add_turn(&self, id: &str, author: Author, text: &str) -> Result<Session, SessionError> {
        let text = text.trim();
        if text.is_empty() {
            return Err(SessionError::Invalid("turn text is empty".into()));
        }
        self.append(
            id,
            SessionTurn {
                author,
                text: text.to_string(),
                manual: false,
            },
        )
    }

    pub fn add_partner_turn(&self, id: &str, text: &str) -> Result<Session, SessionError> {
        self.add_turn(id, Author::Partner, text)
    }

    /// Records the user's chosen phrase. A phrase that was not among the
    /// options last offered in this session is flagged `manual`.
    pub fn select_option(&self, id: &str, phrase: &str) -> Result<Session, SessionError> {
        let phrase = phrase.trim();
        if phrase.is_empty() {
            return Err(SessionError::Invalid("phrase is empty".into()));
        }
        let normalized = normalize_phrase(phrase).normalized;
        let manual = !self
            .offered
            .lock()
            .unwrap()
            .get(id)
            .is_some_and(|o| o.contains(&normalized));
        self.append(
            id,
            SessionTurn {
                author: Author::User,
                text: phrase.to_string(),
                manual,
            },
        )
    }

    fn append(&self, id: &str, turn: SessionTurn) -> Result<Session, SessionError> {
        let handle = self.handle(id)?;
        let mut session = handle.lock().unwrap();
        self.journal(id, &JournalEntry::Turn { turn: turn.clone() })?;
        session.turns.push(turn);
        self.offered.lock().unwrap().remove(id);
        Ok(session.clone())
    }

    /// Expands `abbreviation` with the session's turns as context. The
    /// transcript is not modified.
    pub fn expand_in_session(
        &self,
        id: &str,
        abbreviation: &str,
        noisy: bool,
        k: Option<usize>,
        context_mode: Option<ContextMode>,
    ) -> Result<ExpandOutcome, SessionError> {
        let (backend, context, k) = {
            let handle = self.handle(id)?;
            let s = handle.lock().unwrap();
            let texts: Vec<String> = s.turns.iter().map(|t| t.text.clone()).collect();
            let mode = context_mode.unwrap_or(s.context_mode);
            (s.backend.clone(), mode.select(&texts).to_vec(), k.unwrap_or(s.k))
        };
        let expander = self
            .backends
            .get(&backend)
            .ok_or_else(|| SessionError::UnknownBackend(backend.clone()))?;
        let query = ExpansionQuery::with_options(context, Abbreviation::parse(abbreviation), noisy, k)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.request_seed(&backend, &query));
        let result = expander.expand(&query, &mut rng)?;
        self.offered
            .lock()
            .unwrap()
            .insert(id.to_string(), result.phrases().map(str::to_string).collect());
        Ok(ExpandOutcome {
            context: query.context,
            result,
        })
    }

    /// Identical requests get identical tie-breaking.
    fn request_seed(&self, backend: &str, query: &ExpansionQuery) -> u64 {
        let mut h = DefaultHasher::new();
        (self.seed, backend, &query.context, query.abbreviation.as_str(), query.noisy, query.k).hash(&mut h);
        h.finish()
    }

    fn journal(&self, id: &str, entry: &JournalEntry) -> Result<(), SessionError> {
        let Some(dir) = &self.journal_dir else {
            return Ok(());
        };
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(dir.join(format!("{id}.jsonl")))?;
        let line = serde_json::to_string(entry).map_err(std::io::Error::from)?;
        writeln!(f, "{line}")?;
        Ok(())
    }
}

fn replay(path: &Path) -> Result<Option<Session>, SessionError> {
    let mut session: Option<Session> = None;
    for line in BufReader::new(File::open(path)?).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        // a torn final line from a crash is skipped
        let Ok(entry) = serde_json::from_str::<JournalEntry>(&line) else {
            tracing::warn!("skipping unreadable journal line in {}", path.display());
            continue;
        };
        match entry {
            JournalEntry::Created {
                id,
                backend,
                k,
                context_mode,
                created_at,
            } => {
                session = Some(Session {
                    id,
                    backend,
                    k,
                    context_mode,
                    created_at,
                    turns: Vec::new(),
                })
            }
            JournalEntry::Turn { turn } => {
                if let Some(s) = session.as_mut() {
                    s.turns.push(turn);
                }
            }
        }
    }
    Ok(session)
}
