use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use chrono::{DateTime, Utc};
use kcc_core::corpus::{build_corpus, CorpusError, NormalizationConfig};
use kcc_core::dialogue::{DialogueError, PolicyError};
use kcc_core::index::IndexError;
use kcc_core::ingest::{load_corpus_file, IngestError};
use kcc_core::{build_index, step, DialoguePolicy, DialogueSession, ReplyKind, SessionState, TfIdfIndex};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::GatewayConfig;

const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("service is not ready: no index loaded")]
    Unready,
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Session(#[from] DialogueError),
    #[error("session snapshot: {0}")]
    Snapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("policy_path is not configured")]
    NoPolicy,
    #[error("neither index_path nor corpus_path is configured")]
    NoCorpus,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// Shared, read-only inputs of every turn.
#[derive(Debug)]
pub struct Engine {
    pub index: TfIdfIndex,
    pub policy: DialoguePolicy,
}

impl Engine {
    pub fn new(index: TfIdfIndex, policy: DialoguePolicy) -> Self {
        Engine { index, policy }
    }

    /// Loads the policy, then the index snapshot if configured, otherwise
    /// builds the index from the corpus file.
    pub fn load(config: &GatewayConfig) -> Result<Self, EngineError> {
        let policy = DialoguePolicy::load(config.policy_path.as_ref().ok_or(EngineError::NoPolicy)?)?;
        let index = match (&config.index_path, &config.corpus_path) {
            (Some(p), _) => TfIdfIndex::load(p)?,
            (None, Some(p)) => index_from_corpus(p)?,
            (None, None) => return Err(EngineError::NoCorpus),
        };
        Ok(Engine { index, policy })
    }
}

pub fn index_from_corpus(path: &Path) -> Result<TfIdfIndex, EngineError> {
    let report = load_corpus_file(path)?;
    let corpus = build_corpus(&report.records, &NormalizationConfig::default())?;
    Ok(build_index(&corpus.docs)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InboundMessage {
    pub sender_id: String,
    pub text: String,
    pub timestamp: DateTime<Utc>,
}

impl InboundMessage {
    pub fn now(sender_id: impl Into<String>, text: impl Into<String>) -> Self {
        InboundMessage { sender_id: sender_id.into(), text: text.into(), timestamp: Utc::now() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutboundBundle {
    pub sender_id: String,
    pub replies: Vec<String>,
    /// Kind of each entry in `replies`.
    pub kinds: Vec<ReplyKind>,
    /// Kind of the turn as a whole.
    pub kind: ReplyKind,
    pub state_after: SessionState,
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Slot {
    session: DialogueSession,
    last_seen: DateTime<Utc>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    sessions: Vec<Slot>,
}

type SlotRef = Arc<tokio::sync::Mutex<Slot>>;

/// Session store plus dialogue dispatch. Turns from one sender run one at a
/// time, in arrival order at the per-sender lock; different senders run in
/// parallel.
#[derive(Default)]
pub struct ChatService {
    engine: RwLock<Option<Arc<Engine>>>,
    sessions: Mutex<HashMap<String, SlotRef>>,
}

impl ChatService {
    pub fn new(engine: Engine) -> Self {
        let service = ChatService::default();
        service.install_engine(engine);
        service
    }

    /// A service that answers 503 until [`ChatService::install_engine`] runs.
    pub fn unready() -> Self {
        ChatService::default()
    }

    pub fn install_engine(&self, engine: Engine) {
        *self.engine.write() = Some(Arc::new(engine));
    }

    pub fn engine(&self) -> Option<Arc<Engine>> {
        self.engine.read().clone()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().len()
    }

    pub async fn handle_message(&self, msg: InboundMessage) -> Result<OutboundBundle, ServiceError> {
        let engine = self.engine().ok_or(ServiceError::Unready)?;
        let sender = msg.sender_id.trim();
        if sender.is_empty() {
            return Err(ServiceError::BadRequest("sender_id must not be empty".into()));
        }
        let slot = self
            .sessions
            .lock()
            .entry(sender.to_string())
            .or_insert_with(|| {
                Arc::new(tokio::sync::Mutex::new(Slot {
                    session: DialogueSession::new(sender),
                    last_seen: msg.timestamp,
                }))
            })
            .clone();

        let mut slot = slot.lock().await;
        let (session, reply) = step(slot.session.clone(), &msg.text, &engine.index, &engine.policy)?;
        slot.session = session;
        slot.last_seen = slot.last_seen.max(msg.timestamp);
        let state_after = slot.session.state;
        Ok(OutboundBundle {
            sender_id: sender.to_string(),
            kinds: reply.text_kinds(state_after),
            kind: reply.kind,
            replies: reply.texts,
            state_after,
            confidence: reply.confidence,
        })
    }

    /// Current session for `sender_id`, if any.
    pub async fn session(&self, sender_id: &str) -> Option<DialogueSession> {
        let slot = self.sessions.lock().get(sender_id).cloned()?;
        let slot = slot.lock().await;
        Some(slot.session.clone())
    }

    pub fn session_gc(&self, max_idle: Duration) -> usize {
        self.gc_at(Utc::now(), max_idle)
    }

    /// Evicts sessions whose last message is older than `max_idle` at `now`.
    /// Sessions with a turn in flight are kept.
    pub fn gc_at(&self, now: DateTime<Utc>, max_idle: Duration) -> usize {
        let Ok(limit) = chrono::Duration::from_std(max_idle) else {
            return 0;
        };
        let mut sessions = self.sessions.lock();
        let before = sessions.len();
        sessions.retain(|_, slot| match slot.try_lock() {
            Ok(s) => now.signed_duration_since(s.last_seen) <= limit,
            Err(_) => true,
        });
        before - sessions.len()
    }

    /// Writes every session to `path` as JSON, via a temporary file.
    pub async fn save_sessions(&self, path: &Path) -> Result<usize, ServiceError> {
        let slots: Vec<SlotRef> = self.sessions.lock().values().cloned().collect();
        let mut sessions = Vec::with_capacity(slots.len());
        for slot in slots {
            sessions.push(slot.lock().await.clone());
        }
        sessions.sort_by(|a, b| a.session.session_id.cmp(&b.session.session_id));
        let n = sessions.len();
        let body = serde_json::to_vec(&Snapshot { version: SNAPSHOT_VERSION, sessions })
            .map_err(|e| ServiceError::Snapshot(e.to_string()))?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, path)?;
        Ok(n)
    }

    /// Replaces the session store with the contents of `path`. Every session
    /// is validated before any is installed.
    pub fn load_sessions(&self, path: &Path) -> Result<usize, ServiceError> {
        let text = std::fs::read_to_string(path)?;
        let snap: Snapshot = serde_json::from_str(&text).map_err(|e| ServiceError::Snapshot(e.to_string()))?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(ServiceError::Snapshot(format!("unsupported version {}", snap.version)));
        }
        for slot in &snap.sessions {
            slot.session.validate()?;
        }
        let n = snap.sessions.len();
        *self.sessions.lock() = snap
            .sessions
            .into_iter()
            .map(|slot| (slot.session.session_id.clone(), Arc::new(tokio::sync::Mutex::new(slot))))
            .collect();
        Ok(n)
    }
}
