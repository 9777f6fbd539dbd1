//! Conversation state machine.
//!
//! Each sender owns a [`DialogueSession`]. A turn is a pure function of the
//! session, the user's text, the shared index and the shared policy:
//!
//! | state                | greeting  | query ≥ t | query < t | affirmative | negative           | blank    |
//! |----------------------|-----------|-----------|-----------|-------------|--------------------|----------|
//! | Greeting             | Greeting  | Answer    | Fallback  | Farewell    | Reprompt           | Reprompt |
//! | AwaitingQuery        | Greeting  | Answer    | Fallback  | Farewell    | Reprompt           | Reprompt |
//! | AwaitingSatisfaction | Greeting  | Answer    | Fallback  | Farewell    | CallCenterReferral | Reprompt |
//!
//! An `Answer` always moves to `AwaitingSatisfaction`; a blank message keeps
//! the current state; everything else lands in `AwaitingQuery`.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::{Match, TfIdfIndex};

pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.7;
pub const CALL_CENTER_PLACEHOLDER: &str = "{call_center_number}";

#[derive(Debug, Error)]
pub enum DialogueError {
    #[error("session corrupt: {0}")]
    SessionCorrupt(String),
}

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("invalid policy: {0}")]
    Invalid(String),
    #[error("cannot read policy file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse policy file: {0}")]
    Parse(#[from] toml::de::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SessionState {
    Greeting,
    AwaitingQuery,
    AwaitingSatisfaction,
}

impl SessionState {
    pub const ALL: [SessionState; 3] = [
        SessionState::Greeting,
        SessionState::AwaitingQuery,
        SessionState::AwaitingSatisfaction,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SessionState::Greeting => "Greeting",
            SessionState::AwaitingQuery => "AwaitingQuery",
            SessionState::AwaitingSatisfaction => "AwaitingSatisfaction",
        }
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ReplyKind {
    Greeting,
    Answer,
    SatisfactionPrompt,
    Fallback,
    CallCenterReferral,
    Farewell,
    /// Nudge after a message that carried nothing to act on.
    Reprompt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BotReply {
    pub texts: Vec<String>,
    pub kind: ReplyKind,
    /// Top match score for `Answer` and `Fallback` replies.
    pub confidence: Option<f64>,
}

impl BotReply {
    /// One kind per entry of `texts`, for channels that render each text as
    /// its own bubble. `state_after` is the session state after the turn.
    pub fn text_kinds(&self, state_after: SessionState) -> Vec<ReplyKind> {
        let tail = match self.kind {
            ReplyKind::Answer => ReplyKind::SatisfactionPrompt,
            ReplyKind::Fallback => ReplyKind::CallCenterReferral,
            ReplyKind::Reprompt if state_after == SessionState::AwaitingSatisfaction => {
                ReplyKind::SatisfactionPrompt
            }
            other => other,
        };
        (0..self.texts.len())
            .map(|i| if i == 0 && self.texts.len() > 1 { self.kind } else { tail })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    User,
    Bot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueSession {
    pub session_id: String,
    pub state: SessionState,
    pub last_match: Option<Match>,
    pub turn_count: usize,
    pub transcript: Vec<(Speaker, String)>,
}

impl DialogueSession {
    pub fn new(session_id: impl Into<String>) -> Self {
        DialogueSession {
            session_id: session_id.into(),
            state: SessionState::Greeting,
            last_match: None,
            turn_count: 0,
            transcript: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), DialogueError> {
        if self.state == SessionState::AwaitingSatisfaction && self.last_match.is_none() {
            return Err(DialogueError::SessionCorrupt(
                "awaiting satisfaction without a previous answer".into(),
            ));
        }
        if self.transcript.len() != 2 * self.turn_count {
            return Err(DialogueError::SessionCorrupt(format!(
                "{} transcript entries for {} turns",
                self.transcript.len(),
                self.turn_count
            )));
        }
        let alternates = self.transcript.chunks(2).all(|pair| {
            matches!(pair, [(Speaker::User, _), (Speaker::Bot, _)])
        });
        if !alternates {
            return Err(DialogueError::SessionCorrupt("transcript does not alternate user/bot".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Satisfaction {
    Affirmative,
    Negative,
    Other,
}

/// What a user message amounts to before retrieval runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputClass {
    Blank,
    Greeting,
    Affirmative,
    Negative,
    Query,
}

const DEFAULT_GREETINGS: &[&str] = &[
    "hi", "hello", "hey", "namaste", "namaskar", "hi there", "hello there",
    "good morning", "good afternoon", "good evening",
];
const DEFAULT_AFFIRMATIVE: &[&str] = &[
    "yes", "y", "ok", "okay", "thanks", "thank you", "thanks a lot", "satisfied", "yes thanks",
    "yes thank you", "helpful", "good",
];
const DEFAULT_NEGATIVE: &[&str] = &[
    "no", "n", "nope", "wrong", "not", "not satisfied", "wrong answer", "not helpful", "incorrect",
];

/// Lowercase, drop everything but letters, digits and spaces, collapse runs
/// of whitespace. Lexicon entries and user text both go through this.
pub fn normalize_phrase(text: &str) -> String {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect();
    cleaned.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn lexicon<S: AsRef<str>>(words: impl IntoIterator<Item = S>) -> BTreeSet<String> {
    words
        .into_iter()
        .map(|w| normalize_phrase(w.as_ref()))
        .filter(|w| !w.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DialoguePolicy {
    confidence_threshold: f64,
    call_center_number: String,
    greeting_message: String,
    query_prompt: String,
    satisfaction_prompt: String,
    fallback_message: String,
    apology_message: String,
    call_center_message: String,
    farewell_message: String,
    greetings: BTreeSet<String>,
    affirmatives: BTreeSet<String>,
    negatives: BTreeSet<String>,
}

/// On-disk policy. Only `call_center_number` is required.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyFile {
    pub call_center_number: String,
    pub confidence_threshold: Option<f64>,
    pub greeting_message: Option<String>,
    pub query_prompt: Option<String>,
    pub satisfaction_prompt: Option<String>,
    pub fallback_message: Option<String>,
    pub apology_message: Option<String>,
    pub call_center_message: Option<String>,
    pub farewell_message: Option<String>,
    pub greeting_lexicon: Option<Vec<String>>,
    pub affirmative_lexicon: Option<Vec<String>>,
    pub negative_lexicon: Option<Vec<String>>,
}

impl DialoguePolicy {
    /// Default messages and lexicons with the given helpline number.
    pub fn new(call_center_number: impl Into<String>) -> Result<Self, PolicyError> {
        Self::from_file(PolicyFile {
            call_center_number: call_center_number.into(),
            ..Default::default()
        })
    }

    pub fn from_file(file: PolicyFile) -> Result<Self, PolicyError> {
        let number = file.call_center_number.trim().to_string();
        if number.is_empty() {
            return Err(PolicyError::Invalid("call_center_number must be set".into()));
        }
        let policy = DialoguePolicy {
            confidence_threshold: file.confidence_threshold.unwrap_or(DEFAULT_CONFIDENCE_THRESHOLD),
            call_center_number: number,
            greeting_message: file.greeting_message.unwrap_or_else(|| {
                "Namaste! I am the Kisan helper bot. I answer farming questions using answers \
                 given by the Kisan Call Center. Please type your question."
                    .into()
            }),
            query_prompt: file
                .query_prompt
                .unwrap_or_else(|| "Please type your farming question.".into()),
            satisfaction_prompt: file
                .satisfaction_prompt
                .unwrap_or_else(|| "Did this answer your question? (yes/no)".into()),
            fallback_message: file.fallback_message.unwrap_or_else(|| {
                "Sorry, I could not find a confident answer to your question.".into()
            }),
            apology_message: file
                .apology_message
                .unwrap_or_else(|| "Sorry that the answer did not help.".into()),
            call_center_message: file.call_center_message.unwrap_or_else(|| {
                "Please call the Kisan Call Center at {call_center_number} during working hours."
                    .into()
            }),
            farewell_message: file.farewell_message.unwrap_or_else(|| {
                "Glad I could help! You are welcome to ask any further query.".into()
            }),
            greetings: lexicon(file.greeting_lexicon.unwrap_or_else(|| to_owned(DEFAULT_GREETINGS))),
            affirmatives: lexicon(
                file.affirmative_lexicon.unwrap_or_else(|| to_owned(DEFAULT_AFFIRMATIVE)),
            ),
            negatives: lexicon(file.negative_lexicon.unwrap_or_else(|| to_owned(DEFAULT_NEGATIVE))),
        };
        policy.validate()?;
        Ok(policy)
    }

    pub fn from_toml_str(text: &str) -> Result<Self, PolicyError> {
        Self::from_file(toml::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PolicyError> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    fn validate(&self) -> Result<(), PolicyError> {
        let t = self.confidence_threshold;
        if !(0.0..=1.0).contains(&t) {
            return Err(PolicyError::Invalid(format!("confidence_threshold {t} outside [0, 1]")));
        }
        if !self.call_center_message.contains(CALL_CENTER_PLACEHOLDER) {
            return Err(PolicyError::Invalid(format!(
                "call_center_message must contain {CALL_CENTER_PLACEHOLDER}"
            )));
        }
        if let Some(word) = self.affirmatives.intersection(&self.negatives).next() {
            return Err(PolicyError::Invalid(format!("{word:?} is both affirmative and negative")));
        }
        Ok(())
    }

    pub fn with_threshold(mut self, threshold: f64) -> Result<Self, PolicyError> {
        self.confidence_threshold = threshold;
        self.validate()?;
        Ok(self)
    }

    pub fn confidence_threshold(&self) -> f64 {
        self.confidence_threshold
    }

    pub fn call_center_number(&self) -> &str {
        &self.call_center_number
    }

    fn render(&self, template: &str) -> String {
        template.replace(CALL_CENTER_PLACEHOLDER, &self.call_center_number)
    }

    /// The referral line with the helpline number filled in.
    pub fn call_center_text(&self) -> String {
        self.render(&self.call_center_message)
    }

    pub fn detect_greeting(&self, text: &str) -> bool {
        self.greetings.contains(&normalize_phrase(text))
    }

    pub fn parse_satisfaction(&self, text: &str) -> Satisfaction {
        let phrase = normalize_phrase(text);
        if self.affirmatives.contains(&phrase) {
            Satisfaction::Affirmative
        } else if self.negatives.contains(&phrase) {
            Satisfaction::Negative
        } else {
            Satisfaction::Other
        }
    }

    pub fn classify_input(&self, text: &str) -> InputClass {
        if normalize_phrase(text).is_empty() {
            return InputClass::Blank;
        }
        if self.detect_greeting(text) {
            return InputClass::Greeting;
        }
        match self.parse_satisfaction(text) {
            Satisfaction::Affirmative => InputClass::Affirmative,
            Satisfaction::Negative => InputClass::Negative,
            Satisfaction::Other => InputClass::Query,
        }
    }

    fn reply(&self, kind: ReplyKind, templates: &[&str], confidence: Option<f64>) -> BotReply {
        BotReply {
            texts: templates.iter().map(|t| self.render(t)).collect(),
            kind,
            confidence,
        }
    }
}

fn to_owned(words: &[&str]) -> Vec<String> {
    words.iter().map(|w| w.to_string()).collect()
}

pub fn detect_greeting(text: &str, policy: &DialoguePolicy) -> bool {
    policy.detect_greeting(text)
}

pub fn parse_satisfaction(text: &str, policy: &DialoguePolicy) -> Satisfaction {
    policy.parse_satisfaction(text)
}

/// Runs one conversation turn.
pub fn step(
    mut session: DialogueSession,
    user_text: &str,
    index: &TfIdfIndex,
    policy: &DialoguePolicy,
) -> Result<(DialogueSession, BotReply), DialogueError> {
    session.validate()?;
    let state = session.state;

    let (next_state, reply) = match policy.classify_input(user_text) {
        InputClass::Blank => {
            let prompt = if state == SessionState::AwaitingSatisfaction {
                &policy.satisfaction_prompt
            } else {
                &policy.query_prompt
            };
            (state, policy.reply(ReplyKind::Reprompt, &[prompt], None))
        }
        InputClass::Greeting => (
            SessionState::AwaitingQuery,
            policy.reply(ReplyKind::Greeting, &[&policy.greeting_message], None),
        ),
        InputClass::Affirmative => (
            SessionState::AwaitingQuery,
            policy.reply(ReplyKind::Farewell, &[&policy.farewell_message], None),
        ),
        InputClass::Negative if state == SessionState::AwaitingSatisfaction => (
            SessionState::AwaitingQuery,
            policy.reply(
                ReplyKind::CallCenterReferral,
                &[&policy.apology_message, &policy.call_center_message],
                None,
            ),
        ),
        InputClass::Negative => (
            SessionState::AwaitingQuery,
            policy.reply(ReplyKind::Reprompt, &[&policy.query_prompt], None),
        ),
        InputClass::Query => {
            let tokens = index.tokenize(user_text);
            match index.retrieve_top_k(&tokens, 1).into_iter().next() {
                Some(top) if top.score >= policy.confidence_threshold => {
                    let reply = BotReply {
                        texts: vec![top.answer.clone(), policy.render(&policy.satisfaction_prompt)],
                        kind: ReplyKind::Answer,
                        confidence: Some(top.score),
                    };
                    session.last_match = Some(top);
                    (SessionState::AwaitingSatisfaction, reply)
                }
                top => (
                    SessionState::AwaitingQuery,
                    policy.reply(
                        ReplyKind::Fallback,
                        &[&policy.fallback_message, &policy.call_center_message],
                        Some(top.map_or(0.0, |m| m.score)),
                    ),
                ),
            }
        }
    };

    if next_state != SessionState::AwaitingSatisfaction {
        session.last_match = None;
    }
    session.state = next_state;
    session.turn_count += 1;
    session.transcript.push((Speaker::User, user_text.to_string()));
    session.transcript.push((Speaker::Bot, reply.texts.join("\n")));
    Ok((session, reply))
}
