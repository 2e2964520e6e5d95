//! Edit-instruction language.
//!
//! ```text
//! command  := add_bg | add_rvb | rm_noise | rm_rvb
//! add_bg   := "add background sound as" label "with snr as" number "db"
//! add_rvb  := "add reverberation with" ("small" | "medium" | "large") "room" ["size"]
//! rm_noise := "remove noise"
//! rm_rvb   := "remove reverberation"
//! label    := word{1,4}
//! ```
//!
//! Matching is case-insensitive and whitespace-separated; a number glued to
//! its unit (`10dB`, `10.5dB`) is split into two tokens.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SNR_RANGE_DB: (f64, f64) = (0.0, 15.0);
pub const MAX_LABEL_WORDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoomSize {
    Small,
    Medium,
    Large,
}

impl RoomSize {
    pub const ALL: [RoomSize; 3] = [RoomSize::Small, RoomSize::Medium, RoomSize::Large];

    pub fn as_str(self) -> &'static str {
        match self {
            RoomSize::Small => "small",
            RoomSize::Medium => "medium",
            RoomSize::Large => "large",
        }
    }

    fn from_token(t: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    AddBackground,
    AddReverb,
    RemoveNoise,
    RemoveReverb,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::AddBackground, Action::AddReverb, Action::RemoveNoise, Action::RemoveReverb];

    /// Enhancement actions map a corrupted source to clean speech.
    pub fn is_enhancement(self) -> bool {
        matches!(self, Action::RemoveNoise | Action::RemoveReverb)
    }
}

/// A parsed edit instruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CommandRecord", into = "CommandRecord")]
pub enum EditCommand {
    AddBackground { label: String, snr_db: f64 },
    AddReverb { room: RoomSize },
    RemoveNoise,
    RemoveReverb,
}

impl EditCommand {
    pub fn action(&self) -> Action {
        match self {
            EditCommand::AddBackground { .. } => Action::AddBackground,
            EditCommand::AddReverb { .. } => Action::AddReverb,
            EditCommand::RemoveNoise => Action::RemoveNoise,
            EditCommand::RemoveReverb => Action::RemoveReverb,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let EditCommand::AddBackground { label, snr_db } = self {
            validate_label(label)?;
            if !(snr_db.is_finite() && *snr_db >= SNR_RANGE_DB.0 && *snr_db <= SNR_RANGE_DB.1) {
                return Err(Error::InvalidCommand(format!("SNR {snr_db} dB outside [0, 15]")));
            }
        }
        Ok(())
    }
}

fn validate_label(label: &str) -> Result<()> {
    let words: Vec<&str> = label.split(' ').collect();
    if words.is_empty() || words.len() > MAX_LABEL_WORDS {
        return Err(Error::InvalidCommand(format!("label {label:?} must have 1 to 4 words")));
    }
    for w in &words {
        let ok = !w.is_empty()
            && *w != "with"
            && w.chars().all(|c| !c.is_whitespace() && !c.is_uppercase())
            && split_number_unit(w).is_none();
        if !ok {
            return Err(Error::InvalidCommand(format!("label word {w:?} is not a plain lowercase word")));
        }
    }
    Ok(())
}

/// Flat key-value form used in dataset manifests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandRecord {
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sound_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub room_size: Option<RoomSize>,
}

impl From<EditCommand> for CommandRecord {
    fn from(c: EditCommand) -> Self {
        let action = c.action();
        match c {
            EditCommand::AddBackground { label, snr_db } => {
                CommandRecord { action, sound_label: Some(label), snr_db: Some(snr_db), room_size: None }
            }
            EditCommand::AddReverb { room } => {
                CommandRecord { action, sound_label: None, snr_db: None, room_size: Some(room) }
            }
            _ => CommandRecord { action, sound_label: None, snr_db: None, room_size: None },
        }
    }
}

impl TryFrom<CommandRecord> for EditCommand {
    type Error = Error;

    fn try_from(r: CommandRecord) -> Result<Self> {
        let cmd = match (r.action, r.sound_label, r.snr_db, r.room_size) {
            (Action::AddBackground, Some(label), Some(snr_db), None) => EditCommand::AddBackground { label, snr_db },
            (Action::AddReverb, None, None, Some(room)) => EditCommand::AddReverb { room },
            (Action::RemoveNoise, None, None, None) => EditCommand::RemoveNoise,
            (Action::RemoveReverb, None, None, None) => EditCommand::RemoveReverb,
            (action, ..) => {
                return Err(Error::InvalidCommand(format!("fields do not match action {action:?}")));
            }
        };
        cmd.validate()?;
        Ok(cmd)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    NoMatch,
    OutOfRange,
}

/// A prompt outside the grammar, located at the offending token.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub struct ParseError {
    pub kind: ParseErrorKind,
    /// Character offset of the token in the prompt (prompt length at end of input).
    pub position: usize,
    /// The offending token, lowercased; empty at end of input.
    pub token: String,
    pub expected: String,
}

impl fmt::Display for ParseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tok = if self.token.is_empty() { "end of input".to_string() } else { format!("token {:?}", self.token) };
        match self.kind {
            ParseErrorKind::NoMatch => {
                write!(f, "prompt not understood at {} (position {}): expected {}", tok, self.position, self.expected)
            }
            ParseErrorKind::OutOfRange => {
                write!(f, "value out of range at {} (position {}): {}", tok, self.position, self.expected)
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    text: String,
    pos: usize,
}

fn split_number_unit(word: &str) -> Option<(&str, &str)> {
    let num = word.strip_suffix("db")?;
    is_number(num).then_some((num, "db"))
}

fn is_number(s: &str) -> bool {
    let mut parts = s.splitn(2, '.');
    let int = parts.next().unwrap_or("");
    let frac = parts.next();
    !int.is_empty()
        && int.chars().all(|c| c.is_ascii_digit())
        && frac.is_none_or(|f| !f.is_empty() && f.chars().all(|c| c.is_ascii_digit()))
}

fn lex(prompt: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let chars: Vec<char> = prompt.chars().collect();
    let push = |from: usize, to: usize, out: &mut Vec<Token>| {
        let word: String = chars[from..to].iter().collect::<String>().to_lowercase();
        match split_number_unit(&word) {
            Some((num, unit)) => {
                let n = num.chars().count();
                out.push(Token { text: num.to_string(), pos: from });
                out.push(Token { text: unit.to_string(), pos: from + n });
            }
            None => out.push(Token { text: word, pos: from }),
        }
    };
    for (i, c) in chars.iter().enumerate() {
        match (c.is_whitespace(), start) {
            (false, None) => start = Some(i),
            (true, Some(s)) => {
                push(s, i, &mut out);
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        push(s, chars.len(), &mut out);
    }
    out
}

struct Cursor<'a> {
    tokens: &'a [Token],
    at: usize,
    end: usize,
}

impl Cursor<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.at)
    }

    fn error(&self, kind: ParseErrorKind, expected: &str) -> ParseError {
        let (position, token) = match self.peek() {
            Some(t) => (t.pos, t.text.clone()),
            None => (self.end, String::new()),
        };
        ParseError { kind, position, token, expected: expected.to_string() }
    }

    fn expect(&mut self, word: &str) -> std::result::Result<(), ParseError> {
        match self.peek() {
            Some(t) if t.text == word => {
                self.at += 1;
                Ok(())
            }
            _ => Err(self.error(ParseErrorKind::NoMatch, &format!("{word:?}"))),
        }
    }

    fn finish(&self) -> std::result::Result<(), ParseError> {
        match self.peek() {
            None => Ok(()),
            Some(_) => Err(self.error(ParseErrorKind::NoMatch, "end of prompt")),
        }
    }
}

/// Parses a prompt into an [`EditCommand`].
pub fn parse(prompt: &str) -> std::result::Result<EditCommand, ParseError> {
    let tokens = lex(prompt);
    let mut c = Cursor { tokens: &tokens, at: 0, end: prompt.chars().count() };
    let head = c.peek().map(|t| t.text.clone());
    let cmd = match head.as_deref() {
        Some("add") => {
            c.at += 1;
            match c.peek().map(|t| t.text.as_str()) {
                Some("background") => parse_add_background(&mut c)?,
                Some("reverberation") => parse_add_reverb(&mut c)?,
                _ => return Err(c.error(ParseErrorKind::NoMatch, "\"background\" or \"reverberation\"")),
            }
        }
        Some("remove") => {
            c.at += 1;
            let cmd = match c.peek().map(|t| t.text.as_str()) {
                Some("noise") => EditCommand::RemoveNoise,
                Some("reverberation") => EditCommand::RemoveReverb,
                _ => return Err(c.error(ParseErrorKind::NoMatch, "\"noise\" or \"reverberation\"")),
            };
            c.at += 1;
            cmd
        }
        _ => return Err(c.error(ParseErrorKind::NoMatch, "\"add\" or \"remove\"")),
    };
    c.finish()?;
    Ok(cmd)
}

fn parse_add_background(c: &mut Cursor<'_>) -> std::result::Result<EditCommand, ParseError> {
    for w in ["background", "sound", "as"] {
        c.expect(w)?;
    }
    let mut words = Vec::new();
    while let Some(t) = c.peek() {
        if t.text == "with" {
            break;
        }
        if words.len() == MAX_LABEL_WORDS {
            return Err(c.error(ParseErrorKind::NoMatch, "\"with\" after at most 4 label words"));
        }
        words.push(t.text.clone());
        c.at += 1;
    }
    if words.is_empty() {
        return Err(c.error(ParseErrorKind::NoMatch, "a sound label"));
    }
    for w in ["with", "snr", "as"] {
        c.expect(w)?;
    }
    let snr_db = match c.peek() {
        Some(t) if is_number(&t.text) => t.text.parse::<f64>().expect("validated number"),
        _ => return Err(c.error(ParseErrorKind::NoMatch, "an SNR value in dB")),
    };
    if !(SNR_RANGE_DB.0..=SNR_RANGE_DB.1).contains(&snr_db) {
        return Err(c.error(ParseErrorKind::OutOfRange, "SNR must lie in [0, 15] dB"));
    }
    c.at += 1;
    c.expect("db")?;
    Ok(EditCommand::AddBackground { label: words.join(" "), snr_db })
}

fn parse_add_reverb(c: &mut Cursor<'_>) -> std::result::Result<EditCommand, ParseError> {
    c.expect("reverberation")?;
    c.expect("with")?;
    let room = match c.peek().and_then(|t| RoomSize::from_token(&t.text)) {
        Some(r) => r,
        None => return Err(c.error(ParseErrorKind::NoMatch, "\"small\", \"medium\" or \"large\"")),
    };
    c.at += 1;
    c.expect("room")?;
    if c.peek().is_some_and(|t| t.text == "size") {
        c.at += 1;
    }
    Ok(EditCommand::AddReverb { room })
}

/// Canonical surface form of a command.
pub fn format(cmd: &EditCommand) -> Result<String> {
    cmd.validate()?;
    Ok(match cmd {
        EditCommand::AddBackground { label, snr_db } => {
            format!("Add background sound as {label} with SNR as {snr_db}dB")
        }
        EditCommand::AddReverb { room } => format!("Add reverberation with {} room size", room.as_str()),
        EditCommand::RemoveNoise => "Remove noise".to_string(),
        EditCommand::RemoveReverb => "Remove reverberation".to_string(),
    })
}

impl fmt::Display for EditCommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match format(self) {
            Ok(s) => f.write_str(&s),
            Err(_) => write!(f, "{self:?}"),
        }
    }
}

/// Draws a command: uniform action, label from `labels`, SNR uniform on
/// [0, 15] dB, uniform room size.
pub fn sample_command<R: Rng + ?Sized>(rng: &mut R, labels: &[String]) -> Result<EditCommand> {
    sample_command_weighted(rng, labels, &[1.0; 4])
}

/// As [`sample_command`] with per-action weights in [`Action::ALL`] order.
pub fn sample_command_weighted<R: Rng + ?Sized>(rng: &mut R, labels: &[String], weights: &[f64; 4]) -> Result<EditCommand> {
    if labels.is_empty() {
        return Err(Error::EmptyVocabulary);
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) || weights.iter().any(|w| *w < 0.0) {
        return Err(Error::Config("action weights must be non-negative with a positive sum".into()));
    }
    let mut u = rng.random::<f64>() * total;
    let mut action = Action::ALL[3];
    for (a, w) in Action::ALL.iter().zip(weights) {
        if u < *w {
            action = *a;
            break;
        }
        u -= w;
    }
    Ok(match action {
        Action::AddBackground => {
            let label = labels[rng.random_range(0..labels.len())].clone();
            let snr_db = rng.random_range(SNR_RANGE_DB.0..=SNR_RANGE_DB.1);
            let cmd = EditCommand::AddBackground { label, snr_db };
            cmd.validate()?;
            cmd
        }
        Action::AddReverb => EditCommand::AddReverb { room: RoomSize::ALL[rng.random_range(0..3)] },
        Action::RemoveNoise => EditCommand::RemoveNoise,
        Action::RemoveReverb => EditCommand::RemoveReverb,
    })
}
