//! Language-model oracles: prompt construction, distribution checks, the
//! handle kinds (in-process table, replay file, HTTP endpoint) and the
//! per-episode cache.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::softmax;

/// Tolerance on the sum of a returned probability vector.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle `{oracle_id}`: empty output domain")]
    EmptyDomain { oracle_id: String },
    #[error("oracle `{oracle_id}`: domain entry `{entry}` occurs twice")]
    DuplicateDomainEntry { oracle_id: String, entry: String },
    #[error("oracle `{oracle_id}`: expected {expected} values, got {found}")]
    LengthMismatch { oracle_id: String, expected: usize, found: usize },
    #[error("oracle `{oracle_id}`: protocol error: {msg}")]
    Protocol { oracle_id: String, msg: String },
    #[error("oracle `{oracle_id}`: transport error after {attempts} attempt(s): {msg}")]
    Transport { oracle_id: String, attempts: usize, msg: String },
    #[error("oracle `{oracle_id}`: no handle bound")]
    Unbound { oracle_id: String },
    #[error("oracle `{oracle_id}`: no recorded answer for prompt {prompt:?}")]
    Missing { oracle_id: String, prompt: String },
    #[error("{path}:{line}: {msg}")]
    File { path: String, line: usize, msg: String },
}

/// One question put to a language model.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct OracleRequest {
    oracle_id: String,
    nl: String,
    state: Option<String>,
    domain: Vec<String>,
    prompt: String,
    text: String,
}

impl OracleRequest {
    /// Checks that the domain is nonempty and duplicate-free.
    pub fn new(
        oracle_id: &str,
        nl: &str,
        state: Option<&str>,
        domain: Vec<String>,
        prompt: &str,
    ) -> Result<Self, OracleError> {
        if domain.is_empty() {
            return Err(OracleError::EmptyDomain { oracle_id: oracle_id.to_string() });
        }
        let mut seen = HashSet::new();
        for d in &domain {
            if !seen.insert(d) {
                return Err(OracleError::DuplicateDomainEntry {
                    oracle_id: oracle_id.to_string(),
                    entry: d.clone(),
                });
            }
        }
        let state = state.filter(|s| !s.is_empty()).map(str::to_string);
        let text = prompt_text(nl, state.as_deref(), &domain, prompt);
        Ok(OracleRequest {
            oracle_id: oracle_id.to_string(),
            nl: nl.to_string(),
            state,
            domain,
            prompt: prompt.to_string(),
            text,
        })
    }

    pub fn oracle_id(&self) -> &str {
        &self.oracle_id
    }

    pub fn nl(&self) -> &str {
        &self.nl
    }

    pub fn state(&self) -> Option<&str> {
        self.state.as_deref()
    }

    pub fn domain(&self) -> &[String] {
        &self.domain
    }

    pub fn prompt(&self) -> &str {
        &self.prompt
    }

    /// The full model input, see [`build_prompt`].
    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn key(&self) -> OracleKey {
        OracleKey { oracle_id: self.oracle_id.clone(), prompt: self.text.clone() }
    }
}

/// Cache and gradient-export key: the oracle plus the exact prompt bytes.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct OracleKey {
    pub oracle_id: String,
    pub prompt: String,
}

impl fmt::Display for OracleKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.oracle_id, self.prompt)
    }
}

fn prompt_text(nl: &str, state: Option<&str>, domain: &[String], prompt: &str) -> String {
    let mut out = String::with_capacity(nl.len() + prompt.len() + 16 * domain.len());
    out.push_str(nl);
    out.push(' ');
    if let Some(state) = state {
        out.push_str(state);
        out.push_str(", ");
    }
    for (i, y) in domain.iter().enumerate() {
        out.push_str(&format!("Answer {} for {y}, ", i + 1));
    }
    out.push_str(prompt);
    out
}

/// `"{nl} [{state}, ]Answer 1 for y1, ..., Answer n for yn, {prompt}"`.
pub fn build_prompt(req: &OracleRequest) -> String {
    req.text.clone()
}

/// A probability vector aligned with a request's domain.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleDistribution {
    probs: Vec<f64>,
}

impl OracleDistribution {
    /// Validates an already-normalised vector.
    pub fn from_probs(oracle_id: &str, probs: Vec<f64>, n: usize) -> Result<Self, OracleError> {
        if probs.len() != n {
            return Err(OracleError::LengthMismatch {
                oracle_id: oracle_id.to_string(),
                expected: n,
                found: probs.len(),
            });
        }
        if let Some(bad) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(OracleError::Protocol {
                oracle_id: oracle_id.to_string(),
                msg: format!("probability {bad} outside [0, 1]"),
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(OracleError::Protocol {
                oracle_id: oracle_id.to_string(),
                msg: format!("probabilities sum to {sum}"),
            });
        }
        Ok(OracleDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Softmax over raw scores for a domain of size `n`.
pub fn normalize_distribution(raw: &[f64], n: usize) -> Result<OracleDistribution, OracleError> {
    normalize_for("", raw, n)
}

fn normalize_for(oracle_id: &str, raw: &[f64], n: usize) -> Result<OracleDistribution, OracleError> {
    if n == 0 {
        return Err(OracleError::EmptyDomain { oracle_id: oracle_id.to_string() });
    }
    if raw.len() != n {
        return Err(OracleError::LengthMismatch {
            oracle_id: oracle_id.to_string(),
            expected: n,
            found: raw.len(),
        });
    }
    if raw.iter().any(|x| x.is_nan() || *x == f64::INFINITY) {
        return Err(OracleError::Protocol {
            oracle_id: oracle_id.to_string(),
            msg: "scores must be finite or -inf".into(),
        });
    }
    Ok(OracleDistribution { probs: softmax(raw) })
}

/// What a handle returns before normalisation.
#[derive(Clone, Debug, PartialEq)]
pub enum RawAnswer {
    Scores(Vec<f64>),
    Probs(Vec<f64>),
}

/// One supervised label for the `/train` endpoint; `target_index` is 1-based
/// like the `Answer i` indices in the prompt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainItem {
    pub prompt: String,
    pub target_index: usize,
}

pub trait OracleHandle: Send + Sync {
    fn predict(&self, req: &OracleRequest) -> Result<RawAnswer, OracleError>;

    /// Supervised update. Handles without a model ignore it.
    fn train(&self, _oracle_id: &str, _items: &[TrainItem]) -> Result<Option<f64>, OracleError> {
        Ok(None)
    }
}

/// Queries a handle and enforces the distribution invariants.
pub fn query_oracle(
    handle: &dyn OracleHandle,
    req: &OracleRequest,
) -> Result<OracleDistribution, OracleError> {
    let n = req.domain.len();
    match handle.predict(req)? {
        RawAnswer::Scores(s) => normalize_for(&req.oracle_id, &s, n),
        RawAnswer::Probs(p) => OracleDistribution::from_probs(&req.oracle_id, p, n),
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Record {
    oracle_id: String,
    prompt: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    probs: Option<Vec<f64>>,
}

impl Record {
    fn answer(self) -> Option<(OracleKey, RawAnswer)> {
        let key = OracleKey { oracle_id: self.oracle_id, prompt: self.prompt };
        match (self.scores, self.probs) {
            (Some(s), None) => Some((key, RawAnswer::Scores(s))),
            (None, Some(p)) => Some((key, RawAnswer::Probs(p))),
            _ => None,
        }
    }
}

fn read_records(path: &Path) -> Result<HashMap<OracleKey, RawAnswer>, OracleError> {
    let file_err = |line: usize, msg: String| OracleError::File {
        path: path.display().to_string(),
        line,
        msg,
    };
    let file = File::open(path).map_err(|e| file_err(0, e.to_string()))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| file_err(i + 1, e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| file_err(i + 1, e.to_string()))?;
        let (key, answer) = rec
            .answer()
            .ok_or_else(|| file_err(i + 1, "record needs exactly one of `scores` or `probs`".into()))?;
        out.insert(key, answer);
    }
    Ok(out)
}

/// In-process lookup table keyed by oracle id and prompt.
#[derive(Default)]
pub struct TableHandle {
    entries: HashMap<OracleKey, RawAnswer>,
}

impl TableHandle {
    pub fn new() -> Self {
        Self::default()
    }

    /// Loads line-delimited `{oracle_id, prompt, probs|scores}` records.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        Ok(TableHandle { entries: read_records(path.as_ref())? })
    }

    pub fn insert(&mut self, oracle_id: &str, prompt: &str, answer: RawAnswer) {
        self.entries.insert(
            OracleKey { oracle_id: oracle_id.to_string(), prompt: prompt.to_string() },
            answer,
        );
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl OracleHandle for TableHandle {
    fn predict(&self, req: &OracleRequest) -> Result<RawAnswer, OracleError> {
        self.entries.get(&req.key()).cloned().ok_or_else(|| OracleError::Missing {
            oracle_id: req.oracle_id.clone(),
            prompt: req.text.clone(),
        })
    }
}

/// Deterministic playback of a recorded session; never touches the network.
pub struct ReplayHandle {
    table: TableHandle,
}

impl ReplayHandle {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, OracleError> {
        Ok(ReplayHandle { table: TableHandle::from_file(path)? })
    }
}

impl OracleHandle for ReplayHandle {
    fn predict(&self, req: &OracleRequest) -> Result<RawAnswer, OracleError> {
        self.table.predict(req)
    }
}

/// Any function of the request. Handy for fixtures and synthetic teachers.
pub struct FnHandle<F>(pub F);

impl<F> OracleHandle for FnHandle<F>
where
    F: Fn(&OracleRequest) -> Result<RawAnswer, OracleError> + Send + Sync,
{
    fn predict(&self, req: &OracleRequest) -> Result<RawAnswer, OracleError> {
        (self.0)(req)
    }
}

/// Wraps a handle and keeps every answer so it can be written as a replay file.
pub struct RecordingHandle {
    inner: Arc<dyn OracleHandle>,
    log: Mutex<Vec<(OracleKey, RawAnswer)>>,
}

impl RecordingHandle {
    pub fn new(inner: Arc<dyn OracleHandle>) -> Self {
        RecordingHandle { inner, log: Mutex::new(Vec::new()) }
    }

    pub fn write_replay(&self, mut out: impl Write) -> std::io::Result<()> {
        for (key, answer) in self.log.lock().unwrap().iter() {
            let (scores, probs) = match answer {
                RawAnswer::Scores(s) => (Some(s.clone()), None),
                RawAnswer::Probs(p) => (None, Some(p.clone())),
            };
            let rec = Record {
                oracle_id: key.oracle_id.clone(),
                prompt: key.prompt.clone(),
                scores,
                probs,
            };
            writeln!(out, "{}", serde_json::to_string(&rec)?)?;
        }
        Ok(())
    }
}

impl OracleHandle for RecordingHandle {
    fn predict(&self, req: &OracleRequest) -> Result<RawAnswer, OracleError> {
        let answer = self.inner.predict(req)?;
        self.log.lock().unwrap().push((req.key(), answer.clone()));
        Ok(answer)
    }

    fn train(&self, oracle_id: &str, items: &[TrainItem]) -> Result<Option<f64>, OracleError> {
        self.inner.train(oracle_id, items)
    }
}

#[derive(Serialize)]
struct PredictRequest<'a> {
    oracle_id: &'a str,
    prompt: &'a str,
    n: usize,
}

#[derive(Deserialize)]
struct PredictResponse {
    scores: Option<Vec<f64>>,
    probs: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct TrainRequest<'a> {
    oracle_id: &'a str,
    items: &'a [TrainItem],
}

#[derive(Deserialize)]
struct TrainResponse {
    loss: f64,
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
pub struct Health {
    pub status: String,
    #[serde(default)]
    pub n_max: Option<usize>,
}

/// Client for an oracle service speaking `/predict`, `/train` and `/health`.
pub struct RemoteHandle {
    base: String,
    agent: ureq::Agent,
    retries: usize,
}

impl RemoteHandle {
    pub fn new(base_url: &str) -> Self {
        Self::with_config(base_url, Duration::from_secs(30), 2)
    }

    /// `retries` extra attempts are made after a failed request.
    pub fn with_config(base_url: &str, timeout: Duration, retries: usize) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        RemoteHandle { base: base_url.trim_end_matches('/').to_string(), agent, retries }
    }

    fn with_retries<T>(
        &self,
        oracle_id: &str,
        mut call: impl FnMut() -> Result<T, ureq::Error>,
    ) -> Result<T, OracleError> {
        let mut last = String::new();
        for _ in 0..=self.retries {
            match call() {
                Ok(v) => return Ok(v),
                Err(ureq::Error::StatusCode(code)) if (400..500).contains(&code) => {
                    return Err(OracleError::Protocol {
                        oracle_id: oracle_id.to_string(),
                        msg: format!("HTTP status {code}"),
                    })
                }
                Err(e) => last = e.to_string(),
            }
        }
        Err(OracleError::Transport {
            oracle_id: oracle_id.to_string(),
            attempts: self.retries + 1,
            msg: last,
        })
    }

    pub fn health(&self) -> Result<Health, OracleError> {
        let url = format!("{}/health", self.base);
        self.with_retries("", || self.agent.get(&url).call()?.body_mut().read_json::<Health>())
    }
}

impl OracleHandle for RemoteHandle {
    fn predict(&self, req: &OracleRequest) -> Result<RawAnswer, OracleError> {
        let url = format!("{}/predict", self.base);
        let body = PredictRequest { oracle_id: &req.oracle_id, prompt: &req.text, n: req.domain.len() };
        let resp: PredictResponse = self.with_retries(&req.oracle_id, || {
            self.agent.post(&url).send_json(&body)?.body_mut().read_json::<PredictResponse>()
        })?;
        match (resp.scores, resp.probs) {
            (Some(s), _) => Ok(RawAnswer::Scores(s)),
            (None, Some(p)) => Ok(RawAnswer::Probs(p)),
            (None, None) => Err(OracleError::Protocol {
                oracle_id: req.oracle_id.clone(),
                msg: "response has neither `scores` nor `probs`".into(),
            }),
        }
    }

    fn train(&self, oracle_id: &str, items: &[TrainItem]) -> Result<Option<f64>, OracleError> {
        let url = format!("{}/train", self.base);
        let body = TrainRequest { oracle_id, items };
        let resp: TrainResponse = self.with_retries(oracle_id, || {
            self.agent.post(&url).send_json(&body)?.body_mut().read_json::<TrainResponse>()
        })?;
        Ok(Some(resp.loss))
    }
}

#[derive(Clone)]
pub enum Binding {
    External(Arc<dyn OracleHandle>),
    /// The oracle's distribution is a learnable group per prompt, trained
    /// in-process alongside the grammar's own groups.
    Learned,
}

/// Maps oracle ids to handles.
#[derive(Clone, Default)]
pub struct OracleRegistry {
    default: Option<Arc<dyn OracleHandle>>,
    bindings: HashMap<String, Binding>,
}

impl OracleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every oracle without an explicit binding uses `handle`.
    pub fn with_default(handle: Arc<dyn OracleHandle>) -> Self {
        OracleRegistry { default: Some(handle), bindings: HashMap::new() }
    }

    pub fn bind(&mut self, oracle_id: &str, handle: Arc<dyn OracleHandle>) {
        self.bindings.insert(oracle_id.to_string(), Binding::External(handle));
    }

    pub fn bind_learned(&mut self, oracle_id: &str) {
        self.bindings.insert(oracle_id.to_string(), Binding::Learned);
    }

    pub fn is_learned(&self, oracle_id: &str) -> bool {
        matches!(self.bindings.get(oracle_id), Some(Binding::Learned))
    }

    pub fn handle(&self, oracle_id: &str) -> Option<&Arc<dyn OracleHandle>> {
        match self.bindings.get(oracle_id) {
            Some(Binding::External(h)) => Some(h),
            Some(Binding::Learned) => None,
            None => self.default.as_ref(),
        }
    }

    /// Sends supervised labels to the bound external handles.
    pub fn train(&self, labels: &HashMap<String, Vec<TrainItem>>) -> Result<HashMap<String, f64>, OracleError> {
        let mut losses = HashMap::new();
        for (id, items) in labels {
            if let Some(h) = self.handle(id) {
                if let Some(loss) = h.train(id, items)? {
                    losses.insert(id.clone(), loss);
                }
            }
        }
        Ok(losses)
    }
}

/// Name of the learnable group standing in for a learned oracle's answer
/// to one prompt.
pub fn learned_group(key: &OracleKey) -> String {
    key.to_string()
}

/// One inference episode. Identical requests are answered once.
pub struct OracleSession<'a> {
    registry: &'a OracleRegistry,
    cache: Mutex<HashMap<OracleKey, Arc<OracleDistribution>>>,
    caching: bool,
    calls: Mutex<usize>,
}

impl<'a> OracleSession<'a> {
    pub fn new(registry: &'a OracleRegistry) -> Self {
        OracleSession { registry, cache: Mutex::new(HashMap::new()), caching: true, calls: Mutex::new(0) }
    }

    pub fn without_cache(registry: &'a OracleRegistry) -> Self {
        OracleSession { caching: false, ..Self::new(registry) }
    }

    pub fn registry(&self) -> &OracleRegistry {
        self.registry
    }

    /// Number of requests that reached a handle.
    pub fn handle_calls(&self) -> usize {
        *self.calls.lock().unwrap()
    }

    pub fn query(&self, req: &OracleRequest) -> Result<Arc<OracleDistribution>, OracleError> {
        let key = req.key();
        if self.caching {
            if let Some(d) = self.cache.lock().unwrap().get(&key) {
                return Ok(d.clone());
            }
        }
        let handle = self
            .registry
            .handle(&req.oracle_id)
            .ok_or_else(|| OracleError::Unbound { oracle_id: req.oracle_id.clone() })?;
        *self.calls.lock().unwrap() += 1;
        let dist = Arc::new(query_oracle(handle.as_ref(), req)?);
        if self.caching {
            self.cache.lock().unwrap().insert(key, dist.clone());
        }
        Ok(dist)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tables() -> Vec<String> {
        ["Dogs", "Professionals", "Treatments"].map(String::from).to_vec()
    }

    #[test]
    fn table_prompt() {
        let req = OracleRequest::new(
            "table_lm",
            "Find the arriving date and the departing date of the dogs.",
            None,
            tables(),
            "the answer should be Answer ",
        )
        .unwrap();
        assert_eq!(
            build_prompt(&req),
            "Find the arriving date and the departing date of the dogs. Answer 1 for Dogs, \
             Answer 2 for Professionals, Answer 3 for Treatments, the answer should be Answer "
        );
    }

    #[test]
    fn prompt_with_state() {
        let req = OracleRequest::new(
            "column_lm",
            "What is the average hours across all projects?",
            Some("SELECT [column]"),
            ["code", "name", "hours"].map(String::from).to_vec(),
            "the answer should be Answer ",
        )
        .unwrap();
        assert_eq!(
            req.text(),
            "What is the average hours across all projects? SELECT [column], Answer 1 for code, \
             Answer 2 for name, Answer 3 for hours, the answer should be Answer "
        );
    }

    #[test]
    fn single_item_domain() {
        let req = OracleRequest::new("m", "q", None, vec!["y1".into()], "the answer should be Answer ").unwrap();
        assert_eq!(req.text(), "q Answer 1 for y1, the answer should be Answer ");
    }

    #[test]
    fn bad_domains() {
        assert!(matches!(
            OracleRequest::new("m", "q", None, vec![], "p"),
            Err(OracleError::EmptyDomain { .. })
        ));
        assert!(matches!(
            OracleRequest::new("m", "q", None, vec!["a".into(), "a".into()], "p"),
            Err(OracleError::DuplicateDomainEntry { .. })
        ));
    }

    #[test]
    fn normalisation() {
        let d = normalize_distribution(&[0.0, 0.0, 0.0], 3).unwrap();
        assert!(d.probs().iter().all(|p| (p - 1.0 / 3.0).abs() < 1e-15));

        let d = normalize_distribution(&[0.2f64.ln(), 0.2f64.ln(), 0.6f64.ln()], 3).unwrap();
        for (p, want) in d.probs().iter().zip([0.2, 0.2, 0.6]) {
            assert!((p - want).abs() < 1e-15);
        }

        let d = normalize_distribution(&[5.0, 1005.0], 2).unwrap();
        assert!(d.probs()[0] < 1e-300 && (d.probs()[1] - 1.0).abs() < 1e-15);

        assert!(matches!(normalize_distribution(&[], 0), Err(OracleError::EmptyDomain { .. })));
        assert!(matches!(normalize_distribution(&[1.0], 2), Err(OracleError::LengthMismatch { .. })));
    }

    #[test]
    fn table_handle_round_trip_and_cache() {
        let req = OracleRequest::new("table_lm", "nl", None, tables(), "p").unwrap();
        let mut t = TableHandle::new();
        t.insert("table_lm", req.text(), RawAnswer::Probs(vec![0.2, 0.2, 0.6]));
        assert_eq!(query_oracle(&t, &req).unwrap().probs(), &[0.2, 0.2, 0.6]);

        let reg = OracleRegistry::with_default(Arc::new(t));
        let cached = OracleSession::new(&reg);
        let uncached = OracleSession::without_cache(&reg);
        for _ in 0..3 {
            assert_eq!(cached.query(&req).unwrap().probs(), uncached.query(&req).unwrap().probs());
        }
        assert_eq!(cached.handle_calls(), 1);
        assert_eq!(uncached.handle_calls(), 3);
    }

    #[test]
    fn unnormalised_probs_are_rejected() {
        let req = OracleRequest::new("m", "nl", None, tables(), "p").unwrap();
        let h = FnHandle(|_: &OracleRequest| Ok(RawAnswer::Probs(vec![0.3, 0.3, 0.3])));
        assert!(matches!(query_oracle(&h, &req), Err(OracleError::Protocol { .. })));
    }

    #[test]
    fn recorded_session_replays_identically() {
        let inner = FnHandle(|r: &OracleRequest| {
            Ok(RawAnswer::Scores((0..r.domain().len()).map(|i| (i as f64 * 0.37).sin()).collect()))
        });
        let rec = RecordingHandle::new(Arc::new(inner));
        let reqs: Vec<OracleRequest> = ["a", "b", "c"]
            .iter()
            .map(|nl| OracleRequest::new("table_lm", nl, Some("S"), tables(), "p").unwrap())
            .collect();
        let live: Vec<OracleDistribution> = reqs.iter().map(|r| query_oracle(&rec, r).unwrap()).collect();

        let mut file = tempfile::NamedTempFile::new().unwrap();
        rec.write_replay(&mut file).unwrap();
        let replay = ReplayHandle::from_file(file.path()).unwrap();
        for (r, d) in reqs.iter().zip(&live) {
            let again = query_oracle(&replay, r).unwrap();
            let bits = |d: &OracleDistribution| d.probs().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&again), bits(d));
        }
        let unseen = OracleRequest::new("table_lm", "zzz", None, tables(), "p").unwrap();
        assert!(matches!(replay.predict(&unseen), Err(OracleError::Missing { .. })));
    }

    #[test]
    fn registry_bindings() {
        let mut reg = OracleRegistry::new();
        assert!(reg.handle("x").is_none());
        reg.bind("x", Arc::new(TableHandle::new()));
        reg.bind_learned("y");
        assert!(reg.handle("x").is_some());
        assert!(reg.is_learned("y") && reg.handle("y").is_none());
        let session = OracleSession::new(&reg);
        let req = OracleRequest::new("z", "nl", None, tables(), "p").unwrap();
        assert!(matches!(session.query(&req), Err(OracleError::Unbound { .. })));
    }
}
