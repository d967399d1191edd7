//! Line-delimited JSON bridge to external utility evaluators.
//!
//! A request asks for the model's utility with a set of players masked:
//! `{"id": 1, "n": 256, "masked_players": [3, 17]}`. The evaluator answers
//! `{"id": 1, "utility": 0.43}`. Requests and responses are newline-
//! terminated UTF-8 JSON objects; responses may arrive out of order and are
//! matched by id. Evaluations are deduplicated through [`EvalCache`], keyed
//! by game fingerprint plus canonical coalition key, so an interrupted run
//! never pays twice for the same coalition.

mod cache;
mod transport;

pub use cache::{load_cache, persist_cache, EvalCache, JournalReport};
pub use transport::{DirectoryTransport, OracleTransport, SubprocessTransport};

use std::collections::{HashMap, HashSet, VecDeque};
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::game::{CoalitionMask, GameError, GameSpec, PlayerSet, UtilityOracle};

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("oracle endpoint config: {0}")]
    Config(String),

    #[error("failed to spawn oracle {command:?}: {source}")]
    Spawn {
        command: Vec<String>,
        #[source]
        source: std::io::Error,
    },

    #[error("transport failure: {0}")]
    Transport(String),

    #[error("no oracle reply within {timeout:?}")]
    ReceiveTimeout { timeout: Duration },

    #[error("request {id} (coalition {coalition}) timed out after {timeout:?}")]
    Timeout {
        id: u64,
        coalition: String,
        timeout: Duration,
    },

    #[error("malformed oracle reply {line:?}: {message}")]
    MalformedResponse { line: String, message: String },

    #[error("utility {value} outside declared range [{min}, {max}] for coalition {coalition}")]
    RangeViolation {
        value: f64,
        min: f64,
        max: f64,
        coalition: String,
    },

    #[error("oracle reply carries unknown id {got}, outstanding {outstanding:?}")]
    IdMismatch { got: u64, outstanding: Vec<u64> },

    #[error("invalid oracle request: {0}")]
    InvalidRequest(String),

    #[error("cache journal {path}: {source}")]
    Journal {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One utility query: evaluate the model with `masked_players` masked, i.e.
/// U(S) for S = N minus the masked set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleRequest {
    pub id: u64,
    pub n: usize,
    pub masked_players: Vec<usize>,
}

impl OracleRequest {
    pub fn new(id: u64, n: usize, masked_players: Vec<usize>) -> Result<Self, OracleError> {
        if !masked_players.windows(2).all(|w| w[0] < w[1]) {
            return Err(OracleError::InvalidRequest(format!(
                "masked players must be strictly increasing, got {masked_players:?}"
            )));
        }
        if masked_players.iter().any(|&p| p >= n) {
            return Err(OracleError::InvalidRequest(format!(
                "masked player out of range 0..{n}: {masked_players:?}"
            )));
        }
        Ok(Self { id, n, masked_players })
    }

    /// The request evaluating U(S): mask everything outside the coalition.
    pub fn for_coalition(id: u64, coalition: &CoalitionMask) -> Self {
        Self {
            id,
            n: coalition.len(),
            masked_players: coalition.complement().members().collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResponse {
    pub id: u64,
    pub utility: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<serde_json::Map<String, serde_json::Value>>,
}

/// Protocol driver over one transport: id assignment, timeout enforcement,
/// one retry on transport error, and tracking of timed-out ids so a late
/// reply is dropped instead of poisoning the next request.
pub struct OracleClient {
    transport: Box<dyn OracleTransport>,
    timeout: Duration,
    next_id: u64,
    dead: HashSet<u64>,
}

impl OracleClient {
    pub fn new(transport: Box<dyn OracleTransport>, timeout: Duration) -> Self {
        Self { transport, timeout, next_id: 1, dead: HashSet::new() }
    }

    pub fn next_request_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn submit(&mut self, request: &OracleRequest) -> Result<(), OracleError> {
        let line = serde_json::to_string(request)
            .map_err(|e| OracleError::InvalidRequest(e.to_string()))?;
        self.transport.submit(request.id, &line)
    }

    fn receive_parsed(&mut self) -> Result<OracleResponse, OracleError> {
        let line = self.transport.receive(self.timeout)?;
        serde_json::from_str(&line)
            .map_err(|e| OracleError::MalformedResponse { line, message: e.to_string() })
    }

    /// Send one request and wait for its reply. Exactly one terminal outcome:
    /// the matching response, or a typed error carrying the coalition.
    pub fn evaluate(&mut self, request: &OracleRequest) -> Result<OracleResponse, OracleError> {
        let coalition = format!("masked {:?} of n={}", request.masked_players, request.n);
        let mut retried = false;
        if let Err(e) = self.submit(request) {
            match e {
                OracleError::Transport(_) => {
                    retried = true;
                    self.submit(request)?;
                }
                other => return Err(other),
            }
        }
        loop {
            match self.receive_parsed() {
                Ok(response) => {
                    if response.id == request.id {
                        return Ok(response);
                    }
                    if self.dead.remove(&response.id) {
                        continue; // late reply to a request we already timed out
                    }
                    return Err(OracleError::IdMismatch {
                        got: response.id,
                        outstanding: vec![request.id],
                    });
                }
                Err(OracleError::ReceiveTimeout { timeout }) => {
                    self.dead.insert(request.id);
                    return Err(OracleError::Timeout { id: request.id, coalition, timeout });
                }
                Err(OracleError::Transport(message)) if !retried => {
                    retried = true;
                    self.submit(request).map_err(|_| OracleError::Transport(message))?;
                }
                Err(other) => return Err(other),
            }
        }
    }
}

/// Outcome of a batch evaluation: `values` in input order, with failed
/// entries left `None` and explained in `failures`. Values are never
/// silently filled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchOutcome {
    pub values: Vec<Option<f64>>,
    pub failures: Vec<BatchFailure>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchFailure {
    pub index: usize,
    pub coalition: String,
    pub message: String,
}

impl BatchOutcome {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }
}

fn default_u_min() -> f64 {
    0.0
}

fn default_u_max() -> f64 {
    1.0
}

fn default_timeout_secs() -> u64 {
    1800
}

fn default_poll_millis() -> u64 {
    250
}

/// Endpoint configuration for `{"family": "external", ...}` game specs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExternalSpec {
    #[serde(flatten)]
    pub endpoint: EndpointSpec,
    #[serde(default = "default_u_min")]
    pub u_min: f64,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub cache_journal: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "transport", rename_all = "kebab-case")]
pub enum EndpointSpec {
    /// Spawn `command` and speak the protocol on its standard streams.
    Subprocess { command: Vec<String> },
    /// Drop request files into one directory, poll another for responses.
    Directory {
        requests_dir: PathBuf,
        responses_dir: PathBuf,
        #[serde(default = "default_poll_millis")]
        poll_millis: u64,
    },
}

/// An out-of-process utility oracle with range validation, deduplicating
/// cache, and a true-evaluation counter.
pub struct ExternalOracle {
    players: PlayerSet,
    range: (f64, f64),
    fingerprint: String,
    client: Mutex<OracleClient>,
    cache: EvalCache,
    true_evals: AtomicU64,
}

impl ExternalOracle {
    /// Wire up an oracle from a `{"family": "external"}` game spec.
    pub fn from_game_spec(spec: &GameSpec) -> Result<Self, OracleError> {
        if !spec.is_external() {
            return Err(OracleError::Config(format!(
                "family {:?} is not an external endpoint",
                spec.family
            )));
        }
        let external: ExternalSpec = serde_json::from_value(spec.params.clone())
            .map_err(|e| OracleError::Config(e.to_string()))?;
        let players = match &spec.labels {
            Some(labels) => PlayerSet::new(labels.clone())
                .map_err(|e| OracleError::Config(e.to_string()))?,
            None => PlayerSet::numbered(spec.n).map_err(|e| OracleError::Config(e.to_string()))?,
        };
        let transport: Box<dyn OracleTransport> = match &external.endpoint {
            EndpointSpec::Subprocess { command } => {
                Box::new(SubprocessTransport::spawn(command)?)
            }
            EndpointSpec::Directory { requests_dir, responses_dir, poll_millis } => {
                Box::new(DirectoryTransport::new(
                    requests_dir.clone(),
                    responses_dir.clone(),
                    Duration::from_millis(*poll_millis),
                )?)
            }
        };
        Self::new(players, transport, &external)
    }

    pub fn new(
        players: PlayerSet,
        transport: Box<dyn OracleTransport>,
        external: &ExternalSpec,
    ) -> Result<Self, OracleError> {
        if !(external.u_min < external.u_max) {
            return Err(OracleError::Config(format!(
                "utility range [{}, {}] is empty",
                external.u_min, external.u_max
            )));
        }
        let cache = match &external.cache_journal {
            Some(path) => EvalCache::with_journal(path)?.0,
            None => EvalCache::in_memory(),
        };
        let canonical = serde_json::to_string(&(players.len(), &external.endpoint))
            .map_err(|e| OracleError::Config(e.to_string()))?;
        let digest = Sha256::digest(canonical.as_bytes());
        let fingerprint: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
        Ok(Self {
            players,
            range: (external.u_min, external.u_max),
            fingerprint,
            client: Mutex::new(OracleClient::new(
                transport,
                Duration::from_secs(external.timeout_secs),
            )),
            cache,
            true_evals: AtomicU64::new(0),
        })
    }

    pub fn players(&self) -> &PlayerSet {
        &self.players
    }

    pub fn cache(&self) -> &EvalCache {
        &self.cache
    }

    fn check_range(&self, value: f64, coalition: &str) -> Result<f64, OracleError> {
        let (min, max) = self.range;
        if !value.is_finite() || value < min || value > max {
            return Err(OracleError::RangeViolation {
                value,
                min,
                max,
                coalition: coalition.to_string(),
            });
        }
        Ok(value)
    }

    /// Cache-aware single evaluation with a typed error.
    pub fn evaluate_mask(&self, coalition: &CoalitionMask) -> Result<f64, OracleError> {
        let key = coalition.hex_key();
        if let Some(value) = self.cache.lookup(&self.fingerprint, &key) {
            return Ok(value);
        }
        let mut client = self.client.lock().expect("oracle client lock");
        let id = client.next_request_id();
        let request = OracleRequest::for_coalition(id, coalition);
        let response = client.evaluate(&request)?;
        drop(client);
        let value = self.check_range(response.utility, &key)?;
        self.true_evals.fetch_add(1, Ordering::Relaxed);
        self.cache.record(&self.fingerprint, &key, value)?;
        Ok(value)
    }

    /// Evaluate many coalitions with at most `parallelism` requests in
    /// flight, deduplicating within the batch and against the cache. Results
    /// come back in input order; partial failures never fabricate values.
    pub fn evaluate_batch(
        &self,
        coalitions: &[CoalitionMask],
        parallelism: usize,
    ) -> Result<BatchOutcome, OracleError> {
        if parallelism == 0 {
            return Err(OracleError::Config("parallelism must be at least 1".into()));
        }

        // Unique coalitions in first-seen order.
        let mut key_index: HashMap<String, usize> = HashMap::new();
        let mut unique_keys: Vec<String> = Vec::new();
        let mut unique_masks: Vec<&CoalitionMask> = Vec::new();
        let mut input_unique: Vec<usize> = Vec::with_capacity(coalitions.len());
        for mask in coalitions {
            let key = mask.hex_key();
            let idx = *key_index.entry(key.clone()).or_insert_with(|| {
                unique_keys.push(key);
                unique_masks.push(mask);
                unique_keys.len() - 1
            });
            input_unique.push(idx);
        }

        let mut results: Vec<Option<Result<f64, String>>> = vec![None; unique_keys.len()];
        let mut queue: VecDeque<usize> = VecDeque::new();
        for (idx, key) in unique_keys.iter().enumerate() {
            match self.cache.lookup(&self.fingerprint, key) {
                Some(value) => results[idx] = Some(Ok(value)),
                None => queue.push_back(idx),
            }
        }

        let mut client = self.client.lock().expect("oracle client lock");
        let mut in_flight: HashMap<u64, (usize, OracleRequest)> = HashMap::new();
        let mut retried = false;
        let mut malformed_budget: u32 = 100;

        'drive: while !queue.is_empty() || !in_flight.is_empty() {
            while in_flight.len() < parallelism {
                let Some(uidx) = queue.pop_front() else { break };
                let id = client.next_request_id();
                let request = OracleRequest::for_coalition(id, unique_masks[uidx]);
                if let Err(e) = client.submit(&request) {
                    results[uidx] = Some(Err(e.to_string()));
                    continue;
                }
                in_flight.insert(id, (uidx, request));
            }
            if in_flight.is_empty() {
                continue;
            }
            match client.receive_parsed() {
                Ok(response) => {
                    if let Some((uidx, _)) = in_flight.remove(&response.id) {
                        let outcome = self
                            .check_range(response.utility, &unique_keys[uidx])
                            .and_then(|value| {
                                self.true_evals.fetch_add(1, Ordering::Relaxed);
                                self.cache.record(&self.fingerprint, &unique_keys[uidx], value)?;
                                Ok(value)
                            });
                        results[uidx] = Some(outcome.map_err(|e| e.to_string()));
                    } else if !client.dead.remove(&response.id) {
                        let mismatch = OracleError::IdMismatch {
                            got: response.id,
                            outstanding: in_flight.keys().copied().collect(),
                        }
                        .to_string();
                        for (id, (uidx, _)) in in_flight.drain() {
                            client.dead.insert(id);
                            results[uidx] = Some(Err(mismatch.clone()));
                        }
                        break 'drive;
                    }
                }
                Err(OracleError::ReceiveTimeout { timeout }) => {
                    for (id, (uidx, request)) in in_flight.drain() {
                        client.dead.insert(id);
                        let err = OracleError::Timeout {
                            id,
                            coalition: format!(
                                "masked {:?} of n={}",
                                request.masked_players, request.n
                            ),
                            timeout,
                        };
                        results[uidx] = Some(Err(err.to_string()));
                    }
                    break 'drive;
                }
                Err(OracleError::Transport(message)) => {
                    if retried {
                        for (id, (uidx, _)) in in_flight.drain() {
                            client.dead.insert(id);
                            results[uidx] =
                                Some(Err(format!("transport failure: {message}")));
                        }
                        break 'drive;
                    }
                    retried = true;
                    for (_, request) in in_flight.values() {
                        if client.submit(request).is_err() {
                            break;
                        }
                    }
                }
                Err(OracleError::MalformedResponse { line, message }) => {
                    malformed_budget = malformed_budget.saturating_sub(1);
                    if malformed_budget == 0 {
                        let note = format!("malformed reply {line:?}: {message}");
                        for (id, (uidx, _)) in in_flight.drain() {
                            client.dead.insert(id);
                            results[uidx] = Some(Err(note.clone()));
                        }
                        break 'drive;
                    }
                }
                Err(other) => {
                    for (id, (uidx, _)) in in_flight.drain() {
                        client.dead.insert(id);
                        results[uidx] = Some(Err(other.to_string()));
                    }
                    break 'drive;
                }
            }
        }
        drop(client);

        while let Some(uidx) = queue.pop_front() {
            if results[uidx].is_none() {
                results[uidx] = Some(Err("aborted after earlier failure".into()));
            }
        }

        let mut values = Vec::with_capacity(coalitions.len());
        let mut failures = Vec::new();
        for (index, &uidx) in input_unique.iter().enumerate() {
            match &results[uidx] {
                Some(Ok(value)) => values.push(Some(*value)),
                Some(Err(message)) => {
                    values.push(None);
                    failures.push(BatchFailure {
                        index,
                        coalition: unique_keys[uidx].clone(),
                        message: message.clone(),
                    });
                }
                None => {
                    values.push(None);
                    failures.push(BatchFailure {
                        index,
                        coalition: unique_keys[uidx].clone(),
                        message: "never evaluated".into(),
                    });
                }
            }
        }
        Ok(BatchOutcome { values, failures })
    }
}

impl UtilityOracle for ExternalOracle {
    fn player_count(&self) -> usize {
        self.players.len()
    }

    fn utility_range(&self) -> (f64, f64) {
        self.range
    }

    fn evaluate(&self, coalition: &CoalitionMask) -> Result<f64, GameError> {
        self.check_dimensions(coalition)?;
        self.evaluate_mask(coalition).map_err(|e| match e {
            OracleError::RangeViolation { value, min, max, coalition } => {
                GameError::RangeViolation { value, min, max, coalition }
            }
            other => GameError::Evaluation {
                coalition: coalition.hex_key(),
                source: Box::new(other),
            },
        })
    }

    fn evaluations(&self) -> u64 {
        self.true_evals.load(Ordering::Relaxed)
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }
}

/// Deduplicating wrapper for any in-process oracle: repeated coalitions are
/// answered from the cache, so the inner evaluation count only grows on new
/// coalitions.
pub struct CachedOracle<O> {
    inner: O,
    cache: EvalCache,
}

impl<O: UtilityOracle> CachedOracle<O> {
    pub fn new(inner: O) -> Self {
        Self { inner, cache: EvalCache::in_memory() }
    }

    pub fn with_cache(inner: O, cache: EvalCache) -> Self {
        Self { inner, cache }
    }

    pub fn cache(&self) -> &EvalCache {
        &self.cache
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<O: UtilityOracle> UtilityOracle for CachedOracle<O> {
    fn player_count(&self) -> usize {
        self.inner.player_count()
    }

    fn utility_range(&self) -> (f64, f64) {
        self.inner.utility_range()
    }

    fn evaluate(&self, coalition: &CoalitionMask) -> Result<f64, GameError> {
        let key = coalition.hex_key();
        let fingerprint = self.inner.fingerprint();
        if let Some(value) = self.cache.lookup(&fingerprint, &key) {
            return Ok(value);
        }
        let value = self.inner.evaluate(coalition)?;
        self.cache.record(&fingerprint, &key, value).map_err(|e| GameError::Evaluation {
            coalition: key,
            source: Box::new(e),
        })?;
        Ok(value)
    }

    fn evaluations(&self) -> u64 {
        self.inner.evaluations()
    }

    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
}
