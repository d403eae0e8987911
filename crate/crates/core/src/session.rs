//! Stepwise interactive sessions behind a versioned JSON protocol.
//!
//! Requests are objects `{"v": 1, "type": ..., ...}`:
//!
//! | `type`   | fields                                          |
//! |----------|-------------------------------------------------|
//! | `create` | `condition` (`none`/`oneway`/`mutual`), optional `config` (default `"default"`), optional `seed` |
//! | `step`   | `session`, `input` (`"left"`/`"forward"`/`"right"` or `null`) |
//! | `reset`  | `session`                                       |
//! | `state`  | `session`                                       |
//!
//! Every successful request answers with a `state` message
//! `{"v", "type": "state", "session", "condition", "x": [col, row],
//! "robot_action", "input", "belief": {"alpha": [...], "mode": {"mL", "mR"},
//! "used"}, "done", "reward", "step", "seed"}`. `reward` is the goal reward
//! once the robot has reached a goal and `null` before. Failures answer with
//! `{"v", "type": "error", "code", "message"}`.
//!
//! Steps on one session are queued: a step that arrives while another is
//! running waits for it. Sessions never share mutable state.
//!
//! The robot is deterministic, so the seed does not influence its actions.
//! It is echoed so a client can tie the session to the simulated user that
//! drives it. `reset` replaces it with `splitmix64(seed)`.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines::{Condition, ConditionPolicy};
use crate::sim::{splitmix64, BeliefSnapshot, Episode};
use crate::task::{Action, Cell, HumanInput};

pub const WIRE_VERSION: u32 = 1;
pub const DEFAULT_CONFIG: &str = "default";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Request {
    #[serde(default)]
    pub v: Option<u32>,
    #[serde(rename = "type")]
    pub kind: String,
    #[serde(default)]
    pub session: Option<String>,
    /// Kept raw so malformed actions can be reported as `bad_action`.
    #[serde(default)]
    pub input: Option<Value>,
    #[serde(default)]
    pub condition: Option<String>,
    #[serde(default)]
    pub config: Option<String>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    UnsupportedVersion,
    UnknownCondition,
    UnknownConfig,
    UnknownSession,
    SessionDone,
    BadAction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub v: u32,
    pub code: ErrorCode,
    pub message: String,
}

impl WireError {
    fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        Self { v: WIRE_VERSION, code, message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatePayload {
    pub v: u32,
    pub session: String,
    pub condition: Condition,
    pub x: Cell,
    /// Last robot action; `null` before the first step.
    pub robot_action: Option<Action>,
    /// Last human input as received.
    pub input: HumanInput,
    pub belief: BeliefSnapshot,
    pub done: bool,
    pub reward: Option<f64>,
    pub step: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Response {
    State(StatePayload),
    Error(WireError),
}

impl From<std::result::Result<StatePayload, WireError>> for Response {
    fn from(r: std::result::Result<StatePayload, WireError>) -> Self {
        match r {
            Ok(s) => Response::State(s),
            Err(e) => Response::Error(e),
        }
    }
}

#[derive(Debug)]
struct Session {
    id: String,
    policy: Arc<ConditionPolicy>,
    episode: Episode,
    seed: u64,
    input: HumanInput,
    action: Option<Action>,
}

impl Session {
    fn payload(&self) -> StatePayload {
        let model = self.policy.model();
        let state = self.episode.state();
        StatePayload {
            v: WIRE_VERSION,
            session: self.id.clone(),
            condition: self.policy.condition(),
            x: model.state(state).cell,
            robot_action: self.action,
            input: self.input,
            belief: BeliefSnapshot::of(model, self.episode.belief(), self.policy.uses_belief()),
            done: self.episode.is_done(model),
            reward: model.goal_of(state).map(|g| model.task().goals()[g].reward),
            step: self.episode.steps(),
            seed: self.seed,
        }
    }
}

/// Owns the pre-solved policies and every live session.
#[derive(Debug, Default)]
pub struct SessionManager {
    policies: BTreeMap<String, BTreeMap<Condition, Arc<ConditionPolicy>>>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
}

impl SessionManager {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a policy under a config name. Later registrations for the
    /// same name and condition replace earlier ones.
    pub fn register(&mut self, config: impl Into<String>, policy: ConditionPolicy) {
        self.policies.entry(config.into()).or_default().insert(policy.condition(), Arc::new(policy));
    }

    pub fn configs(&self) -> impl Iterator<Item = (&str, Condition)> + '_ {
        self.policies.iter().flat_map(|(name, m)| m.keys().map(move |c| (name.as_str(), *c)))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().unwrap().len()
    }

    pub fn create(&self, condition: &str, config: Option<&str>, seed: Option<u64>) -> Result<StatePayload, WireError> {
        let condition: Condition =
            condition.parse().map_err(|e: String| WireError::new(ErrorCode::UnknownCondition, e))?;
        let name = config.unwrap_or(DEFAULT_CONFIG);
        let set = self
            .policies
            .get(name)
            .ok_or_else(|| WireError::new(ErrorCode::UnknownConfig, format!("no config named `{name}`")))?;
        let policy = set
            .get(&condition)
            .ok_or_else(|| WireError::new(ErrorCode::UnknownCondition, format!("config `{name}` has no `{condition}` policy")))?
            .clone();
        let n = self.counter.fetch_add(1, Ordering::Relaxed);
        let id = format!("s{n}-{:08x}", splitmix64(n) as u32);
        let session = Session {
            id: id.clone(),
            episode: Episode::new(policy.model()),
            policy,
            seed: seed.unwrap_or(0),
            input: None,
            action: None,
        };
        let payload = session.payload();
        self.sessions.write().unwrap().insert(id, Arc::new(Mutex::new(session)));
        Ok(payload)
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, WireError> {
        self.sessions
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| WireError::new(ErrorCode::UnknownSession, format!("no session `{id}`")))
    }

    pub fn step(&self, id: &str, input: HumanInput) -> Result<StatePayload, WireError> {
        let handle = self.get(id)?;
        let mut s = handle.lock().unwrap();
        if s.episode.is_done(s.policy.model()) {
            return Err(WireError::new(ErrorCode::SessionDone, "the session has reached a goal; reset it"));
        }
        let policy = s.policy.clone();
        let adv = s.episode.advance(&policy, input).map_err(|e| WireError::new(ErrorCode::BadAction, e.to_string()))?;
        s.input = input;
        s.action = Some(adv.action);
        Ok(s.payload())
    }

    pub fn reset(&self, id: &str) -> Result<StatePayload, WireError> {
        let handle = self.get(id)?;
        let mut s = handle.lock().unwrap();
        s.episode = Episode::new(s.policy.model());
        s.seed = splitmix64(s.seed);
        s.input = None;
        s.action = None;
        Ok(s.payload())
    }

    pub fn state(&self, id: &str) -> Result<StatePayload, WireError> {
        Ok(self.get(id)?.lock().unwrap().payload())
    }

    pub fn handle(&self, req: &Request) -> Response {
        self.dispatch(req).into()
    }

    fn dispatch(&self, req: &Request) -> Result<StatePayload, WireError> {
        if let Some(v) = req.v {
            if v != WIRE_VERSION {
                return Err(WireError::new(ErrorCode::UnsupportedVersion, format!("protocol version {v} is not supported")));
            }
        }
        let session = || req.session.as_deref().ok_or_else(|| WireError::new(ErrorCode::BadRequest, "missing `session`"));
        match req.kind.as_str() {
            "create" => {
                let condition = req.condition.as_deref().ok_or_else(|| WireError::new(ErrorCode::UnknownCondition, "missing `condition`"))?;
                self.create(condition, req.config.as_deref(), req.seed)
            }
            "step" => self.step(session()?, parse_input(req.input.as_ref())?),
            "reset" => self.reset(session()?),
            "state" => self.state(session()?),
            other => Err(WireError::new(ErrorCode::BadRequest, format!("unknown message type `{other}`"))),
        }
    }

    /// Text in, text out; malformed JSON becomes a `bad_request` error.
    pub fn handle_json(&self, text: &str) -> String {
        let response = match serde_json::from_str::<Request>(text) {
            Ok(req) => self.handle(&req),
            Err(e) => Response::Error(WireError::new(ErrorCode::BadRequest, e.to_string())),
        };
        serde_json::to_string(&response).expect("responses always serialize")
    }
}

fn parse_input(raw: Option<&Value>) -> Result<HumanInput, WireError> {
    match raw {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) => s.parse().map(Some).map_err(|e: String| WireError::new(ErrorCode::BadAction, e)),
        Some(other) => Err(WireError::new(ErrorCode::BadAction, format!("input must be an action name or null, got {other}"))),
    }
}
