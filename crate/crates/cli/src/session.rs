//! Live adaptive-testing sessions: a trained policy recommends bank items,
//! outcomes come from a human proctor, and every response is appended to a
//! per-session event log that is replayed on startup.

use std::collections::HashMap;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use adoirt::calibration::{nearest_item, ItemBank};
use adoirt::env::{Action, TrialRecord};
use adoirt::nnet::{Checkpoint, PolicyParams};
use adoirt::{Error, Result};
use serde::{Deserialize, Serialize};

/// Immutable policy and bank shared by every session.
#[derive(Debug, Clone)]
pub struct Deployment {
    params: PolicyParams,
    bank: ItemBank,
    horizon: usize,
    conceal_outcomes: bool,
    /// Content hashes tying event logs to the artifacts that produced them.
    pub checkpoint_sha256: String,
    pub bank_sha256: String,
}

impl Deployment {
    /// Horizon and outcome concealment come from the checkpoint's training
    /// environment unless `horizon` overrides the former.
    pub fn new(checkpoint: &Checkpoint, bank: ItemBank, horizon: Option<usize>) -> Result<Self> {
        let horizon = horizon.unwrap_or(checkpoint.env.horizon);
        if horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        Ok(Self {
            params: checkpoint.policy()?,
            checkpoint_sha256: adoirt::io::sha256_hex(checkpoint.to_json().as_bytes()),
            bank_sha256: adoirt::io::sha256_hex(bank.to_json().as_bytes()),
            bank,
            horizon,
            conceal_outcomes: checkpoint.env.conceal_outcomes,
        })
    }

    pub fn load(checkpoint: impl AsRef<Path>, bank: impl AsRef<Path>, horizon: Option<usize>) -> Result<Self> {
        Self::new(&Checkpoint::load(checkpoint)?, ItemBank::load(bank)?, horizon)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn bank(&self) -> &ItemBank {
        &self.bank
    }

    /// What the policy sees: administered difficulties and outcomes, with
    /// outcomes hidden until the test is complete for a non-adaptive policy.
    fn observation(&self, history: &[Trial]) -> Vec<TrialRecord> {
        let hide = self.conceal_outcomes && history.len() < self.horizon;
        history
            .iter()
            .map(|t| {
                let rec = TrialRecord::revealed(t.difficulty, t.outcome);
                if hide {
                    rec.masked()
                } else {
                    rec
                }
            })
            .collect()
    }

    /// Deterministic mean action on `history`.
    pub fn act(&self, history: &[Trial]) -> Result<Action> {
        Ok(self.params.forward(&self.observation(history))?.0.mean_action())
    }

    fn recommend(&self, action: &Action) -> Result<RecommendedItem> {
        let (index, difficulty) = nearest_item(action.design, &self.bank)?;
        Ok(RecommendedItem {
            index,
            difficulty: difficulty.value(),
            requested: action.design,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecommendedItem {
    pub index: usize,
    pub difficulty: f64,
    /// Difficulty the policy asked for before mapping onto the bank.
    pub requested: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub item: usize,
    pub difficulty: f64,
    pub outcome: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Active,
    Completed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub status: Status,
    pub horizon: usize,
    pub history: Vec<Trial>,
    /// Outstanding item; `None` once completed.
    pub recommended_item: Option<RecommendedItem>,
    /// Ability estimate after each response.
    pub trajectory: Vec<f64>,
    pub created_at_ms: u64,
    pub updated_at_ms: u64,
}

impl Session {
    fn start(id: String, deployment: &Deployment, now_ms: u64) -> Result<Self> {
        let action = deployment.act(&[])?;
        Ok(Self {
            id,
            status: Status::Active,
            horizon: deployment.horizon,
            history: Vec::new(),
            recommended_item: Some(deployment.recommend(&action)?),
            trajectory: Vec::new(),
            created_at_ms: now_ms,
            updated_at_ms: now_ms,
        })
    }

    /// Records `outcome` for the outstanding item. `step`, when given, must
    /// equal the number of responses so far; a stale step is a conflict.
    fn respond(&self, deployment: &Deployment, outcome: i64, step: Option<usize>, now_ms: u64) -> Result<Self> {
        let item = match (self.status, self.recommended_item) {
            (Status::Active, Some(item)) => item,
            _ => return Err(Error::Conflict(format!("session {} is completed", self.id))),
        };
        if let Some(s) = step {
            if s != self.history.len() {
                return Err(Error::Conflict(format!(
                    "response for step {s}, but session {} is at step {}",
                    self.id,
                    self.history.len()
                )));
            }
        }
        let outcome = match outcome {
            0 => 0,
            1 => 1,
            other => return Err(Error::Validation(format!("outcome must be 0 or 1, got {other}"))),
        };
        let mut next = self.clone();
        next.history.push(Trial {
            item: item.index,
            difficulty: item.difficulty,
            outcome,
        });
        let action = deployment.act(&next.history)?;
        next.trajectory.push(action.estimate);
        if next.history.len() >= next.horizon {
            next.status = Status::Completed;
            next.recommended_item = None;
        } else {
            next.recommended_item = Some(deployment.recommend(&action)?);
        }
        next.updated_at_ms = now_ms;
        Ok(next)
    }

    pub fn final_estimate(&self) -> Option<f64> {
        match self.status {
            Status::Completed => self.trajectory.last().copied(),
            Status::Active => None,
        }
    }
}

/// One line of a session's event log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created {
        id: String,
        at_ms: u64,
        horizon: usize,
        checkpoint_sha256: String,
        bank_sha256: String,
    },
    Response {
        step: usize,
        outcome: u8,
        at_ms: u64,
    },
}

/// Append-only JSON-lines logs, one file per session.
#[derive(Debug, Clone)]
pub struct EventStore {
    dir: PathBuf,
}

impl EventStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir })
    }

    fn path(&self, id: &str) -> PathBuf {
        self.dir.join(format!("{id}.jsonl"))
    }

    pub fn append(&self, id: &str, event: &Event) -> Result<()> {
        let path = self.path(id);
        let mut line = serde_json::to_string(event).expect("event serializes");
        line.push('\n');
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&path, e))?;
        f.sync_data().map_err(|e| Error::io(&path, e))
    }

    /// Every log in the directory, sorted by file name.
    pub fn logs(&self) -> Result<Vec<(PathBuf, Vec<Event>)>> {
        let mut paths: Vec<PathBuf> = fs::read_dir(&self.dir)
            .map_err(|e| Error::io(&self.dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        paths.sort();
        paths
            .into_iter()
            .map(|p| {
                let events = read_log(&p)?;
                Ok((p, events))
            })
            .collect()
    }
}

pub fn read_log(path: &Path) -> Result<Vec<Event>> {
    adoirt::io::read_text(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::parse("session event", e)))
        .collect()
}

/// Rebuilds a session from its event log.
pub fn replay(deployment: &Deployment, events: &[Event]) -> Result<Session> {
    let (first, rest) = events
        .split_first()
        .ok_or_else(|| Error::Validation("empty session log".into()))?;
    let mut session = match first {
        Event::Created {
            id,
            at_ms,
            horizon,
            checkpoint_sha256,
            bank_sha256,
        } => {
            if *checkpoint_sha256 != deployment.checkpoint_sha256 || *bank_sha256 != deployment.bank_sha256 {
                return Err(Error::Config(format!(
                    "session {id} was recorded against a different checkpoint or bank"
                )));
            }
            if *horizon != deployment.horizon {
                return Err(Error::Config(format!(
                    "session {id} was recorded with horizon {horizon}"
                )));
            }
            Session::start(id.clone(), deployment, *at_ms)?
        }
        Event::Response { .. } => return Err(Error::Validation("session log must start with a created event".into())),
    };
    for ev in rest {
        match ev {
            Event::Response { step, outcome, at_ms } => {
                session = session.respond(deployment, i64::from(*outcome), Some(*step), *at_ms)?;
            }
            Event::Created { .. } => return Err(Error::Validation("duplicate created event".into())),
        }
    }
    Ok(session)
}

fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis() as u64)
}

/// Owns all sessions. Each session has its own lock, so responses to one
/// session are serialized while different sessions proceed independently.
#[derive(Debug)]
pub struct SessionManager {
    deployment: Arc<Deployment>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
    store: Option<EventStore>,
}

impl SessionManager {
    /// Replays every log in `store` before accepting requests.
    pub fn new(deployment: Deployment, store: Option<EventStore>) -> Result<Self> {
        let mut sessions = HashMap::new();
        if let Some(store) = &store {
            for (path, events) in store.logs()? {
                let s = replay(&deployment, &events).map_err(|e| match e {
                    Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
                    other => other,
                })?;
                sessions.insert(s.id.clone(), Arc::new(Mutex::new(s)));
            }
            log::info!("restored {} sessions", sessions.len());
        }
        Ok(Self {
            deployment: Arc::new(deployment),
            sessions: RwLock::new(sessions),
            store,
        })
    }

    pub fn deployment(&self) -> &Deployment {
        &self.deployment
    }

    pub fn len(&self) -> usize {
        self.sessions.read().expect("session map lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn create(&self) -> Result<Session> {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let session = Session::start(id.clone(), &self.deployment, now_ms())?;
        if let Some(store) = &self.store {
            store.append(
                &id,
                &Event::Created {
                    id: id.clone(),
                    at_ms: session.created_at_ms,
                    horizon: session.horizon,
                    checkpoint_sha256: self.deployment.checkpoint_sha256.clone(),
                    bank_sha256: self.deployment.bank_sha256.clone(),
                },
            )?;
        }
        self.sessions
            .write()
            .expect("session map lock")
            .insert(id, Arc::new(Mutex::new(session.clone())));
        Ok(session)
    }

    fn handle(&self, id: &str) -> Result<Arc<Mutex<Session>>> {
        self.sessions
            .read()
            .expect("session map lock")
            .get(id)
            .cloned()
            .ok_or_else(|| Error::NotFound(format!("no session {id}")))
    }

    pub fn get(&self, id: &str) -> Result<Session> {
        Ok(self.handle(id)?.lock().expect("session lock").clone())
    }

    /// Applies a response; the log is written before the in-memory state
    /// changes, so a failed write leaves the session as it was.
    pub fn submit(&self, id: &str, outcome: i64, step: Option<usize>) -> Result<Session> {
        let handle = self.handle(id)?;
        let mut guard = handle.lock().expect("session lock");
        let next = guard.respond(&self.deployment, outcome, step, now_ms())?;
        if let Some(store) = &self.store {
            let t = next.history.last().expect("response appended");
            store.append(
                id,
                &Event::Response {
                    step: next.history.len() - 1,
                    outcome: t.outcome,
                    at_ms: next.updated_at_ms,
                },
            )?;
        }
        *guard = next.clone();
        Ok(next)
    }
}
