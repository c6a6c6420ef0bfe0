//! Text-generation client with a fixture store.
//!
//! Replay mode answers every request from recorded fixtures and never
//! touches the network. Live mode forwards to a chat-completion transport
//! and records each response verbatim before anything else sees it.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::DecomposeError;

/// Stage of the decomposition a request belongs to. Each stage has its own
/// fixture file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Parts,
    Attributes,
    ValueLogic,
    ValueConsistency,
    ValueRedundancy,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Parts,
        Stage::Attributes,
        Stage::ValueLogic,
        Stage::ValueConsistency,
        Stage::ValueRedundancy,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Stage::Parts => "parts.json",
            Stage::Attributes => "attributes.json",
            Stage::ValueLogic => "value_logic.json",
            Stage::ValueConsistency => "value_consistency.json",
            Stage::ValueRedundancy => "value_redundancy.json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt: String,
    pub response: String,
}

pub fn request_hash(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

type StageMap = IndexMap<String, Exchange>;

/// Directory of per-stage JSON files, each an object keyed by request hash.
/// Many concurrent readers, one writer at a time.
#[derive(Debug)]
pub struct FixtureStore {
    dir: PathBuf,
    stages: RwLock<HashMap<Stage, StageMap>>,
    write_lock: Mutex<()>,
}

impl FixtureStore {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, DecomposeError> {
        let dir = dir.into();
        let mut stages = HashMap::new();
        for stage in Stage::ALL {
            let path = dir.join(stage.file_name());
            let map: StageMap = match fs::read_to_string(&path) {
                Ok(text) => serde_json::from_str(&text).map_err(|e| DecomposeError::Fixture {
                    path: path.clone(),
                    message: e.to_string(),
                })?,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => StageMap::new(),
                Err(e) => return Err(e.into()),
            };
            stages.insert(stage, map);
        }
        Ok(Self {
            dir,
            stages: RwLock::new(stages),
            write_lock: Mutex::new(()),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn lookup(&self, stage: Stage, prompt: &str) -> Option<String> {
        let stages = self.stages.read().expect("fixture lock poisoned");
        stages
            .get(&stage)
            .and_then(|m| m.get(&request_hash(prompt)))
            .map(|ex| ex.response.clone())
    }

    pub fn len(&self, stage: Stage) -> usize {
        self.stages.read().expect("fixture lock poisoned")[&stage].len()
    }

    /// Records an exchange and rewrites the stage file.
    pub fn record(&self, stage: Stage, prompt: &str, response: &str) -> Result<(), DecomposeError> {
        let _guard = self.write_lock.lock().expect("fixture lock poisoned");
        let snapshot = {
            let mut stages = self.stages.write().expect("fixture lock poisoned");
            let map = stages.entry(stage).or_default();
            map.insert(
                request_hash(prompt),
                Exchange {
                    prompt: prompt.to_string(),
                    response: response.to_string(),
                },
            );
            serde_json::to_string_pretty(map).expect("fixture serialization is infallible")
        };
        fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(stage.file_name());
        let tmp = path.with_extension("json.tmp");
        fs::write(&tmp, snapshot + "\n")?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }
}

/// Something that can answer a single-turn chat prompt.
pub trait ChatTransport: Send + Sync {
    fn complete(&self, prompt: &str) -> Result<String, DecomposeError>;
}

/// Chat-completion endpoint settings. Nothing here has a built-in default;
/// the caller always supplies endpoint, model and key.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatEndpoint {
    pub url: String,
    pub model: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default)]
    pub temperature: f64,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<ChatMessage<'a>>,
    temperature: f64,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    content: String,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

pub struct HttpChatTransport {
    endpoint: ChatEndpoint,
    agent: ureq::Agent,
}

impl HttpChatTransport {
    pub fn new(endpoint: ChatEndpoint) -> Self {
        Self {
            endpoint,
            agent: ureq::Agent::new_with_defaults(),
        }
    }
}

impl ChatTransport for HttpChatTransport {
    fn complete(&self, prompt: &str) -> Result<String, DecomposeError> {
        let body = ChatRequest {
            model: &self.endpoint.model,
            messages: vec![ChatMessage {
                role: "user",
                content: prompt,
            }],
            temperature: self.endpoint.temperature,
        };
        let mut request = self.agent.post(&self.endpoint.url);
        if let Some(key) = &self.endpoint.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(&body)
            .map_err(|e| DecomposeError::Client(e.to_string()))?;
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| DecomposeError::Client(format!("bad chat response: {e}")))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| DecomposeError::Client("chat response has no choices".into()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientMode {
    Live,
    Replay,
}

pub struct GenerationClient {
    store: Arc<FixtureStore>,
    transport: Option<Arc<dyn ChatTransport>>,
}

impl GenerationClient {
    pub fn replay(store: Arc<FixtureStore>) -> Self {
        Self { store, transport: None }
    }

    pub fn live(store: Arc<FixtureStore>, transport: Arc<dyn ChatTransport>) -> Self {
        Self {
            store,
            transport: Some(transport),
        }
    }

    pub fn mode(&self) -> ClientMode {
        if self.transport.is_some() {
            ClientMode::Live
        } else {
            ClientMode::Replay
        }
    }

    pub fn store(&self) -> &FixtureStore {
        &self.store
    }

    pub fn complete(&self, stage: Stage, prompt: &str) -> Result<String, DecomposeError> {
        match &self.transport {
            None => self
                .store
                .lookup(stage, prompt)
                .ok_or_else(|| DecomposeError::MissingFixture {
                    stage,
                    hash: request_hash(prompt),
                }),
            Some(transport) => {
                let response = transport.complete(prompt)?;
                self.store.record(stage, prompt, &response)?;
                Ok(response)
            }
        }
    }
}
