//! Optional decomposition through an OpenAI-style chat-completions endpoint,
//! with an on-disk cache so repeated captions never hit the network.

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::sync::{Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::EventList;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmClientConfig {
    pub endpoint: String,
    pub model: String,
    /// Name of the environment variable holding the bearer token.
    pub token_env: String,
    pub cache_path: PathBuf,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    30
}

/// Exemplar decompositions shown to the model before the caption.
const EXEMPLARS: &[(&str, &[&str])] = &[
    (
        "a person walks forward, then turns around and walks back.",
        &["a person walks forward", "turns around", "walks back"],
    ),
    ("a man jumps up and down.", &["a man jumps up and down"]),
    (
        "someone sits down after picking something up from the floor.",
        &["picks something up from the floor", "sits down"],
    ),
    (
        "the person raises both arms, claps, then bends down to touch their toes.",
        &["the person raises both arms", "claps", "bends down to touch their toes"],
    ),
];

pub fn build_prompt(caption: &str) -> String {
    let mut p = String::from(
        "Decompose the following description of a human motion into the events it contains, \
         listed in the order in which they happen. Write one event per line, numbered. \
         Keep the wording of each event close to the original text. If the description \
         contains a single action, output a single event.\n\n",
    );
    for (text, events) in EXEMPLARS {
        p.push_str("Description: ");
        p.push_str(text);
        p.push_str("\nEvents:\n");
        for (i, e) in events.iter().enumerate() {
            p.push_str(&format!("{}. {e}\n", i + 1));
        }
        p.push('\n');
    }
    p.push_str("Description: ");
    p.push_str(caption);
    p.push_str("\nEvents:\n");
    p
}

/// Accepts numbered (`1.`, `1)`), bulleted or bare lines.
pub fn parse_event_lines(content: &str) -> Result<Vec<String>> {
    let events: Vec<String> = content
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.to_ascii_lowercase().starts_with("events"))
        .map(|l| {
            let l = l.trim_start_matches(|c: char| c.is_ascii_digit());
            let l = l.trim_start_matches(['.', ')', ':', '-', '*']).trim();
            l.trim_end_matches(['.', ',']).trim().to_string()
        })
        .filter(|l| !l.is_empty())
        .collect();
    if events.is_empty() {
        return Err(Error::Unparseable(format!("no events in response: {content:?}")));
    }
    Ok(events)
}

pub trait Transport: Send + Sync {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value>;
}

pub struct HttpTransport {
    client: reqwest::blocking::Client,
}

impl HttpTransport {
    pub fn new(timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        Ok(Self { client })
    }
}

impl Transport for HttpTransport {
    fn post_json(&self, url: &str, bearer: Option<&str>, body: &Value) -> Result<Value> {
        let mut req = self
            .client
            .post(url)
            .header("content-type", "application/json")
            .body(serde_json::to_vec(body)?);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        let resp = req.send().map_err(|e| Error::Transport(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().map_err(|e| Error::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(Error::Transport(format!("HTTP {status}: {}", String::from_utf8_lossy(&bytes))));
        }
        serde_json::from_slice(&bytes).map_err(|e| Error::Unparseable(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub model: String,
    pub text_sha256: String,
    pub events: Vec<String>,
}

pub fn text_sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub struct LlmDecomposer<T: Transport> {
    config: LlmClientConfig,
    transport: T,
    cache: RwLock<HashMap<(String, String), Vec<String>>>,
    writer: Mutex<()>,
}

impl LlmDecomposer<HttpTransport> {
    pub fn http(config: LlmClientConfig) -> Result<Self> {
        let t = HttpTransport::new(Duration::from_secs(config.timeout_secs))?;
        Self::new(config, t)
    }
}

impl<T: Transport> LlmDecomposer<T> {
    pub fn new(config: LlmClientConfig, transport: T) -> Result<Self> {
        let mut cache = HashMap::new();
        if config.cache_path.is_file() {
            let f = std::fs::File::open(&config.cache_path).map_err(|e| Error::io(&config.cache_path, e))?;
            for line in BufReader::new(f).lines() {
                let line = line.map_err(|e| Error::io(&config.cache_path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: CacheRecord = serde_json::from_str(&line)?;
                cache.insert((rec.model, rec.text_sha256), rec.events);
            }
        }
        Ok(Self {
            config,
            transport,
            cache: RwLock::new(cache),
            writer: Mutex::new(()),
        })
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    pub fn decompose(&self, text: &str) -> Result<EventList> {
        let key = (self.config.model.clone(), text_sha256(text));
        if let Some(events) = self.cache.read().expect("cache lock").get(&key) {
            return Ok(EventList {
                events: events.clone(),
                source_text: text.to_string(),
            });
        }
        let body = json!({
            "model": self.config.model,
            "messages": [{"role": "user", "content": build_prompt(text)}],
        });
        let token = std::env::var(&self.config.token_env).ok();
        let resp = self.transport.post_json(&self.config.endpoint, token.as_deref(), &body)?;
        let content = resp
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Unparseable(format!("missing choices[0].message.content in {resp}")))?;
        let events = parse_event_lines(content)?;
        self.store(key, &events)?;
        Ok(EventList {
            events,
            source_text: text.to_string(),
        })
    }

    fn store(&self, key: (String, String), events: &[String]) -> Result<()> {
        let _guard = self.writer.lock().expect("writer lock");
        let rec = CacheRecord {
            model: key.0.clone(),
            text_sha256: key.1.clone(),
            events: events.to_vec(),
        };
        let path = &self.config.cache_path;
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut line = serde_json::to_vec(&rec)?;
        line.push(b'\n');
        f.write_all(&line).map_err(|e| Error::io(path, e))?;
        self.cache.write().expect("cache lock").insert(key, events.to_vec());
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Canned {
        reply: Value,
        calls: AtomicUsize,
    }

    impl Transport for Canned {
        fn post_json(&self, _url: &str, _bearer: Option<&str>, body: &Value) -> Result<Value> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            assert!(body["messages"][0]["content"].as_str().unwrap().contains("Description:"));
            Ok(self.reply.clone())
        }
    }

    fn config(dir: &std::path::Path) -> LlmClientConfig {
        LlmClientConfig {
            endpoint: "http://127.0.0.1:1/v1/chat/completions".into(),
            model: "test-model".into(),
            token_env: "CAR_TEST_TOKEN_UNSET".into(),
            cache_path: dir.join("cache.jsonl"),
            timeout_secs: 2,
        }
    }

    #[test]
    fn parses_numbered_lines() {
        let e = parse_event_lines("Events:\n1. a person walks\n2) turns around\n- sits.\n").unwrap();
        assert_eq!(e, vec!["a person walks", "turns around", "sits"]);
        assert!(parse_event_lines("\n\n").is_err());
    }

    #[test]
    fn prompt_ends_with_caption() {
        let p = build_prompt("a person hops.");
        assert!(p.ends_with("Description: a person hops.\nEvents:\n"));
        assert!(p.contains("1. a person walks forward\n2. turns around\n3. walks back"));
    }

    #[test]
    fn cache_hit_skips_network() {
        let dir = tempfile::tempdir().unwrap();
        let reply = json!({"choices": [{"message": {"role": "assistant", "content": "1. a man walks\n2. he sits"}}]});
        let d = LlmDecomposer::new(config(dir.path()), Canned { reply: reply.clone(), calls: AtomicUsize::new(0) }).unwrap();
        let first = d.decompose("a man walks then he sits.").unwrap();
        let second = d.decompose("a man walks then he sits.").unwrap();
        assert_eq!(first, second);
        assert_eq!(d.transport().calls.load(Ordering::SeqCst), 1);

        // reloaded from disk, no call at all
        let d2 = LlmDecomposer::new(config(dir.path()), Canned { reply, calls: AtomicUsize::new(0) }).unwrap();
        assert_eq!(d2.decompose("a man walks then he sits.").unwrap(), first);
        assert_eq!(d2.transport().calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn unreachable_endpoint_leaves_cache_untouched() {
        let dir = tempfile::tempdir().unwrap();
        let d = LlmDecomposer::http(config(dir.path())).unwrap();
        let err = d.decompose("a person waves.").unwrap_err();
        assert!(matches!(err, Error::Transport(_)), "{err}");
        assert!(!dir.path().join("cache.jsonl").exists());
    }

    #[test]
    fn malformed_reply_is_unparseable() {
        let dir = tempfile::tempdir().unwrap();
        let d = LlmDecomposer::new(
            config(dir.path()),
            Canned { reply: json!({"unexpected": true}), calls: AtomicUsize::new(0) },
        )
        .unwrap();
        assert!(matches!(d.decompose("x"), Err(Error::Unparseable(_))));
    }
}
