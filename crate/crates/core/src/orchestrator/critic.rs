//! Success critics: the simulator oracle, a seeded noisy wrapper, and a
//! chat-completion client for multimodal language models.

use std::io::Cursor;
use std::time::{Duration, Instant};

use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::sim2d::{mix_seed, render_raster, success, EnvSpec, Frame, PickupObject, SimState, Summary, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Success,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticVerdict {
    pub verdict: Verdict,
    pub raw_response: String,
    pub latency_s: f64,
    /// The reply did not start with yes or no.
    #[serde(default)]
    pub unparseable: bool,
}

impl CriticVerdict {
    fn plain(verdict: Verdict, raw: &str) -> Self {
        Self { verdict, raw_response: raw.into(), latency_s: 0.0, unparseable: false }
    }

    pub fn is_success(&self) -> bool {
        self.verdict == Verdict::Success
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CriticError {
    /// Connection, DNS, or timeout failure; worth retrying.
    #[error("transport error: {0}")]
    Transport(String),
    /// The endpoint answered but not with a usable reply.
    #[error("endpoint error (status {status}): {body}")]
    Endpoint { status: u16, body: String },
}

impl CriticError {
    pub fn is_retriable(&self) -> bool {
        matches!(self, CriticError::Transport(_))
    }
}

/// Everything a critic may look at for one try.
#[derive(Debug, Clone, Copy)]
pub struct CriticQuery<'a> {
    pub spec: &'a EnvSpec,
    pub summary: &'a Summary,
    pub frames: &'a [Frame],
    /// Ground-truth state; only the oracle is expected to read it.
    pub final_state: &'a SimState,
    pub episode_seed: u64,
    pub try_index: usize,
}

pub trait Critic: Send + Sync {
    fn judge(&self, query: &CriticQuery<'_>) -> Result<CriticVerdict, CriticError>;
}

/// Reads the simulator's success oracle on the final state.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleCritic;

impl Critic for OracleCritic {
    fn judge(&self, q: &CriticQuery<'_>) -> Result<CriticVerdict, CriticError> {
        Ok(if success(q.final_state, q.spec) {
            CriticVerdict::plain(Verdict::Success, "oracle: success")
        } else {
            CriticVerdict::plain(Verdict::Failure, "oracle: failure")
        })
    }
}

/// Flips an inner critic's verdicts at fixed rates. Draws are keyed on
/// `(seed, episode, try)` so concurrent use stays reproducible.
pub struct NoisyCritic<C> {
    pub inner: C,
    pub fp_rate: f64,
    pub fn_rate: f64,
    pub seed: u64,
}

impl<C: Critic> NoisyCritic<C> {
    pub fn new(inner: C, fp_rate: f64, fn_rate: f64, seed: u64) -> Self {
        Self { inner, fp_rate, fn_rate, seed }
    }
}

impl<C: Critic> Critic for NoisyCritic<C> {
    fn judge(&self, q: &CriticQuery<'_>) -> Result<CriticVerdict, CriticError> {
        let mut v = self.inner.judge(q)?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[self.seed, q.episode_seed, q.try_index as u64]));
        let u: f64 = rng.random();
        let flip = match v.verdict {
            Verdict::Failure => u < self.fp_rate,
            Verdict::Success => u < self.fn_rate,
        };
        if flip {
            v.verdict = match v.verdict {
                Verdict::Success => Verdict::Failure,
                Verdict::Failure => Verdict::Success,
            };
            v.raw_response = format!("{} (flipped)", v.raw_response);
        }
        Ok(v)
    }
}

/// Closing instruction shared by every task prompt.
pub const ANSWER_INSTRUCTION: &str = "Please respond with only 'Yes' or 'No'.";

const DOOR_QUESTION: &str = "As the timesteps progress, does the robotic arm open the door AND is the robot arm grasping the handle in the LAST timestep?";
const DRAWER_QUESTION: &str = "As the timesteps progress, does the robotic arm grasp the drawer handle and open it AND is the drawer open in the last timestep?";
const REORIENT_QUESTION: &str = "As the timesteps progress, does the robotic arm/gripper reorient the object upright AND is the object upright in the LAST frame?";
const TISSUE_QUESTION: &str = "As the timesteps progress, does the robotic arm/gripper grasp the tissue AND is the gripper grasping the tissue in the LAST timestep?";
const BAG_QUESTION: &str = "As the timesteps progress, does the robotic arm/gripper grasp the bag AND is the gripper grasping the bag in the LAST timestep?";

/// Prompt names in a fixed order: door, drawer, reorient, tissue, bag.
pub const PROMPT_NAMES: [&str; 5] = ["door", "drawer", "reorient", "tissue", "bag"];

fn question(name: &str) -> Option<&'static str> {
    Some(match name {
        "door" => DOOR_QUESTION,
        "drawer" => DRAWER_QUESTION,
        "reorient" => REORIENT_QUESTION,
        "tissue" => TISSUE_QUESTION,
        "bag" => BAG_QUESTION,
        _ => return None,
    })
}

/// Full prompt text: the question, a line break, then the answer instruction.
pub fn prompt_by_name(name: &str) -> Option<String> {
    question(name).map(|q| format!("{q}\n{ANSWER_INSTRUCTION}"))
}

pub fn prompt_for(task: Task, object: Option<PickupObject>) -> String {
    let name = match (task, object) {
        (Task::Door, _) => "door",
        (Task::Drawer, _) => "drawer",
        (Task::Reorient, _) => "reorient",
        (Task::Pickup, Some(PickupObject::Bag)) => "bag",
        (Task::Pickup, _) => "tissue",
    };
    prompt_by_name(name).expect("known prompt")
}

/// Maps a reply onto a verdict using its first alphabetic word.
pub fn parse_reply(reply: &str) -> (Verdict, bool) {
    let word: String = reply
        .trim_start_matches(|c: char| !c.is_alphabetic())
        .chars()
        .take_while(|c| c.is_alphabetic())
        .collect();
    match word.to_lowercase().as_str() {
        "yes" => (Verdict::Success, false),
        "no" => (Verdict::Failure, false),
        _ => (Verdict::Failure, true),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    /// Full chat-completions URL.
    pub url: String,
    pub model: String,
    #[serde(skip_serializing)]
    pub api_key: Option<String>,
    pub timeout_s: f64,
    /// Attach a small PNG raster per summary frame.
    pub send_images: bool,
    pub image_size: u32,
}

pub const ENV_URL: &str = "RUM_CRITIC_URL";
pub const ENV_KEY: &str = "RUM_CRITIC_API_KEY";
pub const ENV_MODEL: &str = "RUM_CRITIC_MODEL";

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            url: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o-2024-05-13".into(),
            api_key: None,
            timeout_s: 30.0,
            send_images: false,
            image_size: 64,
        }
    }
}

impl LlmConfig {
    /// Overrides URL, key, and model from the environment when set.
    pub fn with_env(mut self) -> Self {
        if let Ok(u) = std::env::var(ENV_URL) {
            self.url = u;
        }
        if let Ok(k) = std::env::var(ENV_KEY) {
            self.api_key = Some(k);
        }
        if let Ok(m) = std::env::var(ENV_MODEL) {
            self.model = m;
        }
        self
    }
}

pub const SYSTEM_PROMPT: &str =
    "You judge whether a robot completed a manipulation task. You are given a sequence of timesteps describing the scene.";

pub struct LlmCritic {
    cfg: LlmConfig,
    agent: ureq::Agent,
}

impl LlmCritic {
    pub fn new(cfg: LlmConfig) -> Self {
        let agent = ureq::Agent::new_with_config(
            ureq::Agent::config_builder()
                .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_s)))
                .http_status_as_error(false)
                .build(),
        );
        Self { cfg, agent }
    }

    pub fn config(&self) -> &LlmConfig {
        &self.cfg
    }

    /// Request body for one query.
    pub fn request_body(&self, q: &CriticQuery<'_>) -> Value {
        let prompt = prompt_for(q.spec.task, q.spec.pickup_object());
        let text = format!("{}\n\n{prompt}", q.summary.to_text());
        let user_content = if self.cfg.send_images {
            let mut parts = vec![json!({"type": "text", "text": text})];
            for f in &q.summary.frames {
                if let Some(frame) = q.frames.get(f.index) {
                    let img = render_raster(&frame.state, q.spec, self.cfg.image_size);
                    let mut png = Cursor::new(Vec::new());
                    if img.write_to(&mut png, image::ImageFormat::Png).is_ok() {
                        let b64 = base64::engine::general_purpose::STANDARD.encode(png.into_inner());
                        parts.push(json!({
                            "type": "image_url",
                            "image_url": {"url": format!("data:image/png;base64,{b64}")}
                        }));
                    }
                }
            }
            Value::Array(parts)
        } else {
            Value::String(text)
        };
        json!({
            "model": self.cfg.model,
            "messages": [
                {"role": "system", "content": SYSTEM_PROMPT},
                {"role": "user", "content": user_content},
            ],
        })
    }
}

impl Critic for LlmCritic {
    fn judge(&self, q: &CriticQuery<'_>) -> Result<CriticVerdict, CriticError> {
        let body = self.request_body(q);
        let started = Instant::now();
        let mut req = self.agent.post(&self.cfg.url).header("Content-Type", "application/json");
        if let Some(key) = &self.cfg.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(&body).map_err(|e| match e {
            ureq::Error::BadUri(u) => CriticError::Endpoint { status: 0, body: format!("bad uri {u}") },
            other => CriticError::Transport(other.to_string()),
        })?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| CriticError::Transport(e.to_string()))?;
        let latency_s = started.elapsed().as_secs_f64();
        if !(200..300).contains(&status) {
            return Err(CriticError::Endpoint { status, body: text });
        }
        let reply = serde_json::from_str::<Value>(&text)
            .ok()
            .and_then(|v| v["choices"][0]["message"]["content"].as_str().map(str::to_owned))
            .ok_or_else(|| CriticError::Endpoint { status, body: text.clone() })?;
        let (verdict, unparseable) = parse_reply(&reply);
        Ok(CriticVerdict { verdict, raw_response: reply, latency_s, unparseable })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reply_parsing() {
        assert_eq!(parse_reply("Yes"), (Verdict::Success, false));
        assert_eq!(parse_reply("no."), (Verdict::Failure, false));
        assert_eq!(parse_reply("  **YES**, it did"), (Verdict::Success, false));
        assert_eq!(parse_reply("The robot seems to..."), (Verdict::Failure, true));
        assert_eq!(parse_reply(""), (Verdict::Failure, true));
        assert_eq!(parse_reply("Nope"), (Verdict::Failure, true));
    }

    #[test]
    fn every_prompt_ends_with_instruction() {
        for name in PROMPT_NAMES {
            let p = prompt_by_name(name).unwrap();
            assert!(p.ends_with("\nPlease respond with only 'Yes' or 'No'."));
            assert!(p.starts_with("As the timesteps progress, does the robotic arm"));
        }
        assert!(prompt_by_name("knob").is_none());
    }

    #[test]
    fn pickup_prompt_follows_object() {
        assert!(prompt_for(Task::Pickup, Some(PickupObject::Bag)).contains("grasp the bag"));
        assert!(prompt_for(Task::Pickup, Some(PickupObject::Tissue)).contains("grasp the tissue"));
    }
}
