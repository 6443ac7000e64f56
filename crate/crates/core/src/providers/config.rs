use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::policy::{ProviderPolicy, SystemClock};
use super::remote::{
    RemoteChat, RemoteClient, RemoteEmbedder, RemoteImageGenerator, RemoteSegmenter,
    RemoteVideoGenerator, UreqTransport,
};
use super::ProviderSet;

#[derive(Debug, Error)]
pub enum ProviderConfigError {
    #[error("cannot read provider config {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("{capability}: {reason}")]
    Invalid { capability: Capability, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Capability {
    Chat,
    Image,
    Video,
    Segment,
    Embed,
}

impl Capability {
    pub const ALL: [Capability; 5] = [
        Capability::Chat,
        Capability::Image,
        Capability::Video,
        Capability::Segment,
        Capability::Embed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Capability::Chat => "chat",
            Capability::Image => "image",
            Capability::Video => "video",
            Capability::Segment => "segment",
            Capability::Embed => "embed",
        }
    }
}

impl std::fmt::Display for Capability {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// How one capability is provided.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Binding {
    #[default]
    Mock,
    Remote {
        endpoint: String,
        /// Environment variable holding the bearer credential.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        credential_env: Option<String>,
        #[serde(default)]
        policy: ProviderPolicy,
    },
}

/// The provider configuration file: capability → binding.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProviderBindings {
    #[serde(default)]
    pub chat: Binding,
    #[serde(default)]
    pub image: Binding,
    #[serde(default)]
    pub video: Binding,
    #[serde(default)]
    pub segment: Binding,
    #[serde(default)]
    pub embed: Binding,
}

impl ProviderBindings {
    pub fn load(path: &Path) -> Result<Self, ProviderConfigError> {
        let read_err = |reason: String| ProviderConfigError::Read {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| read_err(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| read_err(e.to_string()))
    }

    pub fn get(&self, capability: Capability) -> &Binding {
        match capability {
            Capability::Chat => &self.chat,
            Capability::Image => &self.image,
            Capability::Video => &self.video,
            Capability::Segment => &self.segment,
            Capability::Embed => &self.embed,
        }
    }

    pub fn is_all_mock(&self) -> bool {
        Capability::ALL
            .iter()
            .all(|c| matches!(self.get(*c), Binding::Mock))
    }

    fn client(&self, capability: Capability) -> Result<Option<RemoteClient>, ProviderConfigError> {
        let Binding::Remote {
            endpoint,
            credential_env,
            policy,
        } = self.get(capability)
        else {
            return Ok(None);
        };
        let invalid = |reason: String| ProviderConfigError::Invalid { capability, reason };
        policy.validate().map_err(invalid)?;
        let credential = match credential_env {
            Some(var) => Some(
                std::env::var(var)
                    .map_err(|_| invalid(format!("environment variable {var} is not set")))?,
            ),
            None => None,
        };
        Ok(Some(RemoteClient::new(
            endpoint.clone(),
            credential,
            Arc::new(UreqTransport),
            policy.clone(),
            Arc::new(SystemClock),
        )))
    }

    /// Instantiates every capability; mock images are `image_size` square.
    pub fn build(&self, image_size: u32) -> Result<ProviderSet, ProviderConfigError> {
        let mut set = ProviderSet::mock(image_size);
        if let Some(c) = self.client(Capability::Chat)? {
            set.chat = Arc::new(RemoteChat::new(c));
        }
        if let Some(c) = self.client(Capability::Image)? {
            set.images = Arc::new(RemoteImageGenerator::new(c));
        }
        if let Some(c) = self.client(Capability::Video)? {
            set.video = Arc::new(RemoteVideoGenerator::new(c));
        }
        if let Some(c) = self.client(Capability::Segment)? {
            set.segmenter = Arc::new(RemoteSegmenter::new(c));
        }
        if let Some(c) = self.client(Capability::Embed)? {
            set.embedder = Arc::new(RemoteEmbedder::new(c));
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_mixed_config() {
        let json = r#"{
            "chat": {"kind": "remote", "endpoint": "http://localhost:9/chat", "credential_env": "CHAT_KEY"},
            "image": {"kind": "mock"}
        }"#;
        let b: ProviderBindings = serde_json::from_str(json).unwrap();
        assert!(matches!(&b.chat, Binding::Remote { endpoint, credential_env: Some(v), .. }
            if endpoint == "http://localhost:9/chat" && v == "CHAT_KEY"));
        assert_eq!(b.video, Binding::Mock);
        assert!(!b.is_all_mock());
    }

    #[test]
    fn missing_credential_is_reported() {
        let b = ProviderBindings {
            embed: Binding::Remote {
                endpoint: "http://localhost:9".into(),
                credential_env: Some("ANIMFORGE_TEST_SURELY_UNSET_VAR".into()),
                policy: ProviderPolicy::default(),
            },
            ..Default::default()
        };
        let err = b.build(64).err().unwrap();
        assert!(matches!(err, ProviderConfigError::Invalid { capability: Capability::Embed, .. }));
    }
}
