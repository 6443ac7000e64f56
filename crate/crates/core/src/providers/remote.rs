//! JSON-over-HTTP adapters.
//!
//! Every capability posts one JSON document to `<endpoint><path>` and reads
//! one JSON document back. Images travel as base64 PNG strings. Status
//! codes map onto [`ProviderError`]: 429 is rate limiting, 5xx and network
//! failures are transient, everything else is permanent.

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde_json::{json, Value};

use super::policy::{Clock, ProviderPolicy, Retrier};
use super::{
    ChatProvider, ChatRequest, Embedder, EmbeddingVector, FrameSequence, Image, ImageGenerator,
    ImageRequest, ProviderError, Role, SegmentationMask, Segmenter, VideoGenerator, VideoRequest,
};
use crate::prompt::GenerationParams;

pub const CHAT_PATH: &str = "/chat";
pub const IMAGES_GENERATE_PATH: &str = "/images/generate";
pub const IMAGES_REPLACE_PATH: &str = "/images/replace";
pub const VIDEOS_GENERATE_PATH: &str = "/videos/generate";
pub const SEGMENT_PATH: &str = "/segment";
pub const EMBED_TEXT_PATH: &str = "/embed/text";
pub const EMBED_IMAGES_PATH: &str = "/embed/images";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub retry_after: Option<String>,
    pub body: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TransportError {
    Timeout,
    Connect(String),
    Other(String),
}

/// Sends one POST request. Non-2xx statuses are responses, not errors.
pub trait Transport: Send + Sync {
    fn post(
        &self,
        url: &str,
        headers: &[(&str, String)],
        body: Vec<u8>,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError>;
}

#[derive(Default)]
pub struct UreqTransport;

impl Transport for UreqTransport {
    fn post(
        &self,
        url: &str,
        headers: &[(&str, String)],
        body: Vec<u8>,
        timeout: Duration,
    ) -> Result<HttpResponse, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let mut req = agent.post(url);
        for (k, v) in headers {
            req = req.header(*k, v.as_str());
        }
        let map = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => TransportError::Timeout,
            ureq::Error::Io(e) => TransportError::Connect(e.to_string()),
            ureq::Error::ConnectionFailed | ureq::Error::HostNotFound => {
                TransportError::Connect(e.to_string())
            }
            other => TransportError::Other(other.to_string()),
        };
        let mut resp = req.send(&body[..]).map_err(map)?;
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .map(str::to_owned);
        let body = resp
            .body_mut()
            .with_config()
            .limit(u64::MAX)
            .read_to_vec()
            .map_err(map)?;
        Ok(HttpResponse {
            status,
            retry_after,
            body,
        })
    }
}

/// Maps an HTTP status (and optional `Retry-After` seconds) to a result.
pub fn classify_status(status: u16, retry_after: Option<&str>) -> Result<(), ProviderError> {
    match status {
        200..=299 => Ok(()),
        429 => Err(ProviderError::RateLimited {
            retry_after: retry_after
                .and_then(|s| s.trim().parse::<f64>().ok())
                .filter(|s| s.is_finite() && *s >= 0.0)
                .map(Duration::from_secs_f64),
        }),
        500..=599 => Err(ProviderError::Transient(format!("HTTP {status}"))),
        _ => Err(ProviderError::Permanent(format!("HTTP {status}"))),
    }
}

/// Endpoint + credential + policy shared by one capability's adapter.
pub struct RemoteClient {
    endpoint: String,
    credential: Option<String>,
    transport: Arc<dyn Transport>,
    retrier: Retrier,
}

impl RemoteClient {
    pub fn new(
        endpoint: impl Into<String>,
        credential: Option<String>,
        transport: Arc<dyn Transport>,
        policy: ProviderPolicy,
        clock: Arc<dyn Clock>,
    ) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_owned(),
            credential,
            transport,
            retrier: Retrier::new(policy, clock),
        }
    }

    /// Posts `body` to `path`, retrying per policy, and parses the reply.
    pub fn call(&self, path: &str, body: &Value) -> Result<Value, ProviderError> {
        let url = format!("{}{}", self.endpoint, path);
        let bytes = serde_json::to_vec(body).map_err(|e| ProviderError::Permanent(e.to_string()))?;
        let mut headers = vec![("Content-Type", "application/json".to_owned())];
        if let Some(c) = &self.credential {
            headers.push(("Authorization", format!("Bearer {c}")));
        }
        let timeout = self.retrier.policy().timeout;
        self.retrier.run(|_| {
            let resp = self
                .transport
                .post(&url, &headers, bytes.clone(), timeout)
                .map_err(|e| match e {
                    TransportError::Timeout => ProviderError::Transient(format!("{url}: timed out")),
                    TransportError::Connect(m) => ProviderError::Transient(format!("{url}: {m}")),
                    TransportError::Other(m) => ProviderError::Permanent(format!("{url}: {m}")),
                })?;
            classify_status(resp.status, resp.retry_after.as_deref())?;
            serde_json::from_slice(&resp.body)
                .map_err(|e| ProviderError::Permanent(format!("{url}: undecodable reply: {e}")))
        })
    }
}

fn bad_reply(what: &str) -> ProviderError {
    ProviderError::Permanent(format!("malformed reply: {what}"))
}

pub fn encode_image(image: &Image) -> String {
    B64.encode(image.to_png())
}

pub fn decode_image(value: &Value) -> Result<Image, ProviderError> {
    let s = value.as_str().ok_or_else(|| bad_reply("image is not a string"))?;
    let bytes = B64.decode(s).map_err(|e| bad_reply(&format!("base64: {e}")))?;
    Image::from_png(&bytes).map_err(|e| bad_reply(&e.to_string()))
}

fn field<'a>(v: &'a Value, key: &str) -> Result<&'a Value, ProviderError> {
    v.get(key).ok_or_else(|| bad_reply(&format!("missing `{key}`")))
}

fn array<'a>(v: &'a Value, key: &str) -> Result<&'a Vec<Value>, ProviderError> {
    field(v, key)?
        .as_array()
        .ok_or_else(|| bad_reply(&format!("`{key}` is not an array")))
}

fn vector(v: &Value) -> Result<EmbeddingVector, ProviderError> {
    let values = v
        .as_array()
        .ok_or_else(|| bad_reply("vector is not an array"))?
        .iter()
        .map(|x| x.as_f64().ok_or_else(|| bad_reply("vector entry is not a number")))
        .collect::<Result<Vec<_>, _>>()?;
    EmbeddingVector::normalized(values)
}

fn expect_count<T>(items: Vec<T>, n: usize, what: &str) -> Result<Vec<T>, ProviderError> {
    if items.len() != n {
        return Err(bad_reply(&format!("expected {n} {what}, got {}", items.len())));
    }
    Ok(items)
}

pub struct RemoteChat {
    client: RemoteClient,
}

impl RemoteChat {
    pub fn new(client: RemoteClient) -> Self {
        Self { client }
    }
}

impl ChatProvider for RemoteChat {
    fn chat(&self, request: &ChatRequest) -> Result<String, ProviderError> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                json!({
                    "role": match m.role {
                        Role::System => "system",
                        Role::User => "user",
                        Role::Assistant => "assistant",
                    },
                    "text": m.text,
                    "images": m.images.iter().map(encode_image).collect::<Vec<_>>(),
                })
            })
            .collect();
        let reply = self.client.call(
            CHAT_PATH,
            &json!({ "task": request.task.to_string(), "messages": messages }),
        )?;
        field(&reply, "text")?
            .as_str()
            .map(str::to_owned)
            .ok_or_else(|| bad_reply("`text` is not a string"))
    }
}

pub struct RemoteImageGenerator {
    client: RemoteClient,
}

impl RemoteImageGenerator {
    pub fn new(client: RemoteClient) -> Self {
        Self { client }
    }
}

impl ImageGenerator for RemoteImageGenerator {
    fn generate_images(&self, request: &ImageRequest, n: usize) -> Result<Vec<Image>, ProviderError> {
        request.validate()?;
        let reply = self.client.call(
            IMAGES_GENERATE_PATH,
            &json!({
                "prompt": request.prompt,
                "reference_images": request.reference_images.iter().map(encode_image).collect::<Vec<_>>(),
                "seed": request.seed,
                "n": n,
            }),
        )?;
        let images = array(&reply, "images")?
            .iter()
            .map(decode_image)
            .collect::<Result<Vec<_>, _>>()?;
        expect_count(images, n, "images")
    }

    fn region_replace(
        &self,
        image: &Image,
        mask: &SegmentationMask,
        request: &ImageRequest,
    ) -> Result<Image, ProviderError> {
        request.validate()?;
        let reply = self.client.call(
            IMAGES_REPLACE_PATH,
            &json!({
                "image": encode_image(image),
                "mask": mask,
                "prompt": request.prompt,
                "seed": request.seed,
            }),
        )?;
        let out = decode_image(field(&reply, "image")?)?;
        if out.dimensions() != image.dimensions() {
            return Err(bad_reply("replaced image changed dimensions"));
        }
        Ok(out)
    }
}

pub struct RemoteVideoGenerator {
    client: RemoteClient,
}

impl RemoteVideoGenerator {
    pub fn new(client: RemoteClient) -> Self {
        Self { client }
    }
}

impl VideoGenerator for RemoteVideoGenerator {
    fn generate_videos(&self, request: &VideoRequest, n: usize) -> Result<Vec<FrameSequence>, ProviderError> {
        request.validate()?;
        let reply = self.client.call(
            VIDEOS_GENERATE_PATH,
            &json!({
                "conditioning_image": encode_image(&request.conditioning_image),
                "prompt": request.prompt,
                "params": GenerationParams::to_wire_json(&request.params),
                "seed": request.seed,
                "frame_count": request.frame_count,
                "fps": request.fps,
                "n": n,
            }),
        )?;
        let clips = array(&reply, "videos")?
            .iter()
            .map(|clip| {
                let fps = field(clip, "fps")?
                    .as_f64()
                    .ok_or_else(|| bad_reply("`fps` is not a number"))?;
                let frames = array(clip, "frames")?
                    .iter()
                    .map(decode_image)
                    .collect::<Result<Vec<_>, _>>()?;
                FrameSequence::new(frames, fps).map_err(|e| bad_reply(&e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        expect_count(clips, n, "videos")
    }
}

pub struct RemoteSegmenter {
    client: RemoteClient,
}

impl RemoteSegmenter {
    pub fn new(client: RemoteClient) -> Self {
        Self { client }
    }
}

impl Segmenter for RemoteSegmenter {
    fn segment(&self, image: &Image) -> Result<Vec<SegmentationMask>, ProviderError> {
        let reply = self
            .client
            .call(SEGMENT_PATH, &json!({ "image": encode_image(image) }))?;
        let masks: Vec<SegmentationMask> = serde_json::from_value(field(&reply, "masks")?.clone())
            .map_err(|e| bad_reply(&e.to_string()))?;
        if masks.iter().any(|m| (m.width, m.height) != image.dimensions()) {
            return Err(bad_reply("mask dimensions differ from the image"));
        }
        Ok(masks)
    }
}

pub struct RemoteEmbedder {
    client: RemoteClient,
    dimension: OnceLock<usize>,
}

impl RemoteEmbedder {
    pub fn new(client: RemoteClient) -> Self {
        Self {
            client,
            dimension: OnceLock::new(),
        }
    }

    fn check(&self, v: EmbeddingVector) -> Result<EmbeddingVector, ProviderError> {
        let d = *self.dimension.get_or_init(|| v.dimension());
        if v.dimension() != d {
            return Err(bad_reply("embedding dimension changed between calls"));
        }
        Ok(v)
    }
}

impl Embedder for RemoteEmbedder {
    /// Zero until the first vector has been received.
    fn dimension(&self) -> usize {
        self.dimension.get().copied().unwrap_or(0)
    }

    fn embed_text(&self, text: &str) -> Result<EmbeddingVector, ProviderError> {
        let reply = self.client.call(EMBED_TEXT_PATH, &json!({ "text": text }))?;
        self.check(vector(field(&reply, "vector")?)?)
    }

    fn embed_images(&self, images: &[Image]) -> Result<Vec<EmbeddingVector>, ProviderError> {
        let reply = self.client.call(
            EMBED_IMAGES_PATH,
            &json!({ "images": images.iter().map(encode_image).collect::<Vec<_>>() }),
        )?;
        let vectors = array(&reply, "vectors")?
            .iter()
            .map(|v| vector(v).and_then(|v| self.check(v)))
            .collect::<Result<Vec<_>, _>>()?;
        expect_count(vectors, images.len(), "vectors")
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Mutex;

    use super::*;
    use crate::providers::policy::tests::FakeClock;
    use crate::providers::{ChatTask, Message};
    use crate::prompt::SlotMap;

    /// URL, headers and body of one request.
    type Seen = (String, Vec<(String, String)>, Value);

    struct Scripted {
        replies: Mutex<Vec<Result<HttpResponse, TransportError>>>,
        seen: Mutex<Vec<Seen>>,
    }

    impl Scripted {
        fn new(mut replies: Vec<Result<HttpResponse, TransportError>>) -> Arc<Self> {
            replies.reverse();
            Arc::new(Self {
                replies: Mutex::new(replies),
                seen: Mutex::new(Vec::new()),
            })
        }
    }

    impl Transport for Scripted {
        fn post(
            &self,
            url: &str,
            headers: &[(&str, String)],
            body: Vec<u8>,
            _timeout: Duration,
        ) -> Result<HttpResponse, TransportError> {
            self.seen.lock().unwrap().push((
                url.to_owned(),
                headers.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
                serde_json::from_slice(&body).unwrap(),
            ));
            self.replies.lock().unwrap().pop().expect("unscripted call")
        }
    }

    fn ok(body: Value) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: 200,
            retry_after: None,
            body: serde_json::to_vec(&body).unwrap(),
        })
    }

    fn status(code: u16, retry_after: Option<&str>) -> Result<HttpResponse, TransportError> {
        Ok(HttpResponse {
            status: code,
            retry_after: retry_after.map(str::to_owned),
            body: b"{}".to_vec(),
        })
    }

    fn client(t: Arc<Scripted>, clock: Arc<FakeClock>) -> RemoteClient {
        let policy = ProviderPolicy {
            max_retries: 3,
            backoff_base: Duration::from_millis(10),
            ..ProviderPolicy::default()
        };
        RemoteClient::new("http://svc/", Some("sekret".into()), t, policy, clock)
    }

    fn ping() -> ChatRequest {
        ChatRequest::new(ChatTask::Ping, vec![Message::user("ping")], SlotMap::new())
    }

    #[test]
    fn status_classification() {
        assert_eq!(classify_status(204, None), Ok(()));
        assert!(matches!(classify_status(503, None), Err(ProviderError::Transient(_))));
        assert!(matches!(classify_status(404, None), Err(ProviderError::Permanent(_))));
        assert_eq!(
            classify_status(429, Some("2")),
            Err(ProviderError::RateLimited {
                retry_after: Some(Duration::from_secs(2))
            })
        );
        assert_eq!(
            classify_status(429, Some("soon")),
            Err(ProviderError::RateLimited { retry_after: None })
        );
    }

    #[test]
    fn chat_retries_transient_and_sends_credential() {
        let t = Scripted::new(vec![
            status(502, None),
            Err(TransportError::Timeout),
            ok(json!({"text": "pong"})),
        ]);
        let clock = Arc::new(FakeClock::new());
        let chat = RemoteChat::new(client(t.clone(), clock.clone()));
        assert_eq!(chat.chat(&ping()).unwrap(), "pong");
        let seen = t.seen.lock().unwrap();
        assert_eq!(seen.len(), 3);
        assert_eq!(seen[0].0, "http://svc/chat");
        assert!(seen[0]
            .1
            .contains(&("Authorization".to_string(), "Bearer sekret".to_string())));
        assert_eq!(seen[0].2["task"], "ping");
        assert_eq!(clock.sleeps.lock().unwrap().len(), 2);
    }

    #[test]
    fn permanent_status_is_not_retried() {
        let t = Scripted::new(vec![status(400, None)]);
        let chat = RemoteChat::new(client(t.clone(), Arc::new(FakeClock::new())));
        assert!(matches!(chat.chat(&ping()), Err(ProviderError::Permanent(_))));
        assert_eq!(t.seen.lock().unwrap().len(), 1);
    }

    #[test]
    fn rate_limit_honours_retry_after() {
        let t = Scripted::new(vec![status(429, Some("3")), ok(json!({"text": "pong"}))]);
        let clock = Arc::new(FakeClock::new());
        let chat = RemoteChat::new(client(t, clock.clone()));
        chat.chat(&ping()).unwrap();
        assert_eq!(*clock.sleeps.lock().unwrap(), vec![Duration::from_secs(3)]);
    }

    #[test]
    fn undecodable_reply_is_permanent() {
        let t = Scripted::new(vec![Ok(HttpResponse {
            status: 200,
            retry_after: None,
            body: b"not json".to_vec(),
        })]);
        let chat = RemoteChat::new(client(t, Arc::new(FakeClock::new())));
        assert!(matches!(chat.chat(&ping()), Err(ProviderError::Permanent(_))));
    }

    #[test]
    fn image_round_trip_through_base64() {
        let img = Image::from_fn(4, 3, |x, y| [x as u8 * 40, y as u8 * 60, 7]);
        let t = Scripted::new(vec![ok(json!({"images": [encode_image(&img), encode_image(&img)]}))]);
        let gen = RemoteImageGenerator::new(client(t.clone(), Arc::new(FakeClock::new())));
        let out = gen
            .generate_images(&ImageRequest::new("a cat", vec![img.clone()], 7), 2)
            .unwrap();
        assert_eq!(out, vec![img.clone(), img.clone()]);
        let seen = t.seen.lock().unwrap();
        assert_eq!(seen[0].2["n"], 2);
        assert_eq!(decode_image(&seen[0].2["reference_images"][0]).unwrap(), img);
    }

    #[test]
    fn wrong_candidate_count_is_rejected() {
        let img = Image::filled(2, 2, [1, 2, 3]);
        let t = Scripted::new(vec![ok(json!({"images": [encode_image(&img)]}))]);
        let gen = RemoteImageGenerator::new(client(t, Arc::new(FakeClock::new())));
        assert!(gen
            .generate_images(&ImageRequest::new("x", vec![], 0), 3)
            .is_err());
    }

    #[test]
    fn embedder_checks_dimensions() {
        let t = Scripted::new(vec![
            ok(json!({"vector": [3.0, 4.0]})),
            ok(json!({"vectors": [[1.0, 0.0, 0.0]]})),
        ]);
        let e = RemoteEmbedder::new(client(t, Arc::new(FakeClock::new())));
        assert_eq!(e.dimension(), 0);
        let v = e.embed_text("hi").unwrap();
        assert!((v.values[0] - 0.6).abs() < 1e-12);
        assert_eq!(e.dimension(), 2);
        assert!(e.embed_images(&[Image::filled(1, 1, [0, 0, 0])]).is_err());
    }

    #[test]
    fn segmenter_decodes_masks() {
        let img = Image::filled(2, 2, [0, 0, 0]);
        let m = SegmentationMask::new("background", 2, 2, vec![true; 4]).unwrap();
        let t = Scripted::new(vec![ok(json!({"masks": [m]}))]);
        let s = RemoteSegmenter::new(client(t, Arc::new(FakeClock::new())));
        assert_eq!(s.segment(&img).unwrap(), vec![m]);
    }

    /// One-shot HTTP/1.1 server answering each connection with the next
    /// canned `(status, body)`.
    fn serve(replies: Vec<(u16, &'static str)>) -> (String, std::thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let mut bodies = Vec::new();
            for (code, body) in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    let lower = line.to_ascii_lowercase();
                    if let Some(v) = lower.strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (addr, handle)
    }

    #[test]
    fn ureq_transport_against_local_server() {
        let (addr, handle) = serve(vec![(503, "{}"), (200, r#"{"text":"pong"}"#)]);
        let policy = ProviderPolicy {
            backoff_base: Duration::from_millis(1),
            timeout: Duration::from_secs(10),
            ..ProviderPolicy::default()
        };
        let c = RemoteClient::new(
            addr,
            None,
            Arc::new(UreqTransport),
            policy,
            Arc::new(FakeClock::new()),
        );
        assert_eq!(RemoteChat::new(c).chat(&ping()).unwrap(), "pong");
        let bodies = handle.join().unwrap();
        assert_eq!(bodies.len(), 2);
        assert!(bodies[1].contains("\"ping\""));
    }

    #[test]
    fn connection_refused_is_transient() {
        let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        let r = UreqTransport.post(
            &format!("http://127.0.0.1:{port}/chat"),
            &[],
            b"{}".to_vec(),
            Duration::from_secs(2),
        );
        assert!(matches!(r, Err(TransportError::Connect(_)) | Err(TransportError::Timeout)));
    }
}
