//! Line-delimited JSON protocol spoken with external super-resolution
//! processes over their standard streams.
//!
//! The backend announces itself with one handshake line, then answers each
//! request line with exactly one response line carrying the same id. Only
//! one request is in flight per process.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BackendKind, BackendSpec, CodecError, Upscaler, BACKEND_SCALE};
use crate::image::Image16;
use crate::pngio::{load_png16, save_png16};
use crate::resample::{resize_bicubic, ResizeSpec};

pub const PROTOCOL_VERSION: &str = "sr-backend/1";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("backend reported error: {0}")]
    Backend(String),
    #[error("no response within {0:?}")]
    Timeout(Duration),
    #[error("could not start backend {command:?}: {source}")]
    Spawn {
        command: Vec<String>,
        source: std::io::Error,
    },
    #[error("backend stream error: {0}")]
    Io(#[from] std::io::Error),
}

impl BackendError {
    /// Whether the process can still be trusted with further requests.
    fn process_usable(&self) -> bool {
        matches!(self, BackendError::Backend(_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: String,
    pub scales: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpscaleRequest {
    pub id: String,
    pub op: String,
    pub input: PathBuf,
    pub output: PathBuf,
    pub scale: u32,
    pub steps: u32,
    pub guidance_scale: f64,
    pub seed: Option<u64>,
}

impl UpscaleRequest {
    pub fn new(id: impl Into<String>, input: PathBuf, output: PathBuf, spec: &BackendSpec) -> Self {
        Self {
            id: id.into(),
            op: "upscale".into(),
            input,
            output,
            scale: BACKEND_SCALE,
            steps: spec.steps,
            guidance_scale: spec.guidance_scale,
            seed: spec.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UpscaleStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpscaleResponse {
    pub id: Option<String>,
    pub status: UpscaleStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// A running backend process that has completed its handshake.
pub struct ExternalBackend {
    child: Child,
    stdin: Option<ChildStdin>,
    lines: Receiver<std::io::Result<String>>,
    scales: Vec<u32>,
    timeout: Duration,
}

impl std::fmt::Debug for ExternalBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalBackend")
            .field("pid", &self.child.id())
            .field("scales", &self.scales)
            .finish()
    }
}

impl ExternalBackend {
    pub fn spawn(spec: &BackendSpec) -> Result<Self, BackendError> {
        let BackendKind::ExternalProcess { command } = &spec.kind else {
            return Err(BackendError::Protocol("backend spec is not an external process".into()));
        };
        let (program, args) = command
            .split_first()
            .ok_or_else(|| BackendError::Protocol("empty backend command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|source| BackendError::Spawn {
                command: command.clone(),
                source,
            })?;
        let stdin = child.stdin.take();
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut backend = Self {
            child,
            stdin,
            lines: rx,
            scales: Vec::new(),
            timeout: Duration::from_secs(spec.timeout_secs.max(1)),
        };
        let line = backend.next_line()?;
        let handshake: Handshake = serde_json::from_str(&line)
            .map_err(|e| BackendError::Protocol(format!("bad handshake {line:?}: {e}")))?;
        if handshake.protocol != PROTOCOL_VERSION {
            return Err(BackendError::Protocol(format!(
                "unsupported protocol {:?}",
                handshake.protocol
            )));
        }
        if !handshake.scales.contains(&BACKEND_SCALE) {
            return Err(BackendError::Protocol(format!(
                "backend does not offer scale {BACKEND_SCALE}: {:?}",
                handshake.scales
            )));
        }
        backend.scales = handshake.scales;
        Ok(backend)
    }

    pub fn scales(&self) -> &[u32] {
        &self.scales
    }

    fn next_line(&mut self) -> Result<String, BackendError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(BackendError::Io(e)),
            Err(RecvTimeoutError::Timeout) => Err(BackendError::Timeout(self.timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(BackendError::Protocol("backend closed its output".into()))
            }
        }
    }

    /// Sends one request and waits for the matching response.
    ///
    /// A response with status `error` becomes [`BackendError::Backend`]; a
    /// malformed line or mismatched id is a [`BackendError::Protocol`].
    pub fn call(&mut self, request: &UpscaleRequest) -> Result<UpscaleResponse, BackendError> {
        if request.scale != BACKEND_SCALE || !self.scales.contains(&request.scale) {
            return Err(BackendError::Protocol(format!(
                "refusing to send scale {}",
                request.scale
            )));
        }
        let mut line = serde_json::to_string(request).expect("request serialises");
        line.push('\n');
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| BackendError::Protocol("backend input closed".into()))?;
        stdin.write_all(line.as_bytes())?;
        stdin.flush()?;

        let reply = self.next_line()?;
        let response: UpscaleResponse = serde_json::from_str(&reply)
            .map_err(|e| BackendError::Protocol(format!("bad response {reply:?}: {e}")))?;
        if response.id.as_deref() != Some(request.id.as_str()) {
            return Err(BackendError::Protocol(format!(
                "response id {:?} does not match request {:?}",
                response.id, request.id
            )));
        }
        match response.status {
            UpscaleStatus::Ok => {
                if !request.output.is_file() {
                    return Err(BackendError::Protocol(format!(
                        "backend reported ok but {} is missing",
                        request.output.display()
                    )));
                }
                Ok(response)
            }
            UpscaleStatus::Error => Err(BackendError::Backend(
                response.message.unwrap_or_else(|| "unspecified error".into()),
            )),
        }
    }
}

impl Drop for ExternalBackend {
    fn drop(&mut self) {
        // closing stdin asks the backend to exit
        self.stdin.take();
        let deadline = Instant::now() + Duration::from_secs(2);
        while Instant::now() < deadline {
            if let Ok(Some(_)) = self.child.try_wait() {
                return;
            }
            thread::sleep(Duration::from_millis(10));
        }
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// [`Upscaler`] that round-trips each step through PNG files and a backend process.
pub struct ExternalUpscaler {
    spec: BackendSpec,
    backend: Option<ExternalBackend>,
    scratch: tempfile::TempDir,
}

impl ExternalUpscaler {
    pub fn new(spec: BackendSpec) -> Result<Self, CodecError> {
        spec.validate()?;
        Ok(Self {
            spec,
            backend: None,
            scratch: tempfile::tempdir()?,
        })
    }

    fn backend(&mut self) -> Result<&mut ExternalBackend, BackendError> {
        if self.backend.is_none() {
            self.backend = Some(ExternalBackend::spawn(&self.spec)?);
        }
        Ok(self.backend.as_mut().expect("just spawned"))
    }
}

impl Upscaler for ExternalUpscaler {
    fn upscale_x2(&mut self, img: &Image16, image_id: &str, step: u32) -> Result<Image16, CodecError> {
        let stem: String = image_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
            .collect();
        let input = self.scratch.path().join(format!("{stem}.step{step}.in.png"));
        let output = self.scratch.path().join(format!("{stem}.step{step}.out.png"));
        save_png16(img, &input)?;
        let _ = std::fs::remove_file(&output);

        let mut request = UpscaleRequest::new(format!("{image_id}#{step}"), input.clone(), output.clone(), &self.spec);
        request.seed = self.spec.image_seed(image_id);
        let result = self.backend().and_then(|b| b.call(&request));
        if let Err(e) = &result {
            if !e.process_usable() {
                self.backend = None;
            }
        }
        result?;
        let out = load_png16(&output)?;
        let _ = std::fs::remove_file(&input);
        let _ = std::fs::remove_file(&output);
        Ok(out)
    }
}

/// Serves the protocol on the given streams using bicubic 2x upscaling.
///
/// This is the reference backend for exercising the host without a model.
/// Malformed request lines get an error reply with a null id; the loop ends
/// when the input closes.
pub fn serve_stub_backend(input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
    let handshake = Handshake {
        protocol: PROTOCOL_VERSION.into(),
        scales: vec![BACKEND_SCALE],
    };
    writeln!(output, "{}", serde_json::to_string(&handshake)?)?;
    output.flush()?;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match serde_json::from_str::<UpscaleRequest>(&line) {
            Ok(req) => match stub_upscale(&req) {
                Ok(()) => UpscaleResponse {
                    id: Some(req.id),
                    status: UpscaleStatus::Ok,
                    message: None,
                },
                Err(message) => UpscaleResponse {
                    id: Some(req.id),
                    status: UpscaleStatus::Error,
                    message: Some(message),
                },
            },
            Err(e) => UpscaleResponse {
                id: serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|id| id.as_str()).map(str::to_owned)),
                status: UpscaleStatus::Error,
                message: Some(format!("malformed request: {e}")),
            },
        };
        writeln!(output, "{}", serde_json::to_string(&response)?)?;
        output.flush()?;
    }
    Ok(())
}

fn stub_upscale(req: &UpscaleRequest) -> Result<(), String> {
    if req.op != "upscale" {
        return Err(format!("unknown op {:?}", req.op));
    }
    if req.scale != BACKEND_SCALE {
        return Err(format!("unsupported scale {}", req.scale));
    }
    let img = load_png16(&req.input).map_err(|e| e.to_string())?;
    let (w, h) = img.dimensions();
    let out = resize_bicubic(&img, &ResizeSpec::new(w * 2, h * 2));
    save_png16(&out, &req.output).map_err(|e| e.to_string())?;
    Ok(())
}
