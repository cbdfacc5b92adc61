//! Out-of-process comparator.
//!
//! Request frame: `u64` little-endian payload length, then the payload:
//! magic `CMPR`, `u32` version, and two images, each as `u32` height, width,
//! channels followed by planar `f64` little-endian pixels. Reply: one
//! little-endian `f64` score in [0, 1].

use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::process::{Command, Stdio};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{CaptureKind, FaceImage, ImageShape};

pub const WIRE_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"CMPR";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    /// `host:port` of a listening scorer.
    Tcp(String),
    /// Program that reads one request on stdin and writes the reply to
    /// stdout. An argument equal to `{request}` is replaced by the path of a
    /// file holding the request instead.
    Command { program: String, args: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExternalBackend {
    pub endpoint: Endpoint,
    pub timeout_ms: u64,
}

fn put_image(out: &mut Vec<u8>, img: &FaceImage) {
    let s = img.shape();
    for d in [s.height, s.width, s.channels] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in img.pixels() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Full request frame, length prefix included.
pub fn encode_request(a: &FaceImage, b: &FaceImage) -> Vec<u8> {
    let mut payload = Vec::new();
    payload.extend_from_slice(MAGIC);
    payload.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    put_image(&mut payload, a);
    put_image(&mut payload, b);
    let mut out = (payload.len() as u64).to_le_bytes().to_vec();
    out.extend(payload);
    out
}

/// Parses a request payload (without the length prefix).
pub fn decode_request(payload: &[u8]) -> Result<(FaceImage, FaceImage)> {
    let bad = |m: &str| Error::Backend(format!("malformed request: {m}"));
    if payload.len() < 8 || &payload[..4] != MAGIC {
        return Err(bad("magic"));
    }
    let version = u32::from_le_bytes(payload[4..8].try_into().unwrap());
    if version != WIRE_VERSION {
        return Err(bad("version"));
    }
    let mut rest = &payload[8..];
    let mut take_image = || -> Result<FaceImage> {
        if rest.len() < 12 {
            return Err(bad("truncated header"));
        }
        let dims: Vec<usize> = rest[..12]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        let shape = ImageShape::new(dims[0], dims[1], dims[2]);
        let bytes = shape.len() * 8;
        if rest.len() < 12 + bytes {
            return Err(bad("truncated pixels"));
        }
        let px = rest[12..12 + bytes]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        rest = &rest[12 + bytes..];
        FaceImage::new(shape, px, Vec::new(), CaptureKind::Document)
    };
    let a = take_image()?;
    let b = take_image()?;
    Ok((a, b))
}

/// Reads one framed request from `stream`, scores it and writes the reply.
pub fn serve_one<S: Read + Write>(stream: &mut S, score: impl Fn(&FaceImage, &FaceImage) -> f64) -> Result<()> {
    let io = |e: std::io::Error| Error::Backend(e.to_string());
    let mut len = [0u8; 8];
    stream.read_exact(&mut len).map_err(io)?;
    let mut payload = vec![0u8; u64::from_le_bytes(len) as usize];
    stream.read_exact(&mut payload).map_err(io)?;
    let (a, b) = decode_request(&payload)?;
    stream.write_all(&score(&a, &b).to_le_bytes()).map_err(io)?;
    stream.flush().map_err(io)
}

fn parse_reply(bytes: &[u8]) -> Result<f64> {
    let arr: [u8; 8] = bytes
        .get(..8)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::Backend(format!("reply has {} bytes, expected 8", bytes.len())))?;
    let v = f64::from_le_bytes(arr);
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Backend(format!("score {v} outside [0, 1]")));
    }
    Ok(v)
}

impl ExternalBackend {
    pub fn score(&self, a: &FaceImage, b: &FaceImage) -> Result<f64> {
        let request = encode_request(a, b);
        let timeout = Duration::from_millis(self.timeout_ms.max(1));
        let fail = |what: &str, e: std::io::Error| Error::Backend(format!("{what}: {e}"));
        match &self.endpoint {
            Endpoint::Tcp(addr) => {
                let sock = addr
                    .to_socket_addrs()
                    .map_err(|e| fail(addr, e))?
                    .next()
                    .ok_or_else(|| Error::Backend(format!("{addr}: no address")))?;
                let mut stream = TcpStream::connect_timeout(&sock, timeout).map_err(|e| fail(addr, e))?;
                stream.set_read_timeout(Some(timeout)).map_err(|e| fail(addr, e))?;
                stream.set_write_timeout(Some(timeout)).map_err(|e| fail(addr, e))?;
                stream.write_all(&request).map_err(|e| fail(addr, e))?;
                let mut reply = [0u8; 8];
                stream.read_exact(&mut reply).map_err(|e| fail(addr, e))?;
                parse_reply(&reply)
            }
            Endpoint::Command { program, args } => {
                let file_mode = args.iter().any(|a| a == "{request}");
                let mut request_file: Option<PathBuf> = None;
                let args: Vec<String> = if file_mode {
                    let path = std::env::temp_dir().join(format!("cidmad-request-{}.bin", std::process::id()));
                    std::fs::write(&path, &request).map_err(|e| fail("request file", e))?;
                    let p = path.to_string_lossy().into_owned();
                    request_file = Some(path);
                    args.iter().map(|a| if a == "{request}" { p.clone() } else { a.clone() }).collect()
                } else {
                    args.clone()
                };
                let mut child = Command::new(program)
                    .args(&args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::null())
                    .spawn()
                    .map_err(|e| fail(program, e))?;
                {
                    let mut stdin = child.stdin.take().expect("piped stdin");
                    if !file_mode {
                        stdin.write_all(&request).map_err(|e| fail(program, e))?;
                    }
                }
                let out = child.wait_with_output().map_err(|e| fail(program, e))?;
                if let Some(p) = request_file {
                    let _ = std::fs::remove_file(p);
                }
                if !out.status.success() {
                    return Err(Error::Backend(format!("{program} exited with {}", out.status)));
                }
                parse_reply(&out.stdout)
            }
        }
    }
}
