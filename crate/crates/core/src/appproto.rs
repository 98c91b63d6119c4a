//! HTTP/1.1, HTTP/2 and SPDY-over-QUIC message framing.
//!
//! Sizes drive the simulation; [`encode_message`] and [`decode_message`]
//! also produce real bytes so each framing path can be round-tripped.

use crate::transport::{StackKind, TransportKind};
use crate::{Error, Result};

pub const HTTP1_REQUEST_TEMPLATE_BYTES: u32 = 160;
pub const HTTP1_RESPONSE_HEADER_BYTES: u32 = 256;
pub const COMPRESSED_REQUEST_HEADER_BYTES: u32 = 48;
pub const COMPRESSED_RESPONSE_HEADER_BYTES: u32 = 64;
pub const H2_FRAME_HEADER_BYTES: u32 = 8;
pub const H2_MAX_FRAME_PAYLOAD: u32 = 16_384;
pub const MAX_PATH_LEN: usize = 2_048;
pub const MAX_STREAM_ID: u64 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AppProtocol {
    Http11,
    Http2,
    SpdyOverQuic,
}

impl AppProtocol {
    pub fn for_stack(kind: StackKind) -> Self {
        match kind {
            StackKind::Http2Tcp | StackKind::Http2Ssl => AppProtocol::Http2,
            StackKind::Http1Quic => AppProtocol::Http11,
            StackKind::SpdyQuic => AppProtocol::SpdyOverQuic,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameType {
    Data = 0x0,
    Headers = 0x1,
}

impl FrameType {
    pub fn name(self) -> &'static str {
        match self {
            FrameType::Data => "DATA",
            FrameType::Headers => "HEADERS",
        }
    }
}

pub const FLAG_END_STREAM: u8 = 0x1;
pub const FLAG_END_HEADERS: u8 = 0x4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Http2Frame {
    pub length: u32,
    pub frame_type: FrameType,
    pub flags: u8,
    pub stream_id: u32,
}

impl Http2Frame {
    pub fn wire_size(&self) -> u32 {
        H2_FRAME_HEADER_BYTES + self.length
    }

    /// 16-bit length, type, flags, 32-bit stream id.
    pub fn encode_header(&self) -> [u8; 8] {
        let mut out = [0u8; 8];
        out[..2].copy_from_slice(&(self.length as u16).to_be_bytes());
        out[2] = self.frame_type as u8;
        out[3] = self.flags;
        out[4..].copy_from_slice(&self.stream_id.to_be_bytes());
        out
    }

    pub fn decode_header(bytes: &[u8]) -> Result<Self> {
        let h: &[u8; 8] = bytes
            .get(..8)
            .and_then(|b| b.try_into().ok())
            .ok_or_else(|| Error::invalid("http2 frame", "truncated header"))?;
        let frame_type = match h[2] {
            0x0 => FrameType::Data,
            0x1 => FrameType::Headers,
            t => return Err(Error::invalid("http2 frame", format!("unsupported type {t:#x}"))),
        };
        Ok(Http2Frame {
            length: u32::from(u16::from_be_bytes([h[0], h[1]])),
            frame_type,
            flags: h[3],
            stream_id: u32::from_be_bytes([h[4], h[5], h[6], h[7]]),
        })
    }
}

/// HTTP/2 HEADERS frame around a header block.
pub fn headers_frame(stream_id: u32, header_block: u32, end_stream: bool) -> Http2Frame {
    Http2Frame {
        length: header_block,
        frame_type: FrameType::Headers,
        flags: FLAG_END_HEADERS | if end_stream { FLAG_END_STREAM } else { 0 },
        stream_id,
    }
}

/// How one request or response is laid out on its stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MessagePlan {
    pub protocol: AppProtocol,
    pub header_block: u32,
    pub body: u64,
    /// HTTP/2 only; empty otherwise.
    pub frames: Vec<Http2Frame>,
}

impl MessagePlan {
    /// Application bytes handed to the transport.
    pub fn total_bytes(&self) -> u64 {
        u64::from(self.header_block) + self.body + self.framing_bytes()
    }

    /// Frame headers added by the framing layer.
    pub fn framing_bytes(&self) -> u64 {
        u64::from(H2_FRAME_HEADER_BYTES) * self.frames.len() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ResponseMeta {
    pub status: u16,
    pub content_length: u64,
    pub header_block: u32,
}

pub fn encode_request(kind: StackKind, stream_id: u64, url_path: &str) -> Result<MessagePlan> {
    if url_path.len() > MAX_PATH_LEN {
        return Err(Error::PathTooLong { len: url_path.len(), limit: MAX_PATH_LEN });
    }
    let path_len = url_path.len().max(1) as u32;
    let protocol = AppProtocol::for_stack(kind);
    Ok(match protocol {
        AppProtocol::Http11 => MessagePlan {
            protocol,
            header_block: HTTP1_REQUEST_TEMPLATE_BYTES + path_len,
            body: 0,
            frames: Vec::new(),
        },
        AppProtocol::Http2 => MessagePlan {
            protocol,
            header_block: COMPRESSED_REQUEST_HEADER_BYTES,
            body: 0,
            frames: vec![headers_frame(stream_id as u32, COMPRESSED_REQUEST_HEADER_BYTES, true)],
        },
        AppProtocol::SpdyOverQuic => MessagePlan {
            protocol,
            header_block: COMPRESSED_REQUEST_HEADER_BYTES,
            body: 0,
            frames: Vec::new(),
        },
    })
}

pub fn encode_response_body(kind: StackKind, stream_id: u64, body_len: u64) -> MessagePlan {
    let protocol = AppProtocol::for_stack(kind);
    match protocol {
        AppProtocol::Http11 => MessagePlan {
            protocol,
            header_block: HTTP1_RESPONSE_HEADER_BYTES,
            body: body_len,
            frames: Vec::new(),
        },
        AppProtocol::Http2 => {
            let sid = stream_id as u32;
            let mut frames = vec![headers_frame(sid, COMPRESSED_RESPONSE_HEADER_BYTES, false)];
            let max = u64::from(H2_MAX_FRAME_PAYLOAD);
            let count = body_len.div_ceil(max).max(1);
            for i in 0..count {
                let length = (body_len - i * max).min(max) as u32;
                let last = i + 1 == count;
                frames.push(Http2Frame {
                    length,
                    frame_type: FrameType::Data,
                    flags: if last { FLAG_END_STREAM } else { 0 },
                    stream_id: sid,
                });
            }
            MessagePlan {
                protocol,
                header_block: COMPRESSED_RESPONSE_HEADER_BYTES,
                body: body_len,
                frames,
            }
        }
        AppProtocol::SpdyOverQuic => MessagePlan {
            protocol,
            header_block: COMPRESSED_RESPONSE_HEADER_BYTES,
            body: body_len,
            frames: Vec::new(),
        },
    }
}

/// Hands out client-initiated stream ids.
#[derive(Debug, Clone)]
pub struct StreamIdAllocator {
    single_stream: bool,
    next: u64,
}

impl StreamIdAllocator {
    /// HTTP/1.1 over TCP uses one byte stream, id 0; everything else
    /// allocates odd ids.
    pub fn new(protocol: AppProtocol, transport: TransportKind) -> Self {
        StreamIdAllocator {
            single_stream: protocol == AppProtocol::Http11 && transport == TransportKind::Tcp,
            next: 1,
        }
    }

    pub fn for_stack(kind: StackKind) -> Self {
        Self::new(AppProtocol::for_stack(kind), kind.transport())
    }

    pub fn next_stream_id(&mut self) -> Result<u64> {
        if self.single_stream {
            return Ok(0);
        }
        if self.next > MAX_STREAM_ID {
            return Err(Error::StreamIdsExhausted);
        }
        let id = self.next;
        self.next += 2;
        Ok(id)
    }
}

/// Header block text or model bytes of exactly `plan.header_block` bytes.
fn header_block_bytes(plan: &MessagePlan, request_path: Option<&str>) -> Vec<u8> {
    let mut text = match (plan.protocol, request_path) {
        (AppProtocol::Http11, Some(path)) => format!(
            "GET {path} HTTP/1.1\r\nHost: media.example.net\r\nUser-Agent: dashsim/0.1\r\nAccept: */*\r\nConnection: keep-alive\r\nX-Pad: "
        ),
        (AppProtocol::Http11, None) => format!(
            "HTTP/1.1 200 OK\r\nContent-Type: video/mp4\r\nContent-Length: {}\r\nConnection: keep-alive\r\nX-Pad: ",
            plan.body
        ),
        _ => format!("len={};", plan.body),
    }
    .into_bytes();
    let target = plan.header_block as usize;
    if plan.protocol == AppProtocol::Http11 {
        assert!(text.len() + 4 <= target, "template longer than the modeled size");
        text.resize(target - 4, b'.');
        text.extend_from_slice(b"\r\n\r\n");
    } else {
        text.resize(target, 0);
    }
    text
}

/// Serializes a message with `body` as payload.
pub fn encode_message(plan: &MessagePlan, request_path: Option<&str>, body: &[u8]) -> Vec<u8> {
    assert_eq!(body.len() as u64, plan.body, "body length must match the plan");
    let header = header_block_bytes(plan, request_path);
    if plan.frames.is_empty() {
        let mut out = header;
        out.extend_from_slice(body);
        return out;
    }
    let mut out = Vec::with_capacity(plan.total_bytes() as usize);
    let mut pos = 0usize;
    for f in &plan.frames {
        out.extend_from_slice(&f.encode_header());
        match f.frame_type {
            FrameType::Headers => out.extend_from_slice(&header),
            FrameType::Data => {
                out.extend_from_slice(&body[pos..pos + f.length as usize]);
                pos += f.length as usize;
            }
        }
    }
    out
}

/// A decoded message: header block and body bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedMessage {
    pub header_block: Vec<u8>,
    pub body: Vec<u8>,
    pub frames: Vec<Http2Frame>,
}

/// Parses bytes produced by [`encode_message`]. `header_block` is the
/// modeled block size for the non-HTTP/2 protocols.
pub fn decode_message(protocol: AppProtocol, bytes: &[u8], header_block: u32) -> Result<DecodedMessage> {
    if protocol != AppProtocol::Http2 {
        let split = header_block as usize;
        if bytes.len() < split {
            return Err(Error::invalid("message", "shorter than its header block"));
        }
        return Ok(DecodedMessage {
            header_block: bytes[..split].to_vec(),
            body: bytes[split..].to_vec(),
            frames: Vec::new(),
        });
    }
    let mut out = DecodedMessage { header_block: Vec::new(), body: Vec::new(), frames: Vec::new() };
    let mut rest = bytes;
    while !rest.is_empty() {
        let f = Http2Frame::decode_header(rest)?;
        let end = 8 + f.length as usize;
        let payload = rest
            .get(8..end)
            .ok_or_else(|| Error::invalid("http2 frame", "truncated payload"))?;
        match f.frame_type {
            FrameType::Headers => out.header_block.extend_from_slice(payload),
            FrameType::Data => out.body.extend_from_slice(payload),
        }
        out.frames.push(f);
        rest = &rest[end..];
    }
    Ok(out)
}

/// Reads status and content length from an HTTP/1.1 response header block.
pub fn parse_http1_response(header: &[u8]) -> Result<ResponseMeta> {
    let text = std::str::from_utf8(header)
        .map_err(|_| Error::invalid("http/1.1 response", "header is not UTF-8"))?;
    let status = text
        .strip_prefix("HTTP/1.1 ")
        .and_then(|s| s.get(..3))
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::invalid("http/1.1 response", "missing status line"))?;
    let content_length = text
        .lines()
        .find_map(|l| l.strip_prefix("Content-Length: "))
        .and_then(|v| v.trim().parse().ok())
        .ok_or_else(|| Error::invalid("http/1.1 response", "missing Content-Length"))?;
    Ok(ResponseMeta { status, content_length, header_block: header.len() as u32 })
}
