//! Binary framing for the TCP transport.
//!
//! ```text
//! +-------+------+-------------+---------+
//! | DPSG  | type | payload_len | payload |
//! | 4 B   | u8   | u32 LE      |         |
//! +-------+------+-------------+---------+
//! ```
//!
//! | type | name     | payload                                               |
//! |------|----------|-------------------------------------------------------|
//! | 0    | PULL_REQ | empty                                                 |
//! | 1    | MODEL    | version u64, dim u64, dim x f64                       |
//! | 2    | PUSH     | worker_id u32, base_version u64, dim u64, dim x f64   |
//! | 3    | SHUTDOWN | empty                                                 |
//!
//! All integers and floats are little-endian. A vector of dimension 0 is
//! rejected.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAGIC: [u8; 4] = *b"DPSG";
pub const HEADER_LEN: usize = 9;
/// Frames above this size are refused before any allocation.
pub const MAX_PAYLOAD: u32 = 1 << 30;

const PULL_REQ: u8 = 0;
const MODEL: u8 = 1;
const PUSH: u8 = 2;
const SHUTDOWN: u8 = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum Frame {
    PullReq,
    Model { version: u64, values: Vec<f64> },
    Push { worker_id: u32, base_version: u64, delta: Vec<f64> },
    Shutdown,
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("truncated frame: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("payload length {len} inconsistent with message type {msg_type}")]
    LengthMismatch { msg_type: u8, len: u32 },
    #[error("vector of dimension 0")]
    ZeroDim,
    #[error("payload of {0} bytes exceeds limit")]
    TooLarge(u32),
    #[error("connection closed")]
    Closed,
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl Frame {
    fn msg_type(&self) -> u8 {
        match self {
            Frame::PullReq => PULL_REQ,
            Frame::Model { .. } => MODEL,
            Frame::Push { .. } => PUSH,
            Frame::Shutdown => SHUTDOWN,
        }
    }
}

fn put_vec(buf: &mut Vec<u8>, values: &[f64]) {
    buf.extend_from_slice(&(values.len() as u64).to_le_bytes());
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode(frame: &Frame) -> Result<Vec<u8>, WireError> {
    let mut payload = Vec::new();
    match frame {
        Frame::PullReq | Frame::Shutdown => {}
        Frame::Model { version, values } => {
            if values.is_empty() {
                return Err(WireError::ZeroDim);
            }
            payload.extend_from_slice(&version.to_le_bytes());
            put_vec(&mut payload, values);
        }
        Frame::Push {
            worker_id,
            base_version,
            delta,
        } => {
            if delta.is_empty() {
                return Err(WireError::ZeroDim);
            }
            payload.extend_from_slice(&worker_id.to_le_bytes());
            payload.extend_from_slice(&base_version.to_le_bytes());
            put_vec(&mut payload, delta);
        }
    }
    if payload.len() > MAX_PAYLOAD as usize {
        return Err(WireError::TooLarge(payload.len() as u32));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(frame.msg_type());
    out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take<const N: usize>(&mut self) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.buf[self.pos..self.pos + N]);
        self.pos += N;
        a
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take())
    }

    fn f64s(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| f64::from_le_bytes(self.take())).collect()
    }
}

fn parse_header(header: &[u8]) -> Result<(u8, u32), WireError> {
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    let msg_type = header[4];
    if msg_type > SHUTDOWN {
        return Err(WireError::UnknownType(msg_type));
    }
    let len = u32::from_le_bytes(header[5..9].try_into().unwrap());
    if len > MAX_PAYLOAD {
        return Err(WireError::TooLarge(len));
    }
    Ok((msg_type, len))
}

fn parse_payload(msg_type: u8, payload: &[u8]) -> Result<Frame, WireError> {
    let len = payload.len() as u32;
    let mismatch = WireError::LengthMismatch { msg_type, len };
    let mut c = Cursor { buf: payload, pos: 0 };
    match msg_type {
        PULL_REQ | SHUTDOWN => {
            if len != 0 {
                return Err(mismatch);
            }
            Ok(if msg_type == PULL_REQ {
                Frame::PullReq
            } else {
                Frame::Shutdown
            })
        }
        MODEL | PUSH => {
            let prefix = if msg_type == MODEL { 16 } else { 20 };
            if payload.len() < prefix {
                return Err(mismatch);
            }
            let (worker_id, version) = if msg_type == MODEL {
                (0, c.u64())
            } else {
                (c.u32(), c.u64())
            };
            let dim = c.u64();
            if dim == 0 {
                return Err(WireError::ZeroDim);
            }
            let expected = dim
                .checked_mul(8)
                .and_then(|b| b.checked_add(prefix as u64));
            if expected != Some(payload.len() as u64) {
                return Err(mismatch);
            }
            let values = c.f64s(dim as usize);
            Ok(if msg_type == MODEL {
                Frame::Model { version, values }
            } else {
                Frame::Push {
                    worker_id,
                    base_version: version,
                    delta: values,
                }
            })
        }
        other => Err(WireError::UnknownType(other)),
    }
}

/// Decode one frame from the front of `buf`, returning it with the number
/// of bytes consumed.
pub fn decode(buf: &[u8]) -> Result<(Frame, usize), WireError> {
    if buf.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            got: buf.len(),
        });
    }
    let (msg_type, len) = parse_header(&buf[..HEADER_LEN])?;
    let total = HEADER_LEN + len as usize;
    if buf.len() < total {
        return Err(WireError::Truncated {
            needed: total,
            got: buf.len(),
        });
    }
    Ok((parse_payload(msg_type, &buf[HEADER_LEN..total])?, total))
}

pub fn read_frame(r: &mut impl Read) -> Result<Frame, WireError> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Err(WireError::Closed),
            Ok(0) => {
                return Err(WireError::Truncated {
                    needed: HEADER_LEN,
                    got,
                })
            }
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (msg_type, len) = parse_header(&header)?;
    let mut payload = vec![0u8; len as usize];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => WireError::Truncated {
            needed: HEADER_LEN + len as usize,
            got: HEADER_LEN,
        },
        _ => e.into(),
    })?;
    parse_payload(msg_type, &payload)
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<(), WireError> {
    w.write_all(&encode(frame)?)?;
    w.flush()?;
    Ok(())
}
