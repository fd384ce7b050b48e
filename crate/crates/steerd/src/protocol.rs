//! Wire format. A session starts with a fixed 12-byte handshake from the
//! client, answered by the server's own handshake plus a status byte. After
//! that every message is a frame: command byte, u32 payload length, payload.
//! Integers are little-endian, floats IEEE-754 binary64.

use std::io::{Cursor, Read, Write};

use byteorder::{LittleEndian as LE, ReadBytesExt, WriteBytesExt};
use flate2::read::ZlibDecoder;
use flate2::write::ZlibEncoder;
use flate2::Compression;
use slwn_core::geometry::{Aabb, Face};
use slwn_core::hiergrid::GridId;
use slwn_core::solver::BoundaryKind;
use slwn_core::window::{CellRecord, CellStream, Quantity, WindowQuery};

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SLWN";
pub const VERSION: u16 = 1;
pub const PROBE: u32 = 0x0102_0304;
pub const HANDSHAKE_LEN: usize = 12;
/// Largest accepted payload.
pub const MAX_FRAME: usize = 64 << 20;
/// Stream bodies above this size are deflated.
pub const COMPRESS_ABOVE: usize = 64 << 10;
pub const FRAME_HEADER_LEN: usize = 5;

pub mod cmd {
    pub const VISUALIZE: u8 = b'V';
    pub const STEER: u8 = b'S';
    pub const METRICS: u8 = b'M';
    pub const QUIT: u8 = b'Q';
    pub const STREAM: u8 = b'C';
    pub const ACK: u8 = b'A';
    pub const REJECT: u8 = b'R';
    pub const ERROR: u8 = b'E';
    pub const REPORT: u8 = b'J';
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Handshake {
    pub magic: [u8; 4],
    pub version: u16,
    /// The probe value exactly as the peer wrote it.
    pub probe: [u8; 4],
    pub int_size: u8,
    pub float_size: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum HandshakeStatus {
    Ok = 0,
    BadMagic = 1,
    Version = 2,
    Endianness = 3,
    TypeSizes = 4,
}

impl HandshakeStatus {
    pub fn from_code(c: u8) -> Option<Self> {
        use HandshakeStatus::*;
        [Ok, BadMagic, Version, Endianness, TypeSizes]
            .into_iter()
            .find(|s| *s as u8 == c)
    }
}

impl Handshake {
    /// The handshake of this process.
    pub fn local() -> Self {
        Self {
            magic: MAGIC,
            version: VERSION,
            probe: PROBE.to_ne_bytes(),
            int_size: std::mem::size_of::<i32>() as u8,
            float_size: std::mem::size_of::<f64>() as u8,
        }
    }

    pub fn encode(&self) -> [u8; HANDSHAKE_LEN] {
        let mut b = [0u8; HANDSHAKE_LEN];
        b[..4].copy_from_slice(&self.magic);
        b[4..6].copy_from_slice(&self.version.to_le_bytes());
        b[6..10].copy_from_slice(&self.probe);
        b[10] = self.int_size;
        b[11] = self.float_size;
        b
    }

    pub fn decode(b: &[u8]) -> Result<Self> {
        if b.len() != HANDSHAKE_LEN {
            return Err(Error::Protocol(format!(
                "handshake must be {HANDSHAKE_LEN} bytes, got {}",
                b.len()
            )));
        }
        Ok(Self {
            magic: b[..4].try_into().unwrap(),
            version: u16::from_le_bytes([b[4], b[5]]),
            probe: b[6..10].try_into().unwrap(),
            int_size: b[10],
            float_size: b[11],
        })
    }

    /// Whether a peer sending this handshake can talk to us.
    pub fn check(&self) -> HandshakeStatus {
        if self.magic != MAGIC {
            HandshakeStatus::BadMagic
        } else if self.version != VERSION {
            HandshakeStatus::Version
        } else if self.probe != PROBE.to_le_bytes() {
            HandshakeStatus::Endianness
        } else if self.int_size != 4 || self.float_size != 8 {
            HandshakeStatus::TypeSizes
        } else {
            HandshakeStatus::Ok
        }
    }
}

/// Server side: checks the client's bytes, returns the reply to send.
pub fn answer_handshake(client: &[u8]) -> (Vec<u8>, HandshakeStatus) {
    let status = match Handshake::decode(client) {
        Ok(h) => h.check(),
        Err(_) => HandshakeStatus::BadMagic,
    };
    let mut reply = Handshake::local().encode().to_vec();
    reply.push(status as u8);
    (reply, status)
}

/// Client side: validates the server's reply.
pub fn check_handshake_reply(reply: &[u8]) -> Result<()> {
    if reply.len() != HANDSHAKE_LEN + 1 {
        return Err(Error::Protocol("short handshake reply".into()));
    }
    let server = Handshake::decode(&reply[..HANDSHAKE_LEN])?.check();
    if server != HandshakeStatus::Ok {
        return Err(Error::Handshake(server));
    }
    match HandshakeStatus::from_code(reply[HANDSHAKE_LEN]) {
        Some(HandshakeStatus::Ok) => Ok(()),
        Some(s) => Err(Error::Handshake(s)),
        None => Err(Error::Protocol(format!(
            "unknown handshake status {}",
            reply[HANDSHAKE_LEN]
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub command: u8,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(command: u8, payload: Vec<u8>) -> Self {
        Self { command, payload }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_LEN + self.payload.len());
        out.push(self.command);
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parses one complete frame; trailing bytes are an error.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FRAME_HEADER_LEN {
            return Err(Error::Protocol("truncated frame header".into()));
        }
        let len = u32::from_le_bytes(bytes[1..5].try_into().unwrap()) as usize;
        check_len(len)?;
        if bytes.len() - FRAME_HEADER_LEN != len {
            return Err(Error::Protocol(format!(
                "frame length {len} does not match payload size {}",
                bytes.len() - FRAME_HEADER_LEN
            )));
        }
        Ok(Self::new(bytes[0], bytes[FRAME_HEADER_LEN..].to_vec()))
    }
}

fn check_len(len: usize) -> Result<()> {
    if len > MAX_FRAME {
        Err(Error::FrameTooLarge(len))
    } else {
        Ok(())
    }
}

/// Reads one frame; `None` on a clean end of stream before the first byte.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Frame>> {
    let mut head = [0u8; FRAME_HEADER_LEN];
    let mut got = 0;
    while got < head.len() {
        match r.read(&mut head[got..])? {
            0 if got == 0 => return Ok(None),
            0 => {
                return Err(Error::Protocol(
                    "connection closed inside a frame header".into(),
                ))
            }
            n => got += n,
        }
    }
    let len = u32::from_le_bytes(head[1..5].try_into().unwrap()) as usize;
    check_len(len)?;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Ok(Some(Frame::new(head[0], payload)))
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()?;
    Ok(())
}

fn truncated(e: std::io::Error) -> Error {
    Error::Protocol(format!("malformed payload: {e}"))
}

fn finish(c: &Cursor<&[u8]>) -> Result<()> {
    if c.position() as usize != c.get_ref().len() {
        return Err(Error::Protocol("trailing bytes in payload".into()));
    }
    Ok(())
}

fn put_box(out: &mut Vec<u8>, b: &Aabb) {
    for v in b.min.iter().chain(&b.max) {
        out.write_f64::<LE>(*v).unwrap();
    }
}

fn get_box(c: &mut Cursor<&[u8]>) -> Result<Aabb> {
    let mut v = [0.0; 6];
    for x in &mut v {
        *x = c.read_f64::<LE>().map_err(truncated)?;
    }
    let b = Aabb::new([v[0], v[1], v[2]], [v[3], v[4], v[5]]);
    if v.iter().any(|x| !x.is_finite()) || (0..3).any(|a| b.min[a] > b.max[a]) {
        return Err(Error::Protocol("invalid bounding box".into()));
    }
    Ok(b)
}

/// A 'V' request. `max_cells == 0` asks for the server's default budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VizRequest {
    /// 0 for the main simulation, otherwise a sub-simulation id.
    pub source: u32,
    pub bbox: Aabb,
    pub max_cells: u32,
    pub quantity: Quantity,
}

impl VizRequest {
    pub fn new(bbox: Aabb, max_cells: u32, quantity: Quantity) -> Self {
        Self {
            source: 0,
            bbox,
            max_cells,
            quantity,
        }
    }

    pub fn query(&self, default_budget: u32) -> WindowQuery {
        let budget = if self.max_cells == 0 {
            default_budget
        } else {
            self.max_cells
        };
        WindowQuery::new(self.bbox, budget, self.quantity)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(57);
        out.write_u32::<LE>(self.source).unwrap();
        put_box(&mut out, &self.bbox);
        out.write_u32::<LE>(self.max_cells).unwrap();
        out.push(self.quantity.code());
        out
    }

    pub fn decode(p: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(p);
        let source = c.read_u32::<LE>().map_err(truncated)?;
        let bbox = get_box(&mut c)?;
        let max_cells = c.read_u32::<LE>().map_err(truncated)?;
        let code = c.read_u8().map_err(truncated)?;
        let quantity = Quantity::from_code(code)
            .ok_or_else(|| Error::Protocol(format!("unknown quantity {code}")))?;
        finish(&c)?;
        Ok(Self {
            source,
            bbox,
            max_cells,
            quantity,
        })
    }

    pub fn frame(&self) -> Frame {
        Frame::new(cmd::VISUALIZE, self.encode())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SteerCommand {
    SetBoundary { face: Face, kind: BoundaryKind },
    Refine { grid: GridId },
    RefineRegion { region: Aabb },
    SetCellType { region: Aabb, solid: bool },
    SetViscosity { nu: f64 },
    Pause,
    Resume,
    SpawnSub { region: Aabb, depth: u8 },
    StopSub { id: u32 },
}

impl SteerCommand {
    pub fn code(&self) -> u8 {
        match self {
            SteerCommand::SetBoundary { .. } => 1,
            SteerCommand::Refine { .. } => 2,
            SteerCommand::RefineRegion { .. } => 3,
            SteerCommand::SetCellType { .. } => 4,
            SteerCommand::SetViscosity { .. } => 5,
            SteerCommand::Pause => 6,
            SteerCommand::Resume => 7,
            SteerCommand::SpawnSub { .. } => 8,
            SteerCommand::StopSub { .. } => 9,
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.code()];
        match self {
            SteerCommand::SetBoundary { face, kind } => {
                out.push(face.index() as u8);
                out.push(kind.code());
                for v in kind.velocity() {
                    out.write_f64::<LE>(v).unwrap();
                }
            }
            SteerCommand::Refine { grid } => out.write_u64::<LE>(grid.0).unwrap(),
            SteerCommand::RefineRegion { region } => put_box(&mut out, region),
            SteerCommand::SetCellType { region, solid } => {
                put_box(&mut out, region);
                out.push(*solid as u8);
            }
            SteerCommand::SetViscosity { nu } => out.write_f64::<LE>(*nu).unwrap(),
            SteerCommand::Pause | SteerCommand::Resume => {}
            SteerCommand::SpawnSub { region, depth } => {
                put_box(&mut out, region);
                out.push(*depth);
            }
            SteerCommand::StopSub { id } => out.write_u32::<LE>(*id).unwrap(),
        }
        out
    }

    pub fn decode(p: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(p);
        let code = c.read_u8().map_err(truncated)?;
        let cmd = match code {
            1 => {
                let fi = c.read_u8().map_err(truncated)?;
                let face = Face::from_index(fi as usize)
                    .ok_or_else(|| Error::Protocol(format!("unknown face {fi}")))?;
                let kc = c.read_u8().map_err(truncated)?;
                let mut v = [0.0; 3];
                for x in &mut v {
                    *x = c.read_f64::<LE>().map_err(truncated)?;
                }
                let kind =
                    BoundaryKind::from_code(kc, v).map_err(|e| Error::Protocol(e.to_string()))?;
                if kind.velocity() != v {
                    return Err(Error::Protocol(
                        "velocity given for a kind without one".into(),
                    ));
                }
                SteerCommand::SetBoundary { face, kind }
            }
            2 => SteerCommand::Refine {
                grid: GridId(c.read_u64::<LE>().map_err(truncated)?),
            },
            3 => SteerCommand::RefineRegion {
                region: get_box(&mut c)?,
            },
            4 => {
                let region = get_box(&mut c)?;
                let solid = match c.read_u8().map_err(truncated)? {
                    0 => false,
                    1 => true,
                    b => return Err(Error::Protocol(format!("bad cell type {b}"))),
                };
                SteerCommand::SetCellType { region, solid }
            }
            5 => SteerCommand::SetViscosity {
                nu: c.read_f64::<LE>().map_err(truncated)?,
            },
            6 => SteerCommand::Pause,
            7 => SteerCommand::Resume,
            8 => {
                let region = get_box(&mut c)?;
                let depth = c.read_u8().map_err(truncated)?;
                SteerCommand::SpawnSub { region, depth }
            }
            9 => SteerCommand::StopSub {
                id: c.read_u32::<LE>().map_err(truncated)?,
            },
            k => return Err(Error::Protocol(format!("unknown steering command {k}"))),
        };
        finish(&c)?;
        Ok(cmd)
    }

    pub fn frame(&self) -> Frame {
        Frame::new(cmd::STEER, self.encode())
    }
}

/// Positive reply to a steering command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ack {
    /// First step whose result includes the command.
    pub step: u64,
    /// Command specific: the id of a spawned sub-simulation, else 0.
    pub value: u64,
}

impl Ack {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16);
        out.write_u64::<LE>(self.step).unwrap();
        out.write_u64::<LE>(self.value).unwrap();
        out
    }

    pub fn decode(p: &[u8]) -> Result<Self> {
        let mut c = Cursor::new(p);
        let step = c.read_u64::<LE>().map_err(truncated)?;
        let value = c.read_u64::<LE>().map_err(truncated)?;
        finish(&c)?;
        Ok(Self { step, value })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Code {
    Malformed = 1,
    InvalidTarget = 2,
    MaxDepth = 3,
    ResourceCap = 4,
    UnknownSource = 5,
    InvalidParam = 6,
    Stale = 7,
    Internal = 8,
    FrameTooLarge = 9,
}

impl Code {
    pub fn from_u8(c: u8) -> Option<Self> {
        use Code::*;
        [
            Malformed,
            InvalidTarget,
            MaxDepth,
            ResourceCap,
            UnknownSource,
            InvalidParam,
            Stale,
            Internal,
            FrameTooLarge,
        ]
        .into_iter()
        .find(|x| *x as u8 == c)
    }
}

/// Payload of 'R' (request refused, session continues) and 'E' (session closes).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Rejection {
    pub code: Code,
    pub message: String,
}

impl Rejection {
    pub fn new(code: Code, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = vec![self.code as u8];
        out.extend_from_slice(self.message.as_bytes());
        out
    }

    pub fn decode(p: &[u8]) -> Result<Self> {
        let (&c, rest) = p
            .split_first()
            .ok_or_else(|| Error::Protocol("empty rejection".into()))?;
        let code = Code::from_u8(c).ok_or_else(|| Error::Protocol(format!("unknown code {c}")))?;
        let message = String::from_utf8(rest.to_vec())
            .map_err(|_| Error::Protocol("message is not UTF-8".into()))?;
        Ok(Self { code, message })
    }
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:?}: {}", self.code, self.message)
    }
}

pub const STREAM_HEADER_LEN: usize = 34;
pub const FLAG_COMPRESSED: u8 = 1;

fn record_len(q: Quantity) -> usize {
    6 * 8 + 1 + 8 * q.arity()
}

/// Stream payload: quantity u8, cell count u32, domain version u64,
/// sim time f64, step u64, source u32, flags u8, then the cell records
/// (zlib-deflated when the flag is set).
pub fn encode_stream(s: &CellStream, source: u32) -> Vec<u8> {
    let arity = s.quantity.arity();
    let mut body = Vec::with_capacity(s.cells.len() * record_len(s.quantity));
    for c in &s.cells {
        for v in c.center.iter().chain(&c.width) {
            body.write_f64::<LE>(*v).unwrap();
        }
        body.push(c.level);
        for v in &c.values[..arity] {
            body.write_f64::<LE>(*v).unwrap();
        }
    }
    let compressed = body.len() > COMPRESS_ABOVE;
    let mut out = Vec::with_capacity(STREAM_HEADER_LEN + body.len());
    out.push(s.quantity.code());
    out.write_u32::<LE>(s.cells.len() as u32).unwrap();
    out.write_u64::<LE>(s.version).unwrap();
    out.write_f64::<LE>(s.time).unwrap();
    out.write_u64::<LE>(s.step).unwrap();
    out.write_u32::<LE>(source).unwrap();
    out.push(if compressed { FLAG_COMPRESSED } else { 0 });
    if compressed {
        let mut z = ZlibEncoder::new(out, Compression::fast());
        z.write_all(&body).unwrap();
        z.finish().unwrap()
    } else {
        out.extend_from_slice(&body);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedStream {
    pub source: u32,
    pub compressed: bool,
    pub stream: CellStream,
}

pub fn decode_stream(p: &[u8]) -> Result<DecodedStream> {
    let mut c = Cursor::new(p);
    let qc = c.read_u8().map_err(truncated)?;
    let quantity =
        Quantity::from_code(qc).ok_or_else(|| Error::Protocol(format!("unknown quantity {qc}")))?;
    let count = c.read_u32::<LE>().map_err(truncated)? as usize;
    let version = c.read_u64::<LE>().map_err(truncated)?;
    let time = c.read_f64::<LE>().map_err(truncated)?;
    let step = c.read_u64::<LE>().map_err(truncated)?;
    let source = c.read_u32::<LE>().map_err(truncated)?;
    let flags = c.read_u8().map_err(truncated)?;
    if flags & !FLAG_COMPRESSED != 0 {
        return Err(Error::Protocol(format!("unknown stream flags {flags:#x}")));
    }
    let expect = count
        .checked_mul(record_len(quantity))
        .filter(|&n| n <= MAX_FRAME)
        .ok_or_else(|| Error::Protocol(format!("cell count {count} too large")))?;
    let rest = &p[STREAM_HEADER_LEN..];
    let compressed = flags & FLAG_COMPRESSED != 0;
    let inflated;
    let body: &[u8] = if compressed {
        let mut buf = Vec::with_capacity(expect);
        ZlibDecoder::new(rest)
            .take(expect as u64 + 1)
            .read_to_end(&mut buf)
            .map_err(|e| Error::Protocol(format!("bad compressed body: {e}")))?;
        inflated = buf;
        &inflated
    } else {
        rest
    };
    if body.len() != expect {
        return Err(Error::Protocol(format!(
            "stream body holds {} bytes, header implies {expect}",
            body.len()
        )));
    }
    let arity = quantity.arity();
    let mut b = Cursor::new(body);
    let mut cells = Vec::with_capacity(count);
    let f = |b: &mut Cursor<&[u8]>| b.read_f64::<LE>().map_err(truncated);
    for _ in 0..count {
        let center = [f(&mut b)?, f(&mut b)?, f(&mut b)?];
        let width = [f(&mut b)?, f(&mut b)?, f(&mut b)?];
        let level = b.read_u8().map_err(truncated)?;
        let mut values = [0.0; 3];
        for v in &mut values[..arity] {
            *v = f(&mut b)?;
        }
        cells.push(CellRecord {
            center,
            width,
            level,
            values,
        });
    }
    Ok(DecodedStream {
        source,
        compressed,
        stream: CellStream {
            quantity,
            version,
            step,
            time,
            cells,
        },
    })
}

/// Frames a client may send.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientFrame {
    Visualize(VizRequest),
    Steer(SteerCommand),
    Metrics,
    Quit,
}

impl ClientFrame {
    pub fn to_frame(&self) -> Frame {
        match self {
            ClientFrame::Visualize(r) => r.frame(),
            ClientFrame::Steer(c) => c.frame(),
            ClientFrame::Metrics => Frame::new(cmd::METRICS, Vec::new()),
            ClientFrame::Quit => Frame::new(cmd::QUIT, Vec::new()),
        }
    }

    pub fn from_frame(f: &Frame) -> Result<Self> {
        let empty = |what: &str| {
            if f.payload.is_empty() {
                Ok(())
            } else {
                Err(Error::Protocol(format!("{what} frame takes no payload")))
            }
        };
        match f.command {
            cmd::VISUALIZE => Ok(ClientFrame::Visualize(VizRequest::decode(&f.payload)?)),
            cmd::STEER => Ok(ClientFrame::Steer(SteerCommand::decode(&f.payload)?)),
            cmd::METRICS => empty("metrics").map(|_| ClientFrame::Metrics),
            cmd::QUIT => empty("quit").map(|_| ClientFrame::Quit),
            c => Err(Error::Protocol(format!("unknown command byte {c:#04x}"))),
        }
    }
}

/// Frames the server sends.
#[derive(Debug, Clone, PartialEq)]
pub enum ServerFrame {
    Stream(DecodedStream),
    Ack(Ack),
    Reject(Rejection),
    Error(Rejection),
    Report(String),
}

impl ServerFrame {
    pub fn to_frame(&self) -> Frame {
        match self {
            ServerFrame::Stream(d) => Frame::new(cmd::STREAM, encode_stream(&d.stream, d.source)),
            ServerFrame::Ack(a) => Frame::new(cmd::ACK, a.encode()),
            ServerFrame::Reject(r) => Frame::new(cmd::REJECT, r.encode()),
            ServerFrame::Error(r) => Frame::new(cmd::ERROR, r.encode()),
            ServerFrame::Report(s) => Frame::new(cmd::REPORT, s.as_bytes().to_vec()),
        }
    }

    pub fn from_frame(f: &Frame) -> Result<Self> {
        match f.command {
            cmd::STREAM => Ok(ServerFrame::Stream(decode_stream(&f.payload)?)),
            cmd::ACK => Ok(ServerFrame::Ack(Ack::decode(&f.payload)?)),
            cmd::REJECT => Ok(ServerFrame::Reject(Rejection::decode(&f.payload)?)),
            cmd::ERROR => Ok(ServerFrame::Error(Rejection::decode(&f.payload)?)),
            cmd::REPORT => String::from_utf8(f.payload.clone())
                .map(ServerFrame::Report)
                .map_err(|_| Error::Protocol("report is not UTF-8".into())),
            c => Err(Error::Protocol(format!("unknown reply byte {c:#04x}"))),
        }
    }
}
