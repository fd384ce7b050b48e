use std::io::{Read, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::protocol::{
    check_handshake_reply, read_frame, write_frame, Ack, ClientFrame, DecodedStream, Frame,
    Handshake, ServerFrame, SteerCommand, VizRequest, HANDSHAKE_LEN,
};

/// Blocking protocol client.
pub struct Client {
    stream: TcpStream,
}

impl Client {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Client> {
        Self::connect_with(addr, Handshake::local())
    }

    /// Connects presenting an arbitrary handshake.
    pub fn connect_with(addr: impl ToSocketAddrs, hello: Handshake) -> Result<Client> {
        let mut stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        stream.write_all(&hello.encode())?;
        let mut reply = [0u8; HANDSHAKE_LEN + 1];
        stream.read_exact(&mut reply)?;
        check_handshake_reply(&reply)?;
        Ok(Client { stream })
    }

    pub fn send_raw(&mut self, frame: &Frame) -> Result<()> {
        write_frame(&mut self.stream, frame)
    }

    pub fn recv_raw(&mut self) -> Result<Frame> {
        read_frame(&mut self.stream)?.ok_or(Error::Closed)
    }

    /// Sends a frame and returns the raw reply frame.
    pub fn request_raw(&mut self, frame: &Frame) -> Result<Frame> {
        self.send_raw(frame)?;
        self.recv_raw()
    }

    pub fn request(&mut self, req: &ClientFrame) -> Result<ServerFrame> {
        let reply = self.request_raw(&req.to_frame())?;
        match ServerFrame::from_frame(&reply)? {
            ServerFrame::Reject(r) => Err(Error::Rejected(r)),
            ServerFrame::Error(r) => Err(Error::Server(r)),
            other => Ok(other),
        }
    }

    pub fn query(&mut self, req: &VizRequest) -> Result<DecodedStream> {
        match self.request(&ClientFrame::Visualize(*req))? {
            ServerFrame::Stream(s) => Ok(s),
            other => Err(unexpected(&other)),
        }
    }

    pub fn steer(&mut self, cmd: SteerCommand) -> Result<Ack> {
        match self.request(&ClientFrame::Steer(cmd))? {
            ServerFrame::Ack(a) => Ok(a),
            other => Err(unexpected(&other)),
        }
    }

    pub fn metrics(&mut self) -> Result<serde_json::Value> {
        match self.request(&ClientFrame::Metrics)? {
            ServerFrame::Report(s) => Ok(serde_json::from_str(&s)?),
            other => Err(unexpected(&other)),
        }
    }

    pub fn quit(mut self) -> Result<()> {
        self.send_raw(&ClientFrame::Quit.to_frame())
    }

    /// Polls `req` at `rate` Hz for `duration`, on a fixed schedule from the
    /// start; yields rate × duration streams.
    pub fn watch(
        &mut self,
        req: &VizRequest,
        rate: f64,
        duration: Duration,
        mut each: impl FnMut(usize, &DecodedStream) -> Result<()>,
    ) -> Result<usize> {
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::Protocol("watch rate must be positive".into()));
        }
        let n = (rate * duration.as_secs_f64()).round() as usize;
        let start = Instant::now();
        for i in 0..n {
            let due = start + Duration::from_secs_f64(i as f64 / rate);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
            let s = self.query(req)?;
            each(i, &s)?;
        }
        Ok(n)
    }
}

fn unexpected(f: &ServerFrame) -> Error {
    Error::Protocol(format!(
        "unexpected reply {:?}",
        f.to_frame().command as char
    ))
}
