use std::io::{Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use slwn_core::solver::Simulation;

use crate::collector::{read_error_frame, Collector, Outcome};
use crate::config::ServerConfig;
use crate::error::Result;
use crate::gateway;
use crate::host::{Host, HostHandle, HostOptions};
use crate::protocol::{read_frame, HANDSHAKE_LEN};

/// One TCP session: handshake, then frames until 'Q', an error or EOF.
pub fn handle_connection(mut stream: TcpStream, collector: &Collector) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut hello = [0u8; HANDSHAKE_LEN];
    stream.read_exact(&mut hello)?;
    let (reply, ok) = collector.handshake(&hello);
    stream.write_all(&reply)?;
    if !ok {
        return Ok(());
    }
    loop {
        let frame = match read_frame(&mut stream) {
            Ok(Some(f)) => f,
            Ok(None) => return Ok(()),
            Err(e) => {
                let bytes = read_error_frame(&e);
                let _ = collector.send(bytes.len(), || stream.write_all(&bytes));
                return Err(e);
            }
        };
        match collector.dispatch(&frame) {
            Outcome::Reply(bytes) => collector.send(bytes.len(), || stream.write_all(&bytes))?,
            Outcome::Close(bytes) => {
                if let Some(b) = bytes {
                    collector.send(b.len(), || stream.write_all(&b))?;
                }
                return Ok(());
            }
        }
    }
}

/// Accepts connections forever, one thread per session.
pub fn serve_tcp(listener: TcpListener, collector: Arc<Collector>) -> Result<()> {
    for conn in listener.incoming() {
        let stream = match conn {
            Ok(s) => s,
            Err(e) => {
                log::warn!("accept failed: {e}");
                continue;
            }
        };
        let c = Arc::clone(&collector);
        std::thread::spawn(move || {
            let peer = stream.peer_addr().ok();
            if let Err(e) = handle_connection(stream, &c) {
                log::info!("session {peer:?} ended: {e}");
            }
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Default)]
pub struct ServerOptions {
    pub host: HostOptions,
    pub export_dir: Option<PathBuf>,
    /// Static UI bundle served by the gateway instead of the built-in page.
    pub ui_dir: Option<PathBuf>,
}

impl ServerOptions {
    pub fn from_config(cfg: &ServerConfig) -> Self {
        Self {
            host: HostOptions {
                default_budget: cfg.default_budget,
                max_subs: cfg.max_subs,
                start_paused: cfg.start_paused,
                step_interval: Duration::from_millis(cfg.step_interval_ms),
                threads: 0,
            },
            export_dir: None,
            ui_dir: None,
        }
    }
}

/// A running server: coordinator, TCP front door and WebSocket gateway.
pub struct Server {
    pub tcp_addr: SocketAddr,
    pub http_addr: SocketAddr,
    host: Host,
    collector: Arc<Collector>,
}

impl Server {
    /// Binds both listeners (port 0 picks a free port) and starts serving.
    pub fn start(
        sim: Simulation,
        opts: ServerOptions,
        tcp: SocketAddr,
        http: SocketAddr,
    ) -> Result<Server> {
        if let Some(d) = &opts.export_dir {
            std::fs::create_dir_all(d)?;
        }
        let host = Host::spawn(sim, opts.host.clone())?;
        let collector = Collector::new(host.handle(), opts.export_dir.clone());
        let listener = TcpListener::bind(tcp)?;
        let tcp_addr = listener.local_addr()?;
        let c = Arc::clone(&collector);
        std::thread::Builder::new()
            .name("slwn-tcp".into())
            .spawn(move || serve_tcp(listener, c))?;
        let http_addr = gateway::spawn(Arc::clone(&collector), http, opts.ui_dir.clone())?;
        log::info!("serving protocol on {tcp_addr}, gateway on http://{http_addr}/");
        Ok(Server {
            tcp_addr,
            http_addr,
            host,
            collector,
        })
    }

    pub fn handle(&self) -> HostHandle {
        self.host.handle()
    }

    pub fn collector(&self) -> &Arc<Collector> {
        &self.collector
    }

    /// Stops the simulation loop; listeners stay bound until the process ends.
    pub fn shutdown(self) -> Option<Simulation> {
        self.host.shutdown()
    }
}
