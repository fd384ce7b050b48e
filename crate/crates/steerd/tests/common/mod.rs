#![allow(dead_code)]

pub mod wire;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use slwn_core::geometry::Aabb;
use slwn_core::solver::BoundaryKind;
use slwn_core::window::Quantity;
use slwn_steerd::config::ServerConfig;
use slwn_steerd::protocol::VizRequest;
use slwn_steerd::server::{Server, ServerOptions};

pub fn any_port() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

pub fn cavity(lid: f64) -> ServerConfig {
    let mut cfg = ServerConfig::cavity();
    cfg.boundary.insert(
        "+y".into(),
        BoundaryKind::MovingWall {
            velocity: [lid, 0.0, 0.0],
        },
    );
    cfg
}

pub fn start(cfg: &ServerConfig) -> Server {
    start_with(cfg, None)
}

pub fn start_with(cfg: &ServerConfig, export_dir: Option<PathBuf>) -> Server {
    let mut opts = ServerOptions::from_config(cfg);
    opts.export_dir = export_dir;
    Server::start(
        cfg.build_simulation().unwrap(),
        opts,
        any_port(),
        any_port(),
    )
    .unwrap()
}

pub fn full(budget: u32, quantity: Quantity) -> VizRequest {
    VizRequest::new(Aabb::new([-1e30; 3], [1e30; 3]), budget, quantity)
}

pub fn window(min: [f64; 2], max: [f64; 2], budget: u32) -> VizRequest {
    VizRequest::new(
        Aabb::new([min[0], min[1], -1e30], [max[0], max[1], 1e30]),
        budget,
        Quantity::Pressure,
    )
}

pub fn wait_for(what: &str, timeout: Duration, mut cond: impl FnMut() -> bool) {
    let start = Instant::now();
    while !cond() {
        assert!(start.elapsed() < timeout, "timed out waiting for {what}");
        std::thread::sleep(Duration::from_millis(5));
    }
}
