mod common;

use std::io::{Read, Write};
use std::net::TcpStream;
use std::sync::{Arc, Barrier};
use std::time::Duration;

use common::{cavity, full, start, start_with, wait_for, window};
use slwn_core::geometry::{Aabb, Face};
use slwn_core::solver::BoundaryKind;
use slwn_core::window::{extract, select, Quantity};
use slwn_steerd::client::Client;
use slwn_steerd::protocol::{
    cmd, decode_stream, read_frame, Code, Frame, Handshake, Rejection, SteerCommand, MAX_FRAME,
};
use slwn_steerd::server::{Server, ServerOptions};
use slwn_steerd::Error;

const GOLDEN: [u8; 12] = [b'S', b'L', b'W', b'N', 1, 0, 4, 3, 2, 1, 4, 8];

fn raw(server: &Server, hello: &[u8]) -> (TcpStream, Vec<u8>) {
    let mut s = TcpStream::connect(server.tcp_addr).unwrap();
    s.set_read_timeout(Some(Duration::from_secs(20))).unwrap();
    s.write_all(hello).unwrap();
    let mut reply = vec![0u8; 13];
    s.read_exact(&mut reply).unwrap();
    (s, reply)
}

fn assert_closed(s: &mut TcpStream) {
    let mut b = [0u8; 1];
    assert_eq!(s.read(&mut b).unwrap(), 0, "connection should be closed");
}

fn paused() -> slwn_steerd::config::ServerConfig {
    let mut cfg = cavity(1.0);
    cfg.start_paused = true;
    cfg
}

#[test]
fn golden_handshake() {
    assert_eq!(Handshake::local().encode(), GOLDEN);
    let server = start(&paused());
    let (_, reply) = raw(&server, &GOLDEN);
    assert_eq!(&reply[..12], &GOLDEN);
    assert_eq!(reply[12], 0);
}

#[test]
fn mismatched_handshakes_are_refused() {
    let server = start(&paused());
    let cases: [(usize, u8, u8); 4] = [(0, b'X', 1), (4, 2, 2), (6, 1, 3), (10, 8, 4)];
    for (at, byte, status) in cases {
        let mut hello = GOLDEN;
        hello[at] = byte;
        if at == 6 {
            hello[6..10].copy_from_slice(&[1, 2, 3, 4]);
        }
        let (mut s, reply) = raw(&server, &hello);
        assert_eq!(reply[12], status, "byte {at}");
        assert_closed(&mut s);
    }
    let mut hello = Handshake::local();
    hello.probe.reverse();
    match Client::connect_with(server.tcp_addr, hello) {
        Err(Error::Handshake(s)) => assert_eq!(s as u8, 3),
        other => panic!("{:?}", other.err()),
    }
}

#[test]
fn streams_match_local_selection() {
    let cfg = paused();
    let mut sim = cfg.build_simulation().unwrap();
    sim.run(5).unwrap();
    let local = sim.clone();
    let server = Server::start(
        sim,
        ServerOptions::from_config(&cfg),
        common::any_port(),
        common::any_port(),
    )
    .unwrap();
    let mut c = Client::connect(server.tcp_addr).unwrap();
    let topo = local.topology();
    for (req, budget) in [
        (full(100, Quantity::Pressure), 100),
        (full(400, Quantity::Velocity), 400),
        (full(0, Quantity::VelocityMagnitude), 400),
        (full(6400, Quantity::Pressure), 6400),
        (window([0.0, 0.5], [0.5, 1.0], 400), 400),
        (window([0.3, 0.3], [0.35, 0.9], 37), 37),
        (full(1, Quantity::Pressure), 1),
    ] {
        let d = c.query(&req).unwrap();
        assert_eq!(d.source, 0);
        assert!(d.stream.cells.len() <= budget);
        let sel = select(&topo, &req.query(400)).unwrap();
        let want = extract(local.forest(), &sel, req.quantity).unwrap();
        assert_eq!(d.stream.cells, want.cells);
        assert_eq!(d.stream.step, 5);
        assert_eq!(d.stream.time, local.time());
    }
}

#[test]
fn paused_replies_are_byte_identical() {
    let server = start(&paused());
    let mut a = Client::connect(server.tcp_addr).unwrap();
    let mut b = Client::connect(server.tcp_addr).unwrap();
    for req in [
        full(400, Quantity::Velocity),
        full(6400, Quantity::Pressure),
        window([0.0, 0.75], [0.25, 1.0], 400),
    ] {
        let first = a.request_raw(&req.frame()).unwrap().encode();
        for _ in 0..3 {
            assert_eq!(a.request_raw(&req.frame()).unwrap().encode(), first);
            assert_eq!(b.request_raw(&req.frame()).unwrap().encode(), first);
        }
    }
    // a large reply is compressed and stays deterministic
    let big = full(6400, Quantity::Velocity);
    let r1 = a.request_raw(&big.frame()).unwrap();
    assert!(decode_stream(&r1.payload).unwrap().compressed);
    assert_eq!(b.request_raw(&big.frame()).unwrap(), r1);
}

#[test]
fn steering_applies_at_the_acknowledged_step() {
    let server = start(&cavity(0.0));
    let addr = server.tcp_addr;
    let watcher = std::thread::spawn(move || {
        let mut c = Client::connect(addr).unwrap();
        let mut seen = Vec::new();
        loop {
            let d = c.query(&full(400, Quantity::Velocity)).unwrap();
            let moving = d
                .stream
                .cells
                .iter()
                .any(|c| c.values.iter().any(|&v| v != 0.0));
            seen.push((d.stream.step, moving));
            if seen.len() > 5 && d.stream.step > 40 {
                return seen;
            }
        }
    });
    let mut c = Client::connect(addr).unwrap();
    wait_for("a few steps", Duration::from_secs(30), || {
        c.metrics().unwrap()["step"].as_u64().unwrap() >= 10
    });
    let ack = c
        .steer(SteerCommand::SetBoundary {
            face: Face::YPlus,
            kind: BoundaryKind::MovingWall {
                velocity: [1.0, 0.0, 0.0],
            },
        })
        .unwrap();
    let k = ack.step;
    assert!(k > 10);
    let seen = watcher.join().unwrap();
    assert!(
        seen.iter().any(|s| s.0 < k) && seen.iter().any(|s| s.0 >= k),
        "{seen:?}"
    );
    for (step, moving) in seen {
        assert_eq!(moving, step >= k, "step {step}, acknowledged for {k}");
    }
}

#[test]
fn paused_commands_wait_for_the_next_step() {
    let server = start(&paused());
    let mut c = Client::connect(server.tcp_addr).unwrap();
    let ack = c.steer(SteerCommand::SetViscosity { nu: 0.02 }).unwrap();
    assert_eq!(ack.step, 1);
    let m = c.metrics().unwrap();
    assert_eq!(m["pending"], 1);
    assert_eq!(m["nu"], 0.01);
    c.steer(SteerCommand::Resume).unwrap();
    wait_for("the command to apply", Duration::from_secs(30), || {
        c.metrics().unwrap()["nu"] == 0.02
    });
    let m = c.metrics().unwrap();
    assert!(m["step"].as_u64().unwrap() >= 1);
    assert_eq!(m["counters"]["applied"], 1);
}

#[test]
fn oversize_frame_gets_an_error_and_a_close() {
    let server = start(&paused());
    let (mut s, reply) = raw(&server, &GOLDEN);
    assert_eq!(reply[12], 0);
    let mut header = vec![b'V'];
    header.extend_from_slice(&((MAX_FRAME + 1) as u32).to_le_bytes());
    s.write_all(&header).unwrap();
    let f = read_frame(&mut s).unwrap().unwrap();
    assert_eq!(f.command, cmd::ERROR);
    assert_eq!(
        Rejection::decode(&f.payload).unwrap().code,
        Code::FrameTooLarge
    );
    assert_closed(&mut s);
}

#[test]
fn malformed_frames_get_an_error_and_a_close() {
    let server = start(&paused());
    for frame in [
        Frame::new(b'X', vec![]),
        Frame::new(b'V', vec![0; 3]),
        Frame::new(b'S', vec![42]),
    ] {
        let (mut s, _) = raw(&server, &GOLDEN);
        s.write_all(&frame.encode()).unwrap();
        let f = read_frame(&mut s).unwrap().unwrap();
        assert_eq!(f.command, cmd::ERROR);
        assert_eq!(Rejection::decode(&f.payload).unwrap().code, Code::Malformed);
        assert_closed(&mut s);
    }
    // a truncated frame followed by EOF just ends the session
    let (mut s, _) = raw(&server, &GOLDEN);
    s.write_all(&[b'V', 57, 0]).unwrap();
    s.shutdown(std::net::Shutdown::Write).unwrap();
    let mut rest = Vec::new();
    s.read_to_end(&mut rest).unwrap();
    if !rest.is_empty() {
        assert_eq!(rest[0], cmd::ERROR);
    }
}

#[test]
fn rejections_keep_the_session() {
    let server = start(&paused());
    let mut c = Client::connect(server.tcp_addr).unwrap();
    let cases = [
        (
            SteerCommand::Refine {
                grid: slwn_core::hiergrid::GridId(99_999),
            },
            Code::InvalidTarget,
        ),
        (
            SteerCommand::Refine {
                grid: slwn_core::hiergrid::GridId(1),
            },
            Code::InvalidTarget,
        ),
        (SteerCommand::SetViscosity { nu: -1.0 }, Code::InvalidParam),
        (SteerCommand::StopSub { id: 7 }, Code::UnknownSource),
        (
            SteerCommand::RefineRegion {
                region: Aabb::new([0.0; 3], [1.0, 1.0, 0.1]),
            },
            Code::MaxDepth,
        ),
    ];
    for (cmd, code) in cases {
        match c.steer(cmd) {
            Err(Error::Rejected(r)) => assert_eq!(r.code, code, "{cmd:?}"),
            other => panic!("{cmd:?}: {other:?}"),
        }
    }
    let mut q = full(400, Quantity::Pressure);
    q.source = 3;
    match c.query(&q) {
        Err(Error::Rejected(r)) => assert_eq!(r.code, Code::UnknownSource),
        other => panic!("{other:?}"),
    }
    assert_eq!(
        c.query(&full(400, Quantity::Pressure))
            .unwrap()
            .stream
            .cells
            .len(),
        400
    );
    // the counter tracks steering rejections only
    assert_eq!(c.metrics().unwrap()["counters"]["rejections"], 5);
}

#[test]
fn concurrent_spawns_get_distinct_sub_simulations() {
    let server = start(&cavity(1.0));
    let addr = server.tcp_addr;
    let gate = Arc::new(Barrier::new(2));
    let regions = [
        Aabb::new([0.0, 0.75, -1e30], [0.25, 1.0, 1e30]),
        Aabb::new([0.75, 0.75, -1e30], [1.0, 1.0, 1e30]),
    ];
    let workers: Vec<_> = regions
        .into_iter()
        .map(|region| {
            let gate = Arc::clone(&gate);
            std::thread::spawn(move || {
                let mut c = Client::connect(addr).unwrap();
                gate.wait();
                c.steer(SteerCommand::SpawnSub { region, depth: 1 })
                    .unwrap()
            })
        })
        .collect();
    let acks: Vec<_> = workers.into_iter().map(|w| w.join().unwrap()).collect();
    let mut ids: Vec<u64> = acks.iter().map(|a| a.value).collect();
    ids.sort();
    ids.dedup();
    assert_eq!(ids.len(), 2);
    assert!(ids.iter().all(|&i| i > 0));

    let mut c = Client::connect(addr).unwrap();
    wait_for("both subs", Duration::from_secs(60), || {
        c.metrics().unwrap()["subs"].as_array().unwrap().len() == 2
    });
    for &id in &ids {
        let mut q = full(400, Quantity::Velocity);
        q.source = id as u32;
        let d = c.query(&q).unwrap();
        assert_eq!(d.source, id as u32);
        assert_eq!(d.stream.cells.len(), 400);
        // at full budget the sub shows cells finer than the main run's finest level
        q.max_cells = 1600;
        let d = c.query(&q).unwrap();
        assert_eq!(d.stream.cells.len(), 1600);
        assert!(d
            .stream
            .cells
            .iter()
            .all(|c| (c.width[0] - 0.0125 / 2.0).abs() < 1e-12));
    }
    let ack = c
        .steer(SteerCommand::StopSub { id: ids[0] as u32 })
        .unwrap();
    assert!(ack.step > 0);
    wait_for("one sub left", Duration::from_secs(60), || {
        c.metrics().unwrap()["subs"].as_array().unwrap().len() == 1
    });
}

#[test]
fn export_dir_receives_every_stream() {
    let dir = tempfile::tempdir().unwrap();
    let server = start_with(&paused(), Some(dir.path().to_path_buf()));
    let mut c = Client::connect(server.tcp_addr).unwrap();
    let a = c
        .request_raw(&full(400, Quantity::Pressure).frame())
        .unwrap();
    let b = c
        .request_raw(&full(100, Quantity::Velocity).frame())
        .unwrap();
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "stream_s000_00000000_000000.slwn",
            "stream_s000_00000000_000001.slwn"
        ]
    );
    assert_eq!(
        std::fs::read(dir.path().join(&names[0])).unwrap(),
        a.payload
    );
    assert_eq!(
        std::fs::read(dir.path().join(&names[1])).unwrap(),
        b.payload
    );
}

#[test]
fn sends_overlap_running_steps() {
    let server = start(&cavity(1.0));
    let mut c = Client::connect(server.tcp_addr).unwrap();
    for _ in 0..200 {
        c.query(&full(6400, Quantity::Velocity)).unwrap();
    }
    let m = c.metrics().unwrap();
    let k = &m["counters"];
    assert!(k["sends"].as_u64().unwrap() >= 200);
    assert!(k["sends_during_step"].as_u64().unwrap() > 0, "{k}");
    assert!(k["handoffs"].as_u64().unwrap() >= 200);
    assert!(k["steps"].as_u64().unwrap() > 0);
    assert_eq!(k["queries"], 200);
}

#[test]
fn quit_closes_the_session() {
    let server = start(&paused());
    let (mut s, _) = raw(&server, &GOLDEN);
    s.write_all(&Frame::new(cmd::QUIT, vec![]).encode())
        .unwrap();
    assert_closed(&mut s);
}
