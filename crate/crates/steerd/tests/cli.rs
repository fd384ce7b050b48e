mod common;

use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use common::{cavity, start};
use slwn_core::window::{CellRecord, CellStream, Quantity};
use slwn_steerd::protocol::{decode_stream, encode_stream};
use slwn_steerd::server::Server;

fn slwn(port: u16) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_slwn"));
    c.env("SLWN_PORT", port.to_string());
    c
}

fn ok(out: Output) -> String {
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(
        out.status.success(),
        "{stdout}\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    stdout
}

fn paused() -> Server {
    let mut cfg = cavity(1.0);
    cfg.start_paused = true;
    start(&cfg)
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

#[test]
fn query_prints_a_table() {
    let server = paused();
    let dir = tempfile::tempdir().unwrap();
    let raw = dir.path().join("s.slwn");
    let out = ok(slwn(server.tcp_addr.port())
        .args([
            "query",
            "--bbox",
            "0,0,1,1",
            "--max-cells",
            "400",
            "--quantity",
            "velocity",
            "--out",
        ])
        .arg(&raw)
        .output()
        .unwrap());
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 401);
    assert!(lines[0].starts_with("# source 0 step 0 "), "{}", lines[0]);
    assert!(
        lines[0].ends_with("cells 400 quantity velocity"),
        "{}",
        lines[0]
    );
    // x y z dx dy dz level u v w
    assert!(lines[1..].iter().all(|l| l.split(' ').count() == 10));
    let d = decode_stream(&std::fs::read(&raw).unwrap()).unwrap();
    assert_eq!(d.stream.cells.len(), 400);
}

#[test]
fn default_budget_and_sub_window() {
    let server = paused();
    let out = ok(slwn(server.tcp_addr.port())
        .args(["query", "--bbox", "0,0.75,0.25,1"])
        .output()
        .unwrap());
    assert!(out.lines().next().unwrap().contains("quantity pressure"));
    assert!(out.lines().count() <= 401);
}

#[test]
fn export_vtk_from_a_saved_stream() {
    let dir = tempfile::tempdir().unwrap();
    let stream = CellStream {
        quantity: Quantity::Pressure,
        version: 1,
        step: 4,
        time: 0.04,
        cells: vec![CellRecord {
            center: [0.5, 0.5, 0.05],
            width: [1.0, 1.0, 0.1],
            level: 0,
            values: [2.5, 0.0, 0.0],
        }],
    };
    let input = dir.path().join("one.slwn");
    let output = dir.path().join("one.vtk");
    std::fs::write(&input, encode_stream(&stream, 0)).unwrap();
    let out = ok(slwn(1)
        .args(["export-vtk", "--input"])
        .arg(&input)
        .arg("--output")
        .arg(&output)
        .output()
        .unwrap());
    assert!(out.contains("wrote 1 cells"));
    let vtk = std::fs::read_to_string(&output).unwrap();
    assert!(vtk.starts_with("# vtk DataFile Version 3.0\n"));
    assert!(vtk.contains("CELLS 1 5\n4 0 1 3 2\n"), "{vtk}");
    assert!(vtk.contains("SCALARS pressure double 1\nLOOKUP_TABLE default\n2.5\n"));
    // corners of the quad lie on the cell faces
    assert!(
        vtk.contains("0 0 0.05\n") && vtk.contains("1 1 0.05\n"),
        "{vtk}"
    );
}

#[test]
fn watch_polls_at_the_requested_rate() {
    let server = paused();
    let t = Instant::now();
    let out = ok(slwn(server.tcp_addr.port())
        .args([
            "watch",
            "--rate",
            "2",
            "--duration",
            "5",
            "--max-cells",
            "100",
        ])
        .output()
        .unwrap());
    let elapsed = t.elapsed();
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 10);
    for (i, l) in lines.iter().enumerate() {
        assert!(l.starts_with(&format!("{i} step 0 ")), "{l}");
        assert!(l.ends_with("cells 100"), "{l}");
    }
    assert!(elapsed >= Duration::from_millis(4400), "{elapsed:?}");
}

#[test]
fn steer_and_metrics() {
    let server = paused();
    let port = server.tcp_addr.port();
    let out = ok(slwn(port)
        .args(["steer", "viscosity", "0.02"])
        .output()
        .unwrap());
    assert!(out.contains("applies at step 1"), "{out}");
    let out = ok(slwn(port)
        .args(["steer", "spawn", "--bbox", "0,0.75,0.25,1"])
        .output()
        .unwrap());
    assert!(out.contains("(value 1)"), "{out}");
    let out = ok(slwn(port).arg("metrics").output().unwrap());
    let m: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(m["pending"], 2);
    assert_eq!(m["counters"]["acks"], 2);
    // a rejected command is a failure exit
    let out = slwn(port).args(["steer", "stop", "42"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("UnknownSource"));
}

#[test]
fn unreachable_server_fails() {
    let port = free_port();
    let out = slwn(port).arg("metrics").output().unwrap();
    assert!(!out.status.success());
    assert!(
        String::from_utf8_lossy(&out.stderr).contains(&format!("cannot reach 127.0.0.1:{port}"))
    );
}

#[test]
fn environment_port_wins_over_the_flag() {
    let server = paused();
    let live = server.tcp_addr.port();
    let dead = free_port();
    ok(slwn(live)
        .args(["--port", &dead.to_string(), "metrics"])
        .output()
        .unwrap());
    assert!(!slwn(dead)
        .args(["--port", &live.to_string(), "metrics"])
        .output()
        .unwrap()
        .status
        .success());
    let mut plain = Command::new(env!("CARGO_BIN_EXE_slwn"));
    plain.env_remove("SLWN_PORT");
    ok(plain
        .args(["--port", &live.to_string(), "metrics"])
        .output()
        .unwrap());
    let out = slwn(0)
        .env("SLWN_PORT", "port")
        .arg("metrics")
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn serve_listens_on_both_ports() {
    let port = free_port();
    let http = free_port();
    let mut child = slwn(port)
        .args(["serve", "--paused", "--http-port", &http.to_string()])
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    assert!(line.starts_with("listening on"), "{line}");
    assert!(
        line.contains(&format!(":{port}")) && line.contains(&format!(":{http}")),
        "{line}"
    );
    let out = ok(slwn(port).arg("metrics").output().unwrap());
    let m: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(m["paused"], true);
    assert_eq!(m["step"], 0);
    child.kill().unwrap();
    child.wait().unwrap();
}
