use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand};
use slwn_core::geometry::{Aabb, Face};
use slwn_core::hiergrid::GridId;
use slwn_core::solver::BoundaryKind;
use slwn_core::window::Quantity;

use crate::client::Client;
use crate::config::ServerConfig;
use crate::protocol::{decode_stream, DecodedStream, SteerCommand, VizRequest};
use crate::server::{Server, ServerOptions};
use crate::vtk::write_cell_stream;

pub const DEFAULT_PORT: u16 = 7420;

#[derive(Debug, Parser)]
#[command(
    name = "slwn",
    version,
    about = "Sliding-window steerable flow server and client"
)]
pub struct Cli {
    /// Protocol port; the SLWN_PORT environment variable takes precedence.
    #[arg(long, global = true)]
    pub port: Option<u16>,
    /// Server host for client verbs.
    #[arg(long, global = true, default_value = "127.0.0.1")]
    pub host: String,
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Run the simulation server.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Also write every stream sent to this directory.
        #[arg(long)]
        export_dir: Option<PathBuf>,
        #[arg(long)]
        max_subs: Option<usize>,
        /// Gateway port (HTTP and WebSocket); defaults to the protocol port + 1.
        #[arg(long)]
        http_port: Option<u16>,
        /// Serve this directory as the UI instead of the built-in page.
        #[arg(long)]
        ui_dir: Option<PathBuf>,
        #[arg(long)]
        paused: bool,
    },
    /// Fetch one stream and print it as a table.
    Query {
        #[command(flatten)]
        window: WindowArgs,
        /// Save the raw stream payload.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Send one steering command.
    Steer {
        #[command(subcommand)]
        action: SteerAction,
    },
    /// Poll a window at a fixed rate, one summary line per stream.
    Watch {
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long, default_value_t = 2.0)]
        rate: f64,
        /// Seconds.
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
    },
    /// Print the server report as JSON.
    Metrics,
    /// Write a VTK file from a saved stream or a live query.
    ExportVtk {
        #[arg(long)]
        input: Option<PathBuf>,
        #[command(flatten)]
        window: WindowArgs,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Clone, clap::Args)]
pub struct WindowArgs {
    /// x0,y0,x1,y1 or x0,y0,z0,x1,y1,z1.
    #[arg(long, default_value = "0,0,1,1")]
    pub bbox: String,
    /// 0 uses the server's default budget.
    #[arg(long, default_value_t = 0)]
    pub max_cells: u32,
    #[arg(long, default_value = "pressure")]
    pub quantity: String,
    /// Sub-simulation id; 0 is the main run.
    #[arg(long, default_value_t = 0)]
    pub source: u32,
}

#[derive(Debug, Subcommand)]
pub enum SteerAction {
    /// Set the +y wall to slide along x at this speed.
    Lid {
        speed: f64,
    },
    Boundary {
        #[arg(long)]
        face: String,
        /// no_slip, moving_wall, inflow or outflow.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value = "0,0,0")]
        velocity: String,
    },
    Viscosity {
        nu: f64,
    },
    Pause,
    Resume,
    Refine {
        #[arg(long, conflicts_with = "bbox")]
        grid: Option<u64>,
        #[arg(long)]
        bbox: Option<String>,
    },
    Solid {
        #[arg(long)]
        bbox: String,
        /// Turn cells back into fluid.
        #[arg(long)]
        fluid: bool,
    },
    Spawn {
        #[arg(long)]
        bbox: String,
        #[arg(long, default_value_t = 1)]
        depth: u8,
    },
    Stop {
        id: u32,
    },
}

fn numbers(s: &str) -> anyhow::Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .with_context(|| format!("bad number '{t}'"))
        })
        .collect()
}

/// Two-dimensional boxes span all of z.
pub fn parse_bbox(s: &str) -> anyhow::Result<Aabb> {
    let v = numbers(s)?;
    let b = match v[..] {
        [x0, y0, x1, y1] => Aabb::new([x0, y0, -1e30], [x1, y1, 1e30]),
        [x0, y0, z0, x1, y1, z1] => Aabb::new([x0, y0, z0], [x1, y1, z1]),
        _ => bail!("bbox needs 4 or 6 comma-separated numbers"),
    };
    if (0..3).any(|a| b.min[a] > b.max[a]) {
        bail!("bbox minimum exceeds maximum");
    }
    Ok(b)
}

fn parse_vec3(s: &str) -> anyhow::Result<[f64; 3]> {
    match numbers(s)?[..] {
        [a, b, c] => Ok([a, b, c]),
        _ => bail!("expected three comma-separated numbers"),
    }
}

impl WindowArgs {
    pub fn request(&self) -> anyhow::Result<VizRequest> {
        let quantity: Quantity = self.quantity.parse().map_err(|e| anyhow!("{e}"))?;
        Ok(VizRequest {
            source: self.source,
            bbox: parse_bbox(&self.bbox)?,
            max_cells: self.max_cells,
            quantity,
        })
    }
}

impl SteerAction {
    pub fn command(&self) -> anyhow::Result<SteerCommand> {
        Ok(match self {
            SteerAction::Lid { speed } => SteerCommand::SetBoundary {
                face: Face::YPlus,
                kind: BoundaryKind::MovingWall {
                    velocity: [*speed, 0.0, 0.0],
                },
            },
            SteerAction::Boundary {
                face,
                kind,
                velocity,
            } => {
                let v = parse_vec3(velocity)?;
                let kind = match kind.as_str() {
                    "no_slip" => BoundaryKind::NoSlip,
                    "moving_wall" => BoundaryKind::MovingWall { velocity: v },
                    "inflow" => BoundaryKind::Inflow { velocity: v },
                    "outflow" => BoundaryKind::Outflow,
                    k => bail!("unknown boundary kind '{k}'"),
                };
                SteerCommand::SetBoundary {
                    face: face.parse().map_err(|e| anyhow!("{e}"))?,
                    kind,
                }
            }
            SteerAction::Viscosity { nu } => SteerCommand::SetViscosity { nu: *nu },
            SteerAction::Pause => SteerCommand::Pause,
            SteerAction::Resume => SteerCommand::Resume,
            SteerAction::Refine { grid, bbox } => match (grid, bbox) {
                (Some(g), _) => SteerCommand::Refine { grid: GridId(*g) },
                (None, Some(b)) => SteerCommand::RefineRegion {
                    region: parse_bbox(b)?,
                },
                (None, None) => bail!("refine needs --grid or --bbox"),
            },
            SteerAction::Solid { bbox, fluid } => SteerCommand::SetCellType {
                region: parse_bbox(bbox)?,
                solid: !fluid,
            },
            SteerAction::Spawn { bbox, depth } => SteerCommand::SpawnSub {
                region: parse_bbox(bbox)?,
                depth: *depth,
            },
            SteerAction::Stop { id } => SteerCommand::StopSub { id: *id },
        })
    }
}

/// The port in effect: SLWN_PORT, then --port, then the default.
pub fn effective_port(flag: Option<u16>) -> anyhow::Result<u16> {
    match std::env::var("SLWN_PORT") {
        Ok(v) => v
            .trim()
            .parse()
            .with_context(|| format!("SLWN_PORT='{v}' is not a port")),
        Err(_) => Ok(flag.unwrap_or(DEFAULT_PORT)),
    }
}

pub fn write_table<W: Write>(d: &DecodedStream, mut out: W) -> std::io::Result<()> {
    let s = &d.stream;
    writeln!(
        out,
        "# source {} step {} time {} version {} cells {} quantity {}",
        d.source,
        s.step,
        s.time,
        s.version,
        s.cells.len(),
        s.quantity.name()
    )?;
    for c in &s.cells {
        write!(
            out,
            "{} {} {} {} {} {} {}",
            c.center[0], c.center[1], c.center[2], c.width[0], c.width[1], c.width[2], c.level
        )?;
        for v in &c.values[..s.quantity.arity()] {
            write!(out, " {v}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

fn connect(cli: &Cli) -> anyhow::Result<Client> {
    let port = effective_port(cli.port)?;
    Client::connect((cli.host.as_str(), port))
        .with_context(|| format!("cannot reach {}:{port}", cli.host))
}

fn export_vtk(d: &DecodedStream, path: &Path) -> anyhow::Result<()> {
    let f =
        std::fs::File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    write_cell_stream(&d.stream, std::io::BufWriter::new(f))?;
    Ok(())
}

pub fn run<W: Write>(cli: Cli, mut out: W) -> anyhow::Result<()> {
    match &cli.verb {
        Verb::Serve {
            config,
            export_dir,
            max_subs,
            http_port,
            ui_dir,
            paused,
        } => {
            let mut cfg = match config {
                Some(p) => {
                    ServerConfig::load(p).with_context(|| format!("reading {}", p.display()))?
                }
                None => ServerConfig::cavity(),
            };
            if let Some(n) = max_subs {
                cfg.max_subs = *n;
            }
            cfg.start_paused |= paused;
            let port = effective_port(cli.port)?;
            let http = http_port.unwrap_or(port.wrapping_add(1));
            let mut opts = ServerOptions::from_config(&cfg);
            opts.export_dir = export_dir.clone();
            opts.ui_dir = ui_dir.clone();
            let server = Server::start(
                cfg.build_simulation()?,
                opts,
                SocketAddr::from(([0, 0, 0, 0], port)),
                SocketAddr::from(([0, 0, 0, 0], http)),
            )?;
            writeln!(
                out,
                "listening on {} (gateway http://{})",
                server.tcp_addr, server.http_addr
            )?;
            out.flush()?;
            loop {
                std::thread::park();
            }
        }
        Verb::Query { window, out: save } => {
            let mut c = connect(&cli)?;
            let d = c.query(&window.request()?)?;
            if let Some(p) = save {
                std::fs::write(p, crate::protocol::encode_stream(&d.stream, d.source))?;
            }
            write_table(&d, &mut out)?;
            c.quit()?;
        }
        Verb::Steer { action } => {
            let mut c = connect(&cli)?;
            let ack = c.steer(action.command()?)?;
            writeln!(
                out,
                "acked: applies at step {} (value {})",
                ack.step, ack.value
            )?;
            c.quit()?;
        }
        Verb::Watch {
            window,
            rate,
            duration,
        } => {
            if !(*duration >= 0.0 && duration.is_finite()) {
                bail!("duration must be non-negative");
            }
            let mut c = connect(&cli)?;
            let req = window.request()?;
            c.watch(&req, *rate, Duration::from_secs_f64(*duration), |i, d| {
                writeln!(
                    out,
                    "{i} step {} time {} cells {}",
                    d.stream.step,
                    d.stream.time,
                    d.stream.cells.len()
                )?;
                Ok(())
            })?;
            c.quit()?;
        }
        Verb::Metrics => {
            let mut c = connect(&cli)?;
            writeln!(out, "{}", serde_json::to_string_pretty(&c.metrics()?)?)?;
            c.quit()?;
        }
        Verb::ExportVtk {
            input,
            window,
            output,
        } => {
            let d = match input {
                Some(p) => {
                    let bytes =
                        std::fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                    decode_stream(&bytes)?
                }
                None => {
                    let mut c = connect(&cli)?;
                    let d = c.query(&window.request()?)?;
                    c.quit()?;
                    d
                }
            };
            export_vtk(&d, output)?;
            writeln!(
                out,
                "wrote {} cells to {}",
                d.stream.cells.len(),
                output.display()
            )?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bbox_forms() {
        assert_eq!(parse_bbox("0,0.5,0.5,1").unwrap().max[..2], [0.5, 1.0]);
        assert_eq!(
            parse_bbox("0,0,0,1,1,1").unwrap(),
            Aabb::new([0.0; 3], [1.0; 3])
        );
        assert!(parse_bbox("0,0,1").is_err());
        assert!(parse_bbox("1,0,0,1").is_err());
        assert!(parse_bbox("a,0,1,1").is_err());
    }

    #[test]
    fn steer_actions_map_to_commands() {
        let c = SteerAction::Lid { speed: 2.0 }.command().unwrap();
        assert_eq!(
            c,
            SteerCommand::SetBoundary {
                face: Face::YPlus,
                kind: BoundaryKind::MovingWall {
                    velocity: [2.0, 0.0, 0.0]
                }
            }
        );
        let c = SteerAction::Refine {
            grid: None,
            bbox: Some("0,0,0.5,0.5".into()),
        }
        .command()
        .unwrap();
        assert!(matches!(c, SteerCommand::RefineRegion { .. }));
        assert!(SteerAction::Refine {
            grid: None,
            bbox: None
        }
        .command()
        .is_err());
    }

    #[test]
    fn parses_cli() {
        let cli = Cli::try_parse_from([
            "slwn",
            "query",
            "--bbox",
            "0,0,1,1",
            "--max-cells",
            "400",
            "--quantity",
            "pressure",
        ])
        .unwrap();
        let Verb::Query { window, .. } = cli.verb else {
            panic!()
        };
        let r = window.request().unwrap();
        assert_eq!((r.max_cells, r.quantity), (400, Quantity::Pressure));
    }
}
