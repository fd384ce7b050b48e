use rand::Rng;
use slwn_core::geometry::{Aabb, Face};
use slwn_core::hiergrid::GridId;
use slwn_core::solver::BoundaryKind;
use slwn_core::window::{CellRecord, CellStream, Quantity};
use slwn_steerd::protocol::*;

pub fn any_box(r: &mut impl Rng) -> Aabb {
    let lo: [f64; 3] = std::array::from_fn(|_| r.gen_range(-10.0..10.0));
    Aabb::new(lo, lo.map(|x| x + r.gen_range(0.0..5.0)))
}

pub fn any_quantity(r: &mut impl Rng) -> Quantity {
    Quantity::from_code(r.gen_range(0..3)).unwrap()
}

pub fn any_steer(r: &mut impl Rng) -> SteerCommand {
    match r.gen_range(1..=9) {
        1 => {
            let code = r.gen_range(0..5u8);
            let v = if matches!(code, 1 | 2) {
                std::array::from_fn(|_| r.gen_range(-2.0..2.0))
            } else {
                [0.0; 3]
            };
            SteerCommand::SetBoundary {
                face: Face::from_index(r.gen_range(0..6)).unwrap(),
                kind: BoundaryKind::from_code(code, v).unwrap(),
            }
        }
        2 => SteerCommand::Refine {
            grid: GridId(r.gen()),
        },
        3 => SteerCommand::RefineRegion { region: any_box(r) },
        4 => SteerCommand::SetCellType {
            region: any_box(r),
            solid: r.gen(),
        },
        5 => SteerCommand::SetViscosity {
            nu: r.gen_range(-1.0..1.0),
        },
        6 => SteerCommand::Pause,
        7 => SteerCommand::Resume,
        8 => SteerCommand::SpawnSub {
            region: any_box(r),
            depth: r.gen(),
        },
        _ => SteerCommand::StopSub { id: r.gen() },
    }
}

pub fn any_client(r: &mut impl Rng) -> ClientFrame {
    match r.gen_range(0..4) {
        0 => {
            let mut v = VizRequest::new(any_box(r), r.gen(), any_quantity(r));
            v.source = r.gen();
            ClientFrame::Visualize(v)
        }
        1 => ClientFrame::Steer(any_steer(r)),
        2 => ClientFrame::Metrics,
        _ => ClientFrame::Quit,
    }
}

pub fn any_stream(r: &mut impl Rng, max_cells: usize) -> DecodedStream {
    let quantity = any_quantity(r);
    let n = r.gen_range(0..=max_cells);
    let cells = (0..n)
        .map(|_| {
            let mut values = [0.0; 3];
            for v in &mut values[..quantity.arity()] {
                *v = r.gen_range(-1e3..1e3);
            }
            CellRecord {
                center: std::array::from_fn(|_| r.gen()),
                width: std::array::from_fn(|_| r.gen()),
                level: r.gen_range(0..8),
                values,
            }
        })
        .collect::<Vec<_>>();
    let body = n * (49 + 8 * quantity.arity());
    DecodedStream {
        source: r.gen(),
        compressed: body > COMPRESS_ABOVE,
        stream: CellStream {
            quantity,
            version: r.gen(),
            step: r.gen(),
            time: r.gen_range(0.0..1e4),
            cells,
        },
    }
}

pub fn any_server(r: &mut impl Rng) -> ServerFrame {
    let msg: String = (0..r.gen_range(0..40))
        .map(|_| r.gen_range('a'..='z'))
        .collect();
    let code = Code::from_u8(r.gen_range(1..=9)).unwrap();
    match r.gen_range(0..5) {
        // a few streams big enough to be deflated
        0 => {
            let max = if r.gen_ratio(1, 50) { 3000 } else { 30 };
            ServerFrame::Stream(any_stream(r, max))
        }
        1 => ServerFrame::Ack(Ack {
            step: r.gen(),
            value: r.gen(),
        }),
        2 => ServerFrame::Reject(Rejection::new(code, msg)),
        3 => ServerFrame::Error(Rejection::new(code, msg)),
        _ => ServerFrame::Report(format!("{{\"step\":{}}}", r.gen::<u32>())),
    }
}
