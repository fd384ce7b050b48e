//! Cell-centred geometric multigrid on a single uniform array, used as the
//! coarsest-level solver of the forest Poisson cycle.

use crate::geometry::Face;

#[derive(Debug, Clone)]
pub struct UniformPoisson {
    n: Vec<[usize; 3]>,
    h: Vec<[f64; 3]>,
    axes: Vec<usize>,
    /// Zero-value (instead of zero-gradient) condition per face.
    dirichlet: [bool; 6],
}

fn ext(n: [usize; 3]) -> [usize; 3] {
    [n[0] + 2, n[1] + 2, n[2] + 2]
}

fn strides(n: [usize; 3]) -> [usize; 3] {
    let e = ext(n);
    [1, e[0], e[0] * e[1]]
}

fn interior(n: [usize; 3]) -> impl Iterator<Item = ([usize; 3], usize)> {
    let s = strides(n);
    (1..=n[2]).flat_map(move |k| {
        (1..=n[1])
            .flat_map(move |j| (1..=n[0]).map(move |i| ([i, j, k], i * s[0] + j * s[1] + k * s[2])))
    })
}

impl UniformPoisson {
    pub fn new(n: [usize; 3], h: [f64; 3], axes: &[usize], dirichlet: [bool; 6]) -> Self {
        let mut ns = vec![n];
        let mut hs = vec![h];
        loop {
            let cur = *ns.last().expect("non-empty");
            if !axes.iter().all(|&a| cur[a] % 2 == 0 && cur[a] >= 4) {
                break;
            }
            let mut nn = cur;
            let mut hh = *hs.last().expect("non-empty");
            for &a in axes {
                nn[a] /= 2;
                hh[a] *= 2.0;
            }
            ns.push(nn);
            hs.push(hh);
        }
        Self {
            n: ns,
            h: hs,
            axes: axes.to_vec(),
            dirichlet,
        }
    }

    pub fn levels(&self) -> usize {
        self.n.len()
    }

    /// Halo-inclusive length of the finest array.
    pub fn len(&self) -> usize {
        let e = ext(self.n[0]);
        e[0] * e[1] * e[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pure_neumann(&self) -> bool {
        !self
            .axes
            .iter()
            .any(|&a| self.dirichlet[2 * a] || self.dirichlet[2 * a + 1])
    }

    /// Halo-inclusive linear index on the finest array.
    pub fn idx(&self, ijk: [usize; 3]) -> usize {
        let s = strides(self.n[0]);
        ijk[0] * s[0] + ijk[1] * s[1] + ijk[2] * s[2]
    }

    fn apply_bc(&self, lvl: usize, x: &mut [f64]) {
        let n = self.n[lvl];
        let s = strides(n);
        for &a in &self.axes {
            let [b, c] = tangential(a);
            let sign = |plus| {
                if self.dirichlet[Face::new(a, plus).index()] {
                    -1.0
                } else {
                    1.0
                }
            };
            let (lo, hi) = (sign(false), sign(true));
            for kc in 1..=n[c] {
                for kb in 1..=n[b] {
                    let base = kb * s[b] + kc * s[c];
                    x[base] = lo * x[base + s[a]];
                    x[base + (n[a] + 1) * s[a]] = hi * x[base + n[a] * s[a]];
                }
            }
        }
    }

    fn stencil(&self, lvl: usize) -> Stencil {
        let s = strides(self.n[lvl]);
        let h = self.h[lvl];
        let mut st = Stencil {
            off: [0; 3],
            w: [0.0; 3],
            count: self.axes.len(),
            diag: 0.0,
        };
        for (k, &a) in self.axes.iter().enumerate() {
            st.off[k] = s[a];
            st.w[k] = 1.0 / (h[a] * h[a]);
            st.diag += 2.0 * st.w[k];
        }
        st
    }

    fn residual(&self, lvl: usize, x: &mut [f64], b: &[f64], r: &mut [f64]) -> f64 {
        self.apply_bc(lvl, x);
        let st = self.stencil(lvl);
        let mut m = 0.0f64;
        for (_, i) in interior(self.n[lvl]) {
            r[i] = b[i] - st.apply(x, i);
            m = m.max(r[i].abs());
        }
        m
    }

    fn remove_mean(&self, lvl: usize, x: &mut [f64]) {
        let n = self.n[lvl];
        let (mut sum, mut cnt) = (0.0, 0usize);
        for (_, i) in interior(n) {
            sum += x[i];
            cnt += 1;
        }
        let mean = sum / cnt as f64;
        for (_, i) in interior(n) {
            x[i] -= mean;
        }
    }

    /// Red-black Gauss-Seidel.
    fn smooth(&self, lvl: usize, x: &mut [f64], b: &[f64], sweeps: usize) {
        let st = self.stencil(lvl);
        let n = self.n[lvl];
        let s = strides(n);
        for _ in 0..sweeps {
            for colour in 0..2 {
                self.apply_bc(lvl, x);
                for k in 1..=n[2] {
                    for j in 1..=n[1] {
                        let i0 = 1 + (j + k + colour) % 2;
                        let row = j * s[1] + k * s[2];
                        for i in (i0..=n[0]).step_by(2) {
                            let c = row + i;
                            x[c] += (st.apply(x, c) - b[c]) / st.diag;
                        }
                    }
                }
            }
        }
    }

    /// Conjugate gradients on the coarsest level, to near machine precision.
    fn direct(&self, lvl: usize, x: &mut [f64], b: &[f64], ws: &mut Work) {
        let n = self.n[lvl];
        let st = self.stencil(lvl);
        let len = ext(n).iter().product::<usize>();
        let neumann = self.pure_neumann();
        let (r, rest) = ws.scratch.split_at_mut(len);
        let (p, rest) = rest.split_at_mut(len);
        let q = &mut rest[..len];
        // A = -L is positive (semi)definite; solve A x = -b, whose residual
        // is the negated b - L x.
        self.residual(lvl, x, b, r);
        for (_, i) in interior(n) {
            r[i] = -r[i];
        }
        if neumann {
            self.remove_mean(lvl, r);
        }
        let r0 = interior(n).fold(0.0f64, |m, (_, i)| m.max(r[i].abs()));
        if r0 == 0.0 {
            return;
        }
        p.fill(0.0);
        for (_, i) in interior(n) {
            p[i] = r[i];
        }
        let mut rr: f64 = interior(n).map(|(_, i)| r[i] * r[i]).sum();
        let cells = n[0] * n[1] * n[2];
        for _ in 0..2 * cells + 10 {
            self.apply_bc(lvl, p);
            let mut pq = 0.0;
            for (_, i) in interior(n) {
                q[i] = -st.apply(p, i);
                pq += p[i] * q[i];
            }
            if pq <= 0.0 {
                break;
            }
            let alpha = rr / pq;
            let mut rmax = 0.0f64;
            for (_, i) in interior(n) {
                x[i] += alpha * p[i];
                r[i] -= alpha * q[i];
                rmax = rmax.max(r[i].abs());
            }
            if neumann {
                self.remove_mean(lvl, r);
            }
            if rmax <= 1e-13 * r0 {
                break;
            }
            let rr_new: f64 = interior(n).map(|(_, i)| r[i] * r[i]).sum();
            let beta = rr_new / rr;
            rr = rr_new;
            for (_, i) in interior(n) {
                p[i] = r[i] + beta * p[i];
            }
        }
    }

    fn vcycle(&self, lvl: usize, x: &mut [f64], b: &[f64], ws: &mut Work) {
        if lvl + 1 == self.n.len() {
            self.direct(lvl, x, b, ws);
            return;
        }
        let n = self.n[lvl];
        self.smooth(lvl, x, b, 2);
        let mut r = std::mem::take(&mut ws.res[lvl]);
        self.residual(lvl, x, b, &mut r);

        let nc = self.n[lvl + 1];
        let mut bc = std::mem::take(&mut ws.rhs[lvl + 1]);
        let mut xc = std::mem::take(&mut ws.sol[lvl + 1]);
        xc.fill(0.0);
        let (sf, sc) = (strides(n), strides(nc));
        let k: [usize; 3] = std::array::from_fn(|a| if self.axes.contains(&a) { 2 } else { 1 });
        let inv = 1.0 / (k[0] * k[1] * k[2]) as f64;
        for (c, ci) in interior(nc) {
            let mut acc = 0.0;
            for dz in 0..k[2] {
                for dy in 0..k[1] {
                    for dx in 0..k[0] {
                        let f = [
                            (c[0] - 1) * k[0] + dx + 1,
                            (c[1] - 1) * k[1] + dy + 1,
                            (c[2] - 1) * k[2] + dz + 1,
                        ];
                        acc += r[f[0] * sf[0] + f[1] * sf[1] + f[2] * sf[2]];
                    }
                }
            }
            bc[ci] = acc * inv;
        }
        self.vcycle(lvl + 1, &mut xc, &bc, ws);
        self.apply_bc(lvl + 1, &mut xc);
        for (f, fi) in interior(n) {
            let c: [usize; 3] = std::array::from_fn(|a| (f[a] - 1) / k[a] + 1);
            let ci = c[0] * sc[0] + c[1] * sc[1] + c[2] * sc[2];
            let mut v = xc[ci];
            for &a in &self.axes {
                let sign = if (f[a] - 1) % 2 == 0 { -1.0 } else { 1.0 };
                v += sign * 0.125 * (xc[ci + sc[a]] - xc[ci - sc[a]]);
            }
            x[fi] += v;
        }
        ws.res[lvl] = r;
        ws.rhs[lvl + 1] = bc;
        ws.sol[lvl + 1] = xc;
        self.smooth(lvl, x, b, 2);
    }

    /// Runs V-cycles until the max residual falls below `rel_tol` times its
    /// initial value. `x` and `b` are halo-inclusive finest arrays.
    pub fn solve(&self, x: &mut [f64], b: &[f64], rel_tol: f64, max_cycles: usize) -> (usize, f64) {
        let lens: Vec<usize> = self.n.iter().map(|&n| ext(n).iter().product()).collect();
        let mut ws = Work {
            res: lens.iter().map(|&l| vec![0.0; l]).collect(),
            rhs: lens.iter().map(|&l| vec![0.0; l]).collect(),
            sol: lens.iter().map(|&l| vec![0.0; l]).collect(),
            scratch: vec![0.0; 3 * lens.last().copied().unwrap_or(0)],
        };
        let mut r = vec![0.0; self.len()];
        let r0 = self.residual(0, x, b, &mut r);
        let mut res = r0;
        let mut cycles = 0;
        while cycles < max_cycles && res > rel_tol * r0 && res > 0.0 {
            self.vcycle(0, x, b, &mut ws);
            if self.pure_neumann() {
                self.remove_mean(0, x);
            }
            res = self.residual(0, x, b, &mut r);
            cycles += 1;
        }
        self.apply_bc(0, x);
        (cycles, res)
    }
}

/// Per-level buffers reused across cycles.
struct Work {
    res: Vec<Vec<f64>>,
    rhs: Vec<Vec<f64>>,
    sol: Vec<Vec<f64>>,
    scratch: Vec<f64>,
}

#[derive(Clone, Copy)]
struct Stencil {
    off: [usize; 3],
    w: [f64; 3],
    count: usize,
    diag: f64,
}

impl Stencil {
    #[inline(always)]
    fn apply(&self, x: &[f64], i: usize) -> f64 {
        let mut acc = 0.0;
        for k in 0..self.count {
            let s = self.off[k];
            acc += (x[i + s] - 2.0 * x[i] + x[i - s]) * self.w[k];
        }
        acc
    }
}

fn tangential(a: usize) -> [usize; 2] {
    match a {
        0 => [1, 2],
        1 => [0, 2],
        _ => [0, 1],
    }
}
