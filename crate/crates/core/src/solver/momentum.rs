use crate::hiergrid::{Field, FieldSet};

/// Explicit momentum tendency `nu * lap(phi) - (u . grad) phi` for velocity
/// component `comp` at linear index `i`. Central diffusion, first-order
/// upwind advection.
#[inline]
pub fn momentum_rhs(
    fs: &FieldSet,
    src: [Field; 3],
    comp: usize,
    i: usize,
    h: [f64; 3],
    nu: f64,
    axes: &[usize],
) -> f64 {
    let phi = fs.get(src[comp]);
    let c = phi[i];
    let mut diff = 0.0;
    let mut adv = 0.0;
    for &a in axes {
        let s = fs.stride(a);
        let (m, p) = (phi[i - s], phi[i + s]);
        diff += (p - 2.0 * c + m) / (h[a] * h[a]);
        let ua = fs.get(src[a])[i];
        adv += ua.max(0.0) * (c - m) / h[a] + ua.min(0.0) * (p - c) / h[a];
    }
    nu * diff - adv
}

/// `dst = base + scale * rhs(src)` over the interior of one grid; solid
/// cells are forced to rest.
#[allow(clippy::too_many_arguments)]
pub fn advance(
    fs: &mut FieldSet,
    src: [Field; 3],
    base: [Field; 3],
    dst: [Field; 3],
    scale: f64,
    h: [f64; 3],
    nu: f64,
    axes: &[usize],
) {
    let idx: Vec<usize> = fs.interior_indices().collect();
    let mut out = vec![[0.0f64; 3]; idx.len()];
    {
        let view = &*fs;
        for (o, &i) in out.iter_mut().zip(&idx) {
            if view.solid()[i] {
                continue;
            }
            for &c in axes {
                o[c] = view.get(base[c])[i] + scale * momentum_rhs(view, src, c, i, h, nu, axes);
            }
        }
    }
    for c in 0..3 {
        let active = axes.contains(&c);
        let d = fs.get_mut(dst[c]);
        for (o, &i) in out.iter().zip(&idx) {
            d[i] = if active { o[c] } else { 0.0 };
        }
    }
}
