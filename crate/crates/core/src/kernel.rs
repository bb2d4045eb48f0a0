//! Batched loss and gradient evaluation.
//!
//! Points are grouped into fixed-size chunks. For a chunk of `B` points the
//! network is run once on a stacked `(C·B) × width` activation matrix, where
//! the `C` channels are the value and, per differentiated direction, the first
//! and second derivative (the same second-order dual propagation as
//! [`crate::autodiff::Dual2`], vectorised). The backward pass is the exact
//! adjoint of that propagation, so the parameter gradient flows through
//! `u_x`, `u_xx`, `u_y`, `u_yy` the same way a tape sweep would.
//!
//! Chunk results are reduced in chunk order, which keeps the output
//! bit-identical across thread counts.

use crate::autodiff::Gradient;
use crate::loss::{LossBreakdown, LossData, LossError, LossWeights};
use crate::network::{InputEncoding, NetworkParams};
use crate::par::{map_with_scratch, Execution, KahanSum};
use crate::physics::ProblemSpec;

/// Rows per chunk. Fixed so that reductions do not depend on scheduling.
pub const CHUNK_ROWS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Term {
    Dirichlet,
    Neumann,
    Residual,
}

impl Term {
    /// Input slots differentiated for this term.
    fn directions(self) -> &'static [usize] {
        match self {
            Term::Dirichlet => &[],
            Term::Neumann => &[1],
            Term::Residual => &[0, 1],
        }
    }
}

#[derive(Debug, Clone)]
struct Chunk {
    term: Term,
    rows: usize,
    /// `rows × input_dim`, row-major.
    inputs: Vec<f64>,
    /// Residual: k of each row. Neumann: outward normal y-component.
    aux: Vec<f64>,
}

#[derive(Debug, Default)]
struct Scratch {
    acts: Vec<Vec<f64>>,
    zs: Vec<Vec<f64>>,
    ga: Vec<f64>,
    gz: Vec<f64>,
    gout: Vec<f64>,
}

struct ChunkOut {
    term: Term,
    sq: KahanSum,
    grad: Option<Vec<f64>>,
}

/// Pre-encoded training rows for repeated loss/gradient evaluation.
#[derive(Debug, Clone)]
pub struct BatchedLoss {
    spec: ProblemSpec,
    input_dim: usize,
    chunks: Vec<Chunk>,
    counts: [usize; 3],
}

impl BatchedLoss {
    pub fn new(data: &LossData<'_>) -> Result<Self, LossError> {
        let s = data.samples;
        if s.dirichlet.is_empty() {
            return Err(LossError::Empty("dirichlet"));
        }
        if s.neumann.is_empty() {
            return Err(LossError::Empty("neumann"));
        }
        if s.collocation.is_empty() {
            return Err(LossError::Empty("residual"));
        }
        let ks = &data.pairing.ks;
        if ks.is_empty() {
            return Err(LossError::NoK);
        }
        if let Some(&k) = ks.iter().find(|&&k| !(k > 0.0 && k.is_finite())) {
            return Err(crate::physics::PhysicsError::NonPositiveDiffusion(k).into());
        }
        let enc = data.pairing.encoding;
        let input_dim = enc.input_dim();
        let mut chunks = Vec::new();
        let d_rows = s.dirichlet.iter().flat_map(|p| ks.iter().map(move |&k| (p.x, p.y, k, 0.0)));
        push_chunks(&mut chunks, Term::Dirichlet, enc, d_rows);
        let n_rows = s
            .neumann
            .iter()
            .flat_map(|p| ks.iter().map(move |&k| (p.x, p.y, k, p.normal.1)));
        push_chunks(&mut chunks, Term::Neumann, enc, n_rows);
        let r_rows = s
            .collocation
            .iter()
            .flat_map(|&(x, y)| ks.iter().map(move |&k| (x, y, k, k)));
        push_chunks(&mut chunks, Term::Residual, enc, r_rows);
        let nk = ks.len();
        Ok(Self {
            spec: data.spec,
            input_dim,
            chunks,
            counts: [s.dirichlet.len() * nk, s.neumann.len() * nk, s.collocation.len() * nk],
        })
    }

    /// Number of (point, k) rows per term: Dirichlet, Neumann, residual.
    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn value(&self, params: &NetworkParams, weights: &LossWeights, exec: Execution) -> Result<LossBreakdown, LossError> {
        self.check(params)?;
        Ok(self.run(params, weights, exec, false).0)
    }

    pub fn value_and_grad(
        &self,
        params: &NetworkParams,
        weights: &LossWeights,
        exec: Execution,
    ) -> Result<(LossBreakdown, Gradient), LossError> {
        self.check(params)?;
        let (b, g) = self.run(params, weights, exec, true);
        Ok((b, g.expect("gradient requested")))
    }

    fn check(&self, params: &NetworkParams) -> Result<(), LossError> {
        let dim = params.shape().input_dim;
        if dim != self.input_dim {
            return Err(crate::network::NetworkError::InputLength {
                expected: dim,
                got: self.input_dim,
            }
            .into());
        }
        Ok(())
    }

    fn run(
        &self,
        params: &NetworkParams,
        weights: &LossWeights,
        exec: Execution,
        want_grad: bool,
    ) -> (LossBreakdown, Option<Gradient>) {
        let scale = [
            weights.c1 / self.counts[0] as f64,
            weights.c2 / self.counts[1] as f64,
            weights.c3 / self.counts[2] as f64,
        ];
        let spec = self.spec;
        let outs = map_with_scratch(exec, &self.chunks, Scratch::default, |scratch, chunk| {
            let idx = term_index(chunk.term);
            run_chunk(params, &spec, chunk, scale[idx], want_grad, scratch)
        });
        let mut sums = [KahanSum::default(); 3];
        let mut grad = want_grad.then(|| Gradient::zeros(params.len()));
        for out in outs {
            sums[term_index(out.term)].merge(out.sq);
            if let (Some(g), Some(cg)) = (grad.as_mut(), out.grad) {
                for (a, b) in g.entries.iter_mut().zip(&cg) {
                    *a += b;
                }
            }
        }
        let phi = |i: usize| sums[i].value() / self.counts[i] as f64;
        (weights.combine(phi(0), phi(1), phi(2)), grad)
    }
}

fn term_index(t: Term) -> usize {
    match t {
        Term::Dirichlet => 0,
        Term::Neumann => 1,
        Term::Residual => 2,
    }
}

fn push_chunks(
    chunks: &mut Vec<Chunk>,
    term: Term,
    enc: InputEncoding,
    rows: impl Iterator<Item = (f64, f64, f64, f64)>,
) {
    let dim = enc.input_dim();
    let mut current = Chunk {
        term,
        rows: 0,
        inputs: Vec::with_capacity(CHUNK_ROWS * dim),
        aux: Vec::with_capacity(CHUNK_ROWS),
    };
    let mut buf = [0.0; 3];
    for (x, y, k, aux) in rows {
        current.inputs.extend_from_slice(enc.encode(x, y, k, &mut buf));
        current.aux.push(aux);
        current.rows += 1;
        if current.rows == CHUNK_ROWS {
            let next = Chunk {
                term,
                rows: 0,
                inputs: Vec::with_capacity(CHUNK_ROWS * dim),
                aux: Vec::with_capacity(CHUNK_ROWS),
            };
            chunks.push(std::mem::replace(&mut current, next));
        }
    }
    if current.rows > 0 {
        chunks.push(current);
    }
}

/// `c = a · bᵀ` with `a: m×k`, `b: n×k`, `c: m×n`, all row-major.
fn mul_abt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n);
    // SAFETY: the asserted lengths cover every index the strides reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            1,
            k as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c = a · b` with `a: m×k`, `b: k×n`.
fn mul_ab(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            k as isize,
            1,
            b.as_ptr(),
            n as isize,
            1,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `c += aᵀ · b` with `a: m×k`, `b: m×n`, `c: k×n`.
fn acc_atb(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], c: &mut [f64]) {
    assert!(a.len() >= m * k && b.len() >= m * n && c.len() >= k * n);
    // SAFETY: as above.
    unsafe {
        matrixmultiply::dgemm(
            k,
            m,
            n,
            1.0,
            a.as_ptr(),
            1,
            k as isize,
            b.as_ptr(),
            n as isize,
            1,
            1.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn resize(v: &mut Vec<f64>, len: usize) {
    v.clear();
    v.resize(len, 0.0);
}

fn run_chunk(
    params: &NetworkParams,
    spec: &ProblemSpec,
    chunk: &Chunk,
    grad_scale: f64,
    want_grad: bool,
    s: &mut Scratch,
) -> ChunkOut {
    let layers = params.layers();
    let values = &params.values;
    let b = chunk.rows;
    let dirs = chunk.term.directions();
    let nc = 1 + 2 * dirs.len();
    let m = nc * b;
    let in_dim = layers[0].cols;
    let last = layers.len() - 1;

    s.acts.resize_with(layers.len(), Vec::new);
    s.zs.resize_with(layers.len(), Vec::new);

    // stacked input channels
    let a0 = &mut s.acts[0];
    resize(a0, m * in_dim);
    a0[..b * in_dim].copy_from_slice(&chunk.inputs);
    for (j, &slot) in dirs.iter().enumerate() {
        let base = (1 + 2 * j) * b;
        for r in 0..b {
            a0[(base + r) * in_dim + slot] = 1.0;
        }
    }

    for (l, layer) in layers.iter().enumerate() {
        let w = &values[layer.weight_range()];
        let bias = &values[layer.bias_range()];
        let width = layer.rows;
        let (before, after) = s.acts.split_at_mut(l + 1);
        let input = &before[l];
        let z = &mut s.zs[l];
        resize(z, m * width);
        mul_abt(m, layer.cols, width, input, w, z);
        for row in z[..b * width].chunks_exact_mut(width) {
            for (zi, bi) in row.iter_mut().zip(bias) {
                *zi += bi;
            }
        }
        if l == last {
            break;
        }
        let out = &mut after[0];
        resize(out, m * width);
        for r in 0..b {
            for i in 0..width {
                let t = z[r * width + i].tanh();
                let sech2 = 1.0 - t * t;
                out[r * width + i] = t;
                for j in 0..dirs.len() {
                    let p1 = ((1 + 2 * j) * b + r) * width + i;
                    let p2 = ((2 + 2 * j) * b + r) * width + i;
                    let zd = z[p1];
                    out[p1] = sech2 * zd;
                    out[p2] = sech2 * z[p2] - 2.0 * t * sech2 * zd * zd;
                }
            }
        }
    }

    // output layer has width 1, so channel c of row r sits at index c·b + r
    let u = &s.zs[last];
    let mut sq = KahanSum::default();
    resize(&mut s.gout, m);
    let gout = &mut s.gout;
    match chunk.term {
        Term::Dirichlet => {
            for r in 0..b {
                let e = u[r];
                sq.add(e * e);
                gout[r] = grad_scale * 2.0 * e;
            }
        }
        Term::Neumann => {
            for r in 0..b {
                let ny = chunk.aux[r];
                let e = u[b + r] * ny;
                sq.add(e * e);
                gout[b + r] = grad_scale * 2.0 * e * ny;
            }
        }
        Term::Residual => {
            for r in 0..b {
                let k = chunk.aux[r];
                let (v, ux, uxx, uyy) = (u[r], u[b + r], u[2 * b + r], u[4 * b + r]);
                let e = -k * (uxx + uyy) + spec.a * ux + spec.sigma * v - spec.forcing;
                sq.add(e * e);
                let g = grad_scale * 2.0 * e;
                gout[r] = spec.sigma * g;
                gout[b + r] = spec.a * g;
                gout[2 * b + r] = -k * g;
                gout[3 * b + r] = 0.0;
                gout[4 * b + r] = -k * g;
            }
        }
    }
    if !want_grad {
        return ChunkOut {
            term: chunk.term,
            sq,
            grad: None,
        };
    }

    let mut grad = vec![0.0; values.len()];
    // output layer
    let out_layer = layers[last];
    let width = out_layer.cols;
    acc_atb(m, 1, width, &s.gout, &s.acts[last], &mut grad[out_layer.weight_range()]);
    grad[out_layer.bias_range().start] += s.gout[..b].iter().sum::<f64>();
    resize(&mut s.ga, m * width);
    mul_ab(m, 1, width, &s.gout, &values[out_layer.weight_range()], &mut s.ga);

    for l in (0..last).rev() {
        let layer = layers[l];
        let width = layer.rows;
        let z = &s.zs[l];
        let t_all = &s.acts[l + 1];
        let ga = &s.ga;
        resize(&mut s.gz, m * width);
        let gz = &mut s.gz;
        for r in 0..b {
            for i in 0..width {
                let vi = r * width + i;
                let t = t_all[vi];
                let sech2 = 1.0 - t * t;
                let ts = t * sech2;
                let dts = sech2 * sech2 - 2.0 * t * ts;
                let mut gv = ga[vi] * sech2;
                for j in 0..dirs.len() {
                    let p1 = ((1 + 2 * j) * b + r) * width + i;
                    let p2 = ((2 + 2 * j) * b + r) * width + i;
                    let (zd, zdd) = (z[p1], z[p2]);
                    let (g1, g2) = (ga[p1], ga[p2]);
                    gv += g1 * (-2.0 * ts * zd) + g2 * (-2.0 * ts * zdd - 2.0 * zd * zd * dts);
                    gz[p1] = g1 * sech2 - 4.0 * g2 * ts * zd;
                    gz[p2] = g2 * sech2;
                }
                gz[vi] = gv;
            }
        }
        acc_atb(m, width, layer.cols, &s.gz, &s.acts[l], &mut grad[layer.weight_range()]);
        let gb = &mut grad[layer.bias_range()];
        for row in s.gz[..b * width].chunks_exact(width) {
            for (g, v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        if l > 0 {
            resize(&mut s.ga, m * layer.cols);
            mul_ab(m, width, layer.cols, &s.gz, &values[layer.weight_range()], &mut s.ga);
        }
    }
    ChunkOut {
        term: chunk.term,
        sq,
        grad: Some(grad),
    }
}

/// Batched plain forward pass over many input rows (`rows × input_dim`).
pub fn forward_rows(params: &NetworkParams, inputs: &[f64], exec: Execution) -> Vec<f64> {
    let dim = params.shape().input_dim;
    let chunks: Vec<&[f64]> = inputs.chunks(CHUNK_ROWS * dim).collect();
    let outs = map_with_scratch(exec, &chunks, || (Vec::new(), Vec::new()), |(a, z): &mut (Vec<f64>, Vec<f64>), rows| {
        let b = rows.len() / dim;
        a.clear();
        a.extend_from_slice(rows);
        let layers = params.layers();
        let last = layers.len() - 1;
        for (l, layer) in layers.iter().enumerate() {
            resize(z, b * layer.rows);
            mul_abt(b, layer.cols, layer.rows, a, &params.values[layer.weight_range()], z);
            let bias = &params.values[layer.bias_range()];
            for row in z.chunks_exact_mut(layer.rows) {
                for (zi, bi) in row.iter_mut().zip(bias) {
                    *zi += bi;
                    if l != last {
                        *zi = zi.tanh();
                    }
                }
            }
            std::mem::swap(a, z);
        }
        a.clone()
    });
    outs.concat()
}
