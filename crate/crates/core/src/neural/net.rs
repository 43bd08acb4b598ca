use super::{KernelGraph, NetParams, NeuralError};
use crate::neural::Edge;
use crate::scalar::{dot, sigmoid, Real};

/// `out = W x + b` for row-major `W` of shape `[out.len(), x.len()]`.
#[inline(always)]
fn affine<T: Real>(w: &[T], b: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o = b[r] + dot(&w[r * cols..(r + 1) * cols], x);
    }
}

/// `out = W [x1; x2] + b` without materializing the concatenation.
#[inline(always)]
fn affine2<T: Real>(w: &[T], b: &[T], x1: &[T], x2: &[T], out: &mut [T]) {
    let (c1, c2) = (x1.len(), x2.len());
    let cols = c1 + c2;
    for (r, o) in out.iter_mut().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        *o = b[r] + dot(&row[..c1], x1) + dot(&row[c1..], x2);
    }
}

/// `dx += Wᵀ dy`.
#[inline(always)]
fn matvec_t_acc<T: Real>(w: &[T], dy: &[T], dx: &mut [T]) {
    let cols = dx.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        for (d, &wv) in dx.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
            *d = *d + g * wv;
        }
    }
}

/// `dW += dy xᵀ`.
#[inline(always)]
fn outer_acc<T: Real>(dw: &mut [T], dy: &[T], x: &[T]) {
    let cols = x.len();
    for (r, &g) in dy.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        for (d, &xv) in dw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *d = *d + g * xv;
        }
    }
}

#[inline(always)]
fn outer_acc2<T: Real>(dw: &mut [T], dy: &[T], x1: &[T], x2: &[T]) {
    let (c1, cols) = (x1.len(), x1.len() + x2.len());
    for (r, &g) in dy.iter().enumerate() {
        if g == T::zero() {
            continue;
        }
        let row = &mut dw[r * cols..(r + 1) * cols];
        for (d, &xv) in row[..c1].iter_mut().zip(x1) {
            *d = *d + g * xv;
        }
        for (d, &xv) in row[c1..].iter_mut().zip(x2) {
            *d = *d + g * xv;
        }
    }
}

#[inline(always)]
fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d = *d + s;
    }
}

/// Initial hidden state `tanh(W_in · encoding + b_in)`.
pub fn embed<T: Real>(encoding: &[T], params: &NetParams<T>) -> Result<Vec<T>, NeuralError> {
    if encoding.len() != params.input_dim() {
        return Err(NeuralError::Dimension(format!(
            "encoding has {} entries, network expects {}",
            encoding.len(),
            params.input_dim()
        )));
    }
    let mut h = vec![T::zero(); params.hidden()];
    affine(&params.embed_w, &params.embed_b, encoding, &mut h);
    h.iter_mut().for_each(|x| *x = x.tanh());
    Ok(h)
}

#[inline(always)]
fn message_into<T: Real>(h_src: &[T], h_dst: &[T], intra: bool, p: &NetParams<T>, pre: &mut [T], out: &mut [T]) {
    affine2(&p.msg_w1, &p.msg_b1, h_src, h_dst, pre);
    if intra {
        add_into(pre, &p.msg_intra);
    }
    let hidden: Vec<T> = pre.iter().map(|&x| x.max(T::zero())).collect();
    affine(&p.msg_w2, &p.msg_b2, &hidden, out);
}

/// Message `m_{i→j} = MLP([h_i, h_j])` sent along an edge from `h_i` to `h_j`.
pub fn message<T: Real>(h_i: &[T], h_j: &[T], intra: bool, params: &NetParams<T>) -> Vec<T> {
    let h = params.hidden();
    let (mut pre, mut out) = (vec![T::zero(); h], vec![T::zero(); h]);
    message_into(h_i, h_j, intra, params, &mut pre, &mut out);
    out
}

/// Elementwise sum of incoming messages; zero when there are none.
pub fn aggregate<T: Real>(messages: &[Vec<T>], hidden: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); hidden];
    for m in messages {
        add_into(&mut acc, m);
    }
    acc
}

struct GruStep<T> {
    z: Vec<T>,
    r: Vec<T>,
    cand: Vec<T>,
    next: Vec<T>,
}

#[inline(always)]
fn gru_step<T: Real>(h: &[T], m: &[T], p: &NetParams<T>) -> GruStep<T> {
    let n = h.len();
    let mut z = vec![T::zero(); n];
    let mut r = vec![T::zero(); n];
    affine2(&p.gru_wz, &p.gru_bz, h, m, &mut z);
    affine2(&p.gru_wr, &p.gru_br, h, m, &mut r);
    z.iter_mut().for_each(|x| *x = sigmoid(*x));
    r.iter_mut().for_each(|x| *x = sigmoid(*x));
    let rh: Vec<T> = r.iter().zip(h).map(|(&a, &b)| a * b).collect();
    let mut cand = vec![T::zero(); n];
    affine2(&p.gru_wh, &p.gru_bh, &rh, m, &mut cand);
    cand.iter_mut().for_each(|x| *x = x.tanh());
    let next = (0..n).map(|k| (T::one() - z[k]) * h[k] + z[k] * cand[k]).collect();
    GruStep { z, r, cand, next }
}

/// GRU cell: `z = σ(W_z[h, m])`, `r = σ(W_r[h, m])`, `h~ = tanh(W_h[r⊙h, m])`,
/// `h' = (1 - z)⊙h + z⊙h~`.
pub fn gru_update<T: Real>(h: &[T], m: &[T], params: &NetParams<T>) -> Vec<T> {
    gru_step(h, m, params).next
}

/// Intermediate values of one forward pass, enough for the reverse pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    layers: usize,
    n: usize,
    inputs: Vec<Vec<T>>,
    edges: Vec<Edge>,
    /// `states[s]` holds all node states after `s` rounds, node-major.
    states: Vec<Vec<T>>,
    /// Message hidden pre-activations per round, edge-major.
    msg_pre: Vec<Vec<T>>,
    /// Aggregated messages per round, node-major.
    agg: Vec<Vec<T>>,
    z: Vec<Vec<T>>,
    r: Vec<Vec<T>>,
    cand: Vec<Vec<T>>,
    pooled: Vec<T>,
    read_pre: Vec<T>,
    pub output: T,
}

/// Forward pass returning the readout score and the cache.
pub fn forward_cached<T: Real>(
    graph: &KernelGraph<T>,
    params: &NetParams<T>,
    layers: usize,
) -> Result<(T, ForwardCache<T>), NeuralError> {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports the enabled feature.
        return unsafe { forward_wide(graph, params, layers) };
    }
    forward_body(graph, params, layers)
}

// Same code compiled with wider vectors. No fused multiply-add is enabled, so
// results are bit-identical to the portable build.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
fn forward_wide<T: Real>(
    graph: &KernelGraph<T>,
    params: &NetParams<T>,
    layers: usize,
) -> Result<(T, ForwardCache<T>), NeuralError> {
    forward_body(graph, params, layers)
}

#[inline(always)]
fn forward_body<T: Real>(
    graph: &KernelGraph<T>,
    params: &NetParams<T>,
    layers: usize,
) -> Result<(T, ForwardCache<T>), NeuralError> {
    if layers == 0 {
        return Err(NeuralError::NoLayers);
    }
    if graph.nodes.is_empty() {
        return Err(NeuralError::EmptyGraph);
    }
    let h = params.hidden();
    let n = graph.n_nodes();
    let mut h0 = Vec::with_capacity(n * h);
    for enc in &graph.nodes {
        h0.extend(embed(enc, params)?);
    }
    let mut states = vec![h0];
    let (mut msg_pre, mut agg, mut zs, mut rs, mut cands) = (vec![], vec![], vec![], vec![], vec![]);
    let mut msg = vec![T::zero(); h];
    for _ in 0..layers {
        let cur = states.last().unwrap();
        let mut pre = vec![T::zero(); graph.edges.len() * h];
        let mut m_agg = vec![T::zero(); n * h];
        for (k, e) in graph.edges.iter().enumerate() {
            message_into(
                &cur[e.src * h..(e.src + 1) * h],
                &cur[e.dst * h..(e.dst + 1) * h],
                e.intra,
                params,
                &mut pre[k * h..(k + 1) * h],
                &mut msg,
            );
            add_into(&mut m_agg[e.dst * h..(e.dst + 1) * h], &msg);
        }
        let (mut z, mut r, mut c, mut next) = (
            Vec::with_capacity(n * h),
            Vec::with_capacity(n * h),
            Vec::with_capacity(n * h),
            Vec::with_capacity(n * h),
        );
        for i in 0..n {
            let step = gru_step(&cur[i * h..(i + 1) * h], &m_agg[i * h..(i + 1) * h], params);
            z.extend(step.z);
            r.extend(step.r);
            c.extend(step.cand);
            next.extend(step.next);
        }
        msg_pre.push(pre);
        agg.push(m_agg);
        zs.push(z);
        rs.push(r);
        cands.push(c);
        states.push(next);
    }
    let last = states.last().unwrap();
    let mut pooled = vec![T::zero(); h];
    for i in 0..n {
        add_into(&mut pooled, &last[i * h..(i + 1) * h]);
    }
    let mut read_pre = vec![T::zero(); h];
    affine(&params.read_w1, &params.read_b1, &pooled, &mut read_pre);
    let relu: Vec<T> = read_pre.iter().map(|&x| x.max(T::zero())).collect();
    let output = params.read_b2[0] + dot(&params.read_w2, &relu);
    let cache = ForwardCache {
        layers,
        n,
        inputs: graph.nodes.clone(),
        edges: graph.edges.clone(),
        states,
        msg_pre,
        agg,
        z: zs,
        r: rs,
        cand: cands,
        pooled,
        read_pre,
        output,
    };
    Ok((output, cache))
}

/// Readout score `b` of a kernel graph after `layers` rounds.
pub fn forward<T: Real>(graph: &KernelGraph<T>, params: &NetParams<T>, layers: usize) -> Result<T, NeuralError> {
    forward_cached(graph, params, layers).map(|(b, _)| b)
}

impl<T: Real> ForwardCache<T> {
    /// Adds `upstream · ∂b/∂θ` into `grads`.
    pub fn accumulate_backward(&self, params: &NetParams<T>, upstream: T, grads: &mut NetParams<T>) {
        if upstream == T::zero() {
            return;
        }
        #[cfg(target_arch = "x86_64")]
        if std::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports the enabled feature.
            return unsafe { self.backward_wide(params, upstream, grads) };
        }
        self.backward_body(params, upstream, grads)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    fn backward_wide(&self, params: &NetParams<T>, upstream: T, grads: &mut NetParams<T>) {
        self.backward_body(params, upstream, grads)
    }

    #[inline(always)]
    fn backward_body(&self, params: &NetParams<T>, upstream: T, grads: &mut NetParams<T>) {
        let h = params.hidden();
        let n = self.n;

        // Readout.
        let relu: Vec<T> = self.read_pre.iter().map(|&x| x.max(T::zero())).collect();
        grads.read_b2[0] = grads.read_b2[0] + upstream;
        for (g, &u) in grads.read_w2.iter_mut().zip(&relu) {
            *g = *g + upstream * u;
        }
        let d_pre: Vec<T> = (0..h)
            .map(|k| if self.read_pre[k] > T::zero() { upstream * params.read_w2[k] } else { T::zero() })
            .collect();
        outer_acc(&mut grads.read_w1, &d_pre, &self.pooled);
        add_into(&mut grads.read_b1, &d_pre);
        let mut d_pooled = vec![T::zero(); h];
        matvec_t_acc(&params.read_w1, &d_pre, &mut d_pooled);

        let mut d_state: Vec<T> = (0..n).flat_map(|_| d_pooled.iter().copied()).collect();

        for s in (0..self.layers).rev() {
            let prev = &self.states[s];
            let (zs, rs, cs, agg) = (&self.z[s], &self.r[s], &self.cand[s], &self.agg[s]);
            let mut d_prev = vec![T::zero(); n * h];
            let mut d_agg = vec![T::zero(); n * h];
            let mut d_zpre = vec![T::zero(); h];
            let mut d_rpre = vec![T::zero(); h];
            let mut d_cpre = vec![T::zero(); h];
            let mut d_cin = vec![T::zero(); 2 * h];
            let mut d_zrin = vec![T::zero(); 2 * h];
            for i in 0..n {
                let sl = i * h..(i + 1) * h;
                let (hp, z, r, c, m) =
                    (&prev[sl.clone()], &zs[sl.clone()], &rs[sl.clone()], &cs[sl.clone()], &agg[sl.clone()]);
                let dh = &d_state[sl.clone()];
                let rh: Vec<T> = r.iter().zip(hp).map(|(&a, &b)| a * b).collect();
                for k in 0..h {
                    let dz = dh[k] * (c[k] - hp[k]);
                    d_zpre[k] = dz * z[k] * (T::one() - z[k]);
                    let dc = dh[k] * z[k];
                    d_cpre[k] = dc * (T::one() - c[k] * c[k]);
                    d_prev[i * h + k] = d_prev[i * h + k] + dh[k] * (T::one() - z[k]);
                }
                // Candidate gate over [r⊙h, m].
                outer_acc2(&mut grads.gru_wh, &d_cpre, &rh, m);
                add_into(&mut grads.gru_bh, &d_cpre);
                d_cin.iter_mut().for_each(|x| *x = T::zero());
                matvec_t_acc(&params.gru_wh, &d_cpre, &mut d_cin);
                for k in 0..h {
                    let d_rh = d_cin[k];
                    d_rpre[k] = d_rh * hp[k] * r[k] * (T::one() - r[k]);
                    d_prev[i * h + k] = d_prev[i * h + k] + d_rh * r[k];
                    d_agg[i * h + k] = d_agg[i * h + k] + d_cin[h + k];
                }
                // Update and reset gates over [h, m].
                outer_acc2(&mut grads.gru_wz, &d_zpre, hp, m);
                add_into(&mut grads.gru_bz, &d_zpre);
                outer_acc2(&mut grads.gru_wr, &d_rpre, hp, m);
                add_into(&mut grads.gru_br, &d_rpre);
                d_zrin.iter_mut().for_each(|x| *x = T::zero());
                matvec_t_acc(&params.gru_wz, &d_zpre, &mut d_zrin);
                matvec_t_acc(&params.gru_wr, &d_rpre, &mut d_zrin);
                add_into(&mut d_prev[sl.clone()], &d_zrin[..h]);
                add_into(&mut d_agg[sl], &d_zrin[h..]);
            }

            // Messages.
            let pre = &self.msg_pre[s];
            let mut d_u = vec![T::zero(); h];
            let mut d_a = vec![T::zero(); h];
            let mut d_in = vec![T::zero(); 2 * h];
            for (k, e) in self.edges.iter().enumerate() {
                let dm = &d_agg[e.dst * h..(e.dst + 1) * h];
                let a = &pre[k * h..(k + 1) * h];
                let u: Vec<T> = a.iter().map(|&x| x.max(T::zero())).collect();
                outer_acc(&mut grads.msg_w2, dm, &u);
                add_into(&mut grads.msg_b2, dm);
                d_u.iter_mut().for_each(|x| *x = T::zero());
                matvec_t_acc(&params.msg_w2, dm, &mut d_u);
                for j in 0..h {
                    d_a[j] = if a[j] > T::zero() { d_u[j] } else { T::zero() };
                }
                let hs = &prev[e.src * h..(e.src + 1) * h];
                let hd = &prev[e.dst * h..(e.dst + 1) * h];
                outer_acc2(&mut grads.msg_w1, &d_a, hs, hd);
                add_into(&mut grads.msg_b1, &d_a);
                if e.intra {
                    add_into(&mut grads.msg_intra, &d_a);
                }
                d_in.iter_mut().for_each(|x| *x = T::zero());
                matvec_t_acc(&params.msg_w1, &d_a, &mut d_in);
                add_into(&mut d_prev[e.src * h..(e.src + 1) * h], &d_in[..h]);
                add_into(&mut d_prev[e.dst * h..(e.dst + 1) * h], &d_in[h..]);
            }
            d_state = d_prev;
        }

        // Embedding.
        let h0 = &self.states[0];
        let mut d_e = vec![T::zero(); h];
        for (i, x) in self.inputs.iter().enumerate() {
            for k in 0..h {
                let y = h0[i * h + k];
                d_e[k] = d_state[i * h + k] * (T::one() - y * y);
            }
            outer_acc(&mut grads.embed_w, &d_e, x);
            add_into(&mut grads.embed_b, &d_e);
        }
    }
}

/// Gradient of `upstream · b` with respect to every parameter.
pub fn backward<T: Real>(
    graph: &KernelGraph<T>,
    params: &NetParams<T>,
    layers: usize,
    upstream: T,
) -> Result<NetParams<T>, NeuralError> {
    let (_, cache) = forward_cached(graph, params, layers)?;
    let mut grads = params.zeros_like();
    cache.accumulate_backward(params, upstream, &mut grads);
    Ok(grads)
}
