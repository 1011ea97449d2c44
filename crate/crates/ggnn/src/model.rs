//! Gated graph neural network: embedding lookup, gated propagation,
//! graph read-out and an MLP head, with exact reverse-mode gradients.

use std::fmt;
use std::str::FromStr;

use bytetr_core::vsg::EncodedGraph;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{
    add_assign, log_sum_exp, matvec, matvec_t_acc, outer_acc, sigmoid, softmax, Tensor,
};
use crate::GgnnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Sum,
    Mean,
    Max,
}

impl FromStr for Aggregation {
    type Err = GgnnError;

    fn from_str(s: &str) -> Result<Self, GgnnError> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            "max" => Ok(Aggregation::Max),
            _ => Err(GgnnError::BadConfig(format!("unknown aggregation `{s}`"))),
        }
    }
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
            Aggregation::Max => "max",
        })
    }
}

/// How an edge kind scales the shared message transform.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeWeighting {
    /// One learned scalar per kind.
    Scalar,
    /// One learned vector per kind, applied elementwise.
    Diagonal,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GgnnConfig {
    pub d_in: usize,
    pub hidden: usize,
    pub steps: usize,
    pub aggregation: Aggregation,
    pub mlp_hidden: usize,
    pub num_classes: usize,
    pub edge_weighting: EdgeWeighting,
    pub seed: u64,
}

impl Default for GgnnConfig {
    fn default() -> Self {
        GgnnConfig {
            d_in: 64,
            hidden: 128,
            steps: 5,
            aggregation: Aggregation::Sum,
            mlp_hidden: 128,
            num_classes: bytetr_core::types::NUM_CLASSES,
            edge_weighting: EdgeWeighting::Scalar,
            seed: 0,
        }
    }
}

impl GgnnConfig {
    pub fn validate(&self) -> Result<(), GgnnError> {
        let bad = |m: &str| Err(GgnnError::BadConfig(m.to_string()));
        if self.d_in == 0 || self.hidden == 0 || self.mlp_hidden == 0 {
            return bad("widths must be positive");
        }
        if self.d_in > self.hidden {
            return bad("d_in must not exceed the hidden width");
        }
        if self.steps == 0 {
            return bad("at least one propagation step is required");
        }
        if self.num_classes < 2 {
            return bad("at least two classes are required");
        }
        Ok(())
    }
}

/// All trainable tensors. Gradients and optimizer moments reuse this type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub embedding: Tensor,
    pub theta: Tensor,
    pub edge: Tensor,
    pub wz: Tensor,
    pub bz: Tensor,
    pub wr: Tensor,
    pub br: Tensor,
    pub wn: Tensor,
    pub bn: Tensor,
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

pub const PARAM_NAMES: [&str; 13] = [
    "embedding",
    "theta",
    "edge",
    "wz",
    "bz",
    "wr",
    "br",
    "wn",
    "bn",
    "w1",
    "b1",
    "w2",
    "b2",
];

impl ModelParams {
    pub fn tensors(&self) -> [(&'static str, &Tensor); 13] {
        [
            ("embedding", &self.embedding),
            ("theta", &self.theta),
            ("edge", &self.edge),
            ("wz", &self.wz),
            ("bz", &self.bz),
            ("wr", &self.wr),
            ("br", &self.br),
            ("wn", &self.wn),
            ("bn", &self.bn),
            ("w1", &self.w1),
            ("b1", &self.b1),
            ("w2", &self.w2),
            ("b2", &self.b2),
        ]
    }

    pub fn tensors_mut(&mut self) -> [(&'static str, &mut Tensor); 13] {
        [
            ("embedding", &mut self.embedding),
            ("theta", &mut self.theta),
            ("edge", &mut self.edge),
            ("wz", &mut self.wz),
            ("bz", &mut self.bz),
            ("wr", &mut self.wr),
            ("br", &mut self.br),
            ("wn", &mut self.wn),
            ("bn", &mut self.bn),
            ("w1", &mut self.w1),
            ("b1", &mut self.b1),
            ("w2", &mut self.w2),
            ("b2", &mut self.b2),
        ]
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, t) in z.tensors_mut() {
            t.data.iter_mut().for_each(|v| *v = 0.0);
        }
        z
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors_mut()
            .into_iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t)
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.all_finite())
    }

    pub fn num_tokens(&self) -> usize {
        self.embedding.rows()
    }

    pub fn num_edge_kinds(&self) -> usize {
        self.edge.rows()
    }

    /// `self += s * other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &ModelParams, s: f64) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += s * y;
            }
        }
    }

    /// Checks every tensor has the shape `cfg` implies.
    pub fn check_shapes(&self, cfg: &GgnnConfig) -> Result<(), GgnnError> {
        let d = cfg.hidden;
        let ew = match cfg.edge_weighting {
            EdgeWeighting::Scalar => 1,
            EdgeWeighting::Diagonal => d,
        };
        let want: [(&str, Vec<usize>); 13] = [
            ("embedding", vec![self.num_tokens(), cfg.d_in]),
            ("theta", vec![d, d]),
            ("edge", vec![self.num_edge_kinds(), ew]),
            ("wz", vec![d, 2 * d]),
            ("bz", vec![d]),
            ("wr", vec![d, 2 * d]),
            ("br", vec![d]),
            ("wn", vec![d, 2 * d]),
            ("bn", vec![d]),
            ("w1", vec![cfg.mlp_hidden, d]),
            ("b1", vec![cfg.mlp_hidden]),
            ("w2", vec![cfg.num_classes, cfg.mlp_hidden]),
            ("b2", vec![cfg.num_classes]),
        ];
        for ((name, t), (_, shape)) in self.tensors().into_iter().zip(want) {
            if t.shape != shape || !t.is_consistent() {
                return Err(GgnnError::BadConfig(format!(
                    "parameter {name} has shape {:?}, expected {shape:?}",
                    t.shape
                )));
            }
        }
        Ok(())
    }
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor {
        shape: vec![rows, cols],
        data: (0..rows * cols).map(|_| rng.gen_range(-a..=a)).collect(),
    }
}

/// Xavier-uniform matrices, zero biases, unit edge weights.
pub fn init_params(
    cfg: &GgnnConfig,
    num_tokens: usize,
    num_edge_kinds: usize,
) -> Result<ModelParams, GgnnError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.hidden;
    let ew = match cfg.edge_weighting {
        EdgeWeighting::Scalar => 1,
        EdgeWeighting::Diagonal => d,
    };
    Ok(ModelParams {
        embedding: xavier(&mut rng, num_tokens, cfg.d_in),
        theta: xavier(&mut rng, d, d),
        edge: Tensor::filled(&[num_edge_kinds, ew], 1.0),
        wz: xavier(&mut rng, d, 2 * d),
        bz: Tensor::zeros(&[d]),
        wr: xavier(&mut rng, d, 2 * d),
        br: Tensor::zeros(&[d]),
        wn: xavier(&mut rng, d, 2 * d),
        bn: Tensor::zeros(&[d]),
        w1: xavier(&mut rng, cfg.mlp_hidden, d),
        b1: Tensor::zeros(&[cfg.mlp_hidden]),
        w2: xavier(&mut rng, cfg.num_classes, cfg.mlp_hidden),
        b2: Tensor::zeros(&[cfg.num_classes]),
    })
}

/// Intermediate values of one propagation step, kept for the backward pass.
#[derive(Debug, Clone)]
struct StepCache {
    h: Vec<f64>,
    t: Vec<f64>,
    m: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Forward {
    pub logits: Vec<f64>,
    /// Final node states, `[N, D]` row-major.
    pub states: Vec<f64>,
    pub readout: Vec<f64>,
    steps: Vec<StepCache>,
    argmax: Vec<usize>,
    hidden_act: Vec<f64>,
}

fn check_graph(params: &ModelParams, g: &EncodedGraph) -> Result<(), GgnnError> {
    let n = g.nodes.len();
    if let Some(&t) = g.nodes.iter().find(|&&t| t >= params.num_tokens()) {
        return Err(GgnnError::OutOfRange(format!("token index {t}")));
    }
    for &(s, d, k) in &g.edges {
        if s >= n || d >= n {
            return Err(GgnnError::OutOfRange(format!(
                "edge {s}->{d} in a graph of {n} nodes"
            )));
        }
        if k >= params.num_edge_kinds() {
            return Err(GgnnError::OutOfRange(format!("edge kind {k}")));
        }
    }
    Ok(())
}

fn edge_scale(params: &ModelParams, k: usize, dim: usize) -> f64 {
    let row = params.edge.row(k);
    if row.len() == 1 {
        row[0]
    } else {
        row[dim]
    }
}

/// Embedding rows zero-padded to the hidden width, `[N, D]` row-major.
pub fn initial_states(params: &ModelParams, cfg: &GgnnConfig, g: &EncodedGraph) -> Vec<f64> {
    let d = cfg.hidden;
    let mut h = vec![0.0; g.nodes.len() * d];
    for (i, &tok) in g.nodes.iter().enumerate() {
        h[i * d..i * d + cfg.d_in].copy_from_slice(params.embedding.row(tok));
    }
    h
}

pub fn forward(
    params: &ModelParams,
    cfg: &GgnnConfig,
    g: &EncodedGraph,
) -> Result<Forward, GgnnError> {
    check_graph(params, g)?;
    let d = cfg.hidden;
    let n = g.nodes.len();
    let mut h = initial_states(params, cfg, g);
    let mut steps = Vec::with_capacity(cfg.steps);
    let mut x = vec![0.0; 2 * d];
    let mut pre = vec![0.0; d];
    for _ in 0..cfg.steps {
        let mut t = vec![0.0; n * d];
        for j in 0..n {
            matvec(
                &params.theta.data,
                d,
                d,
                &h[j * d..(j + 1) * d],
                &mut t[j * d..(j + 1) * d],
            );
        }
        let mut m = vec![0.0; n * d];
        for &(s, dst, k) in &g.edges {
            for c in 0..d {
                m[dst * d + c] += edge_scale(params, k, c) * t[s * d + c];
            }
        }
        let mut z = vec![0.0; n * d];
        let mut r = vec![0.0; n * d];
        let mut nn = vec![0.0; n * d];
        let mut h_next = vec![0.0; n * d];
        for i in 0..n {
            let hi = &h[i * d..(i + 1) * d];
            x[..d].copy_from_slice(&m[i * d..(i + 1) * d]);
            x[d..].copy_from_slice(hi);
            matvec(&params.wz.data, d, 2 * d, &x, &mut pre);
            for c in 0..d {
                z[i * d + c] = sigmoid(pre[c] + params.bz.data[c]);
            }
            matvec(&params.wr.data, d, 2 * d, &x, &mut pre);
            for c in 0..d {
                r[i * d + c] = sigmoid(pre[c] + params.br.data[c]);
            }
            for c in 0..d {
                x[d + c] = r[i * d + c] * hi[c];
            }
            matvec(&params.wn.data, d, 2 * d, &x, &mut pre);
            for c in 0..d {
                let nv = (pre[c] + params.bn.data[c]).tanh();
                nn[i * d + c] = nv;
                let zv = z[i * d + c];
                h_next[i * d + c] = (1.0 - zv) * hi[c] + zv * nv;
            }
        }
        steps.push(StepCache {
            h: std::mem::replace(&mut h, h_next),
            t,
            m,
            z,
            r,
            n: nn,
        });
    }

    let mut readout = vec![0.0; d];
    let mut argmax = vec![usize::MAX; d];
    if n > 0 {
        match cfg.aggregation {
            Aggregation::Sum | Aggregation::Mean => {
                for i in 0..n {
                    add_assign(&mut readout, &h[i * d..(i + 1) * d]);
                }
                if cfg.aggregation == Aggregation::Mean {
                    readout.iter_mut().for_each(|v| *v /= n as f64);
                }
            }
            Aggregation::Max => {
                for c in 0..d {
                    let mut best = 0;
                    for i in 1..n {
                        if h[i * d + c] > h[best * d + c] {
                            best = i;
                        }
                    }
                    argmax[c] = best;
                    readout[c] = h[best * d + c];
                }
            }
        }
    }

    let mut hidden_act = vec![0.0; cfg.mlp_hidden];
    matvec(
        &params.w1.data,
        cfg.mlp_hidden,
        d,
        &readout,
        &mut hidden_act,
    );
    for (a, b) in hidden_act.iter_mut().zip(&params.b1.data) {
        *a = (*a + b).tanh();
    }
    let mut logits = vec![0.0; cfg.num_classes];
    matvec(
        &params.w2.data,
        cfg.num_classes,
        cfg.mlp_hidden,
        &hidden_act,
        &mut logits,
    );
    add_assign(&mut logits, &params.b2.data);

    Ok(Forward {
        logits,
        states: h,
        readout,
        steps,
        argmax,
        hidden_act,
    })
}

/// Softmax cross-entropy of one example.
pub fn loss(logits: &[f64], label: usize) -> Result<f64, GgnnError> {
    if label >= logits.len() {
        return Err(GgnnError::InvalidLabel(label));
    }
    Ok(log_sum_exp(logits) - logits[label])
}

/// Mean cross-entropy over a batch of (logits, label) pairs.
pub fn batch_loss(items: &[(&[f64], usize)]) -> Result<f64, GgnnError> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (l, y) in items {
        total += loss(l, *y)?;
    }
    Ok(total / items.len() as f64)
}

/// Accumulates `scale · ∂(loss)/∂θ` into `grads` given the forward pass of
/// one labelled graph.
pub fn backward(
    params: &ModelParams,
    cfg: &GgnnConfig,
    g: &EncodedGraph,
    fwd: &Forward,
    label: usize,
    scale: f64,
    grads: &mut ModelParams,
) -> Result<(), GgnnError> {
    if label >= cfg.num_classes {
        return Err(GgnnError::InvalidLabel(label));
    }
    let d = cfg.hidden;
    let hdim = cfg.mlp_hidden;
    let n = g.nodes.len();

    let mut dlogits = softmax(&fwd.logits);
    dlogits[label] -= 1.0;
    dlogits.iter_mut().for_each(|v| *v *= scale);

    outer_acc(
        &mut grads.w2.data,
        cfg.num_classes,
        hdim,
        &dlogits,
        &fwd.hidden_act,
    );
    add_assign(&mut grads.b2.data, &dlogits);
    let mut da = vec![0.0; hdim];
    matvec_t_acc(&params.w2.data, cfg.num_classes, hdim, &dlogits, &mut da);
    let dpre1: Vec<f64> = da
        .iter()
        .zip(&fwd.hidden_act)
        .map(|(g, a)| g * (1.0 - a * a))
        .collect();
    outer_acc(&mut grads.w1.data, hdim, d, &dpre1, &fwd.readout);
    add_assign(&mut grads.b1.data, &dpre1);
    let mut dread = vec![0.0; d];
    matvec_t_acc(&params.w1.data, hdim, d, &dpre1, &mut dread);

    if n == 0 {
        return Ok(());
    }
    let mut dh = vec![0.0; n * d];
    match cfg.aggregation {
        Aggregation::Sum | Aggregation::Mean => {
            let s = if cfg.aggregation == Aggregation::Mean {
                1.0 / n as f64
            } else {
                1.0
            };
            for i in 0..n {
                for c in 0..d {
                    dh[i * d + c] = dread[c] * s;
                }
            }
        }
        Aggregation::Max => {
            for c in 0..d {
                dh[fwd.argmax[c] * d + c] = dread[c];
            }
        }
    }

    let mut x = vec![0.0; 2 * d];
    let mut xt = vec![0.0; 2 * d];
    let mut dx = vec![0.0; 2 * d];
    let mut dxt = vec![0.0; 2 * d];
    let mut dzpre = vec![0.0; d];
    let mut drpre = vec![0.0; d];
    let mut dnpre = vec![0.0; d];
    for st in fwd.steps.iter().rev() {
        let mut dh_prev = vec![0.0; n * d];
        let mut dm = vec![0.0; n * d];
        for i in 0..n {
            let row = i * d..(i + 1) * d;
            let hi = &st.h[row.clone()];
            let (zi, ri, ni) = (&st.z[row.clone()], &st.r[row.clone()], &st.n[row.clone()]);
            let gi = &dh[row.clone()];
            x[..d].copy_from_slice(&st.m[row.clone()]);
            x[d..].copy_from_slice(hi);
            xt[..d].copy_from_slice(&st.m[row.clone()]);
            for c in 0..d {
                xt[d + c] = ri[c] * hi[c];
                dh_prev[i * d + c] += gi[c] * (1.0 - zi[c]);
                let dz = gi[c] * (ni[c] - hi[c]);
                dzpre[c] = dz * zi[c] * (1.0 - zi[c]);
                dnpre[c] = gi[c] * zi[c] * (1.0 - ni[c] * ni[c]);
            }
            // candidate gate
            outer_acc(&mut grads.wn.data, d, 2 * d, &dnpre, &xt);
            add_assign(&mut grads.bn.data, &dnpre);
            dxt.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(&params.wn.data, d, 2 * d, &dnpre, &mut dxt);
            for c in 0..d {
                let drh = dxt[d + c];
                dh_prev[i * d + c] += drh * ri[c];
                drpre[c] = drh * hi[c] * ri[c] * (1.0 - ri[c]);
            }
            // update and reset gates
            outer_acc(&mut grads.wz.data, d, 2 * d, &dzpre, &x);
            add_assign(&mut grads.bz.data, &dzpre);
            outer_acc(&mut grads.wr.data, d, 2 * d, &drpre, &x);
            add_assign(&mut grads.br.data, &drpre);
            dx.iter_mut().for_each(|v| *v = 0.0);
            matvec_t_acc(&params.wz.data, d, 2 * d, &dzpre, &mut dx);
            matvec_t_acc(&params.wr.data, d, 2 * d, &drpre, &mut dx);
            for c in 0..d {
                dm[i * d + c] = dx[c] + dxt[c];
                dh_prev[i * d + c] += dx[d + c];
            }
        }
        // messages
        let mut dt = vec![0.0; n * d];
        let diagonal = params.edge.cols() != 1;
        for &(s, dst, k) in &g.edges {
            let ge = grads.edge.row_mut(k);
            for c in 0..d {
                let gm = dm[dst * d + c];
                let contrib = gm * st.t[s * d + c];
                if diagonal {
                    ge[c] += contrib;
                } else {
                    ge[0] += contrib;
                }
                dt[s * d + c] += edge_scale(params, k, c) * gm;
            }
        }
        for j in 0..n {
            let row = j * d..(j + 1) * d;
            outer_acc(
                &mut grads.theta.data,
                d,
                d,
                &dt[row.clone()],
                &st.h[row.clone()],
            );
            matvec_t_acc(
                &params.theta.data,
                d,
                d,
                &dt[row.clone()],
                &mut dh_prev[row],
            );
        }
        dh = dh_prev;
    }

    for (i, &tok) in g.nodes.iter().enumerate() {
        add_assign(grads.embedding.row_mut(tok), &dh[i * d..i * d + cfg.d_in]);
    }
    Ok(())
}

/// Mean loss and its gradient over a labelled batch.
pub fn loss_and_grad(
    params: &ModelParams,
    cfg: &GgnnConfig,
    batch: &[&EncodedGraph],
) -> Result<(f64, ModelParams), GgnnError> {
    let mut grads = params.zeros_like();
    if batch.is_empty() {
        return Ok((0.0, grads));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut total = 0.0;
    for g in batch {
        let label = g.label.ok_or(GgnnError::MissingLabel)?;
        let fwd = forward(params, cfg, g)?;
        total += loss(&fwd.logits, label)?;
        backward(params, cfg, g, &fwd, label, scale, &mut grads)?;
    }
    Ok((total * scale, grads))
}

/// Mean loss over a labelled batch without gradients.
pub fn evaluate_loss(
    params: &ModelParams,
    cfg: &GgnnConfig,
    batch: &[&EncodedGraph],
) -> Result<f64, GgnnError> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for g in batch {
        let label = g.label.ok_or(GgnnError::MissingLabel)?;
        total += loss(&forward(params, cfg, g)?.logits, label)?;
    }
    Ok(total / batch.len() as f64)
}

/// Most probable class (lowest index on ties) and the class distribution.
pub fn predict(
    params: &ModelParams,
    cfg: &GgnnConfig,
    g: &EncodedGraph,
) -> Result<(usize, Vec<f64>), GgnnError> {
    let fwd = forward(params, cfg, g)?;
    let probs = softmax(&fwd.logits);
    let mut best = 0;
    for (i, p) in probs.iter().enumerate() {
        if *p > probs[best] {
            best = i;
        }
    }
    Ok((best, probs))
}
