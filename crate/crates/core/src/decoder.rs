//! Gaussian-mixture belief propagation for magic-square LDLCs.
//!
//! Every message is a [`GaussianMixture`]. A check node turns the `d`
//! incoming variable-to-check messages of its row into `d` outgoing messages
//! in four steps:
//!
//! 1. *unstretch* each input by its (signed) matrix coefficient `h`,
//!    `(m, v) → (h·m, h²·v)`;
//! 2. *convolve* all inputs but one, using forward/backward partial
//!    convolutions so each leave-one-out result costs one extra convolution;
//! 3. *extend* over a window of `shift_count` integers `b` (the unknown
//!    right-hand side of the row equation), `μ → b − μ`;
//! 4. *stretch* by `1/h`.
//!
//! A variable node multiplies the channel Gaussian `N(y, σ²)` with all
//! incoming check messages but one, again with forward/backward partial
//! products. Mixture reduction runs after every pairwise convolution and
//! product, and after extension, so no stored message ever exceeds the
//! component budget.

use std::f64::consts::PI;

use thiserror::Error;

use crate::gmix::{
    clamp_variance, normalize_in_place, reduce_in_place, variance_clamp_count, GaussianComponent, GaussianMixture,
    MixtureError, ReductionParams,
};
use crate::lattice::{LatticeError, MagicSquareH};

/// Pairs whose log-weight falls this far below the best pair are dropped
/// before exponentiation.
const LOG_WEIGHT_CUTOFF: f64 = 46.0;

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("invalid decoder parameters: {0}")]
    InvalidParams(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("numerical collapse at iteration {iteration} in {node}: {source}")]
    Degenerate {
        iteration: usize,
        node: NodeRef,
        #[source]
        source: MixtureError,
    },
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Which node an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeRef {
    Check(usize),
    Variable(usize),
}

impl std::fmt::Display for NodeRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NodeRef::Check(r) => write!(f, "check node {r}"),
            NodeRef::Variable(c) => write!(f, "variable node {c}"),
        }
    }
}

/// Location of an edge of the Tanner graph of `H`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EdgeIndex {
    pub row: usize,
    pub col: usize,
    /// Position among the `d` edges of the row.
    pub slot: usize,
}

impl EdgeIndex {
    pub fn of(h: &MagicSquareH, edge: usize) -> Self {
        Self { row: h.edge_row(edge), col: h.edge_col(edge), slot: edge % h.d() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecoderParams {
    pub reduction: ReductionParams,
    /// Number of integer replicas kept per extension; odd.
    pub shift_count: usize,
    pub max_iterations: usize,
    /// Decoding stops once `b̂` has been identical for this many iterations.
    pub stability_window: usize,
    /// Also reduce after the extension step (ablation switch).
    pub reduce_after_extension: bool,
}

impl Default for DecoderParams {
    /// `θ = 0.5`, `M = 6`, three shifts, at most 100 iterations, window of 3.
    fn default() -> Self {
        Self {
            reduction: ReductionParams::default(),
            shift_count: 3,
            max_iterations: 100,
            stability_window: 3,
            reduce_after_extension: true,
        }
    }
}

impl DecoderParams {
    pub fn validate(&self) -> Result<(), DecodeError> {
        if self.shift_count == 0 || self.shift_count % 2 == 0 {
            return Err(DecodeError::InvalidParams(format!("shift_count must be odd, got {}", self.shift_count)));
        }
        if self.stability_window == 0 {
            return Err(DecodeError::InvalidParams("stability_window must be at least 1".into()));
        }
        Ok(())
    }

    /// Same schedule with mixture reduction switched off everywhere.
    pub fn without_reduction(mut self) -> Self {
        self.reduction = ReductionParams::disabled();
        self
    }
}

/// All edge messages of one decode plus the channel observation.
#[derive(Debug, Clone)]
pub struct DecoderState {
    q_messages: Vec<GaussianMixture>,
    r_messages: Vec<Option<GaussianMixture>>,
    y: Vec<f64>,
    noise_variance: f64,
    iteration: usize,
}

impl DecoderState {
    /// Variable-to-check message on `edge`.
    pub fn q_message(&self, edge: usize) -> &GaussianMixture {
        &self.q_messages[edge]
    }

    /// Check-to-variable message on `edge`; `None` before the first check
    /// phase.
    pub fn r_message(&self, edge: usize) -> Option<&GaussianMixture> {
        self.r_messages[edge].as_ref()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    /// Replaces the check-to-variable messages of `row` (in slot order).
    pub fn set_r_messages(&mut self, h: &MagicSquareH, row: usize, messages: Vec<GaussianMixture>) {
        for (edge, m) in h.row_edges(row).zip(messages) {
            self.r_messages[edge] = Some(m);
        }
    }

    /// Replaces the variable-to-check messages of `col` (in `col_edges` order).
    pub fn set_q_messages(&mut self, h: &MagicSquareH, col: usize, messages: Vec<GaussianMixture>) {
        for (&edge, m) in h.col_edges(col).iter().zip(messages) {
            self.q_messages[edge] = m;
        }
    }

    /// Largest component count over every stored message.
    pub fn max_stored_components(&self) -> usize {
        let q = self.q_messages.iter().map(GaussianMixture::len);
        let r = self.r_messages.iter().flatten().map(GaussianMixture::len);
        q.chain(r).max().unwrap_or(0)
    }

    /// Iterates over every stored message, `q` first.
    pub fn messages(&self) -> impl Iterator<Item = &GaussianMixture> {
        self.q_messages.iter().chain(self.r_messages.iter().flatten())
    }
}

/// Per-decode instrumentation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DecodeDiagnostics {
    /// Largest stored message after each iteration.
    pub max_components_per_iteration: Vec<usize>,
    /// Largest stored message seen at any point.
    pub peak_stored_components: usize,
    /// Largest intermediate mixture handed to reduction.
    pub peak_unreduced_components: usize,
    /// Variance clamps observed during this decode (process-wide counter, so
    /// concurrent decodes can inflate it).
    pub variance_clamps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub x_hat: Vec<f64>,
    pub b_hat: Vec<i64>,
    pub iterations_used: usize,
    pub converged: bool,
    pub diagnostics: DecodeDiagnostics,
}

/// Scratch buffers and counters shared by the node updates of one decode.
#[derive(Debug, Default)]
struct Workspace {
    peak_unreduced: usize,
    buf: Vec<GaussianComponent>,
}

impl Workspace {
    fn reduce(&mut self, comps: &mut Vec<GaussianComponent>, params: &ReductionParams) -> Result<(), MixtureError> {
        self.peak_unreduced = self.peak_unreduced.max(comps.len());
        reduce_in_place(comps, params)
    }
}

/// Channel messages: every edge at variable `i` carries `N(y_i, σ²)`.
pub fn init_channel_messages(y: &[f64], sigma2: f64, h: &MagicSquareH) -> Result<DecoderState, DecodeError> {
    if y.len() != h.n() {
        return Err(DecodeError::InvalidInput(format!("y has length {}, expected {}", y.len(), h.n())));
    }
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(DecodeError::InvalidInput(format!("noise variance {sigma2}")));
    }
    if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
        return Err(DecodeError::InvalidInput(format!("non-finite channel output {bad}")));
    }
    let q_messages = (0..h.edge_count())
        .map(|e| GaussianMixture::single(GaussianComponent::raw(y[h.edge_col(e)], sigma2, 1.0)))
        .collect();
    Ok(DecoderState {
        q_messages,
        r_messages: vec![None; h.edge_count()],
        y: y.to_vec(),
        noise_variance: sigma2,
        iteration: 0,
    })
}

fn convolve_raw(a: &[GaussianComponent], b: &[GaussianComponent], out: &mut Vec<GaussianComponent>) {
    out.clear();
    out.reserve(a.len() * b.len());
    for x in a {
        for y in b {
            out.push(GaussianComponent::raw(
                x.mean() + y.mean(),
                clamp_variance(x.variance() + y.variance()),
                x.weight() * y.weight(),
            ));
        }
    }
}

fn product_raw(
    a: &[GaussianComponent],
    b: &[GaussianComponent],
    out: &mut Vec<GaussianComponent>,
) -> Result<(), MixtureError> {
    out.clear();
    out.reserve(a.len() * b.len());
    let mut best = f64::NEG_INFINITY;
    // Stash log-weights in the weight slot's place via a side buffer.
    let mut log_weights: Vec<f64> = Vec::with_capacity(a.len() * b.len());
    for x in a {
        for y in b {
            let s = x.variance() + y.variance();
            let dm = x.mean() - y.mean();
            let lw = x.weight().ln() + y.weight().ln() - 0.5 * (2.0 * PI * s).ln() - dm * dm / (2.0 * s);
            let mean = (x.mean() * y.variance() + y.mean() * x.variance()) / s;
            let var = clamp_variance(x.variance() * y.variance() / s);
            if lw > best {
                best = lw;
            }
            out.push(GaussianComponent::raw(mean, var, 0.0));
            log_weights.push(lw);
        }
    }
    if !best.is_finite() {
        return Err(MixtureError::DegenerateMessage(0.0));
    }
    let mut kept = 0;
    for i in 0..out.len() {
        let lw = log_weights[i];
        if lw >= best - LOG_WEIGHT_CUTOFF {
            let c = out[i];
            out[kept] = GaussianComponent::raw(c.mean(), c.variance(), (lw - best).exp());
            kept += 1;
        }
    }
    out.truncate(kept);
    Ok(())
}

/// Convolution of two mixtures: one `(m_a + m_b, v_a + v_b, c_a·c_b)`
/// component per pair, then reduced and normalized.
pub fn convolve_pair(
    a: &GaussianMixture,
    b: &GaussianMixture,
    params: &ReductionParams,
) -> Result<GaussianMixture, MixtureError> {
    let mut out = Vec::new();
    convolve_raw(a.components(), b.components(), &mut out);
    reduce_in_place(&mut out, params)?;
    Ok(GaussianMixture::from_vec_unchecked(out))
}

/// Normalized pointwise product of two mixtures, then reduced.
pub fn product_pair(
    a: &GaussianMixture,
    b: &GaussianMixture,
    params: &ReductionParams,
) -> Result<GaussianMixture, MixtureError> {
    let mut out = Vec::new();
    product_raw(a.components(), b.components(), &mut out)?;
    reduce_in_place(&mut out, params)?;
    Ok(GaussianMixture::from_vec_unchecked(out))
}

/// Leave-one-out combination of `items` under an associative pairwise
/// operation: `out[k] = items[0] ⊕ … ⊕ items[k−1] ⊕ items[k+1] ⊕ … `.
fn leave_one_out<F>(
    items: &[Vec<GaussianComponent>],
    ws: &mut Workspace,
    mut combine: F,
) -> Result<Vec<Vec<GaussianComponent>>, MixtureError>
where
    F: FnMut(&[GaussianComponent], &[GaussianComponent], &mut Workspace) -> Result<Vec<GaussianComponent>, MixtureError>,
{
    let d = items.len();
    debug_assert!(d >= 2);
    // forward[k] combines items[0..=k], backward[k] combines items[k..].
    let mut forward: Vec<Vec<GaussianComponent>> = Vec::with_capacity(d - 1);
    forward.push(items[0].clone());
    for k in 1..d - 1 {
        let next = combine(&forward[k - 1], &items[k], ws)?;
        forward.push(next);
    }
    let mut backward: Vec<Vec<GaussianComponent>> = vec![Vec::new(); d];
    backward[d - 1] = items[d - 1].clone();
    for k in (1..d - 1).rev() {
        backward[k] = combine(&backward[k + 1], &items[k], ws)?;
    }
    let mut out = Vec::with_capacity(d);
    out.push(std::mem::take(&mut backward[1]));
    for k in 1..d - 1 {
        out.push(combine(&forward[k - 1], &backward[k + 1], ws)?);
    }
    out.push(forward.pop().expect("d >= 2"));
    Ok(out)
}

/// Check-node rule on explicit inputs.
///
/// `inputs[k]` is the message arriving on edge `k` of the row, `coeffs[k]`
/// the signed matrix entry on that edge and `channel[k]` the channel output
/// of the variable node the edge leads to (used to place the integer window).
/// Returns the outgoing message of each edge.
pub fn check_node_messages(
    inputs: &[GaussianMixture],
    coeffs: &[f64],
    channel: &[f64],
    params: &DecoderParams,
) -> Result<Vec<GaussianMixture>, MixtureError> {
    check_node_impl(inputs, coeffs, channel, params, &mut Workspace::default())
}

fn check_node_impl(
    inputs: &[GaussianMixture],
    coeffs: &[f64],
    channel: &[f64],
    params: &DecoderParams,
    ws: &mut Workspace,
) -> Result<Vec<GaussianMixture>, MixtureError> {
    let d = inputs.len();
    assert!(d >= 2 && coeffs.len() == d && channel.len() == d, "check node needs d >= 2 aligned inputs");
    let unstretched: Vec<Vec<GaussianComponent>> = inputs
        .iter()
        .zip(coeffs)
        .map(|(m, &h)| {
            m.components()
                .iter()
                .map(|c| GaussianComponent::raw(h * c.mean(), clamp_variance(h * h * c.variance()), c.weight()))
                .collect()
        })
        .collect();
    let reduction = params.reduction;
    let sums = leave_one_out(&unstretched, ws, |a, b, ws| {
        let mut out = Vec::new();
        convolve_raw(a, b, &mut out);
        ws.reduce(&mut out, &reduction)?;
        Ok(out)
    })?;
    let budget = ReductionParams::new(0.0, reduction.max_components()).expect("valid budget");
    let half = (params.shift_count / 2) as i64;
    let replica_weight = 1.0 / params.shift_count as f64;
    let mut outputs = Vec::with_capacity(d);
    for ((sum, &h), &y) in sums.iter().zip(coeffs).zip(channel) {
        let mut ext = std::mem::take(&mut ws.buf);
        ext.clear();
        for c in sum {
            // Window centred on the integer that maps this component onto y.
            let center = (c.mean() + h * y).round_ties_even() as i64;
            for b in (center - half)..=(center + half) {
                ext.push(GaussianComponent::raw(b as f64 - c.mean(), c.variance(), c.weight() * replica_weight));
            }
        }
        if params.reduce_after_extension {
            ws.reduce(&mut ext, &budget)?;
        } else {
            ws.peak_unreduced = ws.peak_unreduced.max(ext.len());
        }
        let inv = 1.0 / h;
        let mut stretched: Vec<GaussianComponent> = ext
            .iter()
            .map(|c| GaussianComponent::raw(c.mean() * inv, clamp_variance(c.variance() * inv * inv), c.weight()))
            .collect();
        ws.buf = ext;
        normalize_in_place(&mut stretched)?;
        outputs.push(GaussianMixture::from_vec_unchecked(stretched));
    }
    Ok(outputs)
}

/// Variable-node rule on explicit inputs: the channel Gaussian `N(y, σ²)`
/// times every incoming message but one. Returns the outgoing message of each
/// edge together with the posterior (the product of all factors).
pub fn variable_node_messages(
    incoming: &[GaussianMixture],
    y: f64,
    sigma2: f64,
    params: &DecoderParams,
) -> Result<(Vec<GaussianMixture>, GaussianMixture), MixtureError> {
    variable_node_impl(incoming, y, sigma2, params, &mut Workspace::default())
}

fn variable_node_impl(
    incoming: &[GaussianMixture],
    y: f64,
    sigma2: f64,
    params: &DecoderParams,
    ws: &mut Workspace,
) -> Result<(Vec<GaussianMixture>, GaussianMixture), MixtureError> {
    let reduction = params.reduction;
    let budget = ReductionParams::new(0.0, reduction.max_components()).expect("valid budget");
    let combine = |a: &[GaussianComponent], b: &[GaussianComponent], ws: &mut Workspace, p: &ReductionParams| {
        let mut out = Vec::new();
        product_raw(a, b, &mut out)?;
        ws.reduce(&mut out, p)?;
        Ok::<_, MixtureError>(out)
    };
    let channel = vec![GaussianComponent::raw(y, sigma2, 1.0)];
    if incoming.is_empty() {
        return Ok((Vec::new(), GaussianMixture::from_vec_unchecked(channel)));
    }
    // Factor 0 is the channel; output k excludes factor k + 1.
    let mut factors: Vec<Vec<GaussianComponent>> = Vec::with_capacity(incoming.len() + 1);
    factors.push(channel);
    factors.extend(incoming.iter().map(|m| m.components().to_vec()));
    let d = incoming.len();
    let mut forward: Vec<Vec<GaussianComponent>> = Vec::with_capacity(d + 1);
    forward.push(factors[0].clone());
    for k in 1..=d {
        let next = combine(&forward[k - 1], &factors[k], ws, &reduction)?;
        forward.push(next);
    }
    // Partial products without the channel factor are only held to the
    // component budget: merging their widely spaced replicas by GQL alone
    // smears them before the channel has picked the right one.
    let mut backward: Vec<Vec<GaussianComponent>> = vec![Vec::new(); d + 2];
    backward[d] = factors[d].clone();
    for k in (2..d).rev() {
        backward[k] = combine(&factors[k], &backward[k + 1], ws, &budget)?;
    }
    let mut outputs = Vec::with_capacity(d);
    for k in 1..=d {
        let msg = if k == d {
            forward[d - 1].clone()
        } else {
            combine(&forward[k - 1], &backward[k + 1], ws, &reduction)?
        };
        outputs.push(GaussianMixture::from_vec_unchecked(msg));
    }
    let posterior = GaussianMixture::from_vec_unchecked(forward.pop().expect("non-empty"));
    Ok((outputs, posterior))
}

/// Outgoing check-to-variable messages of `row`, in slot order.
pub fn check_node_update(
    state: &DecoderState,
    h: &MagicSquareH,
    row: usize,
    params: &DecoderParams,
) -> Result<Vec<GaussianMixture>, DecodeError> {
    check_node_with(state, h, row, params, &mut Workspace::default())
}

fn check_node_with(
    state: &DecoderState,
    h: &MagicSquareH,
    row: usize,
    params: &DecoderParams,
    ws: &mut Workspace,
) -> Result<Vec<GaussianMixture>, DecodeError> {
    let edges = h.row_edges(row);
    let inputs: Vec<GaussianMixture> = edges.clone().map(|e| state.q_messages[e].clone()).collect();
    let coeffs: Vec<f64> = edges.clone().map(|e| h.edge_value(e)).collect();
    let channel: Vec<f64> = edges.map(|e| state.y[h.edge_col(e)]).collect();
    check_node_impl(&inputs, &coeffs, &channel, params, ws).map_err(|source| DecodeError::Degenerate {
        iteration: state.iteration,
        node: NodeRef::Check(row),
        source,
    })
}

fn incoming_r(state: &DecoderState, h: &MagicSquareH, col: usize) -> Vec<GaussianMixture> {
    h.col_edges(col).iter().filter_map(|&e| state.r_messages[e].clone()).collect()
}

/// Outgoing variable-to-check messages of `col`, in `h.col_edges(col)` order.
/// Before the first check phase there are no check messages and every output
/// is the channel Gaussian.
pub fn variable_node_update(
    state: &DecoderState,
    h: &MagicSquareH,
    col: usize,
    params: &DecoderParams,
) -> Result<Vec<GaussianMixture>, DecodeError> {
    variable_node_with(state, h, col, params, &mut Workspace::default()).map(|(q, _)| q)
}

fn variable_node_with(
    state: &DecoderState,
    h: &MagicSquareH,
    col: usize,
    params: &DecoderParams,
    ws: &mut Workspace,
) -> Result<(Vec<GaussianMixture>, GaussianMixture), DecodeError> {
    let incoming = incoming_r(state, h, col);
    let y = state.y[col];
    let sigma2 = state.noise_variance;
    if incoming.len() != h.d() {
        let channel = GaussianMixture::single(GaussianComponent::raw(y, sigma2, 1.0));
        return Ok((vec![channel.clone(); h.d()], channel));
    }
    variable_node_impl(&incoming, y, sigma2, params, ws).map_err(|source| DecodeError::Degenerate {
        iteration: state.iteration,
        node: NodeRef::Variable(col),
        source,
    })
}

/// Posterior mixture of code symbol `col`: channel factor times every
/// incoming check message, normalized and reduced.
pub fn posterior(
    state: &DecoderState,
    h: &MagicSquareH,
    col: usize,
    params: &DecoderParams,
) -> Result<GaussianMixture, DecodeError> {
    variable_node_with(state, h, col, params, &mut Workspace::default()).map(|(_, p)| p)
}

/// Location of the highest peak of a mixture density.
///
/// The density is evaluated at every component mean; the interval between
/// the winning mean's neighbours (in sorted order) is then refined with 20
/// ternary-search steps.
pub fn mixture_mode(mix: &GaussianMixture) -> f64 {
    let comps = mix.components();
    if comps.len() == 1 {
        return comps[0].mean();
    }
    let mut means: Vec<f64> = comps.iter().map(|c| c.mean()).collect();
    means.sort_by(f64::total_cmp);
    let f = |z: f64| mix.density_at(z);
    let mut best = 0;
    let mut best_val = f(means[0]);
    for (i, &m) in means.iter().enumerate().skip(1) {
        let v = f(m);
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    let mut lo = if best > 0 { means[best - 1] } else { means[best] };
    let mut hi = if best + 1 < means.len() { means[best + 1] } else { means[best] };
    for _ in 0..20 {
        let third = (hi - lo) / 3.0;
        let (m1, m2) = (lo + third, hi - third);
        if f(m1) < f(m2) {
            lo = m1;
        } else {
            hi = m2;
        }
    }
    let refined = 0.5 * (lo + hi);
    if f(refined) > best_val {
        refined
    } else {
        means[best]
    }
}

/// `x̂_i = argmax F_i(z)` for every code symbol.
pub fn estimate_x(state: &DecoderState, h: &MagicSquareH, params: &DecoderParams) -> Result<Vec<f64>, DecodeError> {
    (0..h.n()).map(|col| posterior(state, h, col, params).map(|p| mixture_mode(&p))).collect()
}

/// Runs flooding belief propagation on `y` and returns `x̂`, `b̂ = round(H x̂)`
/// and diagnostics. Stops once `b̂` has been unchanged for
/// `params.stability_window` consecutive iterations, or after
/// `params.max_iterations`.
pub fn decode(y: &[f64], h: &MagicSquareH, sigma2: f64, params: &DecoderParams) -> Result<DecodeResult, DecodeError> {
    params.validate()?;
    let clamps_before = variance_clamp_count();
    let mut state = init_channel_messages(y, sigma2, h)?;
    let mut ws = Workspace::default();
    let mut diagnostics = DecodeDiagnostics { peak_stored_components: 1, ..Default::default() };
    let mut x_hat = y.to_vec();
    let mut b_hat = h.round_to_integers(&x_hat)?;
    let mut stable_run = 0usize;
    let mut converged = false;
    let mut new_q: Vec<Option<GaussianMixture>> = vec![None; h.edge_count()];

    for iteration in 1..=params.max_iterations {
        state.iteration = iteration;
        for row in 0..h.n() {
            let out = check_node_with(&state, h, row, params, &mut ws)?;
            // Check messages of this iteration only read q's, so writing r's
            // in place keeps the flooding schedule.
            state.set_r_messages(h, row, out);
        }
        for col in 0..h.n() {
            let (qs, post) = variable_node_with(&state, h, col, params, &mut ws)?;
            for (&edge, q) in h.col_edges(col).iter().zip(qs) {
                new_q[edge] = Some(q);
            }
            x_hat[col] = mixture_mode(&post);
        }
        for (slot, q) in state.q_messages.iter_mut().zip(new_q.iter_mut()) {
            *slot = q.take().expect("every edge updated");
        }
        let stored = state.max_stored_components();
        diagnostics.max_components_per_iteration.push(stored);
        diagnostics.peak_stored_components = diagnostics.peak_stored_components.max(stored);

        let next_b = h.round_to_integers(&x_hat)?;
        if iteration > 1 && next_b == b_hat {
            stable_run += 1;
        } else {
            stable_run = 1;
        }
        b_hat = next_b;
        if stable_run >= params.stability_window {
            converged = true;
            break;
        }
    }
    diagnostics.peak_unreduced_components = ws.peak_unreduced;
    diagnostics.variance_clamps = variance_clamp_count() - clamps_before;
    Ok(DecodeResult {
        x_hat,
        b_hat,
        iterations_used: state.iteration,
        converged,
        diagnostics,
    })
}
