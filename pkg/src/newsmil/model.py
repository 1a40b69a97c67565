"""The network and its hand-derived backward pass.

Per instance (one headline): embedding lookup, a bidirectional LSTM over
the token sequence, attention pooling of the concatenated hidden states
into an instance vector, and a one-hidden-layer classifier producing the
instance probability p.  Per bag (one trading day): the probability-
weighted mean of instance vectors, then an affine+sigmoid day classifier.

The two baselines share this code: the mean-embedding variants replace
the Bi-LSTM/attention encoder with the average of the title's word
vectors ("weighted" aggregation off additionally drops the probability
weighting, leaving a plain mean of instance vectors).

Every stage caches its activations in a ForwardTrace; backward() consumes
the trace and returns exact gradients for all trainable tensors.  All
arithmetic is float64.  Checkpoint I/O lives at the bottom of the module.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from datetime import date

import numpy as np

from .corpus import Bag
from .errors import DimensionError, FormatError
from .tensor import DTYPE, dropout_mask, sigmoid, softmax, tanh
from .textprep import EmbeddingMatrix, Vocabulary

_GATES = ("f", "i", "c", "o")            # naming order (checkpoint, gradients)
_PACK = {"f": 0, "i": 1, "o": 2, "c": 3}  # row-block order of the packed matrix;
                                          # the three sigmoid gates sit together so
                                          # one activation call covers them


@dataclass
class LstmParams:
    """One direction's cell.  The four gate weight matrices act on the
    concatenation [h_prev, e_t] and are stored packed row-wise in gate
    order f, i, c, o; the named views below expose the individual
    (units, units+input_dim) blocks."""

    w: np.ndarray  # (4u, u+d)
    b: np.ndarray  # (4u,)
    units: int

    def _block(self, gate: str) -> np.ndarray:
        k = _PACK[gate]
        return self.w[k * self.units:(k + 1) * self.units]

    def _bias(self, gate: str) -> np.ndarray:
        k = _PACK[gate]
        return self.b[k * self.units:(k + 1) * self.units]

    @property
    def w_f(self):
        return self._block("f")

    @property
    def w_i(self):
        return self._block("i")

    @property
    def w_c(self):
        return self._block("c")

    @property
    def w_o(self):
        return self._block("o")

    @property
    def b_f(self):
        return self._bias("f")

    @property
    def b_i(self):
        return self._bias("i")

    @property
    def b_c(self):
        return self._bias("c")

    @property
    def b_o(self):
        return self._bias("o")

    @property
    def w_rec(self):
        """Columns acting on h_prev."""
        return self.w[:, :self.units]

    @property
    def w_in(self):
        """Columns acting on e_t."""
        return self.w[:, self.units:]


@dataclass
class AttnParams:
    w_w: np.ndarray      # (A, 2u)
    b_w: np.ndarray      # (A,)
    u_ctx: np.ndarray    # (A,) learned context vector scoring each u_t


@dataclass
class InstanceClassifierParams:
    w_hid: np.ndarray    # (H, rep_dim)
    b_hid: np.ndarray    # (H,)
    w_news: np.ndarray   # (1, H)
    b_news: np.ndarray   # (1,)


@dataclass
class BagClassifierParams:
    w_day: np.ndarray    # (1, rep_dim)
    b_day: np.ndarray    # (1,)


@dataclass
class ModelParams:
    """All learned tensors.  fwd/bwd/attn are None for the mean-embedding
    variants, in which case instance vectors live in embedding space."""

    embeddings: EmbeddingMatrix
    fwd: LstmParams | None
    bwd: LstmParams | None
    attn: AttnParams | None
    inst: InstanceClassifierParams
    bag: BagClassifierParams

    @property
    def input_dim(self) -> int:
        return self.embeddings.dim

    @property
    def units(self) -> int:
        return self.fwd.units if self.fwd is not None else 0

    @property
    def attn_dim(self) -> int:
        return self.attn.w_w.shape[0] if self.attn is not None else 0

    @property
    def clf_hidden(self) -> int:
        return self.inst.w_hid.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.embeddings.vocab_size

    @property
    def rep_dim(self) -> int:
        """Instance-vector dimension: 2u with the Bi-LSTM encoder, d without."""
        return 2 * self.units if self.fwd is not None else self.input_dim

    @property
    def dims(self) -> tuple[int, int, int, int, int]:
        return (self.input_dim, self.units, self.attn_dim, self.clf_hidden, self.vocab_size)


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(DTYPE)


def _init_lstm(rng: np.random.Generator, units: int, input_dim: int) -> LstmParams:
    # per gate fan_in = u+d, fan_out = u; identical limit for all four gates
    limit = np.sqrt(6.0 / (units + input_dim + units))
    w = rng.uniform(-limit, limit, size=(4 * units, units + input_dim)).astype(DTYPE)
    return LstmParams(w=w, b=np.zeros(4 * units, dtype=DTYPE), units=units)


def init_params(
    embeddings: EmbeddingMatrix,
    *,
    units: int,
    attn_dim: int,
    clf_hidden: int,
    rng: np.random.Generator,
    use_encoder: bool = True,
) -> ModelParams:
    """Glorot-uniform weights, zero biases.  use_encoder=False builds the
    mean-embedding variant (no LSTM or attention tensors)."""
    d = embeddings.dim
    if use_encoder:
        fwd = _init_lstm(rng, units, d)
        bwd = _init_lstm(rng, units, d)
        attn = AttnParams(
            w_w=_glorot(rng, attn_dim, 2 * units),
            b_w=np.zeros(attn_dim, dtype=DTYPE),
            u_ctx=_glorot(rng, attn_dim, 1)[:, 0],
        )
        rep = 2 * units
    else:
        fwd = bwd = attn = None
        rep = d
    inst = InstanceClassifierParams(
        w_hid=_glorot(rng, clf_hidden, rep),
        b_hid=np.zeros(clf_hidden, dtype=DTYPE),
        w_news=_glorot(rng, 1, clf_hidden),
        b_news=np.zeros(1, dtype=DTYPE),
    )
    bag = BagClassifierParams(w_day=_glorot(rng, 1, rep), b_day=np.zeros(1, dtype=DTYPE))
    return ModelParams(embeddings=embeddings, fwd=fwd, bwd=bwd, attn=attn, inst=inst, bag=bag)


def named_tensors(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Canonical (name, array) enumeration: checkpoint order, optimizer
    state keys, and gradcheck families all use it.  LSTM entries are views
    into the packed storage, so in-place updates reach the model."""
    out: list[tuple[str, np.ndarray]] = [("embeddings", params.embeddings.vectors)]
    for dir_name, lstm in (("lstm_fwd", params.fwd), ("lstm_bwd", params.bwd)):
        if lstm is None:
            continue
        for g in _GATES:
            out.append((f"{dir_name}/w_{g}", getattr(lstm, f"w_{g}")))
        for g in _GATES:
            out.append((f"{dir_name}/b_{g}", getattr(lstm, f"b_{g}")))
    if params.attn is not None:
        out += [("attn/w_w", params.attn.w_w), ("attn/b_w", params.attn.b_w),
                ("attn/u_ctx", params.attn.u_ctx)]
    out += [
        ("inst/w_hid", params.inst.w_hid), ("inst/b_hid", params.inst.b_hid),
        ("inst/w_news", params.inst.w_news), ("inst/b_news", params.inst.b_news),
        ("bag/w_day", params.bag.w_day), ("bag/b_day", params.bag.b_day),
    ]
    return out


def trainable_tensors(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """named_tensors minus the embeddings unless they are fine-tuned."""
    return [(n, t) for n, t in named_tensors(params)
            if n != "embeddings" or params.embeddings.trainable]


def clone_params(params: ModelParams) -> ModelParams:
    emb = EmbeddingMatrix(vectors=params.embeddings.vectors.copy(),
                          trainable=params.embeddings.trainable)
    lstms = [
        LstmParams(w=p.w.copy(), b=p.b.copy(), units=p.units) if p is not None else None
        for p in (params.fwd, params.bwd)
    ]
    attn = None
    if params.attn is not None:
        attn = AttnParams(w_w=params.attn.w_w.copy(), b_w=params.attn.b_w.copy(),
                          u_ctx=params.attn.u_ctx.copy())
    inst = InstanceClassifierParams(
        w_hid=params.inst.w_hid.copy(), b_hid=params.inst.b_hid.copy(),
        w_news=params.inst.w_news.copy(), b_news=params.inst.b_news.copy())
    bag = BagClassifierParams(w_day=params.bag.w_day.copy(), b_day=params.bag.b_day.copy())
    return ModelParams(embeddings=emb, fwd=lstms[0], bwd=lstms[1], attn=attn, inst=inst, bag=bag)


# --- forward -------------------------------------------------------------

def embed_lookup(seq, emb: EmbeddingMatrix) -> np.ndarray:
    """Rows of the embedding table for a token-id sequence; returns a copy."""
    ids = np.asarray(seq, dtype=np.intp)
    if ids.size and ids.max() >= emb.vocab_size:
        raise IndexError(f"token id {int(ids.max())} out of range for |V|={emb.vocab_size}")
    return emb.vectors[ids]


def lstm_step(p: LstmParams, h_prev: np.ndarray, c_prev: np.ndarray,
              e_t: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """One cell update; returns (h_t, C_t)."""
    u = p.units
    if h_prev.shape != (u,) or c_prev.shape != (u,):
        raise DimensionError(f"state shapes {h_prev.shape}/{c_prev.shape} != ({u},)")
    if e_t.shape != (p.w.shape[1] - u,):
        raise DimensionError(f"input shape {e_t.shape} incompatible with weights {p.w.shape}")
    z = p.w @ np.concatenate([h_prev, e_t]) + p.b
    act = sigmoid(z[:3 * u])  # packed order keeps f, i, o adjacent
    f, i, o = act[:u], act[u:2 * u], act[2 * u:]
    g = tanh(z[3 * u:])
    c = f * c_prev + i * g
    return o * np.tanh(c), c


@dataclass
class DirTrace:
    """Stacked per-step activations of one LSTM direction, in processing
    order: gates f/i/o, candidate g, cell c, hidden h, each (T, u)."""

    f: np.ndarray
    i: np.ndarray
    g: np.ndarray
    o: np.ndarray
    c: np.ndarray
    h: np.ndarray


def _run_lstm(p: LstmParams, inputs: np.ndarray) -> DirTrace:
    """Run one direction over (T, d) inputs from zero initial state.

    The input contribution of all steps is a single matmul; the loop only
    carries the recurrent part.
    """
    steps, u = inputs.shape[0], p.units
    gates_in = inputs @ p.w_in.T + p.b
    f = np.empty((steps, u), dtype=DTYPE)
    i = np.empty_like(f)
    g = np.empty_like(f)
    o = np.empty_like(f)
    c = np.empty_like(f)
    h = np.empty_like(f)
    h_prev = np.zeros(u, dtype=DTYPE)
    c_prev = np.zeros(u, dtype=DTYPE)
    w_rec_t = p.w_rec.T
    for t in range(steps):
        z = gates_in[t] + h_prev @ w_rec_t
        act = sigmoid(z[:3 * u])
        f[t] = act[:u]
        i[t] = act[u:2 * u]
        o[t] = act[2 * u:]
        g[t] = np.tanh(z[3 * u:])
        c[t] = f[t] * c_prev + i[t] * g[t]
        h[t] = o[t] * np.tanh(c[t])
        h_prev, c_prev = h[t], c[t]
    return DirTrace(f=f, i=i, g=g, o=o, c=c, h=h)


def bilstm_encode(fwd: LstmParams, bwd: LstmParams, e_seq: np.ndarray) -> np.ndarray:
    """(T, 2u) matrix whose row t is [forward h_t, backward h_t]; the
    backward half comes from running the reversed sequence."""
    e_seq = np.asarray(e_seq, dtype=DTYPE)
    if e_seq.ndim != 2 or e_seq.shape[0] == 0:
        raise ValueError(f"encoder needs a nonempty (T, d) input, got shape {e_seq.shape}")
    fwd_trace = _run_lstm(fwd, e_seq)
    bwd_trace = _run_lstm(bwd, e_seq[::-1])
    return np.concatenate([fwd_trace.h, bwd_trace.h[::-1]], axis=1)


def attend(attn: AttnParams, h_seq: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Attention pooling: u_t = tanh(W h_t + b), score = u_ctx . u_t,
    weights = softmax(scores), output = weighted sum of h_t."""
    h_seq = np.asarray(h_seq, dtype=DTYPE)
    if h_seq.ndim != 2 or h_seq.shape[0] == 0:
        raise ValueError(f"attention needs a nonempty (T, 2u) input, got shape {h_seq.shape}")
    proj = np.tanh(h_seq @ attn.w_w.T + attn.b_w)
    alpha = softmax(proj @ attn.u_ctx)
    return alpha @ h_seq, alpha


def instance_prob(inst: InstanceClassifierParams, n_vec: np.ndarray,
                  mask: np.ndarray | None = None) -> float:
    """p = sigmoid(w_news . tanh(W_hid (mask*n) + b_hid) + b_news)."""
    m = n_vec if mask is None else mask * n_vec
    hidden = np.tanh(inst.w_hid @ m + inst.b_hid)
    return sigmoid(float((inst.w_news @ hidden)[0] + inst.b_news[0]))


def aggregate_bag(instances: list[tuple[float, np.ndarray]]) -> np.ndarray:
    """Mean of probability-scaled instance vectors: (1/n) sum p_i * n_i."""
    if not instances:
        raise ValueError("cannot aggregate an empty bag")
    acc = np.zeros_like(instances[0][1])
    for p, vec in instances:
        acc += p * vec
    return acc / len(instances)


def bag_predict(bag: BagClassifierParams, z: np.ndarray,
                mask: np.ndarray | None = None) -> float:
    zm = z if mask is None else mask * z
    return sigmoid(float((bag.w_day @ zm)[0] + bag.b_day[0]))


@dataclass
class InstanceTrace:
    e: np.ndarray                      # (T, d)
    fwd: DirTrace | None
    bwd: DirTrace | None
    h_cat: np.ndarray | None           # (T, 2u), Bi-LSTM variant only
    proj: np.ndarray | None            # (T, A) attention tanh projections
    alpha: np.ndarray | None           # (T,)
    n_vec: np.ndarray                  # (rep_dim,) instance vector
    mask_n: np.ndarray | None          # dropout mask applied to n_vec
    masked_n: np.ndarray               # mask*n (== n_vec when no mask)
    hidden: np.ndarray                 # (H,) classifier tanh layer
    p_hat: float


@dataclass
class ForwardTrace:
    """Everything backward() needs, exactly as produced by forward()."""

    instances: list[InstanceTrace]
    z: np.ndarray
    mask_z: np.ndarray | None
    masked_z: np.ndarray
    y_hat: float
    weighted: bool
    dims: tuple[int, int, int, int, int] = field(repr=False)
    token_ids: list[tuple[int, ...]] = field(repr=False)


def _encode_instance(params: ModelParams, seq, mask_n: np.ndarray | None) -> InstanceTrace:
    e = embed_lookup(seq, params.embeddings)
    if params.fwd is not None:
        fwd_trace = _run_lstm(params.fwd, e)
        bwd_trace = _run_lstm(params.bwd, e[::-1])
        h_cat = np.concatenate([fwd_trace.h, bwd_trace.h[::-1]], axis=1)
        proj = np.tanh(h_cat @ params.attn.w_w.T + params.attn.b_w)
        alpha = softmax(proj @ params.attn.u_ctx)
        n_vec = alpha @ h_cat
    else:
        fwd_trace = bwd_trace = h_cat = proj = alpha = None
        n_vec = e.mean(axis=0)
    masked_n = n_vec if mask_n is None else mask_n * n_vec
    hidden = np.tanh(params.inst.w_hid @ masked_n + params.inst.b_hid)
    p_hat = sigmoid(float((params.inst.w_news @ hidden)[0] + params.inst.b_news[0]))
    return InstanceTrace(e=e, fwd=fwd_trace, bwd=bwd_trace, h_cat=h_cat, proj=proj,
                         alpha=alpha, n_vec=n_vec, mask_n=mask_n, masked_n=masked_n,
                         hidden=hidden, p_hat=p_hat)


def forward(
    params: ModelParams,
    bag: Bag,
    *,
    mode: str = "infer",
    keep_prob: float = 1.0,
    weighted: bool = True,
    rng: np.random.Generator | None = None,
) -> tuple[float, ForwardTrace]:
    """Full bag forward pass.

    Dropout masks are drawn only in train mode with keep_prob < 1 (one
    mask per instance vector, then one for the bag vector, in that order);
    inference is deterministic.  weighted=False switches the aggregation
    to a plain mean of instance vectors (the simple-average baseline).
    """
    if mode not in ("train", "infer"):
        raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
    if bag.instances is None or not bag.instances:
        raise ValueError(f"bag {bag.day} has no encoded instances")
    use_dropout = mode == "train" and keep_prob < 1.0
    if use_dropout and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    rep = params.rep_dim

    traces = []
    for seq in bag.instances:
        if not seq:
            raise ValueError(f"bag {bag.day} contains an empty instance")
        mask_n = dropout_mask(rep, keep_prob, rng) if use_dropout else None
        traces.append(_encode_instance(params, seq, mask_n))

    n_k = len(traces)
    z = np.zeros(rep, dtype=DTYPE)
    for tr in traces:
        z += (tr.p_hat * tr.n_vec) if weighted else tr.n_vec
    z /= n_k

    mask_z = dropout_mask(rep, keep_prob, rng) if use_dropout else None
    masked_z = z if mask_z is None else mask_z * z
    y_hat = sigmoid(float((params.bag.w_day @ masked_z)[0] + params.bag.b_day[0]))
    trace = ForwardTrace(instances=traces, z=z, mask_z=mask_z, masked_z=masked_z,
                         y_hat=y_hat, weighted=weighted, dims=params.dims,
                         token_ids=list(bag.instances))
    return y_hat, trace


# --- backward ------------------------------------------------------------

def _lstm_backward(p: LstmParams, inputs: np.ndarray, tr: DirTrace,
                   dh_seq: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Backpropagation through time for one direction.

    dh_seq (T, u) holds the loss gradient arriving at each hidden state
    from above.  Returns (dW packed (4u, u+d), db (4u,), dInputs (T, d)).
    """
    steps, u = dh_seq.shape
    dz_all = np.empty((steps, 4 * u), dtype=DTYPE)
    dh_next = np.zeros(u, dtype=DTYPE)
    dc_next = np.zeros(u, dtype=DTYPE)
    w_rec = p.w_rec
    for t in range(steps - 1, -1, -1):
        dh = dh_seq[t] + dh_next
        tanh_c = np.tanh(tr.c[t])
        do = dh * tanh_c
        dc = dc_next + dh * tr.o[t] * (1.0 - tanh_c * tanh_c)
        c_prev = tr.c[t - 1] if t > 0 else 0.0
        df = dc * c_prev
        di = dc * tr.g[t]
        dg = dc * tr.i[t]
        dc_next = dc * tr.f[t]
        dz = dz_all[t]
        dz[:u] = df * tr.f[t] * (1.0 - tr.f[t])
        dz[u:2 * u] = di * tr.i[t] * (1.0 - tr.i[t])
        dz[2 * u:3 * u] = do * tr.o[t] * (1.0 - tr.o[t])
        dz[3 * u:] = dg * (1.0 - tr.g[t] * tr.g[t])
        dh_next = dz @ w_rec
    # x_t = [h_{t-1}, e_t]; batch the weight/input gradients over all steps
    x_all = np.empty((steps, u + inputs.shape[1]), dtype=DTYPE)
    x_all[0, :u] = 0.0
    x_all[1:, :u] = tr.h[:-1]
    x_all[:, u:] = inputs
    dw = dz_all.T @ x_all
    db = dz_all.sum(axis=0)
    d_inputs = dz_all @ p.w_in
    return dw, db, d_inputs


def backward(params: ModelParams, trace: ForwardTrace, dldy: float) -> dict[str, np.ndarray]:
    """Exact gradients of the scalar loss for every trainable tensor,
    keyed like trainable_tensors().  Dropout masks are reused from the
    trace, never redrawn."""
    if trace.dims != params.dims:
        raise ValueError(f"trace/params mismatch: trace dims {trace.dims}, params {params.dims}")
    inst, bag, attn = params.inst, params.bag, params.attn
    rep = params.rep_dim
    n_k = len(trace.instances)

    grads: dict[str, np.ndarray] = {
        name: np.zeros_like(t) for name, t in trainable_tensors(params)
    }
    d_emb = grads.get("embeddings")

    y = trace.y_hat
    d_logit = dldy * y * (1.0 - y)
    grads["bag/w_day"][0] += d_logit * trace.masked_z
    grads["bag/b_day"][0] += d_logit
    dzm = d_logit * bag.w_day[0]
    dz = dzm if trace.mask_z is None else trace.mask_z * dzm

    for tr, seq in zip(trace.instances, trace.token_ids):
        if trace.weighted:
            dp = float(dz @ tr.n_vec) / n_k
            dn = (tr.p_hat / n_k) * dz
        else:
            dp = 0.0
            dn = dz / n_k

        # instance classifier
        p = tr.p_hat
        dplogit = dp * p * (1.0 - p)
        grads["inst/w_news"][0] += dplogit * tr.hidden
        grads["inst/b_news"][0] += dplogit
        dhidden = dplogit * inst.w_news[0]
        dpre = (1.0 - tr.hidden * tr.hidden) * dhidden
        grads["inst/w_hid"] += np.outer(dpre, tr.masked_n)
        grads["inst/b_hid"] += dpre
        dm = inst.w_hid.T @ dpre
        dn = dn + (dm if tr.mask_n is None else tr.mask_n * dm)

        if params.fwd is not None:
            # attention: n = alpha @ H
            h_cat, alpha, proj = tr.h_cat, tr.alpha, tr.proj
            dalpha = h_cat @ dn
            dh_cat = np.outer(alpha, dn)
            dscore = alpha * (dalpha - float(dalpha @ alpha))
            grads["attn/u_ctx"] += proj.T @ dscore
            dproj = np.outer(dscore, attn.u_ctx) * (1.0 - proj * proj)
            grads["attn/w_w"] += dproj.T @ h_cat
            grads["attn/b_w"] += dproj.sum(axis=0)
            dh_cat += dproj @ attn.w_w

            u = params.units
            dw_f, db_f, de_f = _lstm_backward(params.fwd, tr.e, tr.fwd, dh_cat[:, :u])
            dw_b, db_b, de_b = _lstm_backward(params.bwd, tr.e[::-1], tr.bwd,
                                              dh_cat[::-1, u:])
            for prefix, dw, db in (("lstm_fwd", dw_f, db_f), ("lstm_bwd", dw_b, db_b)):
                for gate in _GATES:
                    k = _PACK[gate]
                    grads[f"{prefix}/w_{gate}"] += dw[k * u:(k + 1) * u]
                    grads[f"{prefix}/b_{gate}"] += db[k * u:(k + 1) * u]
            d_inputs = de_f + de_b[::-1]
        else:
            # mean of embeddings: every token gets dn / T
            d_inputs = np.tile(dn / len(seq), (len(seq), 1))

        if d_emb is not None:
            np.add.at(d_emb, np.asarray(seq, dtype=np.intp), d_inputs)

    return grads


# --- gradient checking ---------------------------------------------------

def max_relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-3) -> float:
    """max |a-b| / max(|a|+|b|, floor); the floor keeps finite-difference
    noise on near-zero gradients from registering as disagreement."""
    denom = np.maximum(np.abs(a) + np.abs(b), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def gradcheck(
    seed: int,
    *,
    use_encoder: bool = True,
    input_dim: int = 4,
    units: int = 3,
    attn_dim: int = 3,
    clf_hidden: int = 3,
    n_bags: int = 2,
    max_instances: int = 3,
    max_tokens: int = 5,
    keep_prob: float = 1.0,
    weighted: bool = True,
    h: float = 1e-5,
) -> dict[str, float]:
    """Compare backward() with central finite differences of the summed
    bag-level cross-entropy on a randomized toy model; returns the max
    relative error per parameter family (embeddings are fine-tuned here so
    their path is covered)."""
    from .train import bce_dldy, bce_loss  # local import to avoid a cycle

    rng = np.random.Generator(np.random.PCG64(seed))
    vocab_size = 9
    emb = EmbeddingMatrix(
        vectors=rng.uniform(-0.5, 0.5, size=(vocab_size, input_dim)).astype(DTYPE),
        trainable=True)
    emb.vectors[0] = 0.0
    params = init_params(emb, units=units, attn_dim=attn_dim, clf_hidden=clf_hidden,
                         rng=rng, use_encoder=use_encoder)

    bags = []
    for k in range(n_bags):
        seqs = tuple(
            tuple(int(t) for t in rng.integers(0, vocab_size, size=rng.integers(1, max_tokens + 1)))
            for _ in range(int(rng.integers(1, max_instances + 1)))
        )
        bags.append(Bag(day=date(2020, 1, 6 + k), items=(),
                        label=int(rng.integers(0, 2)), instances=seqs))

    mask_seed = int(rng.integers(0, 2**32))

    def total_loss() -> float:
        mask_rng = np.random.Generator(np.random.PCG64(mask_seed))
        total = 0.0
        for b in bags:
            y_hat, _ = forward(params, b, mode="train", keep_prob=keep_prob,
                               weighted=weighted, rng=mask_rng)
            total += bce_loss(y_hat, b.label)
        return total

    mask_rng = np.random.Generator(np.random.PCG64(mask_seed))
    analytic: dict[str, np.ndarray] = {
        name: np.zeros_like(t) for name, t in trainable_tensors(params)
    }
    for b in bags:
        y_hat, trace = forward(params, b, mode="train", keep_prob=keep_prob,
                               weighted=weighted, rng=mask_rng)
        for name, g in backward(params, trace, bce_dldy(y_hat, b.label)).items():
            analytic[name] += g

    errors: dict[str, float] = {}
    for name, tensor in trainable_tensors(params):
        fd = np.zeros_like(tensor)
        flat = tensor.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            fp = total_loss()
            flat[idx] = orig - h
            fm = total_loss()
            flat[idx] = orig
            fd.reshape(-1)[idx] = (fp - fm) / (2.0 * h)
        errors[name] = max_relative_error(analytic[name], fd)
    return errors


# --- checkpoint I/O -------------------------------------------------------

CHECKPOINT_MAGIC = b"NEWSMIL-CKPT"
CHECKPOINT_VERSION = 1


def _write_u32(fh, value: int) -> None:
    fh.write(struct.pack("<I", value))


def _read_u32(fh) -> int:
    raw = fh.read(4)
    if len(raw) != 4:
        raise FormatError("truncated checkpoint")
    return struct.unpack("<I", raw)[0]


def _write_str(fh, text: str) -> None:
    raw = text.encode("utf-8")
    _write_u32(fh, len(raw))
    fh.write(raw)


def _read_str(fh) -> str:
    n = _read_u32(fh)
    raw = fh.read(n)
    if len(raw) != n:
        raise FormatError("truncated checkpoint")
    return raw.decode("utf-8")


def save_checkpoint(path, params: ModelParams, vocab: Vocabulary) -> None:
    """Binary layout: magic, version, (d, u, A, H, |V|), the vocabulary in
    id order, then each named tensor as name/shape/float32-LE data.
    Deterministic, so save -> load -> save is byte-identical."""
    tensors = named_tensors(params)
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        _write_u32(fh, CHECKPOINT_VERSION)
        for value in params.dims:
            _write_u32(fh, value)
        for token in vocab.tokens:
            _write_str(fh, token)
        _write_u32(fh, len(tensors))
        for name, tensor in tensors:
            _write_str(fh, name)
            _write_u32(fh, tensor.ndim)
            for dim in tensor.shape:
                _write_u32(fh, dim)
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_checkpoint(path) -> tuple[ModelParams, Vocabulary]:
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise FormatError(f"bad checkpoint magic {magic!r}", path=path)
        version = _read_u32(fh)
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}", path=path)
        d, u, a_dim, h_dim, v = (_read_u32(fh) for _ in range(5))
        tokens = tuple(_read_str(fh) for _ in range(v))
        tensors: dict[str, np.ndarray] = {}
        for _ in range(_read_u32(fh)):
            name = _read_str(fh)
            ndim = _read_u32(fh)
            shape = tuple(_read_u32(fh) for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            raw = fh.read(4 * count)
            if len(raw) != 4 * count:
                raise FormatError("truncated checkpoint", path=path)
            tensors[name] = np.frombuffer(raw, dtype="<f4").astype(DTYPE).reshape(shape)

    vocab = Vocabulary(tokens=tokens, index={t: i for i, t in enumerate(tokens)}, min_count=0)
    emb = EmbeddingMatrix(vectors=tensors["embeddings"], trainable=False)

    pack_order = sorted(_GATES, key=_PACK.get)

    def pack_lstm(prefix: str) -> LstmParams | None:
        if f"{prefix}/w_f" not in tensors:
            return None
        w = np.concatenate([tensors[f"{prefix}/w_{g}"] for g in pack_order], axis=0)
        b = np.concatenate([tensors[f"{prefix}/b_{g}"] for g in pack_order])
        return LstmParams(w=w, b=b, units=u)

    attn = None
    if "attn/w_w" in tensors:
        attn = AttnParams(w_w=tensors["attn/w_w"], b_w=tensors["attn/b_w"],
                          u_ctx=tensors["attn/u_ctx"])
    inst = InstanceClassifierParams(
        w_hid=tensors["inst/w_hid"], b_hid=tensors["inst/b_hid"],
        w_news=tensors["inst/w_news"], b_news=tensors["inst/b_news"])
    bag = BagClassifierParams(w_day=tensors["bag/w_day"], b_day=tensors["bag/b_day"])
    params = ModelParams(embeddings=emb, fwd=pack_lstm("lstm_fwd"),
                         bwd=pack_lstm("lstm_bwd"), attn=attn, inst=inst, bag=bag)
    expected = (d, u, a_dim, h_dim, v)
    if params.dims != expected:
        raise FormatError(
            f"checkpoint header dims {expected} disagree with tensor shapes {params.dims}",
            path=path)
    return params, vocab
