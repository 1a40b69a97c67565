"""Independent straight-line re-implementations used as oracles.

Everything here is deliberately naive pure Python over lists and
math.* so it shares no code path with the package under test.
"""

import math


def ref_matmul(a, b):
    rows, inner, cols = len(a), len(b), len(b[0])
    out = [[0.0] * cols for _ in range(rows)]
    for r in range(rows):
        for c in range(cols):
            s = 0.0
            for k in range(inner):
                s += a[r][k] * b[k][c]
            out[r][c] = s
    return out


def ref_sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def ref_softmax(xs):
    m = max(xs)
    es = [math.exp(x - m) for x in xs]
    s = sum(es)
    return [e / s for e in es]


def ref_lstm_step(w_f, w_i, w_c, w_o, b_f, b_i, b_c, b_o, h_prev, c_prev, e_t):
    """One LSTM cell update on plain lists; weights are (u, u+d) row lists."""
    u = len(b_f)
    x = list(h_prev) + list(e_t)

    def affine(w, b, j):
        return sum(w[j][k] * x[k] for k in range(len(x))) + b[j]

    h_out, c_out = [], []
    for j in range(u):
        f = ref_sigmoid(affine(w_f, b_f, j))
        i = ref_sigmoid(affine(w_i, b_i, j))
        g = math.tanh(affine(w_c, b_c, j))
        o = ref_sigmoid(affine(w_o, b_o, j))
        c = f * c_prev[j] + i * g
        c_out.append(c)
        h_out.append(o * math.tanh(c))
    return h_out, c_out


def ref_lstm_run(gates, e_seq):
    """Run a whole sequence from zero state; gates is the 8-tuple of
    weight/bias lists accepted by ref_lstm_step."""
    u = len(gates[4])
    h = [0.0] * u
    c = [0.0] * u
    out = []
    for e_t in e_seq:
        h, c = ref_lstm_step(*gates, h, c, e_t)
        out.append(h)
    return out


def ref_bilstm(gates_fwd, gates_bwd, e_seq):
    fwd = ref_lstm_run(gates_fwd, e_seq)
    bwd = ref_lstm_run(gates_bwd, list(reversed(e_seq)))
    bwd = list(reversed(bwd))
    return [f + b for f, b in zip(fwd, bwd)]


def ref_attend(w_w, b_w, u_ctx, h_seq):
    scores = []
    for h in h_seq:
        proj = [math.tanh(sum(w_w[a][k] * h[k] for k in range(len(h))) + b_w[a])
                for a in range(len(b_w))]
        scores.append(sum(u_ctx[a] * proj[a] for a in range(len(u_ctx))))
    alpha = ref_softmax(scores)
    n = [0.0] * len(h_seq[0])
    for w, h in zip(alpha, h_seq):
        for k in range(len(h)):
            n[k] += w * h[k]
    return n, alpha


def ref_instance_prob(w_hid, b_hid, w_news, b_news, n_vec, mask=None):
    m = list(n_vec) if mask is None else [a * b for a, b in zip(mask, n_vec)]
    hidden = [math.tanh(sum(w_hid[j][k] * m[k] for k in range(len(m))) + b_hid[j])
              for j in range(len(b_hid))]
    return ref_sigmoid(sum(w_news[0][j] * hidden[j] for j in range(len(hidden))) + b_news)


def ref_aggregate(pairs):
    rep = len(pairs[0][1])
    z = [0.0] * rep
    for p, vec in pairs:
        for k in range(rep):
            z[k] += p * vec[k]
    return [v / len(pairs) for v in z]


def ref_bag_predict(w_day, b_day, z, mask=None):
    zm = list(z) if mask is None else [a * b for a, b in zip(mask, z)]
    return ref_sigmoid(sum(w_day[0][k] * zm[k] for k in range(len(zm))) + b_day)


def ref_adadelta_scalar(grads, rho=0.95, eps=1e-6, lr=0.1, x0=0.0):
    """Scalar Adadelta recurrence; returns the parameter trajectory."""
    x, eg, ed = x0, 0.0, 0.0
    trajectory = []
    for g in grads:
        eg = rho * eg + (1.0 - rho) * g * g
        delta = -math.sqrt(ed + eps) / math.sqrt(eg + eps) * g
        ed = rho * ed + (1.0 - rho) * delta * delta
        x = x + lr * delta
        trajectory.append(x)
    return trajectory


def lstm_gates_as_lists(p):
    """Unpack an LstmParams into the 8-tuple of lists ref_lstm_step wants."""
    return (p.w_f.tolist(), p.w_i.tolist(), p.w_c.tolist(), p.w_o.tolist(),
            p.b_f.tolist(), p.b_i.tolist(), p.b_c.tolist(), p.b_o.tolist())
