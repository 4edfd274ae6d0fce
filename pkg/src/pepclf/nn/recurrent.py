"""LSTM and bidirectional LSTM layers with full backpropagation through time.

Cell equations per step (sigmoid gates, configurable cell activation):

    i, f, o = sigmoid(x W_i + h U_i + b_i), ...
    g       = act(x W_c + h U_c + b_c)
    c_t     = f * c_prev + i * g
    h_t     = o * act(c_t)

Padded positions (mask False) carry h and c through unchanged, so the final
state of a row equals its state at the last valid step and an all-padding
row stays at the zero initial state.  The input projection for all steps and
the weight-gradient contractions are hoisted out of the time loop; only the
state recurrence runs per step.
"""

import numpy as np

from .layers import Layer, Parameter, ShapeError

GATES = ("i", "f", "o", "c")


def _gate_sigmoid(x):
    # gates saturate cleanly: exp overflow yields inf and a correct 0.0
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-x))


def _act_forward(kind, x):
    if kind == "tanh":
        return np.tanh(x)
    if kind == "relu":
        return np.maximum(x, 0.0)
    raise ValueError(f"cell activation must be 'tanh' or 'relu', got {kind!r}")


def _act_deriv_from_output(kind, y):
    # both supported activations allow the derivative to be recovered from
    # the activation output alone
    if kind == "tanh":
        return 1.0 - y * y
    return (y > 0).astype(np.float64)


def _orthogonal(rng, n):
    """Uniformly random orthogonal matrix via the QR decomposition."""
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


class LSTM(Layer):
    """Single-direction LSTM over (batch, time, features) inputs."""

    def __init__(self, input_dim, hidden, cell_activation="tanh",
                 return_sequences=False, forget_bias=1.0, rng=None, name="lstm"):
        rng = rng or np.random.default_rng()
        self.input_dim = input_dim
        self.hidden = hidden
        self.cell_activation = cell_activation
        _act_forward(cell_activation, np.zeros(1))  # validate early
        self.return_sequences = return_sequences

        # Glorot-uniform input kernels, orthogonal recurrence, unit forget
        # bias: norm-preserving recurrence keeps the relu cell variant from
        # dying or exploding
        wlim = np.sqrt(6.0 / (input_dim + hidden))
        self.W = {}
        self.U = {}
        self.b = {}
        for gate in GATES:
            self.W[gate] = Parameter(
                rng.uniform(-wlim, wlim, (input_dim, hidden)), f"{name}.W_{gate}"
            )
            self.U[gate] = Parameter(_orthogonal(rng, hidden), f"{name}.U_{gate}")
            bias = np.full(hidden, forget_bias) if gate == "f" else np.zeros(hidden)
            self.b[gate] = Parameter(bias, f"{name}.b_{gate}")
        self._cache = None

    def parameters(self):
        return (
            [self.W[g] for g in GATES]
            + [self.U[g] for g in GATES]
            + [self.b[g] for g in GATES]
        )

    def _fused(self):
        Wc = np.concatenate([self.W[g].value for g in GATES], axis=1)
        Uc = np.concatenate([self.U[g].value for g in GATES], axis=1)
        bc = np.concatenate([self.b[g].value for g in GATES])
        return Wc, Uc, bc

    def forward(self, x, mask=None, training=False):
        if x.ndim != 3 or x.shape[2] != self.input_dim:
            raise ShapeError(
                f"lstm expects input (batch, time, {self.input_dim}), got {x.shape}"
            )
        batch, time, _ = x.shape
        H = self.hidden
        masked = mask is not None and not mask.all()
        mf = mask.astype(np.float64)[:, :, None] if masked else None
        Wc, Uc, bc = self._fused()

        # input projection for all steps in one matmul
        gx = (x.reshape(batch * time, -1) @ Wc + bc).reshape(batch, time, 4 * H)

        h = np.zeros((batch, H))
        c = np.zeros((batch, H))
        # per-step caches, laid out (batch, time, H)
        I = np.empty((batch, time, H))
        F = np.empty((batch, time, H))
        O = np.empty((batch, time, H))
        G = np.empty((batch, time, H))
        AC = np.empty((batch, time, H))
        HP = np.empty((batch, time, H))  # h before the step
        CP = np.empty((batch, time, H))  # c before the step
        hs = np.empty((batch, time, H)) if self.return_sequences else None

        act = self.cell_activation
        for t in range(time):
            HP[:, t] = h
            CP[:, t] = c
            s = gx[:, t] + h @ Uc
            sg = _gate_sigmoid(s[:, : 3 * H])
            i = sg[:, :H]
            f = sg[:, H : 2 * H]
            o = sg[:, 2 * H :]
            g = _act_forward(act, s[:, 3 * H :])
            c_new = f * c + i * g
            ac = _act_forward(act, c_new)
            I[:, t] = i
            F[:, t] = f
            O[:, t] = o
            G[:, t] = g
            AC[:, t] = ac
            if masked:
                m = mf[:, t]
                c = m * c_new + (1.0 - m) * c
                h = m * (o * ac) + (1.0 - m) * h
            else:
                c = c_new
                h = o * ac
            if self.return_sequences:
                hs[:, t] = h
        self._cache = (x, mf, (I, F, O, G, AC, HP, CP), Uc, Wc)
        return hs if self.return_sequences else h

    def backward(self, grad):
        x, mf, (I, F, O, G, AC, HP, CP), Uc, Wc = self._cache
        batch, time, _ = x.shape
        H = self.hidden
        act = self.cell_activation

        DS = np.empty((batch, time, 4 * H))
        dh = np.zeros((batch, H)) if self.return_sequences else grad.copy()
        dc = np.zeros((batch, H))

        for t in reversed(range(time)):
            if self.return_sequences:
                dh = dh + grad[:, t]
            i, f, o, g, ac = I[:, t], F[:, t], O[:, t], G[:, t], AC[:, t]

            do = dh * ac
            dct = dc + dh * o * _act_deriv_from_output(act, ac)
            ds = DS[:, t]
            ds[:, :H] = dct * g * i * (1.0 - i)
            ds[:, H : 2 * H] = dct * CP[:, t] * f * (1.0 - f)
            ds[:, 2 * H : 3 * H] = do * o * (1.0 - o)
            ds[:, 3 * H :] = dct * i * _act_deriv_from_output(act, g)
            if mf is not None:
                m = mf[:, t]
                ds *= m  # padded rows contribute nothing at this step
                dh = m * (ds @ Uc.T) + (1.0 - m) * dh
                dc = m * (dct * f) + (1.0 - m) * dc
            else:
                dh = ds @ Uc.T
                dc = dct * f

        flat_ds = DS.reshape(batch * time, 4 * H)
        dW = x.reshape(batch * time, -1).T @ flat_ds
        dU = HP.reshape(batch * time, H).T @ flat_ds
        db = flat_ds.sum(axis=0)
        dx = (flat_ds @ Wc.T).reshape(x.shape)

        for k, gate in enumerate(GATES):
            self.W[gate].grad += dW[:, k * H : (k + 1) * H]
            self.U[gate].grad += dU[:, k * H : (k + 1) * H]
            self.b[gate].grad += db[k * H : (k + 1) * H]
        return dx


class BiLSTM(Layer):
    """Forward and reversed LSTM passes concatenated on the feature axis.

    With return_sequences the output width is 2 * hidden per step; without
    it the layer returns [forward state at the last valid step, backward
    state at the first valid step].
    """

    def __init__(self, input_dim, hidden, cell_activation="tanh",
                 return_sequences=False, rng=None, name="bilstm"):
        rng = rng or np.random.default_rng()
        self.return_sequences = return_sequences
        self.fwd = LSTM(input_dim, hidden, cell_activation, return_sequences,
                        rng=rng, name=f"{name}.fwd")
        self.bwd = LSTM(input_dim, hidden, cell_activation, return_sequences,
                        rng=rng, name=f"{name}.bwd")

    def parameters(self):
        return self.fwd.parameters() + self.bwd.parameters()

    def forward(self, x, mask=None, training=False):
        rmask = mask[:, ::-1] if mask is not None else None
        hf = self.fwd.forward(x, mask, training)
        hb = self.bwd.forward(x[:, ::-1, :], rmask, training)
        if self.return_sequences:
            return np.concatenate([hf, hb[:, ::-1, :]], axis=2)
        return np.concatenate([hf, hb], axis=1)

    def backward(self, grad):
        H = self.fwd.hidden
        if self.return_sequences:
            gf = grad[:, :, :H]
            gb = grad[:, :, H:][:, ::-1, :]
        else:
            gf = grad[:, :H]
            gb = grad[:, H:]
        dxf = self.fwd.backward(gf)
        dxb = self.bwd.backward(gb)[:, ::-1, :]
        return dxf + dxb
