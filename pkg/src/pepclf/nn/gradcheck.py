"""Finite-difference verification of every backward pass.

``max_relative_error`` is the primitive: perturb each element of each input
array by +/-eps, form the central difference, and compare against the
analytic gradient with relative error |a - n| / max(|a|, |n|, 1e-8).

``run_layer_checks`` and ``run_architecture_checks`` build seeded random
instances for every layer / classifier and report the worst relative error
per component.  Instances are drawn away from relu and max-pool kinks where
a subgradient would make the central difference meaningless.
"""

import zlib

import numpy as np

from .activations import softmax
from .layers import BatchNorm, Conv1D, Dense, MaxPool1D
from .losses import binary_cross_entropy, categorical_cross_entropy
from .recurrent import LSTM, BiLSTM


class GradCheckError(RuntimeError):
    """Raised when a checked computation produces non-finite values."""


LAYER_TOLERANCES = {
    "dense": 1e-5,
    "conv1d": 1e-5,
    "maxpool1d": 1e-5,
    "batchnorm": 1e-4,
    "lstm": 1e-4,
    "bilstm": 1e-4,
    "binary_ce": 1e-6,
    "categorical_ce": 1e-6,
}

ARCHITECTURE_TOLERANCE = 1e-4


def max_relative_error(loss_fn, arrays, analytic_grads, eps=1e-5):
    """Worst relative error between analytic grads and central differences.

    ``loss_fn`` must re-evaluate the scalar loss from the current contents of
    ``arrays``; the arrays are perturbed in place and restored.
    """
    worst = 0.0
    for arr, grad in zip(arrays, analytic_grads):
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + eps
            f_plus = loss_fn()
            flat[idx] = orig - eps
            f_minus = loss_fn()
            flat[idx] = orig
            if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
                raise GradCheckError("non-finite loss during finite differencing")
            numeric = (f_plus - f_minus) / (2.0 * eps)
            denom = max(abs(gflat[idx]), abs(numeric), 1e-8)
            worst = max(worst, abs(gflat[idx] - numeric) / denom)
    if not np.isfinite(worst):
        raise GradCheckError("non-finite gradient encountered")
    return worst


def _projected_loss(layer, x, proj, mask=None):
    def fn():
        return float(np.sum(layer.forward(x, mask=mask, training=True) * proj))

    return fn


def _layer_instance_error(layer, x, rng, mask=None):
    """Check d(sum(out * proj))/d(inputs and params) for one instance."""
    out = layer.forward(x, mask=mask, training=True)
    proj = rng.standard_normal(out.shape)
    for p in layer.parameters():
        p.zero_grad()
    dx = layer.backward(proj)
    arrays = [x] + [p.value for p in layer.parameters()]
    grads = [dx] + [p.grad.copy() for p in layer.parameters()]
    if dx is None:
        arrays, grads = arrays[1:], grads[1:]
    return max_relative_error(_projected_loss(layer, x, proj, mask), arrays, grads)


def _check_dense(rng):
    acts = ["identity", "sigmoid", "tanh", "relu", "softmax"]
    batch, i, o = rng.integers(2, 5), rng.integers(2, 6), rng.integers(2, 6)
    layer = Dense(int(i), int(o), act=acts[rng.integers(len(acts))], rng=rng)
    x = rng.standard_normal((batch, i))
    if layer.act_kind == "relu":
        # keep pre-activations away from the kink
        while np.any(np.abs(x @ layer.W.value + layer.b.value) < 1e-3):
            x = rng.standard_normal((batch, i))
    return _layer_instance_error(layer, x, rng)


def _check_conv1d(rng):
    batch = int(rng.integers(1, 4))
    time = int(rng.integers(4, 9))
    ch = int(rng.integers(1, 4))
    filt = int(rng.integers(1, 5))
    kernel = int(rng.integers(1, min(4, time) + 1))
    stride = int(rng.integers(1, 3))
    padding = ("valid", "same")[rng.integers(2)]
    layer = Conv1D(kernel, ch, filt, stride=stride, padding=padding, rng=rng)
    x = rng.standard_normal((batch, time, ch))
    return _layer_instance_error(layer, x, rng)


def _check_maxpool(rng):
    batch = int(rng.integers(1, 4))
    time = int(rng.integers(4, 10))
    ch = int(rng.integers(1, 4))
    pool = int(rng.integers(1, time + 1))
    layer = MaxPool1D(pool)
    # well-separated values so no window has near-ties
    x = rng.permutation(time * batch * ch).astype(np.float64).reshape(batch, time, ch)
    x += rng.uniform(-0.2, 0.2, x.shape)
    return _layer_instance_error(layer, x, rng)


def _check_batchnorm(rng):
    batch = int(rng.integers(3, 7))
    feat = int(rng.integers(2, 5))
    layer = BatchNorm(feat)
    layer.gamma.value += rng.uniform(-0.3, 0.3, feat)
    layer.beta.value += rng.uniform(-0.3, 0.3, feat)
    x = rng.standard_normal((batch, feat)) * 1.5
    return _layer_instance_error(layer, x, rng)


def _random_mask(rng, batch, time):
    lengths = rng.integers(1, time + 1, size=batch)
    return np.arange(time)[None, :] < lengths[:, None]


def _check_lstm(rng):
    batch = int(rng.integers(2, 4))
    time = int(rng.integers(2, 5))
    in_dim = int(rng.integers(2, 5))
    hidden = int(rng.integers(2, 6))
    cell = ("tanh", "relu")[rng.integers(2)]
    layer = LSTM(in_dim, hidden, cell_activation=cell,
                 return_sequences=bool(rng.integers(2)), rng=rng)
    x = rng.standard_normal((batch, time, in_dim))
    return _layer_instance_error(layer, x, rng, mask=_random_mask(rng, batch, time))


def _check_bilstm(rng):
    batch = int(rng.integers(2, 4))
    time = int(rng.integers(2, 5))
    in_dim = int(rng.integers(2, 5))
    hidden = int(rng.integers(2, 5))
    layer = BiLSTM(in_dim, hidden, return_sequences=bool(rng.integers(2)), rng=rng)
    x = rng.standard_normal((batch, time, in_dim))
    return _layer_instance_error(layer, x, rng, mask=_random_mask(rng, batch, time))


def _check_loss(kind, rng):
    n = int(rng.integers(2, 7))
    if kind == "binary_ce":
        pred = rng.uniform(0.05, 0.95, (n, 1))
        target = rng.integers(0, 2, (n, 1)).astype(np.float64)
        fn = binary_cross_entropy
    else:
        logits = rng.standard_normal((n, 3))
        pred = softmax(logits)
        target = np.zeros((n, 3))
        target[np.arange(n), rng.integers(0, 3, n)] = 1.0
        fn = categorical_cross_entropy
    _, grad = fn(pred, target)
    return max_relative_error(lambda: fn(pred, target)[0], [pred], [grad], eps=1e-6)


_LAYER_CHECKS = {
    "dense": _check_dense,
    "conv1d": _check_conv1d,
    "maxpool1d": _check_maxpool,
    "batchnorm": _check_batchnorm,
    "lstm": _check_lstm,
    "bilstm": _check_bilstm,
    "binary_ce": lambda rng: _check_loss("binary_ce", rng),
    "categorical_ce": lambda rng: _check_loss("categorical_ce", rng),
}


def run_layer_checks(n_instances=20, seed=0):
    """Worst finite-difference error per layer over seeded random instances."""
    results = {}
    for name, check in _LAYER_CHECKS.items():
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        results[name] = max(check(rng) for _ in range(n_instances))
    return results


def _architecture_fd_error(model, ids, mask, targets, eps=2e-4):
    """Loss gradient of every parameter vs central differences.

    Perturbing a layer's parameters only changes that layer and everything
    after it, so each stage's finite differences restart from the cached
    stage input rather than re-running the whole network.  The step is wider
    than for single layers: deep parameters have gradients near the 1e-8
    denominator floor, where the float64 rounding of the loss (~1e-16/eps)
    must stay well below the tolerance.
    """
    x = model.embedding.forward(ids, training=False)
    stage_inputs = []
    for layer in model.layers:
        stage_inputs.append(x)
        x = layer.forward(x, mask=mask, training=False)
    _, dpred = model.loss(x, targets)
    for p in model.state_parameters():
        p.zero_grad()
    model.backward(dpred)

    worst = 0.0
    if model.embedding.trainable:
        def full_loss():
            pred = model.forward(ids, mask, training=False)
            return model.loss(pred, targets)[0]

        worst = max_relative_error(
            full_loss, [model.embedding.W.value], [model.embedding.W.grad.copy()],
            eps=eps,
        )
    for start, layer in enumerate(model.layers):
        params = layer.parameters()
        if not params:
            continue

        def stage_loss(start=start):
            y = stage_inputs[start]
            for l in model.layers[start:]:
                y = l.forward(y, mask=mask, training=False)
            return model.loss(y, targets)[0]

        err = max_relative_error(
            stage_loss, [p.value for p in params], [p.grad.copy() for p in params],
            eps=eps,
        )
        worst = max(worst, err)
    return worst


def _relu_kink_margin(model, ids, mask):
    """Distance of the instance from relu / max-pool non-smooth points.

    Central differences are only meaningful when no perturbation can cross a
    kink, so instances are drawn until this margin is comfortably larger
    than the step size.  Cell states that are exactly zero are robust zeros
    (their inputs are zero-gated) and do not count.
    """
    margin = np.inf
    arch = model.architecture
    x = model.embedding.forward(ids)
    if arch == "cnn":
        conv = model.layers[0]
        y = conv.forward(x, training=False)
        z = conv._cache[3]
        margin = min(margin, float(np.abs(z).min()))
        # pool ties matter only between two live (positive) candidates;
        # relu-clipped zeros stay exactly zero under small perturbations
        top2 = np.partition(y, y.shape[1] - 2, axis=1)[:, -2:, :]
        second, first = top2[:, 0, :], top2[:, 1, :]
        live = second > 0
        if live.any():
            margin = min(margin, float((first - second)[live].min()))
    elif arch == "lstm":
        lstm = model.layers[0]
        Wc, Uc, bc = lstm._fused()
        H = lstm.hidden
        batch, time, _ = x.shape
        gx = (x.reshape(batch * time, -1) @ Wc + bc).reshape(batch, time, 4 * H)
        h = np.zeros((batch, H))
        c = np.zeros((batch, H))
        for t in range(time):
            s = gx[:, t] + h @ Uc
            sg = 1.0 / (1.0 + np.exp(-s[:, : 3 * H]))
            sc = s[:, 3 * H :]
            margin = min(margin, float(np.abs(sc).min()))
            c = sg[:, H : 2 * H] * c + sg[:, :H] * np.maximum(sc, 0.0)
            pos = c[c > 0]
            if pos.size:
                margin = min(margin, float(pos.min()))
            h = sg[:, 2 * H :] * np.maximum(c, 0.0)
    return margin


def run_architecture_checks(seed=0):
    """End-to-end loss gradients of each classifier vs finite differences.

    Uses a tiny embedding and short sequences on a 2-record batch; dropout is
    inactive so the loss is a deterministic function of the parameters.
    """
    from .. import models  # deferred; models imports this package
    from ..embeddings import EmbeddingMatrix
    from ..seqdata import build_vocab

    results = {}
    # eps balances two float64 error floors: rounding noise in the loss
    # (~1e-16/eps, dominant for the deep tanh stack's tiny gradients) against
    # relu kink crossings (which favor small steps in cnn and lstm)
    eps_by_arch = {"cnn": 1e-5, "lstm": 6e-5, "bilstm": 2e-4}
    for arch in ("cnn", "lstm", "bilstm"):
        eps = eps_by_arch[arch]
        dim = 4
        max_len = 4 if arch == "cnn" else 3
        for attempt in range(200):
            rng = np.random.default_rng([seed, 7, zlib.crc32(arch.encode()), attempt])
            tokens = [["A", "C", "D", "E", "G", "A", "C"]]
            vocab = build_vocab(tokens, min_count=1)
            vecs = rng.uniform(-0.5, 0.5, (len(vocab), dim))
            vecs[0] = 0.0
            emb = EmbeddingMatrix(vecs, np.zeros_like(vecs), vocab)
            config = models.ModelConfig(
                architecture=arch, embedding=emb, max_len=max_len,
                seed=int(rng.integers(2**31)),
            )
            model = models.build_model(config)
            ids = rng.integers(2, len(vocab), (2, max_len))
            mask = np.ones((2, max_len), dtype=bool)
            if _relu_kink_margin(model, ids, mask) >= 60.0 * eps:
                break
        else:
            raise GradCheckError(f"no kink-safe instance found for {arch}")

        labels = np.array([1, 0])
        targets = model.targets_for(labels)
        results[f"arch:{arch}"] = _architecture_fd_error(
            model, ids, mask, targets, eps=eps
        )
    return results
