"""Neural layers with explicit forward/backward passes.

Every layer is a pair of functions ``layer(x, params) -> (y, cache)`` and
``layer_backward(dy, cache, params) -> dx``. Backward passes accumulate into
``Param.grad``; zeroing is left to the optimizer. Row-vector convention is used
throughout: a dense layer computes ``y = x @ W + b`` with ``W`` of shape
``[in, out]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np

from .error_handler import InvalidShape, ShapeMismatch, VocabOverflow
from .tensor import DTYPE, Rng

GRU_PARAMS = ("Wz", "Uz", "bz", "Wr", "Ur", "br", "Wh", "Uh", "bh")
LSTM_PARAMS = ("Wf", "Uf", "bf", "Wi", "Ui", "bi", "Wo", "Uo", "bo", "Wg", "Ug", "bg")


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray = field(init=False)

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=DTYPE)
        self.grad = np.zeros_like(self.value)


class LayerParams:
    """Named parameters in declaration order; checkpoint layout follows it."""

    def __init__(self):
        self._params: Dict[str, Param] = {}

    def add(self, name: str, value: np.ndarray) -> Param:
        if name in self._params:
            raise ValueError(f"parameter '{name}' declared twice")
        param = Param(value)
        self._params[name] = param
        return param

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[str]:
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self) -> None:
        for param in self._params.values():
            param.grad.fill(0.0)


# -- initialisation -------------------------------------------------------------------


def init_dense(n_in: int, n_out: int, rng: Rng, *, relu: bool = True, std=None) -> LayerParams:
    params = LayerParams()
    scale = std if std is not None else np.sqrt((2.0 if relu else 1.0) / n_in)
    params.add("W", rng.normal(0.0, scale, (n_in, n_out)))
    params.add("b", np.zeros(n_out))
    return params


def init_conv(c_in: int, c_out: int, rng: Rng) -> LayerParams:
    params = LayerParams()
    params.add("W", rng.normal(0.0, np.sqrt(2.0 / (c_in * 9)), (c_out, c_in, 3, 3)))
    params.add("b", np.zeros(c_out))
    return params


def init_embedding(vocab: int, dim: int, rng: Rng) -> LayerParams:
    params = LayerParams()
    params.add("E", rng.normal(0.0, np.sqrt(1.0 / dim), (vocab, dim)))
    return params


def _init_gated(names, n_in: int, hidden: int, rng: Rng) -> LayerParams:
    params = LayerParams()
    for name in names:
        if name.startswith("W"):
            params.add(name, rng.normal(0.0, np.sqrt(1.0 / n_in), (n_in, hidden)))
        elif name.startswith("U"):
            params.add(name, rng.normal(0.0, np.sqrt(1.0 / hidden), (hidden, hidden)))
        else:
            params.add(name, np.zeros(hidden))
    return params


def init_gru(n_in: int, hidden: int, rng: Rng) -> LayerParams:
    return _init_gated(GRU_PARAMS, n_in, hidden, rng)


def init_lstm(n_in: int, hidden: int, rng: Rng) -> LayerParams:
    return _init_gated(LSTM_PARAMS, n_in, hidden, rng)


# -- dense ----------------------------------------------------------------------------


def dense(x: np.ndarray, params: LayerParams):
    W, b = params["W"].value, params["b"].value
    if x.ndim != 2 or x.shape[1] != W.shape[0]:
        raise ShapeMismatch(detail=f"dense input {x.shape} vs weight {W.shape}")
    return x @ W + b, x


def dense_backward(dy: np.ndarray, cache, params: LayerParams) -> np.ndarray:
    x = cache
    params["W"].grad += x.T @ dy
    params["b"].grad += dy.sum(axis=0)
    return dy @ params["W"].value.T


# -- conv2d (3x3, stride 1, same padding, cross-correlation) --------------------------

_TAPS = [(i, j) for i in range(3) for j in range(3)]


def _im2col(x: np.ndarray) -> np.ndarray:
    n, c, h, w = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.stack([xp[:, :, i : i + h, j : j + w] for i, j in _TAPS], axis=2)
    # [n, c, 9, h, w] -> [n*h*w, c*9]
    return cols.transpose(0, 3, 4, 1, 2).reshape(n * h * w, c * 9)


def _col2im(dcols: np.ndarray, shape) -> np.ndarray:
    n, c, h, w = shape
    d = dcols.reshape(n, h, w, c, 9).transpose(0, 3, 4, 1, 2)
    dxp = np.zeros((n, c, h + 2, w + 2), dtype=DTYPE)
    for k, (i, j) in enumerate(_TAPS):
        dxp[:, :, i : i + h, j : j + w] += d[:, :, k]
    return dxp[:, :, 1:-1, 1:-1]


def conv2d(x: np.ndarray, params: LayerParams):
    W, b = params["W"].value, params["b"].value
    if x.ndim != 4:
        raise ShapeMismatch(detail=f"conv2d expects [batch, c, h, w], got {x.shape}")
    if x.shape[1] != W.shape[1]:
        raise ShapeMismatch(detail=f"conv2d input channels {x.shape[1]} vs kernel {W.shape}")
    n, _, h, w = x.shape
    c_out = W.shape[0]
    cols = _im2col(x)
    wmat = W.reshape(c_out, -1).T
    y = (cols @ wmat + b).reshape(n, h, w, c_out).transpose(0, 3, 1, 2)
    return np.ascontiguousarray(y), (cols, x.shape)


def conv2d_backward(dy: np.ndarray, cache, params: LayerParams) -> np.ndarray:
    cols, x_shape = cache
    W = params["W"].value
    c_out = W.shape[0]
    dflat = dy.transpose(0, 2, 3, 1).reshape(-1, c_out)
    params["W"].grad += (cols.T @ dflat).T.reshape(W.shape)
    params["b"].grad += dflat.sum(axis=0)
    dcols = dflat @ W.reshape(c_out, -1)
    return _col2im(dcols, x_shape)


# -- maxpool 2x2 ----------------------------------------------------------------------


def maxpool2(x: np.ndarray):
    if x.ndim != 4:
        raise InvalidShape(shape=list(x.shape), detail="maxpool2 expects [batch, c, h, w]")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise InvalidShape(shape=list(x.shape), detail="maxpool2 needs even spatial dims")
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, h // 2, w // 2, 4)
    # argmax picks the lowest index among ties
    arg = windows.argmax(axis=-1)
    y = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]
    return y, (arg, x.shape)


def maxpool2_backward(dy: np.ndarray, cache) -> np.ndarray:
    arg, (n, c, h, w) = cache
    routed = np.zeros((n, c, h // 2, w // 2, 4), dtype=DTYPE)
    np.put_along_axis(routed, arg[..., None], dy[..., None], axis=-1)
    routed = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return routed.reshape(n, c, h, w)


# -- relu -----------------------------------------------------------------------------


def relu(x: np.ndarray):
    mask = x > 0
    return np.where(mask, x, 0.0), mask


def relu_backward(dy: np.ndarray, cache) -> np.ndarray:
    # subgradient at exactly 0 is 0
    return np.where(cache, dy, 0.0)


# -- embedding ------------------------------------------------------------------------


def embedding(token_ids: np.ndarray, params: LayerParams):
    E = params["E"].value
    ids = np.asarray(token_ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= E.shape[0]):
        bad = int(ids.max()) if ids.max() >= E.shape[0] else int(ids.min())
        raise VocabOverflow(token_id=bad, size=E.shape[0])
    return E[ids], ids


def embedding_backward(dy: np.ndarray, cache, params: LayerParams) -> None:
    np.add.at(params["E"].grad, cache, dy)


# -- recurrent cells ------------------------------------------------------------------


def sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _check_cell(x, h, params, prefix):
    W = params[f"W{prefix}"].value
    U = params[f"U{prefix}"].value
    if x.ndim != 2 or h.ndim != 2 or x.shape[0] != h.shape[0]:
        raise ShapeMismatch(detail=f"cell inputs {x.shape} and state {h.shape}")
    if x.shape[1] != W.shape[0] or h.shape[1] != U.shape[0]:
        raise ShapeMismatch(
            detail=f"cell inputs {x.shape}/{h.shape} vs weights {W.shape}/{U.shape}"
        )


def _gate(x, h, params, name):
    return x @ params["W" + name].value + h @ params["U" + name].value + params["b" + name].value


def _gate_backward(da, x, h, params, name):
    params["W" + name].grad += x.T @ da
    params["U" + name].grad += h.T @ da
    params["b" + name].grad += da.sum(axis=0)
    return da @ params["W" + name].value.T, da @ params["U" + name].value.T


def gru_cell(x: np.ndarray, h: np.ndarray, params: LayerParams):
    _check_cell(x, h, params, "z")
    z = sigmoid(_gate(x, h, params, "z"))
    r = sigmoid(_gate(x, h, params, "r"))
    rh = r * h
    h_tilde = np.tanh(_gate(x, rh, params, "h"))
    h_new = (1.0 - z) * h + z * h_tilde
    return h_new, (x, h, z, r, rh, h_tilde)


def gru_cell_backward(dh_new: np.ndarray, cache, params: LayerParams):
    """Returns ``(dx, dh)``."""
    x, h, z, r, rh, h_tilde = cache
    dh = dh_new * (1.0 - z)
    da_h = dh_new * z * (1.0 - h_tilde**2)
    dx, drh = _gate_backward(da_h, x, rh, params, "h")
    dh += drh * r
    da_r = drh * h * r * (1.0 - r)
    da_z = dh_new * (h_tilde - h) * z * (1.0 - z)
    dx_r, dh_r = _gate_backward(da_r, x, h, params, "r")
    dx_z, dh_z = _gate_backward(da_z, x, h, params, "z")
    return dx + dx_r + dx_z, dh + dh_r + dh_z


def lstm_cell(x: np.ndarray, state: Tuple[np.ndarray, np.ndarray], params: LayerParams):
    h, c = state
    _check_cell(x, h, params, "f")
    if c.shape != h.shape:
        raise ShapeMismatch(detail=f"lstm cell state {c.shape} vs hidden {h.shape}")
    f = sigmoid(_gate(x, h, params, "f"))
    i = sigmoid(_gate(x, h, params, "i"))
    o = sigmoid(_gate(x, h, params, "o"))
    g = np.tanh(_gate(x, h, params, "g"))
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return (h_new, c_new), (x, h, c, f, i, o, g, tc)


def lstm_cell_backward(dh_new: np.ndarray, dc_new: np.ndarray, cache, params: LayerParams):
    """Returns ``(dx, dh, dc)``."""
    x, h, c, f, i, o, g, tc = cache
    dc_total = dc_new + dh_new * o * (1.0 - tc**2)
    pre = {
        "f": dc_total * c * f * (1.0 - f),
        "i": dc_total * g * i * (1.0 - i),
        "o": dh_new * tc * o * (1.0 - o),
        "g": dc_total * i * (1.0 - g**2),
    }
    dx = np.zeros_like(x)
    dh = np.zeros_like(h)
    for name, da in pre.items():
        gx, gh = _gate_backward(da, x, h, params, name)
        dx += gx
        dh += gh
    return dx, dh, dc_total * f


# -- loss -----------------------------------------------------------------------------


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_xent(logits: np.ndarray, targets: np.ndarray, mask: Optional[np.ndarray] = None):
    """Mean NLL over rows (or over unmasked rows) and its gradient."""
    batch, k = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (batch,):
        raise ShapeMismatch(detail=f"targets {targets.shape} for logits {logits.shape}")
    if batch and (targets.min() < 0 or targets.max() >= k):
        bad = int(targets.max()) if targets.max() >= k else int(targets.min())
        raise VocabOverflow(token_id=bad, size=k)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(batch)
    nll = -log_p[rows, targets]
    if mask is None:
        weights = np.full(batch, 1.0 / max(batch, 1))
    else:
        weights = np.asarray(mask, dtype=DTYPE) / max(float(np.sum(mask)), 1.0)
    loss = float(np.sum(weights * nll))
    dlogits = np.exp(log_p)
    dlogits[rows, targets] -= 1.0
    return loss, dlogits * weights[:, None]


# -- gradient checking ----------------------------------------------------------------


@dataclass
class GradCheckReport:
    max_rel_err: float
    passed: bool
    probes: int
    worst: str = ""
    failures: List[Tuple[str, Tuple[int, ...], float, float]] = field(default_factory=list)


Objective = Callable[[], Tuple[float, Dict[str, np.ndarray]]]


def grad_check(
    objective: Objective,
    arrays: Dict[str, np.ndarray],
    eps: float = 1e-3,
    tol: float = 1e-4,
    probes: Optional[int] = None,
    rng: Optional[Rng] = None,
) -> GradCheckReport:
    """Compare analytic gradients against central differences.

    ``objective()`` evaluates the scalar loss at the current contents of
    ``arrays`` (perturbed in place) and returns the analytic gradient for each
    key. ``probes`` limits the check to that many randomly chosen coordinates.
    """
    _, grads = objective()
    analytic = {name: np.array(grads[name], dtype=DTYPE, copy=True) for name in arrays}
    coords = [(name, idx) for name, arr in arrays.items() for idx in np.ndindex(arr.shape)]
    if probes is not None and probes < len(coords):
        picker = rng if rng is not None else Rng(0)
        chosen = np.sort(picker.permutation(len(coords))[:probes])
        coords = [coords[k] for k in chosen]

    worst_err, worst_name = 0.0, ""
    failures = []
    for name, idx in coords:
        arr = arrays[name]
        original = arr[idx]
        arr[idx] = original + eps
        f_plus, _ = objective()
        arr[idx] = original - eps
        f_minus, _ = objective()
        arr[idx] = original
        numeric = (f_plus - f_minus) / (2.0 * eps)
        exact = float(analytic[name][idx])
        err = abs(exact - numeric) / max(abs(exact), abs(numeric), 1e-8)
        if err > worst_err:
            worst_err, worst_name = err, f"{name}{list(idx)}"
        if err > tol:
            failures.append((name, idx, exact, numeric))
    return GradCheckReport(
        max_rel_err=worst_err,
        passed=not failures,
        probes=len(coords),
        worst=worst_name,
        failures=failures,
    )


def _projected(rng: Rng, shape) -> np.ndarray:
    return rng.normal(0.0, 1.0, shape)


def _dense_probe(rng: Rng):
    x = rng.normal(0.0, 1.0, (3, 4))
    params = init_dense(4, 5, rng.split(1))
    params["b"].value[:] = rng.normal(0.0, 0.5, (5,))
    proj = _projected(rng.split(2), (3, 5))

    def objective():
        params.zero_grad()
        y, cache = dense(x, params)
        dx = dense_backward(proj, cache, params)
        return float(np.sum(y * proj)), {"x": dx, "W": params["W"].grad, "b": params["b"].grad}

    return objective, {"x": x, "W": params["W"].value, "b": params["b"].value}


def _conv_probe(rng: Rng):
    x = rng.normal(0.0, 1.0, (2, 2, 4, 4))
    params = init_conv(2, 3, rng.split(1))
    params["b"].value[:] = rng.normal(0.0, 0.5, (3,))
    proj = _projected(rng.split(2), (2, 3, 4, 4))

    def objective():
        params.zero_grad()
        y, cache = conv2d(x, params)
        dx = conv2d_backward(proj, cache, params)
        return float(np.sum(y * proj)), {"x": dx, "W": params["W"].grad, "b": params["b"].grad}

    return objective, {"x": x, "W": params["W"].value, "b": params["b"].value}


def _maxpool_probe(rng: Rng):
    # distinct values 0.01 apart keep every window maximum unique under perturbation
    x = (rng.permutation(2 * 2 * 4 * 4).reshape(2, 2, 4, 4) * 0.01).astype(DTYPE)
    proj = _projected(rng.split(2), (2, 2, 2, 2))

    def objective():
        y, cache = maxpool2(x)
        return float(np.sum(y * proj)), {"x": maxpool2_backward(proj, cache)}

    return objective, {"x": x}


def _relu_probe(rng: Rng):
    magnitude = rng.uniform(0.1, 1.0, (3, 6))
    sign = np.where(rng.uniform(0.0, 1.0, (3, 6)) < 0.5, -1.0, 1.0)
    x = (magnitude * sign).astype(DTYPE)
    proj = _projected(rng.split(2), (3, 6))

    def objective():
        y, cache = relu(x)
        return float(np.sum(y * proj)), {"x": relu_backward(proj, cache)}

    return objective, {"x": x}


def _embedding_probe(rng: Rng):
    params = init_embedding(6, 3, rng.split(1))
    ids = np.array([1, 4, 1, 0])
    proj = _projected(rng.split(2), (4, 3))

    def objective():
        params.zero_grad()
        y, cache = embedding(ids, params)
        embedding_backward(proj, cache, params)
        return float(np.sum(y * proj)), {"E": params["E"].grad}

    return objective, {"E": params["E"].value}


def _randomise_biases(params: LayerParams, rng: Rng) -> None:
    for k, (name, param) in enumerate(params.items()):
        if name.startswith("b"):
            param.value[:] = rng.split(k).normal(0.0, 0.5, param.value.shape)


def _gru_probe(rng: Rng):
    x = rng.normal(0.0, 1.0, (2, 3))
    h = rng.uniform(-0.9, 0.9, (2, 4)).astype(DTYPE)
    params = init_gru(3, 4, rng.split(1))
    _randomise_biases(params, rng.split(3))
    proj = _projected(rng.split(2), (2, 4))

    def objective():
        params.zero_grad()
        h_new, cache = gru_cell(x, h, params)
        dx, dh = gru_cell_backward(proj, cache, params)
        grads = {name: params[name].grad for name in GRU_PARAMS}
        grads.update(x=dx, h=dh)
        return float(np.sum(h_new * proj)), grads

    arrays = {name: params[name].value for name in GRU_PARAMS}
    arrays.update(x=x, h=h)
    return objective, arrays


def _lstm_probe(rng: Rng):
    x = rng.normal(0.0, 1.0, (2, 3))
    h = rng.uniform(-0.9, 0.9, (2, 4)).astype(DTYPE)
    c = rng.normal(0.0, 1.0, (2, 4))
    params = init_lstm(3, 4, rng.split(1))
    _randomise_biases(params, rng.split(3))
    proj_h = _projected(rng.split(2), (2, 4))
    proj_c = _projected(rng.split(4), (2, 4))

    def objective():
        params.zero_grad()
        (h_new, c_new), cache = lstm_cell(x, (h, c), params)
        dx, dh, dc = lstm_cell_backward(proj_h, proj_c, cache, params)
        grads = {name: params[name].grad for name in LSTM_PARAMS}
        grads.update(x=dx, h=dh, c=dc)
        return float(np.sum(h_new * proj_h) + np.sum(c_new * proj_c)), grads

    arrays = {name: params[name].value for name in LSTM_PARAMS}
    arrays.update(x=x, h=h, c=c)
    return objective, arrays


def _xent_probe(rng: Rng):
    logits = rng.normal(0.0, 2.0, (3, 5))
    targets = np.array([0, 3, 3])

    def objective():
        loss, dlogits = softmax_xent(logits, targets)
        return loss, {"logits": dlogits}

    return objective, {"logits": logits}


LAYER_PROBES = {
    "dense": _dense_probe,
    "conv2d": _conv_probe,
    "maxpool2": _maxpool_probe,
    "relu": _relu_probe,
    "embedding": _embedding_probe,
    "gru_cell": _gru_probe,
    "lstm_cell": _lstm_probe,
    "softmax_xent": _xent_probe,
}


def run_layer_checks(
    seed: int = 0,
    probes: int = 100,
    names=None,
    eps: float = 1e-5,
    tol: float = 1e-4,
) -> Dict[str, GradCheckReport]:
    """Gradient-check each named layer at a seeded random point."""
    reports = {}
    order = list(LAYER_PROBES)
    for name in names or order:
        rng = Rng(seed, order.index(name))
        objective, arrays = LAYER_PROBES[name](rng)
        reports[name] = grad_check(
            objective, arrays, eps=eps, tol=tol, probes=probes, rng=rng.split(9)
        )
    return reports
