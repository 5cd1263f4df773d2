"""Numeric kernels with hand-written backward passes.

All kernels are batch-first: an input of shape (batch, ...) produces an
output of shape (batch, ...). Layers cache what their backward pass needs;
backward accumulates parameter gradients into ``.grads`` and returns the
gradient with respect to the layer input. Parameters initialize uniformly
in [-0.05, 0.05] from the caller's generator.

No gradient clipping anywhere; the LSTM has no peephole connections; the
rectifier's subgradient at zero is zero.
"""

from __future__ import annotations

import numpy as np

from .errors import NumericError

BCE_EPS = 1e-7
INIT_SCALE = 0.05


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh form is stable for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def bce_loss(p: np.ndarray, m: np.ndarray) -> float:
    """Binary cross entropy summed over all components, inputs clamped."""
    p = np.asarray(p, dtype=float)
    m = np.asarray(m, dtype=float)
    if p.shape != m.shape:
        raise NumericError(f"bce shape mismatch: {p.shape} vs {m.shape}")
    q = np.clip(p, BCE_EPS, 1.0 - BCE_EPS)
    return float(-np.sum(m * np.log(q) + (1.0 - m) * np.log(1.0 - q)))


def _uniform(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape)


class Dense:
    """Affine map y = x W^T + b with W of shape (out, in)."""

    def __init__(self, W: np.ndarray, b: np.ndarray):
        W = np.asarray(W, dtype=float)
        b = np.asarray(b, dtype=float)
        if W.ndim != 2 or b.shape != (W.shape[0],):
            raise NumericError(f"inconsistent dense shapes {W.shape}, {b.shape}")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise NumericError("non-finite dense parameters")
        self.W = W
        self.b = b
        self.grads = {"W": np.zeros_like(W), "b": np.zeros_like(b)}
        self._x = None

    @classmethod
    def initialize(cls, in_dim: int, out_dim: int, rng: np.random.Generator):
        return cls(_uniform(rng, (out_dim, in_dim)), _uniform(rng, (out_dim,)))

    @property
    def in_dim(self) -> int:
        return self.W.shape[1]

    @property
    def out_dim(self) -> int:
        return self.W.shape[0]

    def params(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def forward(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.in_dim:
            raise NumericError(f"dense expected input dim {self.in_dim}, "
                               f"got {x.shape[-1]}")
        self._x = x
        return x @ self.W.T + self.b

    def backward(self, dy: np.ndarray) -> np.ndarray:
        x = self._x
        if x.ndim == 1:
            self.grads["W"] += np.outer(dy, x)
            self.grads["b"] += dy
        else:
            self.grads["W"] += dy.T @ x
            self.grads["b"] += dy.sum(axis=0)
        return dy @ self.W


class ConvMaxPool:
    """Narrow 1-D convolution over a character matrix, max-pooled per filter.

    ``widths`` maps window width w to a filter count; each width w keeps
    filters of shape (count, w, d) applied to every length-w slice of the
    (length, d) input, followed by the rectifier and a max over positions.
    Outputs are concatenated in the declared width order, giving one value
    per filter.
    """

    def __init__(self, widths: list[tuple[int, int]], d_in: int,
                 rng: np.random.Generator):
        for w, count in widths:
            if not (1 <= w <= 10):
                raise NumericError(f"filter width {w} outside [1, 10]")
            if count < 1:
                raise NumericError("filter count must be positive")
        self.widths = list(widths)
        self.d_in = d_in
        self.filters = {w: _uniform(rng, (count, w, d_in))
                        for w, count in widths}
        self.biases = {w: _uniform(rng, (count,)) for w, count in widths}
        self.grads = {}
        self.zero_grad()
        self._cache = None

    @property
    def out_dim(self) -> int:
        return sum(count for _, count in self.widths)

    @property
    def max_width(self) -> int:
        return max(w for w, _ in self.widths)

    def params(self) -> dict[str, np.ndarray]:
        out = {}
        for w, _ in self.widths:
            out[f"H{w}"] = self.filters[w]
            out[f"b{w}"] = self.biases[w]
        return out

    def zero_grad(self) -> None:
        self.grads = {f"H{w}": np.zeros_like(self.filters[w])
                      for w, _ in self.widths}
        self.grads.update({f"b{w}": np.zeros_like(self.biases[w])
                           for w, _ in self.widths})

    def forward(self, C: np.ndarray) -> np.ndarray:
        C = np.asarray(C, dtype=float)
        squeeze = C.ndim == 2
        if squeeze:
            C = C[None]
        if C.shape[1] < self.max_width:
            raise NumericError(f"input length {C.shape[1]} shorter than "
                               f"widest filter {self.max_width}")
        if C.shape[2] != self.d_in:
            raise NumericError(f"expected row size {self.d_in}, got {C.shape[2]}")
        pooled = []
        cache = {"C_shape": C.shape, "per_width": {}}
        for w, _ in self.widths:
            windows = np.lib.stride_tricks.sliding_window_view(C, w, axis=1)
            # windows[b, p, d, k] = C[b, p + k, d]
            pre = np.einsum("bpdk,fkd->bpf", windows, self.filters[w])
            pre += self.biases[w]
            act = relu(pre)
            arg = act.argmax(axis=1)
            pooled.append(np.take_along_axis(act, arg[:, None, :], axis=1)[:, 0, :])
            cache["per_width"][w] = (windows, pre, arg)
        self._cache = cache
        out = np.concatenate(pooled, axis=1)
        return out[0] if squeeze else out

    def backward(self, dout: np.ndarray) -> np.ndarray:
        squeeze = dout.ndim == 1
        if squeeze:
            dout = dout[None]
        cache = self._cache
        B, l, d = cache["C_shape"]
        dC = np.zeros((B, l, d))
        col = 0
        rows = np.arange(B)[:, None]
        for w, count in self.widths:
            windows, pre, arg = cache["per_width"][w]
            g = dout[:, col:col + count]
            col += count
            picked = np.take_along_axis(pre, arg[:, None, :], axis=1)[:, 0, :]
            g = g * (picked > 0.0)
            sel = windows[rows, arg]                      # (B, F, d, w)
            self.grads[f"H{w}"] += np.einsum("bf,bfdk->fkd", g, sel)
            self.grads[f"b{w}"] += g.sum(axis=0)
            # scatter g * H back onto the argmax window rows
            contrib = g[:, :, None, None] * self.filters[w][None]  # (B,F,w,d)
            row_idx = arg[:, :, None] + np.arange(w)[None, None, :]
            np.add.at(dC, (np.arange(B)[:, None, None], row_idx), contrib)
        return dC[0] if squeeze else dC


class Lstm:
    """Plain LSTM over a padded sequence; gate order is i, f, o, g."""

    def __init__(self, Wx: np.ndarray, Wh: np.ndarray, b: np.ndarray):
        hidden = Wh.shape[1]
        if Wx.shape[0] != 4 * hidden or Wh.shape != (4 * hidden, hidden) \
                or b.shape != (4 * hidden,):
            raise NumericError("inconsistent LSTM gate shapes")
        self.Wx = np.asarray(Wx, dtype=float)
        self.Wh = np.asarray(Wh, dtype=float)
        self.b = np.asarray(b, dtype=float)
        self.hidden = hidden
        self.grads = {"Wx": np.zeros_like(self.Wx),
                      "Wh": np.zeros_like(self.Wh),
                      "b": np.zeros_like(self.b)}
        self._cache = None

    @classmethod
    def initialize(cls, in_dim: int, hidden: int, rng: np.random.Generator):
        return cls(_uniform(rng, (4 * hidden, in_dim)),
                   _uniform(rng, (4 * hidden, hidden)),
                   _uniform(rng, (4 * hidden,)))

    @property
    def in_dim(self) -> int:
        return self.Wx.shape[1]

    def params(self) -> dict[str, np.ndarray]:
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b}

    def zero_grad(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def forward(self, xs: np.ndarray, h0: np.ndarray | None = None,
                c0: np.ndarray | None = None):
        """Run the recurrence; returns (all hidden states, last state).

        ``xs`` has shape (batch, steps, in_dim); the state sequence has
        shape (batch, steps, hidden).
        """
        xs = np.asarray(xs, dtype=float)
        squeeze = xs.ndim == 2
        if squeeze:
            xs = xs[None]
        B, steps, d = xs.shape
        if steps == 0:
            raise NumericError("empty input sequence")
        if d != self.in_dim:
            raise NumericError(f"lstm expected input dim {self.in_dim}, got {d}")
        h = np.zeros((B, self.hidden)) if h0 is None else np.array(h0, dtype=float)
        c = np.zeros((B, self.hidden)) if c0 is None else np.array(c0, dtype=float)
        hs = np.zeros((B, steps, self.hidden))
        cache = []
        H = self.hidden
        for t in range(steps):
            z = xs[:, t] @ self.Wx.T + h @ self.Wh.T + self.b
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            o = sigmoid(z[:, 2 * H:3 * H])
            g = np.tanh(z[:, 3 * H:])
            c_new = f * c + i * g
            tanh_c = np.tanh(c_new)
            h_new = o * tanh_c
            cache.append((xs[:, t], h, c, i, f, o, g, tanh_c))
            h, c = h_new, c_new
            hs[:, t] = h
        self._cache = (cache, c)
        if squeeze:
            return hs[0], h[0]
        return hs, h

    def backward(self, dh_last: np.ndarray,
                 dhs: np.ndarray | None = None):
        """Backpropagate from the last state (and optionally every state).

        Returns (dxs, dh0): gradients for the inputs and the initial hidden
        state, the latter feeding the coupled bidirectional variant.
        """
        cache, _ = self._cache
        squeeze = dh_last.ndim == 1
        if squeeze:
            dh_last = dh_last[None]
            if dhs is not None:
                dhs = dhs[None]
        steps = len(cache)
        B = dh_last.shape[0]
        H = self.hidden
        dxs = np.zeros((B, steps, self.in_dim))
        dh = dh_last.copy()
        dc = np.zeros((B, H))
        for t in range(steps - 1, -1, -1):
            if dhs is not None and t < steps - 1:
                dh = dh + dhs[:, t]
            x_t, h_prev, c_prev, i, f, o, g, tanh_c = cache[t]
            do = dh * tanh_c
            dc = dc + dh * o * (1.0 - tanh_c ** 2)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dc = dc * f
            dz = np.concatenate([di * i * (1.0 - i),
                                 df * f * (1.0 - f),
                                 do * o * (1.0 - o),
                                 dg * (1.0 - g ** 2)], axis=1)
            self.grads["Wx"] += dz.T @ x_t
            self.grads["Wh"] += dz.T @ h_prev
            self.grads["b"] += dz.sum(axis=0)
            dxs[:, t] = dz @ self.Wx
            dh = dz @ self.Wh
        if squeeze:
            return dxs[0], dh[0]
        return dxs, dh


class AdaGrad:
    """Per-coordinate adaptive step: acc += g^2; p -= lr * g / (sqrt(acc) + eps)."""

    def __init__(self, learning_rate: float = 0.01, eps: float = 1e-8):
        self.learning_rate = learning_rate
        self.eps = eps
        self.acc: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise NumericError(f"gradient shape mismatch for {name!r}")
            if name not in self.acc:
                self.acc[name] = np.zeros_like(p)
            self.acc[name] += g * g
            p -= self.learning_rate * g / (np.sqrt(self.acc[name]) + self.eps)


def grad_check(loss_fn, params: dict[str, np.ndarray],
               analytic: dict[str, np.ndarray], step: float = 1e-4,
               rng: np.random.Generator | None = None,
               max_samples_per_param: int = 16) -> float:
    """Central finite differences against analytic gradients.

    ``loss_fn`` recomputes the scalar loss from the current contents of
    ``params`` (which are perturbed in place and restored). Returns the
    maximum relative error over the sampled coordinates.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for name in sorted(params):
        p = params[name]
        a = analytic[name]
        flat_p = p.reshape(-1)
        flat_a = a.reshape(-1)
        n = flat_p.size
        if n <= max_samples_per_param:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_samples_per_param, replace=False)
        for idx in coords:
            orig = flat_p[idx]
            flat_p[idx] = orig + step
            up = loss_fn()
            flat_p[idx] = orig - step
            down = loss_fn()
            flat_p[idx] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NumericError("non-finite loss during gradient check")
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(flat_a[idx]), abs(numeric), 1e-3)
            worst = max(worst, abs(flat_a[idx] - numeric) / denom)
    return worst
