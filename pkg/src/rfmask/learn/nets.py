"""Small numpy networks with hand-written backprop.

Every model exposes the same minimal surface:

* ``params``: dict name -> float64 array (updated in place by optimisers)
* ``forward(x)``: model output (class probabilities or a reconstruction)
* ``loss_and_grad(x, y)``: scalar loss and a dict of gradients keyed like ``params``
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _he(rng, shape, fan_in):
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _xent(logits: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    p = softmax(logits)
    n = y.size
    loss = -np.mean(np.log(p[np.arange(n), y] + 1e-300))
    d = p
    d[np.arange(n), y] -= 1
    return float(loss), d / n


class LinearModel:
    """Least-squares linear regression; the trivially-exact gradient-check target."""

    kind = "linear"

    def __init__(self, n_in: int, n_out: int = 1, rng=None):
        rng = rng or np.random.default_rng(0)
        self.params = {"W": rng.standard_normal((n_in, n_out)) * 0.1, "b": np.zeros(n_out)}

    def forward(self, x):
        return x @ self.params["W"] + self.params["b"]

    def loss_and_grad(self, x, y):
        r = self.forward(x) - y.reshape(x.shape[0], -1)
        n = x.shape[0]
        return float(0.5 * np.sum(r**2) / n), {"W": x.T @ r / n, "b": r.sum(axis=0) / n}

    def config(self) -> dict:
        W = self.params["W"]
        return {"n_in": W.shape[0], "n_out": W.shape[1]}


class ImageClassifier:
    """[conv(k x k, F filters) -> ReLU -> max-pool] -> dense stack with ReLU -> dense(C) -> softmax.

    Input: (N, side, side) images in [0, 1]. With ``filters=0`` the conv stage is skipped and
    the flattened image feeds the dense stack directly.
    """

    kind = "image_classifier"

    def __init__(self, input_side: int, num_classes: int, filters: int = 8, kernel: int = 5,
                 pool: int = 2, hidden_widths=(128,), weight_decay: float = 1e-4, rng=None):
        rng = rng or np.random.default_rng(0)
        self.input_side, self.num_classes = input_side, num_classes
        self.filters, self.kernel, self.pool = filters, kernel, pool
        self.hidden_widths = tuple(int(h) for h in hidden_widths)
        self.weight_decay = weight_decay
        self.params = {}
        if filters:
            if kernel > input_side:
                raise ValueError("kernel larger than the image")
            self.pooled_side = (input_side - kernel + 1) // pool
            if self.pooled_side < 1:
                raise ValueError("conv stage leaves no spatial extent")
            self.params["conv_w"] = _he(rng, (filters, kernel, kernel), kernel * kernel)
            self.params["conv_b"] = np.zeros(filters)
            width = filters * self.pooled_side**2
        else:
            width = input_side * input_side
        for i, h in enumerate(self.hidden_widths):
            self.params[f"fc{i}_w"] = _he(rng, (width, h), width)
            self.params[f"fc{i}_b"] = np.zeros(h)
            width = h
        # small output layer: an untrained model predicts near-uniform probabilities
        self.params["out_w"] = rng.standard_normal((width, num_classes)) * 1e-3
        self.params["out_b"] = np.zeros(num_classes)

    def config(self) -> dict:
        return {"input_side": self.input_side, "num_classes": self.num_classes, "filters": self.filters,
                "kernel": self.kernel, "pool": self.pool, "hidden_widths": list(self.hidden_widths),
                "weight_decay": self.weight_decay}

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[1:] != (self.input_side, self.input_side):
            raise ValueError(f"expected images of side {self.input_side}, got shape {x.shape[1:]}")
        return x

    def _forward(self, x):
        p = self.params
        cache = {}
        if self.filters:
            k, s, ps = self.kernel, self.pool, self.pooled_side
            cols = sliding_window_view(x, (k, k), axis=(1, 2))  # (N, h, w, k, k)
            z = np.einsum("nhwij,fij->nfhw", cols, p["conv_w"], optimize=True) + p["conv_b"][None, :, None, None]
            a = np.maximum(z, 0)[:, :, : ps * s, : ps * s]
            blocks = a.reshape(a.shape[0], self.filters, ps, s, ps, s)
            h = blocks.max(axis=(3, 5)).reshape(x.shape[0], -1)
            cache.update(cols=cols, z_conv=z, blocks=blocks)
        else:
            h = x.reshape(x.shape[0], -1)
        acts = [h]
        pre = []
        for i in range(len(self.hidden_widths)):
            z = h @ p[f"fc{i}_w"] + p[f"fc{i}_b"]
            h = np.maximum(z, 0)
            pre.append(z)
            acts.append(h)
        logits = h @ p["out_w"] + p["out_b"]
        cache.update(acts=acts, pre=pre)
        return logits, cache

    def forward(self, x):
        return softmax(self._forward(self._check(x))[0])

    def features(self, x):
        """Penultimate-layer activations (input to the softmax layer)."""
        return self._forward(self._check(x))[1]["acts"][-1]

    def loss_and_grad(self, x, y):
        x = self._check(x)
        p = self.params
        logits, c = self._forward(x)
        loss, d = _xent(logits, np.asarray(y))
        acts, pre = c["acts"], c["pre"]
        g = {"out_w": acts[-1].T @ d, "out_b": d.sum(axis=0)}
        dh = d @ p["out_w"].T
        for i in reversed(range(len(self.hidden_widths))):
            dz = dh * (pre[i] > 0)
            g[f"fc{i}_w"] = acts[i].T @ dz
            g[f"fc{i}_b"] = dz.sum(axis=0)
            dh = dz @ p[f"fc{i}_w"].T
        if self.filters:
            blocks, z1 = c["blocks"], c["z_conv"]
            n, f, ps, s, _, _ = blocks.shape
            dpooled = dh.reshape(n, f, ps, ps)
            # route the pooled gradient to the first maximum of each block
            b = blocks.transpose(0, 1, 2, 4, 3, 5).reshape(n, f, ps, ps, s * s)
            mask = np.zeros_like(b)
            np.put_along_axis(mask, b.argmax(axis=-1)[..., None], 1.0, axis=-1)
            dblocks = (mask * dpooled[..., None]).reshape(n, f, ps, ps, s, s).transpose(0, 1, 2, 4, 3, 5)
            da = np.zeros_like(z1)
            da[:, :, : ps * s, : ps * s] = dblocks.reshape(n, f, ps * s, ps * s)
            dz1 = da * (z1 > 0)
            g["conv_w"] = np.einsum("nfhw,nhwij->fij", dz1, c["cols"], optimize=True)
            g["conv_b"] = dz1.sum(axis=(0, 2, 3))
        if self.weight_decay:
            for name in p:
                if name.endswith("_w"):
                    loss += 0.5 * self.weight_decay * float(np.sum(p[name] ** 2))
                    g[name] = g[name] + self.weight_decay * p[name]
        return loss, g


class RawIQClassifier:
    """1-D conv over the (I, Q) sequence -> ReLU -> global average pool -> dense(H) -> ReLU -> softmax.

    Input: (N, 2L) interleaved I/Q vectors ``[I0, Q0, I1, Q1, ...]``.
    """

    kind = "rawiq_classifier"

    def __init__(self, length: int, num_classes: int, filters: int = 16, kernel: int = 8,
                 hidden: int = 32, weight_decay: float = 1e-4, rng=None):
        rng = rng or np.random.default_rng(0)
        self.length, self.num_classes = length, num_classes
        self.filters, self.kernel, self.hidden = filters, kernel, hidden
        self.weight_decay = weight_decay
        self.params = {
            "conv_w": _he(rng, (filters, 2, kernel), 2 * kernel),
            "conv_b": np.zeros(filters),
            "fc1_w": _he(rng, (filters, hidden), filters),
            "fc1_b": np.zeros(hidden),
            "fc2_w": rng.standard_normal((hidden, num_classes)) * 1e-3,
            "fc2_b": np.zeros(num_classes),
        }

    def config(self) -> dict:
        return {"length": self.length, "num_classes": self.num_classes, "filters": self.filters,
                "kernel": self.kernel, "hidden": self.hidden, "weight_decay": self.weight_decay}

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            x = x[None]
        if x.shape[1] != 2 * self.length:
            raise ValueError(f"expected {2 * self.length} interleaved values, got {x.shape[1]}")
        return x.reshape(x.shape[0], self.length, 2).transpose(0, 2, 1)

    def _forward(self, seq):
        p = self.params
        cols = sliding_window_view(seq, self.kernel, axis=2)  # (N, 2, T, k)
        z1 = np.einsum("nctk,fck->nft", cols, p["conv_w"], optimize=True) + p["conv_b"][None, :, None]
        a1 = np.maximum(z1, 0)
        pooled = a1.mean(axis=2)
        z2 = pooled @ p["fc1_w"] + p["fc1_b"]
        a2 = np.maximum(z2, 0)
        logits = a2 @ p["fc2_w"] + p["fc2_b"]
        return logits, (cols, z1, pooled, z2, a2)

    def forward(self, x):
        return softmax(self._forward(self._check(x))[0])

    def features(self, x):
        return self._forward(self._check(x))[1][-1]

    def loss_and_grad(self, x, y):
        seq = self._check(x)
        p = self.params
        logits, (cols, z1, pooled, z2, a2) = self._forward(seq)
        loss, dlogits = _xent(logits, np.asarray(y))
        g = {"fc2_w": a2.T @ dlogits, "fc2_b": dlogits.sum(axis=0)}
        dz2 = (dlogits @ p["fc2_w"].T) * (z2 > 0)
        g["fc1_w"] = pooled.T @ dz2
        g["fc1_b"] = dz2.sum(axis=0)
        dpooled = dz2 @ p["fc1_w"].T
        t = z1.shape[2]
        dz1 = (dpooled[:, :, None] / t) * (z1 > 0)
        g["conv_w"] = np.einsum("nft,nctk->fck", dz1, cols, optimize=True)
        g["conv_b"] = dz1.sum(axis=(0, 2))
        if self.weight_decay:
            for name in ("conv_w", "fc1_w", "fc2_w"):
                loss += 0.5 * self.weight_decay * float(np.sum(p[name] ** 2))
                g[name] = g[name] + self.weight_decay * p[name]
        return loss, g


def _sigmoid(z):
    return 0.5 * (1 + np.tanh(0.5 * z))


class SparseAutoencoder:
    """One hidden layer: logistic-sigmoid encoder, linear decoder.

    Loss = mean squared reconstruction error (per element)
         + l2 / 2 * (||W_enc||^2 + ||W_dec||^2)
         + sparsity * sum_j KL(target || mean activation_j)
    """

    kind = "sparse_autoencoder"

    def __init__(self, input_dim: int, hidden: int = 64, sparsity: float = 0.5,
                 sparsity_target: float = 0.05, l2: float = 0.01, rng=None):
        rng = rng or np.random.default_rng(0)
        self.input_dim, self.hidden = input_dim, hidden
        self.sparsity, self.sparsity_target, self.l2 = sparsity, sparsity_target, l2
        r = np.sqrt(6.0 / (input_dim + hidden + 1))
        self.params = {
            "enc_w": rng.uniform(-r, r, (input_dim, hidden)),
            "enc_b": np.zeros(hidden),
            "dec_w": rng.uniform(-r, r, (hidden, input_dim)),
            "dec_b": np.zeros(input_dim),
        }

    def config(self) -> dict:
        return {"input_dim": self.input_dim, "hidden": self.hidden, "sparsity": self.sparsity,
                "sparsity_target": self.sparsity_target, "l2": self.l2}

    def _flat(self, x):
        x = np.asarray(x, dtype=np.float64)
        x = x.reshape(x.shape[0], -1) if x.ndim > 2 else (x[None] if x.ndim == 1 else x)
        if x.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} inputs, got {x.shape[1]}")
        return x

    def encode(self, x):
        x = self._flat(x)
        return _sigmoid(x @ self.params["enc_w"] + self.params["enc_b"])

    def forward(self, x):
        return self.encode(x) @ self.params["dec_w"] + self.params["dec_b"]

    def reconstruction_mse(self, x) -> np.ndarray:
        """Per-sample mean squared reconstruction error."""
        x = self._flat(x)
        return np.mean((self.forward(x) - x) ** 2, axis=1)

    def loss_and_grad(self, x, y=None):
        x = self._flat(x)
        p = self.params
        n, d = x.shape
        h = _sigmoid(x @ p["enc_w"] + p["enc_b"])
        out = h @ p["dec_w"] + p["dec_b"]
        r = out - x
        loss = float(np.sum(r**2) / (n * d))
        dout = 2 * r / (n * d)
        g = {"dec_w": h.T @ dout, "dec_b": dout.sum(axis=0)}
        dh = dout @ p["dec_w"].T
        rho = self.sparsity_target
        rho_hat = np.clip(h.mean(axis=0), 1e-12, 1 - 1e-12)
        if self.sparsity:
            kl = rho * np.log(rho / rho_hat) + (1 - rho) * np.log((1 - rho) / (1 - rho_hat))
            loss += self.sparsity * float(kl.sum())
            dh = dh + self.sparsity * (-rho / rho_hat + (1 - rho) / (1 - rho_hat))[None, :] / n
        dz = dh * h * (1 - h)
        g["enc_w"] = x.T @ dz
        g["enc_b"] = dz.sum(axis=0)
        if self.l2:
            for name in ("enc_w", "dec_w"):
                loss += 0.5 * self.l2 * float(np.sum(p[name] ** 2))
                g[name] = g[name] + self.l2 * p[name]
        return loss, g


MODEL_KINDS = {m.kind: m for m in (LinearModel, ImageClassifier, RawIQClassifier, SparseAutoencoder)}
