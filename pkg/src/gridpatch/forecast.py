"""Long-horizon renewable output forecaster.

Encoder/decoder architecture over daily series: the encoder applies
sparse-query self-attention (only the most informative queries get full
attention rows, the rest fall back to the value mean) and compresses the
time axis with conv + max-pool after every block (56 -> 28 -> 14 for two
blocks).  The decoder sees the last 28 days of history plus a zero
placeholder block for the horizon and emits the whole forecast in a single
forward pass.

All model state lives in a flat name -> array dict so the autodiff
checkpoint format applies directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .data import WindowSample, time_codes


class ForecastError(ValueError):
    pass


@dataclass
class PredictionSnapshot:
    """One forecast sequence stamped with the day it was issued on."""

    issue_time: int
    values: np.ndarray  # (horizon, units), MW, nonnegative

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0) or not np.all(np.isfinite(self.values)):
            raise ForecastError("snapshot values must be finite and nonnegative")


@dataclass
class ForecastConfig:
    d_model: int = 32
    heads: int = 2
    enc_blocks: int = 2
    dec_blocks: int = 1
    ffn_mult: int = 2
    input_len: int = 56
    decoder_len: int = 28
    horizon: int = 15
    conv_kernel: int = 3
    u_factor: float = 5.0            # top-query budget: ceil(u_factor * ln L)
    key_sample_factor: float = 5.0   # key subsample for the sparsity scores

    def __post_init__(self):
        if self.d_model % self.heads:
            raise ForecastError(f"d_model {self.d_model} not divisible by heads {self.heads}")
        if self.decoder_len > self.input_len:
            raise ForecastError("decoder_len must be a suffix of input_len")


# ---------------------------------------------------------------------------
# sparse-query attention
# ---------------------------------------------------------------------------

def query_sparsity_scores(q: np.ndarray, k: np.ndarray, sample_size: int | None = None, seed: int = 0) -> np.ndarray:
    """Per-query dominance score: max - mean of scaled scores over a seeded
    key subsample.  ``sample_size=None`` uses every key (exact scores)."""
    q = np.asarray(q, dtype=np.float64)
    k = np.asarray(k, dtype=np.float64)
    if q.size == 0 or k.size == 0:
        raise ForecastError("empty query or key matrix")
    n_keys = k.shape[0]
    if sample_size is None or sample_size >= n_keys:
        ks = k
    else:
        if sample_size < 1:
            raise ForecastError(f"sample_size must be >= 1, got {sample_size}")
        idx = np.random.default_rng(seed).choice(n_keys, size=sample_size, replace=False)
        ks = k[idx]
    s = (q @ ks.T) / math.sqrt(q.shape[1])
    return s.max(axis=1) - s.mean(axis=1)


def top_u_indices(scores: np.ndarray, u: int) -> np.ndarray:
    """Indices of the u largest scores; ties break toward lower index."""
    order = np.argsort(-scores, kind="stable")
    return np.sort(order[:u])


def _attention_graph(g: ad.Graph, q: ad.Tensor, k: ad.Tensor, v: ad.Tensor,
                     u: int, sample_size: int | None, seed: int) -> ad.Tensor:
    lq = q.shape[0]
    if u < 1:
        raise ForecastError(f"u must be >= 1, got {u}")
    if u > lq:
        raise ForecastError(f"u={u} exceeds query count {lq}")
    d = q.shape[1]
    if u == lq:
        # every query is dominant: plain full attention
        return g.matmul(g.softmax(g.scale(g.matmul(q, g.transpose(k)), 1.0 / math.sqrt(d))), v)
    scores = query_sparsity_scores(q.value, k.value, sample_size, seed)
    idx = top_u_indices(scores, u)
    qbar = g.gather_rows(q, idx)
    att = g.matmul(g.softmax(g.scale(g.matmul(qbar, g.transpose(k)), 1.0 / math.sqrt(d))), v)
    lazy = g.broadcast_rows(g.mean_rows(v), lq)
    return g.scatter_rows(lazy, att, idx)


def sparse_query_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, u: int,
                           sample_size: int | None = None, seed: int = 0) -> np.ndarray:
    """Array-level attention: top-u query rows get full softmax attention,
    the remaining rows are filled with the mean of V."""
    g = ad.Graph()
    out = _attention_graph(g, g.input(q), g.input(k), g.input(v), u, sample_size, seed)
    return out.value


def full_attention(q: np.ndarray, k: np.ndarray, v: np.ndarray) -> np.ndarray:
    return sparse_query_attention(q, k, v, u=q.shape[0])


# ---------------------------------------------------------------------------
# metric
# ---------------------------------------------------------------------------

def rmse(pred: np.ndarray, real: np.ndarray) -> float:
    """Root mean square error over all horizon x unit entries."""
    pred = np.asarray(pred, dtype=np.float64)
    real = np.asarray(real, dtype=np.float64)
    if pred.shape != real.shape:
        raise ForecastError(f"rmse shape mismatch: {pred.shape} vs {real.shape}")
    return float(np.sqrt(np.mean((pred - real) ** 2)))


# ---------------------------------------------------------------------------
# the model
# ---------------------------------------------------------------------------

def _sinusoid_table(length: int, d_model: int) -> np.ndarray:
    pos = np.arange(length)[:, None]
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    table = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return table * 0.1


class ForecastModel:
    """Parameter container plus graph builders for the forecaster."""

    def __init__(self, num_units: int, config: ForecastConfig | None = None, seed: int = 0):
        self.num_units = int(num_units)
        self.cfg = config or ForecastConfig()
        self.seed = int(seed)
        self.unit_mean = np.zeros(self.num_units)
        self.unit_std = np.ones(self.num_units)
        self.trained = False
        self.params = self._init_params(np.random.default_rng(seed))

    # -- parameters --------------------------------------------------------

    def _init_params(self, rng) -> dict[str, np.ndarray]:
        c = self.cfg
        d, dh, f = c.d_model, c.d_model // c.heads, c.ffn_mult * c.d_model

        def glorot(fan_in, fan_out, *shape):
            lim = math.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=shape or (fan_in, fan_out))

        p = {
            "enc.embed.val": glorot(self.num_units, d),
            "enc.embed.time": glorot(4, d),
            "dec.embed.val": glorot(self.num_units, d),
            "dec.embed.time": glorot(4, d),
            "out.w": glorot(d, self.num_units),
            "out.b": np.zeros(self.num_units),
        }

        def attn(prefix):
            for h in range(c.heads):
                p[f"{prefix}.h{h}.wq"] = glorot(d, dh)
                p[f"{prefix}.h{h}.wk"] = glorot(d, dh)
                p[f"{prefix}.h{h}.wv"] = glorot(d, dh)
            p[f"{prefix}.wo"] = glorot(d, d)

        def ffn(prefix):
            p[f"{prefix}.w1"] = glorot(d, f)
            p[f"{prefix}.b1"] = np.zeros(f)
            p[f"{prefix}.w2"] = glorot(f, d)
            p[f"{prefix}.b2"] = np.zeros(d)

        for b in range(c.enc_blocks):
            attn(f"enc{b}.attn")
            ffn(f"enc{b}.ffn")
            p[f"enc{b}.conv.w"] = glorot(d * c.conv_kernel, d, c.conv_kernel, d, d)
            p[f"enc{b}.conv.b"] = np.zeros(d)
        for b in range(c.dec_blocks):
            attn(f"dec{b}.self")
            attn(f"dec{b}.cross")
            ffn(f"dec{b}.ffn")
        return p

    def set_scaler(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        self.unit_mean = values.mean(axis=0)
        self.unit_std = np.maximum(values.std(axis=0), 1e-6)

    def standardize(self, x: np.ndarray) -> np.ndarray:
        return (x - self.unit_mean) / self.unit_std

    # -- graph builders ------------------------------------------------------

    def _u_at(self, length: int) -> int:
        return max(1, min(length, math.ceil(self.cfg.u_factor * math.log(max(length, 2)))))

    def _sample_at(self, n_keys: int) -> int:
        return max(1, min(n_keys, math.ceil(self.cfg.key_sample_factor * math.log(max(n_keys, 2)))))

    def _attn_sublayer(self, g, x, prefix, seed, kv=None, sparse=True):
        c = self.cfg
        src = kv if kv is not None else x
        lq = x.shape[0]
        u = self._u_at(lq) if sparse else lq
        heads_out = None
        for h in range(c.heads):
            q = g.matmul(x, g.param(f"{prefix}.h{h}.wq", self.params[f"{prefix}.h{h}.wq"]))
            k = g.matmul(src, g.param(f"{prefix}.h{h}.wk", self.params[f"{prefix}.h{h}.wk"]))
            v = g.matmul(src, g.param(f"{prefix}.h{h}.wv", self.params[f"{prefix}.h{h}.wv"]))
            sample = self._sample_at(src.shape[0]) if sparse else None
            out_h = _attention_graph(g, q, k, v, u, sample, seed + h)
            heads_out = out_h if heads_out is None else g.concat_cols(heads_out, out_h)
        att = g.matmul(heads_out, g.param(f"{prefix}.wo", self.params[f"{prefix}.wo"]))
        return g.layer_norm(g.add(x, att))

    def _ffn_sublayer(self, g, x, prefix):
        h = g.relu(g.add(g.matmul(x, g.param(f"{prefix}.w1", self.params[f"{prefix}.w1"])),
                         g.param(f"{prefix}.b1", self.params[f"{prefix}.b1"])))
        y = g.add(g.matmul(h, g.param(f"{prefix}.w2", self.params[f"{prefix}.w2"])),
                  g.param(f"{prefix}.b2", self.params[f"{prefix}.b2"]))
        return g.layer_norm(g.add(x, y))

    def _embed(self, g, x_std: np.ndarray, tc: np.ndarray, side: str):
        val = g.matmul(g.input(x_std), g.param(f"{side}.embed.val", self.params[f"{side}.embed.val"]))
        tim = g.matmul(g.input(tc), g.param(f"{side}.embed.time", self.params[f"{side}.embed.time"]))
        pos = g.input(_sinusoid_table(x_std.shape[0], self.cfg.d_model))
        return g.add(g.add(val, tim), pos)

    def _encoder_graph(self, g, enc_input: np.ndarray, enc_time: np.ndarray):
        c = self.cfg
        if enc_input.shape != (c.input_len, self.num_units):
            raise ForecastError(
                f"encoder input must be {(c.input_len, self.num_units)}, got {enc_input.shape}")
        if enc_time.shape != (c.input_len, 4):
            raise ForecastError(f"encoder time codes must be {(c.input_len, 4)}, got {enc_time.shape}")
        x = self._embed(g, self.standardize(enc_input), enc_time, "enc")
        for b in range(c.enc_blocks):
            x = self._attn_sublayer(g, x, f"enc{b}.attn", seed=1000 + 10 * b, sparse=True)
            x = self._ffn_sublayer(g, x, f"enc{b}.ffn")
            conv = g.add(g.conv1d(x, g.param(f"enc{b}.conv.w", self.params[f"enc{b}.conv.w"])),
                         g.param(f"enc{b}.conv.b", self.params[f"enc{b}.conv.b"]))
            x = g.maxpool1d(g.layer_norm(g.add(x, g.gelu(conv))))
        return x

    def _decoder_graph(self, g, dec_padded: np.ndarray, dec_time: np.ndarray, enc_feat: ad.Tensor):
        c = self.cfg
        dec_len = c.decoder_len + c.horizon
        if dec_padded.shape != (dec_len, self.num_units):
            raise ForecastError(
                f"decoder input must be {(dec_len, self.num_units)}, got {dec_padded.shape}")
        if dec_time.shape != (dec_len, 4):
            raise ForecastError(f"decoder time codes must be {(dec_len, 4)}, got {dec_time.shape}")
        if np.any(dec_padded[c.decoder_len :] != 0.0):
            raise ForecastError("horizon placeholder rows of the decoder input must be exactly zero")
        # standardize only the known prefix so the placeholder stays at zero
        x_std = np.zeros_like(dec_padded)
        x_std[: c.decoder_len] = self.standardize(dec_padded[: c.decoder_len])
        x = self._embed(g, x_std, dec_time, "dec")
        for b in range(c.dec_blocks):
            x = self._attn_sublayer(g, x, f"dec{b}.self", seed=2000 + 10 * b, sparse=False)
            x = self._attn_sublayer(g, x, f"dec{b}.cross", seed=3000 + 10 * b, kv=enc_feat, sparse=False)
            x = self._ffn_sublayer(g, x, f"dec{b}.ffn")
        y = g.add(g.matmul(x, g.param("out.w", self.params["out.w"])),
                  g.param("out.b", self.params["out.b"]))
        pred_std = g.slice_rows(y, dec_len - c.horizon, dec_len)
        # de-standardize inside the graph so the loss is in MW
        pred = g.add(g.mul(pred_std, g.input(np.tile(self.unit_std, (c.horizon, 1)))),
                     g.input(np.tile(self.unit_mean, (c.horizon, 1))))
        return pred

    # -- public surfaces -----------------------------------------------------

    def encoder_forward(self, enc_input: np.ndarray, enc_time: np.ndarray) -> np.ndarray:
        """History (input_len x units) + time codes -> compressed features."""
        g = ad.Graph()
        return self._encoder_graph(g, np.asarray(enc_input, float), np.asarray(enc_time, float)).value

    def decoder_predict(self, dec_padded: np.ndarray, dec_time: np.ndarray,
                        encoder_features: np.ndarray, issue_time: int) -> PredictionSnapshot:
        """One-shot decode: emits every horizon row jointly, clipped at 0 MW."""
        g = ad.Graph()
        pred = self._decoder_graph(g, np.asarray(dec_padded, float), np.asarray(dec_time, float),
                                   g.input(encoder_features))
        return PredictionSnapshot(issue_time=int(issue_time), values=np.clip(pred.value, 0.0, None))

    def predict(self, series_values: np.ndarray, t0: int) -> PredictionSnapshot:
        """Forecast the horizon following day ``t0`` from the trailing history."""
        c = self.cfg
        series_values = np.asarray(series_values, dtype=np.float64)
        if t0 + 1 < c.input_len or t0 >= series_values.shape[0]:
            raise ForecastError(f"t0={t0} lacks {c.input_len} days of history")
        enc = series_values[t0 + 1 - c.input_len : t0 + 1]
        enc_tc = time_codes(np.arange(t0 + 1 - c.input_len, t0 + 1))
        feats = self.encoder_forward(enc, enc_tc)
        dec = np.zeros((c.decoder_len + c.horizon, self.num_units))
        dec[: c.decoder_len] = series_values[t0 + 1 - c.decoder_len : t0 + 1]
        dec_tc = time_codes(np.arange(t0 + 1 - c.decoder_len, t0 + 1 + c.horizon))
        return self.decoder_predict(dec, dec_tc, feats, issue_time=t0)

    def loss_graph(self, window: WindowSample):
        """Full forward + MW-space squared-error loss for one window."""
        c = self.cfg
        g = ad.Graph()
        enc_feat = self._encoder_graph(g, window.encoder_input, window.time_codes[: c.input_len])
        dec = np.zeros((c.decoder_len + c.horizon, self.num_units))
        dec[: c.decoder_len] = window.decoder_known
        dec_tc = window.time_codes[c.input_len - c.decoder_len :]
        pred = self._decoder_graph(g, dec, dec_tc, enc_feat)
        loss = g.mse_loss(pred, g.input(window.target))
        return g, loss

    # -- persistence ---------------------------------------------------------

    def save(self, path) -> None:
        meta = {
            "kind": "forecast",
            "num_units": self.num_units,
            "trained": self.trained,
            "seed": self.seed,
            "unit_mean": [float(v) for v in self.unit_mean],
            "unit_std": [float(v) for v in self.unit_std],
            "config": {k: getattr(self.cfg, k) for k in self.cfg.__dataclass_fields__},
        }
        ad.save_checkpoint(path, self.params, meta)

    @classmethod
    def load(cls, path) -> "ForecastModel":
        params, meta = ad.load_checkpoint(path)
        if meta.get("kind") != "forecast":
            raise ForecastError(f"{path} is not a forecast checkpoint")
        model = cls(meta["num_units"], ForecastConfig(**meta["config"]), seed=meta.get("seed", 0))
        model.params = params
        model.unit_mean = np.array(meta["unit_mean"])
        model.unit_std = np.array(meta["unit_std"])
        model.trained = bool(meta.get("trained", False))
        return model


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def train(model: ForecastModel, windows: list[WindowSample], epochs: int, lr: float,
          max_windows_per_epoch: int | None = None, grad_clip: float = 50.0) -> list[float]:
    """Per-window stochastic-gradient training over shuffled windows.

    Returns the per-epoch mean squared error (MW^2), measured on each
    window's forward pass before its update.  ``lr=0`` evaluates without
    updating.  Divergence (non-finite loss) aborts with ForecastError.
    """
    if not windows:
        raise ForecastError("need at least one training window")
    if not model.trained:
        model.set_scaler(np.concatenate([w.encoder_input for w in windows], axis=0))
    opt = ad.Adam(lr) if lr > 0 else None
    history = []
    for epoch in range(epochs):
        rng = np.random.default_rng((model.seed, epoch))
        order = rng.permutation(len(windows))
        if max_windows_per_epoch is not None:
            order = order[:max_windows_per_epoch]
        losses = []
        for i in order:
            try:
                g, loss = model.loss_graph(windows[i])
            except ad.GraphError as exc:
                raise ForecastError(f"training diverged at epoch {epoch}: {exc}") from None
            lv = float(loss.value)
            if not np.isfinite(lv):
                raise ForecastError(f"training diverged at epoch {epoch}: loss={lv}")
            losses.append(lv)
            if opt is not None:
                grads = g.backward(loss)
                ad.clip_grad_norm(grads, grad_clip)
                opt.step(model.params, grads)
        history.append(float(np.mean(losses)))
    model.trained = True
    return history


def persistence_forecast(series_values: np.ndarray, t0: int, horizon: int) -> np.ndarray:
    """Naive baseline: repeat the last observed day across the horizon."""
    return np.tile(series_values[t0], (horizon, 1))
