"""Desk-scale trainer: a tiny embedding network under the fused loss.

A two-layer affine/tanh network followed by row normalization stands in
for a convolutional backbone; it is trained with SGD + momentum + weight
decay on synthetic matched-pair data, with the learning rate decayed
linearly to zero.  Everything is seeded and single-threaded, so a run is
reproducible bit for bit.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist

from .core import normalize_batch
from .errors import Divergence
from .grad import loss_gradient_arrays
from .loss import LossConfig
from .metrics import fpr95_from_distances

_ACT_CODES = {"tanh": 1, "identity": 0}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


@dataclass
class Layer:
    weight: np.ndarray          # (fan_in, fan_out)
    bias: np.ndarray            # (fan_out,)
    activation: str = "tanh"


@dataclass
class EmbeddingNet:
    """Affine stack with a final unit-normalization of each output row."""

    layers: list[Layer]

    @property
    def output_dim(self):
        return self.layers[-1].weight.shape[1]

    @property
    def param_count(self):
        return sum(l.weight.size + l.bias.size for l in self.layers)

    @classmethod
    def create(cls, dims, rng):
        """Xavier-initialized net; tanh on hidden layers, identity on the last."""
        layers = []
        for li, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            scale = np.sqrt(2.0 / (fan_in + fan_out))
            act = "identity" if li == len(dims) - 2 else "tanh"
            layers.append(Layer(weight=rng.normal(0.0, scale, (fan_in, fan_out)),
                                bias=np.zeros(fan_out), activation=act))
        return cls(layers=layers)

    def forward(self, x, want_cache=False):
        x = np.asarray(x, dtype=np.float64)
        cache = {"inputs": [], "pre": []}
        h = x
        for layer in self.layers:
            cache["inputs"].append(h)
            z = h @ layer.weight + layer.bias
            cache["pre"].append(z)
            h = np.tanh(z) if layer.activation == "tanh" else z
        norms = np.linalg.norm(h, axis=1, keepdims=True)
        out = h / norms
        cache["pre_norm"] = h
        cache["norms"] = norms
        cache["out"] = out
        return (out, cache) if want_cache else out

    def backward(self, cache, d_out):
        """Gradients of a scalar loss w.r.t. all parameters, given the
        gradient at the normalized output.  Returns a list of (dW, db)."""
        y = cache["out"]
        # y = h / ||h||  =>  dh = (dy - y <y, dy>) / ||h||
        dh = (d_out - y * np.sum(y * d_out, axis=1, keepdims=True)) / cache["norms"]
        grads = [None] * len(self.layers)
        for li in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[li]
            if layer.activation == "tanh":
                act = np.tanh(cache["pre"][li])
                dz = dh * (1.0 - act * act)
            else:
                dz = dh
            grads[li] = (cache["inputs"][li].T @ dz, dz.sum(axis=0))
            dh = dz @ layer.weight.T
        return grads


@dataclass(frozen=True)
class TrainConfig:
    loss_cfg: LossConfig
    epochs: int = 200
    batch_size: int = 128
    lr_start: float = 0.1       # decayed linearly to 0 over the run
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.lr_start < 0:
            raise ValueError("lr_start must be >= 0")
        if self.batch_size < 2 * self.loss_cfg.k:
            raise ValueError(
                f"batch_size {self.batch_size} must be >= 2*k = {2 * self.loss_cfg.k}")


@dataclass(frozen=True)
class SyntheticPairSet:
    raw_a: np.ndarray
    raw_p: np.ndarray
    n_clusters: int
    sigma: float
    seed: int

    @property
    def n_total(self):
        return self.raw_a.shape[0]


def generate_pairs(n_total, d_in, n_clusters, sigma, seed, cluster_spread=0.5):
    """Matched-pair data: per-pair latent points on the sphere plus
    independent per-view Gaussian noise.

    Cluster centers are drawn uniformly on the sphere; every pair gets
    its own latent point scattered around one center (so non-matching
    pairs stay separable), and the two views add independent noise sigma.
    """
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if n_clusters < 2:
        raise ValueError("need at least 2 clusters")
    rng = np.random.default_rng(seed)
    centers = normalize_batch(rng.normal(size=(n_clusters, d_in)))
    assign = rng.integers(0, n_clusters, size=n_total)
    latent = normalize_batch(
        centers[assign] + cluster_spread * rng.normal(size=(n_total, d_in)))
    raw_a = latent + sigma * rng.normal(size=(n_total, d_in))
    raw_p = latent + sigma * rng.normal(size=(n_total, d_in))
    return SyntheticPairSet(raw_a=raw_a, raw_p=raw_p, n_clusters=n_clusters,
                            sigma=float(sigma), seed=int(seed))


def _epoch_metrics(net, data, loss_cfg):
    emb_a = net.forward(data.raw_a)
    emb_p = net.forward(data.raw_p)
    from .topology import topology_forward
    topo = topology_forward(emb_a, emb_p, loss_cfg.k, kind=loss_cfg.weight_kind,
                            t=loss_cfg.heat_t, ridge_eps=loss_cfg.ridge_eps)
    d_e = np.linalg.norm(emb_a - emb_p, axis=1)
    cross = cdist(emb_a, emb_p)
    match = np.diag(cross).copy()
    mask = ~np.eye(len(cross), dtype=bool)
    non_match = cross[mask]
    return {
        "mean_dE": float(d_e.mean()),
        "mean_dT": float(topo.d_t.mean()),
        "mean_m_over_k": float(topo.m.mean() / loss_cfg.k),
        "fpr95": fpr95_from_distances(match, non_match),
    }


def train(net, data, cfg):
    """SGD-momentum training loop; returns (net, per-epoch log)."""
    rng = np.random.default_rng(cfg.seed)
    velocity = [(np.zeros_like(l.weight), np.zeros_like(l.bias))
                for l in net.layers]
    n_total = data.n_total
    bs = min(cfg.batch_size, n_total)
    log = []
    for epoch in range(cfg.epochs):
        lr = cfg.lr_start * (1.0 - epoch / cfg.epochs)
        perm = rng.permutation(n_total)
        epoch_losses = []
        for start in range(0, n_total - bs + 1, bs):
            sel = perm[start:start + bs]
            out_a, cache_a = net.forward(data.raw_a[sel], want_cache=True)
            out_p, cache_p = net.forward(data.raw_p[sel], want_cache=True)
            report, grad = loss_gradient_arrays(out_a, out_p, cfg.loss_cfg,
                                                strict=False)
            if not np.isfinite(report.loss):
                raise Divergence(f"loss became non-finite at epoch {epoch}")
            epoch_losses.append(report.loss)
            grads_a = net.backward(cache_a, grad.d_a)
            grads_p = net.backward(cache_p, grad.d_p)
            for li, layer in enumerate(net.layers):
                dw = grads_a[li][0] + grads_p[li][0] + cfg.weight_decay * layer.weight
                db = grads_a[li][1] + grads_p[li][1] + cfg.weight_decay * layer.bias
                vw, vb = velocity[li]
                vw *= cfg.momentum
                vw -= lr * dw
                vb *= cfg.momentum
                vb -= lr * db
                layer.weight += vw
                layer.bias += vb
        entry = {"epoch": epoch, "loss": float(np.mean(epoch_losses))}
        entry.update(_epoch_metrics(net, data, cfg.loss_cfg))
        log.append(entry)
    return net, log


def run_experiment(seed, loss_cfg, *, epochs=200, n_total=512, d_in=24,
                   hidden=48, d_out=32, n_clusters=32, sigma=0.25,
                   cluster_spread=1.0, batch_size=128, lr_start=0.1):
    """One seeded training run on the default synthetic benchmark; returns
    the final log entry (loss plus evaluation metrics).

    The defaults pick a hard-noise regime (minibatch mining over 512
    pairs, view noise 0.25) where plain-triplet training visibly
    scrambles neighborhoods and the topology term pays off.
    """
    data = generate_pairs(n_total, d_in, n_clusters, sigma, seed,
                          cluster_spread=cluster_spread)
    rng = np.random.default_rng(seed + 1)
    net = EmbeddingNet.create((d_in, hidden, d_out), rng)
    cfg = TrainConfig(loss_cfg=loss_cfg, epochs=epochs, batch_size=batch_size,
                      lr_start=lr_start, seed=seed)
    _, log = train(net, data, cfg)
    return log[-1]


# ---------------------------------------------------------------------------
# Model file format: magic "TCM1", u32 layer count, then per layer
# u32 fan_in, u32 fan_out, u8 activation code, then all parameters as
# float32 (weights row-major, then bias, per layer).

_MODEL_MAGIC = b"TCM1"


def save_model(path, net):
    with open(path, "wb") as fh:
        fh.write(_MODEL_MAGIC)
        fh.write(struct.pack("<I", len(net.layers)))
        for layer in net.layers:
            fan_in, fan_out = layer.weight.shape
            fh.write(struct.pack("<IIB", fan_in, fan_out,
                                 _ACT_CODES[layer.activation]))
        for layer in net.layers:
            fh.write(layer.weight.astype("<f4").tobytes())
            fh.write(layer.bias.astype("<f4").tobytes())


def load_model(path):
    with open(path, "rb") as fh:
        if fh.read(4) != _MODEL_MAGIC:
            raise ValueError(f"{path}: not a TCM1 model file")
        (n_layers,) = struct.unpack("<I", fh.read(4))
        shapes = []
        for _ in range(n_layers):
            fan_in, fan_out, act = struct.unpack("<IIB", fh.read(9))
            shapes.append((fan_in, fan_out, _ACT_NAMES[act]))
        layers = []
        for fan_in, fan_out, act in shapes:
            w = np.frombuffer(fh.read(4 * fan_in * fan_out), dtype="<f4")
            b = np.frombuffer(fh.read(4 * fan_out), dtype="<f4")
            layers.append(Layer(weight=w.astype(np.float64).reshape(fan_in, fan_out),
                                bias=b.astype(np.float64), activation=act))
    return EmbeddingNet(layers=layers)
