"""Cross-modal contrastive learning with a FIFO key dictionary.

Queries come from pooled RGB features, positive keys from the pooled IR
features of the same scene, and negatives from a queue of keys seen in
earlier batches. There is no momentum encoder: both projection heads are
trained directly, and only the stored queue entries are detached.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigError, CorruptionError, DimensionError
from .fusion import ParamBundle
from .tensor import tensor_from_bytes, tensor_to_bytes


@dataclass
class CLConfig:
    temperature: float = 0.07
    queue_size: int = 1024
    embed_dim: int = 128

    def __post_init__(self):
        if not self.temperature > 0:
            raise ConfigError(f"temperature must be positive, got {self.temperature}")
        if self.queue_size < 1 or self.embed_dim < 1:
            raise ConfigError("queue_size and embed_dim must be positive")


@dataclass
class ProjectionHead(ParamBundle):
    w1: np.ndarray   # (C, C)
    b1: np.ndarray
    w2: np.ndarray   # (C, d_e)
    b2: np.ndarray

    @property
    def in_dim(self):
        return self.w1.shape[0]

    @property
    def embed_dim(self):
        return self.w2.shape[1]


def init_head(channels, embed_dim=128, rng=None):
    rng = np.random.default_rng(rng)
    b = 1.0 / np.sqrt(channels)
    return ProjectionHead(
        w1=rng.uniform(-b, b, (channels, channels)), b1=rng.uniform(-b, b, channels),
        w2=rng.uniform(-b, b, (channels, embed_dim)), b2=rng.uniform(-b, b, embed_dim),
    )


# projection ------------------------------------------------------------------

def pool_and_project(f, head):
    """Average-pool ``(C, H, W)`` or ``(B, C, H, W)`` maps and embed on the unit sphere.

    Returns ``(z, cache)``; ``z`` is ``(d_e,)`` or ``(B, d_e)``.
    """
    single = f.ndim == 3
    fb = f[None] if single else f
    if fb.shape[1] != head.in_dim:
        raise DimensionError(f"feature map has C={fb.shape[1]}, projection head expects {head.in_dim}")
    pooled = fb.mean(axis=(2, 3))
    u = ops.two_layer(pooled, head.w1, head.b1, head.w2, head.b2)
    z = ops.l2_normalize_rows(u)
    cache = (fb.shape, pooled, u, single)
    return (z[0] if single else z), cache


def pool_and_project_backward(dz, cache, head):
    """Return ``(df, grads)`` with ``grads`` a :class:`ProjectionHead`."""
    shape, pooled, u, single = cache
    dz = dz[None] if single else dz
    du = ops.l2_normalize_rows_backward(dz, u)
    dp, dw1, db1, dw2, db2 = ops.two_layer_backward(du, pooled, head.w1, head.b1, head.w2)
    df = np.broadcast_to(dp[:, :, None, None] / (shape[2] * shape[3]), shape).copy()
    return (df[0] if single else df), ProjectionHead(dw1, db1, dw2, db2)


# the key queue ---------------------------------------------------------------

class KeyQueue:
    """Fixed-capacity FIFO of unit-norm key embeddings.

    Entries are stored as detached copies in a ring buffer. :meth:`entries`
    returns them oldest first.
    """

    def __init__(self, capacity, dim):
        if capacity < 1 or dim < 1:
            raise ConfigError("queue capacity and dimension must be positive")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self.buffer = np.zeros((self.capacity, self.dim))
        self.length = 0
        self.head = 0  # next write slot

    def __len__(self):
        return self.length

    def entries(self):
        if self.length < self.capacity:
            return self.buffer[:self.length].copy()
        return np.roll(self.buffer, -self.head, axis=0)

    def push(self, keys):
        keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
        if keys.shape[1] != self.dim:
            raise DimensionError(f"key dimension {keys.shape[1]} != queue dimension {self.dim}")
        for key in keys:
            self.buffer[self.head] = key
            self.head = (self.head + 1) % self.capacity
            self.length = min(self.length + 1, self.capacity)
        return self

    def copy(self):
        q = KeyQueue(self.capacity, self.dim)
        q.buffer = self.buffer.copy()
        q.length, q.head = self.length, self.head
        return q

    def to_bytes(self):
        header = json.dumps({"capacity": self.capacity, "dim": self.dim,
                             "length": self.length, "head": self.head}, sort_keys=True).encode()
        return len(header).to_bytes(4, "little") + header + tensor_to_bytes(self.buffer)

    @classmethod
    def from_bytes(cls, data):
        n = int.from_bytes(data[:4], "little")
        meta = json.loads(bytes(data[4:4 + n]))
        buf, _ = tensor_from_bytes(data, 4 + n)
        if buf.shape != (meta["capacity"], meta["dim"]):
            raise CorruptionError("queue buffer shape does not match its header")
        q = cls(meta["capacity"], meta["dim"])
        q.buffer = buf
        q.length, q.head = meta["length"], meta["head"]
        return q


def queue_push(queue, keys):
    return queue.push(keys)


# InfoNCE ---------------------------------------------------------------------

def infonce_logits(z_q, z_k, negatives, temperature):
    """Rows of ``[z_q.z_k, z_q.z_1, ..., z_q.z_n] / tau`` for batched ``z_q``."""
    pos = (z_q * z_k).sum(axis=-1, keepdims=True)
    neg = z_q @ negatives.T if len(negatives) else np.zeros((z_q.shape[0], 0))
    return np.concatenate([pos, neg], axis=1) / temperature


def infonce_batch(z_q, z_k, negatives, temperature):
    """Mean InfoNCE loss over a batch; returns ``(loss, backward)``.

    ``backward(dloss)`` gives ``(dz_q, dz_k, dnegatives)``; the last is
    always exactly zero because queue entries are constants.
    """
    if not temperature > 0:
        raise ConfigError(f"temperature must be positive, got {temperature}")
    z_q = np.atleast_2d(z_q)
    z_k = np.atleast_2d(z_k)
    negatives = np.asarray(negatives, dtype=np.float64).reshape(-1, z_q.shape[1])
    logits = infonce_logits(z_q, z_k, negatives, temperature)
    logp = ops.log_softmax_rows(logits)
    b = z_q.shape[0]
    loss = 0.0 - float(logp[:, 0].mean())   # never -0.0

    def backward(dloss=1.0):
        dlogits = np.exp(logp)
        dlogits[:, 0] -= 1.0
        dlogits *= dloss / (b * temperature)
        dz_q = dlogits[:, :1] * z_k + dlogits[:, 1:] @ negatives
        dz_k = dlogits[:, :1] * z_q
        return dz_q, dz_k, np.zeros_like(negatives)

    return loss, backward


def infonce_loss(z_q, z_k, queue, temperature):
    """Contrastive loss of one query/key pair against the queue's keys."""
    negatives = queue.entries() if isinstance(queue, KeyQueue) else queue
    loss, _ = infonce_batch(z_q, z_k, negatives, temperature)
    return loss


# one contrastive step --------------------------------------------------------

def cl_step(f_rgb_deep, f_ir_deep, heads, queue, cfg):
    """Contrastive loss for a batch of deepest-stage feature pairs.

    Keys are pushed into ``queue`` after the loss is computed, so no sample
    is ever contrasted against its own key. Returns ``(loss, backward,
    queue)``; ``backward(dloss)`` gives ``(df_rgb, df_ir, (g_q, g_k))``.
    """
    h_q, h_k = heads
    z_q, cq = pool_and_project(f_rgb_deep, h_q)
    z_k, ck = pool_and_project(f_ir_deep, h_k)
    loss, nce_back = infonce_batch(z_q, z_k, queue.entries(), cfg.temperature)
    queue.push(np.atleast_2d(z_k).copy())

    def backward(dloss=1.0):
        dz_q, dz_k, _ = nce_back(dloss)
        if z_q.ndim == 1:
            dz_q, dz_k = dz_q[0], dz_k[0]
        df_rgb, g_q = pool_and_project_backward(dz_q, cq, h_q)
        df_ir, g_k = pool_and_project_backward(dz_k, ck, h_k)
        return df_rgb, df_ir, (g_q, g_k)

    return loss, backward, queue
