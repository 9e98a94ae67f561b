"""Set encoder over image bags and its contrastive training loop.

The encoder F = rho(pool(phi(...))) maps an unordered bag of images to one
code vector. phi is a small conv stack applied to each image's high-pass
residual, pooling is an unordered mean over the bag, and rho is a two-layer
head. Training pulls codes of same-source bags together and pushes codes of
different sources apart through a softmax over pairwise squared distances.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .optim import Adam
from .residuals import residual

NEG_MASK = -1e9


@dataclass(frozen=True)
class Bag:
    """An unordered set of images from one source; order carries no meaning."""

    images: np.ndarray  # (n, C, H, W) or (n, H, W)
    source_id: str
    bag_index: int = 0

    def __post_init__(self):
        if self.images.ndim == 3:
            object.__setattr__(self, "images", self.images[:, None, :, :])
        if self.images.ndim != 4 or self.images.shape[0] < 1:
            raise ValueError(f"bag needs (n >= 1, C, H, W) images, got {self.images.shape}")


@dataclass(frozen=True)
class Embedding:
    vector: np.ndarray  # (D,)
    source_id: str | None = None

    def __post_init__(self):
        if not np.all(np.isfinite(self.vector)):
            raise ValueError("embedding has non-finite entries")


@dataclass(frozen=True)
class ModelFingerprint:
    """Aggregate representation of one source: a code vector or a raster."""

    source_id: str
    vector: np.ndarray  # (D,) for encoder kind, (H, W) for prnu kind
    kind: str  # "encoder" | "prnu"
    num_bags_used: int

    def __post_init__(self):
        if self.kind not in ("encoder", "prnu"):
            raise ValueError(f"unknown fingerprint kind {self.kind!r}")
        if self.kind == "encoder" and self.vector.ndim != 1:
            raise ValueError("encoder fingerprint must be a flat vector")
        if self.kind == "prnu" and self.vector.ndim != 2:
            raise ValueError("prnu fingerprint must be an HxW raster")
        if self.num_bags_used < 1:
            raise ValueError("fingerprint needs at least one bag")


_CHANNELS = (8, 16, 32)

# Structured initialization for the default geometry (one input channel,
# 64-dim code). conv1 spans gratings at 30 degree steps plus Laplacian and
# checkerboard taps; conv2 refines orientation to a 15 degree grid with
# per-channel gains balancing how template response profiles spread; conv3
# is a per-channel anti-aliasing blur (a bare stride-2 tap would alias
# oriented textures); the head starts near the identity so the profile
# reaches the code unmixed. The conv1 scale places distinct sources beyond
# the distance clip from the start, so training tightens same-source
# spread instead of re-deriving orientation selectivity from white noise.
_CONV1_SCALE = 155.0
_CONV2_GAINS = np.array([0.6461, 0.5714, 0.4391, 0.171, 1.028, 1.8481,
                         0.9343, 0.171, 0.7084, 2.09, 0.8939, 0.171,
                         1.0066, 1.4873, 0.8247, 0.2361])
_INIT_JITTER = 0.1


def _oriented_kernel(psi_deg, f0=0.35):
    """Mean-free unit-norm 3x3 cosine grating at orientation ``psi_deg``."""
    t = np.array([-1.0, 0.0, 1.0])
    xx, yy = np.meshgrid(t, t)
    u = xx * np.cos(np.radians(psi_deg)) + yy * np.sin(np.radians(psi_deg))
    w = np.cos(2.0 * np.pi * f0 * u)
    w -= w.mean()
    return w / np.linalg.norm(w)


def _conv1_bank():
    """(8, 1, 3, 3): six 30-degree-step gratings, Laplacian, checkerboard."""
    filters = [_oriented_kernel(30.0 * c) for c in range(6)]
    lap = np.array([[-1.0, -1.0, -1.0], [-1.0, 8.0, -1.0], [-1.0, -1.0, -1.0]])
    chk = np.array([[1.0, -1.0, 1.0], [-1.0, 1.0, -1.0], [1.0, -1.0, 1.0]])
    chk -= chk.mean()
    filters.append(lap / np.linalg.norm(lap))
    filters.append(chk / np.linalg.norm(chk))
    return np.stack(filters)[:, None]


def _conv2_bank():
    """(16, 8, 3, 3): 15-degree orientation refiners plus pass-through taps.

    Channel j < 12 applies a grating at 15j degrees to the nearest conv1
    orientation channel (split over the two flanking channels when it falls
    between them). Channels 12..15 tap the Laplacian and checkerboard paths
    and their blends. Per-channel gains then balance the profile spread.
    """
    w = np.zeros((16, 8, 3, 3))
    for j in range(12):
        psi = 15.0 * j
        k = _oriented_kernel(psi) * 2.0
        lo = int(psi // 30) % 6
        hi = (lo + 1) % 6
        if abs(psi - 30.0 * lo) < 1e-9:
            w[j, lo] = k
        else:
            w[j, lo] = 0.5 * k
            w[j, hi] = 0.5 * k
    w[12, 6, 1, 1] = 1.0
    w[13, 7, 1, 1] = 1.0
    for c in range(6):
        w[14, c, 1, 1] = 1.0 / 6.0
    w[15, 6, 1, 1] = 0.5
    w[15, 7, 1, 1] = 0.5
    return w * _CONV2_GAINS[:, None, None, None]


class SetEncoder:
    """phi: conv(3x3, stride 2) x3 -> spatial mean -> linear(D); rho: D->D->D."""

    def __init__(self, dim=64, in_channels=1, pooling="mean", input_gain=16.0,
                 distance_clip=50.0, seed=0):
        if pooling not in ("mean", "sum"):
            raise ValueError(f"pooling must be 'mean' or 'sum', got {pooling!r}")
        self.dim = int(dim)
        self.in_channels = int(in_channels)
        self.pooling = pooling
        self.input_gain = float(input_gain)
        self.distance_clip = float(distance_clip)
        self.seed = int(seed)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 3]))
        if in_channels == 1 and dim == 64:
            params = self._structured_params(rng)
        else:
            params = self._random_params(rng)
        self.params = {k: ad.Tensor(v, requires_grad=True) for k, v in params.items()}

    def _structured_params(self, rng):
        """Oriented-bank start with near-identity read-out (see bank notes)."""
        dim, jit = self.dim, _INIT_JITTER
        w3 = rng.standard_normal((32, 16, 3, 3)) * jit * np.sqrt(2.0 / 144)
        blur = np.array([[1.0, 2.0, 1.0], [2.0, 4.0, 2.0], [1.0, 2.0, 1.0]]) / 16.0
        for co in range(32):
            w3[co, co % 16] += blur
        pw = rng.standard_normal((32, dim)) * jit * np.sqrt(2.0 / 32)
        pw[:, :32] += np.eye(32)
        pw[:, 32:] += np.eye(32)
        params = {"conv1_w": _conv1_bank() * _CONV1_SCALE, "conv1_b": np.zeros(8),
                  "conv2_w": _conv2_bank(), "conv2_b": np.zeros(16),
                  "conv3_w": w3, "conv3_b": np.zeros(32),
                  "phi_w": pw, "phi_b": np.zeros(dim)}
        for name in ("rho1_w", "rho2_w"):
            params[name] = (np.eye(dim)
                            + rng.standard_normal((dim, dim)) * jit * np.sqrt(1.0 / dim))
            params[name.replace("_w", "_b")] = np.zeros(dim)
        return params

    def _random_params(self, rng):
        """He-scaled random start for non-default geometries."""
        dim = self.dim
        c_in = self.in_channels
        params = {}
        for i, c_out in enumerate(_CHANNELS, start=1):
            fan_in = c_in * 9
            params[f"conv{i}_w"] = rng.standard_normal((c_out, c_in, 3, 3)) * np.sqrt(2.0 / fan_in)
            params[f"conv{i}_b"] = np.zeros(c_out)
            c_in = c_out
        params["phi_w"] = rng.standard_normal((c_in, dim)) * np.sqrt(2.0 / c_in)
        params["phi_b"] = np.zeros(dim)
        params["rho1_w"] = rng.standard_normal((dim, dim)) * np.sqrt(2.0 / dim)
        params["rho1_b"] = np.zeros(dim)
        params["rho2_w"] = rng.standard_normal((dim, dim)) * np.sqrt(1.0 / dim)
        params["rho2_b"] = np.zeros(dim)
        return params

    # -- forward pieces (each builds onto the autodiff graph) --

    def phi(self, images):
        """Per-image features: residual -> gain -> conv stack -> (N, D)."""
        images = np.asarray(images)
        if images.ndim == 3:
            images = images[:, None, :, :]
        if images.ndim != 4 or images.shape[1] != self.in_channels:
            raise ValueError(f"phi expects (N, {self.in_channels}, H, W), got {images.shape}")
        x = ad.Tensor(residual(images))
        x = ad.scalar_mul(x, self.input_gain)
        for i in range(1, 4):
            x = ad.conv2d(x, self.params[f"conv{i}_w"], self.params[f"conv{i}_b"],
                          stride=2, pad=1)
            x = ad.relu(x)
        x = ad.mean_pool_spatial(x)
        return ad.add(ad.matmul(x, self.params["phi_w"]), self.params["phi_b"])

    def rho(self, pooled):
        """Head applied after pooling: (G, D) -> (G, D)."""
        h = ad.relu(ad.add(ad.matmul(pooled, self.params["rho1_w"]), self.params["rho1_b"]))
        return ad.add(ad.matmul(h, self.params["rho2_w"]), self.params["rho2_b"])

    def encode_grouped(self, images, num_groups, bag_size):
        """Embed `num_groups` bags laid out contiguously in one image batch."""
        feats = self.phi(images)
        grouped = ad.reshape(feats, (num_groups, bag_size, self.dim))
        pooled = ad.mean_over_set_axis(grouped, mode=self.pooling)
        return self.rho(pooled)

    # -- persistence --

    def state_arrays(self):
        return {k: v.data.copy() for k, v in self.params.items()}

    def meta(self):
        return {
            "dim": self.dim,
            "in_channels": self.in_channels,
            "pooling": self.pooling,
            "input_gain": self.input_gain,
            "distance_clip": self.distance_clip,
            "seed": self.seed,
            "arch": "conv3x3s2(8,16,32)-meanpool-linear / linear-relu-linear",
        }

    @classmethod
    def from_state(cls, arrays, meta):
        enc = cls(dim=int(meta["dim"]), in_channels=int(meta["in_channels"]),
                  pooling=meta["pooling"], input_gain=float(meta["input_gain"]),
                  distance_clip=float(meta.get("distance_clip", 50.0)),
                  seed=int(meta.get("seed", 0)))
        for name, tensor in enc.params.items():
            arr = np.asarray(arrays[name])
            if arr.shape != tensor.data.shape:
                raise ValueError(f"checkpoint layer {name}: shape {arr.shape} "
                                 f"does not match architecture {tensor.data.shape}")
            tensor.data = arr.astype(tensor.data.dtype)
        return enc


def set_encode(encoder: SetEncoder, bag) -> Embedding:
    """Embed one bag; exact permutation invariance comes from unordered pooling."""
    images = bag.images if isinstance(bag, Bag) else np.asarray(bag)
    if images.ndim == 3:
        images = images[:, None, :, :]
    n = images.shape[0]
    if n < 1:
        raise ValueError("cannot encode an empty bag")
    out = encoder.encode_grouped(images, 1, n)
    return Embedding(vector=out.data[0].copy(),
                     source_id=bag.source_id if isinstance(bag, Bag) else None)


def pair_distance(z, z2) -> float:
    """Squared Euclidean distance between two codes."""
    a = np.asarray(z.vector if isinstance(z, Embedding) else z, dtype=np.float64)
    b = np.asarray(z2.vector if isinstance(z2, Embedding) else z2, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    d = a - b
    return float(np.dot(d, d))


def contrastive_batch_loss(embeddings, source_ids, anchors=None, distance_clip=50.0):
    """Softmax-over-distances loss, averaged over anchor rows.

    ``embeddings`` is an (R, D) Tensor; ``source_ids`` labels each row.
    Every anchor must have a positive partner (same source, different row);
    by default every row is an anchor. Returns a scalar Tensor.
    """
    R = embeddings.shape[0]
    if R < 2:
        raise ValueError("need at least 2 embeddings in a batch")
    if len(source_ids) != R:
        raise ValueError(f"{len(source_ids)} labels for {R} embeddings")
    ids = np.asarray(source_ids)
    pos = (ids[:, None] == ids[None, :]).astype(np.float64)
    np.fill_diagonal(pos, 0.0)
    anchor_rows = np.zeros(R, dtype=bool)
    anchor_rows[np.arange(R) if anchors is None else np.asarray(anchors, dtype=int)] = True
    if not anchor_rows.any():
        raise ValueError("batch has no anchors")
    if np.any(anchor_rows & (pos.sum(axis=1) == 0)):
        raise ValueError("batch composition violates positives-per-anchor contract")

    d2 = ad.squared_euclidean_rowpair(embeddings)
    cap = ad.Tensor(np.full((R, R), distance_clip))
    clipped = ad.sub(cap, ad.relu(ad.sub(cap, d2)))  # min(d, clip) without branching
    logits = ad.scalar_mul(clipped, -1.0)
    probs = ad.softmax_rows(logits, mask=np.where(np.eye(R, dtype=bool), NEG_MASK, 0.0))
    mass = ad.matmul(ad.mul(probs, ad.Tensor(pos)), ad.Tensor(np.ones((R, 1))))
    # non-anchor rows contribute log(1) = 0
    col = anchor_rows.astype(np.float64)[:, None]
    padded = ad.add(ad.mul(mass, ad.Tensor(col)), ad.Tensor(1.0 - col))
    total = ad.sum_all(ad.log(padded))
    return ad.scalar_mul(total, -1.0 / int(anchor_rows.sum()))


class _BagSampler:
    """Cycles a shuffled permutation of one model's training images.

    Consecutive bags never share an image until the pool is exhausted, at
    which point the permutation is redrawn. This keeps epochs close to
    sampling without replacement even when n * B exceeds the pool.
    """

    def __init__(self, indices, rng):
        self.indices = np.asarray(indices)
        self.rng = rng
        self.order = self.rng.permutation(self.indices)
        self.cursor = 0

    def draw(self, n):
        if n > self.indices.size:
            raise ValueError(f"bag size {n} exceeds pool of {self.indices.size} images")
        if self.cursor + n > self.order.size:
            self.order = self.rng.permutation(self.indices)
            self.cursor = 0
        out = self.order[self.cursor:self.cursor + n]
        self.cursor += n
        return out


@dataclass
class TrainingHistory:
    losses: list = field(default_factory=list)  # (epoch, step, loss)

    def record(self, epoch, step, loss):
        self.losses.append((int(epoch), int(step), float(loss)))

    def epoch_means(self):
        by_epoch = {}
        for epoch, _, loss in self.losses:
            by_epoch.setdefault(epoch, []).append(loss)
        return [float(np.mean(by_epoch[e])) for e in sorted(by_epoch)]


def train_split(count, holdout_fraction):
    """(train_indices, heldout_indices): the tail fraction is never trained on."""
    cut = int(round(count * (1.0 - holdout_fraction)))
    if cut < 1 or cut >= count:
        raise ValueError(f"holdout fraction {holdout_fraction} leaves no usable "
                         f"split for {count} images")
    return np.arange(cut), np.arange(cut, count)


def _epoch_batches(model_ids, bags_per_model, models_per_batch, k, rng):
    """Group K-bag blocks into batches of P mostly-distinct models."""
    if bags_per_model % k != 0:
        raise ValueError(f"bags_per_model {bags_per_model} not divisible by "
                         f"bags_per_model_batch {k}")
    groups = [m for m in model_ids for _ in range(bags_per_model // k)]
    groups = [groups[i] for i in rng.permutation(len(groups))]
    p = models_per_batch
    num_batches = len(groups) // p
    for b in range(num_batches):
        window = groups[b * p:(b + 1) * p]
        # swap forward to avoid duplicate models inside one batch when possible
        for i in range(p):
            if window[i] in window[:i]:
                for j in range((b + 1) * p, len(groups)):
                    if groups[j] not in window[:i] + window[i + 1:]:
                        window[i], groups[j] = groups[j], window[i]
                        break
        groups[b * p:(b + 1) * p] = window
    return [groups[b * p:(b + 1) * p] for b in range(num_batches)]


def train_encoder(images_by_model, config, encoder=None, verbose=False):
    """Train an encoder on the training split of every model's images.

    ``images_by_model`` maps source_id -> (count, C, H, W) array. A fresh
    encoder is initialized from the config seed unless one is passed in
    (resuming). Returns (encoder, TrainingHistory). Deterministic for a
    fixed config.
    """
    if len(images_by_model) < 2:
        raise ValueError("training needs at least 2 models")
    config.validate()
    n, B = config.bag_size, config.bags_per_model
    P, K = config.models_per_batch, config.bags_per_model_batch
    if P > len(images_by_model):
        raise ValueError(f"models_per_batch {P} exceeds {len(images_by_model)} models")

    model_ids = sorted(images_by_model)
    in_channels = next(iter(images_by_model.values())).shape[1]
    if encoder is None:
        encoder = SetEncoder(dim=config.embedding_dim, in_channels=in_channels,
                             pooling=config.pooling, input_gain=config.input_gain,
                             distance_clip=config.distance_clip, seed=config.seed)
    history = TrainingHistory()
    if config.epochs == 0:
        return encoder, history

    train_pools = {}
    for m in model_ids:
        count = images_by_model[m].shape[0]
        train_idx, _ = train_split(count, config.holdout_fraction)
        if n > train_idx.size:
            raise ValueError(f"infeasible bag plan: bag size {n} exceeds the "
                             f"{train_idx.size}-image training pool of {m}")
        train_pools[m] = train_idx

    root = np.random.SeedSequence([config.seed, 4])
    batch_rng = np.random.default_rng(root.spawn(1)[0])
    samplers = {m: _BagSampler(train_pools[m], np.random.default_rng(seq))
                for m, seq in zip(model_ids, root.spawn(len(model_ids) + 1)[1:])}

    opt = Adam(encoder.params, learning_rate=config.learning_rate)
    for epoch in range(config.epochs):
        for step, batch_models in enumerate(
                _epoch_batches(model_ids, B, P, K, batch_rng)):
            images = np.concatenate([
                images_by_model[m][samplers[m].draw(n)]
                for m in batch_models for _ in range(K)])
            labels = [m for m in batch_models for _ in range(K)]
            z = encoder.encode_grouped(images, P * K, n)
            try:
                loss = contrastive_batch_loss(z, labels,
                                              distance_clip=config.distance_clip)
                value = loss.item()
                opt.zero_grad()
                ad.backward(loss)
            except FloatingPointError as e:
                raise FloatingPointError(
                    f"training aborted at epoch {epoch} step {step}: {e}") from e
            opt.step()
            history.record(epoch, step, value)
            if verbose and step % 16 == 0:
                print(f"epoch {epoch} step {step} loss {value:.4f}", flush=True)
    _center_output_bias(encoder, images_by_model, train_pools, n)
    return encoder, history


def _center_output_bias(encoder, images_by_model, train_pools, bag_size,
                        bags_per_model=4):
    """Pin the output bias so codes of training bags average to zero.

    The batch loss sees only differences between codes, so shifting every
    embedding by a constant is invisible to it: the output bias receives an
    exactly zero gradient and would otherwise sit wherever initialization
    left it. Centering over training bags fixes that free direction, so
    downstream correlation diagnostics measure fingerprint geometry rather
    than an arbitrary common offset. Evaluation data is never touched.
    """
    codes = []
    for m in sorted(train_pools):
        pool = train_pools[m]
        size = min(bag_size, pool.size)
        chunks = min(bags_per_model, pool.size // size)
        idx = pool[:chunks * size]
        feats = phi_features(encoder, images_by_model[m][idx])
        bags = [np.arange(c * size, (c + 1) * size) for c in range(chunks)]
        codes.append(embed_feature_bags(encoder, feats, bags))
    center = np.concatenate(codes).astype(np.float64).mean(axis=0)
    b = encoder.params["rho2_b"]
    b.data = (b.data.astype(np.float64) - center).astype(b.data.dtype)


# ---------------------------------------------------------------------------
# inference over many bags


def phi_features(encoder: SetEncoder, images, chunk=256):
    """phi output for each image, (N, D) float32: the reusable half of F.

    Computing phi once per image and pooling subsets later gives embeddings
    identical to encoding each bag, since pooling only sees phi outputs.
    """
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[:, None, :, :]
    outs = [encoder.phi(images[i:i + chunk]).data for i in range(0, images.shape[0], chunk)]
    return np.concatenate(outs, axis=0)


def embed_feature_bags(encoder: SetEncoder, feats, index_bags):
    """Embeddings for bags given as index lists into a phi-feature matrix."""
    stacks = [np.asarray(feats)[np.asarray(idx)] for idx in index_bags]
    sizes = {s.shape[0] for s in stacks}
    out = np.empty((len(stacks), encoder.dim), dtype=np.float32)
    # group by bag size so each group shares one pooled graph
    for size in sorted(sizes):
        rows = [i for i, s in enumerate(stacks) if s.shape[0] == size]
        grouped = ad.Tensor(np.stack([stacks[i] for i in rows]))
        pooled = ad.mean_over_set_axis(grouped, mode=encoder.pooling)
        out[rows] = encoder.rho(pooled).data
    return out


def model_fingerprint(encoder: SetEncoder, bags) -> ModelFingerprint:
    """Mean of the bag codes of one source, invariant to bag order.

    Accepts Bag objects or raw image stacks (assumed same source).
    """
    if len(bags) < 1:
        raise ValueError("fingerprint needs at least one bag")
    sources = {b.source_id for b in bags if isinstance(b, Bag)}
    if len(sources) > 1:
        raise ValueError(f"mixed sources in fingerprint input: {sorted(sources)}")
    codes = np.stack([set_encode(encoder, b).vector for b in bags])
    return ModelFingerprint(
        source_id=sources.pop() if sources else "unknown",
        vector=mean_code(codes),
        kind="encoder",
        num_bags_used=len(bags),
    )


def mean_code(codes):
    """Order-independent mean of code rows (value-sorted float64 summation)."""
    codes = np.asarray(codes)
    ordered = np.sort(codes.astype(np.float64), axis=0)
    return (ordered.sum(axis=0) / codes.shape[0]).astype(np.float32)
