"""File formats and run configuration.

Two small binary containers cover the heavy data: ``.ffds`` for image
archives and ``.ffgr`` for encoder checkpoints. Both are little-endian,
versioned, and carry enough geometry to be read without side channels.
Everything human-facing (manifests, reports, tables) is JSON or CSV with
floats printed to 9 significant digits so reruns diff clean.
"""

from __future__ import annotations

import base64
import dataclasses
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

ARCHIVE_MAGIC = b"FFDS"
CHECKPOINT_MAGIC = b"FFGR"
ARCHIVE_VERSION = 1
CHECKPOINT_VERSION = 1
_DTYPE_F32 = 1

SIG_DIGITS = 9


def format_float(x) -> str:
    """Render a float with 9 significant digits (the on-disk convention)."""
    x = float(x)
    if np.isnan(x) or np.isinf(x):
        raise ValueError(f"refusing to serialize non-finite value {x}")
    return f"{x:.{SIG_DIGITS}g}"


def _atomic_write_bytes(path, payload: bytes):
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp_", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)  # readers never observe a partial file
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    _atomic_write_bytes(path, text.encode("utf-8"))


# ---------------------------------------------------------------------------
# image archives


def write_archive(path, images):
    """Write a stack of images as one ``.ffds`` archive.

    Accepts (count, H, W) or (count, C, H, W); stored as float32 LE.
    """
    images = np.asarray(images)
    if images.ndim == 3:
        images = images[:, None, :, :]
    if images.ndim != 4:
        raise ValueError(f"archive expects (count, [C,] H, W), got shape {images.shape}")
    count, channels, height, width = images.shape
    if count < 1:
        raise ValueError("refusing to write an empty archive")
    if not np.all(np.isfinite(images)):
        raise ValueError("archive contains non-finite pixels")
    header = ARCHIVE_MAGIC + struct.pack(
        "<HIHHBB", ARCHIVE_VERSION, count, height, width, channels, _DTYPE_F32)
    body = np.ascontiguousarray(images, dtype="<f4").tobytes()
    _atomic_write_bytes(path, header + body)


def read_archive(path):
    """Read a ``.ffds`` archive back as float32 (count, C, H, W)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != ARCHIVE_MAGIC:
        raise ValueError(f"{path}: not an image archive (bad magic {blob[:4]!r})")
    version, count, height, width, channels, dtype = struct.unpack_from("<HIHHBB", blob, 4)
    if version != ARCHIVE_VERSION:
        raise ValueError(f"{path}: unsupported archive version {version}")
    if dtype != _DTYPE_F32:
        raise ValueError(f"{path}: unsupported dtype code {dtype}")
    offset = 4 + struct.calcsize("<HIHHBB")
    expected = count * channels * height * width * 4
    body = blob[offset:]
    if len(body) != expected:
        raise ValueError(f"{path}: truncated archive ({len(body)} of {expected} bytes)")
    arr = np.frombuffer(body, dtype="<f4").reshape(count, channels, height, width)
    return arr.astype(np.float32)


# ---------------------------------------------------------------------------
# encoder checkpoints


def write_checkpoint(path, params: dict, meta: dict):
    """Write named parameter arrays plus architecture metadata as ``.ffgr``.

    ``params`` maps name -> array; ordering in the file follows sorted names
    so the byte stream is independent of dict construction order.
    """
    names = sorted(params)
    entries = []
    chunks = []
    for name in names:
        arr = np.asarray(params[name])
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"checkpoint parameter {name} has non-finite entries")
        entries.append({"name": name, "shape": list(arr.shape)})
        chunks.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    header_obj = {"meta": dict(meta), "params": entries}
    header_json = json.dumps(header_obj, sort_keys=True).encode("utf-8")
    head = CHECKPOINT_MAGIC + struct.pack("<HI", CHECKPOINT_VERSION, len(header_json))
    _atomic_write_bytes(path, head + header_json + b"".join(chunks))


def read_checkpoint(path):
    """Read a ``.ffgr`` checkpoint; returns (params dict, meta dict)."""
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic {blob[:4]!r})")
    version, header_len = struct.unpack_from("<HI", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    offset = 4 + struct.calcsize("<HI")
    header_obj = json.loads(blob[offset:offset + header_len].decode("utf-8"))
    offset += header_len
    params = {}
    for entry in header_obj["params"]:
        shape = tuple(entry["shape"])
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        chunk = blob[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"{path}: truncated checkpoint at {entry['name']}")
        params[entry["name"]] = np.frombuffer(chunk, dtype="<f4").reshape(shape).astype(np.float32)
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")
    return params, header_obj["meta"]


# ---------------------------------------------------------------------------
# zoo manifests


def _encode_f64(arr):
    return base64.b64encode(np.ascontiguousarray(arr, dtype="<f8").tobytes()).decode("ascii")


def _decode_f64(text, shape):
    return np.frombuffer(base64.b64decode(text), dtype="<f8").reshape(shape).copy()


def _spec_to_obj(spec):
    return {
        "model_id": spec.model_id,
        "family_id": spec.family_id,
        "model_strength": spec.model_strength,
        "family_strength": spec.family_strength,
        "noise_sigma": spec.noise_sigma,
        "seed": spec.seed,
        # base64 float64 so templates round-trip exactly
        "model_template": _encode_f64(spec.model_template),
        "family_template": _encode_f64(spec.family_template),
    }


def _spec_from_obj(obj, height, width):
    from .zoo import SyntheticModelSpec

    return SyntheticModelSpec(
        model_id=obj["model_id"],
        family_id=obj["family_id"],
        model_template=_decode_f64(obj["model_template"], (height, width)),
        family_template=_decode_f64(obj["family_template"], (height, width)),
        model_strength=float(obj["model_strength"]),
        family_strength=float(obj["family_strength"]),
        noise_sigma=float(obj["noise_sigma"]),
        seed=int(obj["seed"]),
    )


def write_manifest(path, manifest):
    obj = {
        "version": manifest.version,
        "height": manifest.height,
        "width": manifest.width,
        "images_per_model": manifest.images_per_model,
        "base_seed": manifest.base_seed,
        "keep_fraction": manifest.keep_fraction,
        "build_args": manifest.build_args,
        "specs": [_spec_to_obj(s) for s in manifest.specs],
        "real_spec": _spec_to_obj(manifest.real_spec) if manifest.real_spec else None,
    }
    atomic_write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def read_manifest(path):
    from .zoo import ZooManifest

    with open(path) as f:
        obj = json.load(f)
    h, w = int(obj["height"]), int(obj["width"])
    manifest = ZooManifest(
        specs=[_spec_from_obj(s, h, w) for s in obj["specs"]],
        height=h,
        width=w,
        images_per_model=int(obj["images_per_model"]),
        base_seed=int(obj["base_seed"]),
        version=int(obj["version"]),
        real_spec=_spec_from_obj(obj["real_spec"], h, w) if obj.get("real_spec") else None,
        keep_fraction=float(obj.get("keep_fraction", 0.5)),
        build_args=dict(obj.get("build_args", {})),
    )
    manifest.validate()
    return manifest


# ---------------------------------------------------------------------------
# reports


def _round_floats(obj):
    if isinstance(obj, float):
        return float(format_float(obj))
    if isinstance(obj, dict):
        return {k: _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, (np.floating,)):
        return float(format_float(float(obj)))
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist())
    return obj


def write_json_report(path, obj):
    """JSON with all floats normalized to the 9-significant-digit convention."""
    atomic_write_text(path, json.dumps(_round_floats(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows):
    """CSV where floats are printed via :func:`format_float`."""
    lines = [",".join(header)]
    for row in rows:
        cells = []
        for cell in row:
            if isinstance(cell, (float, np.floating)):
                cells.append(format_float(cell))
            else:
                cells.append(str(cell))
        lines.append(",".join(cells))
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# run configuration


@dataclass
class RunConfig:
    """Every knob a run exposes; one flat namespace shared by file and flags."""

    num_families: int = 3
    models_per_family: int = 4
    height: int = 32
    width: int = 32
    family_strength: float = 0.02
    model_strength: float = 0.05
    noise_sigma: float = 0.02
    images_per_model: int = 2048
    include_real: bool = True
    holdout_fraction: float = 0.25

    embedding_dim: int = 64
    input_gain: float = 16.0
    pooling: str = "mean"
    bag_size: int = 32
    bags_per_model: int = 64
    models_per_batch: int = 4
    bags_per_model_batch: int = 2
    epochs: int = 10
    learning_rate: float = 1e-3
    distance_clip: float = 50.0

    fingerprint_bags: int = 64
    folds: int = 10
    linkage: str = "average"
    seed: int = 0

    def validate(self):
        if self.pooling not in ("mean", "sum"):
            raise ValueError(f"pooling must be 'mean' or 'sum', got {self.pooling!r}")
        if self.linkage != "average":
            raise ValueError(f"only average linkage is implemented, got {self.linkage!r}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must be in (0, 1)")
        if self.bags_per_model_batch < 2:
            raise ValueError("bags_per_model_batch must be >= 2 (anchors need positives)")
        if self.models_per_batch < 2:
            raise ValueError("models_per_batch must be >= 2 (anchors need negatives)")
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                raise ValueError(f"config {f.name} must be >= 0, got {v}")
        return self


def _coerce(name, text, typ):
    text = text.strip()
    if typ is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"config {name}: cannot parse {text!r} as bool")
    try:
        return typ(text)
    except ValueError as e:
        raise ValueError(f"config {name}: cannot parse {text!r} as {typ.__name__}") from e


def load_config(path=None, overrides=None) -> RunConfig:
    """Build a RunConfig from an optional ``key=value`` file plus overrides.

    Lines starting with ``#`` and blank lines are skipped. Unknown keys are
    an error, never silently ignored.
    """
    fields = {f.name: f.type for f in dataclasses.fields(RunConfig)}
    types = {"int": int, "float": float, "str": str, "bool": bool}
    values = {}
    if path is not None:
        with open(path) as f:
            for lineno, raw in enumerate(f, 1):
                line = raw.strip()
                if not line or line.startswith("#"):
                    continue
                if "=" not in line:
                    raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
                key, _, val = line.partition("=")
                key = key.strip()
                if key not in fields:
                    raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
                values[key] = _coerce(key, val, types[fields[key]])
    for key, val in (overrides or {}).items():
        if key not in fields:
            raise ValueError(f"unknown config key {key!r}")
        if val is not None:
            values[key] = val if not isinstance(val, str) else _coerce(key, val, types[fields[key]])
    return RunConfig(**values).validate()


def config_to_dict(config: RunConfig):
    return dataclasses.asdict(config)
