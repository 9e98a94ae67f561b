"""Synthetic zoo of image-generating processes with planted artifacts.

Each synthetic "model" stamps a unique high-frequency template (plus a
template shared by its family) onto smooth random base images. Templates
occupy disjoint spectral cells: narrow orientation cells of the high band
for the default 3x4 zoo, radial rings split into angular wedges for other
shapes. That is how generator lineages behave in practice: an architecture
pins its artifacts near characteristic frequencies (upsampling grids,
blocky decoders), while individual instances differ in the details.
Strengths, noise level and image geometry are controlled, so every
downstream claim about fingerprints can be checked against known ground
truth. All streams are seeded per model, so parallel and serial generation
agree bit for bit.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1

# fraction of frequency bins (by radius, DC excluded) templates occupy; high
# enough that the median-filter residual keeps >= 0.99 of a planted template
TEMPLATE_BAND_KEEP = 0.4
# base images keep only this low-frequency ball, normalized radius in [0, 1]
BASE_SMOOTHNESS = 0.15
BASE_LEVEL = 0.5
BASE_AMPLITUDE = 0.3


def _radius_grid(height, width):
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    return np.sqrt(fy ** 2 + fx ** 2)


def highband_mask(height, width, keep_fraction=TEMPLATE_BAND_KEEP):
    """Boolean FFT mask keeping the `keep_fraction` of bins with largest radius."""
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError(f"keep_fraction must be in (0, 1], got {keep_fraction}")
    r = _radius_grid(height, width)
    flat = np.sort(r.ravel())
    k = int(round(keep_fraction * flat.size))
    threshold = flat[flat.size - k]
    mask = r >= threshold
    mask[0, 0] = False  # never keep DC
    return mask


def lowband_mask(height, width, radius=BASE_SMOOTHNESS):
    """Boolean FFT mask keeping the low-frequency ball of normalized radius."""
    r = _radius_grid(height, width)
    return r <= radius * np.sqrt(0.5)


def apply_band(image, mask):
    """Project a raster onto the frequency support given by ``mask``."""
    return np.real(np.fft.ifft2(np.fft.fft2(image) * mask))


def _paired_partition(height, width, base, key, count, what):
    """Split the bins of ``base`` into ``count`` equal groups ordered by ``key``.

    A bin and its conjugate (opposite frequency) always land in the same
    group, so a real field filtered by one group's mask stays real. Groups
    hold equal bin shares up to the indivisible conjugate pairs.
    """
    if count < 1:
        raise ValueError(f"need at least one sector, got {count}")
    total = int(base.sum())
    if count > total:
        raise ValueError(f"{count} spectral {what} over a {total}-bin band "
                         "leave some empty: too many templates for the band")
    pairs = []
    seen = np.zeros((height, width), dtype=bool)
    for i, j in np.argwhere(base):
        if seen[i, j]:
            continue
        i2, j2 = (-i) % height, (-j) % width
        seen[i, j] = seen[i2, j2] = True
        pairs.append((float(key[i, j]), int(i), int(j), int(i2), int(j2)))
    pairs.sort()

    masks = [np.zeros((height, width), dtype=bool) for _ in range(count)]
    done = 0
    w = 0
    for _k, i, j, i2, j2 in pairs:
        while w < count - 1 and done >= (w + 1) * total / count:
            w += 1
        masks[w][i, j] = masks[w][i2, j2] = True
        done += 1 if (i, j) == (i2, j2) else 2
    empty = [j for j, m in enumerate(masks) if not m.any()]
    if empty:
        raise ValueError(f"{count} spectral {what} leave some empty ({empty}): "
                         "too many templates for the available band")
    return masks


def sector_masks(height, width, count, keep_fraction=TEMPLATE_BAND_KEEP,
                 base_mask=None):
    """Partition a band into ``count`` angular wedges of equal bin count.

    Wedges are ordered by orientation angle (taken mod pi) and hold equal
    shares of the band's bins, so no template is starved of frequency modes
    by the uneven angular bin density of a square grid. ``base_mask``
    defaults to the full high band.
    """
    band = highband_mask(height, width, keep_fraction) if base_mask is None \
        else base_mask
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    theta = np.mod(np.arctan2(fy, fx), np.pi)
    return _paired_partition(height, width, band, theta, count, "sectors")


def ring_masks(height, width, count, keep_fraction=TEMPLATE_BAND_KEEP):
    """Partition the high band into ``count`` radial rings of equal bin count."""
    band = highband_mask(height, width, keep_fraction)
    radius = _radius_grid(height, width)
    return _paired_partition(height, width, band, radius, count, "rings")


def orientation_cell(height, width, center_deg, half_deg,
                     keep_fraction=TEMPLATE_BAND_KEEP):
    """High-band bins within ``half_deg`` of orientation ``center_deg``.

    Bins on the Nyquist row/column or beyond normalized radius 0.5 fold
    onto other orientations under stride-2 downsampling, so cells exclude
    them: a template planted here keeps its orientation identity through
    every pooling stage of a strided encoder.
    """
    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    theta = np.degrees(np.mod(np.arctan2(fy, fx), np.pi))
    nyq = np.zeros((height, width), dtype=bool)
    nyq[height // 2, :] = True
    nyq[:, width // 2] = True
    band = (highband_mask(height, width, keep_fraction) & ~nyq
            & (_radius_grid(height, width) <= 0.5))
    d = np.abs((theta - center_deg + 90.0) % 180.0 - 90.0)
    return band & (d <= half_deg)


# Orientation layout for the default 3x4 zoo. Families own wide-angle
# anchors; each member sits in its own narrow cell, interleaved across
# families so that similarly oriented members are never all siblings.
# The spacing was tuned so that, through an oriented 3x3 filter bank,
# same-family members give strongly correlated response profiles while
# every pair of models stays well separated.
_CELL_HALF_DEG = 2.5
_FAMILY_CELL_DEG = (145.0, 135.0, 175.0)
_MODEL_CELL_DEG = (70.0, 35.0, 170.0, 5.0, 100.0, 40.0, 75.0, 80.0,
                   50.0, 10.0, 45.0, 15.0)
_MODEL_CELL_FAMILY = (1, 2, 0, 0, 1, 2, 1, 1, 2, 0, 2, 0)


def _band_limited_field(rng, height, width, mask):
    x = apply_band(rng.standard_normal((height, width)), mask)
    x -= x.mean()
    rms = np.sqrt(np.mean(x ** 2))
    if rms == 0.0:
        raise ValueError("degenerate band-limited field (empty band?)")
    return x / rms


def _phase_field(rng, height, width, mask):
    """Random-phase field with a flat spectrum over the bins of ``mask``.

    Unlike a plain filtered Gaussian field, every kept bin carries exactly
    unit magnitude, so how strongly a template excites any linear filter is
    set by the cell's position alone and not by the luck of the draw. The
    phases come from a full-size white field, so a template's realization
    depends only on its draw order, not on its mask.
    """
    g = np.fft.fft2(rng.standard_normal((height, width)))
    mag = np.abs(g)
    mag[mag == 0.0] = 1.0
    x = np.real(np.fft.ifft2(np.where(mask, g / mag, 0.0)))
    x -= x.mean()
    rms = np.sqrt(np.mean(x ** 2))
    if rms == 0.0:
        raise ValueError("degenerate band-limited field (empty band?)")
    return x / rms


def smooth_base(height, width, rng):
    """A smooth random field in [0.2, 0.8], identically distributed everywhere."""
    g = _band_limited_field(rng, height, width, lowband_mask(height, width))
    return BASE_LEVEL + BASE_AMPLITUDE * np.tanh(g)


@dataclass(frozen=True)
class SyntheticModelSpec:
    """One synthetic generative process and the artifacts it plants."""

    model_id: str
    family_id: str
    model_template: np.ndarray
    family_template: np.ndarray
    model_strength: float
    family_strength: float
    noise_sigma: float
    seed: int

    def validate(self):
        for name, t in (("model_template", self.model_template),
                        ("family_template", self.family_template)):
            if abs(float(t.mean())) > 1e-6:
                raise ValueError(f"{self.model_id}: {name} is not zero-mean")
            if abs(float(np.sqrt(np.mean(t ** 2))) - 1.0) > 1e-6:
                raise ValueError(f"{self.model_id}: {name} RMS is not 1")
        if self.model_strength < 0 or self.family_strength < 0 or self.noise_sigma < 0:
            raise ValueError(f"{self.model_id}: strengths and noise must be >= 0")


@dataclass
class ZooManifest:
    """The full zoo: model specs plus the generation geometry and seeds."""

    specs: list[SyntheticModelSpec]
    height: int
    width: int
    images_per_model: int
    base_seed: int
    version: int = FORMAT_VERSION
    real_spec: SyntheticModelSpec | None = None
    keep_fraction: float = TEMPLATE_BAND_KEEP
    build_args: dict = field(default_factory=dict)

    @property
    def model_ids(self):
        return [s.model_id for s in self.specs]

    @property
    def family_ids(self):
        return [s.family_id for s in self.specs]

    def families(self):
        out = {}
        for s in self.specs:
            out.setdefault(s.family_id, []).append(s.model_id)
        return out

    def all_specs(self):
        return self.specs + ([self.real_spec] if self.real_spec is not None else [])

    def validate(self):
        ids = self.model_ids
        if len(set(ids)) != len(ids):
            raise ValueError("manifest: duplicate model_ids")
        for s in self.all_specs():
            s.validate()
        if self.images_per_model < 1:
            raise ValueError("manifest: empty dataset (images_per_model < 1)")


def _gram_schmidt(rows):
    """Orthonormalize rows in place order; raises on rank deficiency."""
    basis = []
    for row in rows:
        v = row.astype(np.float64).copy()
        for b in basis:
            v -= np.dot(v, b) * b
        norm = np.linalg.norm(v)
        if norm < 1e-8 * np.sqrt(v.size):
            raise ValueError("template orthogonalization impossible: too many "
                             "templates for the available band")
        basis.append(v / norm)
    return basis


def _layout_masks(num_families, models_per_family, height, width, keep_fraction):
    """Per-draw spectral cells: (family_masks, model_masks, family_of_draw).

    The default 3x4 shape uses the tuned orientation-cell layout above.
    Any other shape falls back to radial rings split into angular wedges:
    family ``f`` owns ring ``f``, wedge 0 carries the family template and
    the remaining wedges its members. Model masks are listed in draw
    order; ``family_of_draw[q]`` says which family the q-th draw joins.
    """
    if (num_families, models_per_family) == (3, 4):
        fam_masks, model_masks = [], []
        for deg in _FAMILY_CELL_DEG + _MODEL_CELL_DEG:
            cell = orientation_cell(height, width, deg, _CELL_HALF_DEG,
                                    keep_fraction)
            if not cell.any():
                raise ValueError(f"orientation cell at {deg:g} deg is empty for "
                                 f"{height}x{width} images: too many templates "
                                 "for the available band")
            (fam_masks if len(fam_masks) < 3 else model_masks).append(cell)
        return fam_masks, model_masks, list(_MODEL_CELL_FAMILY)
    rings = ring_masks(height, width, num_families, keep_fraction)
    wedges = [sector_masks(height, width, models_per_family + 1,
                           keep_fraction, base_mask=ring) for ring in rings]
    fam_masks = [wedges[f][0] for f in range(num_families)]
    model_masks = [wedges[f][1 + m] for f in range(num_families)
                   for m in range(models_per_family)]
    family_of_draw = [f for f in range(num_families)
                      for _ in range(models_per_family)]
    return fam_masks, model_masks, family_of_draw


def build_zoo(num_families, models_per_family, height=32, width=32,
              family_strength=0.02, model_strength=0.05, noise_sigma=0.02,
              images_per_model=2048, seed=0, include_real=True,
              keep_fraction=TEMPLATE_BAND_KEEP) -> ZooManifest:
    """Construct a zoo of ``num_families`` x ``models_per_family`` processes.

    Templates are seeded random-phase fields with flat spectra, each
    restricted to its own high-band spectral cell (see ``_layout_masks``
    for how cells are assigned). That mirrors generator lineages, where an
    architecture pins artifacts near characteristic frequencies and
    instances differ in orientation and detail. Disjoint spectral support
    makes distinct templates exactly orthogonal; a joint Gram-Schmidt pass
    (families first, then models, then the unstamped "real" process) guards
    the invariant numerically. Every template is zero-mean with unit RMS.
    """
    if num_families < 1 or models_per_family < 1:
        raise ValueError("need at least one family and one model per family")
    if height < 8 or width < 8:
        raise ValueError(f"images must be at least 8x8, got {height}x{width}")
    num_models = num_families * models_per_family
    if num_models > height * width:
        raise ValueError(f"{num_families} x {models_per_family} models exceed "
                         f"{height}x{width} pixels: orthogonalization impossible")
    band = highband_mask(height, width, keep_fraction)
    n_fields = num_families + num_models + (1 if include_real else 0)
    if n_fields > int(band.sum()):
        raise ValueError(f"{n_fields} templates exceed the {int(band.sum())}-bin "
                         f"high band: orthogonalization impossible")
    fam_masks, model_masks, family_of_draw = _layout_masks(
        num_families, models_per_family, height, width, keep_fraction)

    rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    fields = [_phase_field(rng, height, width, m).ravel() for m in fam_masks]
    fields += [_phase_field(rng, height, width, m).ravel() for m in model_masks]
    if include_real:
        # never stamped, so it may roam the whole band; Gram-Schmidt below
        # still makes it exactly orthogonal to every planted template
        fields.append(_phase_field(rng, height, width, band).ravel())
    basis = _gram_schmidt(fields)

    def as_template(vec):
        t = vec.reshape(height, width).copy()
        t -= t.mean()
        return t / np.sqrt(np.mean(t ** 2))

    family_templates = [as_template(basis[i]) for i in range(num_families)]
    # draws are interleaved across families; member m of family f is the
    # m-th draw assigned to f, so model_ids stay fam-major regardless
    draws_of_family = {f: [q for q, fq in enumerate(family_of_draw) if fq == f]
                       for f in range(num_families)}
    model_templates = [as_template(basis[num_families + q])
                       for f in range(num_families) for q in draws_of_family[f]]

    specs = []
    for f in range(num_families):
        for m in range(models_per_family):
            idx = f * models_per_family + m
            model_seed = int(np.random.SeedSequence([seed, 1, idx]).generate_state(1)[0])
            specs.append(SyntheticModelSpec(
                model_id=f"fam{f}_gen{m}",
                family_id=f"fam{f}",
                model_template=model_templates[idx],
                family_template=family_templates[f],
                model_strength=float(model_strength),
                family_strength=float(family_strength),
                noise_sigma=float(noise_sigma),
                seed=model_seed,
            ))

    real_spec = None
    if include_real:
        real_seed = int(np.random.SeedSequence([seed, 1, num_models]).generate_state(1)[0])
        real_spec = SyntheticModelSpec(
            model_id="real",
            family_id="real",
            model_template=as_template(basis[-1]),
            family_template=as_template(basis[-1]),
            model_strength=0.0,
            family_strength=0.0,
            noise_sigma=float(noise_sigma),
            seed=real_seed,
        )

    manifest = ZooManifest(
        specs=specs,
        height=height,
        width=width,
        images_per_model=int(images_per_model),
        base_seed=int(seed),
        real_spec=real_spec,
        keep_fraction=float(keep_fraction),
        build_args={
            "num_families": int(num_families),
            "models_per_family": int(models_per_family),
            "family_strength": float(family_strength),
            "model_strength": float(model_strength),
            "noise_sigma": float(noise_sigma),
            "include_real": bool(include_real),
        },
    )
    manifest.validate()
    return manifest


def sample_image(spec: SyntheticModelSpec, rng, base=None):
    """Draw one image: clamp(base + family and model stamps + noise, 0, 1).

    ``base`` defaults to a fresh smooth field from ``rng``; passing an
    explicit raster pins the base (used when checking exact recoverability).
    """
    h, w = spec.model_template.shape
    if base is None:
        base = smooth_base(h, w, rng)
    img = (base
           + spec.family_strength * spec.family_template
           + spec.model_strength * spec.model_template)
    if spec.noise_sigma > 0.0:
        img = img + spec.noise_sigma * rng.standard_normal((h, w))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def model_stream(manifest: ZooManifest, spec: SyntheticModelSpec):
    """The independent random stream driving one model's image sequence."""
    return np.random.default_rng(np.random.SeedSequence([manifest.base_seed, 2, spec.seed]))


def sample_model_images(manifest: ZooManifest, spec: SyntheticModelSpec, count=None):
    """Draw ``count`` images (default: the manifest's images_per_model)."""
    count = manifest.images_per_model if count is None else int(count)
    if count < 1:
        raise ValueError("empty dataset: need at least one image per model")
    rng = model_stream(manifest, spec)
    return np.stack([sample_image(spec, rng) for _ in range(count)])


def generate_dataset(manifest: ZooManifest, out_dir, force=False):
    """Materialize one archive per process plus the manifest file.

    Counts are verified by re-reading every archive; the write is atomic per
    file. Returns the manifest path.
    """
    from . import dataio

    manifest.validate()
    os.makedirs(out_dir, exist_ok=True)
    existing = [p for p in os.listdir(out_dir) if not p.startswith(".")]
    if existing and not force:
        raise FileExistsError(f"output directory {out_dir} is not empty (use force)")

    for spec in manifest.all_specs():
        images = sample_model_images(manifest, spec)
        path = os.path.join(out_dir, f"{spec.model_id}.ffds")
        dataio.write_archive(path, images)
        back = dataio.read_archive(path)
        if back.shape[0] != manifest.images_per_model:
            raise IOError(f"count mismatch after writing {path}: "
                          f"{back.shape[0]} != {manifest.images_per_model}")
    manifest_path = os.path.join(out_dir, "manifest.json")
    dataio.write_manifest(manifest_path, manifest)
    return manifest_path
