"""Synthetic brain-like phantoms, per-site datasets, splits, PGM files and manifests."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .core import BinaryMask, Image2D, RngStream
from .metrics import dilate


@dataclass(frozen=True)
class PhantomSpec:
    width: int = 64
    height: int = 64
    blobs_min: int = 1
    blobs_max: int = 4
    # ellipse semi-axes as fractions of the image size
    axis_min: float = 0.09
    axis_max: float = 0.16
    gm_ring: int = 4
    mu_wm: float = 180.0
    mu_gm: float = 120.0
    mu_bg: float = 30.0
    sigma: float = 20.0
    max_value: float = 255.0
    seed: int = 0

    def __post_init__(self):
        if not self.mu_bg < self.mu_gm < self.mu_wm:
            raise ValueError("need mu_bg < mu_gm < mu_wm")
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if not 1 <= self.blobs_min <= self.blobs_max:
            raise ValueError("bad blob count range")
        if self.width < 8 or self.height < 8:
            raise ValueError("phantom must be at least 8x8")


@dataclass(frozen=True)
class Sample:
    image: Image2D
    gt: BinaryMask


@dataclass
class SiteData:
    site_id: int
    samples: list[Sample]
    train_idx: list[int] = field(default_factory=list)
    test_idx: list[int] = field(default_factory=list)

    @property
    def train(self) -> list[Sample]:
        return [self.samples[i] for i in self.train_idx]

    @property
    def test(self) -> list[Sample]:
        return [self.samples[i] for i in self.test_idx]


def _wm_region(spec: PhantomSpec, gen: np.random.Generator) -> np.ndarray:
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    region = np.zeros((h, w), dtype=bool)
    n = int(gen.integers(spec.blobs_min, spec.blobs_max + 1))
    size = min(h, w)
    for _ in range(n):
        cy = gen.uniform(0.3, 0.7) * h
        cx = gen.uniform(0.3, 0.7) * w
        a = gen.uniform(spec.axis_min, spec.axis_max) * size
        b = gen.uniform(spec.axis_min, spec.axis_max) * size
        t = gen.uniform(0, np.pi)
        dy, dx = yy - cy, xx - cx
        u = dx * np.cos(t) + dy * np.sin(t)
        v = -dx * np.sin(t) + dy * np.cos(t)
        region |= (u / a) ** 2 + (v / b) ** 2 <= 1.0
    return region


def generate_phantom(spec: PhantomSpec, rng) -> Sample:
    """One phantom slice: elliptical WM blobs, a GM ring around them, background.

    Intensities are Normal(mu_region, sigma), rounded to integers and clamped
    to [0, max_value]; the ground truth is the WM geometry.
    ``rng`` may be an RngStream or a numpy Generator.
    """
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    wm = _wm_region(spec, gen)
    gm = dilate(BinaryMask(wm), spec.gm_ring).data.astype(bool) & ~wm
    mu = np.full(wm.shape, spec.mu_bg)
    mu[gm] = spec.mu_gm
    mu[wm] = spec.mu_wm
    noise = gen.standard_normal(wm.shape)
    # + 0.0 turns rounded -0.0 into +0.0 so PGM round-trips are byte-identical
    img = np.clip(np.rint(mu + spec.sigma * noise), 0, spec.max_value) + 0.0
    return Sample(Image2D(img), BinaryMask(wm))


def generate_site_datasets(distribution: Sequence[int], slices_per_subject: int = 20,
                           spec: PhantomSpec = PhantomSpec()) -> list[list[Sample]]:
    """Samples per site; subject j (numbered globally across sites) draws all
    of its slices from RngStream(spec.seed, j)."""
    if not distribution or any(c < 1 for c in distribution):
        raise ValueError("every site needs at least one subject")
    if slices_per_subject < 1:
        raise ValueError("slices_per_subject must be >= 1")
    sites = []
    subject = 0
    for count in distribution:
        samples = []
        for _ in range(count):
            gen = RngStream(spec.seed, subject).generator()
            samples.extend(generate_phantom(spec, gen) for _ in range(slices_per_subject))
            subject += 1
        sites.append(samples)
    return sites


def split_train_test(samples: Sequence, frac: float = 0.8, rng=None):
    """Seeded shuffle, first floor(n*frac) to train. Returns (train, test) index lists."""
    n = len(samples)
    if n < 2:
        raise ValueError("need at least 2 samples to split")
    if not 0 < frac < 1:
        raise ValueError("frac must lie in (0, 1)")
    gen = (rng or RngStream(0, 0))
    gen = gen.generator() if isinstance(gen, RngStream) else gen
    perm = gen.permutation(n)
    k = int(np.floor(n * frac))
    return sorted(perm[:k].tolist()), sorted(perm[k:].tolist())


def build_sites(distribution, slices_per_subject=20, spec=PhantomSpec(), frac=0.8) -> list[SiteData]:
    sites = []
    for i, samples in enumerate(generate_site_datasets(distribution, slices_per_subject, spec), start=1):
        tr, te = split_train_test(samples, frac, RngStream(spec.seed, 2**32 + i))
        sites.append(SiteData(i, samples, tr, te))
    return sites


def sample_digest(s: Sample) -> str:
    h = hashlib.sha256()
    h.update(s.image.data.tobytes())
    h.update(s.gt.data.tobytes())
    return h.hexdigest()


# --------------------------------------------------------------------------
# PGM

class PGMError(ValueError):
    pass


class UnsupportedFormatError(PGMError):
    pass


class MalformedHeaderError(PGMError):
    pass


class TruncatedDataError(PGMError):
    pass


def pgm_write(obj, path) -> None:
    """Write an Image2D or BinaryMask as binary P5 (masks as 0/255)."""
    if isinstance(obj, BinaryMask):
        arr = obj.data.astype(np.uint8) * 255
    else:
        data = obj.data if isinstance(obj, Image2D) else np.asarray(obj)
        if data.ndim != 2:
            raise ValueError("PGM needs a 2D array")
        if np.any(data < 0) or np.any(data > 255) or np.any(data != np.rint(data)):
            raise ValueError("PGM values must be integers in [0, 255]")
        arr = data.astype(np.uint8)
    h, w = arr.shape
    with open(path, "wb") as f:
        f.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        f.write(arr.tobytes())


def _parse_header(buf: bytes):
    if buf[:2] != b"P5":
        raise UnsupportedFormatError(f"unsupported PGM magic {buf[:2]!r}")
    tokens = []
    pos = 2
    n = len(buf)
    while len(tokens) < 3:
        while pos < n and buf[pos:pos + 1].isspace():
            pos += 1
        if pos < n and buf[pos:pos + 1] == b"#":
            while pos < n and buf[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < n and not buf[pos:pos + 1].isspace() and buf[pos:pos + 1] != b"#":
            pos += 1
        if start == pos:
            raise MalformedHeaderError("PGM header ended early")
        tok = buf[start:pos]
        if not tok.isdigit():
            raise MalformedHeaderError(f"bad PGM header token {tok!r}")
        tokens.append(int(tok))
    if pos >= n or not buf[pos:pos + 1].isspace():
        raise MalformedHeaderError("missing whitespace after PGM maxval")
    w, h, maxval = tokens
    if w <= 0 or h <= 0 or not 0 < maxval < 256:
        raise MalformedHeaderError(f"unsupported PGM geometry/maxval {tokens}")
    return w, h, maxval, pos + 1


def pgm_read(path, mask: bool = False):
    """Read a P5 file as Image2D, or as BinaryMask (0/255 -> 0/1) when ``mask``."""
    buf = Path(path).read_bytes()
    w, h, _, off = _parse_header(buf)
    data = buf[off:off + w * h]
    if len(data) < w * h:
        raise TruncatedDataError(f"expected {w * h} pixel bytes, got {len(data)}")
    arr = np.frombuffer(data, dtype=np.uint8).reshape(h, w)
    if mask:
        if not np.all((arr == 0) | (arr == 255)):
            raise PGMError("mask file must contain only 0 and 255")
        return BinaryMask(arr == 255)
    return Image2D(arr.astype(np.float32))


# --------------------------------------------------------------------------
# Manifest

MANIFEST_NAME = "manifest.json"


def write_dataset(out_dir, sites: list[SiteData], spec: PhantomSpec,
                  distribution, slices_per_subject: int) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for site in sites:
        sdir = out / f"site{site.site_id}"
        sdir.mkdir(exist_ok=True)
        files = []
        train = set(site.train_idx)
        split = ["train" if i in train else "test" for i in range(len(site.samples))]
        for i, s in enumerate(site.samples):
            img_name = f"site{site.site_id}/img_{i:04d}.pgm"
            gt_name = f"site{site.site_id}/gt_{i:04d}.pgm"
            pgm_write(s.image, out / img_name)
            pgm_write(s.gt, out / gt_name)
            files.append({"image": img_name, "gt": gt_name})
        n_train = len(site.train_idx)
        entries.append({
            "id": site.site_id,
            "files": files,
            "n_drl": n_train,
            "n_rm": n_train,
            "split": split,
        })
    manifest = {
        "seed": spec.seed,
        "distribution": list(distribution),
        "slices_per_subject": slices_per_subject,
        "spec": asdict(spec),
        "sites": entries,
    }
    (out / MANIFEST_NAME).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def find_manifest(path) -> Path:
    """Locate the manifest for a dataset root or a site directory."""
    p = Path(path)
    for cand in (p / MANIFEST_NAME, p.parent / MANIFEST_NAME):
        if cand.is_file():
            return cand
    raise FileNotFoundError(f"no {MANIFEST_NAME} found at {p} or its parent")


def load_manifest(path) -> dict:
    return json.loads(Path(path).read_text())


def load_site(manifest_path, site_id: int) -> SiteData:
    root = Path(manifest_path).parent
    manifest = load_manifest(manifest_path)
    for entry in manifest["sites"]:
        if entry["id"] == site_id:
            samples = [Sample(pgm_read(root / f["image"]), pgm_read(root / f["gt"], mask=True))
                       for f in entry["files"]]
            split = entry["split"]
            tr = [i for i, s in enumerate(split) if s == "train"]
            te = [i for i, s in enumerate(split) if s == "test"]
            return SiteData(site_id, samples, tr, te)
    raise KeyError(f"site {site_id} not in manifest")


def site_id_from_dir(site_dir) -> int:
    name = os.path.basename(os.path.normpath(str(site_dir)))
    if not name.startswith("site") or not name[4:].isdigit():
        raise ValueError(f"cannot infer site id from directory {site_dir!r}")
    return int(name[4:])
