"""Synthetic EQE datasets: simulate, rasterize, normalize, persist.

On-disk layout of a dataset directory::

    manifest.json               counts, geometry, sampler, grid, checksums
    stack.stack                 the stack template used
    samples.csv / .meta.json    the sampled thickness vectors
    {split}.eqeimg              packed float32 images
    {split}_targets.csv         thickness / upper bound, header = layer names
    {split}_thickness_nm.csv    raw thicknesses, nm
    {split}_eqe.csv             simulated EQE values, forward then reverse

Splits are contiguous in sample-index order: train, then val, then test.
"""

from __future__ import annotations

import csv
import hashlib
import json
import shutil
import struct
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .materials import BAND_NM
from .sampling import ThicknessBox, sample_box, save_sample_set
from .stacks import StackTemplate, parse_stack_text
from .tmm import DEFAULT_GRID, EQECurve, TMMError, compute_eqe

IMAGE_MAGIC = b"EQEIMG1\0"
SPLITS = ("train", "val", "test")
DEFAULT_WIDTH, DEFAULT_HEIGHT = 37, 28


class DatasetError(RuntimeError):
    pass


# ---------------------------------------------------------------- rasterize


def _round_half_down(x):
    """Nearest integer, ties toward the smaller value."""
    return np.ceil(np.asarray(x) - 0.5).astype(int)


def _line(c0, r0, c1, r1):
    """Bresenham pixels from (c0, r0) to (c1, r1), both ends included."""
    dc, dr = abs(c1 - c0), -abs(r1 - r0)
    sc = 1 if c0 < c1 else -1
    sr = 1 if r0 < r1 else -1
    err = dc + dr
    while True:
        yield c0, r0
        if c0 == c1 and r0 == r1:
            return
        e2 = 2 * err
        if e2 >= dr:
            err += dr
            c0 += sc
        if e2 <= dc:
            err += dc
            r0 += sr


def rasterize(curve: EQECurve, width: int = DEFAULT_WIDTH, height: int = DEFAULT_HEIGHT) -> np.ndarray:
    """Draw EQE trace(s) into a ``(channels, height, width)`` float32 image.

    Wavelength 300..800 nm maps linearly onto columns 0..width-1 and EQE
    1..0 onto rows 0..height-1 (row 0 is the top).  Positions are rounded
    to the nearest pixel with ties going to the smaller index.  Consecutive
    samples are joined with Bresenham segments so every column is lit.
    """
    if width < 2 or height < 2:
        raise ValueError(f"image must be at least 2x2, got {width}x{height}")
    wl = curve.wavelengths
    if wl[0] != BAND_NM[0] or wl[-1] != BAND_NM[1]:
        raise ValueError(f"EQE curve must span exactly {BAND_NM[0]:g}-{BAND_NM[1]:g} nm")
    chans = curve.channels
    img = np.zeros((len(chans), height, width), dtype=np.float32)
    cols = _round_half_down((wl - BAND_NM[0]) / (BAND_NM[1] - BAND_NM[0]) * (width - 1))
    for c, values in enumerate(chans):
        rows = _round_half_down((1.0 - values) * (height - 1))
        img[c, rows[0], cols[0]] = 1.0
        for i in range(len(cols) - 1):
            for x, y in _line(cols[i], rows[i], cols[i + 1], rows[i + 1]):
                img[c, y, x] = 1.0
    return img


# ---------------------------------------------------------------- targets


def _check_dim(x, box):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != box.dim:
        raise ValueError(f"vector dimension {x.shape[-1]} does not match box dimension {box.dim}")
    return x


def normalize_targets(thicknesses, box: ThicknessBox) -> np.ndarray:
    """Thickness divided by the layer's upper bound."""
    return _check_dim(thicknesses, box) / np.array(box.upper)


def denormalize_targets(fractions, box: ThicknessBox) -> np.ndarray:
    return _check_dim(fractions, box) * np.array(box.upper)


# ---------------------------------------------------------------- file formats


def write_images(path, images: np.ndarray) -> None:
    images = np.ascontiguousarray(images, dtype="<f4")
    count, channels, height, width = images.shape
    with open(path, "wb") as fh:
        fh.write(IMAGE_MAGIC)
        fh.write(struct.pack("<4I", count, width, height, channels))
        fh.write(images.tobytes())


def read_images(path) -> np.ndarray:
    """Inverse of :func:`write_images`: ``(count, channels, height, width)`` float32."""
    raw = Path(path).read_bytes()
    if raw[:8] != IMAGE_MAGIC:
        raise DatasetError(f"{path}: not an EQE image pack (bad magic)")
    count, width, height, channels = struct.unpack_from("<4I", raw, 8)
    data = np.frombuffer(raw, dtype="<f4", offset=24)
    if data.size != count * width * height * channels:
        raise DatasetError(f"{path}: truncated image pack")
    return data.reshape(count, channels, height, width).astype(np.float32)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return rows[0], np.array([[float(c) for c in r] for r in rows[1:]], dtype=float).reshape(len(rows) - 1, len(rows[0]))


def write_eqe_csv(path, curve: EQECurve) -> None:
    """Single curve as ``wavelength_nm,forward[,reverse]``."""
    header = ["wavelength_nm", "forward"] + (["reverse"] if curve.reverse is not None else [])
    cols = [curve.wavelengths, curve.forward] + ([curve.reverse] if curve.reverse is not None else [])
    _write_csv(path, header, zip(*cols))


def read_eqe_csv(path) -> EQECurve:
    try:
        header, data = _read_csv(path)
    except (OSError, ValueError, IndexError) as exc:
        raise DatasetError(f"{path}: cannot parse EQE CSV ({exc})") from None
    if header[:2] != ["wavelength_nm", "forward"] or len(header) not in (2, 3):
        raise DatasetError(f"{path}: header must be wavelength_nm,forward[,reverse]")
    try:
        return EQECurve(data[:, 0], data[:, 1], data[:, 2] if len(header) == 3 else None)
    except ValueError as exc:
        raise DatasetError(f"{path}: {exc}") from None


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------- generation


@dataclass(frozen=True)
class SamplerConfig:
    method: str = "sobol"
    seed_or_skip: int = 0


def split_counts(n_total: int, fractions) -> tuple[int, int, int]:
    fr = [float(f) for f in fractions]
    if len(fr) != 3 or any(f < 0 for f in fr) or abs(sum(fr) - 1.0) > 1e-9:
        raise ValueError(f"split fractions must be three non-negative numbers summing to 1, got {fractions}")
    n_train = int(round(fr[0] * n_total))
    n_val = int(round(fr[1] * n_total))
    n_test = n_total - n_train - n_val
    if n_test < 0:
        raise ValueError("split fractions round to more records than available")
    return n_train, n_val, n_test


def simulate_record(args):
    """Worker: one thickness vector -> (eqe channels, image)."""
    template, library, thicknesses, grid, width, height = args
    stack = template.instantiate(library, thicknesses)
    try:
        curve = compute_eqe(stack, grid, template.dual_side)
    except (TMMError, FloatingPointError) as exc:
        raise DatasetError(f"TMM failed for thickness vector {list(map(float, thicknesses))} nm: {exc}") from exc
    return np.stack(curve.channels), rasterize(curve, width, height)


def generate(
    template: StackTemplate,
    library,
    out_dir,
    n_total: int,
    sampler: SamplerConfig = SamplerConfig(),
    fractions=(10 / 12, 1 / 12, 1 / 12),
    grid=DEFAULT_GRID,
    width: int = DEFAULT_WIDTH,
    height: int = DEFAULT_HEIGHT,
    workers: int = 1,
) -> dict:
    """Simulate and write a complete dataset; returns the manifest dict.

    Output is built in a scratch directory and moved into place only on
    success, so a failure leaves no partial dataset behind.  Files are
    byte-identical for identical arguments regardless of ``workers``.
    """
    if n_total < 3:
        raise ValueError("n_total must be >= 3")
    counts = split_counts(n_total, fractions)
    grid = np.asarray(grid, dtype=float)
    samples = sample_box(template.box, sampler.method, n_total, sampler.seed_or_skip)
    targets = normalize_targets(samples.points, template.box)

    jobs = [(template, library, pt, grid, width, height) for pt in samples.points]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(simulate_record, jobs, chunksize=32))
    else:
        results = [simulate_record(j) for j in jobs]
    eqe = np.stack([r[0] for r in results])  # (N, C, W)
    images = np.stack([r[1] for r in results])

    out_dir = Path(out_dir)
    out_dir.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out_dir.parent))
    try:
        (tmp / "stack.stack").write_text(template.to_text())
        save_sample_set(samples, tmp / "samples.csv")
        eqe_header = [f"forward_{w!r}" for w in grid]
        if template.dual_side:
            eqe_header += [f"reverse_{w!r}" for w in grid]
        splits, start = {}, 0
        for name, cnt in zip(SPLITS, counts):
            sl = slice(start, start + cnt)
            write_images(tmp / f"{name}.eqeimg", images[sl])
            _write_csv(tmp / f"{name}_targets.csv", template.box.names, targets[sl])
            _write_csv(tmp / f"{name}_thickness_nm.csv", template.box.names, samples.points[sl])
            _write_csv(tmp / f"{name}_eqe.csv", eqe_header, eqe[sl].reshape(cnt, len(eqe_header)))
            splits[name] = {"count": cnt, "start": start, "stop": start + cnt}
            start += cnt
        manifest = {
            "format": "perovnet-dataset-1",
            "total": n_total,
            "splits": splits,
            "split_order": "index",
            "box": template.box.as_dict(),
            "sampler": {k: v for k, v in samples.metadata().items() if k != "box"},
            "active_layer": template.active_layer,
            "dual_side": template.dual_side,
            "wavelengths_nm": [float(w) for w in grid],
            "image": {"width": width, "height": height, "channels": template.channels},
        }
        manifest["checksums"] = {
            p.name: sha256_file(p) for p in sorted(tmp.iterdir()) if p.name != "manifest.json"
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        if out_dir.exists():
            shutil.rmtree(out_dir)
        tmp.rename(out_dir)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return manifest


# ---------------------------------------------------------------- loading


@dataclass
class Split:
    images: np.ndarray  # (N, C, H, W) float32
    targets: np.ndarray  # normalized, (N, D)
    thickness_nm: np.ndarray
    eqe: np.ndarray  # (N, C, n_wavelengths)
    indices: np.ndarray

    def __len__(self):
        return len(self.targets)


def load_manifest(path, verify: bool = True) -> dict:
    path = Path(path)
    mpath = path / "manifest.json"
    try:
        manifest = json.loads(mpath.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"{mpath}: cannot read manifest ({exc})") from None
    if verify:
        verify_dataset(path, manifest)
    return manifest


def verify_dataset(path, manifest=None) -> None:
    """Raise :class:`DatasetError` if any file's checksum disagrees with the manifest."""
    path = Path(path)
    if manifest is None:
        manifest = load_manifest(path, verify=False)
    for name, digest in manifest["checksums"].items():
        f = path / name
        if not f.exists():
            raise DatasetError(f"{f}: listed in manifest but missing")
        if sha256_file(f) != digest:
            raise DatasetError(f"{f}: checksum mismatch, file is corrupted or modified")


def dataset_template(path) -> StackTemplate:
    return parse_stack_text((Path(path) / "stack.stack").read_text(), str(Path(path) / "stack.stack"))


def load_split(path, split: str, manifest=None) -> Split:
    path = Path(path)
    if split not in SPLITS:
        raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
    if manifest is None:
        manifest = load_manifest(path)
    info = manifest["splits"][split]
    images = read_images(path / f"{split}.eqeimg")
    _, targets = _read_csv(path / f"{split}_targets.csv")
    _, nm = _read_csv(path / f"{split}_thickness_nm.csv")
    _, eqe = _read_csv(path / f"{split}_eqe.csv")
    nw = len(manifest["wavelengths_nm"])
    eqe = eqe.reshape(len(eqe), manifest["image"]["channels"], nw)
    return Split(images, targets, nm, eqe, np.arange(info["start"], info["stop"]))


def record_curve(manifest, split: Split, i: int) -> EQECurve:
    """EQE curve of record ``i`` within a loaded split."""
    e = split.eqe[i]
    return EQECurve(manifest["wavelengths_nm"], e[0], e[1] if len(e) > 1 else None)
