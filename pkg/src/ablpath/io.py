"""File formats: ``.fgrid`` arrays, PNG images, model files, corpus manifests.

``.fgrid`` is one UTF-8 JSON header line followed by a little-endian
float32 payload laid out as (T, H, W, C), row-major.
"""
from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from .classifier import MLPClassifier
from .core import AblationPath, Image, SaliencyMap
from .corpus import AnnotatedSample

LAYOUT = "row-major t-major, then H,W,C"


class FormatError(ValueError):
    """A file exists but does not hold what its format promises."""


def write_fgrid(path, values) -> None:
    """Write an array of rank 2 (H, W), 3 (H, W, C) or 4 (T, H, W, C)."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None, :, :, None]
    elif arr.ndim == 3:
        arr = arr[None]
    elif arr.ndim != 4:
        raise ValueError(f"fgrid payload must have rank 2..4, got shape {arr.shape}")
    T, H, W, C = arr.shape
    header = {"h": H, "w": W, "c": C, "t": T, "dtype": "f32", "layout": LAYOUT}
    with open(path, "wb") as f:
        f.write(json.dumps(header, separators=(",", ":")).encode("utf-8") + b"\n")
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_fgrid(path) -> np.ndarray:
    """Read an ``.fgrid`` file as a float64 (T, H, W, C) array."""
    with open(path, "rb") as f:
        line = f.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise FormatError(f"{path}: bad fgrid header") from exc
        payload = f.read()
    if not isinstance(header, dict) or header.get("dtype") != "f32" or header.get("layout") != LAYOUT:
        raise FormatError(f"{path}: unsupported fgrid header {header!r}")
    try:
        shape = tuple(int(header[k]) for k in ("t", "h", "w", "c"))
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"{path}: incomplete fgrid header {header!r}") from exc
    n = int(np.prod(shape))
    if len(payload) != 4 * n:
        raise FormatError(f"{path}: payload has {len(payload)} bytes, header promises {4 * n}")
    return np.frombuffer(payload, dtype="<f4").astype(np.float64).reshape(shape)


def save_path(path, ablation_path: AblationPath) -> None:
    write_fgrid(path, ablation_path.masks[..., None])


def load_path(path) -> AblationPath:
    arr = read_fgrid(path)
    if arr.shape[3] != 1:
        raise FormatError(f"{path}: a path file has one channel, got {arr.shape[3]}")
    return AblationPath(arr[..., 0])


def load_image(path) -> Image:
    """Image from PNG (8-bit, mapped to [0, 1]) or single-frame ``.fgrid``."""
    path = Path(path)
    if path.suffix.lower() == ".png":
        return read_png(path)
    arr = read_fgrid(path)
    if arr.shape[0] != 1:
        raise FormatError(f"{path}: expected a single frame, got t={arr.shape[0]}")
    return Image(arr[0])


def read_png(path) -> Image:
    try:
        with PILImage.open(path) as im:
            if im.mode not in ("L", "RGB"):
                im = im.convert("RGB" if im.mode in ("RGBA", "P", "CMYK") else "L")
            arr = np.asarray(im, dtype=np.float64) / 255.0
    except PILImage.UnidentifiedImageError as exc:
        raise FormatError(f"{path}: not a readable PNG") from exc
    return Image.from_array(arr)


def to_uint8(values, rescale: bool = False) -> np.ndarray:
    """Map values to 8 bits: clip to [0, 1], or linearly rescale min..max."""
    v = np.asarray(values, dtype=np.float64)
    if rescale:
        lo, hi = float(v.min()), float(v.max())
        v = (v - lo) / (hi - lo) if hi > lo else np.zeros_like(v)
    return np.round(np.clip(v, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(path, values, rescale: bool = False) -> None:
    v = to_uint8(values, rescale)
    if v.ndim == 3 and v.shape[2] == 1:
        v = v[:, :, 0]
    PILImage.fromarray(v).save(path, format="PNG")


def save_heatmap(stem, smap: SaliencyMap) -> None:
    """``stem.fgrid`` with the raw values and ``stem.png`` rescaled to [0, 255]."""
    write_fgrid(f"{stem}.fgrid", smap.values)
    write_png(f"{stem}.png", smap.values, rescale=True)


MODEL_FORMAT = "ablpath-mlp"


def save_model(path, model: MLPClassifier) -> None:
    """JSON header at ``path`` plus one ``.fgrid`` blob per parameter beside it."""
    path = Path(path)
    stem = path.with_suffix("")
    blobs = {}
    for name, arr in model.params.items():
        blob = stem.parent / f"{stem.name}.{name}.fgrid"
        write_fgrid(blob, arr.reshape(1, -1) if arr.ndim == 1 else arr)
        blobs[name] = blob.name
    header = {
        "format": MODEL_FORMAT,
        "version": 1,
        "input_shape": list(model.input_shape),
        "hidden": int(model.W1.shape[1]),
        "n_classes": int(model.n_classes),
        "activation": model.activation,
        "meta": model.meta,
        "params": blobs,
    }
    path.write_text(json.dumps(header, indent=2) + "\n")


def load_model(path) -> MLPClassifier:
    path = Path(path)
    try:
        header = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: model header is not JSON") from exc
    if header.get("format") != MODEL_FORMAT:
        raise FormatError(f"{path}: not an {MODEL_FORMAT} model file")
    params = {}
    for name in ("W1", "b1", "W2", "b2"):
        arr = read_fgrid(path.parent / header["params"][name])[0, :, :, 0]
        params[name] = arr[0] if name.startswith("b") else arr
    model = MLPClassifier(params["W1"], params["b1"], params["W2"], params["b2"],
                          header["input_shape"], header["activation"])
    model.meta = header.get("meta", {})
    return model


def save_corpus(directory, samples: list[AnnotatedSample], name: str = "manifest.jsonl") -> Path:
    """Write each image as ``images/NNNNN.fgrid`` and one JSON line per sample."""
    directory = Path(directory)
    (directory / "images").mkdir(parents=True, exist_ok=True)
    manifest = directory / name
    with open(manifest, "w") as f:
        for i, s in enumerate(samples):
            rel = f"images/{i:05d}.fgrid"
            write_fgrid(directory / rel, s.image.values)
            rec = {
                "id": i,
                "image": rel,
                "label": s.label,
                "object_box": list(s.object_box),
                "difficulty": s.difficulty,
                "shape_area": s.shape_area,
                "distractors": s.distractors,
            }
            f.write(json.dumps(rec) + "\n")
    return manifest


def load_corpus(manifest) -> list[AnnotatedSample]:
    manifest = Path(manifest)
    root = manifest.parent
    samples = []
    with open(manifest) as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                samples.append(AnnotatedSample(
                    image=load_image(root / rec["image"]),
                    label=int(rec["label"]),
                    object_box=tuple(int(v) for v in rec["object_box"]),
                    difficulty=rec["difficulty"],
                    shape_area=int(rec.get("shape_area", 0)),
                    distractors=int(rec.get("distractors", 0)),
                ))
            except (KeyError, TypeError, json.JSONDecodeError) as exc:
                raise FormatError(f"{manifest}:{lineno}: bad manifest record") from exc
    return samples


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, indent=2) + "\n")


def ensure_dir(path) -> Path:
    os.makedirs(path, exist_ok=True)
    return Path(path)
