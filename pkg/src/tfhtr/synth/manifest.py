"""JSON-lines dataset manifests: one {"image", "text", "split"} object per line."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..errors import ConfigError, ParseError
from .imageio import read_image

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class Sample:
    image: str
    text: str
    split: str


@dataclass
class DatasetManifest:
    samples: list[Sample] = field(default_factory=list)
    root: Path = Path(".")     # relative image paths resolve against this

    def __len__(self) -> int:
        return len(self.samples)

    def split(self, name: str) -> "DatasetManifest":
        if name not in SPLITS:
            raise ConfigError(f"unknown split {name!r}")
        return DatasetManifest([s for s in self.samples if s.split == name], self.root)

    @property
    def texts(self) -> list[str]:
        return [s.text for s in self.samples]

    def image_path(self, sample: Sample) -> Path:
        p = Path(sample.image)
        return p if p.is_absolute() else self.root / p

    def load_images(self) -> list[np.ndarray]:
        return [read_image(self.image_path(s)) for s in self.samples]

    def check(self, alphabet=None) -> None:
        """Splits must be disjoint by image; texts must encode under ``alphabet``."""
        seen: dict[str, str] = {}
        for s in self.samples:
            other = seen.setdefault(s.image, s.split)
            if other != s.split:
                raise ParseError(f"image {s.image} appears in both {other} and {s.split}")
        if alphabet is not None:
            for s in self.samples:
                alphabet.encode_chars(s.text)


def parse_manifest(lines, root: Path = Path(".")) -> DatasetManifest:
    samples = []
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise ParseError(f"manifest line {lineno}: invalid JSON ({exc.msg})") from None
        if not isinstance(obj, dict):
            raise ParseError(f"manifest line {lineno}: expected an object")
        missing = [k for k in ("image", "text", "split") if k not in obj]
        if missing:
            raise ParseError(f"manifest line {lineno}: missing {', '.join(missing)}")
        image, text, split = obj["image"], obj["text"], obj["split"]
        if not isinstance(image, str) or not isinstance(text, str):
            raise ParseError(f"manifest line {lineno}: image and text must be strings")
        if split not in SPLITS:
            raise ParseError(f"manifest line {lineno}: split must be one of {SPLITS}, got {split!r}")
        samples.append(Sample(image, text, split))
    manifest = DatasetManifest(samples, root)
    manifest.check()
    return manifest


def load_manifest(path: str | Path, alphabet=None) -> DatasetManifest:
    path = Path(path)
    with open(path, encoding="utf-8") as fh:
        manifest = parse_manifest(fh, path.parent)
    if alphabet is not None:
        manifest.check(alphabet)
    return manifest


def write_manifest(path: str | Path, manifest: DatasetManifest) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in manifest.samples:
            fh.write(json.dumps({"image": s.image, "text": s.text, "split": s.split}, ensure_ascii=False))
            fh.write("\n")


def subset(manifest: DatasetManifest, fraction: float, seed: int) -> DatasetManifest:
    """Keep floor(fraction * n_train) training samples, drawn without replacement.

    Validation and test samples pass through unchanged; relative order is kept.
    """
    if not 0 < fraction <= 1:
        raise ConfigError(f"fraction must be in (0, 1], got {fraction}")
    train_idx = [i for i, s in enumerate(manifest.samples) if s.split == "train"]
    # tolerance so that e.g. 0.29 * 100 counts as 29, not 28.999...
    keep_n = min(math.floor(fraction * len(train_idx) + 1e-9), len(train_idx))
    rng = np.random.default_rng(seed)
    chosen = set(rng.choice(np.array(train_idx, dtype=np.int64), size=keep_n, replace=False).tolist()) \
        if keep_n else set()
    kept = [s for i, s in enumerate(manifest.samples) if s.split != "train" or i in chosen]
    return DatasetManifest(kept, manifest.root)
