"""
Dataset manifests and loading.

A manifest is a plain-text file with one ``id<TAB>rgb<TAB>depth<TAB>labels`` line per
sample; relative paths resolve against the manifest's folder.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

from app import settings
from app.errors import DataError
from app.services.data_pipeline import RgbdSample, read_sample, synth_scene, write_sample

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    rgb: Path
    depth: Path
    labels: Path


def read_manifest(path) -> List[ManifestEntry]:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"{path}: cannot read manifest ({exc.strerror})") from None
    base = path.parent
    entries = []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
        sample_id, rgb, depth, labels = parts
        entries.append(ManifestEntry(sample_id, base / rgb, base / depth, base / labels))
    logger.debug(f"Read {len(entries)} manifest entries from {path}")
    return entries


def write_manifest(path, entries: List[ManifestEntry]) -> Path:
    """Write entries with paths relative to the manifest folder where possible."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: Path) -> str:
        try:
            return str(Path(p).resolve().relative_to(base))
        except ValueError:
            return str(p)

    lines = [f"{e.id}\t{rel(e.rgb)}\t{rel(e.depth)}\t{rel(e.labels)}" for e in entries]
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_dataset(manifest_path, workers: Optional[int] = None) -> List[RgbdSample]:
    """Read every sample of a manifest, fanning out over worker threads; order is preserved."""
    entries = read_manifest(manifest_path)
    workers = workers or settings.WORKERS
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        samples = list(pool.map(lambda e: read_sample(e.rgb, e.depth, e.labels, sample_id=e.id), entries))
    logger.info(f"Loaded {len(samples)} samples from {manifest_path}")
    return samples


def build_synthetic_split(seed: int, count: int, h: int, w: int, K: int,
                          workers: Optional[int] = None) -> List[RgbdSample]:
    """``count`` synthetic scenes with seeds ``seed, seed + 1, ...``."""
    workers = workers or settings.WORKERS
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        return list(pool.map(lambda i: synth_scene(seed + i, h, w, K), range(count)))


def write_dataset(samples: List[RgbdSample], out_dir) -> Path:
    """Write each sample into ``out_dir/<id>/`` and a manifest next to them."""
    out_dir = Path(out_dir)
    entries = []
    for sample in samples:
        rgb, depth, labels = write_sample(sample, out_dir / sample.id)
        entries.append(ManifestEntry(sample.id, rgb, depth, labels))
    return write_manifest(out_dir / MANIFEST_NAME, entries)
