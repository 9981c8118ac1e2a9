"""
On-disk dataset format.

A dataset directory holds:
- manifest.txt: key=value lines (task, count, M, N, K, seed, version)
- img_%06d.pgt: one [1, M, N] image blob per sample
- label.csv (classification): header "index,label", one row per sample
- mask_%06d.pgt (segmentation): one [1, M, N] {0,1} mask blob per sample
"""

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Union

import numpy as np

from synthdata.synth import ClsSample, SegSample
from utils.artifact_store import read_manifest, staged_directory, write_manifest
from utils.config import CLASSIFICATION, SEGMENTATION, TASK_ALIASES
from utils.error_manager import DatasetConsistencyError, DatasetFormatError
from utils.logger import setup_logger
from utils.tensor_proto import BLOB_SUFFIX, read_tensor, write_tensor

logger = setup_logger(__name__)

FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.txt"
LABEL_FILE = "label.csv"
IMAGE_PATTERN = "img_{:06d}" + BLOB_SUFFIX
MASK_PATTERN = "mask_{:06d}" + BLOB_SUFFIX

@dataclass
class SynthDataset:
    """Images [count,1,M,N] with labels [count] or masks [count,1,M,N]."""
    task: str
    images: np.ndarray
    seed: int = 0
    num_classes: int = 1
    labels: Optional[np.ndarray] = None
    masks: Optional[np.ndarray] = None
    samples: List[Union[ClsSample, SegSample]] = field(default_factory=list)

    def __len__(self) -> int:
        return int(self.images.shape[0])

    @property
    def image_size(self):
        return tuple(self.images.shape[2:])

    @property
    def channels(self) -> int:
        return int(self.images.shape[1])

    @property
    def targets(self) -> np.ndarray:
        return self.labels if self.task == CLASSIFICATION else self.masks

    def manifest(self) -> Dict[str, object]:
        M, N = self.image_size
        return {"task": "cls" if self.task == CLASSIFICATION else "seg", "count": len(self),
                "M": M, "N": N, "K": self.num_classes, "seed": self.seed, "version": FORMAT_VERSION}

    def subset(self, indices) -> "SynthDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return SynthDataset(
            task=self.task, images=self.images[indices], seed=self.seed, num_classes=self.num_classes,
            labels=None if self.labels is None else self.labels[indices],
            masks=None if self.masks is None else self.masks[indices],
        )

    def batches(self, batch_size: int, rng: Optional[np.random.Generator] = None) -> Iterator[np.ndarray]:
        """Index arrays of at most batch_size; shuffled when rng is given."""
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(self), batch_size):
            yield order[start:start + batch_size]

def from_cls_samples(samples: List[ClsSample], seed: int, K: int) -> SynthDataset:
    return SynthDataset(task=CLASSIFICATION, images=np.stack([s.image for s in samples]), seed=seed,
                        num_classes=K, labels=np.array([s.label for s in samples], dtype=np.int64),
                        samples=list(samples))

def from_seg_samples(samples: List[SegSample], seed: int) -> SynthDataset:
    return SynthDataset(task=SEGMENTATION, images=np.stack([s.image for s in samples]), seed=seed,
                        num_classes=1, masks=np.stack([s.mask for s in samples]), samples=list(samples))

def save_dataset(dataset: SynthDataset, directory: Union[str, Path]) -> Path:
    """Write the dataset atomically (the directory appears complete or not at all)."""
    directory = Path(directory)
    with staged_directory(directory) as staging:
        for i in range(len(dataset)):
            write_tensor(staging / IMAGE_PATTERN.format(i), dataset.images[i])
        if dataset.task == CLASSIFICATION:
            with open(staging / LABEL_FILE, "w", newline="", encoding="utf-8") as f:
                writer = csv.writer(f)
                writer.writerow(["index", "label"])
                for i, label in enumerate(dataset.labels):
                    writer.writerow([i, int(label)])
        else:
            for i in range(len(dataset)):
                write_tensor(staging / MASK_PATTERN.format(i), dataset.masks[i])
        write_manifest(staging / MANIFEST_NAME, dataset.manifest())
    logger.info(f"Saved {len(dataset)}-sample {dataset.task} dataset to {directory}")
    return directory

def _manifest_int(manifest: Dict[str, str], key: str, path: Path) -> int:
    if key not in manifest:
        raise DatasetFormatError(f"{path}: manifest is missing '{key}'")
    try:
        return int(manifest[key])
    except ValueError:
        raise DatasetFormatError(f"{path}: manifest field {key}={manifest[key]!r} is not an integer") from None

def load_dataset(directory: Union[str, Path]) -> SynthDataset:
    """
    Read a dataset directory written by save_dataset.

    Raises:
        DatasetFormatError: missing/invalid manifest or unsupported version
        DatasetConsistencyError: manifest count and files disagree
        TensorFormatError: a corrupt blob
    """
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    manifest = read_manifest(manifest_path)
    version = _manifest_int(manifest, "version", manifest_path)
    if version != FORMAT_VERSION:
        raise DatasetFormatError(f"{manifest_path}: format version {version}, expected {FORMAT_VERSION}")
    task = TASK_ALIASES.get(manifest.get("task", ""))
    if task is None:
        raise DatasetFormatError(f"{manifest_path}: unknown task {manifest.get('task')!r}")
    count = _manifest_int(manifest, "count", manifest_path)
    M, N = _manifest_int(manifest, "M", manifest_path), _manifest_int(manifest, "N", manifest_path)
    K = _manifest_int(manifest, "K", manifest_path)
    seed = _manifest_int(manifest, "seed", manifest_path)

    image_files = sorted(directory.glob("img_*" + BLOB_SUFFIX))
    if len(image_files) != count:
        raise DatasetConsistencyError(f"manifest count {count} but {len(image_files)} image blobs in {directory}")
    images = np.empty((count, 1, M, N), dtype=np.float32)
    for i in range(count):
        path = directory / IMAGE_PATTERN.format(i)
        if not path.is_file():
            raise DatasetConsistencyError(f"missing image blob {path.name}")
        data = read_tensor(path)
        if data.shape != (1, M, N):
            raise DatasetConsistencyError(f"{path.name} has shape {list(data.shape)}, expected [1, {M}, {N}]")
        images[i] = data

    dataset = SynthDataset(task=task, images=images, seed=seed, num_classes=K)
    if task == CLASSIFICATION:
        dataset.labels = _read_labels(directory / LABEL_FILE, count)
    else:
        mask_files = sorted(directory.glob("mask_*" + BLOB_SUFFIX))
        if len(mask_files) != count:
            raise DatasetConsistencyError(f"manifest count {count} but {len(mask_files)} mask blobs in {directory}")
        masks = np.empty((count, 1, M, N), dtype=np.float32)
        for i in range(count):
            path = directory / MASK_PATTERN.format(i)
            if not path.is_file():
                raise DatasetConsistencyError(f"missing mask blob {path.name}")
            masks[i] = read_tensor(path).reshape(1, M, N)
        dataset.masks = masks
    logger.info(f"Loaded {count}-sample {task} dataset from {directory}")
    return dataset

def _read_labels(path: Path, count: int) -> np.ndarray:
    if not path.is_file():
        raise DatasetConsistencyError(f"label file {path} is missing")
    labels = {}
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["index", "label"]:
            raise DatasetFormatError(f"{path}: expected header 'index,label', got {header}")
        for row in reader:
            if not row:
                continue
            try:
                labels[int(row[0])] = int(row[1])
            except (ValueError, IndexError):
                raise DatasetFormatError(f"{path}: malformed row {row}") from None
    if sorted(labels) != list(range(count)):
        raise DatasetConsistencyError(f"{path}: {len(labels)} labels for {count} samples")
    return np.array([labels[i] for i in range(count)], dtype=np.int64)
