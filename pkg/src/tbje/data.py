"""DatasetBundle: the on-disk interchange format between feature extraction,
training, and evaluation.

A bundle is a directory:

    manifest.json                       canonical JSON (sorted keys)
    vocab.json / vocab.embeddings.tbjt  optional vocabulary
    <split>/<M>.features.tbjt           (count, length, width) float64
    <split>/<M>.mask.tbjt               (count, length) 0/1
    <split>/labels.sentiment.tbjt       raw values in [-3, 3]
    <split>/labels.emotions.tbjt        (count, 6) 0/1 flags

Labels stay raw; binning to 2/7 sentiment classes happens at train/eval
time so one bundle serves every task.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ConfigError, ContractError
from .features import ModalityBatch, Vocabulary
from .metrics import EMOTIONS, SENTIMENT_MAX, SENTIMENT_MIN
from .tensor import load_array, save_array

BUNDLE_VERSION = 1
MANIFEST_NAME = "manifest.json"


@dataclass
class Split:
    name: str
    ids: list[str]
    batches: dict[str, ModalityBatch]
    sentiment: np.ndarray
    emotions: np.ndarray

    def __post_init__(self):
        self.sentiment = np.asarray(self.sentiment, dtype=np.float64)
        self.emotions = np.asarray(self.emotions, dtype=np.int64)
        n = len(self.ids)
        for m, batch in self.batches.items():
            if len(batch) != n:
                raise ContractError(
                    f"split {self.name}: modality {m} holds {len(batch)} "
                    f"examples but there are {n} ids")
        if self.sentiment.shape != (n,):
            raise ContractError(
                f"split {self.name}: sentiment labels shaped "
                f"{self.sentiment.shape}, expected ({n},)")
        if self.emotions.shape != (n, len(EMOTIONS)):
            raise ContractError(
                f"split {self.name}: emotion labels shaped "
                f"{self.emotions.shape}, expected ({n}, {len(EMOTIONS)})")
        if n and (self.sentiment.min() < SENTIMENT_MIN
                  or self.sentiment.max() > SENTIMENT_MAX):
            raise ContractError(
                f"split {self.name}: sentiment outside "
                f"[{SENTIMENT_MIN:g}, {SENTIMENT_MAX:g}]")
        if np.any((self.emotions != 0) & (self.emotions != 1)):
            raise ContractError(
                f"split {self.name}: emotion flags must be 0/1")

    @property
    def size(self) -> int:
        return len(self.ids)

    def take(self, indices) -> "Split":
        idx = np.asarray(indices, dtype=np.int64)
        return Split(name=self.name,
                     ids=[self.ids[int(i)] for i in idx],
                     batches={m: b.take(idx) for m, b in self.batches.items()},
                     sentiment=self.sentiment[idx],
                     emotions=self.emotions[idx])


@dataclass
class DatasetBundle:
    modalities: dict[str, dict]          # tag -> {"width": int, "length": int}
    splits: dict[str, Split]
    vocab_hash: Optional[str] = None
    normalization: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, split in self.splits.items():
            if set(split.batches) != set(self.modalities):
                raise ConfigError(
                    f"split {name} carries modalities "
                    f"{sorted(split.batches)} but the bundle declares "
                    f"{sorted(self.modalities)}")
            for m, entry in self.modalities.items():
                got = split.batches[m].features.shape[1:]
                want = (entry["length"], entry["width"])
                if got != want:
                    raise ConfigError(
                        f"split {name} modality {m} shaped {got}, manifest "
                        f"says {want}")

    def manifest(self) -> dict:
        return {
            "format_version": BUNDLE_VERSION,
            "modalities": {m: dict(v) for m, v in self.modalities.items()},
            "splits": {name: {"ids": list(s.ids), "count": s.size}
                       for name, s in self.splits.items()},
            "vocab_hash": self.vocab_hash,
            "normalization": self.normalization,
        }


def _canonical_text(obj) -> str:
    return json.dumps(obj, sort_keys=True, indent=1, ensure_ascii=False) + "\n"


def write_bundle(root, bundle: DatasetBundle,
                 vocab: Optional[Vocabulary] = None) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    (root / MANIFEST_NAME).write_text(_canonical_text(bundle.manifest()),
                                      encoding="utf-8")
    if vocab is not None:
        (root / "vocab.json").write_text(
            _canonical_text({"tokens": vocab.tokens,
                             "fallback_count": vocab.fallback_count}),
            encoding="utf-8")
        save_array(root / "vocab.embeddings.tbjt", vocab.embeddings)
    for name, split in bundle.splits.items():
        sub = root / name
        sub.mkdir(exist_ok=True)
        for m, batch in split.batches.items():
            save_array(sub / f"{m}.features.tbjt", batch.features)
            save_array(sub / f"{m}.mask.tbjt", batch.mask.astype(np.float64))
        save_array(sub / "labels.sentiment.tbjt", split.sentiment)
        save_array(sub / "labels.emotions.tbjt",
                   split.emotions.astype(np.float64))


def read_bundle(root) -> DatasetBundle:
    root = Path(root)
    manifest_path = root / MANIFEST_NAME
    if not manifest_path.is_file():
        raise FileNotFoundError(f"no bundle manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    if manifest.get("format_version") != BUNDLE_VERSION:
        raise ConfigError(
            f"bundle format version {manifest.get('format_version')} "
            f"unsupported; this build reads {BUNDLE_VERSION}")

    expected = []
    for name in manifest["splits"]:
        for m in manifest["modalities"]:
            expected.append(root / name / f"{m}.features.tbjt")
            expected.append(root / name / f"{m}.mask.tbjt")
        expected.append(root / name / "labels.sentiment.tbjt")
        expected.append(root / name / "labels.emotions.tbjt")
    missing = [str(p) for p in expected if not p.is_file()]
    if missing:
        raise FileNotFoundError(
            "bundle is missing files:\n  " + "\n  ".join(missing))

    splits = {}
    for name, entry in manifest["splits"].items():
        batches = {}
        for m in manifest["modalities"]:
            feats = load_array(root / name / f"{m}.features.tbjt")
            mask = load_array(root / name / f"{m}.mask.tbjt").astype(bool)
            batches[m] = ModalityBatch(feats, mask, m)
        split = Split(name=name, ids=list(entry["ids"]), batches=batches,
                      sentiment=load_array(root / name / "labels.sentiment.tbjt"),
                      emotions=load_array(root / name / "labels.emotions.tbjt"))
        if split.size != entry["count"]:
            raise ConfigError(
                f"split {name} holds {split.size} examples, manifest "
                f"says {entry['count']}")
        splits[name] = split
    return DatasetBundle(modalities=manifest["modalities"], splits=splits,
                         vocab_hash=manifest.get("vocab_hash"),
                         normalization=manifest.get("normalization", {}))


def load_vocabulary(root) -> Vocabulary:
    root = Path(root)
    meta = json.loads((root / "vocab.json").read_text(encoding="utf-8"))
    return Vocabulary(tokens=meta["tokens"],
                      embeddings=load_array(root / "vocab.embeddings.tbjt"),
                      fallback_count=meta["fallback_count"])
