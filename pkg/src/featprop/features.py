"""Per-modality item features, the item-level missing mask, and mask sampling.

Random streams use numpy's ``PCG64`` bit generator seeded through
``SeedSequence``; both are specified algorithms, so a given seed yields the
same mask on every platform.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from featprop.errors import DataError, ParameterError, ShapeError


def make_rng(*entropy: int) -> np.random.Generator:
    """PCG64 generator seeded from a tuple of non-negative integers."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(list(entropy))))


def _readonly(a: np.ndarray) -> np.ndarray:
    view = a.view()
    view.flags.writeable = False
    return view


@dataclass(frozen=True)
class ModalityFeatureSet:
    """Dense ``num_items x dim`` feature matrix for one modality."""

    modality: str
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ShapeError(f"features of {self.modality!r} must be 2-D, got {data.ndim}-D")
        if data.shape[1] < 1:
            raise ShapeError(f"features of {self.modality!r} need dim >= 1")
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float64)
        object.__setattr__(self, "data", _readonly(data))

    @property
    def num_items(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def with_data(self, data: np.ndarray) -> "ModalityFeatureSet":
        return ModalityFeatureSet(self.modality, data)


class FeatureBundle(Sequence[ModalityFeatureSet]):
    """Ordered collection of modalities describing the same items."""

    def __init__(self, sets):
        sets = tuple(sets)
        if not sets:
            raise ParameterError("a bundle needs at least one modality")
        names = [s.modality for s in sets]
        if len(set(names)) != len(names):
            raise ParameterError(f"duplicate modality ids: {names}")
        sizes = {s.num_items for s in sets}
        if len(sizes) != 1:
            raise ShapeError(f"modalities disagree on num_items: {sorted(sizes)}")
        self._sets = sets

    def __getitem__(self, key):
        if isinstance(key, str):
            for s in self._sets:
                if s.modality == key:
                    return s
            raise KeyError(key)
        return self._sets[key]

    def __len__(self) -> int:
        return len(self._sets)

    def __iter__(self) -> Iterator[ModalityFeatureSet]:
        return iter(self._sets)

    def __eq__(self, other):
        if not isinstance(other, FeatureBundle) or self.modalities != other.modalities:
            return NotImplemented
        return all(
            a.data.dtype == b.data.dtype and np.array_equal(a.data, b.data)
            for a, b in zip(self, other)
        )

    __hash__ = None

    def __repr__(self):
        dims = ", ".join(f"{s.modality}:{s.dim}" for s in self)
        return f"FeatureBundle(num_items={self.num_items}, [{dims}])"

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(s.modality for s in self._sets)

    @property
    def num_items(self) -> int:
        return self._sets[0].num_items

    def map(self, fn) -> "FeatureBundle":
        return FeatureBundle(fn(s) for s in self._sets)


@dataclass(frozen=True)
class MissingMask:
    """Item-level availability: an item has all modalities or none."""

    known: np.ndarray

    def __post_init__(self):
        known = np.asarray(self.known)
        if known.ndim != 1:
            raise ShapeError("mask must be a 1-D boolean vector")
        object.__setattr__(self, "known", _readonly(known.astype(bool, copy=False)))

    @classmethod
    def all_known(cls, num_items: int) -> "MissingMask":
        return cls(np.ones(num_items, dtype=bool))

    @classmethod
    def from_missing(cls, num_items: int, missing_indices) -> "MissingMask":
        known = np.ones(num_items, dtype=bool)
        known[np.asarray(missing_indices, dtype=np.int64)] = False
        return cls(known)

    @property
    def num_items(self) -> int:
        return self.known.shape[0]

    @property
    def missing(self) -> np.ndarray:
        return ~self.known

    @property
    def num_missing(self) -> int:
        return int(self.num_items - np.count_nonzero(self.known))

    @property
    def num_known(self) -> int:
        return int(np.count_nonzero(self.known))

    def missing_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.known)

    def check(self, num_items: int):
        if self.num_items != num_items:
            raise ShapeError(f"mask covers {self.num_items} items, features have {num_items}")


def missing_count(num_items: int, rate: float) -> int:
    """``round(rate * num_items)`` with halves rounded up."""
    return int(math.floor(rate * num_items + 0.5))


def sample_missing(num_items: int, rate: float, seed: int) -> MissingMask:
    """Mark ``round(rate * num_items)`` items missing, uniformly without replacement.

    The missing set is a prefix of a seeded permutation, so for a fixed seed
    the missing set at a lower rate is contained in the one at a higher rate.
    """
    if not 0.0 < rate < 1.0:
        raise ParameterError(f"missing rate must lie in (0, 1), got {rate!r}")
    if num_items < 1:
        raise ParameterError("num_items must be >= 1")
    order = make_rng(seed).permutation(num_items)
    return MissingMask.from_missing(num_items, order[:missing_count(num_items, rate)])


def blank_missing(f: ModalityFeatureSet, mask: MissingMask) -> ModalityFeatureSet:
    mask.check(f.num_items)
    data = np.array(f.data)
    data[mask.missing] = 0
    return f.with_data(data)


def known_mean(f: ModalityFeatureSet, mask: MissingMask) -> np.ndarray:
    mask.check(f.num_items)
    if mask.num_known == 0:
        raise DataError(f"no known items to average for modality {f.modality!r}")
    return f.data[mask.known].astype(np.float64).mean(axis=0)


def check_known_finite(bundle: FeatureBundle, mask: MissingMask):
    for s in bundle:
        if not np.all(np.isfinite(s.data[mask.known])):
            raise DataError(f"non-finite values among known rows of {s.modality!r}")


def as_bundle(features) -> FeatureBundle:
    if isinstance(features, FeatureBundle):
        return features
    if isinstance(features, ModalityFeatureSet):
        return FeatureBundle([features])
    return FeatureBundle(features)
