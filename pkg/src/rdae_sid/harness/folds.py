"""Speaker-stratified, group-atomic fold plans for nested cross-validation."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Iterable

from .._seeding import rng_for
from ..errors import ArgumentError, DataError, StratificationError

TEST_FRACTION = 0.33
N_INNER_FOLDS = 3
MIN_GROUPS_PER_SPEAKER = 5


@dataclass(frozen=True)
class FoldPlan:
    outer_test: tuple[str, ...]
    inner_folds: tuple[tuple[str, ...], ...]
    seed: int

    def buckets(self) -> list[tuple[str, ...]]:
        return [self.outer_test, *self.inner_folds]

    def inner_train_keys(self, validation_fold: int) -> list[str]:
        return [k for i, fold in enumerate(self.inner_folds) if i != validation_fold for k in fold]

    @property
    def n_groups(self) -> int:
        return sum(len(b) for b in self.buckets())

    def validate(self, group_speakers: dict[str, str] | None = None) -> None:
        """Raise DataError if any partition invariant is violated."""
        seen: dict[str, int] = {}
        for b, keys in enumerate(self.buckets()):
            for k in keys:
                if k in seen:
                    raise DataError(f"group {k!r} appears in buckets {seen[k]} and {b}")
                seen[k] = b
        if group_speakers is not None:
            if set(seen) != set(group_speakers):
                raise DataError("fold plan does not cover exactly the manifest's groups")
            test_spk = {group_speakers[k] for k in self.outer_test}
            train_spk = {group_speakers[k] for f in self.inner_folds for k in f}
            missing = set(group_speakers.values()) - (test_spk & train_spk)
            if missing:
                raise DataError(f"speakers missing from train or test: {sorted(missing)}")
        expected = TEST_FRACTION * self.n_groups
        if abs(len(self.outer_test) - expected) > 1:
            raise DataError(f"outer test holds {len(self.outer_test)} groups, expected about {expected:.1f}")


def group_speakers(manifest: Iterable) -> dict[str, str]:
    """group_key -> speaker_id for records or dicts; a group must belong to one speaker."""
    out: dict[str, str] = {}
    for rec in manifest:
        key = rec["group_key"] if isinstance(rec, dict) else rec.group_key
        spk = rec["speaker_id"] if isinstance(rec, dict) else rec.speaker_id
        if spk is None:
            raise DataError(f"group {key!r} has no speaker id")
        if out.setdefault(key, spk) != spk:
            raise DataError(f"group {key!r} is tagged with two speakers")
    return out


def make_fold_plan(
    manifest: Iterable,
    seed: int,
    test_fraction: float = TEST_FRACTION,
    n_inner: int = N_INNER_FOLDS,
    min_groups: int = MIN_GROUPS_PER_SPEAKER,
) -> FoldPlan:
    """Split groups into one outer test bucket and ``n_inner`` inner folds.

    The test bucket takes round(test_fraction * groups) groups, apportioned to
    speakers by largest remainder. The rest are dealt round-robin over a
    speaker-ordered list, which keeps every fold's speaker mix within one
    group of proportional.
    """
    if not 0 < test_fraction < 1 or n_inner < 2:
        raise ArgumentError("need 0 < test_fraction < 1 and at least 2 inner folds")
    mapping = group_speakers(manifest)
    by_speaker: dict[str, list[str]] = defaultdict(list)
    for key, spk in mapping.items():
        by_speaker[spk].append(key)
    for spk in sorted(by_speaker):
        if len(by_speaker[spk]) < min_groups:
            raise StratificationError(
                f"speaker {spk!r} has {len(by_speaker[spk])} groups; at least {min_groups} are required"
            )
    speakers = sorted(by_speaker)
    shuffled = {}
    for spk in speakers:
        keys = sorted(by_speaker[spk])
        order = rng_for("fold-plan", seed, spk).permutation(len(keys))
        shuffled[spk] = [keys[i] for i in order]

    n_total = len(mapping)
    n_test = int(math.floor(test_fraction * n_total + 0.5))
    quotas = {spk: test_fraction * len(shuffled[spk]) for spk in speakers}
    take = {spk: int(math.floor(q)) for spk, q in quotas.items()}
    leftover = n_test - sum(take.values())
    for spk in sorted(speakers, key=lambda s: (-(quotas[s] - take[s]), s))[: max(leftover, 0)]:
        take[spk] += 1

    outer = []
    rest = []
    for spk in speakers:
        outer.extend(shuffled[spk][: take[spk]])
        rest.extend(shuffled[spk][take[spk] :])
    folds = [rest[i::n_inner] for i in range(n_inner)]
    plan = FoldPlan(tuple(outer), tuple(tuple(f) for f in folds), seed)
    plan.validate(mapping)
    return plan
