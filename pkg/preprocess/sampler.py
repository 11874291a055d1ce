# insilico-labeling/preprocess/sampler.py
# Organelle-balanced batch composition over partially labeled samples.

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Optional, Tuple, Union

import numpy as np
from torch.utils.data import Sampler

from ingest.manifest import Manifest
from shared.errors import ConfigurationError
from shared.organelle_types import Modality, ORGANELLE_ORDER, Organelle

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OrganelleLists:
    """Sample ids per organelle; an id is listed under every organelle it is labeled for."""
    lists: Dict[Organelle, Tuple[str, ...]]

    def __getitem__(self, organelle) -> Tuple[str, ...]:
        return self.lists.get(Organelle(organelle), ())

    def sizes(self) -> Dict[Organelle, int]:
        return {o: len(self[o]) for o in ORGANELLE_ORDER}

    def non_empty(self) -> List[Organelle]:
        return [o for o in ORGANELLE_ORDER if self[o]]

    def all_ids(self) -> List[str]:
        return sorted({i for ids in self.lists.values() for i in ids})


def build_organelle_lists(manifest: Manifest, modality_filter: Optional[Modality] = None) -> OrganelleLists:
    """Creates the four per-organelle id lists, optionally restricted to one modality."""
    lists = {o: [] for o in ORGANELLE_ORDER}
    for entry in manifest.filter_modality(modality_filter).entries:
        for organelle in entry.availability.organelles():
            lists[organelle].append(entry.id)
    if not any(lists.values()):
        scope = modality_filter.value if modality_filter else "all modalities"
        raise ConfigurationError(f"no labeled samples for {scope}: all organelle lists are empty")
    result = OrganelleLists(lists={o: tuple(sorted(ids)) for o, ids in lists.items()})
    logger.info(f"Organelle list sizes: { {o.short: n for o, n in result.sizes().items()} }")
    return result


@dataclass(frozen=True)
class BatchPlan:
    """(sample id, focus organelle) picks for one batch, grouped in canonical organelle order."""
    picks: Tuple[Tuple[str, Organelle], ...]

    def __len__(self):
        return len(self.picks)

    def counts(self) -> Dict[Organelle, int]:
        return {o: sum(1 for _, f in self.picks if f == o) for o in ORGANELLE_ORDER}

    @property
    def sample_ids(self) -> List[str]:
        return [i for i, _ in self.picks]


class BalancedOrganelleSampler:
    """
    Draws equal numbers of picks from every non-empty organelle list.

    Each list is shuffled, consumed in order and reshuffled once exhausted, so no id repeats
    within one cycle of its list. Empty lists are excluded and their quota shared by the rest.
    Not safe for concurrent mutation.
    """

    def __init__(self, lists: OrganelleLists, rng: Union[np.random.Generator, int, None] = None):
        self.lists = lists
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.active = lists.non_empty()
        if not self.active:
            raise ConfigurationError("balanced sampling needs at least one non-empty organelle list")
        excluded = [o.value for o in ORGANELLE_ORDER if o not in self.active]
        if excluded:
            logger.info(f"Excluding empty organelle lists from balanced sampling: {excluded}")
        self._order: Dict[Organelle, List[str]] = {}
        self._cursor: Dict[Organelle, int] = {}
        for organelle in self.active:
            self._reshuffle(organelle)

    def _reshuffle(self, organelle: Organelle):
        ids = self.lists[organelle]
        self._order[organelle] = [ids[i] for i in self.rng.permutation(len(ids))]
        self._cursor[organelle] = 0

    def _draw(self, organelle: Organelle) -> str:
        if self._cursor[organelle] >= len(self._order[organelle]):
            self._reshuffle(organelle)
        sample_id = self._order[organelle][self._cursor[organelle]]
        self._cursor[organelle] += 1
        return sample_id

    def quota(self, batch_size: int) -> int:
        k = len(self.active)
        if batch_size <= 0 or batch_size % k != 0:
            raise ConfigurationError(
                f"batch_size {batch_size} is not divisible by the {k} non-empty organelle lists "
                f"({[o.value for o in self.active]})"
            )
        return batch_size // k

    def next_batch(self, batch_size: int) -> BatchPlan:
        per_list = self.quota(batch_size)
        picks = []
        for organelle in self.active:
            picks.extend((self._draw(organelle), organelle) for _ in range(per_list))
        return BatchPlan(picks=tuple(picks))

    # --- Checkpoint Support ---

    def state_dict(self) -> dict:
        return {
            "rng": self.rng.bit_generator.state,
            "order": {o.value: list(ids) for o, ids in self._order.items()},
            "cursor": {o.value: c for o, c in self._cursor.items()},
        }

    def load_state_dict(self, state: dict):
        self.rng.bit_generator.state = state["rng"]
        self._order = {Organelle(o): list(ids) for o, ids in state["order"].items()}
        self._cursor = {Organelle(o): int(c) for o, c in state["cursor"].items()}


BatchKey = Tuple[str, str, int, int]


class BalancedBatchSampler(Sampler):
    """
    DataLoader `batch_sampler` over BatchPlans.

    Yields lists of (sample_id, focus organelle value, batch index, position) keys; the batch
    index and position seed per-patch crop and augmentation streams in the dataset.
    """

    def __init__(self, sampler: BalancedOrganelleSampler, batch_size: int, n_batches: int, start_batch: int = 0):
        self.sampler = sampler
        self.batch_size = batch_size
        self.n_batches = n_batches
        self.start_batch = start_batch
        sampler.quota(batch_size)  # fail fast on indivisible sizes

    def __iter__(self) -> Iterator[List[BatchKey]]:
        for offset in range(self.n_batches):
            batch_idx = self.start_batch + offset
            plan = self.sampler.next_batch(self.batch_size)
            yield [(sid, focus.value, batch_idx, pos) for pos, (sid, focus) in enumerate(plan.picks)]

    def __len__(self):
        return self.n_batches
