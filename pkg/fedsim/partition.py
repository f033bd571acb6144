"""
Splitting a prepared training set across simulated clients.
"""

from __future__ import annotations

import dataclasses
import os
from typing import List, Sequence, Union

import numpy as np
import pandas as pd

from fedsim import categories
from fedsim.data import Dataset, category_affiliation
from fedsim.errors import ConfigurationError
from fedsim.numerics import SeededRng

IID = "iid"
NONIID_CATEGORY = "noniid_category"
LABEL_SHARD = "label_shard"
MODES = (IID, NONIID_CATEGORY, LABEL_SHARD)

DEFAULT_IID_CLIENTS = 5


@dataclasses.dataclass(frozen=True)
class PartitionPlan:
    """
    How the training set is dealt to clients.

    `client_count` defaults to 5 for IID and is always 7 (one client per
    attack category) for category partitioning.
    """

    mode: str = IID
    client_count: Union[int, None] = None
    shards_per_client: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(
                f'Unknown partition mode "{self.mode}". Choose one of {", ".join(MODES)}'
            )

        n_categories = len(categories.ATTACK_CATEGORIES)
        if self.mode == NONIID_CATEGORY:
            if self.client_count not in (None, n_categories):
                raise ConfigurationError(
                    f"Category partitioning always uses {n_categories} clients,"
                    f" got client_count={self.client_count}"
                )
            object.__setattr__(self, "client_count", n_categories)
        elif self.client_count is None:
            object.__setattr__(self, "client_count", DEFAULT_IID_CLIENTS)

        if self.client_count < 1:
            raise ConfigurationError(f"client_count must be >= 1, got {self.client_count}")

        if self.shards_per_client < 1:
            raise ConfigurationError(
                f"shards_per_client must be >= 1, got {self.shards_per_client}"
            )


def partition_iid(d: Dataset, k: int, rng: SeededRng) -> List[Dataset]:
    """
    Shuffle rows and deal them round-robin to `k` clients.

    Client sizes differ by at most one.
    """
    if k < 1:
        raise ConfigurationError(f"Need at least one client, got {k}")

    if k > d.n_rows:
        raise ConfigurationError(f"Cannot deal {d.n_rows} rows to {k} clients")

    order = rng.permutation(d.n_rows)
    return [d.take(order[client::k]) for client in range(k)]


def partition_noniid_category(d: Dataset) -> List[Dataset]:
    """
    One client per attack category.

    Client j receives every row affiliated to category j, including the benign
    rows tagged to it by `redistribute_benign`.
    """
    affiliation = category_affiliation(d)
    if np.any(affiliation < 0):
        raise ConfigurationError(
            f"{int(np.sum(affiliation < 0))} row(s) have no category affiliation."
            " Benign rows must be redistributed first."
        )

    clients = []
    for index, category in enumerate(categories.ATTACK_CATEGORIES):
        rows = np.flatnonzero(affiliation == index)
        if not len(rows):
            raise ConfigurationError(f'Category "{category}" has no rows')

        clients.append(d.take(rows))

    return clients


def partition_label_shard(
    d: Dataset, k: int, shards_per_client: int, rng: SeededRng
) -> List[Dataset]:
    """
    Sort rows by label, cut them into `k * shards_per_client` contiguous shards
    and deal the shards at random, `shards_per_client` to every client.
    """
    n_shards = k * shards_per_client
    if k < 1 or shards_per_client < 1 or n_shards > d.n_rows:
        raise ConfigurationError(
            f"Cannot cut {d.n_rows} rows into {k} x {shards_per_client} shards"
        )

    order = np.argsort(d.labels, kind="stable")
    shards = np.array_split(order, n_shards)
    dealt = rng.permutation(n_shards)
    return [
        d.take(
            np.concatenate(
                [shards[s] for s in dealt[c * shards_per_client : (c + 1) * shards_per_client]]
            )
        )
        for c in range(k)
    ]


def partition(d: Dataset, plan: PartitionPlan, rng: SeededRng) -> List[Dataset]:
    """Partition a dataset according to a plan"""
    if plan.mode == IID:
        return partition_iid(d, plan.client_count, rng)
    elif plan.mode == NONIID_CATEGORY:
        return partition_noniid_category(d)
    else:
        return partition_label_shard(d, plan.client_count, plan.shards_per_client, rng)


def summarize(clients: Sequence[Dataset], label_names: Sequence[str]) -> pd.DataFrame:
    """Rows per client and per class"""
    rows = []
    for client_id, client in enumerate(clients):
        counts = np.bincount(client.labels, minlength=len(label_names))
        rows.append(
            {
                "client_id": client_id,
                "n_rows": client.n_rows,
                **{name: int(count) for name, count in zip(label_names, counts)},
            }
        )

    return pd.DataFrame(rows, columns=["client_id", "n_rows", *label_names])


def write_summary(
    clients: Sequence[Dataset], label_names: Sequence[str], path: "str | os.PathLike[str]"
) -> None:
    summarize(clients, label_names).to_csv(path, index=False)
