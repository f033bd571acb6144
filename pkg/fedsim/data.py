"""
Loading, generating and preparing intrusion-detection datasets.

The preparation pipeline follows the CICIoT2023 recipe: benign traffic is
spread across the seven attack categories, attacks are balanced inside each
category, a stratified slice is held out for the server, labels are collapsed
to the requested granularity and features are z-scored from training
statistics.
"""

from __future__ import annotations

import dataclasses
import math
import os
from typing import List, Sequence, Tuple, Union

import numpy as np
import numpy.typing as npt
import pandas as pd

from fedsim import categories, features, utils
from fedsim.categories import CategoryMap
from fedsim.errors import ConfigurationError, EmptyDatasetError, SchemaError
from fedsim.numerics import Matrix, SeededRng, as_matrix

LOGGER = utils.LOGGER

# Columns with a standard deviation below this are only centered
MIN_STDEV = 1e-12


@dataclasses.dataclass(frozen=True, eq=False)
class Dataset:
    """
    A feature matrix with aligned per-row labels and metadata.

    Attributes:
        features: N x F float64 matrix.
        labels: Class index of every row, indexing `label_names`.
        label_names: The class vocabulary.
        feature_names: One name per feature column.
        attacks: The raw label of every row, kept through every stage so
            labels can be collapsed to any granularity.
        row_ids: Stable row identifiers assigned at load time.
        affiliation: Category index a benign row was assigned to, -1 if untagged.
    """

    features: Matrix
    labels: npt.NDArray[np.int64]
    label_names: Tuple[str, ...]
    feature_names: Tuple[str, ...]
    attacks: np.ndarray
    row_ids: npt.NDArray[np.int64]
    affiliation: npt.NDArray[np.int64]

    def __post_init__(self):
        n_rows = self.features.shape[0]
        for name in ("labels", "attacks", "row_ids", "affiliation"):
            if len(getattr(self, name)) != n_rows:
                raise SchemaError(
                    f"{name} has {len(getattr(self, name))} entries for {n_rows} rows"
                )

        if self.features.shape[1] != len(self.feature_names):
            raise SchemaError(
                f"{self.features.shape[1]} feature columns but"
                f" {len(self.feature_names)} feature names"
            )

        if n_rows and (self.labels.min() < 0 or self.labels.max() >= len(self.label_names)):
            raise SchemaError("Label index outside of the label vocabulary")

    @classmethod
    def create(
        cls,
        features: npt.ArrayLike,
        labels: npt.ArrayLike,
        label_names: Sequence[str],
        feature_names: Union[Sequence[str], None] = None,
        attacks: Union[npt.ArrayLike, None] = None,
        row_ids: Union[npt.ArrayLike, None] = None,
        affiliation: Union[npt.ArrayLike, None] = None,
    ) -> Dataset:
        """Build a dataset, filling metadata with defaults where omitted."""
        matrix = as_matrix(features)
        labels = np.asarray(labels, dtype=np.int64)
        label_names = tuple(label_names)
        n_rows = matrix.shape[0]

        if feature_names is None:
            feature_names = tuple(f"x{i}" for i in range(matrix.shape[1]))

        if attacks is None:
            attacks = np.asarray(label_names, dtype=object)[labels]

        return cls(
            features=matrix,
            labels=labels,
            label_names=label_names,
            feature_names=tuple(feature_names),
            attacks=np.asarray(attacks, dtype=object),
            row_ids=(
                np.arange(n_rows, dtype=np.int64)
                if row_ids is None
                else np.asarray(row_ids, dtype=np.int64)
            ),
            affiliation=(
                np.full(n_rows, -1, dtype=np.int64)
                if affiliation is None
                else np.asarray(affiliation, dtype=np.int64)
            ),
        )

    @classmethod
    def concat(cls, datasets: Sequence[Dataset]) -> Dataset:
        """Stack datasets that share vocabularies, keeping their order"""
        if not datasets:
            raise EmptyDatasetError("Nothing to concatenate")

        first = datasets[0]
        for other in datasets[1:]:
            if (other.label_names, other.feature_names) != (
                first.label_names,
                first.feature_names,
            ):
                raise SchemaError("Cannot concatenate datasets with different vocabularies")

        return cls(
            features=np.concatenate([d.features for d in datasets]),
            labels=np.concatenate([d.labels for d in datasets]),
            label_names=first.label_names,
            feature_names=first.feature_names,
            attacks=np.concatenate([d.attacks for d in datasets]),
            row_ids=np.concatenate([d.row_ids for d in datasets]),
            affiliation=np.concatenate([d.affiliation for d in datasets]),
        )

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_rows(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    def take(self, indices: npt.ArrayLike) -> Dataset:
        """Select rows, keeping every per-row array aligned"""
        indices = np.asarray(indices, dtype=np.int64)
        return dataclasses.replace(
            self,
            features=self.features[indices],
            labels=self.labels[indices],
            attacks=self.attacks[indices],
            row_ids=self.row_ids[indices],
            affiliation=self.affiliation[indices],
        )

    def class_counts(self) -> npt.NDArray[np.int64]:
        return np.bincount(self.labels, minlength=self.n_classes).astype(np.int64)


def read_csv(
    path: "str | os.PathLike[str]", label_column: Union[str, None] = None
) -> Tuple[Dataset, int]:
    """
    Parse a feature CSV.

    Every non-label column is parsed as a real number. Rows holding a
    non-finite or unparsable value are dropped.

    Returns:
        The dataset and the number of dropped rows.
    """
    label_column = label_column or features.label_column()
    if not os.path.exists(path):
        raise FileNotFoundError(f'Dataset file "{path}" does not exist')

    try:
        header = pd.read_csv(path, nrows=0, encoding="utf-8").columns
    except pd.errors.EmptyDataError as exc:
        raise SchemaError(f'"{path}" has no header row') from exc

    header = [str(column).strip() for column in header]
    if label_column not in header:
        raise SchemaError(f'Label column "{label_column}" not found in "{path}"')

    frame = pd.read_csv(path, encoding="utf-8", dtype=str, keep_default_na=False)
    frame.columns = header
    feature_names = [column for column in header if column != label_column]

    values = frame[feature_names].apply(pd.to_numeric, errors="coerce").to_numpy(np.float64)
    raw_labels = frame[label_column].str.strip()
    keep = np.all(np.isfinite(values), axis=1) & (raw_labels != "").to_numpy()
    dropped = int((~keep).sum())

    if not keep.any():
        raise EmptyDatasetError(f'No valid rows in "{path}"')

    raw_labels = raw_labels.to_numpy(dtype=object)[keep]
    label_names, labels = np.unique(raw_labels.astype(str), return_inverse=True)
    dataset = Dataset.create(
        features=values[keep],
        labels=labels,
        label_names=[str(name) for name in label_names],
        feature_names=feature_names,
        attacks=raw_labels,
    )
    return dataset, dropped


def load_csv(path: "str | os.PathLike[str]", label_column: Union[str, None] = None) -> Dataset:
    """
    Load a CICIoT2023-style CSV.

    Args:
        path: The CSV file. UTF-8, comma-separated, with a header row.
        label_column: Column holding the raw attack label. Defaults to
            `settings.FEDSIM_LABEL_COLUMN`.

    Returns:
        The dataset with the raw labels as its vocabulary.
    """
    dataset, dropped = read_csv(path, label_column=label_column)
    if dropped:
        LOGGER.warning("fedsim: Dropped %s malformed row(s) from %s.", dropped, path)

    LOGGER.info(
        "fedsim: Loaded %s rows with %s features from %s.",
        dataset.n_rows,
        dataset.n_features,
        path,
    )
    return dataset


def dump_csv(
    d: Dataset, path: "str | os.PathLike[str]", label_column: Union[str, None] = None
) -> None:
    """Write a dataset back out with the loaded schema"""
    frame = pd.DataFrame(d.features, columns=list(d.feature_names))
    frame[label_column or features.label_column()] = np.asarray(d.label_names, dtype=object)[
        d.labels
    ]
    frame.to_csv(path, index=False, float_format="%.17g")


def fingerprint(d: Dataset) -> str:
    return utils.array_digest(d.features, d.labels, names=(d.label_names, d.feature_names))


def collapse_labels(d: Dataset, map: CategoryMap) -> Dataset:
    """
    Relabel rows from their raw attack names.

    Raises:
        SchemaError: An attack name is not part of the map.
    """
    names, inverse = np.unique(d.attacks.astype(str), return_inverse=True)
    classes = np.empty(len(names), dtype=np.int64)
    for i, name in enumerate(names):
        try:
            classes[i] = map.class_of(name)
        except KeyError:
            raise SchemaError(
                f'Unknown attack name "{name}" for the {map.granularity} granularity'
            ) from None

    return dataclasses.replace(
        d,
        labels=classes[inverse].astype(np.int64),
        label_names=map.classes,
    )


def _benign_mask(d: Dataset) -> npt.NDArray[np.bool_]:
    names, inverse = np.unique(d.attacks.astype(str), return_inverse=True)
    return np.array([categories.is_benign(name) for name in names], dtype=bool)[inverse]


def category_affiliation(d: Dataset) -> npt.NDArray[np.int64]:
    """
    The attack category of every row.

    Attack rows resolve through the taxonomy. Benign rows use the tag given by
    `redistribute_benign`. Anything else is -1.
    """
    if not d.n_rows:
        return np.zeros(0, dtype=np.int64)

    names, inverse = np.unique(d.attacks.astype(str), return_inverse=True)
    by_name = np.array([categories.category_index(name) for name in names], dtype=np.int64)
    affiliation = by_name[inverse]
    benign = _benign_mask(d)
    affiliation[benign] = d.affiliation[benign]
    return affiliation


def redistribute_benign(d: Dataset, rng: SeededRng) -> Dataset:
    """
    Tag benign rows with one of the seven attack categories.

    Benign rows keep their label. Shuffled benign rows are dealt round-robin,
    so category counts differ by at most one and the first categories get
    the remainder.
    """
    benign_rows = np.flatnonzero(_benign_mask(d))
    if not len(benign_rows):
        LOGGER.warning("fedsim: No benign rows to redistribute.")
        return d

    order = benign_rows[rng.permutation(len(benign_rows))]
    affiliation = d.affiliation.copy()
    affiliation[order] = np.arange(len(order), dtype=np.int64) % len(
        categories.ATTACK_CATEGORIES
    )
    return dataclasses.replace(d, affiliation=affiliation)


def balance_within_categories(d: Dataset, rng: SeededRng) -> Dataset:
    """
    Downsample every attack to the smallest attack count of its category.

    Sampling is without replacement and the surviving rows keep their order.
    """
    names, inverse = np.unique(d.attacks.astype(str), return_inverse=True)
    by_category = {}
    for i, name in enumerate(names):
        category = categories.category_of(name)
        if category is None:
            raise SchemaError(f'Unknown attack name "{name}"')

        by_category.setdefault(category, []).append(i)

    keep = []
    for category in sorted(by_category):
        attack_rows = [np.flatnonzero(inverse == i) for i in by_category[category]]
        minimum = min(len(rows) for rows in attack_rows)
        for rows in attack_rows:
            if len(rows) > minimum:
                rows = np.sort(rows[rng.permutation(len(rows))[:minimum]])
            keep.append(rows)

        if len(attack_rows) > 1:
            LOGGER.info(
                "fedsim: Balanced %s attacks in %s to %s rows each.",
                len(attack_rows),
                category,
                minimum,
            )

    return d.take(np.sort(np.concatenate(keep)))


def split_server_test(
    d: Dataset, fraction: float, rng: SeededRng
) -> Tuple[Dataset, Dataset]:
    """
    Hold out `floor(fraction * count)` rows of every category for the server.

    Rows are stratified by category affiliation; rows without one are
    stratified by label.

    Returns:
        The training set and the server test set, both in original row order.
    """
    if not 0 < fraction < 1:
        raise ConfigurationError(f"Server test fraction must be in (0, 1), got {fraction}")

    affiliation = category_affiliation(d)
    strata = np.where(affiliation >= 0, affiliation, len(categories.ATTACK_CATEGORIES) + d.labels)

    test_rows = []
    for stratum in np.unique(strata):
        rows = np.flatnonzero(strata == stratum)
        n_test = math.floor(fraction * len(rows) + 1e-9)
        test_rows.append(rows[rng.permutation(len(rows))[:n_test]])

    is_test = np.zeros(d.n_rows, dtype=bool)
    if test_rows:
        is_test[np.concatenate(test_rows)] = True
    return d.take(np.flatnonzero(~is_test)), d.take(np.flatnonzero(is_test))


def synth_generate(
    classes: int, per_class: int, dims: int, separation: float, rng: SeededRng
) -> Dataset:
    """
    Gaussian blobs with unit covariance.

    Class k is centered at `separation` along its own direction: `+e_k` for
    the first `dims` classes, `-e_k` for the next `dims`, random unit vectors
    after that.
    """
    if classes < 2 or per_class < 1 or dims < 1 or not separation > 0:
        raise ConfigurationError(
            "synth_generate needs classes >= 2, per_class >= 1, dims >= 1, separation > 0"
        )

    centers = np.zeros((classes, dims))
    for k in range(min(classes, 2 * dims)):
        centers[k, k % dims] = 1.0 if k < dims else -1.0

    if classes > 2 * dims:
        extra = rng.split("directions").normal((classes - 2 * dims, dims))
        centers[2 * dims :] = extra / np.linalg.norm(extra, axis=1, keepdims=True)

    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    points = separation * centers[labels] + rng.normal((classes * per_class, dims))
    return Dataset.create(
        features=points,
        labels=labels,
        label_names=[f"class_{k}" for k in range(classes)],
    )


@dataclasses.dataclass(frozen=True)
class Normalizer:
    """Per-feature z-score statistics computed on a training set"""

    mean: npt.NDArray[np.float64]
    scale: npt.NDArray[np.float64]

    @classmethod
    def fit(cls, train: Dataset) -> Normalizer:
        if not train.n_rows:
            raise EmptyDatasetError("Cannot fit normalization on an empty training set")

        mean = train.features.mean(axis=0)
        stdev = train.features.std(axis=0)
        return cls(mean=mean, scale=np.where(stdev < MIN_STDEV, 1.0, stdev))

    def apply(self, d: Dataset) -> Dataset:
        return dataclasses.replace(d, features=(d.features - self.mean) / self.scale)


def normalize(train: Dataset, others: Sequence[Dataset] = ()) -> Tuple[Dataset, List[Dataset]]:
    """
    Z-score every feature with statistics from `train` only.

    Columns whose standard deviation is below 1e-12 are centered but not scaled.
    """
    normalizer = Normalizer.fit(train)
    return normalizer.apply(train), [normalizer.apply(other) for other in others]


@dataclasses.dataclass(frozen=True)
class PreparedData:
    train: Dataset
    server_test: Dataset
    normalizer: Normalizer


def prepare(
    d: Dataset,
    rng: SeededRng,
    *,
    granularity: Union[str, None] = categories.CATEGORIES8,
    test_fraction: float = 0.2,
) -> PreparedData:
    """
    Run the full preparation pipeline.

    With a granularity, benign rows are redistributed, attacks balanced and
    labels collapsed around the server split. Without one (synthetic data)
    only the split and normalization run.
    """
    if granularity is not None:
        d = redistribute_benign(d, rng.split("redistribute"))
        d = balance_within_categories(d, rng.split("balance"))

    train, server_test = split_server_test(d, test_fraction, rng.split("server-test"))

    if granularity is not None:
        category_map = CategoryMap.for_granularity(granularity)
        train = collapse_labels(train, category_map)
        server_test = collapse_labels(server_test, category_map)

    if not server_test.n_rows:
        raise EmptyDatasetError("The server test split is empty")

    normalizer = Normalizer.fit(train)
    return PreparedData(
        train=normalizer.apply(train),
        server_test=normalizer.apply(server_test),
        normalizer=normalizer,
    )
