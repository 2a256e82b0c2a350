"""Turn raw irregular event streams into fixed-grid patient tensors.

Each patient becomes a bundle of N x T matrices: observed values, a binary
observation mask, the regular-grid time steps, elapsed time since the last
observation of each variable, time until its next observation, and the
corresponding last/next observed values. Static demographics are one-hot
encoded with min-max scaled age. Cohorts are split 70/15/15 and written to
an ``.npz`` archive with a JSON sidecar of vocabularies and normalization
statistics.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .validation import check_binary_mask, check_fraction, check_same_shape

logger = logging.getLogger(__name__)

EVENTS_COLUMNS = ["patient_id", "feature", "time_hours", "value"]
STATICS_COLUMNS = ["patient_id", "age", "sex", "ethnicity", "diagnosis"]
LABELS_COLUMNS = ["patient_id", "label"]

ARCHIVE_ARRAYS = [
    "v", "m", "delta", "delta_last", "delta_next", "v_last", "v_next",
    "x_base", "y", "eval_mask", "v_eval",
]


@dataclass
class EventRecord:
    """One observed (feature, value, time) triplet for a patient."""

    patient_id: str
    feature_id: int
    time: float
    value: float


@dataclass
class StaticRecord:
    """Per-patient demographics: age plus three categorical fields."""

    patient_id: str
    age: float
    sex: str
    ethnicity: str
    diagnosis: str


@dataclass
class CohortSplit:
    train: list
    validation: list
    test: list


@dataclass
class CohortTensors:
    """Stacked per-patient tensors for one cohort split.

    All time-indexed arrays have shape (n_patients, n_features, T). ``v``
    holds standardized values with 0 at unobserved cells; ``m`` marks cells
    the model may see; ``eval_mask`` marks observed cells held out for
    imputation evaluation (hidden from ``m``), with their standardized
    values stored in ``v_eval``.
    """

    v: np.ndarray
    m: np.ndarray
    delta: np.ndarray
    delta_last: np.ndarray
    delta_next: np.ndarray
    v_last: np.ndarray
    v_next: np.ndarray
    x_base: np.ndarray          # (n_patients, g)
    y: np.ndarray               # (n_patients,)
    eval_mask: np.ndarray
    v_eval: np.ndarray
    patient_ids: list = field(default_factory=list)
    norm_mean: np.ndarray | None = None   # per-feature, for de-standardization
    norm_std: np.ndarray | None = None

    @property
    def n_patients(self) -> int:
        return self.v.shape[0]

    @property
    def n_features(self) -> int:
        return self.v.shape[1]

    @property
    def horizon(self) -> int:
        return self.v.shape[2]

    @property
    def static_dim(self) -> int:
        return self.x_base.shape[1]


def bin_events(events, n_features: int, horizon_hours: int, bin_width: float = 1.0):
    """Place a patient's events on an hourly grid.

    Each cell keeps the last observed value falling inside its bin. Events
    with time >= horizon are rejected and counted rather than raised.

    Returns:
        (v, m, n_rejected) where v is (N, T) with NaN at unobserved cells
        and m is the binary observation indicator.
    """
    n_bins = int(round(horizon_hours / bin_width))
    v = np.full((n_features, n_bins), np.nan)
    m = np.zeros((n_features, n_bins), dtype=np.int8)
    n_rejected = 0
    # stable sort by time so "last within the bin" is well defined for ties
    for ev in sorted(events, key=lambda e: e.time):
        if ev.time < 0:
            raise ValueError(f"negative event time {ev.time} for patient {ev.patient_id}")
        if not np.isfinite(ev.value):
            raise ValueError(f"non-finite value for patient {ev.patient_id}")
        if not (0 <= ev.feature_id < n_features):
            raise ValueError(
                f"unknown feature_id {ev.feature_id} (vocabulary size {n_features})"
            )
        if ev.time >= horizon_hours:
            n_rejected += 1
            continue
        t = int(ev.time // bin_width)
        v[ev.feature_id, t] = ev.value
        m[ev.feature_id, t] = 1
    if n_rejected:
        logger.warning("rejected %d events beyond the %dh horizon", n_rejected, horizon_hours)
    return v, m, n_rejected


def compute_intervals(m, bin_width: float = 1.0):
    """Elapsed/upcoming observation gaps on a regular grid.

    ``m`` may have any leading dimensions; recurrences run along the last
    axis. The grid step is ``bin_width`` everywhere except the first column,
    which is 0 (there is no preceding step). Boundary conditions: the
    since-last matrix starts at 0, the until-next matrix ends at 0.

    Returns:
        (delta, delta_last, delta_next), all shaped like ``m``.
    """
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    m = check_binary_mask(m)
    T = m.shape[-1]
    delta = np.full(m.shape, float(bin_width))
    delta[..., 0] = 0.0
    delta_last = np.zeros(m.shape)
    delta_next = np.zeros(m.shape)
    for t in range(1, T):
        carried = np.where(m[..., t - 1] == 1, 0.0, delta_last[..., t - 1])
        delta_last[..., t] = delta[..., t] + carried
    for t in range(T - 2, -1, -1):
        carried = np.where(m[..., t + 1] == 1, 0.0, delta_next[..., t + 1])
        delta_next[..., t] = delta[..., t + 1] + carried
    return delta, delta_last, delta_next


def compute_neighbor_values(v, m):
    """Most recent past and nearest future observed value per variable.

    Runs along the last axis with zero boundaries: before the first
    observation the "last value" is 0, after the final one the "next value"
    is 0 (neutral once values are standardized).
    """
    v, m = check_same_shape(v, m, "v", "m")
    m = check_binary_mask(m)
    observed = v[m == 1]
    if not np.all(np.isfinite(observed)):
        raise ValueError("v contains non-finite values at observed cells")
    T = v.shape[-1]
    v_last = np.zeros(v.shape)
    v_next = np.zeros(v.shape)
    for t in range(1, T):
        v_last[..., t] = np.where(m[..., t - 1] == 1, v[..., t - 1], v_last[..., t - 1])
    for t in range(T - 2, -1, -1):
        v_next[..., t] = np.where(m[..., t + 1] == 1, v[..., t + 1], v_next[..., t + 1])
    return v_last, v_next


def encode_static(record: StaticRecord, vocabularies: dict, age_range) -> np.ndarray:
    """One-hot encode the categorical fields and min-max scale age.

    Layout: [sex | ethnicity | diagnosis | age]. Raises on any category
    missing from its vocabulary, naming the offending field.
    """
    blocks = []
    for fieldname in ("sex", "ethnicity", "diagnosis"):
        vocab = vocabularies[fieldname]
        value = getattr(record, fieldname)
        if value not in vocab:
            raise ValueError(
                f"out-of-vocabulary {fieldname}={value!r} for patient {record.patient_id}"
            )
        block = np.zeros(len(vocab))
        block[vocab.index(value)] = 1.0
        blocks.append(block)
    lo, hi = age_range
    scaled_age = 0.0 if hi == lo else (record.age - lo) / (hi - lo)
    blocks.append(np.array([scaled_age]))
    return np.concatenate(blocks)


def split_cohort(ids, seed: int, fractions=(0.70, 0.15, 0.15)) -> CohortSplit:
    """Deterministic 70/15/15 partition of patient ids.

    Validation and test sizes are floored; the remainder goes to train.
    The shuffle is over sorted ids, so the result depends only on the id
    set and the seed.
    """
    ids = sorted(ids)
    n = len(ids)
    if n < 10:
        raise ValueError(f"need at least 10 patients to split, got {n}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    n_val = int(np.floor(fractions[1] * n))
    n_test = int(np.floor(fractions[2] * n))
    n_train = n - n_val - n_test
    shuffled = [ids[i] for i in order]
    return CohortSplit(
        train=shuffled[:n_train],
        validation=shuffled[n_train:n_train + n_val],
        test=shuffled[n_train + n_val:],
    )


# ---------------------------------------------------------------------------
# CSV adapter


@dataclass
class RawCohort:
    """Parsed CSV inputs, keyed by patient id, plus derived vocabularies."""

    events: dict                 # patient_id -> list[EventRecord]
    statics: dict                # patient_id -> StaticRecord
    labels: dict                 # patient_id -> int
    feature_names: list
    vocabularies: dict           # sex / ethnicity / diagnosis -> sorted list

    @property
    def patient_ids(self) -> list:
        return sorted(self.statics)


def load_cohort_csvs(events_path, statics_path, labels_path) -> RawCohort:
    """Read the three cohort CSVs and resolve feature names to indices."""
    events_df = pd.read_csv(events_path, dtype={"patient_id": str, "feature": str})
    statics_df = pd.read_csv(statics_path, dtype={"patient_id": str})
    labels_df = pd.read_csv(labels_path, dtype={"patient_id": str})
    for df, cols, path in (
        (events_df, EVENTS_COLUMNS, events_path),
        (statics_df, STATICS_COLUMNS, statics_path),
        (labels_df, LABELS_COLUMNS, labels_path),
    ):
        missing = set(cols) - set(df.columns)
        if missing:
            raise ValueError(f"{path} is missing columns {sorted(missing)}")

    feature_names = sorted(events_df["feature"].unique())
    feature_index = {name: i for i, name in enumerate(feature_names)}

    statics = {}
    for row in statics_df.itertuples(index=False):
        statics[row.patient_id] = StaticRecord(
            patient_id=row.patient_id,
            age=float(row.age),
            sex=str(row.sex),
            ethnicity=str(row.ethnicity),
            diagnosis=str(row.diagnosis),
        )
    labels = {row.patient_id: int(row.label) for row in labels_df.itertuples(index=False)}

    known = set(statics) & set(labels)
    orphans = set(events_df["patient_id"].unique()) - known
    if orphans:
        raise ValueError(
            f"{len(orphans)} patients have events but no statics/label, "
            f"e.g. {sorted(orphans)[:3]}"
        )
    missing_labels = set(statics) - set(labels)
    if missing_labels:
        raise ValueError(f"patients missing labels: {sorted(missing_labels)[:3]}")

    events: dict = {pid: [] for pid in statics}
    for row in events_df.itertuples(index=False):
        events[row.patient_id].append(
            EventRecord(
                patient_id=row.patient_id,
                feature_id=feature_index[row.feature],
                time=float(row.time_hours),
                value=float(row.value),
            )
        )

    vocabularies = {
        "sex": sorted(statics_df["sex"].astype(str).unique()),
        "ethnicity": sorted(statics_df["ethnicity"].astype(str).unique()),
        "diagnosis": sorted(statics_df["diagnosis"].astype(str).unique()),
    }
    return RawCohort(
        events=events,
        statics=statics,
        labels=labels,
        feature_names=feature_names,
        vocabularies=vocabularies,
    )


# ---------------------------------------------------------------------------
# Archive construction


def _holdout_eval_cells(m_full, holdout_fraction, rng):
    """Pick ~holdout_fraction of this patient's observed cells for evaluation."""
    eval_mask = np.zeros_like(m_full)
    if holdout_fraction <= 0:
        return eval_mask
    obs_idx = np.flatnonzero(m_full)
    n_hold = int(np.floor(holdout_fraction * obs_idx.size))
    if n_hold == 0:
        return eval_mask
    chosen = rng.choice(obs_idx, size=n_hold, replace=False)
    eval_mask.flat[chosen] = 1
    return eval_mask


def build_archive(
    raw: RawCohort,
    horizon_hours: int,
    bin_width: float = 1.0,
    holdout_fraction: float = 0.10,
    seed: int = 0,
    fractions=(0.70, 0.15, 0.15),
):
    """Tensorize a raw cohort into per-split CohortTensors plus metadata.

    Pipeline: split patients, grid each patient's events, hold out
    ``holdout_fraction`` of the observed cells per patient for imputation
    evaluation, standardize values with train-split statistics, then run
    the interval and neighbor-value recurrences on the visible mask.
    """
    check_fraction(holdout_fraction, "holdout_fraction")
    split = split_cohort(raw.patient_ids, seed=seed, fractions=fractions)
    n_features = len(raw.feature_names)

    ages = [rec.age for rec in raw.statics.values()]
    age_range = (float(min(ages)), float(max(ages)))

    per_patient = {}
    total_rejected = 0
    for k, pid in enumerate(raw.patient_ids):
        v_raw, m_full, rejected = bin_events(
            raw.events[pid], n_features, horizon_hours, bin_width
        )
        total_rejected += rejected
        cell_rng = np.random.default_rng([seed, k])
        eval_mask = _holdout_eval_cells(m_full, holdout_fraction, cell_rng)
        m = m_full & ~eval_mask
        per_patient[pid] = (v_raw, m.astype(np.int8), eval_mask.astype(np.int8))

    # per-feature statistics from cells visible in the training split
    train_sum = np.zeros(n_features)
    train_sumsq = np.zeros(n_features)
    train_count = np.zeros(n_features)
    for pid in split.train:
        v_raw, m, _ = per_patient[pid]
        vis = m == 1
        vals = np.where(vis, v_raw, 0.0)
        train_sum += vals.sum(axis=1)
        train_sumsq += (vals ** 2).sum(axis=1)
        train_count += vis.sum(axis=1)
    safe_count = np.maximum(train_count, 1)
    mean = train_sum / safe_count
    var = train_sumsq / safe_count - mean ** 2
    std = np.sqrt(np.maximum(var, 0.0))
    std[(train_count == 0) | (std < 1e-8)] = 1.0
    mean[train_count == 0] = 0.0

    splits = {}
    for split_name, pids in (
        ("train", split.train), ("validation", split.validation), ("test", split.test),
    ):
        vs, ms, evs, vevs = [], [], [], []
        for pid in pids:
            v_raw, m, eval_mask = per_patient[pid]
            z = (v_raw - mean[:, None]) / std[:, None]
            vs.append(np.where(m == 1, z, 0.0))
            vevs.append(np.where(eval_mask == 1, z, 0.0))
            ms.append(m)
            evs.append(eval_mask)
        v = np.stack(vs) if pids else np.zeros((0, n_features, horizon_hours))
        m = np.stack(ms) if pids else np.zeros((0, n_features, horizon_hours), np.int8)
        eval_mask = np.stack(evs) if pids else np.zeros_like(m)
        v_eval = np.stack(vevs) if pids else np.zeros_like(v)
        delta, delta_last, delta_next = compute_intervals(m, bin_width)
        v_last, v_next = compute_neighbor_values(v, m)
        x_base = np.stack([
            encode_static(raw.statics[pid], raw.vocabularies, age_range) for pid in pids
        ]) if pids else np.zeros((0, 0))
        y = np.array([raw.labels[pid] for pid in pids], dtype=np.int64)
        splits[split_name] = CohortTensors(
            v=v, m=m, delta=delta, delta_last=delta_last, delta_next=delta_next,
            v_last=v_last, v_next=v_next, x_base=x_base, y=y,
            eval_mask=eval_mask, v_eval=v_eval, patient_ids=list(pids),
            norm_mean=mean, norm_std=std,
        )

    meta = {
        "feature_names": raw.feature_names,
        "vocabularies": raw.vocabularies,
        "age_range": list(age_range),
        "normalization": {"mean": mean.tolist(), "std": std.tolist()},
        "horizon_hours": int(horizon_hours),
        "bin_width": float(bin_width),
        "holdout_fraction": float(holdout_fraction),
        "seed": int(seed),
        "split_fractions": list(fractions),
        "rejected_events": int(total_rejected),
        "split_sizes": {k: len(v.patient_ids) for k, v in splits.items()},
    }
    return splits, meta


def save_archive(out_dir, splits: dict, meta: dict):
    """Write one ``<split>.npz`` per cohort split plus ``meta.json``."""
    os.makedirs(out_dir, exist_ok=True)
    for name, ct in splits.items():
        arrays = {k: getattr(ct, k) for k in ARCHIVE_ARRAYS}
        arrays["patient_ids"] = np.array(ct.patient_ids, dtype=str)
        np.savez(os.path.join(out_dir, f"{name}.npz"), **arrays)
    with open(os.path.join(out_dir, "meta.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)


def load_archive(archive_dir):
    """Load every split archive in ``archive_dir``. Returns (splits, meta)."""
    meta_path = os.path.join(archive_dir, "meta.json")
    if not os.path.exists(meta_path):
        raise FileNotFoundError(f"no tensor archive at {archive_dir} (missing meta.json)")
    with open(meta_path) as fh:
        meta = json.load(fh)
    mean = np.asarray(meta["normalization"]["mean"])
    std = np.asarray(meta["normalization"]["std"])
    splits = {}
    for name in ("train", "validation", "test"):
        path = os.path.join(archive_dir, f"{name}.npz")
        if not os.path.exists(path):
            continue
        with np.load(path, allow_pickle=False) as data:
            kwargs = {k: data[k] for k in ARCHIVE_ARRAYS}
            pids = [str(p) for p in data["patient_ids"]]
        splits[name] = CohortTensors(
            patient_ids=pids, norm_mean=mean, norm_std=std, **kwargs
        )
    return splits, meta


def subset(ct: CohortTensors, idx) -> CohortTensors:
    """A new CohortTensors holding only the patients at ``idx``."""
    idx = np.asarray(idx)
    kwargs = {k: getattr(ct, k)[idx] for k in ARCHIVE_ARRAYS}
    return dataclasses.replace(
        ct,
        patient_ids=[ct.patient_ids[i] for i in idx] if ct.patient_ids else [],
        **kwargs,
    )
