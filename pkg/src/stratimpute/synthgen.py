"""Synthetic cohorts with planted patient subgroups and controllable missingness.

Stands in for credential-gated ICU datasets: patients are drawn from K
latent clusters with smooth cluster-level trajectories, mortality depends
on cluster membership plus a trajectory summary, and observations can be
deleted completely at random or preferentially at extreme values (MNAR).
Pre-deletion ground truth is kept as a shadow event table so imputation can
be scored without leaking it into training data.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .tensorize import EventRecord, StaticRecord
from .validation import check_fraction

# trajectory composition: cluster curve + patient offset + noise
FOURIER_ORDER = 3
CLUSTER_BASE_STD = 2.0
CLUSTER_AMP = 1.0
PATIENT_OFFSET_SCALE = 0.35
NOISE_STD = 0.25
CLUSTER_LOGIT_SPAN = 3.0
TRAJECTORY_LOGIT_WEIGHT = 0.8
DIAGNOSIS_CLUSTER_AFFINITY = 0.6

ETHNICITY_CODES = ["eth_a", "eth_b", "eth_c", "eth_d"]
SEX_CODES = ["F", "M"]


@dataclass
class SynthConfig:
    n_patients: int = 500
    n_features: int = 8
    horizon: int = 24
    n_clusters: int = 4
    missing_rate: float = 0.3
    mnar_strength: float = 1.0
    mortality_base_rate: float = 0.3
    seed: int = 0

    def __post_init__(self):
        if self.n_patients < 1:
            raise ValueError("n_patients must be >= 1")
        if self.n_features < 1:
            raise ValueError("n_features must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.n_clusters < 1:
            raise ValueError("n_clusters must be >= 1")
        check_fraction(self.missing_rate, "missing_rate")
        if self.mnar_strength < 0:
            raise ValueError("mnar_strength must be >= 0")
        if not (0 < self.mortality_base_rate < 1):
            raise ValueError("mortality_base_rate must lie in (0, 1)")


@dataclass
class SynthCohort:
    """Generated cohort plus the latent structure used to build it."""

    events: list                  # list[EventRecord], feature_id indexes feature_names
    statics: list                 # list[StaticRecord]
    labels: dict                  # patient_id -> 0/1
    feature_names: list
    cluster_of: dict              # patient_id -> cluster index
    trajectories: np.ndarray      # (n_patients, n_features, horizon) noiseless+noise values
    config: SynthConfig


def _fourier_curve(rng, n_features, horizon, amp):
    """Smooth random curves: a per-feature mix of low-order sinusoids."""
    t = (np.arange(horizon) + 0.5) / horizon
    curve = np.zeros((n_features, horizon))
    for h in range(1, FOURIER_ORDER + 1):
        a = rng.normal(0.0, amp / h, size=(n_features, 1))
        phase = rng.uniform(0, 2 * np.pi, size=(n_features, 1))
        curve += a * np.sin(2 * np.pi * h * t[None, :] + phase)
    return curve


def generate_cohort(cfg: SynthConfig) -> SynthCohort:
    """Draw a full (pre-missingness) cohort, deterministic in cfg.seed.

    Each patient gets one event per (feature, hour) with jittered in-bin
    timing. Label probability is a logistic function of cluster identity
    and the patient's mean trajectory level, with the intercept calibrated
    so the expected label rate matches ``mortality_base_rate``.
    """
    root = np.random.SeedSequence(cfg.seed)
    cohort_seed, *patient_seeds = root.spawn(cfg.n_patients + 1)
    rng0 = np.random.default_rng(cohort_seed)

    cluster_base = rng0.normal(0.0, CLUSTER_BASE_STD, size=(cfg.n_clusters, cfg.n_features))
    cluster_curves = np.stack([
        _fourier_curve(rng0, cfg.n_features, cfg.horizon, CLUSTER_AMP)
        for _ in range(cfg.n_clusters)
    ])
    cluster_logits = (
        np.linspace(-CLUSTER_LOGIT_SPAN / 2, CLUSTER_LOGIT_SPAN / 2, cfg.n_clusters)
        if cfg.n_clusters > 1 else np.zeros(1)
    )
    diagnosis_vocab = [f"dx{k}" for k in range(cfg.n_clusters + 2)]

    width = len(str(max(cfg.n_patients - 1, 1)))
    patient_ids = [f"p{i:0{width}d}" for i in range(cfg.n_patients)]
    feature_names = [f"f{i:02d}" for i in range(cfg.n_features)]

    trajectories = np.zeros((cfg.n_patients, cfg.n_features, cfg.horizon))
    cluster_of = {}
    statics = []
    events = []
    raw_logits = np.zeros(cfg.n_patients)
    label_rngs = []

    for p, pid in enumerate(patient_ids):
        traj_seed, label_seed = patient_seeds[p].spawn(2)
        rng = np.random.default_rng(traj_seed)
        label_rngs.append(np.random.default_rng(label_seed))

        k = int(rng.integers(cfg.n_clusters))
        cluster_of[pid] = k
        offset = _fourier_curve(rng, cfg.n_features, cfg.horizon, PATIENT_OFFSET_SCALE)
        noise = rng.normal(0.0, NOISE_STD, size=(cfg.n_features, cfg.horizon))
        traj = cluster_base[k][:, None] + cluster_curves[k] + offset + noise
        trajectories[p] = traj

        jitter = rng.uniform(0.05, 0.95, size=(cfg.n_features, cfg.horizon))
        for i in range(cfg.n_features):
            for t in range(cfg.horizon):
                events.append(EventRecord(
                    patient_id=pid,
                    feature_id=i,
                    time=float(t + jitter[i, t]),
                    value=float(traj[i, t]),
                ))

        age = float(np.clip(45 + 6 * k + rng.normal(0, 8), 18, 95))
        sex = SEX_CODES[int(rng.integers(2))]
        ethnicity = ETHNICITY_CODES[int(rng.integers(len(ETHNICITY_CODES)))]
        if rng.random() < DIAGNOSIS_CLUSTER_AFFINITY:
            diagnosis = diagnosis_vocab[k]
        else:
            diagnosis = diagnosis_vocab[int(rng.integers(len(diagnosis_vocab)))]
        statics.append(StaticRecord(pid, age, sex, ethnicity, diagnosis))

        summary = traj[0].mean() / max(CLUSTER_BASE_STD, 1e-9)
        raw_logits[p] = cluster_logits[k] + TRAJECTORY_LOGIT_WEIGHT * summary

    intercept = _calibrate_intercept(raw_logits, cfg.mortality_base_rate)
    labels = {}
    for p, pid in enumerate(patient_ids):
        prob = _sigmoid(raw_logits[p] + intercept)
        labels[pid] = int(label_rngs[p].random() < prob)

    return SynthCohort(
        events=events, statics=statics, labels=labels,
        feature_names=feature_names, cluster_of=cluster_of,
        trajectories=trajectories, config=cfg,
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _calibrate_intercept(logits, target_rate, tol=1e-10):
    """Bisect the shared intercept so mean(sigmoid(logit + c)) == target."""
    lo, hi = -30.0, 30.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        rate = _sigmoid(logits + mid).mean()
        if abs(rate - target_rate) < tol:
            return mid
        if rate < target_rate:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def apply_missingness(cohort: SynthCohort, missing_rate: float,
                      mnar_strength: float, seed: int):
    """Delete observations, optionally preferring extreme values.

    Each event survives an independent draw. With ``mnar_strength`` 0 the
    deletion probability is exactly ``missing_rate``; otherwise the deletion
    odds are scaled by exp(strength * (|z| - 0.8)) where z is the value's
    per-feature standard score (0.8 centers the exponent near E|z| so the
    marginal rate stays close to the nominal one).

    Returns:
        (kept_events, shadow_events) - shadow is the full pre-deletion list.
    """
    check_fraction(missing_rate, "missing_rate")
    if mnar_strength < 0:
        raise ValueError("mnar_strength must be >= 0")
    shadow = list(cohort.events)
    if missing_rate == 0:
        return list(cohort.events), shadow

    n_features = len(cohort.feature_names)
    sums = np.zeros(n_features)
    sumsq = np.zeros(n_features)
    counts = np.zeros(n_features)
    for ev in cohort.events:
        sums[ev.feature_id] += ev.value
        sumsq[ev.feature_id] += ev.value ** 2
        counts[ev.feature_id] += 1
    counts = np.maximum(counts, 1)
    mean = sums / counts
    std = np.sqrt(np.maximum(sumsq / counts - mean ** 2, 1e-12))

    patient_order = {s.patient_id: i for i, s in enumerate(cohort.statics)}
    children = np.random.SeedSequence(seed).spawn(len(patient_order))
    rngs = {pid: np.random.default_rng(children[i]) for pid, i in patient_order.items()}

    base_odds = missing_rate / (1.0 - missing_rate)
    kept = []
    for ev in cohort.events:
        if mnar_strength > 0:
            z = abs(ev.value - mean[ev.feature_id]) / std[ev.feature_id]
            odds = base_odds * np.exp(mnar_strength * (z - 0.8))
            p_del = odds / (1.0 + odds)
        else:
            p_del = missing_rate
        if rngs[ev.patient_id].random() >= p_del:
            kept.append(ev)
    return kept, shadow


def write_cohort_csvs(out_dir, events, statics, labels, feature_names,
                      shadow_events=None):
    """Emit the CSV triplet consumed by tensorize, plus the shadow table."""
    os.makedirs(out_dir, exist_ok=True)

    def events_frame(evs):
        return pd.DataFrame({
            "patient_id": [e.patient_id for e in evs],
            "feature": [feature_names[e.feature_id] for e in evs],
            "time_hours": [e.time for e in evs],
            "value": [e.value for e in evs],
        })

    events_frame(events).to_csv(os.path.join(out_dir, "events.csv"), index=False)
    pd.DataFrame({
        "patient_id": [s.patient_id for s in statics],
        "age": [s.age for s in statics],
        "sex": [s.sex for s in statics],
        "ethnicity": [s.ethnicity for s in statics],
        "diagnosis": [s.diagnosis for s in statics],
    }).to_csv(os.path.join(out_dir, "statics.csv"), index=False)
    pd.DataFrame({
        "patient_id": list(labels),
        "label": [labels[pid] for pid in labels],
    }).to_csv(os.path.join(out_dir, "labels.csv"), index=False)
    if shadow_events is not None:
        events_frame(shadow_events).to_csv(
            os.path.join(out_dir, "events_shadow.csv"), index=False
        )


def synthesize_to_csvs(cfg: SynthConfig, out_dir):
    """generate_cohort + apply_missingness + CSV emission in one call."""
    cohort = generate_cohort(cfg)
    kept, shadow = apply_missingness(
        cohort, cfg.missing_rate, cfg.mnar_strength, seed=cfg.seed
    )
    write_cohort_csvs(
        out_dir, kept, cohort.statics, cohort.labels, cohort.feature_names,
        shadow_events=shadow,
    )
    return cohort, kept
