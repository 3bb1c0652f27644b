"""Selective fingerprint disclosure: a secret hash schedule of noise levels, majority voting
over rounds, and Monte-Carlo comparison of a schedule-aware receiver with an adversary."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DEFAULT_LEVELS = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05)


class MissingModelError(KeyError):
    """The schedule selected a noise level for which the receiver has no model."""


@dataclass(frozen=True)
class DisclosureSchedule:
    seed: bytes
    slot_duration: float = 1.0
    level_count: int = 6
    level_map: tuple = DEFAULT_LEVELS
    # rotate the seed every this many slots (0: never)
    rotate_every: int = 0

    def __post_init__(self):
        if isinstance(self.seed, str):
            object.__setattr__(self, "seed", self.seed.encode())
        object.__setattr__(self, "level_map", tuple(float(s) for s in self.level_map))
        if self.level_count < 1:
            raise ValueError("level_count must be >= 1")
        if len(self.level_map) != self.level_count:
            raise ValueError("level_map must have exactly level_count entries")
        if self.slot_duration <= 0:
            raise ValueError("slot_duration must be positive")
        if self.rotate_every < 0:
            raise ValueError("rotate_every must be >= 0")

    def slot_of(self, time_s: float) -> int:
        if time_s < 0:
            raise ValueError("time must be >= 0")
        return int(math.floor(time_s / self.slot_duration))

    def seed_for_slot(self, slot: int) -> bytes:
        if not self.rotate_every:
            return self.seed
        epoch = slot // self.rotate_every
        return hashlib.sha256(self.seed + b"rotate" + epoch.to_bytes(8, "big")).digest()

    def level_at(self, slot: int) -> int:
        return noise_level_at(self, slot)

    def sigma_at(self, slot: int) -> float:
        return self.level_map[noise_level_at(self, slot)]


def noise_level_at(schedule: DisclosureSchedule, slot: int) -> int:
    """Level index for slot ``slot``: SHA-256(seed || slot as 8-byte big-endian), first 8 bytes
    read big-endian, modulo the level count."""
    if slot < 0:
        raise ValueError("slot index must be >= 0")
    digest = hashlib.sha256(schedule.seed_for_slot(slot) + int(slot).to_bytes(8, "big")).digest()
    return int.from_bytes(digest[:8], "big") % schedule.level_count


# --------------------------------------------------------------------------- voting analytics


def _check_p(p: float):
    if not 0.0 <= p <= 1.0 or math.isnan(p):
        raise ValueError("p must lie in [0, 1]")


def binomial_pmf(w: int, v: int, p: float) -> float:
    """P(v successes in w independent trials of success probability p)."""
    if int(w) != w or int(v) != v or w < 0 or not 0 <= v <= w:
        raise ValueError("need integers 0 <= v <= w")
    _check_p(p)
    w, v = int(w), int(v)
    if p == 0.0:
        return 1.0 if v == 0 else 0.0
    if p == 1.0:
        return 1.0 if v == w else 0.0
    if w <= 50:
        return math.comb(w, v) * p**v * (1 - p) ** (w - v)
    log = (math.lgamma(w + 1) - math.lgamma(v + 1) - math.lgamma(w - v + 1)
           + v * math.log(p) + (w - v) * math.log1p(-p))
    return math.exp(log)


def p_succ(w: int, p: float) -> float:
    """Majority-vote success: sum of pmf(w, v, p) for v from ceil(w/2) to w (ties count)."""
    if int(w) != w or w < 1:
        raise ValueError("w must be an integer >= 1")
    return float(min(1.0, sum(binomial_pmf(w, v, p) for v in range(math.ceil(w / 2), int(w) + 1))))


def majority_vote(labels) -> int:
    """Most frequent label; ties go to the smallest label."""
    labels = list(labels)
    if not labels:
        raise ValueError("cannot vote on an empty sequence")
    counts = Counter(int(x) for x in labels)
    top = max(counts.values())
    return min(k for k, c in counts.items() if c == top)


def vote_monte_carlo(w: int, p: float, trials: int, rng: np.random.Generator) -> tuple[float, float]:
    """Empirical success rate of the majority-vote rule (ties succeed) and its standard error."""
    _check_p(p)
    wins = rng.binomial(w, p, size=trials) >= math.ceil(w / 2)
    rate = float(np.mean(wins))
    return rate, math.sqrt(max(rate * (1 - rate), 1e-300) / trials)


@dataclass(frozen=True)
class MajorityVotingAnalysis:
    p: float
    delta: float = 0.0
    w: int = 1

    def __post_init__(self):
        _check_p(self.p)
        _check_p(self.p - self.delta)
        if self.w < 1:
            raise ValueError("w must be >= 1")

    @property
    def p_adversary(self) -> float:
        return self.p - self.delta

    @property
    def legitimate(self) -> float:
        return p_succ(self.w, self.p)

    @property
    def adversary(self) -> float:
        return p_succ(self.w, self.p_adversary)


@dataclass
class PsuccTable:
    w: list
    rows: list  # (label, per-round p, [P_succ for each w])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["receiver", "p"] + [f"w{k}" for k in self.w])
            for label, p, vals in self.rows:
                out.writerow([label, f"{p:.6g}"] + [f"{v:.10f}" for v in vals])
        return path


def psucc_curves(p: float, deltas=(0.1, 0.2, 0.3, 0.4, 0.5), w_max: int = 15) -> PsuccTable:
    """P_succ against rounds w = 1..w_max for the legitimate receiver (p) and adversaries (p - delta)."""
    _check_p(p)
    if w_max < 1:
        raise ValueError("w_max must be >= 1")
    if deltas and p - max(deltas) < 0:
        raise ValueError("p - max(delta) must be >= 0")
    ws = list(range(1, w_max + 1))
    rows = [("legitimate", p, [p_succ(w, p) for w in ws])]
    for d in deltas:
        rows.append((f"adversary_delta_{d:g}", p - d, [p_succ(w, p - d) for w in ws]))
    return PsuccTable(ws, rows)


# --------------------------------------------------------------------------- Monte-Carlo disclosure


@dataclass
class DisclosureScenario:
    """Inputs to :func:`simulate_disclosure`.

    ``pool`` maps (device, level index) to held-out test inputs recorded at that level.
    ``legit_models`` maps level index to the model used in slots of that level;
    ``adversary_model`` is used in every slot. Models are callables returning class labels
    for a batch, or trained models accepted by :func:`rfmask.learn.predict`.
    """

    schedule: DisclosureSchedule
    pool: dict
    legit_models: dict
    adversary_model: object
    num_devices: int
    window: int = 6
    adversary_window: int | None = None
    adversary_label: str = "noise-free"


@dataclass
class DisclosureReport:
    rows: list
    summary: dict
    legit_confusion: np.ndarray
    adversary_confusion: np.ndarray

    CSV_HEADER = ("iteration", "slot", "true_device", "level", "sigma", "legit_prediction", "adversary_prediction")

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            out = csv.writer(fh, lineterminator="\n")
            out.writerow(self.CSV_HEADER)
            for r in self.rows:
                out.writerow([r[0], r[1], r[2], r[3], f"{r[4]:g}", r[5], r[6]])
        return path

    def to_json(self, path) -> Path:
        path = Path(path)
        d = dict(self.summary)
        d["legit_confusion"] = self.legit_confusion.tolist()
        d["adversary_confusion"] = self.adversary_confusion.tolist()
        path.write_text(json.dumps(d, indent=2, sort_keys=True))
        return path


def _labels_of(model, x) -> np.ndarray:
    from .learn import TrainedModel, predict

    if isinstance(model, TrainedModel):
        return np.asarray(predict(model, x)).reshape(len(x), -1).argmax(axis=1)
    return np.asarray(model(x), dtype=np.int64)


def simulate_disclosure(scenario: DisclosureScenario, iterations: int = 100, seed: int = 0) -> DisclosureReport:
    """Monte-Carlo rounds: in each iteration one random device transmits for ``window`` slots.

    Each slot draws one pool input at the scheduled level. The legitimate receiver knows
    the schedule and picks the model for that level; the adversary always uses its single
    model. Both also vote over the iteration's slots. Iteration ``i`` draws from
    ``default_rng([seed, i])``, so results do not depend on execution order.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    sc = scenario
    sched = sc.schedule
    n_dev = sc.num_devices
    adv_w = sc.adversary_window or sc.window
    slots_per_iter = max(sc.window, adv_w)
    # predictions for every pool input are computed once per model
    cache: dict = {}

    def preds(which, key):
        ck = (which, key)
        if ck not in cache:
            dev, level = key
            if key not in sc.pool:
                raise KeyError(f"no test inputs for device {dev} at level {level}")
            if which == "legit":
                if level not in sc.legit_models:
                    raise MissingModelError(f"no legitimate model for level {level}")
                cache[ck] = _labels_of(sc.legit_models[level], sc.pool[key])
            else:
                cache[ck] = _labels_of(sc.adversary_model, sc.pool[key])
        return cache[ck]

    rows = []
    legit_conf = np.zeros((n_dev, n_dev), dtype=np.int64)
    adv_conf = np.zeros((n_dev, n_dev), dtype=np.int64)
    vote_legit = vote_adv = 0
    per_iter_legit, per_iter_adv = [], []
    level_hits = np.zeros(sched.level_count, dtype=np.int64)
    level_legit = np.zeros(sched.level_count, dtype=np.int64)
    level_adv = np.zeros(sched.level_count, dtype=np.int64)
    for it in range(iterations):
        rng = np.random.default_rng([seed, it])
        dev = int(rng.integers(n_dev))
        lp, ap = [], []
        for j in range(slots_per_iter):
            slot = it * slots_per_iter + j
            level = noise_level_at(sched, slot)
            key = (dev, level)
            pl, pa = preds("legit", key), preds("adv", key)
            k = int(rng.integers(len(pl)))
            lab_l, lab_a = int(pl[k]), int(pa[k])
            rows.append((it, slot, dev, level, sched.level_map[level], lab_l, lab_a))
            legit_conf[dev, lab_l] += 1
            adv_conf[dev, lab_a] += 1
            level_hits[level] += 1
            level_legit[level] += lab_l == dev
            level_adv[level] += lab_a == dev
            lp.append(lab_l)
            ap.append(lab_a)
        vote_legit += majority_vote(lp[: sc.window]) == dev
        vote_adv += majority_vote(ap[:adv_w]) == dev
        per_iter_legit.append(np.mean(np.asarray(lp) == dev))
        per_iter_adv.append(np.mean(np.asarray(ap) == dev))

    from .learn.metrics import rates

    total = len(rows)
    acc_l = float(np.trace(legit_conf) / total)
    acc_a = float(np.trace(adv_conf) / total)
    fpr_l, fnr_l = rates(legit_conf)
    fpr_a, fnr_a = rates(adv_conf)
    with np.errstate(invalid="ignore", divide="ignore"):
        by_level = {
            str(lv): {
                "sigma": sched.level_map[lv],
                "slots": int(level_hits[lv]),
                "legit_accuracy": float(level_legit[lv] / level_hits[lv]) if level_hits[lv] else None,
                "adversary_accuracy": float(level_adv[lv] / level_hits[lv]) if level_hits[lv] else None,
            }
            for lv in range(sched.level_count)
        }
    summary = {
        "iterations": iterations,
        "seed": seed,
        "slots": total,
        "window": sc.window,
        "adversary_window": adv_w,
        "adversary": sc.adversary_label,
        "legit_accuracy": acc_l,
        "adversary_accuracy": acc_a,
        "gap": acc_l - acc_a,
        "legit_vote_accuracy": vote_legit / iterations,
        "adversary_vote_accuracy": vote_adv / iterations,
        # what the binomial model predicts for the vote given the measured per-slot accuracy
        "legit_vote_predicted": p_succ(sc.window, acc_l),
        "adversary_vote_predicted": p_succ(adv_w, acc_a),
        "iterations_legit_not_worse": int(np.sum(np.asarray(per_iter_legit) >= np.asarray(per_iter_adv))),
        "legit_fpr": fpr_l.tolist(), "legit_fnr": fnr_l.tolist(),
        "adversary_fpr": fpr_a.tolist(), "adversary_fnr": fnr_a.tolist(),
        "by_level": by_level,
        "schedule": {"level_count": sched.level_count, "level_map": list(sched.level_map),
                     "slot_duration": sched.slot_duration, "rotate_every": sched.rotate_every},
    }
    return DisclosureReport(rows, summary, legit_conf, adv_conf)
