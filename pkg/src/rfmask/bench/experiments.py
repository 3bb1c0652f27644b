"""Experiment orchestration: each experiment writes CSV tables plus a JSON summary.

Image cells are split 60/20/20 (train/validation/test) with a split that depends only on
the root seed and the cell, so every experiment sees the same held-out images.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import time
from pathlib import Path

import numpy as np

from .. import protocol as proto
from ..channel import ChannelConfig, LinkKind, analytic_snr_penalty, measure_snr_penalty
from ..learn import (evaluate, evaluate_predictions, one_class_report, predict, reconstruction_mse, split_indices,
                     train_autoencoder, train_classifier, train_rawiq_classifier)
from .config import ExperimentConfig
from .dataset import Cell, Dataset

EXPERIMENTS = ("accuracy-vs-sigma", "all-levels", "one-class", "wireless", "rawiq", "disclosure", "psucc")


def _write_csv(path: Path, header, rows) -> Path:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([f"{v:.6g}" if isinstance(v, float) else v for v in r])
    return path


def _write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str))
    return path


class Runner:
    """Shared state for a batch of experiments: the dataset, the splits and trained models."""

    def __init__(self, cfg: ExperimentConfig, dataset: Dataset | None = None, out=None, log=None):
        self.cfg = cfg
        self.ds = dataset or Dataset(cfg)
        self.out = Path(out if out is not None else cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.log = log or (lambda *_: None)
        self._models: dict = {}
        self._wireless: Runner | None = None

    # ------------------------------------------------------------------ data

    @property
    def devices(self) -> range:
        return range(self.cfg.dataset.devices)

    def _split(self, n: int, cell: Cell, salt: int = 0x5B17) -> tuple:
        rng = np.random.default_rng(cell.rng_key(self.cfg.seed, self.cfg.channel.kind.value) + [salt])
        return split_indices(np.zeros(n, dtype=int), rng)

    def split_images(self, kind, sigma) -> dict:
        """{"train"|"val"|"test": (images, labels)} over all devices for one (kind, sigma)."""
        parts = {"train": ([], []), "val": ([], []), "test": ([], [])}
        for dev in self.devices:
            ims = self.ds.images(dev, kind, sigma)
            for name, idx in zip(parts, self._split(len(ims), Cell.of(dev, kind, sigma))):
                parts[name][0].append(ims[idx])
                parts[name][1].append(np.full(idx.size, dev))
        return {k: (np.concatenate(v[0]), np.concatenate(v[1])) for k, v in parts.items()}

    def all_images(self, kind, sigma) -> tuple:
        xs = [self.ds.images(d, kind, sigma) for d in self.devices]
        return np.concatenate(xs), np.concatenate([np.full(len(x), d) for d, x in zip(self.devices, xs)])

    def _seed(self, *tag) -> np.random.Generator:
        return np.random.default_rng([self.cfg.seed, *[abs(hash_str(t)) for t in tag]])

    def model_for(self, kind, sigmas, tag: str):
        """Image classifier trained on the train/val splits of the given (kind, sigma) cells."""
        if tag not in self._models:
            tr_x, tr_y, va_x, va_y = [], [], [], []
            for s in sigmas:
                sp = self.split_images(kind, s)
                tr_x.append(sp["train"][0]); tr_y.append(sp["train"][1])
                va_x.append(sp["val"][0]); va_y.append(sp["val"][1])
            t0 = time.perf_counter()
            self._models[tag] = train_classifier(np.concatenate(tr_x), np.concatenate(tr_y), self.cfg.classifier,
                                                 self._seed("classifier", tag), np.concatenate(va_x),
                                                 np.concatenate(va_y))
            self.log(f"trained {tag} in {time.perf_counter() - t0:.1f}s")
        return self._models[tag]

    def noise_free_model(self):
        return self.model_for("none", [0.0], "noise-free")

    def level_model(self, kind, sigma):
        return self.model_for(kind, [sigma], f"level-{kind}-{sigma:g}")

    def all_levels_model(self, kind, sigmas):
        return self.model_for(kind, list(sigmas), f"all-levels-{kind}")

    # ------------------------------------------------------------------ experiments

    def accuracy_vs_sigma(self) -> dict:
        cfg = self.cfg
        model = self.noise_free_model()
        rows, by_kind = [], {}
        test0 = self.split_images("none", 0.0)["test"]
        acc0 = evaluate(model, *test0).accuracy
        for kind in cfg.dataset.noise_kinds:
            accs = []
            for s in cfg.dataset.sigmas:
                acc = acc0 if s == 0 else evaluate(model, *self.all_images(kind, s)).accuracy
                rng = np.random.default_rng([cfg.seed, 0x5A12, int(round(s * 1e6)), hash_str(kind)])
                _, snr = measure_snr_penalty(s, cfg.snr_reference_db, 200_000, rng, kind)
                rows.append((kind, s, acc, snr))
                accs.append(acc)
            by_kind[kind] = accs
        path = _write_csv(self.out / "accuracy_vs_sigma.csv", ("kind", "sigma", "accuracy", "snr_db"), rows)
        sig = list(cfg.dataset.sigmas)
        summary = {
            "csv": path.name,
            "sigmas": sig,
            "accuracy": by_kind,
            "collapse_sigma": {k: next((s for s, a in zip(sig, v) if a < 0.2), None) for k, v in by_kind.items()},
            "max_kind_spread": max(float(np.ptp([by_kind[k][i] for k in by_kind])) for i in range(len(sig))),
            "analytic_snr_db": {f"{s:g}": cfg.snr_reference_db - analytic_snr_penalty(s, cfg.snr_reference_db)
                                for s in sig},
        }
        return summary

    def all_levels(self) -> dict:
        kind = self.cfg.protocol.noise_kind
        sig = self.cfg.dataset.sigmas
        model = self.all_levels_model(kind, sig)
        rows, xs, ys = [], [], []
        for s in sig:
            x, y = self.split_images(kind, s)["test"]
            rows.append((kind, s, evaluate(model, x, y).accuracy))
            xs.append(x); ys.append(y)
        rep = evaluate(model, np.concatenate(xs), np.concatenate(ys))
        path = _write_csv(self.out / "all_levels.csv", ("kind", "sigma", "accuracy"), rows)
        rep.to_csv(self.out / "all_levels_confusion.csv")
        return {"csv": path.name, "overall_accuracy": rep.accuracy, "fpr": rep.fpr.tolist(), "fnr": rep.fnr.tolist()}

    def one_class(self) -> dict:
        """Per-device autoencoders on noise-free images; MSE of every device's held-out images."""
        rows, genuine_all, other_all, summary_dev = [], [], [], {}
        sp = self.split_images("none", 0.0)
        tx, ty = sp["test"]
        for d in self.devices:
            train = np.concatenate([sp["train"][0][sp["train"][1] == d], sp["val"][0][sp["val"][1] == d]])
            ae, th = train_autoencoder(train, self.cfg.autoencoder, self._seed("autoencoder", d))
            mse = reconstruction_mse(ae, tx)
            for od in self.devices:
                m = mse[ty == od]
                rows.append((d, od, float(m.mean()), th.tau, float(np.mean(m < th.tau))))
            genuine, other = mse[ty == d], mse[ty != d]
            genuine_all.append(genuine - th.tau)
            other_all.append(other - th.tau)
            rep = one_class_report(genuine, other, th.tau)
            summary_dev[d] = {"tau": th.tau, "mse_mean": th.train_mse_mean, "mse_std": th.train_mse_std,
                              "fpr": float(np.mean(genuine >= th.tau)), "fnr": float(np.mean(other < th.tau)),
                              "auc": rep.roc.auc}
        path = _write_csv(self.out / "one_class.csv",
                          ("model_device", "test_device", "mean_mse", "tau", "accept_rate"), rows)
        pooled = one_class_report(np.concatenate(genuine_all), np.concatenate(other_all), 0.0)
        pooled.roc_to_csv(self.out / "one_class_roc.csv")
        f, t, thr = pooled.roc.operating_point()
        return {"csv": path.name, "devices": summary_dev,
                # positive class = anomaly: FPR counts genuine images rejected
                "fpr": float(np.mean(np.concatenate(genuine_all) >= 0)),
                "fnr": float(np.mean(np.concatenate(other_all) < 0)),
                "auc": pooled.roc.auc, "operating_point": {"fpr": f, "tpr": t, "mse_minus_tau": -thr}}

    def wireless_runner(self) -> "Runner":
        """A runner over the same grid on the wireless link (``self`` if already wireless)."""
        if self.cfg.channel.kind is LinkKind.WIRELESS:
            return self
        if self._wireless is None:
            wl = dataclasses.replace(self.cfg, channel=ChannelConfig.wireless())
            self._wireless = Runner(wl, Dataset(wl), self.out, self.log)
        return self._wireless

    def wireless(self) -> dict:
        sub = self.wireless_runner()
        kind = self.cfg.protocol.noise_kind
        model = sub.noise_free_model()
        rows = []
        for s in self.cfg.dataset.sigmas:
            if s == 0:
                acc = evaluate(model, *sub.split_images("none", 0.0)["test"]).accuracy
            else:
                acc = evaluate(model, *sub.all_images(kind, s)).accuracy
            rows.append(("wireless", kind, s, acc))
        path = _write_csv(self.out / "wireless.csv", ("link", "kind", "sigma", "accuracy"), rows)
        return {"csv": path.name, "accuracy": [r[3] for r in rows]}

    def rawiq(self) -> dict:
        """Raw-IQ classifier vs the image classifier, both trained on noise-free wireless recordings."""
        sub = self.wireless_runner()
        rc = self.cfg.rawiq
        kind = self.cfg.protocol.noise_kind
        parts = {"train": ([], []), "val": ([], []), "test": ([], [])}
        for d in self.devices:
            ch = sub.ds.chunks(d, "none", 0.0, rc.length)
            for name, idx in zip(parts, sub._split(len(ch), Cell.of(d, "none", 0.0), salt=0x1A)):
                parts[name][0].append(ch[idx])
                parts[name][1].append(np.full(idx.size, d))
        (tr_x, tr_y), (va_x, va_y), (te_x, te_y) = ((np.concatenate(a), np.concatenate(b)) for a, b in parts.values())
        t0 = time.perf_counter()
        model = train_rawiq_classifier(tr_x, tr_y, rc, self._seed("rawiq"), va_x, va_y)
        self.log(f"trained rawiq in {time.perf_counter() - t0:.1f}s")
        self._models["rawiq"] = model
        image_model = sub.noise_free_model()
        rows = []
        for s in self.cfg.dataset.sigmas:
            if s == 0:
                x, y = te_x, te_y
                img = evaluate(image_model, *sub.split_images("none", 0.0)["test"]).accuracy
            else:
                chunks = [sub.ds.chunks(d, kind, s, rc.length) for d in self.devices]
                x = np.concatenate(chunks)
                y = np.concatenate([np.full(len(c), d) for d, c in zip(self.devices, chunks)])
                img = evaluate(image_model, *sub.all_images(kind, s)).accuracy
            rows.append(("wireless", kind, s, evaluate(model, x, y).accuracy, img))
        path = _write_csv(self.out / "rawiq.csv", ("link", "kind", "sigma", "rawiq_accuracy", "image_accuracy"), rows)
        return {"csv": path.name, "sigmas": list(self.cfg.dataset.sigmas),
                "rawiq_accuracy": [r[3] for r in rows], "image_accuracy": [r[4] for r in rows]}

    def disclosure(self, iterations: int | None = None) -> dict:
        cfg = self.cfg
        pc = cfg.protocol
        missing = [s for s in pc.levels if s not in cfg.dataset.sigmas]
        if missing:
            raise KeyError(f"protocol levels {missing} are not in the dataset sigma grid")
        sched = proto.DisclosureSchedule(pc.key.encode(), pc.slot_duration, len(pc.levels), pc.levels,
                                         pc.rotate_every)
        kind = pc.noise_kind
        bank = {i: self.level_model(kind, s) for i, s in enumerate(pc.levels)}
        pool = {}
        for i, s in enumerate(pc.levels):
            x, y = self.split_images(kind, s)["test"]
            for d in self.devices:
                pool[(d, i)] = x[y == d]
        adversaries = {"noise-free": self.noise_free_model(),
                       "all-levels": self.all_levels_model(kind, pc.levels)}
        reports = {}
        for name, adv in adversaries.items():
            sc = proto.DisclosureScenario(sched, pool, bank, adv, cfg.dataset.devices, pc.window,
                                          pc.adversary_window or None, name)
            reports[name] = proto.simulate_disclosure(sc, iterations or pc.iterations, seed=cfg.seed)
        main = reports[pc.adversary]
        main.to_csv(self.out / "disclosure.csv")
        main.to_json(self.out / "disclosure.json")
        return {"csv": "disclosure.csv", "adversary": pc.adversary, **{k: main.summary[k] for k in (
            "legit_accuracy", "adversary_accuracy", "gap", "legit_vote_accuracy", "adversary_vote_accuracy")},
            "other_adversaries": {k: r.summary["adversary_accuracy"] for k, r in reports.items()}}

    def psucc(self) -> dict:
        pc = self.cfg.protocol
        table = proto.psucc_curves(pc.psucc_p, pc.psucc_deltas, pc.psucc_w_max)
        path = table.to_csv(self.out / "psucc.csv")
        return {"csv": path.name, "legitimate": table.rows[0][2]}

    def run(self, name: str) -> dict:
        fn = {
            "accuracy-vs-sigma": self.accuracy_vs_sigma, "all-levels": self.all_levels,
            "one-class": self.one_class, "wireless": self.wireless, "rawiq": self.rawiq,
            "disclosure": self.disclosure, "psucc": self.psucc,
        }.get(name)
        if fn is None:
            raise KeyError(f"unknown experiment {name!r}; choose from {', '.join(EXPERIMENTS)}")
        t0 = time.perf_counter()
        summary = fn()
        summary = {"experiment": name, "seed": self.cfg.seed, "config": self.cfg.as_dict(), **summary,
                   "wall_clock_s": round(time.perf_counter() - t0, 3)}
        _write_json(self.out / f"{name}.summary.json", summary)
        return summary


def hash_str(x) -> int:
    """Stable 32-bit hash of a value's string form (Python's ``hash`` is salted per process)."""
    import zlib

    return zlib.crc32(str(x).encode())


def run_experiment(name: str, cfg: ExperimentConfig, dataset_dir=None, log=None) -> dict:
    root = Path(dataset_dir) if dataset_dir is not None else None
    return Runner(cfg, Dataset(cfg, root), log=log).run(name)
