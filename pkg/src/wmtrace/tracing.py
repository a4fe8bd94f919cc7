"""Experiment harness: detection TPR, N-user identification, collusion and FPR checks.

Every random draw comes from a generator seeded with ``(seed, stream, index)``
so results do not depend on evaluation order or worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats

from . import bitstats
from .codecs import CodecKey, embed, extract
from .imaging import TransformSpec, apply_transform

IDENTITY = TransformSpec("identity")

# Stream tags for derived generators.
_MESSAGE, _CHANNEL, _KEYS, _INNOCENT, _TRIALS = 1, 2, 3, 4, 5


def _rng(seed: int, *stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, *stream])


def random_message(k: int, seed: int, index: int = 0) -> np.ndarray:
    return _rng(seed, _MESSAGE, index).integers(0, 2, k, dtype=np.uint8)


def wilson_interval(successes: int, n: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = stats.binomtest(successes, n).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


@dataclass(frozen=True)
class ChannelModel:
    """How an extracted message is produced from an embedded one."""

    mode: str
    transform: TransformSpec | None = None
    p: float | None = None
    seed: int = 0

    def __post_init__(self):
        if self.mode == "bsc":
            if self.p is None or not 0.5 <= self.p <= 1.0:
                raise ValueError(f"bsc bit accuracy must be in [0.5, 1], got {self.p}")
        elif self.mode == "image":
            if self.transform is None:
                object.__setattr__(self, "transform", IDENTITY)
        else:
            raise ValueError(f"channel mode must be 'image' or 'bsc', got {self.mode!r}")

    @classmethod
    def bsc(cls, p: float, seed: int = 0) -> "ChannelModel":
        return cls("bsc", p=p, seed=seed)

    @classmethod
    def image(cls, transform: TransformSpec | str = IDENTITY, seed: int = 0) -> "ChannelModel":
        if isinstance(transform, str):
            transform = TransformSpec.parse(transform)
        return cls("image", transform=transform, seed=seed)

    @property
    def label(self) -> str:
        return f"bsc:{self.p}" if self.mode == "bsc" else str(self.transform)

    def flip(self, m: np.ndarray, n: int, *stream: int) -> np.ndarray:
        """``n`` noisy copies of ``m`` through the binary symmetric channel."""
        rng = _rng(self.seed, _CHANNEL, *stream)
        flips = rng.random((n, m.size)) >= self.p
        return (m[None, :] ^ flips).astype(np.uint8)


@dataclass
class ExperimentReport:
    task: str
    metrics: dict
    samples: dict
    seeds: dict
    rows: list[dict] = field(default_factory=list)
    curve: list[dict] = field(default_factory=list)
    wall_clock: float = 0.0

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metrics": self.metrics,
            "samples": self.samples,
            "seeds": self.seeds,
            "rows": self.rows,
            "curve": self.curve,
            "wall_clock": self.wall_clock,
        }

    def to_json(self, wall_clock: bool = True) -> str:
        d = self.to_dict()
        if not wall_clock:
            d.pop("wall_clock")
        return json.dumps(d, indent=2, default=_jsonable)

    def to_csv(self) -> str:
        """Plot-ready TPR/FPR curve with columns tau, fpr_theoretical, tpr, transform."""
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CURVE_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in self.curve:
            writer.writerow({c: row[c] for c in CURVE_COLUMNS})
        return buf.getvalue()

    def to_table(self) -> str:
        """Aligned plain-text rendering: one line per row, or key/value metrics."""
        if self.rows:
            cols = list(self.rows[0])
            cells = [[_fmt(r.get(c)) for c in cols] for r in self.rows]
            widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(cols)]
            lines = ["  ".join(c.ljust(w) for c, w in zip(cols, widths))]
            left = [isinstance(self.rows[0].get(c), str) for c in cols]
            lines += [
                "  ".join(v.ljust(w) if l else v.rjust(w) for v, w, l in zip(row, widths, left))
                for row in cells
            ]
        else:
            width = max(len(k) for k in self.metrics) if self.metrics else 0
            lines = [f"{k.ljust(width)}  {_fmt(v)}" for k, v in self.metrics.items()]
        return f"# {self.task}\n" + "\n".join(lines) + "\n"


CURVE_COLUMNS = ("tau", "fpr_theoretical", "tpr", "transform")


def score_curve(scores: np.ndarray, k: int, label: str) -> list[dict]:
    """TPR at every threshold for one set of matching scores."""
    scores = np.asarray(scores)
    tail = np.cumsum(np.bincount(scores, minlength=k + 1)[::-1])[::-1]
    return [
        {"tau": tau, "fpr_theoretical": bitstats.fpr_of_threshold(k, tau),
         "tpr": float(tail[tau]) / scores.size, "transform": label}
        for tau in range(k + 1)
    ]


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, TransformSpec):
        return str(o)
    raise TypeError(f"not JSON serializable: {type(o)}")


def _fmt(v) -> str:
    if isinstance(v, float):
        if math.isinf(v):
            return "+inf" if v > 0 else "-inf"
        return f"{v:.4g}" if (v != 0 and abs(v) < 1e-3) else f"{v:.4f}"
    return str(v)


def _pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _embed_and_extract(args):
    x, key, m, transform, seed = args
    xw = embed(x, key, m)
    out = []
    for t in transform:
        out.append(extract(apply_transform(xw, t, seed), key))
    return out


def run_detection_experiment(
    codec_key: CodecKey,
    images: Sequence[np.ndarray] | None,
    channel: ChannelModel,
    target_fprs: Sequence[float],
    seed: int = 0,
    n_trials: int | None = None,
    jobs: int = 1,
) -> ExperimentReport:
    """TPR of the matching-bits test at thresholds set from theoretical FPRs.

    In image mode each image is watermarked with one fixed random message,
    edited by the channel transform and decoded. In bsc mode ``n_trials``
    noisy copies of the message are drawn instead (``images`` is ignored).
    """
    start = time.perf_counter()
    k = codec_key.k
    m = random_message(k, seed)
    if channel.mode == "bsc":
        n = n_trials if n_trials is not None else (len(images) if images else 0)
        if n < 1:
            raise ValueError("bsc detection needs n_trials >= 1")
        decoded = channel.flip(m, n)
    else:
        if not images:
            raise ValueError("image-mode detection needs a non-empty corpus")
        tasks = [(x, codec_key, m, (channel.transform,), channel.seed + i) for i, x in enumerate(images)]
        decoded = np.array([r[0] for r in _pmap(_embed_and_extract, tasks, jobs)])
    scores = np.count_nonzero(decoded == m[None, :], axis=1)
    n = len(scores)

    targets = []
    for fpr in target_fprs:
        tau = bitstats.threshold_for_fpr(k, fpr, 1)
        hits = int(np.count_nonzero(scores >= tau))
        lo, hi = wilson_interval(hits, n)
        targets.append({
            "target_fpr": fpr, "tau": tau,
            "fpr_theoretical": bitstats.fpr_of_threshold(k, tau),
            "tpr": hits / n, "tpr_ci": [lo, hi],
        })
    return ExperimentReport(
        task="detection",
        metrics={
            "channel": channel.label,
            "bit_accuracy": float(np.mean(scores) / k),
        },
        samples={"n": n, "k": k},
        seeds={"seed": seed, "channel_seed": channel.seed},
        rows=targets,
        curve=score_curve(scores, k, channel.label),
        wall_clock=time.perf_counter() - start,
    )


def run_identification_experiment(
    n_users: int,
    n_decoys: int,
    images_per_user: int,
    channel: ChannelModel,
    target_fpr: float,
    k: int,
    seed: int,
    codec_key: CodecKey | None = None,
    images: Sequence[np.ndarray] | None = None,
) -> ExperimentReport:
    """Identify which of ``n_users + n_decoys`` signatures produced each message.

    Only the first ``n_users`` keys generate content; decoys exist to scale N
    up without generating more images. The threshold makes the global FPR over
    all N keys equal ``target_fpr``. Image mode cycles through ``images``.
    """
    if n_users < 1:
        raise ValueError("n_users must be >= 1")
    start = time.perf_counter()
    n_total = n_users + n_decoys
    tau = bitstats.threshold_for_fpr(k, target_fpr, n_total)
    keys = _rng(seed, _KEYS).integers(0, 2, (n_total, k), dtype=np.uint8)
    packed_keys = pack_bits(keys)

    correct = missed = wrong = 0
    for user in range(n_users):
        if channel.mode == "bsc":
            decoded = channel.flip(keys[user], images_per_user, user)
        else:
            if codec_key is None or not images:
                raise ValueError("image-mode identification needs a codec key and images")
            rows = []
            for j in range(images_per_user):
                x = images[(user * images_per_user + j) % len(images)]
                rows.append(_embed_and_extract((x, codec_key, keys[user], (channel.transform,), channel.seed + j))[0])
            decoded = np.array(rows)
        scores = k - popcount_distance(pack_bits(decoded), packed_keys)
        best = np.argmax(scores, axis=1)
        best_score = scores[np.arange(len(best)), best]
        flagged = best_score >= tau
        correct += int(np.count_nonzero(flagged & (best == user)))
        wrong += int(np.count_nonzero(flagged & (best != user)))
        missed += int(np.count_nonzero(~flagged))

    n = n_users * images_per_user
    lo, hi = wilson_interval(correct, n)
    return ExperimentReport(
        task="identification",
        metrics={
            "channel": channel.label,
            "n_keys": n_total,
            "tau": tau,
            "target_fpr": target_fpr,
            "accuracy": correct / n,
            "accuracy_ci": [lo, hi],
            "miss_rate": missed / n,
            "false_accusations": wrong,
        },
        samples={"n_trials": n, "n_users": n_users, "n_decoys": n_decoys, "k": k},
        seeds={"seed": seed, "channel_seed": channel.seed},
        wall_clock=time.perf_counter() - start,
    )


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack an ``(n, k)`` bit matrix into ``(n, ceil(k/64))`` uint64 words."""
    bits = np.asarray(bits, dtype=np.uint8)
    n, k = bits.shape
    pad = -k % 64
    padded = np.pad(bits, ((0, 0), (0, pad)))
    as_bytes = np.packbits(padded, axis=1, bitorder="little")
    return as_bytes.view(np.uint64).reshape(n, -1)


def popcount_distance(a: np.ndarray, b: np.ndarray, chunk: int = 256) -> np.ndarray:
    """Hamming distances between every packed row of ``a`` and of ``b``."""
    out = np.empty((a.shape[0], b.shape[0]), dtype=np.int64)
    for s in range(0, a.shape[0], chunk):
        x = a[s: s + chunk, None, :] ^ b[None, :, :]
        out[s: s + chunk] = np.bitwise_count(x).sum(axis=-1)
    return out


def run_collusion_experiment(
    key_i,
    key_j,
    p: float,
    n_bits_total: int,
    seed: int,
    images_per_trial: int = 100,
) -> ExperimentReport:
    """Two users average their models; decode messages under the marking assumption.

    Where the colluders' keys agree the shared bit comes out with accuracy
    ``p``; where they disagree the decoded bit is a fair coin. Each trial
    is one batch of ``images_per_trial`` images, scored against both
    colluders and a fresh random innocent key by total matching bits.
    """
    key_i = bitstats.as_bits(key_i)
    key_j = bitstats.as_bits(key_j, key_i.size)
    k = key_i.size
    if n_bits_total < k:
        raise ValueError("n_bits_total must be >= k")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must be in [0, 1]")
    start = time.perf_counter()
    n_images = -(-n_bits_total // k)
    n_trials = -(-n_images // images_per_trial)
    agree = key_i == key_j

    ones_dis = n_dis = hits_agree = n_agree = 0
    per_image_wins = both_wins = 0
    score_i = score_j = score_inn = 0.0
    for trial in range(n_trials):
        n = min(images_per_trial, n_images - trial * images_per_trial)
        rng = _rng(seed, _TRIALS, trial)
        keep = rng.random((n, k)) < p
        coins = rng.integers(0, 2, (n, k), dtype=np.uint8)
        decoded = np.where(agree, np.where(keep, key_i, 1 - key_i), coins).astype(np.uint8)
        innocent = _rng(seed, _INNOCENT, trial).integers(0, 2, k, dtype=np.uint8)

        si = np.count_nonzero(decoded == key_i, axis=1)
        sj = np.count_nonzero(decoded == key_j, axis=1)
        sn = np.count_nonzero(decoded == innocent, axis=1)
        per_image_wins += int(np.count_nonzero((si > sn) & (sj > sn)))
        both_wins += int(si.sum() > sn.sum() and sj.sum() > sn.sum())
        score_i += si.sum()
        score_j += sj.sum()
        score_inn += sn.sum()

        ones_dis += int(decoded[:, ~agree].sum())
        n_dis += decoded[:, ~agree].size
        hits_agree += int(np.count_nonzero(decoded[:, agree] == key_i[agree]))
        n_agree += decoded[:, agree].size

    return ExperimentReport(
        task="collusion",
        metrics={
            "p": p,
            "agree_positions": int(agree.sum()),
            "disagree_positions": int((~agree).sum()),
            "agree_accuracy": hits_agree / n_agree if n_agree else None,
            "disagree_ones_frequency": ones_dis / n_dis if n_dis else None,
            "mean_score_colluder_i": score_i / n_images,
            "mean_score_colluder_j": score_j / n_images,
            "mean_score_innocent": score_inn / n_images,
            "expected_colluder_score": float(p * agree.sum() + (~agree).sum() / 2),
            "trials_both_colluders_outscore_innocent": both_wins / n_trials,
            "images_both_colluders_outscore_innocent": per_image_wins / n_images,
        },
        samples={"n_bits": n_images * k, "n_images": n_images, "n_trials": n_trials,
                 "images_per_trial": images_per_trial, "k": k},
        seeds={"seed": seed},
        wall_clock=time.perf_counter() - start,
    )


def validate_fpr_empirical(
    k: int,
    taus: Sequence[int],
    n_trials: int,
    source: str,
    seed: int,
    codec_key: CodecKey | None = None,
    corpus: Sequence[np.ndarray] | None = None,
    n_keys: int = 10,
    chunk: int = 1 << 18,
) -> ExperimentReport:
    """Compare empirical flag rates on unmarked messages with the theoretical FPR.

    ``source="synthetic"`` draws fair-coin messages. ``source="extractor"``
    decodes every image of ``corpus`` with ``codec_key`` and tests it against
    at least ``n_keys`` random keys, enough to reach ``n_trials`` pairs.
    """
    if n_trials < 10_000:
        raise ValueError("n_trials must be >= 10^4")
    start = time.perf_counter()
    taus = [int(t) for t in taus]
    for t in taus:
        bitstats.fpr_of_threshold(k, t)
    counts = np.zeros(k + 2, dtype=np.int64)

    if source == "synthetic":
        key = _rng(seed, _KEYS).integers(0, 2, k, dtype=np.uint8)
        done = 0
        block = 0
        while done < n_trials:
            n = min(chunk, n_trials - done)
            m = _rng(seed, _TRIALS, block).integers(0, 2, (n, k), dtype=np.uint8)
            counts += np.bincount(np.count_nonzero(m == key, axis=1), minlength=k + 2)
            done += n
            block += 1
        total = n_trials
    elif source == "extractor":
        if codec_key is None or not corpus:
            raise ValueError("extractor mode needs a codec key and a non-empty corpus")
        decoded = np.array([extract(x, codec_key) for x in corpus])
        n_keys = max(n_keys, -(-n_trials // len(decoded)))
        keys = _rng(seed, _KEYS).integers(0, 2, (n_keys, k), dtype=np.uint8)
        scores = k - popcount_distance(pack_bits(decoded), pack_bits(keys))
        counts += np.bincount(scores.ravel(), minlength=k + 2)
        total = scores.size
    else:
        raise ValueError(f"source must be 'synthetic' or 'extractor', got {source!r}")

    tail = np.cumsum(counts[::-1])[::-1]
    rows = []
    for t in taus:
        flagged = int(tail[t])
        theory = bitstats.fpr_of_threshold(k, t)
        lo, hi = wilson_interval(flagged, total)
        sigma = math.sqrt(theory * (1 - theory) / total)
        rows.append({
            "tau": t,
            "fpr_theoretical": theory,
            "fpr_empirical": flagged / total,
            "ratio": flagged / total / theory if theory > 0 else None,
            "ci_low": lo,
            "ci_high": hi,
            "z": (flagged / total - theory) / sigma if sigma > 0 else 0.0,
            "expected_count": theory * total,
        })
    return ExperimentReport(
        task="validate-fpr",
        metrics={"source": source},
        samples={"n_trials": int(total), "k": k},
        seeds={"seed": seed},
        rows=rows,
        wall_clock=time.perf_counter() - start,
    )


def _robust_row(args):
    x, key, m, transforms, seed = args
    xw = embed(x, key, m)
    return [int(np.count_nonzero(extract(apply_transform(xw, t, seed), key) == m)) for t in transforms]


def robustness_table(
    codec_key: CodecKey,
    corpus: Sequence[np.ndarray],
    transforms: Sequence[TransformSpec],
    n_keys: int,
    seed: int,
    jobs: int = 1,
) -> ExperimentReport:
    """Mean bit accuracy per edit over ``n_keys`` random messages x the corpus."""
    if not corpus or not transforms:
        raise ValueError("need a non-empty corpus and transform list")
    start = time.perf_counter()
    transforms = list(transforms)
    tasks = []
    for j in range(n_keys):
        m = random_message(codec_key.k, seed, j)
        for i, x in enumerate(corpus):
            tasks.append((x, codec_key, m, transforms, seed + i))
    scores = np.array(_pmap(_robust_row, tasks, jobs))
    k = codec_key.k
    tau = bitstats.threshold_for_fpr(k, 1e-6, 1)
    rows = [
        {"transform": str(t), "bit_accuracy": float(scores[:, c].mean() / k),
         "tpr_at_1e-6": float(np.mean(scores[:, c] >= tau))}
        for c, t in enumerate(transforms)
    ]
    curve = [row for c, t in enumerate(transforms) for row in score_curve(scores[:, c], k, str(t))]
    return ExperimentReport(
        task="robustness",
        metrics={r["transform"]: r["bit_accuracy"] for r in rows},
        samples={"n_images": len(corpus), "n_keys": n_keys, "k": k},
        seeds={"seed": seed},
        rows=rows,
        curve=curve,
        wall_clock=time.perf_counter() - start,
    )
