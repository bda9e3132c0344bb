"""Verification metrics for MasterFace attacks on embedding datasets.

Scores are cosine similarities.  A comparison matches when its score is
``>= threshold``; thresholds are order statistics of the dataset's own
zero-effort imposter scores, so the achieved false match rate is exact.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .embeddings import DimensionMismatchError, EmbeddingDataset
from .seeding import unit_rng

log = logging.getLogger(__name__)

DEFAULT_FMRS = (1e-1, 1e-2, 1e-3, 1e-4)
BLOCK_ROWS = 1024


@dataclass
class ScoreSet:
    genuine: np.ndarray
    imposter: np.ndarray
    genuine_total: int
    imposter_total: int
    pair_cap: int | None = None
    seed: int | None = None
    warnings: list = field(default_factory=list)

    @property
    def sampled(self) -> bool:
        return (self.genuine.size < self.genuine_total) or (self.imposter.size < self.imposter_total)


def _score_blocks(vectors: np.ndarray, ident: np.ndarray):
    """Yield (scores, same_identity) for all pairs i < j in row-major order."""
    n = vectors.shape[0]
    for start in range(0, n, BLOCK_ROWS):
        stop = min(start + BLOCK_ROWS, n)
        block = np.clip(vectors[start:stop] @ vectors.T, -1.0, 1.0)
        for k in range(stop - start):
            i = start + k
            yield block[k, i + 1:], ident[i + 1:] == ident[i]


def _subsample(scores: np.ndarray, cap, rng) -> np.ndarray:
    if cap is None or scores.size <= cap:
        return scores
    keep = np.sort(rng.choice(scores.size, size=cap, replace=False))
    return scores[keep]


def score_sets(db: EmbeddingDataset, pair_cap: int | None = None, seed: int = 0) -> ScoreSet:
    """Genuine and imposter similarity multisets over all unordered pairs.

    With ``pair_cap`` set, a set larger than the cap is replaced by a uniform
    random subsample of exactly ``pair_cap`` pairs drawn with ``seed``.
    """
    if pair_cap is not None and pair_cap < 1:
        raise ValueError("pair_cap must be positive")
    ident = db.identity_index()
    genuine, imposter = [], []
    for scores, same in _score_blocks(db.vectors, ident):
        genuine.append(scores[same])
        imposter.append(scores[~same])
    genuine = np.concatenate(genuine) if genuine else np.empty(0)
    imposter = np.concatenate(imposter) if imposter else np.empty(0)
    warnings = []
    if genuine.size == 0:
        warnings.append("no genuine pairs: FNMR undefined")
    if imposter.size == 0:
        warnings.append("no imposter pairs: thresholds undefined")
    for w in warnings:
        log.warning(w)
    return ScoreSet(
        genuine=_subsample(genuine, pair_cap, unit_rng(seed, 0)),
        imposter=_subsample(imposter, pair_cap, unit_rng(seed, 1)),
        genuine_total=int(genuine.size),
        imposter_total=int(imposter.size),
        pair_cap=pair_cap,
        seed=seed,
        warnings=warnings,
    )


@dataclass
class ThresholdRow:
    target_fmr: float
    threshold: float
    achieved_fmr: float
    fnmr: float
    insufficient_imposters: bool


@dataclass
class ThresholdTable:
    rows: list[ThresholdRow]
    imposter_count: int
    genuine_count: int

    @property
    def fmrs(self) -> list[float]:
        return [r.target_fmr for r in self.rows]

    @property
    def thresholds(self) -> list[float]:
        return [r.threshold for r in self.rows]

    def to_dict(self) -> dict:
        return {
            "imposter_count": self.imposter_count,
            "genuine_count": self.genuine_count,
            "rows": [vars(r) for r in self.rows],
        }


def threshold_at_fmr(imposter_sorted: np.ndarray, target: float) -> float:
    """Smallest imposter score ``t`` with ``#{s >= t} / n <= target``.

    If no imposter score qualifies (ties at the top, or ``target`` below
    ``1/n``) the threshold is the next float above the largest score.
    """
    s = imposter_sorted
    n = s.size
    uniq = np.unique(s)
    ge = n - np.searchsorted(s, uniq, side="left")
    ok = ge / n <= target
    if ok.any():
        return float(uniq[int(np.argmax(ok))])
    return float(np.nextafter(uniq[-1], np.inf))


def thresholds(scores: ScoreSet, targets=DEFAULT_FMRS) -> ThresholdTable:
    imp = np.sort(np.asarray(scores.imposter, dtype=np.float64))
    if imp.size == 0:
        raise ValueError("empty imposter set: cannot derive thresholds")
    gen = np.asarray(scores.genuine, dtype=np.float64)
    rows = []
    for f in targets:
        f = float(f)
        if not 0.0 < f <= 1.0:
            raise ValueError(f"target FMR must lie in (0, 1], got {f}")
        t = threshold_at_fmr(imp, f)
        achieved = achieved_fmr(imp, t)
        fnmr = float(np.mean(gen < t)) if gen.size else math.nan
        rows.append(ThresholdRow(f, t, achieved, fnmr, imp.size < 1.0 / f))
    return ThresholdTable(rows, int(imp.size), int(gen.size))


def achieved_fmr(imposter, t: float) -> float:
    imposter = np.asarray(imposter)
    return float(np.count_nonzero(imposter >= t) / imposter.size)


@dataclass
class CoverageReport:
    fmrs: list
    thresholds: list
    attack_labels: list
    attack_ids: list
    sample: np.ndarray  # (attacks, fmrs)
    identity: np.ndarray  # (attacks, fmrs)
    n_images: int
    n_identities: int

    @property
    def sample_coverage(self) -> np.ndarray:
        return self.sample.mean(axis=0)

    @property
    def identity_coverage(self) -> np.ndarray:
        return self.identity.mean(axis=0)

    def to_dict(self) -> dict:
        per_attack = [
            {"identity": lab, "image_id": img,
             "sample": self.sample[k].tolist(), "identity_fraction": self.identity[k].tolist()}
            for k, (lab, img) in enumerate(zip(self.attack_labels, self.attack_ids))
        ]
        return {
            "fmrs": list(self.fmrs),
            "thresholds": list(self.thresholds),
            "n_images": self.n_images,
            "n_identities": self.n_identities,
            "sample_coverage": self.sample_coverage.tolist(),
            "identity_coverage": self.identity_coverage.tolist(),
            "per_attack": per_attack,
        }


def attack_scores(db: EmbeddingDataset, attacks: EmbeddingDataset) -> np.ndarray:
    """``(attacks, db images)`` matrix of cosine similarities."""
    if db.dim != attacks.dim:
        raise DimensionMismatchError(f"dimension mismatch: database d={db.dim}, attacks d={attacks.dim}")
    return np.clip(attacks.vectors @ db.vectors.T, -1.0, 1.0)


def attack_coverage(db: EmbeddingDataset, attacks: EmbeddingDataset, table: ThresholdTable) -> CoverageReport:
    """Per-attack matched image and identity fractions at each threshold."""
    if len(attacks) == 0:
        raise ValueError("no attack embeddings supplied")
    scores = attack_scores(db, attacks)
    ident = db.identity_index()
    n_ident = int(ident.max()) + 1
    onehot = np.zeros((len(db), n_ident))
    onehot[np.arange(len(db)), ident] = 1.0
    sample = np.empty((len(attacks), len(table.rows)))
    identity = np.empty_like(sample)
    for j, row in enumerate(table.rows):
        matched = scores >= row.threshold
        sample[:, j] = matched.sum(axis=1) / len(db)
        identity[:, j] = (matched.astype(np.float64) @ onehot > 0).sum(axis=1) / n_ident
    return CoverageReport(table.fmrs, table.thresholds, list(attacks.labels), list(attacks.image_ids),
                          sample, identity, len(db), n_ident)


@dataclass
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_dict(self) -> dict:
        return {"edges": self.edges.tolist(), "counts": self.counts.tolist()}


def histogram(scores, bins: int = 100, lo: float = -1.0, hi: float = 1.0) -> Histogram:
    """Fixed-width histogram; the last bin is closed on the right."""
    edges = np.linspace(lo, hi, bins + 1)
    counts, _ = np.histogram(np.clip(np.asarray(scores, dtype=np.float64), lo, hi), bins=edges)
    return Histogram(edges, counts)


def attack_score_distribution(db: EmbeddingDataset, attacks: EmbeddingDataset, bins: int = 100):
    """All attack-vs-database similarities (flattened) and their histogram."""
    scores = attack_scores(db, attacks).ravel()
    return scores, histogram(scores, bins)


def imposter_mean_jackknife(db: EmbeddingDataset) -> tuple[float, float]:
    """Mean of all cross-identity scores and its delete-one-identity jackknife SE.

    Imposter pairs sharing an identity are correlated, so the per-pair
    standard error is far too small.  Both quantities are computed exactly
    from per-identity vector sums without enumerating pairs.
    """
    ident = db.identity_index()
    k = int(ident.max()) + 1
    if k < 3:
        raise ValueError("the jackknife needs at least 3 identities")
    sums = np.zeros((k, db.dim))
    np.add.at(sums, ident, db.vectors)
    sizes = np.bincount(ident, minlength=k).astype(np.float64)
    total_vec = sums.sum(axis=0)
    n = sizes.sum()
    total = 0.5 * (total_vec @ total_vec - np.einsum("ij,ij->", sums, sums))
    count = 0.5 * (n * n - sizes @ sizes)
    own = sums @ total_vec - np.einsum("ij,ij->i", sums, sums)
    own_count = sizes * (n - sizes)
    loo = (total - own) / (count - own_count)
    se = math.sqrt((k - 1) / k * float(np.sum((loo - loo.mean()) ** 2)))
    return float(total / count), se


def compare_to_imposters(attack_matrix: np.ndarray, imposter, imposter_se: float | None = None) -> dict:
    """Mean attack score versus mean imposter score.

    The attack standard error treats each attack as one independent unit
    (its scores against a shared database are correlated).  ``imposter_se``
    should come from :func:`imposter_mean_jackknife`; without it the
    per-pair SE is used.  The naive per-comparison z-score is reported
    alongside.
    """
    attack_matrix = np.atleast_2d(np.asarray(attack_matrix, dtype=np.float64))
    imposter = np.asarray(imposter, dtype=np.float64)
    per_attack = attack_matrix.mean(axis=1)
    m_att = float(attack_matrix.mean())
    m_imp = float(imposter.mean())
    se_imp_naive = float(imposter.std(ddof=1) / math.sqrt(imposter.size))
    se_imp = se_imp_naive if imposter_se is None else float(imposter_se)
    if per_attack.size > 1:
        se_att = float(per_attack.std(ddof=1) / math.sqrt(per_attack.size))
    else:
        se_att = math.nan
    se_att_naive = float(attack_matrix.std(ddof=1) / math.sqrt(attack_matrix.size))
    se = math.hypot(se_att, se_imp)
    se_naive = math.hypot(se_att_naive, se_imp_naive)
    diff = m_att - m_imp
    return {
        "attack_mean": m_att,
        "imposter_mean": m_imp,
        "difference": diff,
        "standard_error": se,
        "z": diff / se if se > 0 else math.inf,
        "standard_error_naive": se_naive,
        "z_naive": diff / se_naive if se_naive > 0 else math.inf,
    }


def _fmr_tag(f: float) -> str:
    return f"{f:.0e}"


def coverage_table_csv(reports: dict) -> str:
    """Aggregate coverage in percent, one row per attack set."""
    first = next(iter(reports.values()))
    tags = [_fmr_tag(f) for f in first.fmrs]
    cols = ["attack_set"] + [f"sample_coverage_pct@{t}" for t in tags] + [f"identity_coverage_pct@{t}" for t in tags]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for name, rep in reports.items():
        w.writerow([name] + [repr(float(100.0 * v)) for v in rep.sample_coverage]
                   + [repr(float(100.0 * v)) for v in rep.identity_coverage])
    return buf.getvalue()


def histograms_csv(series: dict) -> str:
    """Long-format histogram table: series, bin_lo, bin_hi, count."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["series", "bin_lo", "bin_hi", "count"])
    for name, h in series.items():
        for lo, hi, c in zip(h.edges[:-1], h.edges[1:], h.counts):
            w.writerow([name, repr(float(lo)), repr(float(hi)), int(c)])
    return buf.getvalue()
