"""PCC / MAE, k-fold protocol, cross-validation and the pre-training ablation."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .dit import DiTConfig, DiTModel
from .head import HeadConfig, encode_dataset, head_forward, train_head_on_features, SCORE_MAX, SCORE_MIN
from .rng import DiffusionRng, derive_seed

logger = logging.getLogger(__name__)

VARIANTS = ("scratch-frozen-encoder", "scratch-end-to-end-head-only", "generative-pretrained")


class DegenerateInputError(ValueError):
    """Correlation is undefined because an input has zero variance."""


def pcc(y, yhat) -> float:
    """Pearson correlation (population moments; the 1/n factors cancel)."""
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError(f"pcc needs two equal-length vectors, got {y.shape} and {yhat.shape}")
    if y.size < 2:
        raise ValueError("pcc needs at least two samples")
    dy = y - y.mean()
    dh = yhat - yhat.mean()
    sy = np.sqrt(np.mean(dy * dy))
    sh = np.sqrt(np.mean(dh * dh))
    if sy == 0.0 or sh == 0.0:
        raise DegenerateInputError("pcc undefined: an input has zero variance")
    r = np.mean(dy * dh) / (sy * sh)
    return float(min(1.0, max(-1.0, r)))


def mae(y, yhat) -> float:
    y = np.asarray(y, dtype=np.float64)
    yhat = np.asarray(yhat, dtype=np.float64)
    if y.shape != yhat.shape or y.ndim != 1:
        raise ValueError(f"mae needs two equal-length vectors, got {y.shape} and {yhat.shape}")
    if y.size == 0:
        raise ValueError("mae needs at least one sample")
    return float(np.mean(np.abs(y - yhat)))


# ---------------------------------------------------------------------------
# folds


@dataclass(frozen=True)
class FoldSplit:
    k: int
    assignments: np.ndarray  # fold index per sample

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != fold)

    def sizes(self) -> list[int]:
        return [int((self.assignments == f).sum()) for f in range(self.k)]


def kfold_split(n: int, k: int = 5, seed: int = 0) -> FoldSplit:
    """Seeded shuffle, then contiguous chunks; the first ``n % k`` folds get one extra."""
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if n < k:
        raise ValueError(f"need at least k={k} samples, got {n}")
    order = DiffusionRng.from_labels(seed, 0xF01D).permutation(n)
    assign = np.empty(n, dtype=np.int64)
    for f, chunk in enumerate(np.array_split(order, k)):
        assign[chunk] = f
    return FoldSplit(k, assign)


def read_folds_csv(path, ids: list[str]) -> FoldSplit:
    """External ``sample_id,fold`` assignment; every id must appear exactly once."""
    mapping: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["sample_id", "fold"]:
            raise ValueError(f"{path}:1: expected header 'sample_id,fold'")
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise ValueError(f"{path}:{reader.line_num}: expected 2 fields")
            sid = row[0].strip()
            if sid in mapping:
                raise ValueError(f"{path}:{reader.line_num}: duplicate sample id {sid!r}")
            mapping[sid] = int(row[1])
    missing = [i for i in ids if i not in mapping]
    if missing:
        raise ValueError(f"{path}: no fold for {len(missing)} samples, e.g. {missing[:3]}")
    assign = np.array([mapping[i] for i in ids], dtype=np.int64)
    uniq = np.unique(assign)
    if not np.array_equal(uniq, np.arange(len(uniq))):
        raise ValueError(f"{path}: folds must be numbered 0..k-1, got {uniq.tolist()}")
    return FoldSplit(len(uniq), assign)


# ---------------------------------------------------------------------------
# reports


@dataclass
class FoldResult:
    fold: int
    pcc: float
    mae: float
    n_test: int


@dataclass
class EvalReport:
    folds: list[FoldResult]
    seed: int
    fingerprint: str = ""
    label: str = ""
    notes: list[str] = field(default_factory=list)

    @property
    def mean_pcc(self) -> float:
        return float(np.mean([f.pcc for f in self.folds]))

    @property
    def mean_mae(self) -> float:
        return float(np.mean([f.mae for f in self.folds]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["fold", "pcc", "mae"])
        for f in self.folds:
            w.writerow([f.fold, f"{f.pcc:.6f}", f"{f.mae:.6f}"])
        w.writerow(["mean", f"{self.mean_pcc:.6f}", f"{self.mean_mae:.6f}"])
        return buf.getvalue()

    def to_table(self) -> str:
        rows = [(str(f.fold), f.pcc, f.mae) for f in self.folds]
        rows.append(("mean", self.mean_pcc, self.mean_mae))
        return render_table([(r[0], r[1], r[2]) for r in rows], first="Fold")


def _fmt(v, digits=4) -> str:
    return "--" if v is None or (isinstance(v, float) and np.isnan(v)) else f"{v:.{digits}f}"


def render_table(rows, first: str = "Model Configuration") -> str:
    """Aligned text table with PCC (higher is better) and MAE (lower is better).

    Rows are ``(name, pcc, mae)``; ``None`` cells render as ``--``.
    """
    head = (first, "PCC ↑", "MAE ↓")
    cells = [(str(n), _fmt(p), _fmt(m)) for n, p, m in rows]
    widths = [max(len(r[i]) for r in [head, *cells]) for i in range(3)]
    line = lambda r: "  ".join(  # noqa: E731
        (r[0].ljust(widths[0]), r[1].rjust(widths[1]), r[2].rjust(widths[2]))
    )
    rule = "-" * (sum(widths) + 4)
    return "\n".join([line(head), rule, *(line(r) for r in cells)]) + "\n"


def comparison_table(reports: list[EvalReport]) -> str:
    return render_table([(r.label, r.mean_pcc, r.mean_mae) for r in reports])


def fingerprint(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


# ---------------------------------------------------------------------------
# protocol


def evaluate_features(feats: np.ndarray, y: np.ndarray, split: FoldSplit, seed: int,
                      head_cfg: HeadConfig, label: str = "") -> EvalReport:
    """Per fold: train a head on the other folds, score the held-out fold."""
    folds, notes = [], []
    for f in range(split.k):
        tr, te = split.train_indices(f), split.test_indices(f)
        head = train_head_on_features(feats[tr], y[tr], head_cfg, derive_seed(seed, f))
        pred = head_forward(head, feats[te])
        if head_cfg.clamp:
            pred = np.clip(pred, SCORE_MIN, SCORE_MAX)
        try:
            r = pcc(y[te], pred)
        except DegenerateInputError:
            # constant predictions carry no linear trend
            r = 0.0
            notes.append(f"fold {f}: constant predictions, pcc recorded as 0")
            logger.warning("%s fold %d: constant predictions, pcc recorded as 0", label, f)
        folds.append(FoldResult(f, r, mae(y[te], pred), len(te)))
    return EvalReport(folds, seed, label=label, notes=notes)


def cross_validate(encoder: DiTModel, data, k: int = 5, seed: int = 0,
                   head_cfg: HeadConfig | None = None, t_feat: int = 1,
                   split: FoldSplit | None = None, label: str = "") -> EvalReport:
    """k-fold evaluation of a frozen encoder plus freshly trained heads."""
    head_cfg = head_cfg or HeadConfig()
    if len(data) == 0:
        raise ValueError("cross_validate needs labeled data")
    split = split or kfold_split(len(data), k, seed)
    images = np.stack([s.image for s in data]).astype(np.float32)
    y = np.array([s.score for s in data], dtype=np.float64)
    feats = encode_dataset(encoder, images, t_feat)
    rep = evaluate_features(feats, y, split, seed, head_cfg, label)
    rep.fingerprint = fingerprint({
        "encoder": encoder.checksum(), "head": head_cfg.__dict__, "t_feat": t_feat,
        "k": split.k, "seed": seed,
    })
    return rep


def build_variant_encoder(variant: str, model_cfg: DiTConfig, seed: int,
                          pretrained: DiTModel | None = None) -> DiTModel:
    """Frozen encoder for one ablation row.

    * ``generative-pretrained``: the supplied denoising-pretrained model.
    * ``scratch-frozen-encoder``: every weight random (no zero-init layers),
      i.e. a random-feature encoder.
    * ``scratch-end-to-end-head-only``: the encoder exactly as initialised for
      end-to-end training (adaLN-Zero), with only the head trained.
    """
    if variant == "generative-pretrained":
        if pretrained is None:
            raise ValueError("generative-pretrained needs a pretrained encoder")
        enc = pretrained
    elif variant == "scratch-frozen-encoder":
        enc = DiTModel(model_cfg, seed=seed).randomize_(derive_seed(seed, 0xAB1A))
    elif variant == "scratch-end-to-end-head-only":
        enc = DiTModel(model_cfg, seed=seed)
    else:
        raise ValueError(f"unknown ablation variant {variant!r}; choose from {VARIANTS}")
    enc.freeze()
    return enc


def run_ablation(data, k: int = 5, seed: int = 0, variants=VARIANTS,
                 model_cfg: DiTConfig | None = None, pretrained: DiTModel | None = None,
                 head_cfg: HeadConfig | None = None, t_feat: int = 1,
                 split: FoldSplit | None = None) -> list[EvalReport]:
    """Cross-validate each variant on shared folds and seeds."""
    variants = list(variants)
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ValueError(f"unknown ablation variant(s) {bad}; choose from {VARIANTS}")
    if model_cfg is None:
        if pretrained is None:
            raise ValueError("need model_cfg or a pretrained encoder")
        model_cfg = pretrained.config
    split = split or kfold_split(len(data), k, seed)
    reports = []
    for v in variants:
        enc = build_variant_encoder(v, model_cfg, seed, pretrained)
        reports.append(cross_validate(enc, data, split.k, seed, head_cfg, t_feat, split, label=v))
    return reports


def write_report_csv(report: EvalReport, path) -> None:
    Path(path).write_text(report.to_csv())
