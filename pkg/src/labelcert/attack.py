"""Greedy label-flip attacks and robustness curves.

The attacker pushes the decision statistic toward the boundary one training
label at a time, largest per-flip movement first; against the smoothed
classifier the analytic certifier is re-run after every flip. Attack results
are empirical upper bounds on robustness and are replay-verified before
being reported. Certified radii from the certifier are the matching lower
bounds; a sound pipeline keeps the attacked curve above the certified one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .certify import certify_point, solve_chernoff
from .data import Dataset, SmoothingConfig
from .errors import ValidationError
from .multiclass import predict_and_certify_multiclass
from .regression import AlphaVector, RidgeModel, alpha_for, as_alpha_array, train
from .sampling import _as_labels


@dataclass(frozen=True)
class AttackResult:
    """Flip count at the first prediction change, or None within the budget."""

    flips_needed: int | None
    flip_sequence: tuple[tuple[int, int], ...]  # (training index, new label)
    budget: int

    @property
    def achieved(self) -> bool:
        return self.flips_needed is not None


def _verify_replay(
    predict: Callable[[np.ndarray], int],
    labels: np.ndarray,
    sequence: tuple[tuple[int, int], ...],
    original_prediction: int,
) -> None:
    """Re-apply the flip sequence and check the prediction changes exactly
    at the last flip; guards against ordering bugs inflating robustness."""
    cur = labels.copy()
    for step, (idx, new_label) in enumerate(sequence, start=1):
        cur[idx] = new_label
        changed = predict(cur) != original_prediction
        if changed != (step == len(sequence)):
            raise RuntimeError(
                f"attack replay mismatch at flip {step}/{len(sequence)}"
            )


def _binary_flip_order(alpha: np.ndarray, labels: np.ndarray, prediction: int):
    """Indices ordered by movement of alpha^T y toward the wrong side."""
    deltas = alpha * (1 - 2 * labels)  # statistic change if index flips
    if prediction == 1:
        helpful = np.flatnonzero(deltas < 0)
        return helpful[np.argsort(deltas[helpful], kind="stable")]
    helpful = np.flatnonzero(deltas > 0)
    return helpful[np.argsort(-deltas[helpful], kind="stable")]


def _undefended_predict_binary(alpha: np.ndarray):
    def predict(labels: np.ndarray) -> int:
        return 1 if float(alpha @ labels) >= 0.5 else 0

    return predict


def _class_scores(alpha: np.ndarray, labels: np.ndarray, K: int) -> np.ndarray:
    return np.bincount(labels, weights=alpha, minlength=K)


def _undefended_predict_multi(alpha: np.ndarray, K: int):
    def predict(labels: np.ndarray) -> int:
        return int(np.argmax(_class_scores(alpha, labels, K)))

    return predict


def _best_multiclass_flip(
    alpha: np.ndarray,
    labels: np.ndarray,
    flipped: np.ndarray,
    target: int,
    rival: int,
):
    """(index, new label) minimizing the (target - rival) score gap, or None."""
    best = (0.0, -1, -1)
    for j in np.flatnonzero(~flipped):
        aj = float(alpha[j])
        if aj == 0.0:
            continue
        cj = int(labels[j])
        base = aj * (int(cj == target) - int(cj == rival))
        # moving j's weight to the rival (or off the target) shifts the gap by
        # aj*([v==target]-[v==rival]) - base; only the two extreme v matter
        for v in (rival, target):
            if v == cj:
                continue
            delta = aj * (int(v == target) - int(v == rival)) - base
            if delta < best[0]:
                best = (delta, j, v)
    if best[1] < 0:
        return None
    return best[1], best[2]


def greedy_attack_undefended(
    alpha: AlphaVector | np.ndarray,
    y,
    K: int,
    budget: int,
) -> AttackResult:
    """Attack the plain (no-smoothing) decision rule."""
    a = as_alpha_array(alpha)
    labels = _as_labels(y).copy()
    n = labels.shape[0]
    if budget > n:
        raise ValidationError(f"budget {budget} exceeds n={n}")
    sequence: list[tuple[int, int]] = []
    if K == 2:
        predict = _undefended_predict_binary(a)
        pred0 = predict(labels)
        order = _binary_flip_order(a, labels, pred0)
        cur = labels.copy()
        for idx in order[:budget]:
            new = 1 - cur[idx]
            cur[idx] = new
            sequence.append((int(idx), int(new)))
            if predict(cur) != pred0:
                result = AttackResult(len(sequence), tuple(sequence), budget)
                _verify_replay(predict, labels, result.flip_sequence, pred0)
                return result
        return AttackResult(None, tuple(sequence), budget)
    predict = _undefended_predict_multi(a, K)
    pred0 = predict(labels)
    cur = labels.copy()
    flipped = np.zeros(n, dtype=bool)
    while len(sequence) < budget:
        scores = _class_scores(a, cur, K)
        pred_cur = int(np.argmax(scores))
        masked = scores.copy()
        masked[pred_cur] = -np.inf
        rival = int(np.argmax(masked))
        move = _best_multiclass_flip(a, cur, flipped, pred_cur, rival)
        if move is None:
            break
        j, v = move
        cur[j] = v
        flipped[j] = True
        sequence.append((int(j), int(v)))
        if predict(cur) != pred0:
            result = AttackResult(len(sequence), tuple(sequence), budget)
            _verify_replay(predict, labels, result.flip_sequence, pred0)
            return result
    return AttackResult(None, tuple(sequence), budget)


def greedy_attack_smoothed(
    model: RidgeModel,
    y,
    test_features: np.ndarray,
    cfg: SmoothingConfig,
    table=None,
    budget: int | None = None,
) -> AttackResult:
    """Attack the smoothed classifier, re-certifying after every flip.

    The flip ordering targets the inner-product statistic (the optimal attack
    on the true smoothed vote); the stopping rule consults the analytic
    certifier's prediction, so the result upper-bounds the deployed
    classifier's robustness.
    """
    labels = _as_labels(y).copy()
    n = labels.shape[0]
    if budget is None:
        budget = n
    if budget > n:
        raise ValidationError(f"budget {budget} exceeds n={n}")
    a = alpha_for(model, test_features).alpha
    if cfg.K == 2:
        def predict(lab: np.ndarray) -> int:
            return solve_chernoff(a, lab, cfg.q, cfg.precision_bits).prediction

        pred0 = predict(labels)
        order = _binary_flip_order(a, labels, pred0)
        cur = labels.copy()
        sequence: list[tuple[int, int]] = []
        for idx in order[:budget]:
            new = 1 - cur[idx]
            cur[idx] = new
            sequence.append((int(idx), int(new)))
            if predict(cur) != pred0:
                result = AttackResult(len(sequence), tuple(sequence), budget)
                _verify_replay(predict, labels, result.flip_sequence, pred0)
                return result
        return AttackResult(None, tuple(sequence), budget)

    def predict_multi(lab: np.ndarray) -> int:
        return predict_and_certify_multiclass(model, lab, test_features, cfg).prediction

    pred0 = predict_multi(labels)
    cur = labels.copy()
    flipped = np.zeros(n, dtype=bool)
    sequence = []
    while len(sequence) < budget:
        cert = predict_and_certify_multiclass(model, cur, test_features, cfg)
        worst = max(
            (p for p in cert.per_pair if p.i == cert.prediction),
            key=lambda p: p.log_bound,
        )
        move = _best_multiclass_flip(a, cur, flipped, cert.prediction, worst.i_prime)
        if move is None:
            break
        j, v = move
        cur[j] = v
        flipped[j] = True
        sequence.append((int(j), int(v)))
        if predict_multi(cur) != pred0:
            result = AttackResult(len(sequence), tuple(sequence), budget)
            _verify_replay(predict_multi, labels, result.flip_sequence, pred0)
            return result
    return AttackResult(None, tuple(sequence), budget)


@dataclass(frozen=True)
class RobustnessCurve:
    """Surviving-fraction curves over the flip count r."""

    flips: np.ndarray
    certified: np.ndarray | None
    attacked: np.ndarray | None

    def write_csv(self, fh, flip_counts=None) -> None:
        cols = ["flips"]
        if self.certified is not None:
            cols.append("certified_accuracy")
        if self.attacked is not None:
            cols.append("attacked_accuracy")
        fh.write(",".join(cols) + "\n")
        rows = self.flips if flip_counts is None else [
            r for r in flip_counts if r <= self.flips[-1]
        ]
        for r in rows:
            vals = [str(int(r))]
            if self.certified is not None:
                vals.append(repr(float(self.certified[r])))
            if self.attacked is not None:
                vals.append(repr(float(self.attacked[r])))
            fh.write(",".join(vals) + "\n")


def _survival(values: np.ndarray, n: int) -> np.ndarray:
    """fraction of entries >= r for r = 0..n; values may contain +inf."""
    out = np.empty(n + 1)
    for r in range(n + 1):
        out[r] = float(np.mean(values >= r))
    return out


def robustness_curve(
    dataset: Dataset,
    test_set: Dataset,
    cfg: SmoothingConfig,
    mode: str = "defended",
    model: RidgeModel | None = None,
    table=None,
    budget: int | None = None,
    lam: float | None = None,
    log=None,
) -> RobustnessCurve:
    """Certified (lower-bound) and attacked (upper-bound) accuracy curves.

    defended: certify every test point and attack the smoothed classifier;
    a point counts toward certified accuracy at r if it is correctly
    classified and its radius (tight when a table is supplied) is >= r, and
    toward attacked accuracy if the attack needs more than r flips.
    undefended: attack the plain classifier; only the attacked curve exists.
    """
    if mode not in ("defended", "undefended"):
        raise ValidationError(f"mode must be defended or undefended, got {mode}")
    if model is None:
        model = train(dataset.features, dataset.labels, cfg.q, cfg.K, lam=lam)
    labels = dataset.labels
    n = dataset.n
    Xt = test_set.features.values
    yt = test_set.labels.labels
    m = Xt.shape[0]
    cert_surv = np.full(m, -1.0)
    att_surv = np.full(m, -1.0)
    for idx in range(m):
        x = Xt[idx]
        if mode == "defended":
            if cfg.K == 2:
                cert = certify_point(model, labels, x, cfg, table=table)
                radius = cert.r_tight if cert.r_tight is not None else cert.r_kl
            else:
                cert = predict_and_certify_multiclass(model, labels, x, cfg)
                radius = cert.r_kl
            correct = cert.prediction == yt[idx]
            attack = greedy_attack_smoothed(
                model, labels, x, cfg, table=table, budget=budget
            )
        else:
            a = alpha_for(model, x).alpha
            if cfg.K == 2:
                pred = 1 if float(a @ labels.labels) >= 0.5 else 0
            else:
                pred = int(np.argmax(_class_scores(a, labels.labels, cfg.K)))
            correct = pred == yt[idx]
            radius = None
            attack = greedy_attack_undefended(
                a, labels, cfg.K, budget=n if budget is None else budget
            )
        if correct:
            if radius is not None:
                cert_surv[idx] = radius
            att_surv[idx] = (
                attack.flips_needed - 1 if attack.achieved else np.inf
            )
        if log is not None and (idx + 1) % 50 == 0:
            log(f"robustness_curve[{mode}]: {idx + 1}/{m} points")
    flips = np.arange(n + 1)
    certified = _survival(cert_surv, n) if mode == "defended" else None
    attacked = _survival(att_surv, n)
    return RobustnessCurve(flips=flips, certified=certified, attacked=attacked)
