"""Supervised learners shared by propensity estimation and ranker training.

The main learner is gradient-boosted depth-1 decision stumps with Newton
leaf values, written directly against numpy. It accepts fractional labels
and per-sample weights, which the EM loop and inverse-propensity training
both rely on. A linear-logistic model (IRLS) is available as a simpler
alternative.

Both learners are deterministic functions of their inputs; no sampling
happens inside ``fit``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODEL_FORMAT_VERSION = 1

DEFAULT_CLAMP_LO = 1e-6
DEFAULT_CLAMP_HI = 1.0 - 1e-6

_CONSTANT_STEP = -1  # stump feature index marking an intercept-only update


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


@dataclass
class BoostedStumps:
    """Gradient boosting with depth-1 trees.

    ``loss="logistic"`` boosts log-odds with Newton steps (targets may be
    fractional in [0, 1]); ``loss="squared"`` is plain least-squares
    boosting for score regression.
    """

    n_rounds: int = 100
    learning_rate: float = 0.1
    loss: str = "logistic"
    l2: float = 1e-3
    base_score: float = 0.0
    features: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))
    thresholds: np.ndarray = field(default_factory=lambda: np.zeros(0))
    left_values: np.ndarray = field(default_factory=lambda: np.zeros(0))
    right_values: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self) -> None:
        if self.loss not in ("logistic", "squared"):
            raise ValueError("unknown loss %r" % self.loss)
        if self.n_rounds < 1:
            raise ValueError("n_rounds must be positive")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must lie in (0, 1]")

    def fit(
        self,
        X: np.ndarray,
        y: np.ndarray,
        sample_weight: np.ndarray | None = None,
    ) -> "BoostedStumps":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, d = X.shape
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        if y.shape != (n,) or w.shape != (n,):
            raise ValueError("X, y and sample_weight disagree on length")
        if np.any(w < 0):
            raise ValueError("sample weights must be non-negative")
        if w.sum() == 0:
            raise ValueError("all sample weights are zero")
        if self.loss == "logistic" and (y.min() < 0 or y.max() > 1):
            raise ValueError("logistic loss expects labels in [0, 1]")

        ybar = float(np.average(y, weights=w))
        if self.loss == "logistic":
            ybar = min(max(ybar, DEFAULT_CLAMP_LO), DEFAULT_CLAMP_HI)
            self.base_score = float(np.log(ybar / (1.0 - ybar)))
        else:
            self.base_score = ybar

        order = np.argsort(X, axis=0, kind="stable")
        feats = np.empty(self.n_rounds, dtype=int)
        thrs = np.empty(self.n_rounds)
        lefts = np.empty(self.n_rounds)
        rights = np.empty(self.n_rounds)
        F = np.full(n, self.base_score)
        for t in range(self.n_rounds):
            if self.loss == "logistic":
                p = _sigmoid(F)
                g = w * (p - y)
                h = w * p * (1.0 - p)
            else:
                g = w * (F - y)
                h = w.copy()
            g_tot = g.sum()
            h_tot = h.sum()
            base_obj = g_tot * g_tot / (h_tot + self.l2)
            best_gain = 0.0
            best = None
            for j in range(d):
                idx = order[:, j]
                xs = X[idx, j]
                valid = xs[:-1] < xs[1:]
                if not np.any(valid):
                    continue
                gl = np.cumsum(g[idx])[:-1]
                hl = np.cumsum(h[idx])[:-1]
                gr = g_tot - gl
                hr = h_tot - hl
                gain = gl * gl / (hl + self.l2) + gr * gr / (hr + self.l2) - base_obj
                gain[~valid] = -np.inf
                pos = int(np.argmax(gain))
                if gain[pos] > best_gain:
                    best_gain = float(gain[pos])
                    thr = 0.5 * (xs[pos] + xs[pos + 1])
                    best = (j, thr, float(gl[pos]), float(hl[pos]), float(gr[pos]), float(hr[pos]))
            if best is None:
                # No usable split (constant features or no gain): take a
                # plain Newton step on the intercept so boosting still
                # converges toward the weighted target mean.
                delta = -self.learning_rate * g_tot / (h_tot + self.l2)
                feats[t] = _CONSTANT_STEP
                thrs[t] = 0.0
                lefts[t] = delta
                rights[t] = delta
                F += delta
            else:
                j, thr, gl_b, hl_b, gr_b, hr_b = best
                dl = -self.learning_rate * gl_b / (hl_b + self.l2)
                dr = -self.learning_rate * gr_b / (hr_b + self.l2)
                feats[t] = j
                thrs[t] = thr
                lefts[t] = dl
                rights[t] = dr
                F += np.where(X[:, j] <= thr, dl, dr)
        self.features = feats
        self.thresholds = thrs
        self.left_values = lefts
        self.right_values = rights
        return self

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        F = np.full(X.shape[0], self.base_score)
        for j, thr, dl, dr in zip(
            self.features, self.thresholds, self.left_values, self.right_values
        ):
            if j == _CONSTANT_STEP:
                F += dl
            else:
                F += np.where(X[:, j] <= thr, dl, dr)
        return F

    def predict(self, X: np.ndarray) -> np.ndarray:
        F = self.raw_scores(X)
        if self.loss == "logistic":
            return _sigmoid(F)
        return F


@dataclass
class LinearLogistic:
    """L2-regularized logistic regression fitted with IRLS."""

    n_iterations: int = 25
    l2: float = 1e-6
    weights: np.ndarray = field(default_factory=lambda: np.zeros(0))
    bias: float = 0.0

    def fit(
        self,
        X: np.ndarray,
        y: np.ndarray,
        sample_weight: np.ndarray | None = None,
    ) -> "LinearLogistic":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, d = X.shape
        w = np.ones(n) if sample_weight is None else np.asarray(sample_weight, dtype=float)
        if y.min() < 0 or y.max() > 1:
            raise ValueError("logistic regression expects labels in [0, 1]")
        Xb = np.hstack([X, np.ones((n, 1))])
        beta = np.zeros(d + 1)
        ridge = self.l2 * np.eye(d + 1)
        for _ in range(self.n_iterations):
            p = _sigmoid(Xb @ beta)
            r = w * p * (1.0 - p) + 1e-12
            grad = Xb.T @ (w * (p - y)) + self.l2 * beta
            hess = (Xb * r[:, None]).T @ Xb + ridge
            step = np.linalg.solve(hess, grad)
            beta -= step
            if np.max(np.abs(step)) < 1e-10:
                break
        self.weights = beta[:-1]
        self.bias = float(beta[-1])
        return self

    def raw_scores(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.weights + self.bias

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.raw_scores(X))


LEARNER_KINDS = ("boosted_stumps", "logistic_linear")


@dataclass
class RelevanceModel:
    """A fitted relevance predictor with clamped probability output.

    ``predict_proba`` is clamped into [clamp_lo, clamp_hi] so downstream
    likelihoods stay finite; ``score`` exposes the raw monotone score and
    is what ranking should use (clamping would collapse ties at the ends).
    """

    learner: BoostedStumps | LinearLogistic
    feature_dim: int
    clamp_lo: float = DEFAULT_CLAMP_LO
    clamp_hi: float = DEFAULT_CLAMP_HI

    def __post_init__(self) -> None:
        if not 0.0 < self.clamp_lo < self.clamp_hi < 1.0:
            raise ValueError("clamp bounds must satisfy 0 < lo < hi < 1")

    @property
    def learner_kind(self) -> str:
        return "boosted_stumps" if isinstance(self.learner, BoostedStumps) else "logistic_linear"

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        return np.clip(self.learner.predict(X), self.clamp_lo, self.clamp_hi)

    def score(self, X: np.ndarray) -> np.ndarray:
        X = self._check(X)
        return self.learner.raw_scores(X)

    def _check(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.feature_dim:
            raise ValueError(
                "expected features of shape (n, %d), got %r" % (self.feature_dim, X.shape)
            )
        return X

    def save(self, path: str | Path) -> None:
        lines = [
            "opbm-model %d" % MODEL_FORMAT_VERSION,
            "kind %s" % self.learner_kind,
            "feature_dim %d" % self.feature_dim,
            "clamp %s %s" % (repr(self.clamp_lo), repr(self.clamp_hi)),
        ]
        lr = self.learner
        if isinstance(lr, BoostedStumps):
            lines.append("loss %s" % lr.loss)
            lines.append("learning_rate %s" % repr(lr.learning_rate))
            lines.append("l2 %s" % repr(lr.l2))
            lines.append("base_score %s" % repr(lr.base_score))
            lines.append("n_stumps %d" % len(lr.features))
            for j, thr, dl, dr in zip(lr.features, lr.thresholds, lr.left_values, lr.right_values):
                lines.append("stump %d %s %s %s" % (j, repr(float(thr)), repr(float(dl)), repr(float(dr))))
        else:
            lines.append("bias %s" % repr(lr.bias))
            lines.append("weights %s" % " ".join(repr(float(v)) for v in lr.weights))
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "RelevanceModel":
        text = Path(path).read_text(encoding="utf-8").splitlines()
        if not text or not text[0].startswith("opbm-model "):
            raise ValueError("%s: not a model file" % path)
        version = int(text[0].split()[1])
        if version != MODEL_FORMAT_VERSION:
            raise ValueError("%s: unsupported model format version %d" % (path, version))
        fields: dict[str, str] = {}
        stumps: list[tuple[int, float, float, float]] = []
        for line in text[1:]:
            if not line.strip():
                continue
            key, _, rest = line.partition(" ")
            if key == "stump":
                j, thr, dl, dr = rest.split()
                stumps.append((int(j), float(thr), float(dl), float(dr)))
            else:
                fields[key] = rest
        kind = fields["kind"]
        clamp_lo, clamp_hi = (float(v) for v in fields["clamp"].split())
        if kind == "boosted_stumps":
            n = int(fields["n_stumps"])
            if n != len(stumps):
                raise ValueError("%s: expected %d stumps, found %d" % (path, n, len(stumps)))
            learner = BoostedStumps(
                n_rounds=max(n, 1),
                learning_rate=float(fields["learning_rate"]),
                loss=fields["loss"],
                l2=float(fields["l2"]),
                base_score=float(fields["base_score"]),
                features=np.array([s[0] for s in stumps], dtype=int),
                thresholds=np.array([s[1] for s in stumps]),
                left_values=np.array([s[2] for s in stumps]),
                right_values=np.array([s[3] for s in stumps]),
            )
        elif kind == "logistic_linear":
            learner = LinearLogistic(
                weights=np.array([float(v) for v in fields["weights"].split()]),
                bias=float(fields["bias"]),
            )
        else:
            raise ValueError("%s: unknown learner kind %r" % (path, kind))
        return cls(
            learner=learner,
            feature_dim=int(fields["feature_dim"]),
            clamp_lo=clamp_lo,
            clamp_hi=clamp_hi,
        )


def make_learner(kind: str, n_rounds: int, learning_rate: float, loss: str = "logistic", l2: float = 1e-3):
    if kind == "boosted_stumps":
        return BoostedStumps(n_rounds=n_rounds, learning_rate=learning_rate, loss=loss, l2=l2)
    if kind == "logistic_linear":
        return LinearLogistic()
    raise ValueError("unknown learner kind %r (expected one of %s)" % (kind, ", ".join(LEARNER_KINDS)))
