"""Toy differentiable objectives, synthetic datasets, and cost-budget batching.

Three objectives stand in for a real model, small enough that a central
finite-difference oracle verifies every analytic gradient in milliseconds:

* Quadratic: 0.5*(theta-theta*)' A (theta-theta*) with optional analytic
  gradient noise whose per-coordinate std is noise_sigma/sqrt(batch cost),
  so bigger batches mean less noise with exact control over the variance.
* LinearRegression: mean of 0.5*(theta.x - y)^2 over the batch samples.
* Mlp: one tanh hidden layer with softmax cross-entropy, parameters kept
  under a few hundred so finite differences stay cheap.

Samples carry an integer cost (a token-count analog); the dynamic batcher
fills batches greedily up to a cost budget in dataset order.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core import RngStream, Vec, as_vec

__all__ = [
    "Sample",
    "Batch",
    "Objective",
    "Quadratic",
    "LinearRegression",
    "Mlp",
    "loss",
    "grad",
    "finite_diff_grad",
    "dynamic_batcher",
    "make_cost_stream",
    "make_linreg_samples",
    "make_blob_samples",
    "dump_samples",
    "load_samples",
]


@dataclass(frozen=True)
class Sample:
    """One data point: feature vector, scalar target (real or class id),
    and a positive integer cost standing in for its memory footprint."""

    features: tuple
    target: float
    cost: int = 1

    def __post_init__(self):
        if self.cost < 1:
            raise ValueError("sample cost must be >= 1")


@dataclass(frozen=True)
class Batch:
    samples: tuple
    total_cost: int = field(init=False)

    def __post_init__(self):
        if len(self.samples) == 0:
            raise ValueError("batch must be non-empty")
        object.__setattr__(
            self, "total_cost", sum(s.cost for s in self.samples)
        )

    def __len__(self) -> int:
        return len(self.samples)

    def feature_matrix(self) -> np.ndarray:
        return np.array([s.features for s in self.samples], dtype=np.float64)

    def target_vector(self) -> np.ndarray:
        return np.array([s.target for s in self.samples], dtype=np.float64)


class Objective:
    """Interface shared by all toy objectives.

    loss/grad take a Batch; grad additionally takes the caller's RngStream
    so concurrent workers never share sampler state. Objectives themselves
    are immutable and safe to share.
    """

    dim: int
    has_noise: bool = False

    def loss(self, theta: Vec, batch: Batch) -> float:
        raise NotImplementedError

    def grad(self, theta: Vec, batch: Batch, rng: RngStream | None = None) -> Vec:
        raise NotImplementedError

    def _check_dim(self, theta: Vec) -> None:
        if theta.shape != (self.dim,):
            raise ValueError(
                f"theta has dimension {theta.shape[0] if theta.ndim == 1 else theta.shape}, "
                f"objective expects {self.dim}"
            )


class Quadratic(Objective):
    """0.5*(theta-theta_star)' A (theta-theta_star) with A symmetric PD.

    The batch contributes only its total cost, which scales the injected
    gradient noise: each coordinate gets i.i.d. normal noise with std
    noise_sigma/sqrt(total_cost). noise_sigma=0 makes the gradient exact.
    """

    def __init__(self, a_matrix, theta_star, noise_sigma: float = 0.0):
        a = np.array(a_matrix, dtype=np.float64)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise ValueError("A must be a square matrix")
        if not np.allclose(a, a.T, atol=1e-12):
            raise ValueError("A must be symmetric")
        eigs = np.linalg.eigvalsh(a)
        if eigs.min() <= 0:
            raise ValueError("A must be positive definite")
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        self.a_matrix = a
        self.theta_star = as_vec(theta_star)
        if self.theta_star.shape[0] != a.shape[0]:
            raise ValueError("theta_star dimension must match A")
        self.noise_sigma = float(noise_sigma)
        self.dim = a.shape[0]

    @property
    def has_noise(self) -> bool:
        return self.noise_sigma > 0

    def loss(self, theta: Vec, batch: Batch) -> float:
        self._check_dim(theta)
        d = theta - self.theta_star
        return float(0.5 * d @ self.a_matrix @ d)

    def grad(self, theta: Vec, batch: Batch, rng: RngStream | None = None) -> Vec:
        self._check_dim(theta)
        g = self.a_matrix @ (theta - self.theta_star)
        if self.noise_sigma > 0:
            if rng is None:
                raise ValueError("noisy quadratic gradient requires an RngStream")
            std = self.noise_sigma / np.sqrt(batch.total_cost)
            g = g + rng.normal(0.0, std, size=self.dim)
        return g

    @classmethod
    def random(
        cls,
        dim: int,
        seed: int,
        cond: float = 10.0,
        noise_sigma: float = 0.0,
        theta_star_scale: float = 5.0,
    ) -> "Quadratic":
        """Random PD quadratic with log-spaced eigenvalues in [1, cond] and
        a normal theta_star scaled by theta_star_scale."""
        rng = RngStream(seed, stream=2)
        gauss = rng.normal(size=(dim, dim))
        q, _ = np.linalg.qr(gauss)
        eigs = np.logspace(0.0, np.log10(cond), dim)
        a = q @ np.diag(eigs) @ q.T
        a = 0.5 * (a + a.T)  # kill asymmetry from rounding
        theta_star = rng.normal(0.0, theta_star_scale, size=dim)
        return cls(a, theta_star, noise_sigma)


class LinearRegression(Objective):
    """Half-squared-error regression on the batch samples:
    mean over samples of 0.5*(theta.x - y)^2."""

    def __init__(self, dim: int):
        if dim < 1:
            raise ValueError("dim must be >= 1")
        self.dim = dim

    def loss(self, theta: Vec, batch: Batch) -> float:
        self._check_dim(theta)
        x = batch.feature_matrix()
        y = batch.target_vector()
        r = x @ theta - y
        return float(0.5 * np.mean(r * r))

    def grad(self, theta: Vec, batch: Batch, rng: RngStream | None = None) -> Vec:
        self._check_dim(theta)
        x = batch.feature_matrix()
        y = batch.target_vector()
        r = x @ theta - y
        return (x.T @ r) / len(batch)


def make_linreg_samples(
    rng: RngStream,
    n: int,
    theta_true,
    target_noise: float = 0.0,
    cost_max: int = 1,
) -> list[Sample]:
    """n regression samples with y = theta_true.x (+ optional target noise).
    target_noise=0 makes theta_true an exact fit."""
    theta_true = as_vec(theta_true)
    xs = rng.normal(size=(n, theta_true.shape[0]))
    ys = xs @ theta_true
    if target_noise > 0:
        ys = ys + rng.normal(0.0, target_noise, size=n)
    costs = make_cost_stream(rng, n, cost_max)
    return [Sample(tuple(xs[i]), float(ys[i]), costs[i]) for i in range(n)]


class Mlp(Objective):
    """One-hidden-layer tanh network with softmax cross-entropy loss.

    Parameter layout in theta: W1 (hidden x in) row-major, b1, W2
    (classes x hidden) row-major, b2. Kept small so the finite-difference
    oracle can sweep every coordinate quickly.
    """

    def __init__(self, in_dim: int, hidden: int, classes: int):
        if min(in_dim, hidden) < 1 or classes < 2:
            raise ValueError("need in_dim, hidden >= 1 and classes >= 2")
        self.in_dim = in_dim
        self.hidden = hidden
        self.classes = classes
        self.dim = hidden * in_dim + hidden + classes * hidden + classes

    def _unpack(self, theta: Vec):
        h, d, c = self.hidden, self.in_dim, self.classes
        i = 0
        w1 = theta[i : i + h * d].reshape(h, d)
        i += h * d
        b1 = theta[i : i + h]
        i += h
        w2 = theta[i : i + c * h].reshape(c, h)
        i += c * h
        b2 = theta[i : i + c]
        return w1, b1, w2, b2

    def _forward(self, theta: Vec, x: np.ndarray):
        w1, b1, w2, b2 = self._unpack(theta)
        a = np.tanh(x @ w1.T + b1)
        z = a @ w2.T + b2
        z = z - z.max(axis=1, keepdims=True)
        log_p = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        return a, log_p

    def loss(self, theta: Vec, batch: Batch) -> float:
        self._check_dim(theta)
        x = batch.feature_matrix()
        y = batch.target_vector().astype(np.int64)
        _, log_p = self._forward(theta, x)
        return float(-np.mean(log_p[np.arange(len(batch)), y]))

    def grad(self, theta: Vec, batch: Batch, rng: RngStream | None = None) -> Vec:
        self._check_dim(theta)
        x = batch.feature_matrix()
        y = batch.target_vector().astype(np.int64)
        n = len(batch)
        w1, b1, w2, b2 = self._unpack(theta)
        a, log_p = self._forward(theta, x)
        dz2 = np.exp(log_p)
        dz2[np.arange(n), y] -= 1.0
        dz2 /= n
        dw2 = dz2.T @ a
        db2 = dz2.sum(axis=0)
        da = dz2 @ w2
        dz1 = da * (1.0 - a * a)
        dw1 = dz1.T @ x
        db1 = dz1.sum(axis=0)
        return np.concatenate([dw1.ravel(), db1, dw2.ravel(), db2])

    def init_theta(self, rng: RngStream, scale: float = 0.5) -> Vec:
        return rng.normal(0.0, scale, size=self.dim)


def make_blob_samples(
    rng: RngStream,
    n_per_class: int,
    centers,
    spread: float = 0.5,
    cost_max: int = 1,
) -> list[Sample]:
    """Gaussian-blob classification samples: one normal(center_c, spread)
    cloud per class, class id as target. centers has shape
    (classes, in_dim) and is drawn by the caller so that train and probe
    sets can share it while using different streams."""
    centers = np.asarray(centers, dtype=np.float64)
    samples = []
    for c in range(centers.shape[0]):
        pts = rng.normal(0.0, spread, size=(n_per_class, centers.shape[1]))
        pts = pts + centers[c]
        costs = make_cost_stream(rng, n_per_class, cost_max)
        for i in range(n_per_class):
            samples.append(Sample(tuple(pts[i]), float(c), costs[i]))
    return samples


def loss(obj: Objective, theta: Vec, batch: Batch) -> float:
    return obj.loss(theta, batch)


def grad(
    obj: Objective, theta: Vec, batch: Batch, rng: RngStream | None = None
) -> Vec:
    return obj.grad(theta, batch, rng)


def finite_diff_grad(obj: Objective, theta: Vec, batch: Batch, h: float) -> Vec:
    """Central-difference gradient oracle: (loss(t+h*e_i)-loss(t-h*e_i))/2h.

    Only valid for deterministic objectives; refuses to run when the
    objective injects gradient noise.
    """
    if h <= 0:
        raise ValueError("h must be > 0")
    if obj.has_noise:
        raise ValueError("finite differences require noise disabled")
    out = np.zeros_like(theta)
    for i in range(theta.shape[0]):
        e = np.zeros_like(theta)
        e[i] = h
        out[i] = (obj.loss(theta + e, batch) - obj.loss(theta - e, batch)) / (2 * h)
    return out


def dynamic_batcher(dataset: list[Sample], budget: int) -> list[Batch]:
    """Greedy cost-budget batching in dataset order.

    A sample joins the open batch iff it fits the budget, otherwise a new
    batch starts. The batches concatenate back to the dataset exactly.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    batches: list[Batch] = []
    current: list[Sample] = []
    current_cost = 0
    for s in dataset:
        if s.cost > budget:
            raise ValueError(
                f"sample cost {s.cost} exceeds batch budget {budget}"
            )
        if current and current_cost + s.cost > budget:
            batches.append(Batch(tuple(current)))
            current = []
            current_cost = 0
        current.append(s)
        current_cost += s.cost
    if current:
        batches.append(Batch(tuple(current)))
    return batches


def make_cost_stream(rng: RngStream, n: int, cost_max: int = 50) -> list[int]:
    """n integer costs uniform on [1, cost_max]; cost_max=1 means all ones
    (and draws nothing, keeping cost-free datasets deterministic across
    cost settings)."""
    if cost_max < 1:
        raise ValueError("cost_max must be >= 1")
    if cost_max == 1:
        return [1] * n
    return [int(c) for c in rng.integers(1, cost_max, size=n)]


def dump_samples(samples: list[Sample], path: str, fmt: str = "csv") -> None:
    """Write samples for inspection. Column order: cost, target, features.

    fmt="csv": one comma-separated line per sample. fmt="bin": little-endian
    float64 rows of the same columns, prefixed by a header of two uint32
    (sample count, feature count).
    """
    if fmt == "csv":
        with open(path, "w") as f:
            for s in samples:
                cells = [str(s.cost), repr(float(s.target))]
                cells += [repr(float(x)) for x in s.features]
                f.write(",".join(cells) + "\n")
    elif fmt == "bin":
        n_feat = len(samples[0].features) if samples else 0
        with open(path, "wb") as f:
            f.write(struct.pack("<II", len(samples), n_feat))
            for s in samples:
                row = np.empty(2 + n_feat, dtype="<f8")
                row[0] = s.cost
                row[1] = s.target
                row[2:] = s.features
                f.write(row.tobytes())
    else:
        raise ValueError(f"unknown dump format {fmt!r}")


def load_samples(path: str, fmt: str = "csv") -> list[Sample]:
    """Inverse of dump_samples (targets stay floats; cast class ids yourself)."""
    samples = []
    if fmt == "csv":
        with open(path) as f:
            for line in f:
                cells = line.strip().split(",")
                samples.append(
                    Sample(
                        tuple(float(x) for x in cells[2:]),
                        float(cells[1]),
                        int(cells[0]),
                    )
                )
    elif fmt == "bin":
        with open(path, "rb") as f:
            n, n_feat = struct.unpack("<II", f.read(8))
            data = np.frombuffer(f.read(), dtype="<f8").reshape(n, 2 + n_feat)
        for row in data:
            samples.append(Sample(tuple(row[2:]), float(row[1]), int(row[0])))
    else:
        raise ValueError(f"unknown dump format {fmt!r}")
    return samples
