"""Hidden hierarchical target generator and its sparse-coding assumption checks."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import norm


__all__ = [
    "NetworkShape",
    "TargetNetwork",
    "Sample",
    "AssumptionConfig",
    "AssumptionReport",
    "ConstructionError",
    "construct_generic",
    "sample_real",
    "sample_at",
    "sample_patches",
    "target_forward",
    "verify_assumptions",
    "default_parents",
    "patch_matmul",
    "deep_preactivation",
]


class ConstructionError(ValueError):
    """The requested target network cannot be built with the generic recipe."""


@dataclass(frozen=True)
class NetworkShape:
    """Dimensions shared by target and learner.

    ``d_l``, ``m_l`` and ``k_l`` hold one entry per layer; layer 0 is the
    lowest resolution.
    """

    L: int
    d: int
    d_l: tuple
    m_l: tuple
    m0: int
    m0_prime: int
    k_l: tuple

    def __post_init__(self):
        object.__setattr__(self, "d_l", tuple(int(x) for x in self.d_l))
        object.__setattr__(self, "m_l", tuple(int(x) for x in self.m_l))
        object.__setattr__(self, "k_l", tuple(float(x) for x in self.k_l))
        if self.L < 1:
            raise ValueError("need at least one layer")
        for name in ("d_l", "m_l", "k_l"):
            if len(getattr(self, name)) != self.L:
                raise ValueError(f"{name} must have length L={self.L}")
        dims = [self.d, self.m0, self.m0_prime, *self.d_l, *self.m_l]
        if min(dims) < 1:
            raise ValueError("all dimensions must be >= 1")
        if self.m0_prime < 2 * self.d_l[0] * self.m_l[0]:
            raise ValueError(
                f"m0_prime={self.m0_prime} must be >= 2*d_1*m_1={2 * self.d_l[0] * self.m_l[0]}"
            )
        for l in range(self.L):
            if self.k_l[l] > self.m_l[l] or self.k_l[l] <= 0:
                raise ValueError(f"k_l[{l}] must lie in (0, m_l]")
            if self.d < self.m_l[l]:
                raise ValueError(f"orthonormal dictionaries need d >= m_l (layer {l})")

    def to_dict(self) -> dict:
        return {
            "L": self.L, "d": self.d, "d_l": list(self.d_l), "m_l": list(self.m_l),
            "m0": self.m0, "m0_prime": self.m0_prime, "k_l": list(self.k_l),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkShape":
        return cls(**{k: d[k] for k in ("L", "d", "d_l", "m_l", "m0", "m0_prime", "k_l")})


def default_parents(shape: NetworkShape, l: int) -> np.ndarray:
    """Single-parent connection graph: patch ``j`` of layer ``l`` reads patch
    ``floor(j * d_{l-1} / d_l)`` of the layer below. Shape ``(d_l, 1)``."""
    dl, dprev = shape.d_l[l], shape.d_l[l - 1]
    return (np.arange(dl) * dprev // dl).reshape(dl, 1)


@dataclass
class TargetNetwork:
    """Ground-truth generator.

    Attributes
    ----------
    W : list of (d_l, d, m_l) arrays, column-orthonormal per patch.
    V1 : (d_1, m_1, m0) first-layer weights.
    V : list indexed by layer; ``V[0]`` is None, ``V[l]`` has shape
        ``(d_l, n_parents, m_l, m_{l-1})``.
    b : list of (d_l, m_l) non-negative biases.
    parents : list; ``parents[0]`` is None, ``parents[l]`` is ``(d_l, n_parents)``.
    """

    shape: NetworkShape
    W: list
    V1: np.ndarray
    V: list
    b: list
    parents: list
    meta: dict = field(default_factory=dict)


@dataclass
class Sample:
    """A batch of generator draws; the leading axis of every array is the sample."""

    z: np.ndarray
    S: list
    X: list
    pre: list | None = None

    def __len__(self):
        return self.z.shape[0]


def patch_matmul(S: np.ndarray, M: np.ndarray) -> np.ndarray:
    """Per-patch ``M[j] @ S[n, j]`` for ``S`` (n, P, q) and ``M`` (P, r, q); returns (n, P, r)."""
    return np.matmul(S.transpose(1, 0, 2), M.transpose(0, 2, 1)).transpose(1, 0, 2)


def deep_preactivation(S_prev: np.ndarray, V: np.ndarray, parents: np.ndarray, b: np.ndarray) -> np.ndarray:
    pre = -b[None]
    for p in range(parents.shape[1]):
        pre = pre + patch_matmul(S_prev[:, parents[:, p], :], V[:, p])
    return pre


def _codes(net: TargetNetwork, z: np.ndarray, upto: int) -> list:
    d1, m1 = net.shape.d_l[0], net.shape.m_l[0]
    S = [np.maximum((z @ net.V1.reshape(d1 * m1, -1).T).reshape(-1, d1, m1) - net.b[0], 0.0)]
    for l in range(1, upto + 1):
        S.append(np.maximum(deep_preactivation(S[l - 1], net.V[l], net.parents[l], net.b[l]), 0.0))
    return S


def target_forward(net: TargetNetwork, z: np.ndarray, upto: int | None = None) -> Sample:
    """Target forward pass; ``upto`` stops after that layer index."""
    z = np.atleast_2d(np.asarray(z, dtype=float))
    if z.shape[1] != net.shape.m0:
        raise ValueError(f"latent must have length m0={net.shape.m0}")
    S = _codes(net, z, net.shape.L - 1 if upto is None else upto)
    X = [patch_matmul(s, w) for s, w in zip(S, net.W)]
    return Sample(z=z, S=S, X=X)


def sample_real(net: TargetNetwork, n: int, rng: np.random.Generator, upto: int | None = None) -> Sample:
    """Draw ``n`` i.i.d. samples of the target with latent ``z ~ N(0, I)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    return target_forward(net, rng.standard_normal((n, net.shape.m0)), upto)


def sample_patches(net: TargetNetwork, n: int, rng: np.random.Generator, l: int) -> np.ndarray:
    """Fresh layer-``l`` patches only, shape (n, d_l, d)."""
    if n < 1:
        raise ValueError("n must be >= 1")
    S = _codes(net, rng.standard_normal((n, net.shape.m0)), l)
    return patch_matmul(S[l], net.W[l])


def sample_at(net: TargetNetwork, z) -> Sample:
    """Evaluate the target at one latent vector (batch of size one)."""
    z = np.asarray(z, dtype=float)
    if z.ndim != 1:
        raise ValueError("sample_at takes a single latent vector")
    return target_forward(net, z[None, :])


def _orthonormal_columns(rng: np.random.Generator, n: int, k: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((n, k)))
    return Q * np.sign(np.diag(R))


def _as_per_layer(value, L: int, name: str) -> tuple:
    vals = tuple(np.atleast_1d(np.asarray(value, dtype=float)).tolist())
    if len(vals) == 1:
        vals = vals * L
    if len(vals) != L:
        raise ValueError(f"{name} needs 1 or L={L} entries")
    return vals


def construct_generic(
    shape: NetworkShape,
    target_activation_prob,
    rng: np.random.Generator,
    *,
    row_norm=None,
    frob_bound: float = 16.0,
    prob_band_const: float | None = None,
    max_first_layer_coherence: float = 0.5,
    calib_samples: int = 200_000,
    max_tries: int = 50,
) -> TargetNetwork:
    """Build a target from the simple generic family.

    Layer 0 rows within a patch are mutually orthogonal (so its channels are
    exactly independent); patches share the latent and so are correlated.
    Deeper layers read a single parent patch through rows with pairwise
    disjoint supports. Biases are set so each channel fires with the
    requested probability: in closed form for layer 0, from the Monte Carlo
    quantile of the pre-activation for deeper layers.

    ``target_activation_prob`` and ``row_norm`` accept a scalar or one value
    per layer.
    """
    L = shape.L
    probs = _as_per_layer(target_activation_prob, L, "target_activation_prob")
    if row_norm is None:
        row_norm = (2.0,) + (1.5,) * (L - 1)
    norms = _as_per_layer(row_norm, L, "row_norm")
    for l, q in enumerate(probs):
        C = prob_band_const if prob_band_const is not None else shape.k_l[l] ** 2
        lo, hi = 1.0 / (C * shape.m_l[l]), C * shape.k_l[l] ** 3 / shape.m_l[l]
        if not (lo <= q <= hi) or not (0 < q < 1):
            raise ValueError(f"activation probability {q} outside [{lo:.3g}, {min(hi, 1):.3g}] for layer {l}")
    m1, d1 = shape.m_l[0], shape.d_l[0]
    if shape.m0 < m1:
        raise ConstructionError(
            f"layer-0 channels need orthogonal latent directions: m0={shape.m0} < m_1={m1}"
        )
    for l in range(1, L):
        if shape.m_l[l - 1] // shape.m_l[l] < 1:
            raise ConstructionError(f"cannot partition {shape.m_l[l - 1]} parent channels into {shape.m_l[l]} disjoint supports")

    W = [np.stack([_orthonormal_columns(rng, shape.d, shape.m_l[l]) for _ in range(shape.d_l[l])])
         for l in range(L)]

    for _ in range(max_tries):
        dirs = np.stack([_orthonormal_columns(rng, shape.m0, m1).T for _ in range(d1)])
        flat = dirs.reshape(d1 * m1, shape.m0)
        G = np.abs(flat @ flat.T)
        np.fill_diagonal(G, 0.0)
        if d1 == 1 or G.max() <= max_first_layer_coherence:
            break
    else:
        raise ConstructionError("could not draw first-layer directions under the coherence cap")
    V1 = norms[0] * dirs
    if norms[0] * np.sqrt(m1) > frob_bound:
        raise ConstructionError("first-layer Frobenius norm exceeds the configured bound")
    b = [np.full((d1, m1), norms[0] * norm.isf(probs[0]))]
    V = [None]
    parents = [None]
    for l in range(1, L):
        ml, mp, dl = shape.m_l[l], shape.m_l[l - 1], shape.d_l[l]
        if norms[l] * np.sqrt(ml) > frob_bound:
            raise ConstructionError(f"layer {l} Frobenius norm exceeds the configured bound")
        s = mp // ml
        Vl = np.zeros((dl, 1, ml, mp))
        for j in range(dl):
            cols = rng.permutation(mp)[: ml * s].reshape(ml, s)
            w = np.abs(rng.standard_normal((ml, s)))
            w *= norms[l] / np.linalg.norm(w, axis=1, keepdims=True)
            Vl[j, 0, np.arange(ml)[:, None], cols] = w
        V.append(Vl)
        parents.append(default_parents(shape, l))
        b.append(np.zeros((dl, ml)))

    net = TargetNetwork(shape=shape, W=W, V1=V1, V=V, b=b, parents=parents,
                        meta={"activation_prob": list(probs), "row_norm": list(norms)})
    if L > 1:
        zc = rng.standard_normal((calib_samples, shape.m0))
        _calibrate_deep_biases(net, zc, probs)
    return net


def _calibrate_deep_biases(net: TargetNetwork, z: np.ndarray, probs) -> None:
    # layers are calibrated bottom-up so each sees its final parent distribution
    for l in range(1, net.shape.L):
        S_prev = _codes(net, z, l - 1)[l - 1]
        pre = deep_preactivation(S_prev, net.V[l], net.parents[l], np.zeros_like(net.b[l]))
        net.b[l] = np.maximum(np.quantile(pre, 1.0 - probs[l], axis=0), 0.0)


# ---------------------------------------------------------------------------
# assumption checks


@dataclass(frozen=True)
class AssumptionConfig:
    """Concrete instances of the polynomial constants in the assumptions.

    ``None`` means "use the default rule": ``prob_const = k^2``,
    ``eps1 = k^3/m^2``, ``eps2 = k^3/m^3``.
    """

    prob_const: float | None = None
    k_power: float = 1.0
    eps1: float | None = None
    eps2: float | None = None
    sigma_min_exp: float = 1.15
    t_grid: tuple = tuple(np.round(np.arange(1, 21) * 0.01, 10))
    delta_grid: tuple = (0.005, 0.01, 0.02)
    coherence_max: float = 0.8
    min_samples: int = 10_000


@dataclass
class AssumptionReport:
    activation_prob: list
    pair_prob_max: list
    triple_prob_max: list
    mu_min_singular: list
    anticonc: list
    mean_sparsity: list
    sparsity_p999: list
    first_layer_coherence: float
    sample_count: int
    flags: list

    @property
    def ok(self) -> bool:
        return not self.flags

    def to_dict(self) -> dict:
        def conv(x):
            if isinstance(x, np.ndarray):
                return x.tolist()
            if isinstance(x, list):
                return [conv(v) for v in x]
            return x
        return {k: conv(v) for k, v in self.__dict__.items()}


def _triple_max(active: np.ndarray) -> float:
    n, m = active.shape
    A = active.astype(float)
    best = 0.0
    for p in range(m):
        rows = A[active[:, p]]
        if rows.shape[0] == 0:
            continue
        C = rows.T @ rows
        C[p, :] = 0.0
        C[:, p] = 0.0
        np.fill_diagonal(C, 0.0)
        best = max(best, float(C.max()) / n)
    return best


def verify_assumptions(
    net: TargetNetwork,
    n: int,
    rng: np.random.Generator,
    cfg: AssumptionConfig = AssumptionConfig(),
    batch: int = 50_000,
) -> AssumptionReport:
    """Monte Carlo estimates of every sparse-coding assumption, with violations flagged."""
    if n < cfg.min_samples:
        raise ValueError(f"need at least {cfg.min_samples} samples, got {n}")
    shape = net.shape
    chunks = []
    left = n
    while left > 0:
        take = min(batch, left)
        chunks.append(sample_real(net, take, rng).S)
        left -= take
    S_all = [np.concatenate([c[l] for c in chunks]) for l in range(shape.L)]

    flags: list[str] = []
    act_prob, pair_max, triple_max, mu_min, anti, mean_sp, p999 = ([] for _ in range(7))
    for l in range(shape.L):
        m, k = shape.m_l[l], shape.k_l[l]
        C = cfg.prob_const if cfg.prob_const is not None else k ** 2
        ka = k ** cfg.k_power
        eps1 = cfg.eps1 if cfg.eps1 is not None else k ** 3 / m ** 2
        eps2 = cfg.eps2 if cfg.eps2 is not None else k ** 3 / m ** 3
        lo, hi = 1.0 / (C * ka * m), C * ka / m
        sig_floor = 1.0 / m ** cfg.sigma_min_exp
        anti_bound = C * ka / m
        layer_act, layer_pair, layer_trip, layer_mu, layer_anti, layer_mean, layer_p999 = ([] for _ in range(7))
        for j in range(shape.d_l[l]):
            S = S_all[l][:, j, :]
            active = S > 0
            pr = active.mean(axis=0)
            A = active.astype(float)
            pair = (A.T @ A) / n
            np.fill_diagonal(pair, 0.0)
            trip = _triple_max(active) if m >= 3 else 0.0
            mu = (A.T @ S) / n
            smin = float(np.linalg.svd(mu, compute_uv=False).min())
            worst = 0.0
            for t in cfg.t_grid:
                for dlt in cfg.delta_grid:
                    mass = (active & (np.abs(S - t) <= dlt)).mean(axis=0).max()
                    worst = max(worst, float(mass) / (dlt * anti_bound))
            nnz = active.sum(axis=1)
            layer_act.append(pr)
            layer_pair.append(float(pair.max()))
            layer_trip.append(trip)
            layer_mu.append(smin)
            layer_anti.append(worst)
            layer_mean.append(float(nnz.mean()))
            layer_p999.append(float(np.quantile(nnz, 0.999)))
            tag = f"layer {l} patch {j}"
            if pr.min() < lo or pr.max() > hi:
                flags.append(f"{tag}: activation probability outside [{lo:.4g}, {hi:.4g}]")
            if pair.max() > eps1:
                flags.append(f"{tag}: pairwise co-activation {pair.max():.4g} > eps1={eps1:.4g}")
            if trip > eps2:
                flags.append(f"{tag}: triple co-activation {trip:.4g} > eps2={eps2:.4g}")
            if smin < sig_floor:
                flags.append(f"{tag}: sigma_min(mu)={smin:.4g} < {sig_floor:.4g}")
            if worst > 1.0:
                flags.append(f"{tag}: small-ball mass exceeds bound by factor {worst:.3g}")
            if nnz.mean() > k:
                flags.append(f"{tag}: mean sparsity {nnz.mean():.3g} > k={k:g}")
        act_prob.append(np.array(layer_act))
        pair_max.append(layer_pair)
        triple_max.append(layer_trip)
        mu_min.append(layer_mu)
        anti.append(layer_anti)
        mean_sp.append(layer_mean)
        p999.append(layer_p999)

    dirs = net.V1.reshape(-1, shape.m0)
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
    G = np.abs(dirs @ dirs.T)
    np.fill_diagonal(G, 0.0)
    coh = float(G.max()) if G.size > 1 else 0.0
    if coh > cfg.coherence_max:
        flags.append(f"first-layer direction coherence {coh:.4g} > {cfg.coherence_max}")
    return AssumptionReport(
        activation_prob=act_prob, pair_prob_max=pair_max, triple_prob_max=triple_max,
        mu_min_singular=mu_min, anticonc=anti, mean_sparsity=mean_sp, sparsity_p999=p999,
        first_layer_coherence=coh, sample_count=n, flags=flags,
    )
