"""Per-player representation maps: two-layer, zero-bias MLPs with exact Jacobians."""
import json
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from . import kernels, numkit
from .errors import ResampleLimit, ShapeMismatch

WEIGHT_FLOOR = 0.05
MAX_RESAMPLES = 100


class Activation(Enum):
    IDENTITY = "identity"
    CELU = "celu"
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax"
    LOGIT = "logit"


_HIDDEN_CODE = {Activation.IDENTITY: kernels.HIDDEN_IDENTITY, Activation.CELU: kernels.HIDDEN_CELU}
_HEAD_CODE = {
    Activation.IDENTITY: kernels.HEAD_IDENTITY,
    Activation.SIGMOID: kernels.HEAD_SIGMOID,
    Activation.SOFTMAX: kernels.HEAD_SOFTMAX,
    Activation.LOGIT: kernels.HEAD_LOGIT,
}


def celu(t):
    t = np.asarray(t, dtype=np.float64)
    return np.maximum(0.0, t) + np.minimum(0.0, np.expm1(np.minimum(t, 0.0)))


def sigmoid(t):
    return 1.0 / (1.0 + np.exp(-np.asarray(t, dtype=np.float64)))


def softmax(t):
    t = np.asarray(t, dtype=np.float64)
    e = np.exp(t - t.max())
    return e / e.sum()


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor used by :func:`sample_map`.

    ``w1_range``/``w2_range`` are half-widths of the uniform sampling boxes;
    ``None`` means the weights are fixed identities.
    """

    name: str
    input_dim: int
    hidden_dim: int
    output_dim: int
    w1_range: float | None = 1.0
    w2_range: float | None = 1.0
    hidden: Activation = Activation.CELU
    head: Activation = Activation.SIGMOID
    weight_floor: float = WEIGHT_FLOOR


ARCHS = {
    "MP": ArchSpec("MP", 1, 1, 1),
    "RPS": ArchSpec("RPS", 5, 4, 3, head=Activation.SOFTMAX),
    "Shapley": ArchSpec("Shapley", 5, 4, 3, head=Activation.SOFTMAX),
    "ElFarol": ArchSpec("ElFarol", 5, 4, 1, w1_range=0.85),
    "KLdemo": ArchSpec("KLdemo", 2, 2, 2, None, None, Activation.IDENTITY, Activation.LOGIT),
}


@dataclass(frozen=True, eq=False)
class MlpRepMap:
    """``phi(x) = head(w2 @ hidden(w1 @ x))`` with all biases zero."""

    w1: np.ndarray
    w2: np.ndarray
    hidden: Activation = Activation.CELU
    head: Activation = Activation.SIGMOID
    spec: str = "Custom"
    seed: object = None

    def __post_init__(self):
        object.__setattr__(self, "w1", numkit.as_matrix(self.w1))
        object.__setattr__(self, "w2", numkit.as_matrix(self.w2))
        if self.w2.shape[1] != self.w1.shape[0]:
            raise ShapeMismatch(f"w2 {self.w2.shape} does not follow w1 {self.w1.shape}")
        if self.head is Activation.CELU or self.hidden not in _HIDDEN_CODE:
            raise ValueError(f"unsupported activations {self.hidden}/{self.head}")

    @property
    def input_dim(self):
        return self.w1.shape[1]

    @property
    def hidden_dim(self):
        return self.w1.shape[0]

    @property
    def output_dim(self):
        return self.w2.shape[0] + (1 if self.head is Activation.LOGIT else 0)

    def eval_jac(self, x):
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.size != self.input_dim:
            raise ShapeMismatch(f"map expects {self.input_dim} inputs, got {x.size}")
        z, jac = kernels.mlp_forward_batch(
            self.w1[None], self.w2[None], x[None], _HIDDEN_CODE[self.hidden], _HEAD_CODE[self.head]
        )
        return z[0], jac[0]

    def __call__(self, x):
        return self.eval_jac(x)[0]

    def to_dict(self):
        seed = list(self.seed) if isinstance(self.seed, (list, tuple)) else self.seed
        return {
            "spec": self.spec,
            "seed": seed,
            "hidden": self.hidden.value,
            "head": self.head.value,
            "w1": self.w1.tolist(),
            "w2": self.w2.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        arch = ARCHS.get(d.get("spec"))
        hidden = Activation(d["hidden"]) if "hidden" in d else (arch.hidden if arch else Activation.CELU)
        head = Activation(d["head"]) if "head" in d else (arch.head if arch else Activation.SIGMOID)
        seed = d.get("seed")
        return cls(d["w1"], d["w2"], hidden, head, d.get("spec", "Custom"),
                   tuple(seed) if isinstance(seed, list) else seed)


def map_eval(m: MlpRepMap, x) -> np.ndarray:
    return m(x)


def map_jacobian(m: MlpRepMap, x) -> np.ndarray:
    """Exact chain-rule Jacobian, shape ``(output_dim, input_dim)``."""
    return m.eval_jac(x)[1]


def jacobian_fd(m: MlpRepMap, x, h: float = 1e-5) -> np.ndarray:
    """Central-difference Jacobian estimate (oracle for :func:`map_jacobian`)."""
    if h <= 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((m(x + e) - m(x - e)) / (2.0 * h))
    return np.stack(cols, axis=1)


def _resolve(spec):
    if isinstance(spec, ArchSpec):
        return spec
    try:
        return ARCHS[spec]
    except KeyError:
        raise ValueError(f"unknown map spec {spec!r}; known: {sorted(ARCHS)}") from None


def sample_map(spec, seed) -> MlpRepMap:
    """Draw a map with uniform weights in the architecture's declared ranges.

    Scalar (1-D) maps are redrawn until every weight has magnitude at least
    ``weight_floor``; :class:`~phgd.errors.ResampleLimit` after 100 draws.
    """
    arch = _resolve(spec)
    rng = np.random.default_rng(seed)
    w1_shape = (arch.hidden_dim, arch.input_dim)
    w2_shape = (arch.output_dim, arch.hidden_dim)
    scalar = arch.input_dim == 1 and arch.hidden_dim == 1
    for _ in range(MAX_RESAMPLES):
        w1 = np.eye(*w1_shape) if arch.w1_range is None else rng.uniform(-arch.w1_range, arch.w1_range, w1_shape)
        w2 = np.eye(*w2_shape) if arch.w2_range is None else rng.uniform(-arch.w2_range, arch.w2_range, w2_shape)
        if not scalar or min(abs(w1).min(), abs(w2).min()) >= arch.weight_floor:
            return MlpRepMap(w1, w2, arch.hidden, arch.head, arch.name, seed)
    raise ResampleLimit(f"{arch.name}: {MAX_RESAMPLES} draws failed the weight floor")


@dataclass(frozen=True, eq=False)
class ProductRepMap:
    """The players' maps side by side; all players share one architecture."""

    maps: tuple
    _w1: np.ndarray = field(init=False, repr=False)
    _w2: np.ndarray = field(init=False, repr=False)
    _codes: tuple = field(init=False, repr=False)

    def __post_init__(self):
        maps = tuple(self.maps)
        if not maps:
            raise ShapeMismatch("need at least one player map")
        first = maps[0]
        for m in maps[1:]:
            if m.w1.shape != first.w1.shape or m.w2.shape != first.w2.shape or \
                    (m.hidden, m.head) != (first.hidden, first.head):
                raise ShapeMismatch("all players must share one architecture")
        object.__setattr__(self, "maps", maps)
        object.__setattr__(self, "_w1", np.stack([m.w1 for m in maps]))
        object.__setattr__(self, "_w2", np.stack([m.w2 for m in maps]))
        object.__setattr__(self, "_codes", (_HIDDEN_CODE[first.hidden], _HEAD_CODE[first.head]))

    @property
    def n_players(self):
        return len(self.maps)

    @property
    def input_dim(self):
        return self.maps[0].input_dim

    @property
    def output_dim(self):
        return self.maps[0].output_dim

    def eval_jac(self, x):
        """Latent profile ``(N, o)`` and stacked Jacobians ``(N, o, d)`` at ``x`` ``(N, d)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_players, self.input_dim):
            raise ShapeMismatch(f"control profile must be {(self.n_players, self.input_dim)}, got {x.shape}")
        return kernels.mlp_forward_batch(self._w1, self._w2, x, *self._codes)

    def __call__(self, x):
        return self.eval_jac(x)[0]

    def to_json(self) -> str:
        return json.dumps([m.to_dict() for m in self.maps], indent=1)

    @classmethod
    def from_json(cls, text: str):
        data = json.loads(text)
        if isinstance(data, dict):
            data = [data]
        return cls(tuple(MlpRepMap.from_dict(d) for d in data))


def sample_product(spec, n_players: int, seed) -> ProductRepMap:
    """Independent maps per player; player ``i`` is drawn with seed ``(*seed, i)``.

    ``seed`` is an int or a tuple of ints.
    """
    base = tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)
    return ProductRepMap(tuple(sample_map(spec, base + (i,)) for i in range(n_players)))


def identity_product(n_players: int, dim: int) -> ProductRepMap:
    eye = np.eye(dim)
    m = MlpRepMap(eye, eye, Activation.IDENTITY, Activation.IDENTITY, "Custom")
    return ProductRepMap((m,) * n_players)


def sv_bounds(product: ProductRepMap, probe_points) -> tuple[float, float]:
    """Smallest and largest Jacobian singular value over all players and probes."""
    probe_points = list(probe_points)
    if not probe_points:
        raise ValueError("need at least one probe point")
    lo, hi = np.inf, 0.0
    for x in probe_points:
        _, jac = product.eval_jac(x)
        for j in jac:
            s = numkit.svd(j).sigma
            lo = min(lo, s[-1])
            hi = max(hi, s[0])
    return float(lo), float(hi)
