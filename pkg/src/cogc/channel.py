"""Intermittent network: independent Bernoulli erasures on every link.

``p_c2c[m, k]`` is the outage probability of the link *from* client ``k``
*to* client ``m``; ``p_up[m]`` is the outage probability of client ``m``'s
uplink to the parameter server. The downlink broadcast is error-free.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidInputError
from .gc_code import CyclicCode

# Stream tags keep channel draws and per-attempt code seeds apart.
CHANNEL_STREAM = 0
CODE_STREAM = 1
SGD_STREAM = 2


@dataclass(frozen=True, eq=False)
class NetworkModel:
    p_c2c: np.ndarray
    p_up: np.ndarray

    def __post_init__(self):
        p_c2c = np.array(self.p_c2c, dtype=float)
        p_up = np.array(self.p_up, dtype=float).reshape(-1)
        M = p_up.shape[0]
        if p_c2c.shape != (M, M):
            raise InvalidInputError(f"p_c2c must be {M}x{M}, got {p_c2c.shape}")
        if np.any((p_c2c < 0) | (p_c2c > 1)) or np.any((p_up < 0) | (p_up > 1)):
            raise InvalidInputError("outage probabilities must lie in [0, 1]")
        if np.any(np.diag(p_c2c) != 0):
            raise InvalidInputError("p_c2c diagonal must be zero")
        p_c2c.setflags(write=False)
        p_up.setflags(write=False)
        object.__setattr__(self, "p_c2c", p_c2c)
        object.__setattr__(self, "p_up", p_up)

    @property
    def M(self):
        return self.p_up.shape[0]

    @classmethod
    def uniform(cls, M, p_c2c, p_up):
        c2c = np.full((M, M), float(p_c2c))
        np.fill_diagonal(c2c, 0.0)
        return cls(c2c, np.full(M, float(p_up)))

    def homogeneous_value(self):
        """The common probability if every link shares one, else ``None``."""
        off = self.p_c2c[~np.eye(self.M, dtype=bool)]
        values = np.concatenate([off, self.p_up])
        if values.size and np.all(values == values[0]):
            return float(values[0])
        return None

    def to_dict(self):
        return {"M": self.M, "p_c2c": self.p_c2c.tolist(), "p_up": self.p_up.tolist()}


def network_from_dict(spec) -> NetworkModel:
    """Build a network from its config form.

    ``M`` is required unless implied by a vector or matrix. ``p_c2c`` may be
    a scalar, a length-M vector (per receiving client, applied to every
    incoming link) or a full ``M x M`` matrix, whose diagonal is ignored.
    ``p_up`` may be a scalar or a length-M vector.
    """
    if not isinstance(spec, dict):
        raise InvalidInputError("network spec must be a JSON object")
    unknown = set(spec) - {"M", "p_c2c", "p_up", "name"}
    if unknown:
        raise InvalidInputError(f"unknown network keys: {sorted(unknown)}")
    c2c = np.asarray(spec.get("p_c2c", 0.0), dtype=float)
    up = np.asarray(spec.get("p_up", 0.0), dtype=float)
    M = spec.get("M")
    for arr in (c2c, up):
        if arr.ndim >= 1:
            M = arr.shape[0] if M is None else M
            if arr.shape[0] != M:
                raise InvalidInputError("network vector/matrix sizes disagree with M")
    if M is None:
        raise InvalidInputError("network spec needs M when all probabilities are scalars")
    M = int(M)
    if c2c.ndim == 0:
        c2c = np.full((M, M), float(c2c))
    elif c2c.ndim == 1:
        c2c = np.repeat(c2c[:, None], M, axis=1)
    elif c2c.shape != (M, M):
        raise InvalidInputError(f"p_c2c matrix must be {M}x{M}")
    c2c = c2c.copy()
    np.fill_diagonal(c2c, 0.0)
    if up.ndim == 0:
        up = np.full(M, float(up))
    return NetworkModel(c2c, up)


def load_network(path) -> NetworkModel:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidInputError(f"{path}: malformed JSON ({exc})") from exc
    return network_from_dict(spec)


@dataclass(frozen=True)
class RoundKey:
    """Counter-style RNG key: any single attempt is reproducible in isolation."""

    seed: int
    round: int = 0
    attempt: int = 0

    def generator(self, stream=CHANNEL_STREAM, *extra):
        ss = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.round), int(self.attempt), stream, *extra)
        )
        return np.random.Generator(np.random.Philox(ss))

    def code_seed(self):
        ss = np.random.SeedSequence(
            entropy=int(self.seed), spawn_key=(int(self.round), int(self.attempt), CODE_STREAM)
        )
        return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True, eq=False)
class RoundConnectivity:
    T: np.ndarray
    tau: np.ndarray


def _draw(network, rng, size):
    M = network.M
    shape = () if size is None else (size,)
    u_links = rng.random(shape + (M, M))
    u_up = rng.random(shape + (M,))
    T = (u_links >= network.p_c2c).astype(np.int8)
    idx = np.arange(M)
    T[..., idx, idx] = 1
    tau = (u_up >= network.p_up).astype(np.int8)
    return T, tau


def draw_round(network: NetworkModel, key: RoundKey) -> RoundConnectivity:
    """One connectivity realization; link ``(m, k)`` is up w.p. ``1 - p_c2c[m, k]``."""
    T, tau = _draw(network, key.generator(CHANNEL_STREAM), None)
    T.setflags(write=False)
    tau.setflags(write=False)
    return RoundConnectivity(T=T, tau=tau)


def draw_rounds(network: NetworkModel, key: RoundKey, n: int):
    """``n`` i.i.d. realizations as arrays ``(n, M, M)`` and ``(n, M)``."""
    return _draw(network, key.generator(CHANNEL_STREAM), int(n))


def neighbor_sets(code: CyclicCode, m: int):
    """``(K1, K2)``: clients that receive ``m``'s update, and clients ``m`` hears from."""
    if not 0 <= m < code.M:
        raise InvalidInputError(f"client index {m} outside [0, {code.M})")
    col = code.B[:, m]
    row = code.B[m, :]
    K1 = frozenset(int(j) for j in np.flatnonzero(col) if j != m)
    K2 = frozenset(int(k) for k in np.flatnonzero(row) if k != m)
    return K1, K2
