"""Gross and Net Shapley values of portfolio VaR over enumerated subsystems.

The coalition value of a set of banks is the VaR (basis points, distress
positive) of their lagged-asset-weighted portfolio, estimated by quantile
regression on the lagged state variables.  Coalition values are memoised in
a :class:`CharacteristicCache` that several targets can share.
"""

from __future__ import annotations

import itertools
import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corisk import MIN_OBS, RiskSeries, state_design, to_bp
from .errors import FeasibilityError, SampleSizeError, ValidationError
from .ingest import BankRecord, GrowthPanel, MarketPanel, StateSeries, weighted_growth
from .quantreg import fit_quantile_batch

__all__ = [
    "SystemSpec",
    "ShapleyResult",
    "CharacteristicCache",
    "build_system_spec",
    "build_synthetic_bank",
    "characteristic",
    "gross_shapley",
    "net_shapley",
    "brute_shapley",
    "shapley_weights",
    "MAX_SYSTEM",
    "CACHE_FORMAT_VERSION",
]

MAX_SYSTEM = 20
MAX_BRUTE = 8
CACHE_FORMAT_VERSION = 1
SYNTHETIC_ID = "SYNTH"
MODES = ("core_plus_target", "core_plus_target_plus_synthetic")


@dataclass(frozen=True)
class SystemSpec:
    members: tuple[str, ...]
    target: str
    mode: str = "core_plus_target"
    synthetic: BankRecord | None = None

    def __post_init__(self):
        if not self.members:
            raise ValueError("system needs at least one member")
        if self.members.count(self.target) != 1:
            raise ValueError(f"target {self.target!r} must appear exactly once in the system")
        if len(set(self.members)) != len(self.members):
            raise ValueError("duplicate system members")
        if self.mode not in MODES:
            raise ValueError(f"unknown system mode {self.mode!r}")

    @property
    def N(self) -> int:
        return len(self.members)

    def with_target(self, target: str) -> "SystemSpec":
        return SystemSpec(self.members, target, self.mode, self.synthetic)


@dataclass(frozen=True)
class ShapleyResult:
    bank_id: str
    gsv: RiskSeries
    nsv: RiskSeries
    var_i: RiskSeries
    N: int


def shapley_weights(N: int) -> np.ndarray:
    """Weight of a marginal contribution to a coalition of ``s`` others.

    Equals (1/N) / C(N-1, s), i.e. s! (N-1-s)! / N!.
    """
    return np.array([1.0 / (N * math.comb(N - 1, s)) for s in range(N)])


def build_synthetic_bank(panel: MarketPanel, excluded: Iterable[str],
                         bank_id: str = SYNTHETIC_ID) -> BankRecord:
    """Value-weighted aggregate of every bank not in ``excluded``.

    The aggregate's asset value is chain-linked from the lagged-weight
    portfolio growth of the remaining banks, which equals the plain sum of
    their asset values whenever the membership is constant.
    """
    excluded = set(excluded)
    rest = [j for j, b in enumerate(panel.bank_ids) if b not in excluded]
    if not rest:
        raise ValueError("no banks left to aggregate into a synthetic bank")
    A = panel.assets_matrix()[:, rest]
    if len(rest) == 1:
        level = A[:, 0].copy()
    else:
        with np.errstate(invalid="ignore"):
            x = A[1:] / A[:-1] - 1.0
        g = weighted_growth(A[:-1], x)
        level = np.full(A.shape[0], np.nan)
        start = int(np.flatnonzero(~np.all(np.isnan(A), axis=1))[0])
        level[start] = np.nansum(A[start])
        for t in range(start + 1, A.shape[0]):
            level[t] = level[t - 1] * (1.0 + g[t - 1]) if np.isfinite(g[t - 1]) else np.nan
    ones = np.where(np.isnan(level), np.nan, 1.0)
    return BankRecord(bank_id, level, ones.copy(), ones.copy())


def build_system_spec(panel: MarketPanel, target: str, n: int = 16,
                      mode: str = "core_plus_target") -> SystemSpec:
    """Core of the largest banks by average asset value, plus the target.

    When the target already belongs to the core, the next largest bank
    fills its place.  In synthetic mode one slot holds the aggregate of all
    banks outside the core and the target.
    """
    if target not in panel.bank_ids:
        raise KeyError(target)
    if n < 1:
        raise ValueError("system size must be positive")
    if n > MAX_SYSTEM:
        raise FeasibilityError(f"system size {n} exceeds the cap of {MAX_SYSTEM}")
    avg = np.nanmean(panel.assets_matrix(), axis=0)
    order = [panel.bank_ids[j] for j in np.argsort(-avg, kind="stable")]
    n_core = n - 1 if mode == "core_plus_target" else n - 2
    if mode not in MODES:
        raise ValueError(f"unknown system mode {mode!r}")
    others = [b for b in order if b != target]
    core = others[:max(n_core, 0)]
    members = [b for b in panel.bank_ids if b in core or b == target]
    synthetic = None
    if mode == "core_plus_target_plus_synthetic":
        synthetic = build_synthetic_bank(panel, set(members))
        members.append(synthetic.id)
    if len(members) != n:
        raise ValueError(f"panel holds too few banks for a system of {n}")
    return SystemSpec(tuple(members), target, mode, synthetic)


class CharacteristicCache:
    """Memoised coalition values keyed by (members, q, state, window).

    Values are stored once per key and never overwritten; concurrent
    readers see either a miss or the final value.
    """

    def __init__(self, panel: MarketPanel, state: StateSeries | np.ndarray | None,
                 q: float = 0.01, enabled: bool = True, threads: int = 1,
                 chunk: int = 2048):
        A = panel.assets_matrix()
        with np.errstate(invalid="ignore"):
            x = A[1:] / A[:-1] - 1.0
        self.dates = panel.dates[1:]
        self.q = q
        self.enabled = enabled
        self.threads = max(int(threads), 1)
        self.chunk = chunk
        self._order: list[str] = []
        self._A: dict[str, np.ndarray] = {}
        self._X: dict[str, np.ndarray] = {}
        for j, b in enumerate(panel.bank_ids):
            self._register(b, A[:-1, j], x[:, j])
        self.Z = state_design(state, self.dates.size)
        if isinstance(state, StateSeries):
            self.state_key = state.fingerprint()
        else:
            self.state_key = "none" if state is None else _digest(np.asarray(state))
        self._store: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def _register(self, bank_id: str, A_lag: np.ndarray, x: np.ndarray) -> None:
        self._order.append(bank_id)
        self._A[bank_id] = A_lag
        self._X[bank_id] = x

    def add_bank(self, record: BankRecord) -> None:
        """Register an extra series (e.g. a synthetic bank) under its id."""
        if record.id in self._A:
            if not np.array_equal(self._A[record.id], record.assets[:-1], equal_nan=True):
                raise ValueError(f"bank id {record.id!r} already registered with other data")
            return
        A = record.assets
        if A.size != self.dates.size + 1:
            raise ValidationError("registered series does not match the panel dates")
        with np.errstate(invalid="ignore"):
            x = A[1:] / A[:-1] - 1.0
        self._register(record.id, A[:-1], x)

    @property
    def hit_rate(self) -> float:
        total = self.hits + self.misses
        return self.hits / total if total else 0.0

    def canonical(self, members: Iterable[str]) -> tuple[str, ...]:
        members = set(members)
        unknown = members - set(self._A)
        if unknown:
            raise KeyError(f"unknown bank(s): {sorted(unknown)}")
        return tuple(b for b in self._order if b in members)

    def window(self, members: Sequence[str]) -> np.ndarray:
        """Weeks (regression rows) where every member and the state are observed."""
        ok = np.all(np.isfinite(self.Z), axis=1)
        for b in members:
            ok &= np.isfinite(self._X[b][1:]) & np.isfinite(self._A[b][1:])
        return ok

    def _key(self, members: tuple[str, ...], window: np.ndarray) -> tuple:
        return (members, self.q, self.state_key, _digest(window))

    def values(self, subsets: Sequence[Iterable[str]], window: np.ndarray) -> list[np.ndarray]:
        """Coalition VaR series (bp) for each subset on the rows in ``window``."""
        if int(window.sum()) < MIN_OBS:
            raise SampleSizeError(f"{int(window.sum())} usable weeks, at least {MIN_OBS} required")
        canon = [self.canonical(s) for s in subsets]
        if any(len(c) == 0 for c in canon):
            raise ValueError("characteristic function needs a nonempty subset")
        keys = [self._key(c, window) for c in canon]
        out: list[np.ndarray | None] = [None] * len(keys)
        todo: dict[tuple, list[int]] = {}
        with self._lock:
            for i, k in enumerate(keys):
                v = self._store.get(k) if self.enabled else None
                if v is not None:
                    out[i] = v
                    self.hits += 1
                elif k in todo:
                    todo[k].append(i)
                    self.hits += 1
                else:
                    todo[k] = [i]
                    self.misses += 1
        if todo:
            pending = list(todo)
            computed = self._evaluate([k[0] for k in pending], window)
            with self._lock:
                for k, v in zip(pending, computed):
                    if self.enabled:
                        v = self._store.setdefault(k, v)
                    for i in todo[k]:
                        out[i] = v
        return out  # type: ignore[return-value]

    def _evaluate(self, subsets: list[tuple[str, ...]], window: np.ndarray) -> list[np.ndarray]:
        ids = sorted({b for s in subsets for b in s}, key=self._order.index)
        rows = np.flatnonzero(window) + 1  # growth index of regression rows
        A = np.column_stack([self._A[b][rows] for b in ids])
        X = np.column_stack([self._X[b][rows] for b in ids])
        Zw = np.ascontiguousarray(self.Z[window])
        pos = {b: j for j, b in enumerate(ids)}
        chunks = [subsets[i:i + self.chunk] for i in range(0, len(subsets), self.chunk)]

        def run(chunk):
            mask = np.zeros((len(chunk), len(ids)), dtype=bool)
            for r, s in enumerate(chunk):
                mask[r, [pos[b] for b in s]] = True
            den = np.zeros((len(chunk), rows.size))
            for j in range(len(ids)):
                den += np.where(mask[:, j:j + 1], A[None, :, j], 0.0)
            Y = np.zeros_like(den)
            for j in range(len(ids)):
                Y += np.where(mask[:, j:j + 1], (A[None, :, j] / den) * X[None, :, j], 0.0)
            fits = fit_quantile_batch(Y, Zw, self.q, chunk=len(chunk))
            return [to_bp(Zw @ f.coefficients) for f in fits]

        if self.threads > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(self.threads) as pool:
                parts = list(pool.map(run, chunks))
        else:
            parts = [run(c) for c in chunks]
        return [v for part in parts for v in part]

    def save(self, path) -> None:
        """Persist all entries to a versioned ``.npz`` file."""
        keys = list(self._store)
        np.savez_compressed(
            Path(path),
            format_version=np.array(CACHE_FORMAT_VERSION),
            members=np.array(["|".join(k[0]) for k in keys], dtype=str),
            q=np.array([k[1] for k in keys], dtype=float),
            state=np.array([k[2] for k in keys], dtype=str),
            window=np.array([k[3] for k in keys], dtype=str),
            lengths=np.array([self._store[k].size for k in keys], dtype=np.int64),
            values=np.concatenate([self._store[k] for k in keys]) if keys else np.zeros(0),
        )

    def load(self, path) -> int:
        """Merge entries from ``path``; returns how many were added."""
        path = Path(path)
        if not path.exists():
            return 0
        with np.load(path, allow_pickle=False) as data:
            if int(data["format_version"]) != CACHE_FORMAT_VERSION:
                raise ValidationError(f"{path}: unsupported cache format {int(data['format_version'])}")
            offsets = np.concatenate([[0], np.cumsum(data["lengths"])])
            added = 0
            for i, members in enumerate(data["members"]):
                key = (tuple(str(members).split("|")), float(data["q"][i]),
                       str(data["state"][i]), str(data["window"][i]))
                if key not in self._store:
                    self._store[key] = data["values"][offsets[i]:offsets[i + 1]].copy()
                    added += 1
        return added


def _digest(arr: np.ndarray) -> str:
    import hashlib
    return hashlib.sha1(np.ascontiguousarray(arr).tobytes()).hexdigest()[:16]


def characteristic(subset: Iterable[str], growth: GrowthPanel | None = None,
                   panel: MarketPanel | None = None, m=None, q: float = 0.01,
                   cache: CharacteristicCache | None = None,
                   window: np.ndarray | None = None) -> RiskSeries:
    """VaR series (bp) of the lagged-weight portfolio of ``subset``."""
    subset = list(subset)
    if not subset:
        raise ValueError("characteristic function needs a nonempty subset")
    if cache is None:
        if panel is None:
            raise ValueError("pass a MarketPanel or a CharacteristicCache")
        cache = CharacteristicCache(panel, m, q)
    canon = cache.canonical(subset)
    if window is None:
        window = cache.window(canon)
    vals = cache.values([canon], window)[0]
    return RiskSeries(",".join(canon), "VaR", cache.dates[1:][window], vals)


def _check_size(spec: SystemSpec, limit: int = MAX_SYSTEM) -> None:
    if spec.N > limit:
        raise FeasibilityError(
            f"system of {spec.N} banks needs {2 ** (spec.N - 1)} coalitions per target; cap is {limit}")


def _prepare(spec: SystemSpec, cache: CharacteristicCache):
    _check_size(spec)
    if spec.synthetic is not None:
        cache.add_bank(spec.synthetic)
    members = list(spec.members)
    return members, cache.window(members)


def gross_shapley(target: str, spec: SystemSpec, cache: CharacteristicCache) -> RiskSeries:
    """Shapley value of ``target`` in the coalition game of portfolio VaR."""
    if target not in spec.members:
        raise ValueError(f"target {target!r} is not a system member")
    members, window = _prepare(spec, cache)
    others = [b for b in members if b != target]
    N = len(members)
    subsets = [()]
    sizes = [0]
    for s in range(1, N):
        for combo in itertools.combinations(others, s):
            subsets.append(combo)
            sizes.append(s)
    with_t = cache.values([c + (target,) for c in subsets], window)
    without = [None] + cache.values(subsets[1:], window)
    w = shapley_weights(N)
    T = with_t[0].size
    contrib = np.empty((len(subsets), T))
    for r, (s, a, b) in enumerate(zip(sizes, with_t, without)):
        contrib[r] = w[s] * (a if b is None else a - b)
    gsv = np.array([math.fsum(col) for col in contrib.T])
    return RiskSeries(target, "GSV", cache.dates[1:][window], gsv)


def net_shapley(target: str, spec: SystemSpec, cache: CharacteristicCache) -> ShapleyResult:
    """GSV minus the bank's own VaR divided by the system size."""
    gsv = gross_shapley(target, spec, cache)
    members, window = _prepare(spec, cache)
    var_i = cache.values([(target,)], window)[0]
    nsv = gsv.values - var_i / spec.N
    dates = gsv.dates
    return ShapleyResult(
        target,
        gsv,
        RiskSeries(target, "NSV", dates, nsv),
        RiskSeries(target, "VaR", dates, var_i),
        spec.N,
    )


def brute_shapley(target: str, spec: SystemSpec, panel: MarketPanel, m=None,
                  q: float = 0.01) -> RiskSeries:
    """Average marginal contribution over all N! orderings (small N only).

    Coalition values are evaluated with a fresh, disabled cache.
    """
    _check_size(spec, MAX_BRUTE)
    if target not in spec.members:
        raise ValueError(f"target {target!r} is not a system member")
    cache = CharacteristicCache(panel, m, q, enabled=False)
    members, window = _prepare(spec, cache)
    counts: dict[frozenset, int] = {}
    for order in itertools.permutations(members):
        before = frozenset(order[:order.index(target)])
        counts[before] = counts.get(before, 0) + 1
    coalitions = list(counts)
    with_t = cache.values([tuple(c | {target}) for c in coalitions], window)
    nonempty = [c for c in coalitions if c]
    without = dict(zip(nonempty, cache.values([tuple(c) for c in nonempty], window)))
    total = np.zeros_like(with_t[0])
    for c, a in zip(coalitions, with_t):
        total += counts[c] * (a - without[c] if c else a)
    gsv = total / math.factorial(len(members))
    return RiskSeries(target, "GSV", cache.dates[1:][window], gsv)
