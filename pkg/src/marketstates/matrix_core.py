"""Epoch matrices: standard, reduced-rank and de-meaned correlation matrices.

All second moments use the population convention (divisor T). For an epoch
with centred data ``A`` (K x T) and standardised data ``M = sigma^-1 A``:

* standard:        C   = M M^T / T
* reduced_cov:     B   = A - a1 u1 v1^T,   C_B = corr(B B^T / T)
* reduced_corr:    L   = M - m1 x1 y1^T,   C_L = corr(L L^T / T)
* demeaned:        C with its lower-triangle mean removed, diagonal zeroed

where ``a1 u1 v1^T`` is the leading singular triplet (the market mode).
Because centring forces ``v^T e = 0`` for every right singular vector with a
non-zero singular value, B and L are already centred, and ``B B^T / T``
equals ``Sigma - a1^2 u1 u1^T / T`` with no correction term.
"""

from __future__ import annotations

import logging
import math
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataError, NumericalError, ParseError
from .ingest import ReturnMatrix

log = logging.getLogger(__name__)

KINDS = ("standard", "reduced_cov", "reduced_corr", "demeaned")
CORRELATION_KINDS = ("standard", "reduced_cov", "reduced_corr")

# Relative size below which a row's volatility counts as zero.
_ZERO_VOL = 1e-10
# Relative gap below which the two leading singular values count as tied.
_TIE = 1e-12


@dataclass(frozen=True)
class EpochWindow:
    index: int  # 1-based
    start: int  # 0-based column of the first return
    raw: np.ndarray
    mid_date: str | None = None

    @property
    def length(self) -> int:
        return self.raw.shape[1]


@dataclass(frozen=True)
class NormalizedEpoch:
    A: np.ndarray
    M: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def T(self) -> int:
        return self.A.shape[1]


@dataclass(frozen=True)
class SpectralDecomposition:
    U: np.ndarray
    singular_values: np.ndarray
    V: np.ndarray

    def dyad(self, t: int = 0) -> np.ndarray:
        return self.singular_values[t] * np.outer(self.U[:, t], self.V[:, t])

    def reconstruct(self) -> np.ndarray:
        r = len(self.singular_values)
        return (self.U[:, :r] * self.singular_values) @ self.V[:, :r].T


@dataclass
class CorrelationMatrix:
    values: np.ndarray
    kind: str = "standard"
    epoch: int = 0
    mid_date: str | None = None

    @property
    def K(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class ReducedRankPair:
    data_matrix: np.ndarray
    volatilities: np.ndarray
    covariance: np.ndarray
    correlation: np.ndarray


def slice_epochs(r: ReturnMatrix, T: int) -> list[EpochWindow]:
    """Cut the return matrix into floor(T_tot / T) disjoint epochs.

    Trailing days that do not fill an epoch are dropped (and logged). The
    epoch time stamp is column ``(n-1) T + ceil(T/2)`` in 1-based counting.
    """
    if T < 3:
        raise DataError(f"epoch length must be >= 3, got {T}")
    if T > r.T_tot:
        raise DataError(f"epoch length {T} exceeds the {r.T_tot} available returns")
    n_ep, rest = divmod(r.T_tot, T)
    if rest:
        log.warning("dropping %d trailing return day(s) that do not fill an epoch", rest)
    out = []
    for n in range(n_ep):
        start = n * T
        mid = start + _center_offset(T)
        out.append(EpochWindow(index=n + 1, start=start, raw=r.values[:, start:start + T],
                               mid_date=r.dates[mid] if r.dates else None))
    return out


def _center_offset(T: int) -> int:
    return math.ceil(T / 2) - 1


def normalize(w) -> NormalizedEpoch:
    raw = w.raw if isinstance(w, EpochWindow) else np.asarray(w, dtype=float)
    T = raw.shape[1]
    mu = raw.mean(axis=1)
    A = raw - mu[:, None]
    sigma = np.sqrt((A * A).sum(axis=1) / T)
    scale = np.abs(raw).max(axis=1)
    dead = np.flatnonzero(sigma <= _ZERO_VOL * np.where(scale > 0, scale, 1.0))
    if dead.size:
        raise DataError(f"zero volatility in row(s) {dead.tolist()}")
    return NormalizedEpoch(A=A, M=A / sigma[:, None], mu=mu, sigma=sigma)


def _unit_diagonal(c: np.ndarray) -> np.ndarray:
    c = 0.5 * (c + c.T)
    np.fill_diagonal(c, 1.0)
    return c


def pearson(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    return _unit_diagonal(m @ m.T / m.shape[1])


def covariance(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    return a @ a.T / a.shape[1]


def svd(x: np.ndarray) -> SpectralDecomposition:
    """Full SVD with a fixed sign convention.

    Each left vector is flipped so that its largest-magnitude entry is
    positive; the paired right vector is flipped with it.
    """
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise NumericalError("svd input contains non-finite entries")
    try:
        U, s, Vt = np.linalg.svd(x, full_matrices=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"SVD did not converge: {exc}") from exc
    V = Vt.T
    rows = np.argmax(np.abs(U), axis=0)
    signs = np.where(U[rows, np.arange(U.shape[1])] < 0, -1.0, 1.0)
    U = U * signs
    r = len(s)
    V[:, :r] = V[:, :r] * signs[:r]
    return SpectralDecomposition(U=U, singular_values=s, V=V)


def _leading(dec: SpectralDecomposition) -> None:
    s = dec.singular_values
    if len(s) > 1 and s[0] - s[1] <= _TIE * s[0]:
        warnings.warn("leading singular value is degenerate; the market mode is ill-defined",
                      RuntimeWarning, stacklevel=3)


def _reduce(x: np.ndarray, what: str) -> ReducedRankPair:
    T = x.shape[1]
    dec = svd(x)
    _leading(dec)
    data = x - dec.dyad(0)
    cov = covariance(data)
    vol = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    ref = np.sqrt((x * x).sum(axis=1) / T)
    dead = np.flatnonzero(vol <= _ZERO_VOL * np.where(ref > 0, ref, 1.0))
    if dead.size:
        raise DataError(f"row(s) {dead.tolist()} fully explained by the market mode in {what}")
    corr = _unit_diagonal(cov / np.outer(vol, vol))
    return ReducedRankPair(data_matrix=data, volatilities=vol, covariance=cov, correlation=corr)


def reduce_cov(n: NormalizedEpoch) -> ReducedRankPair:
    """Remove the leading dyad of the centred data ``A`` and renormalise."""
    return _reduce(n.A, "covariance approach")


def reduce_corr(n: NormalizedEpoch) -> ReducedRankPair:
    """Remove the leading dyad of the standardised data ``M`` and renormalise."""
    return _reduce(n.M, "correlation approach")


def reduce_closed_form(second_moment: np.ndarray) -> np.ndarray:
    """Subtract the top eigen-dyad from a covariance/correlation matrix and
    rescale by the remaining diagonal.

    Works from the eigendecomposition of the K x K matrix, not from the data
    matrix, so it serves as an independent route to C_B and C_L.
    """
    w, Q = np.linalg.eigh(second_moment)
    top = Q[:, -1]
    reduced = second_moment - w[-1] * np.outer(top, top)
    d = np.sqrt(np.diag(reduced))
    return reduced / np.outer(d, d)


def demean_matrix(c) -> CorrelationMatrix:
    values = c.values if isinstance(c, CorrelationMatrix) else np.asarray(c, dtype=float)
    if isinstance(c, CorrelationMatrix) and c.kind != "standard":
        raise DataError(f"de-meaning expects a standard correlation matrix, got {c.kind}")
    K = values.shape[0]
    lower = values[np.tril_indices(K, -1)]
    out = values - lower.mean()
    np.fill_diagonal(out, 0.0)
    epoch = c.epoch if isinstance(c, CorrelationMatrix) else 0
    mid = c.mid_date if isinstance(c, CorrelationMatrix) else None
    return CorrelationMatrix(out, "demeaned", epoch, mid)


def mean_correlation(c) -> float:
    """Mean of the strictly off-diagonal entries."""
    values = c.values if isinstance(c, CorrelationMatrix) else np.asarray(c, dtype=float)
    K = values.shape[0]
    if K < 2:
        raise DataError("mean correlation needs K >= 2")
    return float((values.sum() - np.trace(values)) / (K * (K - 1)))


def epoch_matrix(raw: np.ndarray, kind: str) -> np.ndarray:
    """K x K matrix of the requested kind for one window of raw returns."""
    n = normalize(raw)
    if kind == "standard":
        return pearson(n.M)
    if kind == "reduced_cov":
        return reduce_cov(n).correlation
    if kind == "reduced_corr":
        return reduce_corr(n).correlation
    if kind == "demeaned":
        return demean_matrix(pearson(n.M)).values
    raise ValueError(f"unknown matrix kind {kind!r}")


def epoch_matrices(r: ReturnMatrix, T: int, kind: str) -> list[CorrelationMatrix]:
    out = []
    for w in slice_epochs(r, T):
        try:
            values = epoch_matrix(np.ascontiguousarray(w.raw), kind)
        except DataError as exc:
            raise DataError(f"epoch {w.index}: {exc}") from exc
        out.append(CorrelationMatrix(values, kind, w.index, w.mid_date))
    return out


def sliding_mean_correlation(r: ReturnMatrix, T: int, kind: str = "standard"):
    """Mean correlation over every window of T consecutive returns.

    Returns ``(dates, values)`` with one entry per start offset; each window
    is stamped at its centre with the same rule as :func:`slice_epochs`.
    """
    if T < 3 or T > r.T_tot:
        raise DataError(f"window length {T} outside [3, {r.T_tot}]")
    n = r.T_tot - T + 1
    values = np.empty(n)
    dates = []
    for s in range(n):
        try:
            values[s] = mean_correlation(epoch_matrix(np.ascontiguousarray(r.values[:, s:s + T]), kind))
        except DataError as exc:
            raise DataError(f"window starting at return {s + 1}: {exc}") from exc
        dates.append(r.dates[s + _center_offset(T)] if r.dates else None)
    return dates, values


# --- matrix files -----------------------------------------------------------

_MAGIC = b"MSMX"
_HEADER = struct.Struct("<4sII")  # magic, version, record count
_RECORD = struct.Struct("<16sIi10s")  # kind, K, epoch, mid_date


def write_matrices(path, mats: list[CorrelationMatrix]) -> None:
    """Binary container: a file header, then per matrix a small header and
    K*K little-endian float64 values in row-major order."""
    with Path(path).open("wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, 1, len(mats)))
        for m in mats:
            K = m.values.shape[0]
            fh.write(_RECORD.pack(m.kind.encode("ascii"), K, int(m.epoch),
                                  (m.mid_date or "").encode("ascii")))
            fh.write(np.ascontiguousarray(m.values, dtype="<f8").tobytes())


def read_matrices(path) -> list[CorrelationMatrix]:
    path = Path(path)
    buf = path.read_bytes()
    if len(buf) < _HEADER.size:
        raise ParseError("truncated matrix file", path=path)
    magic, version, count = _HEADER.unpack_from(buf, 0)
    if magic != _MAGIC or version != 1:
        raise ParseError("not a matrix container", path=path)
    pos, out = _HEADER.size, []
    for _ in range(count):
        kind, K, epoch, mid = _RECORD.unpack_from(buf, pos)
        pos += _RECORD.size
        n = K * K * 8
        if pos + n > len(buf):
            raise ParseError("truncated matrix record", path=path)
        values = np.frombuffer(buf, dtype="<f8", count=K * K, offset=pos).reshape(K, K).copy()
        pos += n
        out.append(CorrelationMatrix(values, kind.rstrip(b"\0").decode("ascii"), epoch,
                                     mid.rstrip(b"\0").decode("ascii") or None))
    return out


def write_matrix_text(path, m: CorrelationMatrix, delimiter: str = ",") -> None:
    header = f"kind={m.kind} K={m.K} epoch={m.epoch} mid_date={m.mid_date or ''}"
    np.savetxt(path, m.values, delimiter=delimiter, fmt="%.17g", header=header)


def read_matrix_text(path, delimiter: str = ",") -> CorrelationMatrix:
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
    meta = dict(tok.split("=", 1) for tok in first.lstrip("# ").split() if "=" in tok)
    values = np.atleast_2d(np.loadtxt(path, delimiter=delimiter))
    return CorrelationMatrix(values, meta.get("kind", "standard"), int(meta.get("epoch", 0)),
                             meta.get("mid_date") or None)
