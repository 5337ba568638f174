"""Polynomial / rational transfer-function algebra for SISO LTI blocks.

Conventions
-----------
* Polynomial coefficients are 1-D float arrays, highest degree first
  (``[1, 2, 3]`` is ``s**2 + 2 s + 3``), everywhere including text I/O.
* ``ts is None`` marks a continuous-time object, ``ts > 0`` a discrete one.
* Discretization is zero-order hold only.

The runtime side lives here too: :class:`FilterState` executes a discrete
transfer function one sample at a time and :class:`DelayLine` is a pure
``z**-N`` buffer.
"""

from __future__ import annotations

import decimal
import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np
from scipy.linalg import expm

# Read-only numerical constants.
TRIM_RTOL = 1e-12
CANCEL_TOL = 1e-9
BOUNDARY_TOL = 1e-9
ROOT_CLUSTER_TOL = 1e-5
HP_DIGITS = 50

ArrayLike = Union[Sequence[float], np.ndarray, float]


class DomainMismatchError(ValueError):
    pass


class ImproperError(ValueError):
    pass


# ---------------------------------------------------------------------------
# polynomials


def trim(p: ArrayLike, rtol: float = TRIM_RTOL) -> np.ndarray:
    """Drop leading coefficients that are negligible relative to max |coeff|.

    The zero polynomial is returned as ``array([0.])``.
    """
    p = np.atleast_1d(np.asarray(p, dtype=float)).ravel()
    if p.size == 0:
        return np.zeros(1)
    scale = np.max(np.abs(p))
    if scale == 0.0:
        return np.zeros(1)
    nz = np.flatnonzero(np.abs(p) > rtol * scale)
    return p[nz[0]:].copy()


def degree(p: ArrayLike) -> int:
    p = trim(p)
    return -1 if not p.any() else len(p) - 1


def poly_roots(p: ArrayLike) -> np.ndarray:
    """Roots of ``p`` as eigenvalues of its companion matrix.

    Raises
    ------
    ValueError
        For the zero polynomial ("undefined roots").
    """
    p = trim(p)
    if not p.any():
        raise ValueError("undefined roots: zero polynomial")
    n_zero = 0
    while len(p) > 1 and p[-1] == 0.0:
        p = p[:-1]
        n_zero += 1
    n = len(p) - 1
    roots = np.zeros(0, dtype=complex)
    if n > 0:
        comp = np.zeros((n, n))
        comp[0, :] = -p[1:] / p[0]
        comp[1:, :-1] = np.eye(n - 1)
        roots = np.linalg.eigvals(comp).astype(complex)
    return np.concatenate([roots, np.zeros(n_zero, dtype=complex)])


def poly_from_roots(roots: ArrayLike, lead: float = 1.0) -> np.ndarray:
    c = np.poly(np.asarray(roots)) if np.size(roots) else np.ones(1)
    return lead * np.real_if_close(c, tol=1e6).real


def poly_add(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    return np.polyadd(np.asarray(a, float), np.asarray(b, float))


def poly_sub(a: ArrayLike, b: ArrayLike) -> np.ndarray:
    return np.polysub(np.asarray(a, float), np.asarray(b, float))


def poly_mul(*ps: ArrayLike) -> np.ndarray:
    out = np.ones(1)
    for p in ps:
        out = np.polymul(out, np.asarray(p, float))
    return out


def _cluster_mean(roots: np.ndarray, tol: float = ROOT_CLUSTER_TOL) -> np.ndarray:
    # Repeated roots come back from eig spread by ~sqrt(eps); their mean is
    # accurate to ~eps, which matters for boundary classification.
    roots = list(roots)
    out = []
    while roots:
        r = roots.pop(0)
        group = [r]
        rest = []
        for q in roots:
            (group if abs(q - r) <= tol * max(1.0, abs(r)) else rest).append(q)
        roots = rest
        m = np.mean(group)
        out.extend([m] * len(group))
    return np.array(out, dtype=complex)


def _cancel(num: np.ndarray, den: np.ndarray, tol: float = CANCEL_TOL):
    """Remove factors whose roots coincide in num and den within ``tol``."""
    changed = True
    while changed and degree(num) > 0 and degree(den) > 0:
        changed = False
        zn = poly_roots(num)
        pd = poly_roots(den)
        for z in zn:
            d = np.abs(pd - z)
            j = int(np.argmin(d))
            if d[j] > tol:
                continue
            r = 0.5 * (z + pd[j])
            if abs(r.imag) > tol:
                factor = np.array([1.0, -2.0 * r.real, abs(r) ** 2])
            else:
                factor = np.array([1.0, -r.real])
            qn, rn = np.polydiv(num, factor)
            qd, rd = np.polydiv(den, factor)
            if np.max(np.abs(rn), initial=0) > 1e-8 * np.max(np.abs(num)):
                continue
            if np.max(np.abs(rd), initial=0) > 1e-8 * np.max(np.abs(den)):
                continue
            num, den = trim(qn), trim(qd)
            changed = True
            break
    return num, den


# ---------------------------------------------------------------------------
# transfer functions


class Stability(enum.Enum):
    STABLE = "stable"
    MARGINAL = "marginal"
    UNSTABLE = "unstable"


@dataclass(frozen=True, eq=False)
class TransferFunction:
    """Ratio of real polynomials, continuous (``ts=None``) or discrete."""

    num: np.ndarray
    den: np.ndarray
    ts: float | None = None

    def __post_init__(self):
        num = trim(self.num)
        den = trim(self.den)
        if not den.any():
            raise ZeroDivisionError("denominator is identically zero")
        if self.ts is not None and not self.ts > 0:
            raise ValueError("sample time must be positive")
        object.__setattr__(self, "num", num)
        object.__setattr__(self, "den", den)
        num.flags.writeable = False
        den.flags.writeable = False

    # -- construction helpers
    @classmethod
    def gain(cls, k: float, ts: float | None = None) -> "TransferFunction":
        return cls([k], [1.0], ts)

    @classmethod
    def delay(cls, n: int, ts: float) -> "TransferFunction":
        """``z**-n`` as ``1 / z**n``."""
        if n < 0:
            raise ValueError("negative delay")
        den = np.zeros(n + 1)
        den[0] = 1.0
        return cls([1.0], den, ts)

    # -- basic properties
    @property
    def is_discrete(self) -> bool:
        return self.ts is not None

    @property
    def relative_degree(self) -> int:
        return degree(self.den) - max(degree(self.num), 0)

    @property
    def is_proper(self) -> bool:
        return self.relative_degree >= 0

    @property
    def is_strictly_proper(self) -> bool:
        return self.relative_degree >= 1 or not self.num.any()

    def poles(self) -> np.ndarray:
        return poly_roots(self.den)

    def zeros(self) -> np.ndarray:
        if not self.num.any():
            return np.zeros(0, dtype=complex)
        return poly_roots(self.num)

    def normalized(self) -> "TransferFunction":
        """Same system with a monic denominator."""
        return TransferFunction(self.num / self.den[0], self.den / self.den[0], self.ts)

    # -- evaluation
    def __call__(self, x):
        x = np.asarray(x, dtype=complex)
        return np.polyval(self.num, x) / np.polyval(self.den, x)

    def dcgain(self) -> float:
        x = 1.0 if self.is_discrete else 0.0
        d = np.polyval(self.den, x)
        if d == 0.0:
            return np.inf
        return float(np.polyval(self.num, x) / d)

    def freq_response(self, omega):
        """Complex response at angular frequency ``omega`` [rad/s].

        Discrete systems are evaluated on ``z = exp(j omega ts)``; frequencies
        above Nyquist are rejected. A pole on the evaluation contour raises.
        """
        w = np.asarray(omega, dtype=float)
        if self.is_discrete:
            nyq = np.pi / self.ts
            if np.any(w > nyq * (1 + 1e-12)) or np.any(w < 0):
                raise ValueError("above Nyquist frequency")
            x = np.exp(1j * w * self.ts)
        else:
            x = 1j * w
        d = np.polyval(self.den, x)
        scale = np.max(np.abs(self.den))
        if np.any(np.abs(d) <= 1e-14 * scale):
            raise ZeroDivisionError("pole on the evaluation contour")
        out = np.polyval(self.num, x) / d
        return complex(out) if np.ndim(out) == 0 else out

    # -- algebra
    def _check(self, other: "TransferFunction"):
        if (self.ts is None) != (other.ts is None) or (
            self.ts is not None and not np.isclose(self.ts, other.ts, rtol=1e-12, atol=0)
        ):
            raise DomainMismatchError(
                f"domain mismatch: ts={self.ts} vs ts={other.ts}"
            )

    def _coerce(self, other) -> "TransferFunction":
        if isinstance(other, TransferFunction):
            self._check(other)
            return other
        return TransferFunction.gain(float(other), self.ts)

    def __mul__(self, other):
        return series(self, self._coerce(other))

    __rmul__ = __mul__

    def __add__(self, other):
        o = self._coerce(other)
        num = poly_add(poly_mul(self.num, o.den), poly_mul(o.num, self.den))
        return TransferFunction(num, poly_mul(self.den, o.den), self.ts)

    __radd__ = __add__

    def __neg__(self):
        return TransferFunction(-self.num, self.den, self.ts)

    def __sub__(self, other):
        return self + (-self._coerce(other))

    def __rsub__(self, other):
        return (-self) + other

    def feedback(self, other=1.0, sign: int = -1) -> "TransferFunction":
        return feedback(self, self._coerce(other), sign)

    # -- text I/O
    def to_text(self, fmt: str = "%.10g") -> str:
        head = "continuous" if self.ts is None else f"discrete {self.ts:g}"
        n = " ".join(fmt % c for c in self.num)
        d = " ".join(fmt % c for c in self.den)
        return f"{head} num: {n} den: {d}"

    @classmethod
    def from_text(cls, line: str) -> "TransferFunction":
        try:
            head, rest = line.strip().split("num:", 1)
            num_s, den_s = rest.split("den:", 1)
            parts = head.split()
            if parts[0] == "continuous" and len(parts) == 1:
                ts = None
            elif parts[0] == "discrete" and len(parts) == 2:
                ts = float(parts[1])
            else:
                raise ValueError(head)
            num = [float(v) for v in num_s.split()]
            den = [float(v) for v in den_s.split()]
        except (ValueError, IndexError) as exc:
            raise ValueError(f"malformed transfer-function line: {line!r}") from exc
        return cls(num, den, ts)

    def __repr__(self):
        return f"TransferFunction({self.to_text()})"


def series(a: TransferFunction, b: TransferFunction) -> TransferFunction:
    """Cascade ``a * b``, cancelling only exactly coincident pole/zero pairs."""
    a._check(b)
    n1, d2 = _cancel(a.num, b.den)
    n2, d1 = _cancel(b.num, a.den)
    return TransferFunction(poly_mul(n1, n2), poly_mul(d1, d2), a.ts)


def feedback(loop: TransferFunction, other: TransferFunction | None = None, sign: int = -1):
    """Closed loop ``L / (1 - sign * L H)``; ``sign=-1`` is negative feedback."""
    if other is None:
        other = TransferFunction.gain(1.0, loop.ts)
    loop._check(other)
    num = poly_mul(loop.num, other.den)
    den = poly_sub(poly_mul(loop.den, other.den), sign * poly_mul(loop.num, other.num))
    return TransferFunction(num, den, loop.ts)


def tf_is_stable(g: TransferFunction) -> Stability:
    """Classify by denominator roots; boundary roots within 1e-9 are marginal."""
    if not g.is_proper:
        raise ImproperError("improper transfer function")
    p = _cluster_mean(g.poles())
    if g.is_discrete:
        margin = np.abs(p) - 1.0
    else:
        margin = p.real
    if np.all(margin < -BOUNDARY_TOL):
        return Stability.STABLE
    if np.all(margin <= BOUNDARY_TOL):
        return Stability.MARGINAL
    return Stability.UNSTABLE


def tf_close(a: TransferFunction, b: TransferFunction, tol: float = 1e-10) -> bool:
    """Polynomial identity ``a.num * b.den == b.num * a.den`` to relative ``tol``."""
    a._check(b)
    lhs = poly_mul(a.num, b.den)
    rhs = poly_mul(b.num, a.den)
    diff = poly_sub(lhs, rhs)
    scale = max(np.max(np.abs(lhs)), np.max(np.abs(rhs)), 1e-300)
    return bool(np.max(np.abs(diff)) <= tol * scale)


# ---------------------------------------------------------------------------
# state space


@dataclass(frozen=True, eq=False)
class StateSpace:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    ts: float | None = None

    def __post_init__(self):
        D = np.atleast_2d(np.asarray(self.D, float))
        p, m = D.shape
        if np.size(self.A) == 0:
            A, B, C = np.zeros((0, 0)), np.zeros((0, m)), np.zeros((p, 0))
        else:
            A = np.atleast_2d(np.asarray(self.A, float))
            n = A.shape[0]
            if A.shape != (n, n):
                raise ValueError("A must be square")
            B = np.asarray(self.B, float).reshape(n, -1)
            C = np.asarray(self.C, float).reshape(p, n)
        if B.shape[1] != D.shape[1]:
            raise ValueError("B and D column counts differ")
        for name, m in zip("ABCD", (A, B, C, D)):
            object.__setattr__(self, name, m)

    @property
    def n_states(self) -> int:
        return self.A.shape[0]

    def evaluate(self, x) -> np.ndarray:
        """``C (xI - A)^-1 B + D`` at a single complex point."""
        n = self.n_states
        if n == 0:
            return self.D.astype(complex)
        return self.C @ np.linalg.solve(x * np.eye(n) - self.A, self.B) + self.D

    def to_tf(self, inp: int = 0, out: int = 0) -> TransferFunction:
        return ss_to_tf(self, inp, out)


def tf_to_ss(g: TransferFunction) -> StateSpace:
    """Controllable-canonical realization; order equals ``deg(den)``."""
    if not g.is_proper:
        raise ImproperError("improper transfer function")
    g = g.normalized()
    n = degree(g.den)
    num = np.concatenate([np.zeros(n + 1 - len(g.num)), g.num])
    d = num[0]
    if n == 0:
        return StateSpace(np.zeros((0, 0)), np.zeros((0, 1)), np.zeros((1, 0)), [[d]], g.ts)
    a = g.den[1:]
    A = np.zeros((n, n))
    A[0, :] = -a
    A[1:, :-1] = np.eye(n - 1)
    B = np.zeros((n, 1))
    B[0, 0] = 1.0
    C = (num[1:] - d * a).reshape(1, n)
    return StateSpace(A, B, C, [[d]], g.ts)


def ss_to_tf(sys: StateSpace, inp: int = 0, out: int = 0) -> TransferFunction:
    """SISO channel via the determinant identity det(xI-A+BC) - det(xI-A)."""
    A = sys.A
    b = sys.B[:, [inp]]
    c = sys.C[[out], :]
    d = sys.D[out, inp]
    if sys.n_states == 0:
        return TransferFunction([d], [1.0], sys.ts)
    den = np.poly(A).real
    num = np.poly(A - b @ c).real - den + d * den
    return TransferFunction(num, den, sys.ts)


def zoh_discretize(sys, ts: float):
    """Exact zero-order-hold equivalent of a continuous TF or state space.

    The augmented block ``[[A, B], [0, 0]]`` is exponentiated once; its top
    blocks give ``Ad = exp(A ts)`` and ``Bd = int_0^ts exp(A t) dt B``.
    """
    if not ts > 0:
        raise ValueError("sample time must be positive")
    if isinstance(sys, TransferFunction):
        if sys.is_discrete:
            raise DomainMismatchError("already discrete")
        return ss_to_tf(zoh_discretize(tf_to_ss(sys), ts))
    if sys.ts is not None:
        raise DomainMismatchError("already discrete")
    n, m = sys.B.shape
    M = np.zeros((n + m, n + m))
    M[:n, :n] = sys.A
    M[:n, n:] = sys.B
    E = expm(M * ts)
    if not np.all(np.isfinite(E)):
        raise ValueError("nonfinite matrix exponential")
    return StateSpace(E[:n, :n], E[:n, n:], sys.C, sys.D, ts)


# ---------------------------------------------------------------------------
# runtime blocks


@dataclass(eq=False)
class FilterState:
    """Direct-form II transposed execution of a proper discrete TF.

    Registers hold ``deg(den)`` values; :meth:`reset` zeroes them or places
    the filter in the steady state of a constant input.
    """

    tf: TransferFunction
    _b: list = field(init=False, repr=False)
    _a: list = field(init=False, repr=False)
    z: list = field(init=False)

    def __post_init__(self):
        if not self.tf.is_discrete:
            raise DomainMismatchError("FilterState needs a discrete transfer function")
        if not self.tf.is_proper:
            raise ImproperError("improper transfer function")
        g = self.tf.normalized()
        n = degree(g.den)
        num = np.concatenate([np.zeros(n + 1 - len(g.num)), g.num])
        self._b = [float(v) for v in num]
        self._a = [float(v) for v in g.den]
        self.z = [0.0] * n

    @property
    def order(self) -> int:
        return len(self.z)

    def reset(self, steady_input: float = 0.0) -> None:
        n = len(self.z)
        if steady_input == 0.0:
            self.z = [0.0] * n
            return
        b, a = self._b, self._a
        if abs(sum(a)) < 1e-12:
            raise ValueError("no steady state: pole at z = 1")
        y0 = steady_input * sum(b) / sum(a)
        acc = 0.0
        z = [0.0] * n
        for i in range(n - 1, -1, -1):
            acc += b[i + 1] * steady_input - a[i + 1] * y0
            z[i] = acc
        self.z = z

    def output(self) -> float:
        """Current output of a strictly proper filter, before its input is known."""
        if self._b[0] != 0.0:
            raise ValueError("output() needs a strictly proper filter")
        return self.z[0] if self.z else 0.0

    def step(self, u: float) -> float:
        b, a, z = self._b, self._a, self.z
        n = len(z)
        y = b[0] * u + (z[0] if n else 0.0)
        for i in range(n - 1):
            z[i] = b[i + 1] * u + z[i + 1] - a[i + 1] * y
        if n:
            z[n - 1] = b[n] * u - a[n] * y
        return y

    def run(self, u: ArrayLike) -> np.ndarray:
        return np.array([self.step(float(v)) for v in np.asarray(u, float).ravel()])


def filter_step(st: FilterState, u_k: float) -> float:
    return st.step(u_k)


class DelayLine:
    """``z**-N`` buffer: output(k) = input(k - N), zero (or primed value) before."""

    def __init__(self, n: int):
        if int(n) != n or n < 0:
            raise ValueError("negative delay")
        self.n = int(n)
        self._buf = deque([0.0] * self.n)

    def reset(self, value: float = 0.0) -> None:
        self._buf = deque([float(value)] * self.n)

    def step(self, u: float) -> float:
        if self.n == 0:
            return u
        self._buf.append(u)
        return self._buf.popleft()

    def __len__(self):
        return len(self._buf)


class VariableDelayLine:
    """Delay buffer whose length may change every sample (``0 <= n_k <= max_delay``)."""

    def __init__(self, max_delay: int):
        if max_delay < 0:
            raise ValueError("negative delay")
        self.max_delay = int(max_delay)
        self._hist = deque([0.0] * (self.max_delay + 1), maxlen=self.max_delay + 1)

    def reset(self, value: float = 0.0) -> None:
        self._hist = deque([float(value)] * (self.max_delay + 1), maxlen=self.max_delay + 1)

    def step(self, u: float, n_k: int) -> float:
        if not 0 <= n_k <= self.max_delay:
            raise ValueError(f"delay {n_k} outside [0, {self.max_delay}]")
        self._hist.append(u)
        return self._hist[-1 - n_k]


def delay_line(n: int) -> DelayLine:
    return DelayLine(n)


def impulse_by_division(g: TransferFunction, k: int) -> np.ndarray:
    """First ``k`` coefficients of num/den expanded in powers of ``z**-1``."""
    g = g.normalized()
    n = degree(g.den)
    num = np.concatenate([np.zeros(n + 1 - len(g.num)), g.num])
    rem = np.concatenate([num, np.zeros(k)])
    out = np.zeros(k)
    for i in range(k):
        q = rem[i]
        out[i] = q
        rem[i:i + n + 1] -= q * g.den
    return out


# ---------------------------------------------------------------------------
# extended-precision reference evaluation
#
# Closed-loop polynomials of order ~10 with near-double poles close to z = 1
# lose about sqrt(eps) of accuracy when rounded to doubles. Reference
# responses are therefore assembled and filtered in decimal arithmetic, with
# the float block coefficients converted exactly.


_HP_CTX = decimal.Context(prec=HP_DIGITS)


def hp(p: ArrayLike) -> list:
    """Exact decimal copy of float coefficients."""
    return [decimal.Decimal(float(v)) for v in np.ravel(p)]


def hp_mul(*ps) -> list:
    with decimal.localcontext(_HP_CTX):
        out = [decimal.Decimal(1)]
        for p in ps:
            res = [decimal.Decimal(0)] * (len(out) + len(p) - 1)
            for i, a in enumerate(out):
                for j, b in enumerate(p):
                    res[i + j] += a * b
            out = res
        return out


def hp_add(a: list, b: list) -> list:
    n = max(len(a), len(b))
    a = [decimal.Decimal(0)] * (n - len(a)) + list(a)
    b = [decimal.Decimal(0)] * (n - len(b)) + list(b)
    with decimal.localcontext(_HP_CTX):
        return [x + y for x, y in zip(a, b)]


def hp_sub(a: list, b: list) -> list:
    return hp_add(a, [-v for v in b])


def hp_lfilter(num: list, den: list, u: ArrayLike) -> np.ndarray:
    """Decimal DF2T run of ``num/den`` (proper) on float input; float output."""
    while len(den) > 1 and den[0] == 0:
        den = den[1:]
    while len(num) > 1 and num[0] == 0:
        num = num[1:]
    n = len(den) - 1
    if len(num) - 1 > n:
        raise ImproperError("improper transfer function")
    with decimal.localcontext(_HP_CTX):
        a0 = den[0]
        a = [v / a0 for v in den]
        b = [decimal.Decimal(0)] * (n + 1 - len(num)) + [v / a0 for v in num]
        z = [decimal.Decimal(0)] * n
        out = np.empty(len(np.ravel(u)))
        for k, uk in enumerate(np.ravel(u)):
            x = decimal.Decimal(float(uk))
            y = b[0] * x + (z[0] if n else 0)
            for i in range(n - 1):
                z[i] = b[i + 1] * x + z[i + 1] - a[i + 1] * y
            if n:
                z[n - 1] = b[n] * x - a[n] * y
            out[k] = float(y)
    return out
