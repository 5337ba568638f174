"""Single-track lateral error dynamics and the fixed nominal design plant.

The nominal plant used for every controller / observer synthesis is the
printed fourth-order model from steering angle to lateral deviation. The
parametric state-space model is only the simulation "truth" plant: states
``(beta, r, dpsi, y)``, inputs ``(delta_f, rho_ref, F_wind)`` and output the
deviation measured at the preview distance, ``y_s = y + ls * dpsi``.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np

from .lti import StateSpace, TransferFunction, zoh_discretize

KMH = 1.0 / 3.6

NOMINAL_NUM = (4713.0, 1.598e5, 7.51e5)
NOMINAL_DEN = (1.242, 933.8, 10610.0, 0.0, 0.0)

# Front/rear cornering stiffness exactly as tabulated. With the larger value
# on the front axle the vehicle oversteers and its yaw mode is unstable above
# ~54 km/h; VehicleParams therefore defaults to the rear-heavy assignment.
PRINTED_CF = 195_000.0
PRINTED_CR = 50_000.0


def kmh(v: float) -> float:
    """km/h -> m/s."""
    return v * KMH


@dataclass(frozen=True)
class VehicleParams:
    m: float = 2000.0
    mu: float = 1.0
    V: float = 60.0 * KMH
    J: float = 3728.0
    Cf: float = PRINTED_CR
    Cr: float = PRINTED_CF
    lf: float = 1.3008
    lr: float = 1.5453
    ls: float = 2.0
    l_wind: float = 1.0

    def __post_init__(self):
        for name in ("m", "J", "Cf", "Cr", "lf", "lr", "ls", "l_wind"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v > 0):
                raise ValueError(f"{name} must be positive, got {v}")
        if not 0 < self.mu <= 1:
            raise ValueError(f"mu must lie in (0, 1], got {self.mu}")
        if not np.isfinite(self.V) or self.V < 0:
            raise ValueError(f"V must be non-negative, got {self.V}")

    @property
    def virtual_mass(self) -> float:
        return self.m / self.mu

    @classmethod
    def as_printed(cls, **kw) -> "VehicleParams":
        """Parameters with the cornering stiffnesses assigned as tabulated."""
        kw.setdefault("Cf", PRINTED_CF)
        kw.setdefault("Cr", PRINTED_CR)
        return cls(**kw)

    @classmethod
    def from_mapping(cls, values: dict, base: "VehicleParams | None" = None) -> "VehicleParams":
        """Build from string/float values; ``V`` accepts a ``km/h`` suffix.

        Unknown keys raise ``KeyError`` so typos are not silently ignored.
        """
        base = base or cls()
        known = {f.name for f in fields(cls)}
        kw = {}
        for key, raw in values.items():
            if key not in known:
                raise KeyError(key)
            kw[key] = parse_speed(raw) if key == "V" else float(raw)
        return replace(base, **kw)


def parse_speed(raw) -> float:
    """Speed in m/s from a number or a string with optional ``km/h`` / ``m/s``."""
    if isinstance(raw, (int, float)):
        return float(raw)
    s = str(raw).strip().lower().replace(" ", "")
    if s.endswith("km/h"):
        return kmh(float(s[:-4]))
    if s.endswith("m/s"):
        return float(s[:-3])
    return float(s)


@dataclass(frozen=True)
class UncertaintyCorner:
    label: str
    V: float  # m/s
    m: float  # kg (virtual mass)

    def __post_init__(self):
        if self.label not in ("a", "b", "c", "d", "nominal"):
            raise ValueError(f"unknown corner label {self.label!r}")

    @property
    def title(self) -> str:
        return f"{self.V / KMH:.0f}km/h {self.m:.0f}kg"


CORNERS = {
    "a": UncertaintyCorner("a", kmh(50), 1600.0),
    "b": UncertaintyCorner("b", kmh(50), 3200.0),
    "c": UncertaintyCorner("c", kmh(90), 1600.0),
    "d": UncertaintyCorner("d", kmh(90), 3200.0),
}
NOMINAL_CORNER = UncertaintyCorner("nominal", kmh(60), 2000.0)


def nominal_plant_s() -> TransferFunction:
    """Continuous nominal plant from front-wheel angle to lateral deviation."""
    return TransferFunction(NOMINAL_NUM, NOMINAL_DEN)


def nominal_plant_z(ts: float = 0.01) -> TransferFunction:
    return zoh_discretize(nominal_plant_s(), ts).normalized()


def error_dynamics_ss(p: VehicleParams) -> StateSpace:
    """Continuous linear single-track model in the path-error frame."""
    if p.V == 0:
        raise ZeroDivisionError("zero speed singular")
    mt, V, J = p.virtual_mass, p.V, p.J
    cf, cr, lf, lr = p.Cf, p.Cr, p.lf, p.lr
    A = np.array([
        [-(cf + cr) / (mt * V), (cr * lr - cf * lf) / (mt * V**2) - 1.0, 0.0, 0.0],
        [(cr * lr - cf * lf) / J, -(cf * lf**2 + cr * lr**2) / (J * V), 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [V, 0.0, V, 0.0],
    ])
    B = np.array([
        [cf / (mt * V), 0.0, 1.0 / (mt * V)],
        [cf * lf / J, 0.0, p.l_wind / J],
        [0.0, -V, 0.0],
        [0.0, 0.0, 0.0],
    ])
    C = np.array([[0.0, 0.0, p.ls, 1.0]])
    D = np.zeros((1, 3))
    return StateSpace(A, B, C, D)


def corner_params(c: UncertaintyCorner, base: VehicleParams | None = None) -> VehicleParams:
    return replace(base or VehicleParams(), V=c.V, m=c.m)


def corner_plant(c: UncertaintyCorner, base: VehicleParams | None = None) -> StateSpace:
    return error_dynamics_ss(corner_params(c, base))


def steering_tf(p: VehicleParams) -> TransferFunction:
    """Continuous ``delta_f -> y_s`` channel of the truth plant."""
    return error_dynamics_ss(p).to_tf(inp=0, out=0)


def understeer_gradient(p: VehicleParams) -> float:
    """K_us [rad / (m/s^2)]; negative means oversteer."""
    L = p.lf + p.lr
    return p.virtual_mass / L * (p.lr / p.Cf - p.lf / p.Cr)


def critical_speed(p: VehicleParams) -> float:
    """Speed [m/s] above which an oversteering vehicle's yaw mode is unstable (inf if understeer)."""
    k = understeer_gradient(p)
    if k >= 0:
        return np.inf
    return float(np.sqrt((p.lf + p.lr) / -k))
