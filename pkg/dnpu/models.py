import json
from dataclasses import dataclass, field

import numpy as np

from helpers import dumps_json

N_BRANCHES = 7
N_CONTROLS = 6
BRANCH_NAMES = ('input', 'c1', 'c2', 'c3', 'c4', 'c5', 'c6')

# c5 and c6 sit next to the output electrode and get half the range
CONTROL_LIMITS = np.array([0.4, 0.4, 0.4, 0.4, 0.2, 0.2])

EXPONENT_RANGE = (0.5, 6.0)

C_EXT_MIN = 1e-12
C_EXT_MAX = 1e-9


def _param_array(values, shape):
    arr = np.array(values, dtype=np.float64, copy=True)
    if arr.shape != shape:
        raise ValueError(f"expected parameter shape {shape}, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("device parameters must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DnpuModel:
    """
    Surrogate parameters of one 8-electrode device.

    Branch 0 connects the input electrode to the output, branches 1..6 the
    control electrodes c1..c6. Gating column j of `gamma` couples the potential
    of the same electrode set (input, c1..c6) into every branch.

    Attributes:
        s (ndarray): Current scale per branch (A)
        a (ndarray): Forward exponent per branch (1/V)
        b (ndarray): Reverse exponent per branch (1/V)
        gamma (ndarray): 7x7 gating couplings (1/V)
        d (ndarray): NDR amplitude per branch (A/V)
        lam (ndarray): NDR width per branch (V)
        seed (int): Seed the parameters were sampled from
        linear (bool): First-order test variant without intermodulation
    """
    s: np.ndarray
    a: np.ndarray
    b: np.ndarray
    gamma: np.ndarray
    d: np.ndarray
    lam: np.ndarray
    seed: int = 0
    linear: bool = False

    def __post_init__(self):
        shape = (N_BRANCHES,)
        for name in ('s', 'a', 'b', 'd', 'lam'):
            object.__setattr__(self, name, _param_array(getattr(self, name), shape))
        object.__setattr__(self, 'gamma', _param_array(self.gamma, (N_BRANCHES, N_BRANCHES)))
        if np.any(self.s < 0):
            raise ValueError("current scales s must be non-negative")
        for name in ('a', 'b'):
            values = getattr(self, name)
            if np.any(values < EXPONENT_RANGE[0]) or np.any(values > EXPONENT_RANGE[1]):
                raise ValueError(f"exponents {name} must lie in {EXPONENT_RANGE} 1/V")
        if np.any(np.abs(self.gamma) > 1.5):
            raise ValueError("gating couplings must satisfy |gamma| <= 1.5 1/V")
        if np.any(self.lam <= 0):
            raise ValueError("NDR widths lam must be positive")
        object.__setattr__(self, 'seed', int(self.seed))

    def linearized(self):
        """
        First-order variant.

        Every branch becomes I_k = (s_k*(a_k+b_k)*exp(sum_j>0 gamma_kj*V_j) + d_k) * delta_k,
        linear in both the input and the output voltage.
        """
        return DnpuModel(self.s, self.a, self.b, self.gamma, self.d, self.lam,
                         seed=self.seed, linear=True)

    @classmethod
    def zeros(cls, seed=0):
        """Device whose branches carry no current."""
        ones = np.ones(N_BRANCHES)
        return cls(np.zeros(N_BRANCHES), ones, ones, np.zeros((N_BRANCHES, N_BRANCHES)),
                   np.zeros(N_BRANCHES), ones, seed=seed)

    def to_dict(self):
        return {
            'seed': self.seed,
            'linear': self.linear,
            'branches': list(BRANCH_NAMES),
            's_A': self.s,
            'a_per_V': self.a,
            'b_per_V': self.b,
            'gamma_per_V': self.gamma,
            'd_A_per_V': self.d,
            'lam_V': self.lam,
        }

    def to_json(self):
        return dumps_json(self.to_dict())

    @classmethod
    def from_dict(cls, payload):
        return cls(
            s=payload['s_A'],
            a=payload['a_per_V'],
            b=payload['b_per_V'],
            gamma=payload['gamma_per_V'],
            d=payload['d_A_per_V'],
            lam=payload['lam_V'],
            seed=payload['seed'],
            linear=payload.get('linear', False),
        )

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class CircuitConfig:
    """
    Output circuit: device output node loaded by C_ext and a high-impedance buffer.

    Attributes:
        C_ext (float): External capacitance (F)
        buffer_impedance (float): Buffer input impedance (ohm), informational
        oversample (int): RK4 sub-steps per input sample
    """
    C_ext: float = 100e-12
    buffer_impedance: float = 1e9
    oversample: int = 8

    def __post_init__(self):
        if not C_EXT_MIN <= self.C_ext <= C_EXT_MAX:
            raise ValueError(f"C_ext must be within [1 pF, 1 nF], got {self.C_ext}")
        if self.buffer_impedance < 1e9:
            raise ValueError(f"buffer_impedance must be at least 1 GOhm, got {self.buffer_impedance}")
        if int(self.oversample) != self.oversample or self.oversample < 1:
            raise ValueError(f"oversample must be a positive integer, got {self.oversample}")
        object.__setattr__(self, 'oversample', int(self.oversample))


@dataclass(frozen=True)
class ControlSet:
    """Static voltages of the six control electrodes (V)."""
    voltages: tuple = field(default=(0.0,) * N_CONTROLS)

    def __post_init__(self):
        v = np.asarray(self.voltages, dtype=np.float64)
        if v.shape != (N_CONTROLS,):
            raise ValueError(f"ControlSet needs {N_CONTROLS} voltages, got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("control voltages must be finite")
        over = np.abs(v) > CONTROL_LIMITS + 1e-12
        if np.any(over):
            names = [BRANCH_NAMES[i + 1] for i in np.flatnonzero(over)]
            raise ValueError(f"control voltages out of range on {names}: {v.tolist()}")
        object.__setattr__(self, 'voltages', tuple(float(x) for x in v))

    @property
    def vector(self):
        return np.array(self.voltages)

    @classmethod
    def zero(cls):
        return cls()

    @classmethod
    def scaled(cls, fraction, signs=None):
        """Every control at `fraction` of its own limit, with optional signs."""
        signs = np.ones(N_CONTROLS) if signs is None else np.asarray(signs, dtype=np.float64)
        return cls(tuple(fraction * CONTROL_LIMITS * signs))


def control_matrix(controls):
    """Stack ControlSets (or raw 6-vectors) into an (n, 6) array."""
    rows = [c.vector if isinstance(c, ControlSet) else np.asarray(c, dtype=np.float64) for c in controls]
    if not rows:
        return np.zeros((0, N_CONTROLS))
    matrix = np.vstack(rows)
    if matrix.shape[1] != N_CONTROLS:
        raise ValueError(f"control vectors must have {N_CONTROLS} entries")
    return matrix
