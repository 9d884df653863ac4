"""Bit-exact message format for an encoded trajectory.

A message carries, per window, the quantized restart state and the quantized
Taylor coefficients of the selected local model. The receiver rebuilds the
local models and rolls them out to reconstruct the trajectory.
"""

import math
import struct
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .core import LicdsResult, window_bounds
from .integrate import Trajectory, rk4_states
from .localmodel import COMPLEXITY_MODES, LocalModel, MonomialBasis, basis_size

MAGIC = b"LICD"
VERSION = 1
DEFAULT_STATE_BOUND = 10.0


class CodecError(ValueError):
    pass


@dataclass(frozen=True)
class QuantizationSpec:
    state_bits: int = 16
    coeff_bits: int = 16
    state_bounds: Optional[tuple] = None  # ((lo, hi), ...) per component; None = +-10 each
    coeff_bound: float = 64.0

    def __post_init__(self):
        for name in ("state_bits", "coeff_bits"):
            b = getattr(self, name)
            if not (isinstance(b, (int, np.integer)) and 4 <= b <= 32):
                raise ValueError(f"{name} must be an integer in [4, 32]")
        if not self.coeff_bound > 0:
            raise ValueError("coeff_bound must be positive")
        if self.state_bounds is not None:
            bounds = tuple((float(lo), float(hi)) for lo, hi in self.state_bounds)
            if any(not hi > lo for lo, hi in bounds):
                raise ValueError("state bounds must satisfy upper > lower")
            object.__setattr__(self, "state_bounds", bounds)

    def bounds_for(self, dim):
        if self.state_bounds is None:
            return ((-DEFAULT_STATE_BOUND, DEFAULT_STATE_BOUND),) * dim
        if len(self.state_bounds) != dim:
            raise CodecError(f"state bounds given for {len(self.state_bounds)} components, "
                             f"result has {dim}")
        return self.state_bounds

    def to_dict(self):
        return {
            "state_bits": self.state_bits,
            "coeff_bits": self.coeff_bits,
            "state_bounds": [list(b) for b in self.state_bounds] if self.state_bounds else None,
            "coeff_bound": self.coeff_bound,
        }


def quantize(v, bits, interval):
    """Mid-rise uniform quantizer with 2**bits levels; ``v`` is clamped first."""
    lo, hi = interval
    levels = 1 << bits
    step = (hi - lo) / levels
    code = math.floor((min(max(v, lo), hi) - lo) / step)
    return min(max(code, 0), levels - 1)


def dequantize(code, bits, interval):
    lo, hi = interval
    step = (hi - lo) / (1 << bits)
    return lo + (code + 0.5) * step


class _BitWriter:
    def __init__(self):
        self.value = 0
        self.nbits = 0

    def write(self, code, width):
        self.value |= code << self.nbits
        self.nbits += width

    def to_bytes(self):
        return self.value.to_bytes((self.nbits + 7) // 8, "little")


class _BitReader:
    def __init__(self, data, nbits):
        self.value = int.from_bytes(data, "little")
        self.nbits = nbits
        self.pos = 0

    def read(self, width):
        code = (self.value >> self.pos) & ((1 << width) - 1)
        self.pos += width
        return code


@dataclass(frozen=True)
class DecodedPartition:
    restart_state: np.ndarray
    k: int
    model: LocalModel


@dataclass(eq=False)
class EncodedMessage:
    dim: int
    m: int
    n_steps: int
    dt: float
    T_local: float
    complexity: str
    k: List[int]
    spec: QuantizationSpec
    payload: bytes
    payload_bits: int
    clamped: int = 0  # values that fell outside their interval at encoding time
    k_max: Optional[int] = None

    @property
    def coeff_counts(self):
        return [basis_size(self.dim, k, self.complexity) for k in self.k]

    def partition_bits(self):
        s = self.spec
        return [self.dim * s.state_bits + self.dim * c * s.coeff_bits for c in self.coeff_counts]

    def header_bytes(self):
        s = self.spec
        bounds = self.spec.bounds_for(self.dim)
        out = bytearray(MAGIC)
        out += struct.pack("<BBHIddB", VERSION, self.dim, self.m, self.n_steps, self.dt,
                           self.T_local, COMPLEXITY_MODES.index(self.complexity))
        out += bytes(self.k)
        out += struct.pack("<BB", s.state_bits, s.coeff_bits)
        for lo, hi in bounds:
            out += struct.pack("<dd", lo, hi)
        out += struct.pack("<dQ", s.coeff_bound, self.payload_bits)
        return bytes(out)

    def to_bytes(self):
        return self.header_bytes() + self.payload

    @property
    def header_bits(self):
        return 8 * len(self.header_bytes())

    def bit_report(self, raw_samples=None):
        """Bit accounting with selected k per window and with k_max for every window."""
        per = self.partition_bits()
        report = {
            "payload_bits": self.payload_bits,
            "header_bits": self.header_bits,
            "total_bits": self.payload_bits + self.header_bits,
            "partition_bits": per,
            "k": list(self.k),
            "clamped_values": self.clamped,
        }
        if self.k_max is not None:
            s = self.spec
            full = basis_size(self.dim, self.k_max, self.complexity)
            report["k_max"] = self.k_max
            report["payload_bits_k_max"] = self.m * self.dim * (s.state_bits + full * s.coeff_bits)
        if raw_samples is not None:
            raw = raw_samples * self.dim * self.spec.state_bits
            report["raw_bits"] = raw
            report["compression_ratio"] = raw / self.payload_bits
        return report

    @classmethod
    def from_bytes(cls, data: bytes):
        if data[:4] != MAGIC:
            raise CodecError("not a message: bad magic bytes")
        pos = 4
        try:
            version, dim, m, n_steps, dt, T_local, mode = struct.unpack_from("<BBHIddB", data, pos)
            pos += struct.calcsize("<BBHIddB")
            if version != VERSION:
                raise CodecError(f"unsupported message version {version}")
            k = list(data[pos:pos + m])
            if len(k) != m:
                raise struct.error("short header")
            pos += m
            state_bits, coeff_bits = struct.unpack_from("<BB", data, pos)
            pos += 2
            bounds = []
            for _ in range(dim):
                bounds.append(struct.unpack_from("<dd", data, pos))
                pos += 16
            coeff_bound, payload_bits = struct.unpack_from("<dQ", data, pos)
            pos += 16
        except struct.error as exc:
            raise CodecError(f"truncated header: {exc}") from None
        spec = QuantizationSpec(state_bits, coeff_bits, tuple(bounds), coeff_bound)
        payload = data[pos:]
        msg = cls(dim, m, n_steps, dt, T_local, COMPLEXITY_MODES[mode], k, spec, payload,
                  payload_bits)
        expected = sum(msg.partition_bits())
        if payload_bits != expected:
            raise CodecError(f"header declares {payload_bits} payload bits, layout implies {expected}")
        if 8 * len(payload) < payload_bits:
            raise CodecError(f"truncated payload: expected {payload_bits} bits, "
                             f"got {8 * len(payload)}")
        return msg


def _windows(result):
    """(restart_state, k, coeffs) per window from a result or decoded message."""
    if isinstance(result, LicdsResult):
        return [(p.restart_state, p.k_star, p.model.coeffs) for p in result.partitions]
    return [(p.restart_state, p.k, p.model.coeffs) for p in result.partitions]


def encode(result, spec: QuantizationSpec = QuantizationSpec(), k_max=None) -> EncodedMessage:
    """Quantize restart states and coefficients into one message.

    ``result`` is a :class:`LicdsResult` or a :class:`DecodedMessage`.
    Out-of-range values are clamped and counted in ``clamped``.
    """
    dim, m, n_steps, dt, complexity = _geometry(result)
    bounds = spec.bounds_for(dim)
    coeff_interval = (-spec.coeff_bound, spec.coeff_bound)
    windows = _windows(result)
    writer = _BitWriter()
    clamped = 0
    for state, _, _ in windows:
        if len(state) != dim:
            raise CodecError("restart state dimension does not match the result")
        for v, interval in zip(state, bounds):
            clamped += not (interval[0] <= v <= interval[1])
            writer.write(quantize(v, spec.state_bits, interval), spec.state_bits)
    ks = []
    for _, k, coeffs in windows:
        count = basis_size(dim, k, complexity)
        if coeffs.shape != (dim, count):
            raise CodecError(f"coefficient block {coeffs.shape} does not match ({dim}, {count})")
        if not 1 <= k <= 255:
            raise CodecError("complexity per window must fit in one byte")
        ks.append(int(k))
        for v in coeffs.reshape(-1):
            clamped += not (coeff_interval[0] <= v <= coeff_interval[1])
            writer.write(quantize(v, spec.coeff_bits, coeff_interval), spec.coeff_bits)
    T_local = n_steps * dt / m
    if k_max is None and isinstance(result, LicdsResult) and result.partitions:
        k_max = len(result.partitions[0].errors) or None
    return EncodedMessage(dim, m, n_steps, dt, T_local, complexity, ks, spec,
                          writer.to_bytes(), writer.nbits, clamped, k_max)


def _geometry(result):
    if isinstance(result, LicdsResult):
        traj = result.approx_states
        return traj.dim, len(result.partitions), len(traj) - 1, traj.dt, result.complexity
    return result.dim, len(result.partitions), result.n_steps, result.dt, result.complexity


@dataclass(eq=False)
class DecodedMessage:
    dim: int
    n_steps: int
    dt: float
    complexity: str
    partitions: List[DecodedPartition]
    trajectory: Trajectory


def decode_message(msg: EncodedMessage) -> DecodedMessage:
    if 8 * len(msg.payload) < msg.payload_bits or msg.payload_bits != sum(msg.partition_bits()):
        raise CodecError(f"truncated payload: expected {sum(msg.partition_bits())} bits, "
                         f"got {min(8 * len(msg.payload), msg.payload_bits)}")
    spec = msg.spec
    bounds = spec.bounds_for(msg.dim)
    coeff_interval = (-spec.coeff_bound, spec.coeff_bound)
    reader = _BitReader(msg.payload, msg.payload_bits)
    states = [np.array([dequantize(reader.read(spec.state_bits), spec.state_bits, iv)
                        for iv in bounds]) for _ in range(msg.m)]
    parts = []
    for state, k, count in zip(states, msg.k, msg.coeff_counts):
        flat = [dequantize(reader.read(spec.coeff_bits), spec.coeff_bits, coeff_interval)
                for _ in range(msg.dim * count)]
        model = LocalModel(state, MonomialBasis(msg.dim, count),
                           np.array(flat).reshape(msg.dim, count))
        parts.append(DecodedPartition(state, k, model))
    edges = window_bounds(msg.n_steps, msg.m)
    rows = []
    for j, p in enumerate(parts):
        seg = rk4_states(p.model, p.restart_state, edges[j + 1] - edges[j], msg.dt)
        rows.append(seg if j == len(parts) - 1 else seg[:-1])
    traj = Trajectory(np.concatenate(rows), msg.dt, 0.0)
    return DecodedMessage(msg.dim, msg.n_steps, msg.dt, msg.complexity, parts, traj)


def decode(msg: EncodedMessage) -> Trajectory:
    """Reconstructed trajectory: every window rolled out from its decoded restart state."""
    return decode_message(msg).trajectory


def raw_bits(n_samples: int, dim: int, state_bits: int = 16) -> int:
    return n_samples * dim * state_bits
