import numpy as np
import pytest
from hypothesis import given, strategies as st

from licds import LicdsParams, get_system, integrate, licds
from licds.codec import (
    CodecError,
    DecodedMessage,
    DecodedPartition,
    EncodedMessage,
    QuantizationSpec,
    decode,
    decode_message,
    dequantize,
    encode,
    quantize,
    raw_bits,
)
from licds.experiments import random_polynomial_field
from licds.core import window_bounds
from licds.integrate import Trajectory
from licds.localmodel import LocalModel, MonomialBasis, basis_size


def synthetic(ks, dim=1, n_steps=30, dt=0.01, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    parts = []
    for k in ks:
        state = rng.uniform(-1, 1, size=dim)
        size = basis_size(dim, k)
        coeffs = rng.uniform(-scale, scale, size=(dim, size))
        parts.append(DecodedPartition(state, k, LocalModel(state, MonomialBasis(dim, size), coeffs)))
    traj = Trajectory(np.zeros((n_steps + 1, dim)), dt, 0.0)
    return DecodedMessage(dim, n_steps, dt, "order", parts, traj)


@pytest.fixture(scope="module")
def tanh_result():
    spec = get_system("tanh")
    truth = integrate(spec.dynamics, [2.0], 0.0, 4.0, 0.01)
    return licds(spec.dynamics, truth, LicdsParams(4.0, 0.01, "auto", 8, 5))


@given(st.floats(-50, 50), st.integers(4, 32),
       st.floats(-20, 0, exclude_max=True), st.floats(0.01, 20))
def test_quantizer_step_bound(v, bits, lo, width):
    iv = (lo, lo + width)
    code = quantize(v, bits, iv)
    assert 0 <= code < 2 ** bits
    clamped = min(max(v, iv[0]), iv[1])
    # half a step, plus rounding of lo + (code + 0.5) * step at high bit counts
    slack = 4 * np.finfo(float).eps * max(abs(iv[0]), abs(iv[1]))
    assert abs(dequantize(code, bits, iv) - clamped) <= (iv[1] - iv[0]) / 2 ** bits / 2 + slack


def test_quantizer_examples():
    iv = (-10.0, 10.0)
    assert abs(dequantize(quantize(3.14159, 16, iv), 16, iv) - 3.14159) <= 1.52588e-4
    for bits in (4, 9, 16):
        assert abs(dequantize(quantize(0.0, bits, iv), bits, iv)) <= 20 / 2 ** bits / 2
    levels = [dequantize(c, 4, iv) for c in range(16)]
    assert all(a < b for a, b in zip(levels, levels[1:]))
    assert levels[0] == -10 + 20 / 32 and levels[-1] == 10 - 20 / 32
    assert {quantize(x, 4, iv) for x in np.linspace(-10, 10, 1001)} == set(range(16))


def test_spec_validation():
    with pytest.raises(ValueError):
        QuantizationSpec(state_bits=3)
    with pytest.raises(ValueError):
        QuantizationSpec(coeff_bits=33)
    with pytest.raises(ValueError):
        QuantizationSpec(state_bounds=((1.0, 1.0),))
    with pytest.raises(ValueError):
        QuantizationSpec(coeff_bound=0.0)


def test_bit_arithmetic():
    msg = encode(synthetic([2, 3, 2]), QuantizationSpec(), k_max=8)
    report = msg.bit_report(raw_samples=1000)
    assert msg.payload_bits == 160 and report["partition_bits"] == [48, 64, 48]
    assert report["payload_bits_k_max"] == 432
    assert report["raw_bits"] == 16000 == raw_bits(1000, 1)
    assert report["compression_ratio"] == 100.0
    assert report["total_bits"] == 160 + report["header_bits"]


def test_payload_length_identity():
    for dim, ks in ((1, [1, 4]), (2, [2, 3, 1]), (3, [5])):
        msg = encode(synthetic(ks, dim=dim, scale=0.1))
        assert msg.payload_bits == sum(msg.partition_bits())
        assert len(msg.payload) == -(-msg.payload_bits // 8)


def test_header_is_self_describing():
    msg = encode(synthetic([2, 3, 2], dim=2), QuantizationSpec(8, 12, ((-3, 3), (0, 5)), 4.0))
    back = EncodedMessage.from_bytes(msg.to_bytes())
    assert back.to_bytes() == msg.to_bytes()
    assert (back.dim, back.m, back.k, back.spec) == (2, 3, [2, 3, 2], msg.spec)
    assert back.payload_bits == msg.payload_bits


def test_truncated_payload_reports_counts():
    data = encode(synthetic([2, 3, 2])).to_bytes()
    with pytest.raises(CodecError, match="expected 160 bits, got 152"):
        EncodedMessage.from_bytes(data[:-1])
    with pytest.raises(CodecError, match="truncated header"):
        EncodedMessage.from_bytes(data[:10])
    with pytest.raises(CodecError, match="magic"):
        EncodedMessage.from_bytes(b"XXXX" + data[4:])


def test_zero_coefficients_decode_to_near_constants():
    msg = encode(synthetic([1, 2, 3], dim=2, scale=0.0), QuantizationSpec(coeff_bound=1.0))
    dec = decode_message(msg)
    # the mid-rise grid has no zero level; zeros come back as half a step
    half_step = 2.0 / 2 ** 16 / 2
    edges = window_bounds(msg.n_steps, msg.m)
    for j, p in enumerate(dec.partitions):
        assert np.all(np.abs(p.model.coeffs) == half_step)
        seg = dec.trajectory.states[edges[j]:edges[j + 1]]
        assert np.all(seg[0] == p.restart_state)
        assert np.abs(seg - p.restart_state).max() <= 1.01 * half_step * msg.T_local


def test_decode_is_pure(tanh_result):
    msg = encode(tanh_result)
    a, b = decode(msg), decode(msg)
    assert a.states.tobytes() == b.states.tobytes()


def _random_result(rng):
    dim = int(rng.integers(1, 3))
    f = random_polynomial_field(dim, rng, degree=2, scale=0.5)
    x0 = rng.uniform(-1, 1, size=dim)
    T = float(rng.choice([0.3, 0.5]))
    truth = integrate(f, x0, 0.0, T, 0.01)
    params = LicdsParams(T, 0.01, float(rng.choice([1e-3, 1e-2])), int(rng.integers(1, 4)),
                         int(rng.integers(1, 4)))
    return licds(f, truth, params)


def test_reencode_is_fixed_point():
    rng = np.random.default_rng(2024)
    for _ in range(50):
        result = _random_result(rng)
        first = encode(result)
        second = encode(decode_message(first))
        assert second.to_bytes() == first.to_bytes()


def test_clamping_is_counted():
    msg = encode(synthetic([2], scale=1.0), QuantizationSpec(coeff_bound=0.01))
    assert msg.clamped >= 1
    assert msg.bit_report()["clamped_values"] == msg.clamped


def test_dimension_mismatch():
    with pytest.raises(CodecError):
        encode(synthetic([2], dim=2), QuantizationSpec(state_bounds=((-1, 1),)))


def test_tanh_message(tanh_result):
    msg = encode(tanh_result)
    report = msg.bit_report(raw_samples=len(tanh_result.approx_states))
    assert report["raw_bits"] == 401 * 16
    assert report["compression_ratio"] >= 10
    dev = np.abs(decode(msg).states - tanh_result.approx_states.states).max()
    assert dev <= 1e-2
    assert decode(msg).states.shape == tanh_result.approx_states.states.shape
