import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from didipose.errors import ConfigError, NonFiniteError, TokenRangeError
from didipose.numerics import Tensor, sum_
from didipose.quantizer import FSQConfig, bound, code_to_index, fsq_quantize, index_to_code, quantize_ste


def mixed_radix_index(code, levels):
    """1 + sum_i (c_i + floor(L_i/2)) * prod_{j<i} L_j written out as a loop."""
    idx, place = 0, 1
    for c, L in zip(code, levels):
        idx += (c + L // 2) * place
        place *= L
    return 1 + idx


def test_codebook_size_is_product_of_levels():
    assert FSQConfig((7, 5, 5, 5, 5)).codebook_size == 4375
    assert FSQConfig((3, 3)).codebook_size == 9


@pytest.mark.parametrize("levels", [(4, 5), (1, 3), (), (5, 2)])
def test_invalid_levels(levels):
    with pytest.raises(ConfigError):
        FSQConfig(levels)


def test_zero_vector_is_central_codeword():
    fsq = FSQConfig((7, 5, 5, 5, 5))
    code, idx = fsq_quantize(np.zeros(5), fsq)
    assert np.array_equal(code, np.zeros(5))
    assert idx == mixed_radix_index([0] * 5, fsq.levels) == 2188


def test_saturation():
    fsq = FSQConfig((7, 5, 5, 5, 5))
    code, _ = fsq_quantize(np.full(5, 50.0), fsq)
    assert np.array_equal(code, [3, 2, 2, 2, 2])
    code, idx = fsq_quantize(np.full(5, -50.0), fsq)
    assert np.array_equal(code, [-3, -2, -2, -2, -2]) and idx == 1


@pytest.mark.parametrize("levels", [(3, 3), (5, 3)])
def test_exhaustive_bijection_small(levels):
    fsq = FSQConfig(levels)
    seen = set()
    for code in itertools.product(*[range(-(L // 2), L // 2 + 1) for L in levels]):
        idx = int(code_to_index(np.array(code), fsq))
        assert idx == mixed_radix_index(code, levels)
        assert tuple(index_to_code(idx, fsq)) == code
        seen.add(idx)
    assert seen == set(range(1, fsq.codebook_size + 1))


def test_full_round_trip_default_levels():
    fsq = FSQConfig((7, 5, 5, 5, 5))
    idx = np.arange(1, 4376)
    assert np.array_equal(code_to_index(index_to_code(idx, fsq), fsq), idx)


def test_index_one_is_lowest_code():
    fsq = FSQConfig((7, 5, 5))
    assert np.array_equal(index_to_code(1, fsq), [-3, -2, -2])


@pytest.mark.parametrize("bad", [0, 4376, -3])
def test_out_of_range_index(bad):
    with pytest.raises(TokenRangeError):
        index_to_code(bad, FSQConfig((7, 5, 5, 5, 5)))


def test_nonfinite_input():
    with pytest.raises(NonFiniteError):
        fsq_quantize(np.array([0.0, np.nan]), FSQConfig((3, 3)))


@given(st.lists(st.integers(-3, 3), min_size=1, max_size=1),
       st.lists(st.integers(-2, 2), min_size=4, max_size=4))
def test_idempotent_at_interior_codeword_centres(first, rest):
    fsq = FSQConfig((7, 5, 5, 5, 5))
    code = np.array(first + rest)
    interior = np.abs(code) < fsq.half
    q = np.where(interior, np.arctanh(np.where(interior, code / fsq.half, 0.0)), 0.0)
    out, _ = fsq_quantize(q, fsq)
    assert np.array_equal(out[interior], code[interior])


def test_straight_through_gradient_equals_bounded_path():
    fsq = FSQConfig((7, 5, 5))
    rng = np.random.default_rng(0)
    q0 = rng.normal(size=(4, 3))
    w = rng.normal(size=(4, 3))
    a = Tensor(q0.copy(), requires_grad=True)
    sum_(quantize_ste(a, fsq) * w).backward()
    b = Tensor(q0.copy(), requires_grad=True)
    sum_(bound(b, fsq) * w).backward()
    assert np.array_equal(a.grad, b.grad)


@given(st.integers(0, 2**31))
def test_quantized_values_on_grid(seed):
    fsq = FSQConfig((7, 5, 5, 5, 5))
    q = np.random.default_rng(seed).normal(size=(10, 5)) * 3
    code, idx = fsq_quantize(q, fsq)
    assert np.all(np.abs(code) <= fsq.half)
    assert np.all((idx >= 1) & (idx <= 4375))
