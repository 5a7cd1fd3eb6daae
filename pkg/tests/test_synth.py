import numpy as np
import pytest

from osdelta.errors import ArgumentError
from osdelta.linalg import truncated_svd
from osdelta.synth import planted_layer, planted_model

from oracles import singular_values_oracle


def test_exact_rank_without_spikes_or_noise():
    lay = planted_layer(np.random.default_rng(0), 60, 50, true_rank=5, spike_frac=0.0, noise=0.0)
    sv = singular_values_oracle(lay.delta)
    assert sv[4] > 1e-3 * sv[0]
    assert np.all(sv[5:] <= 1e-5 * sv[0])


def test_planted_rank_visible_as_spectrum_gap():
    lay = planted_layer(np.random.default_rng(1), 128, 96, true_rank=6, spike_frac=0.0, noise=0.01)
    s = truncated_svd(lay.delta, 12).singular_values
    gaps = s[:-1] / s[1:]
    assert int(np.argmax(gaps)) + 1 == 6


def test_seed_determinism():
    a = planted_model(5, 2, 16, 12)
    b = planted_model(5, 2, 16, 12)
    for role in a:
        for (_, x), (_, y) in zip(a[role], b[role]):
            assert x.tobytes() == y.tobytes()


def test_importance_is_gradient_times_weights():
    lay = planted_layer(np.random.default_rng(2), 10, 8)
    np.testing.assert_array_equal(lay.importance, np.abs(lay.gradient * lay.finetuned))


@pytest.mark.parametrize("kw", [dict(n=0, d=4), dict(n=4, d=4, true_rank=5),
                                dict(n=4, d=4, spike_frac=2.0)])
def test_degenerate_arguments(kw):
    with pytest.raises(ArgumentError):
        planted_layer(np.random.default_rng(0), **kw)
