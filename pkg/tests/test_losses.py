"""Tests for the contrastive, KL and reconstruction terms and their combination."""
import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

import math

import numpy as np
import pytest

from superinfo import info
from superinfo import tensor as T
from superinfo.config import LossWeights, ModelSpec
from superinfo.losses import (
    LossBreakdown, LossError, compute_breakdown, gaussian_kl, infonce_estimate,
    linear_gaussian_kl_bound, monte_carlo_kl, nt_xent, recon_loss, superinfo_total,
)
from superinfo.models import init_bundle
from superinfo.rng import Rng
from superinfo.tensor import ShapeError, Tensor, finite_diff_check

TINY = ModelSpec(input_dim=6, encoder_widths=[8], repr_dim=5, proj_dim=3,
                 decoder_widths=[7])


def make_bundle(seed=0):
    return init_bundle(Rng(seed), TINY, 'f64')


def make_views(seed=1, n=4):
    rng = Rng(seed)
    return Tensor(rng.normal((n, 6))), Tensor(rng.normal((n, 6)))


class TestNtXent:
    def test_all_equal_embeddings(self):
        z = T.ones((2, 3))
        assert abs(nt_xent(z, z).item() - math.log(3.0)) <= 1e-9

    def test_all_equal_larger_batch(self):
        z = T.ones((5, 2))
        assert abs(nt_xent(z, z, tau=0.1).item() - math.log(9.0)) <= 1e-9

    def test_hand_computed_pair(self):
        # positives have cosine 1, negatives cosine -1
        z = T.tensor([[1.0, 0.0], [-1.0, 0.0]])
        expected = -math.log(math.exp(2) / (math.exp(2) + 2 * math.exp(-2)))
        value = nt_xent(z, z, tau=0.5).item()
        assert abs(value - expected) <= 1e-9
        assert abs(value - 0.035972) <= 1e-5

    def test_scale_invariant(self):
        a, b = make_views()
        assert abs(nt_xent(a, b).item() - nt_xent(T.scale(a, 3.0), b).item()) <= 1e-9

    def test_needs_two_pairs(self):
        z = T.ones((1, 3))
        with pytest.raises(LossError):
            nt_xent(z, z)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nt_xent(T.ones((2, 3)), T.ones((2, 4)))

    def test_implied_mi_never_exceeds_log_n(self):
        root = Rng(21)
        for case in range(50):
            rng = root.substream(str(case))
            n = int(rng.integers(1, 15)[0]) + 2
            p = int(rng.integers(1, 6)[0]) + 1
            z1 = Tensor(rng.normal((n, p)))
            noise = float(rng.uniform(1, 0.01, 2.0)[0])
            z2 = T.add(z1, Tensor(rng.normal((n, p), std=noise)))
            loss = nt_xent(z1, z2, tau=float(rng.uniform(1, 0.05, 1.0)[0])).item()
            assert loss >= 0.0
            assert infonce_estimate(loss, n) <= math.log(n)

    def test_infonce_estimate(self):
        assert abs(infonce_estimate(math.log(3.0), 3)) < 1e-15


class TestGaussianKl:
    def test_standard_normal(self):
        assert gaussian_kl(T.zeros((3, 4)), T.zeros((3, 4))).item() == 0.0

    def test_unit_mean(self):
        assert abs(gaussian_kl(T.ones((1, 1)), T.zeros((1, 1))).item() - 0.5) < 1e-12

    def test_variance_e(self):
        value = gaussian_kl(T.zeros((1, 1)), T.ones((1, 1))).item()
        assert abs(value - 0.5 * (math.e - 2.0)) < 1e-12

    def test_multi_dim_matches_closed_form(self):
        rng = Rng(12)
        mu, logvar = rng.normal((6, 5)), rng.uniform((6, 5), -1.0, 1.0)
        expected = -0.5 / 6 * np.sum(1.0 + logvar - mu ** 2 - np.exp(logvar))
        value = gaussian_kl(T.tensor(mu), T.tensor(logvar)).item()
        assert abs(value - expected) <= 1e-10

    def test_multi_dim_finite_difference(self):
        rng = Rng(13)
        mu = T.rng_normal(rng, (4, 3), requires_grad=True)
        logvar = T.rng_uniform(rng, (4, 3), -1.0, 1.0, requires_grad=True)
        assert finite_diff_check(lambda: gaussian_kl(mu, logvar), [mu, logvar],
                                 denom_floor=1e-2) <= 1e-6

    def test_value_is_zero_dim(self):
        assert gaussian_kl(T.zeros((2, 4)), T.zeros((2, 4))).shape == ()

    def test_matches_monte_carlo(self):
        closed = gaussian_kl(T.tensor([[1.0]]), T.tensor([[math.log(1.5)]])).item()
        assert abs(closed - monte_carlo_kl(Rng(0), 1.0, 1.5, 1_000_000)) <= 1e-2

    def test_monte_carlo_rejects_bad_variance(self):
        with pytest.raises(LossError):
            monte_carlo_kl(Rng(0), 0.0, 0.0, 10)

    def test_linear_gaussian_bound_dominates_mi(self):
        rng = Rng(5)
        for _ in range(20):
            w = float(rng.uniform(1, -3.0, 3.0)[0])
            s = float(rng.uniform(1, 0.2, 2.0)[0])
            assert linear_gaussian_kl_bound(w, s) >= info.gaussian_linear_mi(w, s) - 1e-6


class TestRecon:
    def test_exact_reconstruction(self):
        v = T.tensor([[1.0, 2.0]])
        assert recon_loss(v, v).item() == 0.0

    def test_unit_difference(self):
        assert recon_loss(T.tensor([[1.0, 0.0]]), T.zeros((1, 2))).item() == 1.0

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            recon_loss(T.zeros((2, 3)), T.zeros((2, 2)))


class TestCombination:
    def test_zero_weights_reduce_to_contrastive(self):
        weights = LossWeights(lambda1=0, lambda2=0, lambda3=0, lambda4=0)
        a, b = make_views()
        out = compute_breakdown(make_bundle(), a, b, weights)
        assert out.l_total.item() == out.l_cl.item()

    def test_float_parts_with_default_weights(self):
        out = superinfo_total((1.0, 2.0, 2.0, 3.0, 3.0), LossWeights.recommended())
        assert abs(out.l_total - 1.64) < 1e-12

    def test_wrong_part_count(self):
        with pytest.raises(LossError):
            superinfo_total((1.0, 2.0), LossWeights())

    def test_breakdown_total_recombines(self):
        a, b = make_views()
        out = compute_breakdown(make_bundle(), a, b, LossWeights())
        again = superinfo_total(LossBreakdown(*[p.item() for p in out.parts()]), LossWeights())
        assert abs(out.l_total.item() - again.l_total) <= 1e-9

    def test_cross_and_self_targets_differ(self):
        a, b = make_views()
        cross = compute_breakdown(make_bundle(), a, b, LossWeights(), 'cross')
        own = compute_breakdown(make_bundle(), a, b, LossWeights(), 'self')
        assert cross.l_cl.item() == own.l_cl.item()
        assert cross.l_re_1.item() != own.l_re_1.item()

    def test_unknown_recon_target(self):
        a, b = make_views()
        with pytest.raises(LossError):
            compute_breakdown(make_bundle(), a, b, LossWeights(), 'both')

    def test_to_dict_fields(self):
        a, b = make_views()
        d = compute_breakdown(make_bundle(), a, b, LossWeights()).to_dict()
        assert list(d) == ['l_cl', 'l_kl_1', 'l_kl_2', 'l_re_1', 'l_re_2', 'l_total']
        assert all(math.isfinite(v) for v in d.values())


class TestGradients:
    """Finite-difference checks of every component on a 4-sample batch (f64)."""

    @pytest.mark.parametrize('component', ['l_cl', 'l_kl_1', 'l_kl_2', 'l_re_1', 'l_re_2',
                                           'l_total'])
    def test_component(self, component):
        bundle = make_bundle()
        a, b = make_views()

        def fn():
            return getattr(compute_breakdown(bundle, a, b, LossWeights()), component)

        err = finite_diff_check(fn, bundle.parameters(), denom_floor=1e-2)
        assert err <= 1e-5

    def test_projection_inputs(self):
        rng = Rng(4)
        z1 = T.rng_normal(rng, (4, 3), requires_grad=True)
        z2 = T.rng_normal(rng, (4, 3), requires_grad=True)
        assert finite_diff_check(lambda: nt_xent(z1, z2), [z1, z2], denom_floor=1e-2) <= 1e-5
