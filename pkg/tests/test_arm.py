import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spiralarm.arm import (
    ArmGeometry,
    ArmParameters,
    ArmValidationError,
    build_arm,
    damping_from_ratio,
    init_kv,
    load_params,
    params_from_dict,
    params_to_dict,
    perturb_parameters,
    save_params,
    scaled_stiffness,
    straight_tendon_length,
)


class TestScaledStiffness:
    def test_base_joint_is_unscaled(self):
        assert scaled_stiffness(1.0, 0.5, 1) == 1.0

    def test_third_joint(self):
        assert scaled_stiffness(2.0, 0.9, 3) == pytest.approx(1.062882, rel=0, abs=1e-12)

    def test_tip_joint_18_segments(self):
        # 0.85**51, frozen from arbitrary-precision arithmetic
        assert scaled_stiffness(1.0, 0.85, 18) == pytest.approx(
            2.5139996415579442e-04, rel=1e-13)

    @pytest.mark.parametrize("K0,alpha,i", [
        (1.0, 0.5, 0), (1.0, 0.5, -3), (1.0, 1.01, 2), (1.0, 0.0, 2),
        (-1.0, 0.5, 2), (0.0, 0.5, 2),
    ])
    def test_domain_errors(self, K0, alpha, i):
        with pytest.raises(ValueError):
            scaled_stiffness(K0, alpha, i)


class TestDampingFromRatio:
    def test_critical(self):
        assert damping_from_ratio(1.0, 4.0, 1.0) == 4.0

    def test_zero_ratio(self):
        assert damping_from_ratio(0.0, 7.0, 3.0) == 0.0

    def test_numeric(self):
        # 2 * 0.3 * sqrt(1.0629 * 0.02), frozen
        assert damping_from_ratio(0.3, 1.0629, 0.02) == pytest.approx(
            0.08748074073760464, rel=1e-13)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            damping_from_ratio(0.3, -1.0, 0.02)
        with pytest.raises(ValueError):
            damping_from_ratio(-0.1, 1.0, 0.02)


class TestInitKv:
    @pytest.mark.parametrize("kp,m,expect", [
        (100.0, 1.0, 20.0), (1.0, 1.0, 2.0), (400.0, 0.25, 20.0),
    ])
    def test_values(self, kp, m, expect):
        assert init_kv(kp, m) == pytest.approx(expect, rel=1e-14)

    def test_domain_errors(self):
        with pytest.raises(ValueError):
            init_kv(0.0, 1.0)
        with pytest.raises(ValueError):
            init_kv(100.0, -1.0)


class TestBuildArm:
    def test_default_shapes(self):
        model = build_arm(ArmGeometry(), ArmParameters())
        assert model.n_segments == 18
        assert model.n_coords == 36
        assert model.K.shape == (18,)
        assert model.theta0.shape == (36,)

    def test_two_segment_scaling_law(self):
        geo = ArmGeometry(n_segments=2, alpha=0.5)
        model = build_arm(geo, ArmParameters(K0=1.0))
        assert model.K[0] == 1.0
        assert model.K[1] == pytest.approx(0.125, rel=1e-14)

    def test_validation_lists_every_violation(self):
        geo = ArmGeometry(n_segments=1, alpha=1.01, L0=-1.0)
        with pytest.raises(ArmValidationError) as err:
            build_arm(geo, ArmParameters(K0=-1.0))
        text = str(err.value)
        assert "n_segments" in text
        assert "alpha" in text
        assert "L0" in text
        assert "K0" in text

    def test_total_length_geometric_series(self):
        geo = ArmGeometry(n_segments=18)
        expect = geo.L0 * (1 - geo.alpha**18) / (1 - geo.alpha)
        assert build_arm(geo, ArmParameters()).total_length == pytest.approx(
            expect, rel=1e-12)

    def test_segment_masses_follow_cubic_taper(self):
        geo = ArmGeometry(n_segments=5, alpha=0.8, m0=0.02)
        model = build_arm(geo, ArmParameters())
        for i in range(5):
            assert model.masses[i] == pytest.approx(0.02 * 0.8 ** (3 * i), rel=1e-12)

    @given(alpha=st.floats(0.5, 0.95), K0=st.floats(1e-3, 10.0),
           zeta=st.floats(0.01, 2.0))
    @settings(max_examples=25, deadline=None)
    def test_monotone_decrease_along_arm(self, alpha, K0, zeta):
        geo = ArmGeometry(n_segments=6, alpha=alpha)
        model = build_arm(geo, ArmParameters(K0=K0, zeta=zeta))
        assert np.all(np.diff(model.K) < 0)
        assert np.all(np.diff(model.D) < 0)

    def test_damping_consistency_with_formula(self, desk_model):
        for i in range(desk_model.n_segments):
            expect = damping_from_ratio(
                desk_model.params.zeta,
                scaled_stiffness(desk_model.params.K0,
                                 desk_model.geometry.alpha, i + 1),
                desk_model.masses[i])
            assert abs(desk_model.D[i] - expect) <= 1e-12 * abs(expect)

    def test_model_arrays_immutable(self, desk_model):
        with pytest.raises(ValueError):
            desk_model.K[0] = 99.0


class TestParameterFile:
    def test_round_trip_bit_exact(self, tmp_path):
        geo = ArmGeometry(n_segments=7, L0=0.123456789012345,
                          r0=0.0198765432109876, alpha=0.8712345678901234,
                          m0=0.0123456789012345)
        params = ArmParameters(
            K0=0.0456789012345678, zeta=0.1712345678901234,
            mu_t=0.0912345678901234, kp=512.345678901234,
            kv=9.87654321098765, F_range=41.2345678901234,
            tau_m=0.0512345678901234,
            stiffness_multipliers=tuple(1.0 + 0.01 * i for i in range(7)),
            damping_multipliers=tuple(1.0 - 0.01 * i for i in range(7)),
        )
        path = tmp_path / "params.json"
        save_params(path, geo, params, seed=42)
        geo2, params2 = load_params(path)
        assert geo2 == geo
        assert params2 == params

    @given(K0=st.floats(1e-6, 1e3, allow_nan=False),
           zeta=st.floats(1e-6, 10, allow_nan=False),
           tau=st.floats(1e-6, 10, allow_nan=False))
    @settings(max_examples=25, deadline=None)
    def test_round_trip_property(self, tmp_path_factory, K0, zeta, tau):
        doc = params_to_dict(ArmGeometry(n_segments=3),
                             ArmParameters(K0=K0, zeta=zeta, tau_m=tau))
        geo2, params2 = params_from_dict(json.loads(json.dumps(doc)))
        assert params2.K0 == K0
        assert params2.zeta == zeta
        assert params2.tau_m == tau

    def test_file_schema_sections(self, tmp_path):
        path = tmp_path / "p.json"
        save_params(path, ArmGeometry(n_segments=4), ArmParameters(), seed=7)
        doc = json.loads(path.read_text())
        assert set(doc) == {"geometry", "stiffness", "damping", "control", "meta"}
        assert set(doc["geometry"]) == {"n_segments", "L0", "r0", "alpha", "m0"}
        assert set(doc["stiffness"]) == {"K0", "multipliers"}
        assert set(doc["damping"]) == {"zeta", "multipliers", "mu_t"}
        assert set(doc["control"]) == {"kp", "kv", "F_range", "tau_m"}
        assert doc["meta"] == {"version": 1, "seed": 7}
        assert len(doc["stiffness"]["multipliers"]) == 4


class TestPerturb:
    def test_seeded_and_bounded(self):
        p = ArmParameters()
        a = perturb_parameters(p, seed=3)
        b = perturb_parameters(p, seed=3)
        c = perturb_parameters(p, seed=4)
        assert a == b
        assert a != c
        for name in ("K0", "zeta", "mu_t", "kp", "kv", "F_range", "tau_m"):
            ratio = getattr(a, name) / getattr(p, name)
            assert 0.3 <= ratio <= 3.0


def test_straight_tendon_length_close_to_backbone():
    # anchors are collinear on the cone slant; the slant exceeds the
    # backbone by the taper angle factor only (~0.1% here)
    geo = ArmGeometry(n_segments=8)
    slant = straight_tendon_length(geo)
    backbone = geo.total_length
    assert slant > backbone
    assert slant == pytest.approx(backbone, rel=1e-3)
