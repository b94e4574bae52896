import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from advmel.attacks import (
    AttackConfig,
    all_presets,
    apgd_attack,
    cw_attack,
    cw_margin,
    pgd_attack,
    preset_config,
    run_attack,
)
from advmel.encoders import candidate_logits
from advmel.errors import AttackError, ValidationError


def test_presets_match_table():
    pgd_n = preset_config("PGD", "Normal")
    assert (pgd_n.steps, pgd_n.step_size, pgd_n.epsilon, pgd_n.norm) == (20, 2 / 255, 8 / 255, "Linf")
    pgd_s = preset_config("PGD", "Strong")
    assert (pgd_s.steps, pgd_s.step_size, pgd_s.epsilon) == (40, 2 / 225, 0.2)
    apgd_n = preset_config("APGD", "Normal")
    assert (apgd_n.steps, apgd_n.step_size, apgd_n.epsilon) == (20, None, 8 / 255)
    apgd_s = preset_config("APGD", "Strong")
    assert (apgd_s.steps, apgd_s.step_size, apgd_s.epsilon, apgd_s.norm) == (40, None, 0.2, "Linf")
    cw_n = preset_config("CW", "Normal")
    assert (cw_n.steps, cw_n.step_size, cw_n.c, cw_n.kappa, cw_n.epsilon) == (50, 0.01, 20, 0, None)
    cw_s = preset_config("CW", "Strong")
    assert (cw_s.steps, cw_s.step_size, cw_s.c, cw_s.kappa, cw_s.norm) == (75, 0.05, 100, 0, "L2")


def test_preset_aliases_and_keys():
    assert preset_config("cw", "s") == preset_config("CW", "Strong")
    assert [c.key for c in all_presets()] == ["pgd_n", "pgd_s", "apgd_n", "apgd_s", "cw_n", "cw_s"]
    for cfg in all_presets():
        assert AttackConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValidationError):
        preset_config("FGSM", "Normal")
    with pytest.raises(ValidationError):
        preset_config("PGD", "Extreme")


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(method="PGD", tier="Normal", steps=0, norm="Linf", step_size=0.1, epsilon=0.1),
        dict(method="PGD", tier="Normal", steps=3, norm="Linf", epsilon=0.1),
        dict(method="APGD", tier="Normal", steps=3, norm="L2", epsilon=0.1),
        dict(method="CW", tier="Strong", steps=3, norm="L2", step_size=0.1, c=1.0),
    ],
)
def test_config_validation(kwargs):
    with pytest.raises(ValidationError):
        AttackConfig(**kwargs)


@pytest.mark.parametrize(
    "logits, y, kappa, expected",
    [([2, 1], 0, 0.0, 1.0), ([1, 2], 0, 0.0, 0.0), ([1, 2], 0, 0.5, -0.5)],
)
def test_cw_margin_examples(logits, y, kappa, expected):
    assert cw_margin(np.array(logits, float), y, kappa) == expected


def test_cw_margin_bad_label():
    with pytest.raises(IndexError):
        cw_margin(np.zeros(3), 5, 0.0)


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=8), st.data(), st.floats(0.0, 2.0))
def test_cw_margin_sign_properties(logits, data, kappa):
    z = np.array(logits)
    y = data.draw(st.integers(0, len(z) - 1))
    m = cw_margin(z, y, kappa)
    assert m >= -kappa
    if int(np.argmax(z)) == y:
        assert m >= 0
    if kappa > 0 and m < 0:
        assert int(np.argmax(z)) != y or np.sum(z == z[y]) > 1


def test_zero_gradient_fixed_point(small):
    model, protos, names = small
    cands = [names[0]] * 3
    for attack, cfg in ((pgd_attack, preset_config("PGD", "N")), (apgd_attack, preset_config("APGD", "N"))):
        res = attack(model, protos[0], cands, 0, cfg)
        assert not np.any(res.delta)
        assert not res.success


def test_pgd_trace_and_bounds(small):
    model, protos, names = small
    cfg = preset_config("PGD", "Normal")
    res = pgd_attack(model, protos[3], names, 3, cfg)
    assert len(res.loss_trace) == cfg.steps
    assert res.linf_delta <= cfg.epsilon + 1e-12
    assert 0.0 <= res.adversarial_image.min() and res.adversarial_image.max() <= 1.0
    np.testing.assert_array_equal(res.adversarial_image, np.clip(protos[3] + res.delta, 0, 1))


def test_apgd_best_trace_non_decreasing(small):
    model, protos, names = small
    res = apgd_attack(model, protos[1], names, 1, preset_config("APGD", "Strong"))
    assert all(b >= a for a, b in zip(res.loss_trace, res.loss_trace[1:]))
    assert res.final_loss == max(res.loss_trace)
    assert res.linf_delta <= 0.2 + 1e-12


def test_cw_already_misclassified(small):
    model, protos, names = small
    # prototype 0 with gold index pointing at another entity is misclassified from the start
    res = cw_attack(model, protos[0], names, 1, preset_config("CW", "Normal"))
    assert res.success and res.l2_delta == 0.0 and not np.any(res.delta)


def test_cw_first_objective_is_scaled_margin(small):
    model, protos, names = small
    cfg = preset_config("CW", "Normal")
    res = cw_attack(model, protos[2], names, 2, cfg)
    clean = candidate_logits(model, protos[2], names)
    assert res.loss_trace[0] == cfg.c * cw_margin(clean, 2, cfg.kappa)
    assert len(res.loss_trace) == cfg.steps


def test_cw_success_flag_matches_argmax(small):
    model, protos, names = small
    for k in range(len(names)):
        res = cw_attack(model, protos[k], names, k, preset_config("CW", "Strong"))
        pred = int(np.argmax(candidate_logits(model, res.adversarial_image, names)))
        assert res.success == (pred != k)


def test_attacks_are_deterministic(small):
    model, protos, names = small
    for cfg in all_presets():
        a = run_attack(model, protos[4], names, 4, cfg)
        b = run_attack(model, protos[4], names, 4, cfg)
        np.testing.assert_array_equal(a.delta, b.delta)
        assert a.loss_trace == b.loss_trace and a.success == b.success


def test_wrong_config_and_bad_inputs(small):
    model, protos, names = small
    with pytest.raises(ValidationError):
        pgd_attack(model, protos[0], names, 0, preset_config("CW", "N"))
    with pytest.raises(ValidationError):
        pgd_attack(model, protos[0] + 1.0, names, 0, preset_config("PGD", "N"))
    with pytest.raises(IndexError):
        pgd_attack(model, protos[0], names, 99, preset_config("PGD", "N"))


def test_domain_error_carries_step(small):
    model, _, names = small
    with pytest.raises(AttackError) as info:
        pgd_attack(model, np.zeros(model.image_shape), names, 0, preset_config("PGD", "N"))
    assert info.value.step == 0


def test_pgd_respects_box_near_edges(small):
    model, _, names = small
    x = np.zeros(model.image_shape)
    x[0, 0, 0] = 1.0
    x[1] = 0.999
    res = pgd_attack(model, x, names, 0, preset_config("PGD", "S"))
    assert 0.0 <= res.adversarial_image.min() and res.adversarial_image.max() <= 1.0
    assert res.linf_delta <= 0.2 + 1e-12
