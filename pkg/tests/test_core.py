import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tsalab.core import (Architecture, AttackSettings, ConfigError, TSAConfig, derive_rng, dotted_paths,
                         dump_config, from_dict, load_config, parse_override, save_config, set_dotted, to_dict,
                         validate)


def test_validate_rejects_empty_batch():
    with pytest.raises(ConfigError, match="P must be ≥ 1"):
        validate(TSAConfig(P=0))


def test_defaults_accepted():
    cfg = validate(TSAConfig(gamma=0.995))
    assert cfg.gamma == 0.995
    assert cfg.eta == pytest.approx(0.2)
    assert cfg.gamma_tilde == pytest.approx(50.0)
    assert cfg.n_poisoned == 1


def test_fractional_poisoned_count_rejected():
    with pytest.raises(ConfigError, match="rho"):
        validate(TSAConfig(rho=0.5, P=3))


def test_poisoned_count_stored():
    assert validate(TSAConfig(rho=0.25, P=100)).n_poisoned == 25


@pytest.mark.parametrize("updates, field", [
    ({"gamma": 1.0}, "gamma"),
    ({"gamma": 0.0}, "gamma"),
    ({"a_min": 1.0, "a_max": 0.0}, "a_min"),
    ({"rho": 0.0}, "rho"),
    ({"C": -1.0}, "C"),
    ({"eta": 0.0}, "eta"),
    ({"sigma2": 0.0}, "sigma2"),
    ({"arch.kind": "cnn"}, "arch.kind"),
    ({"arch.kind": "nn", "arch.M": 0}, "arch.M"),
    ({"attack.strategy": "rl"}, "attack.strategy"),
    ({"eval_every": 0}, "eval_every"),
])
def test_validation_names_the_field(updates, field):
    with pytest.raises(ConfigError, match=field.replace(".", r"\.")):
        validate(set_dotted(TSAConfig(), updates))


def test_nn_learning_rate_scales_with_width():
    cfg = validate(set_dotted(TSAConfig(), {"arch.kind": "nn", "arch.M": 4}))
    assert cfg.eta == pytest.approx(0.02 * 10 * 2)


def test_clairvoyant_nn_rejected():
    with pytest.raises(ConfigError, match="clairvoyant"):
        validate(set_dotted(TSAConfig(), {"arch.kind": "nn", "attack.strategy": "clairvoyant"}))


def test_sample_specific_flag_selects_strategy():
    assert validate(TSAConfig(sample_specific=True)).strategy == "greedy-sample"


def test_rng_same_triple_same_sequence():
    a = derive_rng(7, 3, "inputs").standard_normal(100)
    b = derive_rng(7, 3, "inputs").standard_normal(100)
    assert np.array_equal(a, b)


def test_rng_purposes_differ():
    a = derive_rng(7, 3, "inputs").standard_normal(100)
    b = derive_rng(7, 3, "mask").standard_normal(100)
    assert not np.array_equal(a, b)


def test_rng_ten_concurrent_streams():
    gens = [derive_rng(0, i, "inputs") for i in range(10)]
    draws = np.array([[g.standard_normal() for g in gens] for _ in range(500)])
    assert len({tuple(draws[:5, i]) for i in range(10)}) == 10
    corr = np.corrcoef(draws.T)
    assert np.max(np.abs(corr - np.eye(10))) < 0.2


def test_unknown_key_is_error():
    with pytest.raises(ConfigError, match="unknown"):
        set_dotted(TSAConfig(), {"nonsense": 1})
    with pytest.raises(ConfigError, match="unknown"):
        from_dict({"attack": {"bogus": 2}})


def test_every_field_has_a_dotted_path():
    paths = dotted_paths()
    assert "attack.strategy" in paths and "arch.M" in paths and "C" in paths
    assert "arch" not in paths


def test_parse_override_reads_yaml_scalars():
    assert parse_override("C=0.5") == ("C", 0.5)
    assert parse_override("attack.calibrate=true") == ("attack.calibrate", True)
    assert parse_override("gamma_tilde=null") == ("gamma_tilde", None)
    with pytest.raises(ConfigError):
        parse_override("C")


@given(
    D=st.integers(1, 50), P=st.integers(1, 200), C=st.floats(0, 100), seed=st.integers(0, 2**64 - 1),
    kind=st.sampled_from(["linear", "erf", "nn"]), strategy=st.sampled_from(["greedy", "constant", "none"]),
    a_const=st.one_of(st.none(), st.floats(-2, 3)),
)
def test_config_round_trip(tmp_path_factory, D, P, C, seed, kind, strategy, a_const):
    cfg = TSAConfig(D=D, P=P, C=C, seed=seed, arch=Architecture(kind, 3),
                    attack=AttackSettings(strategy=strategy, a_const=a_const))
    path = tmp_path_factory.mktemp("cfg") / "c.yaml"
    save_config(cfg, path)
    assert load_config(path) == cfg
    assert from_dict(to_dict(cfg)) == cfg


def test_dump_is_nested_yaml():
    text = dump_config(TSAConfig())
    assert "attack:\n" in text and "  strategy: greedy" in text
