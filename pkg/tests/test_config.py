import dataclasses

import pytest
from hypothesis import given
from hypothesis import strategies as st

from controlg.config import (
    ControllerConfig,
    GraphConfig,
    ScheduleConfig,
    SimConfig,
    TestbedConfig,
    dump_config,
    loads_config,
    parse_config,
    parse_profile,
)
from controlg.errors import ConfigError


def test_minimal_config_defaults(tmp_path):
    path = tmp_path / "empty.ini"
    path.write_text("")
    cfg = parse_config(path)
    assert cfg == SimConfig()
    assert cfg.controller.k_p == 1.0 and cfg.controller.eps_explore == 0.05
    assert cfg.planner.delta == 0.05 and cfg.difficulty.beta == 0.25
    assert cfg.run.eps_stab == cfg.difficulty.eps_stab == 1e-12


def test_missing_file():
    with pytest.raises(ConfigError, match="not found"):
        parse_config("/nonexistent/cfg.ini")


def test_negative_gain_names_field():
    with pytest.raises(ConfigError, match=r"controller\.k_p.*nonnegative") as info:
        loads_config("[controller]\nk_p = -1\n")
    assert info.value.field == "controller.k_p"


def test_unknown_key_and_section_have_line_numbers():
    with pytest.raises(ConfigError, match=r"cfg:3: unknown key schedule.bogus"):
        loads_config("[schedule]\nT = 2\nbogus = 1\n", "cfg")
    with pytest.raises(ConfigError, match="unknown section"):
        loads_config("[nope]\nx = 1\n")
    with pytest.raises(ConfigError, match=r"cfg:2: schedule.T: cannot parse"):
        loads_config("[schedule]\nT = two\n", "cfg")
    with pytest.raises(ConfigError):
        loads_config("not an ini file")
    # eps_stab is configured once, under [run]
    with pytest.raises(ConfigError, match="unknown key difficulty.eps_stab"):
        loads_config("[difficulty]\neps_stab = 1e-9\n")


@pytest.mark.parametrize(
    "text",
    [
        "[schedule]\nT = 0\n",
        "[schedule]\neta = 0\n",
        "[schedule]\npolicy = greedy\n",
        "[graph]\ntopology = torus\n",
        "[graph]\ntopology = file\n",
        "[testbed]\nprofiles = lowpass\n",
        "[testbed]\nprofiles = band:1.0:0.5\n",
        "[testbed]\nprofiles = lowpass:3\n",
        "[testbed]\nK = 3\nprofiles = flat, flat\n",
        "[testbed]\nK = 2\ntarget_angles = 0, 90, 180\n",
        "[controller]\neps_explore = 1\n",
        "[controller]\nk_i = 0.1, 0.2\n",
        "[planner]\nf_min = 1.5\n",
        "[difficulty]\nrho = 2\n",
        "[run]\nseed = -1\n",
    ],
)
def test_invalid_values_rejected(text):
    with pytest.raises(ConfigError):
        loads_config(text)


def test_lists_comments_and_profiles():
    cfg = loads_config(
        "[testbed]\nK = 2  # two tasks\nprofiles = lowpass:0.7, highpass:1.3\ntarget_angles = 0, 150\n"
        "[controller]\nk_i = 0.1, 0.3 ; per task\n"
    )
    assert cfg.testbed.profiles == ("lowpass:0.7", "highpass:1.3")
    assert cfg.testbed.target_angles == (0.0, 150.0)
    assert cfg.controller.k_i == (0.1, 0.3)
    assert parse_profile("band:0.2:1.1") == ("band", (0.2, 1.1))


def test_task_expansion():
    tb = TestbedConfig(K=3)
    assert tb.task_profiles() == ["flat"] * 3
    assert tb.task_angles() == [0.0, 90.0, 180.0]
    assert TestbedConfig(K=1).task_angles() == [0.0]


def test_overrides():
    cfg = SimConfig().with_overrides(seed=4, policy="max_deficit")
    assert cfg.seed == 4 and cfg.policy.value == "max_deficit"
    with pytest.raises(ConfigError, match="schedule.policy"):
        SimConfig().with_overrides(policy="nope")
    with pytest.raises(ConfigError, match="run.seed"):
        SimConfig().with_overrides(seed=-3)


def test_round_trip_example():
    cfg = SimConfig(
        graph=GraphConfig(topology="erdos_renyi", n=50, p=0.123456789),
        testbed=TestbedConfig(K=2, profiles=("band:0.1:0.9", "flat"), target_angles=(10.0, 200.5)),
        schedule=ScheduleConfig(policy="iid_from_plan", eta=0.1 + 0.2),
        controller=ControllerConfig(k_p=(0.5, 1.5)),
    )
    again = loads_config(dump_config(cfg))
    assert again == cfg
    assert dump_config(again) == dump_config(cfg)


finite = st.floats(0.0, 10.0, allow_nan=False)


@given(
    seed=st.integers(0, 2**31),
    n=st.integers(3, 200),
    eta=st.floats(1e-6, 5.0),
    K=st.integers(1, 4),
    kp=finite,
    delta=st.floats(1e-6, 1.0),
    policy=st.sampled_from(["controlg", "max_deficit", "random", "round_robin", "iid_from_plan"]),
)
def test_property_round_trip(seed, n, eta, K, kp, delta, policy):
    cfg = loads_config(
        f"[graph]\nn = {n}\n[testbed]\nK = {K}\n[schedule]\neta = {eta!r}\npolicy = {policy}\n"
        f"[controller]\nk_p = {kp!r}\n[planner]\ndelta = {delta!r}\n[run]\nseed = {seed}\n"
    )
    assert loads_config(dump_config(cfg)) == cfg


def test_sections_cover_dataclasses():
    out = SimConfig().to_dict()
    assert set(out) == {"graph", "testbed", "schedule", "difficulty", "planner", "controller", "run"}
    assert "eps_stab" not in out["difficulty"] and "eps_stab" in out["run"]
    assert set(out["schedule"]) == {f.name for f in dataclasses.fields(ScheduleConfig)}
