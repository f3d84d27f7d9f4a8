import textwrap

import numpy as np
import pytest

from ccasim.cli import shipped_dir
from ccasim.errors import ParseError, ValidationError
from ccasim.scenario import EGO_ID, describe, lane_route, load_scenario

from scenario_cache import SHIPPED

MINIMAL = textwrap.dedent("""\
    [scenario]
    name = "mini"
    duration_s = 5.0
    dt_s = 0.01
    lane_width_m = 3.5

    [bus]
    rate_hz = 10.0
    latency_s = 0.02
    drop_probability = 0.0
    seed = 1

    [ego]
    lane = 0
    x = 0.0
    speed = 10.0
    """)


def _write(tmp_path, text, name="s.toml"):
    path = tmp_path / name
    path.write_text(text)
    return path


@pytest.mark.parametrize("name", SHIPPED)
def test_shipped_scenarios_load(name):
    s = load_scenario(shipped_dir() / f"{name}.toml")
    assert s.name == name
    assert describe(shipped_dir() / f"{name}.toml")[1]


def test_eebl_has_three_vehicles_in_one_lane():
    s = load_scenario(shipped_dir() / "eebl.toml")
    poses = [s.ego.pose] + [r.pose for r in s.remotes]
    assert len(poses) == 3
    assert {round(p.y, 9) for p in poses} == {0.0}


def test_minimal_file(tmp_path):
    s = load_scenario(_write(tmp_path, MINIMAL))
    assert s.remotes == () or len(s.remotes) == 0
    assert s.n_ticks == 500
    assert s.ego.pose.speed == 10.0


def test_negative_duration_is_invalid(tmp_path):
    with pytest.raises(ValidationError) as info:
        load_scenario(_write(tmp_path, MINIMAL.replace("duration_s = 5.0", "duration_s = -1.0")))
    assert any("duration_s" in v for v in info.value.violations)


def test_unknown_key_names_the_key(tmp_path):
    with pytest.raises(ParseError) as info:
        load_scenario(_write(tmp_path, MINIMAL.replace("speed = 10.0", "velocty = 10.0")))
    assert "velocty" in str(info.value)
    assert info.value.field == "ego.velocty"
    assert info.value.line == 16


def test_syntax_error_reports_line(tmp_path):
    with pytest.raises(ParseError) as info:
        load_scenario(_write(tmp_path, MINIMAL + "broken = = 3\n"))
    assert info.value.line is not None


def test_violations_are_collected(tmp_path):
    text = MINIMAL.replace("dt_s = 0.01", "dt_s = 0.5").replace("rate_hz = 10.0", "rate_hz = 0.0")
    with pytest.raises(ValidationError) as info:
        load_scenario(_write(tmp_path, text))
    assert len(info.value.violations) >= 2


def test_overlapping_start_is_invalid(tmp_path):
    text = MINIMAL + textwrap.dedent("""\

        [[remote]]
        id = 1
        behavior = "parked"
        lane = 0
        x = 2.0
        """)
    with pytest.raises(ValidationError):
        load_scenario(_write(tmp_path, text))


def test_unknown_behavior_is_invalid(tmp_path):
    text = MINIMAL + '\n[[remote]]\nid = 1\nbehavior = "teleport"\nlane = 1\nx = 30.0\n'
    with pytest.raises(ValidationError):
        load_scenario(_write(tmp_path, text))


def test_route_file_resolved_next_to_scenario(tmp_path):
    (tmp_path / "r.txt").write_text("\n".join(f"{x} 0.5" for x in range(-20, 200, 5)) + "\n")
    text = MINIMAL.replace("lane = 0\n", 'route_file = "r.txt"\n')
    s = load_scenario(_write(tmp_path, text))
    assert s.ego.pose.y == pytest.approx(0.5)


def test_lane_route_direction():
    east = lane_route(1, 1, 3.5, (0.0, 100.0))
    west = lane_route(1, -1, 3.5, (0.0, 100.0))
    assert np.allclose(east.knots[:, 1], 3.5)
    assert east.knots[0, 0] < east.knots[-1, 0]
    assert west.knots[0, 0] > west.knots[-1, 0]


def test_preset_override():
    s = load_scenario(shipped_dir() / "cca-case1.toml")
    assert s.with_preset("fast").ego.preset.name == "fast"
    with pytest.raises(ValidationError):
        s.with_preset("reckless")
    assert EGO_ID == 0
