import copy
import json

import pytest

from bridgesim import scenario
from bridgesim.errors import ScenarioError

BASE = json.loads(scenario.builtin_path("vn1_vn2").read_text())


def mutated(fn):
    data = copy.deepcopy(BASE)
    fn(data)
    return data


RULE = {"bridge": 3, "port": 11, "match": {"selector": 1}, "action": {"map_to_bvid": 103}}

BAD = [
    (lambda d: d.pop("bridges"), "bridges"),
    (lambda d: d["links"][0].update(a=[99, 1]), "links[0].a"),
    (lambda d: d["links"][0].update(metric=True), "links[0].metric"),
    (lambda d: d["hosts"][0].update(mac="zz"), "hosts[0].mac"),
    (lambda d: d["services"][1].update(path=[3, 12, 4]), "services[1].path"),
    (lambda d: d["services"][0]["attachments"][0].update(svid=5000), "services[0].attachments[0].svid"),
    (lambda d: d["services"][0].update(type="Ring"), "services[0].type"),
    (lambda d: d["services"][1].update(bvid=101), "services[1].bvid"),
    (lambda d: d["timeline"][0].update(action="explode"), "timeline[0].action"),
    (lambda d: d["timeline"][0].update(host="nobody"), "timeline[0].host"),
    (lambda d: d["assertions"][0].update(type="nope"), "assertions[0].type"),
    (lambda d: d["msti"].update(ext=[101]), "msti.ext[0]"),
    (lambda d: d.update(hash_ranges=[{"bridge": 3, "port": 11, "vids": [101]}]), "hash_ranges[0].vids"),
    (lambda d: d.update(flow_rules=[{**RULE, "priority": 1}, {**RULE, "priority": 1}]), "flow_rules[1].priority"),
]


@pytest.mark.parametrize("fn,field", BAD)
def test_invalid_inputs_name_the_field(fn, field):
    with pytest.raises(ScenarioError) as info:
        scenario.validate(mutated(fn))
    assert info.value.field == field


def test_tree_cycle_diagnostic():
    data = mutated(lambda d: d["services"][0].update(
        tree=[[1, 11], [11, 12], [12, 2], [11, 3], [3, 13], [13, 12]], bvid=103))
    with pytest.raises(ScenarioError, match="CycleRefused"):
        scenario.validate(data)


def test_json_syntax_error_has_position():
    with pytest.raises(ScenarioError) as info:
        scenario.load_text('{"name": "x",\n  oops}', "f.json")
    assert info.value.field == "f.json:2:3"


def test_missing_file():
    with pytest.raises(ScenarioError, match="cannot read"):
        scenario.load("/nonexistent/s.json")


@pytest.mark.parametrize("name", scenario.BUILTINS)
def test_builtins_validate(name):
    assert scenario.load(name).name == name


@pytest.mark.parametrize("name", ["vn1_vn2", "vm_migration", "protection_switch"])
def test_builtins_pass(name):
    result = scenario.run(scenario.load(name))
    assert result.ok, "\n".join(result.report())


def test_failed_assertion_is_reported():
    data = mutated(lambda d: d["assertions"].append({"type": "path", "label": "vn2-fwd", "host": "v4",
                                                      "expect": [3, 11, 12, 4]}))
    result = scenario.run(scenario.validate(data))
    assert not result.ok
    assert result.report()[-2].startswith("FAIL [8] path label=vn2-fwd expected path=[3, 11, 12, 4]")


def test_runtime_errors_are_collected():
    data = mutated(lambda d: d["timeline"].extend([{"at": 0.8, "action": "teardown", "service": "VN2"}] * 2))
    result = scenario.run(scenario.validate(data))
    assert not result.ok and "UnknownBinding" in result.errors[0]


def test_flow_rules_and_hash_ranges_apply():
    data = mutated(lambda d: (
        d.update(flow_rules=[{**RULE, "priority": 5}],
                 hash_ranges=[{"bridge": 3, "port": 11, "vids": [103]}]),
        d["services"][1].update(flow_paths=[{"bvid": 103, "path": [3, 11, 14, 4]}]),
        d["timeline"].append({"at": 0.8, "action": "inject", "host": "v3", "dst": "v4", "svid": 22,
                              "selector": 1, "label": "steered"}),
        d["assertions"].append({"type": "path", "label": "steered", "host": "v4", "expect": [3, 11, 14, 4]}),
    ))
    result = scenario.run(scenario.validate(data))
    assert result.ok, "\n".join(result.report())
