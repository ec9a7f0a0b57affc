import copy
import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from reachstep.specfile import FIXTURES, SpecError, fixture_path, load_schema, load_spec

ROOT = Path(__file__).resolve().parents[1]
REQUIRED = ("state_vars", "inputs", "f", "g", "outputs", "psi", "phi")


def doc(name="dubins"):
    return json.loads(fixture_path(name).read_text())


def test_packaged_schema_matches_repository_copy():
    assert json.loads((ROOT / "schemas" / "system-spec.v1.json").read_text()) == load_schema()


@pytest.mark.parametrize("name", FIXTURES)
def test_fixtures_load(name):
    s = load_spec(fixture_path(name))
    assert s.name == name
    assert s.system.m == 2 and len(s.output_box) == 2
    assert len(s.sha256) == 64


def test_hash_tracks_file_bytes(tmp_path):
    p = tmp_path / "d.json"
    p.write_text(json.dumps(doc()))
    a = load_spec(p).sha256
    p.write_text(json.dumps(doc(), indent=4))
    assert load_spec(p).sha256 != a


@given(st.sampled_from(REQUIRED))
@settings(max_examples=len(REQUIRED) * 2, deadline=None)
def test_missing_required_field_rejected(key):
    d = doc()
    del d[key]
    with pytest.raises(SpecError) as exc:
        load_spec(d)
    assert key in str(exc.value)


@given(st.sampled_from(("lo", "hi", "name")), st.integers(0, 3))
@settings(max_examples=12, deadline=None)
def test_missing_nested_field_rejected(key, idx):
    d = doc()
    del d["state_vars"][idx][key]
    with pytest.raises(SpecError) as exc:
        load_spec(d)
    assert exc.value.location == f"/state_vars/{idx}"


def test_bad_expression_located():
    d = doc()
    d["f"][2] = "x1 + * x2"
    with pytest.raises(SpecError) as exc:
        load_spec(d)
    assert exc.value.location == "/f/2"


def test_unknown_identifier_located():
    d = doc()
    d["g"][3][1] = "zeta"
    with pytest.raises(SpecError) as exc:
        load_spec(d)
    assert exc.value.location == "/g/3/1" and "zeta" in str(exc.value)


def test_set_must_use_outputs():
    d = doc()
    d["psi"] = "1 - x1^2"
    with pytest.raises(SpecError) as exc:
        load_spec(d)
    assert exc.value.location == "/psi"


def test_shape_mismatches():
    d = doc()
    d["f"].pop()
    with pytest.raises(SpecError, match="drift"):
        load_spec(d)
    d = doc()
    d["g"][1] = d["g"][1][:1]
    with pytest.raises(SpecError) as exc:
        load_spec(d)
    assert exc.value.location == "/g/1"


def test_inverted_bounds():
    d = doc()
    d["state_vars"][0]["lo"], d["state_vars"][0]["hi"] = 1.0, -1.0
    with pytest.raises(SpecError) as exc:
        load_spec(d)
    assert exc.value.location == "/state_vars/0"


def test_constants_substituted_and_checked():
    d = doc("example1")
    d["constants"] = {"c": 5.0}
    d["f"][1] = "-x2^2 + x3^3 + x4 - c*x1"
    assert load_spec(d).system.f == load_spec(doc("example1")).system.f
    d["constants"] = {"x1": 1.0}
    with pytest.raises(SpecError, match="shadow"):
        load_spec(d)


def test_invalid_json_reports_line(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "inputs": 2,\n  oops\n}')
    with pytest.raises(SpecError, match="line 3"):
        load_spec(p)


def test_missing_file():
    with pytest.raises(SpecError, match="cannot read"):
        load_spec("/nonexistent/system.json")


def test_unknown_fixture():
    with pytest.raises(KeyError):
        fixture_path("nope")


def test_output_box_derived_when_absent():
    d = doc("example1")
    del d["output_box"]
    box = np.array(load_spec(d).output_box)
    # outputs are x1 and x3, both in [-1, 1]; the derived box pads the sampled range by 5 %
    assert np.all(box[:, 0] < -0.99) and np.all(box[:, 1] > 0.99)
    assert np.all(box[:, 0] > -1.2) and np.all(box[:, 1] < 1.2)


def test_synthesis_options_validated():
    d = doc()
    d["synthesis"] = {**d.get("synthesis", {}), "deg_u": -1}
    with pytest.raises(SpecError):
        load_spec(d)


def test_dict_and_file_agree(tmp_path):
    d = doc("arm")
    p = tmp_path / "arm.json"
    p.write_text(json.dumps(copy.deepcopy(d)))
    a, b = load_spec(d), load_spec(p)
    assert a.system == b.system and a.psi == b.psi and a.phi == b.phi
