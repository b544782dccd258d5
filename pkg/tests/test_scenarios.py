import json

import pytest

from archcal.interface import InterfaceParams
from archcal.scenarios import (PRESETS, ScenarioError, build_materials, build_protocol, load_scenario,
                               parse_scenario, preset, resolve, scenario_hash, with_overrides)


def test_every_preset_validates():
    assert len(PRESETS) == 18
    for name in PRESETS:
        sc = parse_scenario(preset(name))
        mats = build_materials(sc)
        prot = build_protocol(sc)
        assert prot.controlled_patch in ("L4", "fill_L4")
        if name.startswith("confined"):
            assert "backfill" in mats.solids and "fill_interface" in mats.interfaces


def test_preload_converted_to_per_width():
    prot = build_protocol(resolve("bare-weak-meso"))
    # 22.5 kN on a 675 mm wide specimen
    assert [p.force for p in prot.preloads] == pytest.approx([22.5 / 0.675] * 2)
    assert build_protocol(resolve("vt-weak-meso")).preloads[0].force == pytest.approx(16.0 / 0.675)


def test_hybrid_ring_joint_is_an_interface():
    mats = build_materials(resolve("bare-weak-hybrid"))
    ip = mats.interfaces["ring_joint"]
    assert isinstance(ip, InterfaceParams)
    assert ip.kn > 0 and ip.kt > 0


def test_strict_schema_rejects_unknown_keys():
    d = preset("bare-weak-hybrid")
    d["protocol"]["contol_rate"] = 0.1
    with pytest.raises(ScenarioError, match="contol_rate"):
        parse_scenario(d)


def test_material_values_checked_on_build():
    d = preset("bare-weak-macro")
    d["materials"]["masonry"]["nu"] = 0.6
    with pytest.raises(ScenarioError, match="materials"):
        build_materials(parse_scenario(d))


def test_confined_requires_backfill_materials():
    d = preset("confined-weak-hybrid")
    del d["materials"]["backfill"]
    with pytest.raises(ScenarioError, match="backfill"):
        parse_scenario(d)


def test_json_file_roundtrip_and_hash(tmp_path):
    d = preset("confined-strong-macro")
    (tmp_path / "s.json").write_text(json.dumps(d))
    sc = load_scenario(tmp_path / "s.json")
    assert scenario_hash(sc) == scenario_hash(resolve("confined-strong-macro"))
    assert scenario_hash(with_overrides(sc, control_rate=0.05)) != scenario_hash(sc)
    (tmp_path / "bad.json").write_text('{\n "name": }')
    with pytest.raises(ScenarioError, match="line 2"):
        load_scenario(tmp_path / "bad.json")


def test_overrides_are_validated():
    sc = resolve("bare-weak-hybrid")
    assert with_overrides(sc, max_steps=10).protocol.max_steps == 10
    with pytest.raises(ScenarioError):
        with_overrides(sc, control_rate=-1.0)
