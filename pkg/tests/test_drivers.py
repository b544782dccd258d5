import csv

import numpy as np
import pytest

from archcal.drivers import (CONT_COLUMNS, DRIVER_PRESETS, IFACE_COLUMNS, dissipated, driver_preset,
                             parse_driver, run_driver, write_table)
from archcal.scenarios import CONTINUUM, JOINT, ScenarioError


@pytest.mark.parametrize("mas", ["weak", "strong"])
def test_continuum_tension_dissipates_gt_over_lch(mas):
    spec = parse_driver(driver_preset(f"driver-continuum-tension-{mas}"))
    t = run_driver(spec)
    p = CONTINUUM[mas]
    assert t["sig_xx"].max() == pytest.approx(p["ft"], rel=1e-2)
    assert dissipated(t, "eps_xx", "sig_xx") == pytest.approx(p["Gt"] / spec.lch, rel=1e-2)
    # uniaxial: lateral stresses held at zero
    assert np.abs(t["sig_yy"]).max() <= 1e-6 * p["ft"]
    assert np.abs(t["sig_zz"]).max() <= 1e-6 * p["ft"]
    assert np.all(np.diff(t["d_t"]) >= -1e-14)


@pytest.mark.parametrize("mas", ["weak", "strong"])
def test_continuum_compression_reaches_fc_max(mas):
    t = run_driver(parse_driver(driver_preset(f"driver-continuum-compression-{mas}")))
    assert -t["sig_xx"].min() == pytest.approx(CONTINUUM[mas]["fc_max"], rel=1e-2)
    assert t["sig_xx"].max() <= 0.0


def test_interface_shear_preset_dissipates_gs():
    t = run_driver(parse_driver(driver_preset("driver-interface-shear-weak")))
    total = t["W_ps"][-1] + t["W_pt"][-1]
    assert total == pytest.approx(JOINT["weak"]["Gs"], rel=2e-2)


def test_all_presets_parse():
    assert len(DRIVER_PRESETS) == 10
    for name in DRIVER_PRESETS:
        parse_driver(driver_preset(name))
    for bad in ("driver-interface-compression-weak", "driver-continuum-tension-medium", "x"):
        with pytest.raises(KeyError):
            driver_preset(bad)


def test_parse_errors():
    base = driver_preset("driver-interface-tension-weak")
    with pytest.raises(ScenarioError, match="applies to continuum"):
        parse_driver({**base, "path": {"kind": "uniaxial_tension"}})
    with pytest.raises(ScenarioError, match="applies to interfaces"):
        parse_driver({**driver_preset("driver-continuum-shear-weak"), "path": {"kind": "shear"}})
    with pytest.raises(ScenarioError, match="custom path"):
        parse_driver({**base, "path": {"kind": "custom", "points": [[0, 0, 0]]}})
    with pytest.raises(ScenarioError, match="material"):
        parse_driver({**base, "material": {**base["material"], "bogus": 1.0}})
    with pytest.raises(ScenarioError, match="lch"):
        parse_driver({**base, "lch": -1.0})
    # material values rejected by the constitutive parameter checks
    with pytest.raises(ScenarioError, match="material"):
        run_driver(parse_driver({**base, "material": {**base["material"], "kn": -1.0}}))


def test_custom_interface_path_unload_reload():
    base = driver_preset("driver-interface-tension-weak")
    j = JOINT["weak"]
    w1 = 2.0 * j["ft"] / j["kn"]
    spec = parse_driver({**base, "path": {"kind": "custom", "points": [[0, 0], [w1, 0], [0, 0], [w1, 0]],
                                          "steps_per_segment": 20}})
    t = run_driver(spec)
    assert len(t["step"]) == 61
    # damage is frozen on unloading; reloading retraces the secant
    np.testing.assert_allclose(t["sigma"][20], t["sigma"][60], rtol=1e-10)
    assert t["D_n"][40] == pytest.approx(t["D_n"][20])


def test_csv_columns(tmp_path):
    for name, cols in (("driver-interface-tension-strong", IFACE_COLUMNS),
                       ("driver-continuum-shear-strong", CONT_COLUMNS)):
        t = run_driver(parse_driver(driver_preset(name)))
        write_table(t, tmp_path / "t.csv")
        with open(tmp_path / "t.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(cols)
        assert len(rows) == len(t["step"]) + 1
        np.testing.assert_array_equal(np.array(rows[1:], float)[:, 1:], np.column_stack([t[c] for c in cols[1:]]))
