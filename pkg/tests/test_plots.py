import xml.etree.ElementTree as ET

import numpy as np
import pytest

from archcal import plots
from archcal.calibration import ParetoFront
from archcal.cli import main
from archcal.mesh import ArchGeometry, generate_macroscale_arch, write_vtk


@pytest.fixture(scope="module")
def hybrid():
    return generate_macroscale_arch(ArchGeometry(), hybrid=True)


def _front():
    om = np.array([[0.1, 0.9], [0.3, 0.4], [0.6, 0.2], [0.9, 0.05]])
    return ParetoFront(names=["a", "b"], params=np.arange(8.0).reshape(4, 2), omega=om)


def test_front_scatter_marks_selection(tmp_path):
    plots.front_scatter(_front(), 2, tmp_path / "f.svg")
    text = (tmp_path / "f.svg").read_text()
    ET.fromstring(text)  # well-formed
    assert "selected (2)" in text


def test_svg_output_is_reproducible(tmp_path, hybrid):
    for k in range(2):
        plots.plot_mesh(hybrid, tmp_path / f"m{k}.svg", iface_values=np.linspace(0, 1, 40))
    assert (tmp_path / "m0.svg").read_bytes() == (tmp_path / "m1.svg").read_bytes()


def test_vtk_heatmap(tmp_path, hybrid):
    d = np.linspace(0, 1, len(hybrid.quads) + len(hybrid.ifaces))
    write_vtk(hybrid, tmp_path / "s.vtk", cell_scalars={"d": d})
    plots.plot_vtk_field(tmp_path / "s.vtk", "d", tmp_path / "s.svg")
    ET.fromstring((tmp_path / "s.svg").read_text())
    with pytest.raises(KeyError):
        plots.plot_vtk_field(tmp_path / "s.vtk", "kappa", tmp_path / "x.svg")


def test_plot_cli_front_and_vtk(tmp_path, hybrid):
    _front().write_csv(tmp_path / "front.csv")
    d = np.linspace(0, 1, len(hybrid.quads) + len(hybrid.ifaces))
    write_vtk(hybrid, tmp_path / "step.vtk", cell_scalars={"d": d})
    out = tmp_path / "o"
    assert main(["plot", "--out", str(out), "--pick", "1",
                 str(tmp_path / "front.csv"), str(tmp_path / "step.vtk")]) == 0
    assert "selected (1)" in (out / "front.svg").read_text()
    assert (out / "step_d.svg").exists()
    # a front with no members is rejected
    ParetoFront(names=["a", "b"], params=np.zeros((0, 2)), omega=np.zeros((0, 2))).write_csv(
        tmp_path / "front_empty.csv")
    assert main(["plot", "--out", str(out), str(tmp_path / "front_empty.csv")]) == 1
