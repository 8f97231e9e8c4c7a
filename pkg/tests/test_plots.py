import matplotlib.pyplot as plt
import numpy as np
import pytest

from neuroform.engine import MonitorConfig, SimConfig, run
from neuroform.errors import GainSet
from neuroform.experiments import exp1_topology, make_exp1
from neuroform.plots import (
    adaptation_figure,
    comparison_figure,
    control_figure,
    draw_snapshot,
    error_figure,
    lyapunov_figure,
    save_figure,
    snapshot_figure,
)
from neuroform.policies import OraclePolicy

GAINS = GainSet.uniform(5)


@pytest.fixture(scope="module")
def record():
    inst, _ = make_exp1(seed=0)
    sim = SimConfig(dt=1e-2, duration=2.0, record_stride=10)
    return run(inst, OraclePolicy(), sim, MonitorConfig(), GAINS)


def test_snapshot_draws_all_communication_edges(record):
    fig, ax = plt.subplots()
    edges = draw_snapshot(ax, record, exp1_topology(), idx=0)
    plt.close(fig)
    assert edges == 7  # four follower edges plus three leader links


def test_figures_build(record):
    for fig in (
        snapshot_figure(record, exp1_topology()),
        error_figure(record),
        adaptation_figure(record),
        control_figure(record),
        lyapunov_figure(record),
    ):
        assert fig.get_axes()
        plt.close(fig)


def test_svg_output_is_deterministic(record, tmp_path):
    p1 = save_figure(error_figure(record), tmp_path / "a")
    p2 = save_figure(error_figure(record), tmp_path / "b")
    assert p1.suffix == ".svg"
    assert p1.read_bytes() == p2.read_bytes()


def test_comparison_figure_lists_only_present_policies():
    time = np.linspace(0, 1, 5)
    report = {
        "time": time.tolist(),
        "policies": {
            "adaptive": {
                "divergences": 0, "runs": 2,
                "mean_series": np.ones(5).tolist(),
                "std_series": (0.1 * np.ones(5)).tolist(),
            },
            "no_nn": {
                "divergences": 1, "runs": 2,
                "mean_series": (2 * np.ones(5)).tolist(),
                "std_series": (0.2 * np.ones(5)).tolist(),
            },
        },
    }
    fig = comparison_figure(report)
    labels = [t.get_text() for t in fig.get_axes()[0].get_legend().get_texts()]
    assert len(labels) == 2
    assert any("adaptive" in lbl for lbl in labels)
    assert any("no_nn" in lbl and "div 1/2" in lbl for lbl in labels)
    plt.close(fig)
