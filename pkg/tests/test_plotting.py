import matplotlib

from visdebias import plotting
from visdebias.evaluation import EvalRecord, ProbeRow, confidence_bins

PNG = b"\x89PNG\r\n\x1a\n"


def test_backend_is_headless():
    assert matplotlib.get_backend().lower() == "agg"


def test_probe_figure(tmp_path):
    report = {v: [ProbeRow(v, 1, "yes", 0.7), ProbeRow(v, 2, "no", 0.3)] for v in ("none", "unk")}
    path = plotting.plot_probe(report, tmp_path / "probe.png")
    assert path.read_bytes().startswith(PNG)


def test_bins_figure_is_byte_stable(tmp_path):
    recs = [EvalRecord(str(i), "a", "a" if i % 3 else "b", i / 20) for i in range(21)]
    bins = {"naive": confidence_bins(recs), "debiased": confidence_bins(recs[::2])}
    a = plotting.plot_confidence_bins(bins, tmp_path / "a.png").read_bytes()
    b = plotting.plot_confidence_bins(bins, tmp_path / "b.png").read_bytes()
    assert a.startswith(PNG) and a == b


def test_sweep_figure(tmp_path):
    per_config = {f"temp={h / 100:.2f}": 0.5 for h in range(5, 101, 5)}
    per_config.update({f"top_k={k}": 0.6 for k in (1, 2, 5, 10, 20, 50, 100, 200, 500)})
    per_config.update({f"top_p={h / 100:.2f}": 0.4 for h in range(5, 101, 5)})
    summary = {"default": 0.55, "groups": {"temp": 0.8, "top_k": 0.7, "top_p": 0.6, "overall": 0.9}}
    path = plotting.plot_sweep(per_config, summary, tmp_path / "nested" / "sweep.png")
    assert path.read_bytes().startswith(PNG)
