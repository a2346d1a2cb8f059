import numpy as np
import pytest

from sub2full.forward_model import make_source_spectrum
from sub2full.phantom import LayerSpec, PhantomSpec, ScattererField


@pytest.fixture(scope="session")
def spectrum():
    return make_source_spectrum(450.0, 725.0, 90.0, 512)


@pytest.fixture(scope="session")
def small_spectrum():
    return make_source_spectrum(450.0, 725.0, 90.0, 256)


def single_reflector(z: float, amplitude: float = 1.0, phase: float = 0.0, n_alines: int = 1) -> ScattererField:
    return ScattererField(
        [np.array([z])] * n_alines,
        [np.array([amplitude])] * n_alines,
        [np.array([phase])] * n_alines,
        depth_extent=2 * z + 1,
    )


def slab_spec(density=10.0, lateral=64, top=10.0, bottom=130.0, gradient=0.0, seed=3, depth_extent=150.0):
    """Flat single-layer phantom: no curvature, no undulation."""
    layer = LayerSpec(top, bottom, 1.0, scatterer_density=density, reflectivity_gradient=gradient, name="slab")
    return PhantomSpec(
        depth_extent=depth_extent, layers=(layer,), lateral_extent=lateral, seed=seed, curvature=0.0, undulation=0.0
    )


def small_slab(**kw):
    """Slab that fits the ~75 µm range of the 256-sample spectrum."""
    kw.setdefault("top", 8.0)
    kw.setdefault("bottom", 68.0)
    return slab_spec(depth_extent=75.0, **kw)


def noisy_target_gradient_cosine(n_targets: int = 10_000, noise_std: float = 0.3, seed: int = 0) -> float:
    """Cosine between the mean of per-target gradients (noisy targets) and the clean-target gradient."""
    from sub2full.forward_model import add_image_noise
    from sub2full.net import Arch, l2_loss, net_backward, net_forward, net_init

    params = net_init(Arch(levels=1, channels=2), seed=seed, dtype=np.float64)
    rng = np.random.default_rng(seed)
    x = rng.random((1, 1, 8, 8))
    clean = 0.5 + 0.3 * np.sin(np.arange(64).reshape(1, 1, 8, 8) / 5.0)

    def flat_grad(target):
        out, cache = net_forward(params, x)
        grads = net_backward(cache, l2_loss(out, target)[1])
        return np.concatenate([g.ravel() for g in grads.values()])

    reference = flat_grad(clean)
    total = np.zeros_like(reference)
    for i in range(n_targets):
        total += flat_grad(add_image_noise(clean, noise_std, seed=1000 + i))
    mean = total / n_targets
    return float(mean @ reference / (np.linalg.norm(mean) * np.linalg.norm(reference)))


REPO = __import__("pathlib").Path(__file__).resolve().parent.parent
TINY_CONFIG = REPO / "configs" / "tiny.yaml"
WALL_CLOCK_COLUMNS = {"seconds", "wall_seconds"}


def run_cli(*args) -> int:
    from sub2full.cli import main

    return main([str(a) for a in args])


def run_full_pipeline(config, out) -> None:
    """simulate, train all schemes, compare, reconstruct, denoise, evaluate, sweep, finetune."""
    common = ("--config", config, "--out", out)
    steps = [("simulate",)]
    steps += [("train", "--scheme", s) for s in ("s2f", "n2n", "n2v")]
    steps += [("compare",), ("reconstruct", "--bscans", "0,1"), ("denoise", "--scheme", "s2f")]
    steps += [("evaluate", "--scheme", "n2n"), ("sweep-bandwidth",), ("finetune",)]
    for step in steps:
        assert run_cli(*step, *common) == 0, step


def strip_wall_clock(path) -> list[list[str]]:
    """CSV rows with wall-clock columns removed."""
    import csv

    with open(path) as fh:
        rows = list(csv.reader(fh))
    keep = [i for i, name in enumerate(rows[0]) if name not in WALL_CLOCK_COLUMNS]
    return [[row[i] for i in keep] for row in rows]


def compare_trees(a, b) -> list[str]:
    """Relative paths whose content differs (CSV files compared without wall-clock columns)."""
    from pathlib import Path

    a, b = Path(a), Path(b)
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    if files_a != files_b:
        return sorted(set(map(str, files_a)) ^ set(map(str, files_b)))
    diffs = []
    for rel in files_a:
        if rel.suffix == ".csv":
            same = strip_wall_clock(a / rel) == strip_wall_clock(b / rel)
        else:
            same = (a / rel).read_bytes() == (b / rel).read_bytes()
        if not same:
            diffs.append(str(rel))
    return diffs


# acceptance bookkeeping: one line per criterion in the terminal summary
_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or not (report.when == "call" or report.failed or report.skipped):
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "status": "PASS", "details": []})
    if report.failed:
        entry["status"] = "FAIL"
    elif report.skipped and entry["status"] == "PASS":
        entry["status"] = "SKIP"
    entry["details"] += [str(v) for k, v in item.user_properties if k == "detail"]


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        detail = "; ".join(dict.fromkeys(e["details"]))
        terminalreporter.write_line(f"criterion {number:>2} {e['status']}  {e['title']}" + (f"  [{detail}]" if detail else ""))
