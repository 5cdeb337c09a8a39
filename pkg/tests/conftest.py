from pathlib import Path

import pytest

from pdegen.cli import main

TINY_INI = """\
[experiment]
name = tiny
seed = 3
[data]
system = Advection
regimes = InD, OutD
n_train = 4
n_test = 2
n_outd = 2
[interp]
grid_size = 32
refine_depth = 1
[comp]
blocks = compress_space, residual
kernel = 3
kernel_in = 3
kernel_out = 3
[vae_train]
steps = 3
batch_size = 2
warmup = 1
window = 0
[gen]
hidden = 16
causal_depth = 1
spatial_depth = 1
heads = 2
head_dim = 8
head_width = 16
decode_steps = 2
fm_steps = 2
[gen_train]
steps = 3
batch_size = 2
warmup = 1
[eval]
history = 3
horizon = 2
members = 2
"""


def run_cli(*args) -> int:
    return main([str(a) for a in args])


def run_pipeline(root: Path, config: Path, seed=None):
    """Every CLI command once, each in its own output directory."""
    extra = [] if seed is None else ["--seed", seed]
    dirs = {k: root / k for k in ("data", "vae", "gen", "rollout", "evaluate", "plot")}
    assert run_cli("gen-data", "--config", config, "--out", dirs["data"], *extra) == 0
    train = dirs["data"] / "train_ind.bin"
    test = dirs["data"] / "test_ind.bin"
    assert run_cli("train-vae", "--config", config, "--data", train, "--out", dirs["vae"], *extra) == 0
    vae = dirs["vae"] / "vae.ckpt"
    assert run_cli("train-gen", "--config", config, "--data", train, "--vae", vae,
                   "--out", dirs["gen"], *extra) == 0
    gen = dirs["gen"] / "gen.ckpt"
    assert run_cli("rollout", "--config", config, "--data", test, "--vae", vae, "--gen", gen,
                   "--out", dirs["rollout"], *extra) == 0
    pred = dirs["rollout"] / "predictions.bin"
    assert run_cli("evaluate", "--config", config, "--pred", pred, "--out", dirs["evaluate"], *extra) == 0
    assert run_cli("plot", "--config", config, "--pred", pred, "--out", dirs["plot"], *extra) == 0
    return dirs


@pytest.fixture(scope="session")
def tiny_config(tmp_path_factory) -> Path:
    path = tmp_path_factory.mktemp("cfg") / "tiny.ini"
    path.write_text(TINY_INI)
    return path


@pytest.fixture(scope="session")
def tiny_run(tmp_path_factory, tiny_config):
    return run_pipeline(tmp_path_factory.mktemp("run"), tiny_config)


# -- acceptance summary ---------------------------------------------------------
# Tests marked ``criterion(n, title)`` are grouped; the terminal summary prints
# one PASS/FAIL line per criterion together with any recorded measurements.

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and rep.passed):
        return
    number, title = mark.args
    entry = _CRITERIA.setdefault(number, {"title": title, "passed": 0, "failed": 0, "notes": []})
    if rep.failed or rep.skipped:
        entry["failed"] += 1
    else:
        entry["passed"] += 1
    if rep.when == "call":
        entry["notes"].extend(v for k, v in item.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        verdict = "PASS" if e["failed"] == 0 and e["passed"] > 0 else "FAIL"
        line = f"{verdict} criterion {number:2d} {e['title']} ({e['passed']} passed, {e['failed']} failed)"
        terminalreporter.write_line(line)
        for note in e["notes"]:
            terminalreporter.write_line(f"    {note}")
