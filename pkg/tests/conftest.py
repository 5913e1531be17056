import numpy as np
import pytest

from rerec.config import RunConfig
from rerec.pipeline import build_world
from rerec.synthbench import generate

# small enough that a whole world trains in a couple of seconds
TINY = {
    "embed.d": 8, "embed.epochs": 30, "diffusion.T": 10, "diffusion.hidden": 16,
    "diffusion.epochs": 20, "world.M": 4, "policy.hidden": 16, "policy.episodes": 20,
    "eval.episodes": 10, "env.max_length": 10,
}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def tiny_cfg():
    return RunConfig(TINY)


@pytest.fixture(scope="session")
def tiny_synth():
    return generate(U=12, I=20, C=4, events_per_user=8, sparsity_skew=0.5, seed=3)


@pytest.fixture(scope="session")
def tiny_world(tiny_synth, tiny_cfg):
    return build_world(tiny_synth.events, tiny_synth.n_users, tiny_synth.n_items, tiny_cfg,
                       categories=tiny_synth.categories)


# ------------------------------------------------------------ acceptance report
# Tests marked ``@pytest.mark.acceptance(number, title)`` get one summary line
# each at the end of the run, with any ``record_property("detail", ...)`` text.

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _ACCEPTANCE.setdefault(number, {"title": title, "ok": True, "detail": ""})
    if rep.failed or (rep.when == "call" and rep.skipped):
        entry["ok"] = False
    if rep.when == "call":
        entry["detail"] = dict(item.user_properties).get("detail", "")
        if rep.failed and hasattr(rep.longrepr, "reprcrash"):
            entry["detail"] = rep.longrepr.reprcrash.message.splitlines()[0]


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {e['title']}  {e['detail']}".rstrip())
