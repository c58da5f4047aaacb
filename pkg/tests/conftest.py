import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("mlft", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("mlft")


TINY = """
[problem]
name = burgers
kappa = 0.005
t_term = 0.02
dt_factor = 2
k_steps = 4

[hierarchy]
n = 16,32
cost = 1,8
restriction = average
interpolation = linear

[network]
n_sub = 8,16,32
depth = 3
channels = 4
conv_window = 3
transfer_window = 3
gamma = 0.1

[optimizer]
kind = adam
lr = 1e-2

[training]
iters = 40
batch_size = 4
log_every = 10

[splits]
test = 6
validation = 4

[experiment]
seed = 0
out = out

[estimator]
kind = mlft_apost
method = heuristic
anchor = 8,2
gram_cap = 4
growth_m = 2,4

[budget]
T = 64
ratios = 0,0.5,1
reps = 2
"""


@pytest.fixture
def tiny_text():
    return TINY


@pytest.fixture
def tiny_cfg():
    from mlft.config import parse_config
    return parse_config(TINY)


# -- acceptance summary: one line per criterion ------------------------------------

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(k): acceptance criterion number")


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args[0]))


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    k = props.get("criterion")
    if k is None or not (report.when == "call" or report.failed):
        return
    ok, details = _CRITERIA.get(k, (True, []))
    ok = ok and report.passed and not hasattr(report, "wasxfail")
    details += [v for name, v in report.user_properties if name == "detail"]
    _CRITERIA[k] = (ok, details)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        ok, details = _CRITERIA[k]
        tail = f"  ({'; '.join(details)})" if details else ""
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}{tail}")
