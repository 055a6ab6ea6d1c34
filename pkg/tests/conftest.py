import numpy as np
import pytest

from panosim.synth import SceneSpec, generate_network_trace, generate_synthetic_video, generate_viewpoint_trace
from panosim.traces import DEFAULT_QPS, UNIT_COLS, UNIT_ROWS, VideoDescriptor


def flat_video(num_chunks=1, error=None, bitrate=None, luminance=127.0, texture=0.0, dof=1.0, velocity=0.0):
    """Descriptor with the same features in every cell."""
    shape = (num_chunks, UNIT_ROWS, UNIT_COLS)
    q = len(DEFAULT_QPS)
    err = np.broadcast_to(np.asarray(error if error is not None else [2.0, 4.0, 8.0, 16.0, 32.0], float), shape + (q,))
    rate = np.broadcast_to(np.asarray(bitrate if bitrate is not None else [1600.0, 800.0, 400.0, 200.0, 100.0], float),
                           shape + (q,))
    return VideoDescriptor(
        quality_levels=DEFAULT_QPS,
        velocity=np.full(shape + (2,), velocity),
        luminance=np.full(shape, luminance),
        dof=np.full(shape, dof),
        texture=np.full(shape, texture),
        bitrate=err * 0 + rate,
        error=err.copy(),
    )


@pytest.fixture(scope="session")
def small_spec():
    return SceneSpec(duration_s=8.0)


@pytest.fixture(scope="session")
def small_video(small_spec):
    return generate_synthetic_video(small_spec, 3)


@pytest.fixture(scope="session")
def small_traces(small_spec):
    return [generate_viewpoint_trace(small_spec, 3, u) for u in range(3)]


@pytest.fixture(scope="session")
def small_network():
    return generate_network_trace(20.0, 1e6, 3)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(number, ok, detail, clause=""):
        line = f"criterion {f'{number}{clause}':>3}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        lines.append(((number, clause), line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
