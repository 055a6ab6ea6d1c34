import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import flat_video
from panosim.synth import SceneSpec, SceneSpecError, generate_synthetic_video, ladder
from panosim.traces import (
    DescriptorError,
    NetworkTrace,
    Rect,
    TraceError,
    ViewpointTrace,
    Viewport,
    load_network_trace,
    load_video_descriptor,
    load_viewpoint_trace,
    save_network_trace,
    save_video_descriptor,
    save_viewpoint_trace,
    tiles_in_viewport,
    viewpoint_at,
)


def test_minimal_descriptor_round_trip(tmp_path):
    video = flat_video(1)
    path = tmp_path / "video.csv"
    save_video_descriptor(video, path)
    loaded = load_video_descriptor(path)
    assert loaded.num_chunks == 1
    assert loaded == video
    save_video_descriptor(loaded, tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == path.read_bytes()


def test_synthetic_round_trip(tmp_path, small_video):
    save_video_descriptor(small_video, tmp_path / "v.csv")
    assert load_video_descriptor(tmp_path / "v.csv") == small_video


def test_rate_inversion_rejected(tmp_path):
    video = flat_video(1)
    path = tmp_path / "video.csv"
    save_video_descriptor(video, path)
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    row = lines[5].split(",")
    row[header.index("R_27")] = "5000.0"  # now R(27) > R(22)
    lines[5] = ",".join(row)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DescriptorError, match=r"chunk 0 tile .*R\(27\) >= R\(22\)"):
        load_video_descriptor(path)


def test_parse_error_names_line(tmp_path):
    path = tmp_path / "video.csv"
    save_video_descriptor(flat_video(1), path)
    lines = path.read_text().splitlines()
    lines[3] = lines[3].replace("127.0", "bright", 1)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(DescriptorError, match=r"video.csv:4: field .luminance."):
        load_video_descriptor(path)


def test_feature_range_checked():
    with pytest.raises(DescriptorError, match="luminance"):
        flat_video(1, luminance=300.0)


def test_ladder_law():
    e, r = ladder(2.0, 1000.0, qps=(22, 28))
    assert e[0] == 2.0 and e[1] == pytest.approx(4.0)
    assert r[1] == pytest.approx(500.0)


def test_generation_deterministic():
    spec = SceneSpec(duration_s=3)
    assert generate_synthetic_video(spec, 11) == generate_synthetic_video(spec, 11)
    assert generate_synthetic_video(spec, 11) != generate_synthetic_video(spec, 12)


def test_bad_scene_spec():
    with pytest.raises(SceneSpecError):
        SceneSpec(archetype="underwater")
    with pytest.raises(SceneSpecError):
        SceneSpec(duration_s=-1)


def test_viewpoint_interpolation():
    tr = ViewpointTrace([0.0, 1.0], [10.0, 20.0], [0.0, 0.0])
    assert viewpoint_at(tr, 1.0) == (20.0, 0.0)
    assert viewpoint_at(tr, 0.5)[0] == pytest.approx(15.0)
    wrap = ViewpointTrace([0.0, 1.0], [350.0, 10.0], [0.0, 0.0])
    assert viewpoint_at(wrap, 0.5)[0] == pytest.approx(0.0)
    with pytest.raises(TraceError):
        viewpoint_at(tr, 2.0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 359.9), st.floats(-180, 180), st.floats(0.0, 0.999))
def test_viewpoint_continuity(y0, step, frac):
    tr = ViewpointTrace([0.0, 1.0], [y0, (y0 + step) % 360], [0.0, 10.0])
    a = viewpoint_at(tr, frac)
    b = viewpoint_at(tr, frac + 1e-7)
    d = abs((a[0] - b[0] + 180.0) % 360.0 - 180.0)
    assert d < 1e-4 and abs(a[1] - b[1]) < 1e-4


def test_trace_validation():
    with pytest.raises(TraceError):
        ViewpointTrace([0.0, 0.0], [1.0, 2.0], [0.0, 0.0])
    with pytest.raises(TraceError):
        ViewpointTrace([0.0], [1.0], [95.0])
    with pytest.raises(TraceError):
        NetworkTrace([0.0, 1.0], [1e6, -1.0])


def test_trace_files_round_trip(tmp_path, small_traces, small_network):
    save_viewpoint_trace(small_traces[0], tmp_path / "vp.csv")
    assert load_viewpoint_trace(tmp_path / "vp.csv") == small_traces[0]
    save_network_trace(small_network, tmp_path / "net.csv")
    assert load_network_trace(tmp_path / "net.csv") == small_network


GRID_2X4 = [Rect(r, c, 1, 1) for r in range(2) for c in range(4)]


def test_tiles_full_sphere():
    vp = Viewport(0.0, 0.0, 360.0, 180.0)
    assert tiles_in_viewport(vp, GRID_2X4, (2, 4)) == set(range(8))


def test_tiles_inside_one_coarse_tile():
    rects = [Rect(0, 0, 6, 12), Rect(0, 12, 6, 12), Rect(6, 0, 6, 24)]
    vp = Viewport(90.0, 45.0, 20.0, 20.0)
    assert tiles_in_viewport(vp, rects) == {0}


def test_tiles_across_yaw_seam():
    # 2x4 grid: tiles cover yaw [0,90), [90,180), [180,270), [270,360)
    vp = Viewport(0.0, 30.0, 40.0, 20.0)
    assert tiles_in_viewport(vp, GRID_2X4, (2, 4)) == {0, 3}


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 359.99), st.floats(-80, 80), st.floats(5, 200), st.floats(5, 120), st.integers(1, 3))
def test_tiles_invariant_under_full_turns(yaw, pitch, w, h, turns):
    a = tiles_in_viewport(Viewport(yaw, pitch, w, h), GRID_2X4, (2, 4))
    b = tiles_in_viewport(Viewport(yaw + 360.0 * turns, pitch, w, h), GRID_2X4, (2, 4))
    assert a == b
