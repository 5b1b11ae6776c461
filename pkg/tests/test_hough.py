import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from egocorridor import hough_baseline as hb
from egocorridor.camera import default_camera, ground_to_pixel
from egocorridor.corridor_eval import CorridorEstimate, KpiConfig, frame_availability
from egocorridor.errors import DegenerateGeometry, NoPair
from egocorridor.netpbm import read_pgm
from egocorridor.scene_forge import SceneSpec, bench_catalog, render_frame
from egocorridor.scene_forge.sequence import frame_times

CFG = hb.HoughConfig()
CAM = default_camera()


def _brute_accumulator(edges, config):
    h, w = edges.shape
    off = int(math.ceil(math.hypot(w - 1, h - 1) / config.rho_resolution)) + 1
    acc = np.zeros((2 * off + 1, config.n_theta), dtype=np.int64)
    for v in range(h):
        for u in range(w):
            if not edges[v, u]:
                continue
            for k in range(config.n_theta):
                t = k * config.theta_resolution
                rho = u * math.cos(t) + v * math.sin(t)
                acc[math.floor(rho / config.rho_resolution + 0.5) + off, k] += 1
    return acc


def _roi_lines(img, cam):
    roi = int(math.ceil(cam.horizon_row + 0.1 * (cam.image_height - cam.horizon_row)))
    return hb.hough_lines(hb.detect_edges(img, CFG, roi))


def _image_polar(cam, x):
    ua, va = ground_to_pixel(cam, (x, 6.0))
    ub, vb = ground_to_pixel(cam, (x, 40.0))
    th = math.atan2(ub - ua, -(vb - va)) % math.pi
    return ua * math.cos(th) + va * math.sin(th), th


# --- edges -----------------------------------------------------------------

def test_constant_image_has_no_edges():
    assert not hb.detect_edges(np.full((20, 30), 77, np.uint8)).any()


@pytest.mark.parametrize("c", [5, 17, 40])
def test_step_edge_columns(c):
    img = np.zeros((48, 64), np.uint8)
    img[:, c:] = 100
    cols = set(np.nonzero(hb.detect_edges(img).any(axis=0))[0])
    assert cols == {c - 1, c}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.5, 0.99))
def test_edge_count_bounded_by_percentile(seed, p):
    img = np.random.default_rng(seed).integers(0, 256, (24, 32)).astype(np.uint8)
    edges = hb.detect_edges(img, dataclasses.replace(CFG, edge_percentile=p))
    assert edges.sum() <= (1 - p) * img.size + 1


# --- accumulator and peaks -------------------------------------------------

@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 64), st.integers(4, 64), st.sampled_from([1.0, 2.0]))
def test_accumulator_matches_brute_force(seed, h, w, res):
    rng = np.random.default_rng(seed)
    edges = rng.random((h, w)) < 0.05
    config = dataclasses.replace(CFG, rho_resolution=res, theta_resolution=math.pi / 90)
    np.testing.assert_array_equal(hb.accumulate(edges, config), _brute_accumulator(edges, config))


def test_vertical_line_peak():
    edges = np.zeros((64, 64), bool)
    edges[:, 40] = True
    top = hb.hough_lines(edges)[0]
    assert abs(top.rho - 40) <= 1 and min(top.theta, math.pi - top.theta) <= CFG.theta_resolution + 1e-9
    assert top.votes == 64


def test_diagonal_line_peak():
    edges = np.eye(64, dtype=bool)
    top = hb.hough_lines(edges)[0]
    assert abs(top.rho) <= 1 and abs(top.theta - 3 * math.pi / 4) <= CFG.theta_resolution + 1e-9


def test_empty_edges_give_no_lines():
    assert hb.hough_lines(np.zeros((30, 30), bool)) == []


def test_peak_ties_prefer_lower_theta_then_rho():
    acc = np.zeros((21, 180), dtype=np.int64)
    acc[15, 90] = acc[20, 30] = acc[2, 30] = 7
    lines = hb.peaks(acc, CFG, offset=10)
    assert [(ln.rho, round(math.degrees(ln.theta))) for ln in lines] == [(-8, 30), (10, 30), (5, 90)]


def test_nms_suppresses_neighbours():
    acc = np.zeros((41, 180), dtype=np.int64)
    acc[20, 10] = 10
    acc[23, 12] = 9  # inside the suppression window
    acc[35, 10] = 8  # outside it
    lines = hb.peaks(acc, CFG, offset=20)
    assert [ln.votes for ln in lines] == [10, 8]


def _draw_line(shape, p0, p1):
    img = np.zeros(shape, bool)
    n = 4 * max(shape)
    for t in np.linspace(0, 1, n):
        u = p0[0] + t * (p1[0] - p0[0])
        v = p0[1] + t * (p1[1] - p0[1])
        img[int(round(v)), int(round(u))] = True
    return img


@pytest.mark.parametrize("p0,p1", [((5, 0), (30, 47)), ((0, 10), (63, 30)), ((50, 2), (8, 45)), ((20, 0), (20, 47))])
def test_rotation_consistency(p0, p1):
    edges = _draw_line((48, 64), p0, p1)
    h, w = edges.shape
    a = hb.hough_lines(edges)[0]
    b = hb.hough_lines(np.rot90(edges))[0]
    # rot90 sends (u, v) to (v, w - 1 - u)
    theta = a.theta - math.pi / 2
    rho = a.rho - (w - 1) * math.cos(a.theta)
    if theta < 0:
        theta, rho = theta + math.pi, -rho
    dt = abs(b.theta - theta)
    if dt > math.pi / 2:  # wrap at 0 / pi flips the sign of rho
        dt, rho = math.pi - dt, -rho
    assert dt <= CFG.theta_resolution + 1e-9
    assert abs(b.rho - rho) <= 1.5


def test_hough_is_deterministic():
    img, _ = render_frame(SceneSpec(degradation="heavy_rain", severity=0.5, seed=9), CAM)
    assert _roi_lines(img, CAM) == _roi_lines(img, CAM)


def test_accumulator_dump(tmp_path):
    edges = np.zeros((20, 20), bool)
    edges[:, 3] = True
    acc = hb.accumulate(edges)
    hb.write_accumulator_pgm(tmp_path / "acc.pgm", acc)
    img = read_pgm(tmp_path / "acc.pgm")
    assert img.shape == acc.shape and img.max() == 255


# --- lane pair on rendered roads -------------------------------------------

def test_top_lines_follow_marking_edges():
    spec = SceneSpec(marking_style="solid", n_lanes=2)
    img, _ = render_frame(spec, CAM)
    w = spec.lane_width
    truth = [_image_polar(CAM, x) for c in (-w / 2, w / 2) for x in (c - 0.075, c + 0.075)]
    for line in _roi_lines(img, CAM)[:2]:
        assert any(
            abs(line.rho - r) <= 2 and abs(line.theta - t) <= math.radians(2) for r, t in truth
        )


@pytest.mark.parametrize("size", [(160, 96), (652, 360)])
@pytest.mark.parametrize("width", [3.0, 3.5, 4.0])
def test_pair_separation_matches_lane(size, width):
    cam = default_camera(*size)
    spec = SceneSpec(lane_width=width, marking_style="solid")
    img, _ = render_frame(spec, cam)
    left, right = hb.select_lane_pair(_roi_lines(img, cam), cam)
    sep = hb.ground_track(right, cam).x0 - hb.ground_track(left, cam).x0
    assert abs(sep - width) <= 0.2
    est = hb.corridor_from_lines((left, right), cam)
    assert est.source == "classical" and est.available
    if width == 3.5:
        assert abs(est.width - 3.5) <= 0.2


def test_single_line_is_no_pair():
    line = hb.LinePolar(*_image_polar(CAM, 1.75), votes=50)
    with pytest.raises(NoPair):
        hb.select_lane_pair([line], CAM)
    with pytest.raises(NoPair):
        hb.select_lane_pair([], CAM)


def test_lines_crossing_mid_image_truncate_corridor():
    cam = CAM
    cross_v = 70.0
    bottom = cam.image_height - 1
    # two lines through (70, cross_v) reaching the bottom at columns 20 and 140
    def through(u_bottom):
        theta = math.atan2(u_bottom - 70.0, -(bottom - cross_v)) % math.pi
        return hb.LinePolar(70.0 * math.cos(theta) + cross_v * math.sin(theta), theta, 10)
    mask = hb.corridor_mask((through(20.0), through(140.0)), cam)
    rows = np.nonzero(mask.any(axis=1))[0]
    assert rows.min() > cross_v and rows.max() == bottom
    est = hb.corridor_from_lines((through(20.0), through(140.0)), cam)
    _, z_cross = hb.pixel_to_ground_array(cam, cam.cx, cross_v)
    assert est.length <= z_cross


def test_lines_crossing_below_bottom_are_degenerate():
    a = hb.LinePolar(*_image_polar(CAM, 1.0), votes=5)
    b = hb.LinePolar(*_image_polar(CAM, -1.0), votes=5)
    with pytest.raises(DegenerateGeometry):
        hb.corridor_mask((a, b), CAM)


def test_estimate_corridor_unavailable_on_blank_frame():
    est = hb.estimate_corridor(np.full((96, 160), 90, np.uint8), CAM)
    assert est == CorridorEstimate.unavailable("classical")
    assert not frame_availability(est, 25.0, KpiConfig())


def test_heavy_rain_raises_no_pair_rate():
    _, rainy, motion = bench_catalog(("heavy_rain",), 1)[0]
    twin = dataclasses.replace(rainy, degradation="none", severity=0.0)
    rates = []
    for spec in (rainy, twin):
        fails = 0
        for i, t in enumerate(frame_times()[::3]):
            img, _ = render_frame(spec, CAM, float(t), motion, 3 * i)
            try:
                hb.select_lane_pair(_roi_lines(img, CAM), CAM)
            except NoPair:
                fails += 1
        rates.append(fails)
    assert rates[0] > rates[1]
