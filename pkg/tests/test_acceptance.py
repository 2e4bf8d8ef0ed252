"""Acceptance criteria. Each test prints one PASS/FAIL line, then asserts it."""

import hashlib
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from registry_fixtures import corridor_config, corridor_frames, make_report, scaled
from rpca_fixtures import is_non_increasing, planted_instance, robust_lambda
from roadhazard.cli import main as cli_main
from roadhazard.metrics import ConfusionMatrix, confusion, f_score, report
from roadhazard.pointcloud import PointCloud, downsample
from roadhazard.projection import CameraModel, ClassImage, fill_gaps, render_classes, write_image
from roadhazard.registry import (
    RegistryClient,
    RegistryConfig,
    RegistryServer,
    RegistryState,
    agent_replay,
    apply_report,
    load_state,
    replay_events,
)
from roadhazard.rpca import RpcaConfig, fast_pcp
from roadhazard.saliency import SaliencyConfig, compute_saliency_map, spectral_saliency
from roadhazard.segmentation import (
    Thresholds,
    VehicleState,
    classify_points,
    driving_corridor,
    extract_obstacles,
    fit_road_plane,
)
from roadhazard.synth import RoadPatchParams, SceneRanges, generate_scene

from conftest import grid_cloud
from test_saliency import block_matrix

pytestmark = pytest.mark.acceptance

RESULTS: dict[int, bool] = {}


@pytest.fixture
def verdict(capsys):
    def emit(number, ok, detail):
        RESULTS[number] = bool(ok)
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return emit


# density robustness on synthetic scenes

RATIOS = (1.0, 0.5, 0.1, 0.05)
C1_PATCH = dict(extent=(6.0, 6.0), spacing=0.03, noise_sigma=0.005, jitter=0.25)
C1_THRESHOLDS = Thresholds(h_neg=0.006, h_pos=0.006, h_flat=0.0036, depth_smoothing=6)


def density_run(seed, ratio):
    scene, _ = generate_scene(seed, 1, SceneRanges(), RoadPatchParams(seed=seed, **C1_PATCH))
    sub = downsample(scene, ratio, seed)
    cloud = sub.cloud
    sal = compute_saliency_map(cloud, SaliencyConfig())
    plane = fit_road_plane(cloud, sal, inlier_tol=0.02)
    corridor = driving_corridor(VehicleState(position=(-3.1, 0.0, 0.0)), length=6.2, width=6.2)
    seg = classify_points(cloud, sal, plane, corridor, C1_THRESHOLDS)
    seg = seg.with_obstacles(extract_obstacles(seg, 0.3, 3))
    return cloud.m, report(confusion(seg.negative_mask(), sub.labels == 1))


def test_criterion_1_density_robustness(verdict):
    start = time.perf_counter()
    rp = {r: [] for r in RATIOS}
    np_ = {r: [] for r in RATIOS}
    fewest = math.inf
    for seed in range(20):
        for ratio in RATIOS:
            m, rep = density_run(seed, ratio)
            fewest = min(fewest, m)
            rp[ratio].append(float(rep.rp))
            np_[ratio].append(float(rep.np_))
    elapsed = time.perf_counter() - start
    mean_rp = {r: float(np.mean(v)) for r, v in rp.items()}
    mean_np = {r: float(np.mean(v)) for r, v in np_.items()}
    ok = (fewest >= 2000 and all(mean_rp[r] >= 99.0 and mean_np[r] <= 2.5 for r in RATIOS)
          and min(mean_rp.values()) >= 98.0 and elapsed < 600)
    detail = " ".join(f"r={r:g}:RP={mean_rp[r]:.2f},NP={mean_np[r]:.2f}" for r in RATIOS)
    verdict(1, ok, f"{detail} min_points={fewest} time={elapsed:.0f}s")
    assert ok


# planted low-rank plus sparse recovery

def test_criterion_3_planted_rpca(verdict):
    rng = np.random.default_rng(2024)
    worst_err, worst_time, non_monotone = 0.0, 0.0, 0
    for _ in range(50):
        m = int(rng.integers(200, 1001))
        L0, S0, _ = planted_instance(rng, 3 * m)
        E = L0 + S0
        t = time.perf_counter()
        res = fast_pcp(E, RpcaConfig(lam=robust_lambda(E), eps=0.1, polish=True, max_iter=500))
        worst_time = max(worst_time, time.perf_counter() - t)
        worst_err = max(worst_err, np.linalg.norm(res.L - L0) / np.linalg.norm(L0))
        non_monotone += not is_non_increasing(res.objective)
    ok = worst_err <= 1e-3 and non_monotone == 0 and worst_time < 2.0
    verdict(3, ok, f"worst_rel_err={worst_err:.2e} non_monotone={non_monotone} worst_time={worst_time:.3f}s")
    assert ok


def test_criterion_2_public_dataset(verdict):
    if 1 not in RESULTS or 3 not in RESULTS:
        pytest.skip("replacement path needs criteria 1 and 3 in the same run")
    ok = RESULTS[1] and RESULTS[3]
    verdict(2, ok, "replacement path: public pothole clouds not obtained; "
                   f"criterion 1 {'PASS' if RESULTS[1] else 'FAIL'}, criterion 3 {'PASS' if RESULTS[3] else 'FAIL'}")
    assert ok


# saliency closed forms

def test_criterion_4_saliency_closed_forms(verdict):
    flat = compute_saliency_map(grid_cloud(n=25), SaliencyConfig(k=16))
    interior = np.all((grid_cloud(n=25).vertices[:, :2] > 0.5) & (grid_cloud(n=25).vertices[:, :2] < 1.9), axis=1)
    flat_err = float(np.max(np.abs(flat.s2_raw[interior] - 1 / 17)))

    axes = np.eye(3)
    corner = block_matrix([np.repeat(axes, 2, axis=0)])
    corner_err = float(abs(spectral_saliency(corner)[0] - 1 / (2 * math.sqrt(3))))

    rng = np.random.default_rng(11)
    v = rng.uniform(-1, 1, (400, 3)) * [1, 1, 0.1]
    cloud = PointCloud(v, sensor_origin=(0, 0, 5))
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    moved = cloud.transformed(q, rng.normal(size=3))
    rigid_err = float(np.max(np.abs(compute_saliency_map(cloud).s2_raw - compute_saliency_map(moved).s2_raw)))

    ok = flat_err <= 1e-6 and corner_err <= 1e-9 and rigid_err <= 1e-6
    verdict(4, ok, f"flat_err={flat_err:.1e} corner_err={corner_err:.1e} rigid_err={rigid_err:.1e}")
    assert ok


# metrics oracle

def brute_force(pred, truth):
    tp = fp = tn = fn = 0
    for p, t in zip(pred, truth):
        if p and t:
            tp += 1
        elif p:
            fp += 1
        elif t:
            fn += 1
        else:
            tn += 1
    return tp, fp, tn, fn


def test_criterion_5_metrics_oracle(verdict):
    rng = np.random.default_rng(5)
    mismatches = complement_errors = 0
    for _ in range(1000):
        n = int(rng.integers(1, 400))
        pred = rng.random(n) < rng.random()
        truth = rng.random(n) < rng.random()
        tp, fp, tn, fn = brute_force(pred, truth)
        cm = confusion(pred, truth)
        rep = report(cm)
        expect_rp = Fraction(100 * tp, tp + fn) if tp + fn else None
        expect_np = Fraction(100 * fp, fp + tn) if fp + tn else None
        expect_acc = Fraction(tp + tn, n)
        if cm != ConfusionMatrix(tp, fp, tn, fn) or rep.rp != expect_rp or rep.np_ != expect_np \
                or rep.accuracy != expect_acc:
            mismatches += 1
        if rep.rp is not None and rep.rp + rep.nr != 100:
            complement_errors += 1
        if rep.rr is not None and rep.rr + rep.np_ != 100:
            complement_errors += 1
    f = f_score(0.953, 0.984)
    # inputs are published to three places; F over their rounding box must reach 0.969
    corners = [f_score(p, r) for p in (0.9525, 0.9535) for r in (0.9835, 0.9845)]
    reproduced = round(min(corners), 3) <= 0.969 <= round(max(corners), 3) and abs(f - 0.969) <= 1e-3
    ok = mismatches == 0 and complement_errors == 0 and reproduced
    verdict(5, ok, f"mismatches={mismatches} complement_errors={complement_errors} "
                   f"F={f:.5f} F_range=[{min(corners):.5f},{max(corners):.5f}]")
    assert ok


# projection golden image

GOLDEN_P3_SHA256 = "c7f8db77ee0418d0b03a4d31e4f79684e43ae53dda0fced94a00d2f987ff2c3f"


def golden_scene():
    """Dyadic coordinates so every projected pixel is exact in binary floating point."""
    xs = np.arange(-16, 16) * 0.25
    gx, gy = np.meshgrid(xs, xs, indexing="ij")
    z = 4.0 + 0.5 * ((np.abs(gx) + np.abs(gy)) < 1.5)
    pts = np.column_stack([gx.ravel(), gy.ravel(), z.ravel()])
    classes = ((gx * 4).astype(int) + (gy * 4).astype(int)).ravel() % 5
    return pts, classes


def test_criterion_6_projection_golden(verdict, tmp_path):
    pts, classes = golden_scene()
    cam = CameraModel(16, 16, 24, 24, 48, 48, (0.0, 0.0, -2.0))
    digests = []
    for name in ("a.ppm", "b.ppm"):
        image = fill_gaps(render_classes(pts, classes, cam), 1, 4)
        write_image(image, tmp_path / name)
        digests.append(hashlib.sha256((tmp_path / name).read_bytes()).hexdigest())
    seed = ClassImage.empty(9, 9)
    seed.classes[4, 4], seed.depth[4, 4] = 1, 1.0
    plus = int(fill_gaps(seed, 1, 4).filled().sum())
    full = fill_gaps(seed, 100, 4)
    ok = digests[0] == digests[1] == GOLDEN_P3_SHA256 and plus == 5 and full.filled().all()
    verdict(6, ok, f"sha256={digests[0][:16]} stable={digests[0] == digests[1]} "
                   f"plus={plus} empty_after_full_fill={int((~full.filled()).sum())}")
    assert ok


# registry lifecycle and two-agent replay

def wait_pending(client, timeout):
    deadline = time.monotonic() + timeout
    while client.alerts_pending() == 0 and time.monotonic() < deadline:
        time.sleep(0.01)
    return client.alerts_pending() > 0


def test_criterion_7_registry_lifecycle(verdict, tmp_path):
    start = time.perf_counter()
    cfg = RegistryConfig()
    checks = {}

    state = RegistryState()
    base = make_report()
    first = apply_report(state, base, cfg)
    checks["idempotent"] = apply_report(state, base, cfg) == ("kept", first[1]) and len(state.events) == 1
    checks["keep_1.10"] = apply_report(state, scaled(base, 1.10), cfg)[0] == "kept"
    checks["replace_1.20"] = apply_report(state, scaled(base, 1.20), cfg)[0] == "replaced"
    checks["delete"] = apply_report(state, make_report(observed=False), cfg)[0] == "deleted"
    apply_report(state, make_report(x=20), cfg)
    checks["replay"] = replay_events(state.events).records == state.records

    log = tmp_path / "events.log"
    server_cfg = RegistryConfig(endpoint="127.0.0.1:0", log_path=str(log))
    frames = corridor_frames()
    with RegistryServer(server_cfg) as srv:
        with RegistryClient(srv.endpoint) as ego1, RegistryClient(srv.endpoint) as ego2:
            ego2.query(frames[0][1].position[:2], cfg.alert_radius)
            one = agent_replay(frames, ego1, corridor_config(), "ego1")
            delivered = wait_pending(ego2, 5)
            two = agent_replay(frames, ego2, corridor_config(), "ego2")
        live = srv.registry.state.records
    early = two.early_alerts()
    own = two.first_detection()
    checks["two_agent"] = (delivered and not one.aborted and not two.aborted and bool(early)
                           and all(rid in own and frame < own[rid] for rid, frame, _ in early))
    checks["log_replay"] = load_state(log).records == live
    elapsed = time.perf_counter() - start
    ok = all(checks.values()) and elapsed < 60
    shown = " ".join(f"{k}={'ok' if v else 'no'}" for k, v in checks.items())
    alert_at = early[0][1] if early else None
    detect_at = early[0][2] if early else None
    verdict(7, ok, f"{shown} alert_frame={alert_at} detection_frame={detect_at} time={elapsed:.1f}s")
    assert ok


# end-to-end determinism

def test_criterion_8_detect_determinism(verdict, tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("synth.length = 6\nsynth.width = 6\nsynth.potholes = 2\nvehicle.x = -3\n"
                   "corridor_length = 6\ncorridor_width = 6\nh_neg = 0.01\nh_pos = 0.01\nh_flat = 0.005\n")
    assert cli_main(["synth", "--config", str(cfg), "--seed", "7", "--output", str(tmp_path / "s")]) == 0
    outputs = []
    for run in ("a", "b"):
        code = cli_main(["detect", "--config", str(cfg), "--input", str(tmp_path / "s/scene.xyz"),
                         "--output", str(tmp_path / run)])
        outputs.append((code, (tmp_path / run / "obstacles.txt").read_bytes(),
                        (tmp_path / run / "segmented.txt").read_bytes()))
    n = len([l for l in outputs[0][1].splitlines() if l and not l.startswith(b"#")])
    ok = outputs[0][0] == 0 and outputs[0] == outputs[1] and n > 0
    verdict(8, ok, f"identical={outputs[0] == outputs[1]} obstacles={n}")
    assert ok
