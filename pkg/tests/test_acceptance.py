"""Acceptance suite: the ten primary criteria at their stated tolerances.

Each test carries an ``acceptance`` mark; the terminal summary prints one
PASS/FAIL line per criterion. Criterion 7 trains the default model for 500
iterations and takes about five minutes.
"""

import dataclasses
import os
import re
import time

import numpy as np
import pytest
import yaml

from daccn import autodiff as ad
from daccn import checks, cli
from daccn import config as cfgmod
from daccn.autodiff import Tensor
from daccn.geometry import (CameraIntrinsics, RigidTransform, backproject, pixel_grid,
                            project, warp_image)
from daccn.losses import photometric_loss, smoothness_loss, ssim
from daccn.metrics import depth_metrics
from daccn.model import ModelConfig, forward_macs, init_model
from daccn.ops import (ConvBlock, CumulativeConvParams, DirectionScales,
                       cumulative_convolution, direction_aware_block)
from daccn.synthdata import SceneSpec, dataset, photometric_self_check, split
from daccn.train import train

from oracles import cc_oracle, measured_plane_shift

pytestmark = pytest.mark.slow

TINY = {
    "model": {"branch_channels": [4, 4, 6, 6], "input_h": 32, "input_w": 48},
    "data": {"scene": {"image_h": 32, "image_w": 48}, "count": 6},
    "iterations": 3,
}


def note(request, text):
    request.node.user_properties.append(("detail", text))


@pytest.fixture(scope="module")
def default_run():
    return cfgmod.from_dict({})


@pytest.fixture(scope="module")
def default_samples(default_run):
    t0 = time.perf_counter()
    samples = list(dataset(default_run.data.scene, default_run.data.count, default_run.data.seed))
    return samples, time.perf_counter() - t0


@pytest.fixture(scope="module")
def tiny_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("acc") / "tiny.yaml"
    path.write_text(yaml.safe_dump(TINY))
    return str(path)


@pytest.mark.acceptance(1, "gradient suite over every differentiable op")
def test_gradient_suite(request):
    required = {"conv2d", "bilinear_sample_values", "bilinear_sample_grid", "cumsum_from_bottom",
                "elementwise_add", "elementwise_sub", "elementwise_mul", "elementwise_div",
                "activation_elu", "activation_sigmoid", "upsample_nearest2x",
                "direction_aware_block_weights", "direction_aware_block_log_scales",
                "cumulative_convolution", "ssim", "photometric_loss", "smoothness_loss",
                "warp_image_depth"}
    assert required <= set(checks.REGISTRY)
    t0 = time.perf_counter()
    results = checks.run_all()
    elapsed = time.perf_counter() - t0
    print("\n" + checks.format_results(results, timings=True))
    worst = max(results, key=lambda r: r.max_rel_error / r.tol)
    note(request, f"{len(results)} ops, worst {worst.name} {worst.max_rel_error:.1e} "
                  f"(tol {worst.tol:.0e}), {elapsed:.1f}s")
    for r in results:
        assert r.tol <= (1e-4 if r.tol > 1e-5 else 1e-5)
        assert r.passed, f"{r.name}: {r.max_rel_error:.3e} >= {r.tol:.0e}"
    assert elapsed < 60.0
    assert not checks.run_case(checks.NEGATIVE_CONTROL).passed


@pytest.mark.acceptance(2, "cumulative convolution equals the brute-force oracle")
def test_cc_oracle(request):
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(50):
        n, c = rng.integers(1, 3), rng.integers(1, 4)
        h, w = rng.integers(1, 9), rng.integers(1, 9)
        f = rng.integers(1, 5)
        x = rng.normal(size=(n, c, h, w))
        k, b = rng.normal(size=(f, c, 3, 3)), rng.normal(size=f)
        out = cumulative_convolution(Tensor(x), CumulativeConvParams(Tensor(k), Tensor(b))).data
        worst = max(worst, float(np.max(np.abs(out - cc_oracle(x, k, b)))))
    note(request, f"50 tensors, max |diff| {worst:.1e}")
    assert worst < 1e-12


@pytest.mark.acceptance(3, "identity ablation is bit-identical")
def test_identity_ablation(request):
    rng = np.random.default_rng(3)
    for shape in [(1, 2, 5, 6), (2, 3, 8, 8), (1, 4, 6, 10)]:
        c = shape[1]
        x = Tensor(rng.normal(size=shape))
        block = ConvBlock(Tensor(rng.normal(size=(5, c, 3, 3))), Tensor(rng.normal(size=5)),
                          Tensor(rng.normal(size=(5, 5, 3, 3))), Tensor(rng.normal(size=5)))
        assert np.array_equal(direction_aware_block(x, DirectionScales.unit(), block).data,
                              block(x).data)
    cfg = ModelConfig()
    on = init_model(cfg)
    on.freeze_scales()
    off = init_model(dataclasses.replace(cfg, enable_dam=False))
    images = Tensor(rng.uniform(size=(2, 3, cfg.input_h, cfg.input_w)))
    for a, b in zip(on(images), off(images)):
        assert a.data.tobytes() == b.data.tobytes()
    note(request, "block and default model outputs byte-equal")


@pytest.mark.acceptance(4, "geometry roundtrips")
def test_geometry(request):
    rng = np.random.default_rng(4)
    K = CameraIntrinsics.for_image(96, 160)
    depth = rng.uniform(0.1, 100.0, size=(2, 1, 96, 160))
    uv = project(backproject(Tensor(depth), K), K).data
    xs, ys = pixel_grid(96, 160)
    round_trip = max(np.max(np.abs(uv[:, 0] - xs)), np.max(np.abs(uv[:, 1] - ys)))
    assert round_trip < 1e-9

    src = rng.uniform(size=(2, 3, 96, 160))
    synth, mask = warp_image(Tensor(src), Tensor(depth), RigidTransform.identity(), K)
    keep = mask.data.astype(bool).repeat(3, axis=1)
    assert keep.all() and np.array_equal(synth.data[keep], src[keep])

    shifts = []
    for z, tx in [(4.0, 0.2), (8.0, 0.4), (12.0, -0.5), (20.0, 0.9), (6.0, -0.25)]:
        analytic, fitted = measured_plane_shift(depth=z, tx=tx)
        shifts.append(abs(fitted - analytic))
    note(request, f"roundtrip {round_trip:.1e}, identity warp exact, "
                  f"shift error {max(shifts):.1e} px")
    assert max(shifts) < 0.01


@pytest.mark.acceptance(5, "loss fixed points")
def test_loss_fixed_points(request, default_samples):
    rng = np.random.default_rng(5)
    images = [s.target[None] for s in default_samples[0][:4]] + \
        [rng.uniform(size=(1, 3, 12, 16)) for _ in range(4)]
    worst = 0.0
    for img in images:
        I = Tensor(img)
        full = Tensor(np.ones((1, 1) + img.shape[2:]))
        assert photometric_loss([(I, full)], I).data.item() == 0.0
        assert np.allclose(ssim(I, I).data, 1.0, rtol=0, atol=1e-12)
        const = Tensor(np.full((1, 1) + img.shape[2:], 0.37))
        assert smoothness_loss(const, I).data.item() == 0.0
        d = rng.uniform(0.01, 0.9, size=(1, 1) + img.shape[2:])
        base = smoothness_loss(Tensor(d), I).data.item()
        for c in (1e-3, 0.3, 4.0, 1e3):
            worst = max(worst, abs(smoothness_loss(Tensor(c * d), I).data.item() - base))
    note(request, f"scale-invariance deviation {worst:.1e}")
    assert worst < 1e-9


@pytest.mark.acceptance(6, "synthetic-data self-check")
def test_synthetic_self_check(request, default_samples):
    samples = list(default_samples[0])
    samples += list(dataset(SceneSpec(image_h=32, image_w=48), 40, seed=606))
    errs = [err for s in samples for err, _ in photometric_self_check(s)]
    note(request, f"{len(samples)} scenes, max masked L1 {max(errs):.4f}")
    assert max(errs) < 0.02


@pytest.mark.acceptance(7, "training convergence on the default toy config")
def test_training_convergence(request, default_run, default_samples):
    run = default_run
    assert (run.model.input_h, run.model.input_w, run.iterations, run.batch_size,
            run.pose_mode) == (96, 160, 500, 2, "ground_truth")
    samples, gen_seconds = default_samples
    tr, va = split(samples)
    t0 = time.perf_counter()
    result = train(run, tr, va)
    seconds = time.perf_counter() - t0 + gen_seconds
    first, last = result.window_means(window=20)
    abs_rel = result.report.abs_rel
    note(request, f"loss {first:.4f} -> {last:.4f} (ratio {last / first:.2f}), "
                  f"Abs Rel {abs_rel:.3f}, {seconds:.0f}s")
    assert seconds < 600.0
    assert last < 0.5 * first
    assert abs_rel < 0.25


@pytest.mark.acceptance(8, "metric unit values")
def test_metric_unit_values(request):
    gt = np.random.default_rng(8).uniform(1.0, 45.0, size=(1, 96, 160))  # 2x stays under the clamp
    r = depth_metrics(1.1 * gt, gt, median_scaling=False)
    assert abs(r.abs_rel - 0.1) <= 1e-9 and r.delta1 == 1.0
    r = depth_metrics(gt, gt, median_scaling=False)
    assert (r.abs_rel, r.sq_rel, r.rmse, r.rmse_log) == (0.0, 0.0, 0.0, 0.0)
    assert (r.delta1, r.delta2, r.delta3) == (1.0, 1.0, 1.0)
    r = depth_metrics(2.0 * gt, gt, median_scaling=False)
    assert (r.delta1, r.delta2, r.delta3) == (0.0, 0.0, 0.0)
    note(request, "1.1x, 1x and 2x cases exact")


def _table_rows(text, first_col):
    lines = text.splitlines()
    start = next(i for i, l in enumerate(lines) if l.split("|")[0].strip() == first_col)
    header = [c.strip() for c in lines[start].split("|")]
    rows = []
    for line in lines[start + 2:]:
        if "|" not in line:
            break
        rows.append([c.strip() for c in line.split("|")])
    return header, rows, lines


@pytest.mark.acceptance(9, "methodology tables")
def test_methodology_tables(request, tmp_path, tiny_config, capsys):
    out = str(tmp_path)
    assert cli.main(["stretch", "--config", tiny_config, "--out", out]) == 0
    assert cli.main(["ablate", "--config", tiny_config, "--out", out]) == 0
    capsys.readouterr()

    header, rows, lines = _table_rows(open(os.path.join(out, "stretch.txt")).read(), "setting")
    assert lines[0].startswith("# desk-scale")
    assert header == ["setting", "input", "Abs Rel", "RMSE", "FLOPs-estimate (MACs)", "x orig"]
    assert [r[0] for r in rows] == ["original", "horizontal stretch", "vertical stretch",
                                    "equal stretch"]
    macs = [int(r[4]) for r in rows]
    assert [m / macs[0] for m in macs] == [1.0, 2.0, 2.0, 4.0]
    default = ModelConfig()
    base = forward_macs(default)
    for fy, fx, k in [(1, 2, 2), (2, 1, 2), (2, 2, 4)]:
        cfg = dataclasses.replace(default, input_h=96 * fy, input_w=160 * fx)
        assert forward_macs(cfg) == k * base
    stretch_obs = next(l for l in lines if l.startswith("observation"))

    header, rows, lines = _table_rows(open(os.path.join(out, "ablation.txt")).read(), "variant")
    assert header == ["variant", "DaM", "CC", "Abs Rel", "RMSE", "d<1.25"]
    assert [r[0] for r in rows] == ["neither", "DaM", "CC", "DaM + CC"]
    assert [(r[1], r[2]) for r in rows] == [("", ""), ("x", ""), ("", "x"), ("x", "x")]
    scale_lines = [l for l in lines if re.search(r"branch \d s_x=", l)]
    assert len(scale_lines) == 8
    ablate_obs = next(l for l in lines if l.startswith("observation"))
    note(request, f"FLOPs x1/x2/x2/x4; {stretch_obs.split(': ', 1)[1]}; "
                  f"{ablate_obs.split(': ', 1)[1]}")


@pytest.mark.acceptance(10, "determinism of command reruns")
def test_determinism(request, tmp_path, tiny_config, capsys):
    out = str(tmp_path / "run")
    sets = ["--set", "iterations=8", "--set", "data.count=4"]
    default_cmd = ["train", "--out", out] + sets
    tiny_cmds = [["train", "--config", tiny_config, "--out", out],
                 ["stretch", "--config", tiny_config, "--out", out],
                 ["ablate", "--config", tiny_config, "--out", out],
                 ["eval", "--checkpoint", os.path.join(out, "checkpoint.npz"), "--out", out]]
    files = ["config.yaml", "loss_trace.tsv", "checkpoint.npz", "metrics.tsv", "metrics.txt",
             "stretch.txt", "ablation.txt", "eval_metrics.tsv"]

    def run_all():
        stdout = []
        for cmd in [default_cmd] + tiny_cmds:
            assert cli.main(cmd) == 0
            stdout.append(capsys.readouterr().out)
            if cmd is default_cmd:
                default_bytes = {f: open(os.path.join(out, f), "rb").read()
                                 for f in ("loss_trace.tsv", "metrics.tsv", "checkpoint.npz")}
        assert cli.main(["gradcheck"]) == 0
        stdout.append(capsys.readouterr().out)
        snapshot = {f: open(os.path.join(out, f), "rb").read() for f in files}
        return default_bytes, snapshot, stdout

    first = run_all()
    second = run_all()
    assert first[0] == second[0]
    for f in files:
        assert first[1][f] == second[1][f], f
    assert first[2] == second[2]
    note(request, f"{len(files)} tiny-config artifacts, default-size trace/metrics/checkpoint "
                  f"and stdout of 6 commands byte-identical")
