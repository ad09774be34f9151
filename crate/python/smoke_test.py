#!/usr/bin/env python3
"""Smoke test for the motionctrl_py extension module.

Build the extension first, then run this script:

    cargo build --release -p motionctrl-py
    cp target/release/libmotionctrl_py.so python/motionctrl_py.so
    python3 python/smoke_test.py
"""

import json
import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import motionctrl_py as mc

CHECKS = []


def check(name, ok, detail=""):
    CHECKS.append((name, ok))
    print(f"{'PASS' if ok else 'FAIL'}  {name}  {detail}")


def main():
    # Tensor arithmetic and reverse-mode gradients.
    a = mc.Tensor([2, 2], [1.0, 2.0, 3.0, 4.0], requires_grad=True)
    b = mc.Tensor([2, 1], [0.0, 1.0])
    prod = a.matmul(b)
    check("matmul", prod.data() == [2.0, 4.0])
    loss = prod.mul(prod).sum_all()
    loss.backward()
    check("backward populates grad", a.grad() is not None)

    # Adam: zero gradient leaves parameters unchanged.
    p = mc.Tensor([3], [1.0, -1.0, 0.5], requires_grad=True)
    p.mul_scalar(0.0).sum_all().backward()
    state = mc.AdamState(0.1)
    state.step([("p", p)])
    check("adam zero-grad identity", p.data() == [1.0, -1.0, 0.5])

    # Attention with a single timestep returns the values exactly.
    q = mc.Tensor.randn([2, 1, 4], seed=1)
    k = mc.Tensor.randn([2, 1, 4], seed=2)
    v = mc.Tensor.randn([2, 1, 4], seed=3)
    out = mc.attention(q, k, v)
    check("attention T=1 passthrough", out.data() == v.data())

    # Camera poses: generation, flattening, metric.
    ps = mc.PoseSequence.basic("pan_right", 4, 0.1)
    flat = ps.flatten()
    check("pose flatten shape", flat.shape == [4, 12])
    row3 = flat.data()[3 * 12:]
    check("pan_right T_x ramp", abs(row3[9] - 0.3) < 1e-6, f"T={row3[9:]}")
    check("cammc self-distance", mc.cammc(ps, ps) == 0.0)
    back = mc.PoseSequence.from_json(ps.to_json())
    check("pose json round trip", mc.cammc(back, ps) == 0.0)

    line = "1000 0.9 1.6 0.5 0.5 0 0 1 0 0 0 0 1 0 0 0 0 1 0\n"
    parsed, intr = mc.parse_realestate_poses(line)
    check("realestate parse", len(parsed) == 1 and intr[0][0] == 0.9)

    # Trajectories: displacement encoding matches the hand example.
    m = mc.encode_displacement([[(2.0, 3.0), (4.0, 6.0), (5.0, 5.0)]], 8, 8)
    check("displacement map shape", m.shape == [3, 8, 8, 2])
    d = m.data()
    idx = lambda f, y, x, c: ((f * 8 + y) * 8 + x) * 2 + c
    ok = (
        d[idx(1, 6, 4, 0)] == 2.0
        and d[idx(1, 6, 4, 1)] == 3.0
        and d[idx(2, 5, 5, 0)] == 1.0
        and d[idx(2, 5, 5, 1)] == -1.0
        and all(v == 0.0 for i, v in enumerate(d) if i not in
                {idx(1, 6, 4, 0), idx(1, 6, 4, 1), idx(2, 5, 5, 0), idx(2, 5, 5, 1)})
    )
    check("displacement encoding exact", ok)

    delta = mc.encode_displacement([[(16.0, 16.0), (17.0, 16.0)]], 32, 32)
    blurred = mc.gaussian_filter_map(delta, 1.5)
    frame1 = blurred.data()[1 * 32 * 32 * 2:2 * 32 * 32 * 2]
    total_u = sum(frame1[i] for i in range(0, len(frame1), 2))
    check("gaussian filter keeps mass", abs(total_u - 1.0) < 1e-5, f"sum u={total_u:.6f}")

    traj = mc.make_bezier_trajectory(5, [(0.0, 0.0), (8.0, 4.0)], 16, 16)
    check("bezier endpoints", traj[0] == (0.0, 0.0) and abs(traj[-1][0] - 8.0) < 1e-9)
    check("objmc offset", abs(mc.objmc([[(3.0, 4.0)]], [[(0.0, 0.0)]]) - 5.0) < 1e-9)

    picked = mc.sample_sparse([[(float(i), 0.0)] for i in range(8)], 3, seed=5)
    check("sparse sample", len(picked) == 3)

    # Diffusion schedule and forward noising.
    ns = mc.NoiseSchedule(200, 1e-4, 0.02)
    ab = ns.alpha_bar
    check("alpha_bar decreasing", all(x > y for x, y in zip(ab, ab[1:])))
    z0 = mc.Tensor([4], [1.0, 1.0, 1.0, 1.0])
    zt = mc.q_sample(z0, 10, mc.Tensor.zeros([4]), ns)
    check("q_sample zero-noise scale", abs(zt.data()[0] - math.sqrt(ab[10])) < 1e-6)
    check("noise_loss offset", abs(mc.noise_loss(z0, mc.Tensor.zeros([4])).item() - 1.0) < 1e-6)

    # A tiny model: shapes and adapter neutrality at initialization.
    cfg = {
        "frames": 2, "height": 8, "width": 8,
        "base_channels": 8, "channel_mults": [1, 2], "heads": 2,
        "vocab_size": 22, "text_embed_dim": 8, "timesteps": 20,
    }
    model = mc.UNet(json.dumps(cfg), seed=11)
    z = mc.Tensor.randn([2, 3, 8, 8], seed=4)
    rt = mc.PoseSequence.basic("zoom_in", 2, 0.1).flatten()
    tm = mc.encode_displacement([[(2.0, 2.0), (4.0, 4.0)]], 8, 8)
    eps_plain = model.forward(z, 3, [1, 2])
    eps_cond = model.forward(z, 3, [1, 2], rt=rt, trajectory_map=tm)
    check("forward shape", eps_plain.shape == [2, 3, 8, 8])
    check(
        "adapter neutrality at init",
        eps_plain.data() == eps_cond.data(),
    )
    check("parameter count positive", model.parameter_count() > 0)

    # Synthetic rendering and the motion-recovery oracles.
    ds_cfg = {
        "samples": 1, "frames": 8, "height": 32, "width": 32,
        "supersample": 4, "pixels_per_unit": 16.0, "seed": 3,
        "sprite_min": 1, "sprite_max": 1, "sprite_radius": 2.4,
        "dense_cluster": 8,
    }
    sample = mc.render_sample(json.dumps(ds_cfg), seed=9)
    video = sample["video"]
    check("render shape", video.shape == [8, 32, 32, 3])
    est = mc.estimate_camera_motion(video, pixels_per_unit=16.0)
    gt = mc.PoseSequence.from_json(sample["poses_json"])
    err = mc.cammc(est, gt)
    check("camera recovery", err < 0.01, f"cammc={err:.5f}")
    det = mc.detect_object_trajectory(video, sample["sprite_colors"][0])
    obj_err = mc.objmc([det], [sample["trajectories"][0]])
    check("object detection", obj_err < 0.5, f"objmc={obj_err:.3f}")

    failed = [name for name, ok in CHECKS if not ok]
    print(f"\n{len(CHECKS) - len(failed)}/{len(CHECKS)} checks passed")
    if failed:
        sys.exit(1)


if __name__ == "__main__":
    main()
