#!/usr/bin/env python3
"""Time the numba kernels against their numpy fallbacks.

Both paths are imported directly, so the BLADESEG_BACKEND flag does not
matter here.  Each pair is checked for agreement before it is timed.

    python benchmarks/bench_kernels.py --repeat 5
"""

import argparse
import time
from dataclasses import replace

import numpy as np

from bladeseg.kernels import conv, raster
from bladeseg.renderer import screen_triangles, triangle_colors
from bladeseg.scene import build_mesh, sample_scene


def best_of(fn, repeat):
    fn()  # warm-up (compiles the numba version)
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def raster_case(size):
    scene = sample_scene(0, 3)
    scene = replace(scene, camera=replace(scene.camera, image_width=size, image_height=size))
    mesh = build_mesh(scene.turbine, scene.defect)
    sx, sy, inv_z, src = screen_triangles(mesh, scene.camera)
    colors = np.ascontiguousarray(triangle_colors(mesh, scene)[src])
    labels = np.ascontiguousarray(mesh.labels[src])
    args = [np.ascontiguousarray(a) for a in (sx, sy, inv_z)] + [colors, labels]

    def run(kernel):
        rgb = np.zeros((size, size, 3), np.uint8)
        mask = np.zeros((size, size), np.uint8)
        depth = np.full((size, size), np.inf)
        kernel(*args, rgb, mask, depth)
        return rgb, mask, depth

    a, b = run(raster.rasterize_triangles_numba), run(raster.rasterize_triangles_numpy)
    assert all(np.array_equal(x, y) for x, y in zip(a, b)), "raster backends disagree"
    return f"raster {len(src)} tris @ {size}^2", lambda: run(raster.rasterize_triangles_numba), \
        lambda: run(raster.rasterize_triangles_numpy)


def conv_cases(size, seed=0):
    rng = np.random.default_rng(seed)
    cases = []
    # representative U-Net layers: first level, a deeper level, the bottleneck
    for c_in, c_out, hw in ((8, 8, size), (16, 32, size // 4), (32, 64, size // 8)):
        xp = rng.standard_normal((c_in, hw + 2, hw + 2)).astype(np.float32)
        w = rng.standard_normal((c_out, c_in, 3, 3)).astype(np.float32)
        b = rng.standard_normal(c_out).astype(np.float32)
        dout = rng.standard_normal((c_out, hw, hw)).astype(np.float32)

        def fwd(kernel, xp=xp, w=w, b=b, c_out=c_out, hw=hw):
            return kernel(xp, w, b, np.empty((c_out, hw, hw), np.float32))

        def dw(kernel, xp=xp, dout=dout, w=w):
            return kernel(xp, dout, np.empty(w.shape, np.float32))

        f_nb, f_np = fwd(conv.conv2d_forward_numba), fwd(conv.conv2d_forward_numpy)
        g_nb, g_np = dw(conv.conv2d_weight_grad_numba), dw(conv.conv2d_weight_grad_numpy)
        scale = np.abs(f_np).max()
        assert np.abs(f_nb - f_np).max() <= 1e-4 * scale, "conv forward backends disagree"
        assert np.abs(g_nb - g_np).max() <= 1e-4 * np.abs(g_np).max(), "conv dw backends disagree"
        tag = f"{c_in}->{c_out} @ {hw}^2"
        cases.append((f"conv fwd {tag}", lambda f=fwd: f(conv.conv2d_forward_numba),
                      lambda f=fwd: f(conv.conv2d_forward_numpy)))
        cases.append((f"conv dw  {tag}", lambda f=dw: f(conv.conv2d_weight_grad_numba),
                      lambda f=dw: f(conv.conv2d_weight_grad_numpy)))
    return cases


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0],
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("--repeat", type=int, default=5, help="timed runs per kernel (best is kept)")
    parser.add_argument("--size", type=int, default=128, help="image side in pixels")
    args = parser.parse_args(argv)

    cases = [raster_case(args.size)] + conv_cases(args.size)
    print(f"{'kernel':<34}{'numba ms':>10}{'numpy ms':>10}{'speedup':>9}")
    for name, fast, slow in cases:
        t_nb = best_of(fast, args.repeat)
        t_np = best_of(slow, args.repeat)
        print(f"{name:<34}{1e3 * t_nb:>10.2f}{1e3 * t_np:>10.2f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
