"""Compare the numba and numpy backends of the image kernels.

    python3 benchmarks/bench_kernels.py [--size 256] [--repeat 5]

Each kernel is warmed up once per backend (this triggers numba compilation),
then timed as the best of ``--repeat`` runs. Outputs of the two backends are
checked for agreement before timings are printed. The last rows time whole
metric and dehazing calls, which is what users actually pay for.
"""
import argparse
import time

import numpy as np

from hazegan import _accel, dcp, kernels, metrics


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--size", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    gray = rng.uniform(size=(args.size, args.size))
    img = rng.uniform(size=(args.size, args.size, 3))
    img2 = np.clip(img + 0.05 * rng.standard_normal(img.shape), 0, 1)
    gauss = metrics.gaussian_kernel()

    cases = {
        "min_filter(15)": lambda: kernels.min_filter(gray, 15),
        "box_mean(r=40)": lambda: kernels.box_mean(gray, 40),
        "sobel": lambda: kernels.sobel(gray),
        "separable_valid(11)": lambda: kernels.separable_valid(gray, gauss),
        "local_mean_std(5)": lambda: kernels.local_mean_std(gray, 5),
        "ssim": lambda: metrics.ssim(img, img2),
        "no-reference metrics": lambda: metrics.image_metrics(img, img2),
        "dcp_dehaze": lambda: dcp.dcp_dehaze(img),
    }
    if not _accel.HAVE_NUMBA:
        print("numba is not installed; only the numpy backend is available")
    names = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])

    results = {}
    for backend in names:
        with _accel.backend(backend):
            for case, fn in cases.items():
                results[backend, case] = (best_of(fn, args.repeat), fn())

    if len(names) == 2:
        for case in cases:
            pairs = zip(_arrays(results["numpy", case][1]), _arrays(results["numba", case][1]))
            for x, y in pairs:
                np.testing.assert_allclose(x, y, rtol=1e-9, atol=1e-12, err_msg=case)

    print(f"{args.size}x{args.size}, best of {args.repeat}")
    header = f"{'kernel':<24}" + "".join(f"{n + ' ms':>12}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for case in cases:
        row = f"{case:<24}" + "".join(f"{1e3 * results[n, case][0]:>12.2f}" for n in names)
        if len(names) == 2:
            row += f"{results['numpy', case][0] / results['numba', case][0]:>9.1f}x"
        print(row)


def _arrays(x):
    if isinstance(x, dict):
        return [v for v in x.values() if isinstance(v, float)]
    if isinstance(x, tuple):
        return list(x)
    return [x]


if __name__ == "__main__":
    main()
