"""Compare the compiled and NumPy cascade kernels.

    python3 benchmarks/bench_kernels.py [--repeat N]

Times the policy forward pass, one f=7 pattern through the amplifier chain,
and a full extrapolated capacity evaluation on the f=2 link, per backend.
The surrogate has random weights: timing does not depend on training.
"""

import argparse
import timeit

import numpy as np

from gffopt import edfa, kernels, link, nn, optimizer, perf


def random_surrogate(seed=0):
    net = nn.DenseNetwork.init([90, 100, 89], ["relu", "identity"], seed=seed)
    net.layers[-1].weights *= 0.01
    in_mean = np.r_[np.full(89, -12.5), 500.0]
    in_std = np.r_[np.full(89, 2.0), 200.0]
    return edfa.SurrogateModel(net, in_mean, in_std, np.full(89, 10.0), {})


def cases(model):
    pol = optimizer.Policy.create(np.random.default_rng(0))
    x = pol.features(optimizer.random_spectrum(np.random.default_rng(1)).power_dbm)
    launch = link.LaunchProfile.flat(17.0)
    runner7 = link.PatternRunner(link.design_link(7), model, 5.0)
    env2 = optimizer.LinkEnv(link.design_link(2), model, 5.0)
    state = link.ChannelState.launch(launch)
    rng = np.random.default_rng(2)
    spectra = [optimizer.random_spectrum(rng) for _ in range(64)]
    it = iter(range(10**9))

    def fresh_capacity():
        # distinct spectra so the environment cache never hits
        return env2.capacity(link.LaunchProfile(spectra[next(it) % 64].power_dbm + 1e-9 * next(it)))

    return {
        "policy forward (89-128-128)": lambda: pol.probs(x),
        "f=7 pattern (7 amplifiers)": lambda: runner7.run(state, launch.power_w),
        "f=2 capacity evaluation": fresh_capacity,
        "conventional link, explicit (250 patterns)": lambda: perf.evaluate(
            launch, link.design_link(1), model, 5.0
        ),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    model = random_surrogate()
    names = [b for b in ("python", "cython") if b in kernels.BACKENDS]
    if "cython" not in names:
        print("compiled kernels not built; timing the NumPy backend only")
    results = {}
    for backend in names:
        kernels.use_backend(backend)
        for label, fn in cases(model).items():
            fn()  # warm up
            n, _ = timeit.Timer(fn).autorange()
            best = min(timeit.repeat(fn, number=n, repeat=args.repeat)) / n
            results[(label, backend)] = best
    labels = list(cases(model))
    print(f"{'case':44s}" + "".join(f"{b:>14s}" for b in names) + ("     speed-up" if len(names) == 2 else ""))
    for label in labels:
        row = [results[(label, b)] for b in names]
        line = f"{label:44s}" + "".join(f"{t * 1e6:11.1f} us" for t in row)
        if len(row) == 2:
            line += f"{row[0] / row[1]:12.1f}x"
        print(line)


if __name__ == "__main__":
    main()
