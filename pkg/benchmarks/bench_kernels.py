"""Compare the compiled and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat N] [--batch B]

Each kernel runs on identical inputs under both backends. The script reports
the best-of-N wall time and checks that the two results agree.
"""
import argparse
import timeit

import numpy as np

from rerec.kernels import get_backend


def mlp_inputs(rng, batch, dims):
    weights = [rng.normal(0, 0.2, (a, b)) for a, b in zip(dims[:-1], dims[1:])]
    biases = [rng.normal(0, 0.1, b) for b in dims[1:]]
    x = rng.normal(size=(batch, dims[0]))
    return weights, biases, x


def mf_inputs(rng, n_users=200, n_items=200, n_events=20_000, d=32):
    users = rng.integers(0, n_users, n_events).astype(np.int64)
    items = rng.integers(0, n_items, n_events).astype(np.int64)
    rewards = rng.random(n_events)
    order = rng.permutation(n_events).astype(np.int64)
    P = rng.normal(0, 0.1, (n_users, d))
    Q = rng.normal(0, 0.1, (n_items, d))
    return users, items, rewards, order, P, Q, np.zeros(n_users), np.zeros(n_items)


def cases(batch):
    rng = np.random.default_rng(0)
    dims = [1 + 2 * 32 + 16, 64, 64, 1]          # the default noise-prediction net
    weights, biases, x = mlp_inputs(rng, batch, dims)
    grad_out = rng.normal(size=(batch, 1))
    mf = mf_inputs(rng)

    def forward(k):
        return k.mlp_forward(weights, biases, x, True)[-1]

    def backward(k):
        acts = k.mlp_forward(weights, biases, x, True)
        return k.mlp_backward(weights, acts, grad_out, True)[2]

    def mf_epoch(k):
        users, items, rewards, order, P, Q, bu, bi = mf
        P, Q, bu, bi = P.copy(), Q.copy(), bu.copy(), bi.copy()
        k.mf_sgd_epoch(users, items, rewards, order, P, Q, bu, bi, 0.5, 0.01, 0.01)
        return P

    return {"mlp_forward": forward, "mlp_forward+backward": backward, "mf_sgd_epoch (20k events)": mf_epoch}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--batch", type=int, default=1024)
    args = parser.parse_args(argv)

    backends = {"python": get_backend("python")}
    try:
        backends["compiled"] = get_backend("compiled")
    except ImportError:
        print("compiled extension not built; timing the python backend only")

    print(f"{'kernel':28s} {'backend':9s} {'best ms':>9s} {'speedup':>8s}")
    for name, fn in cases(args.batch).items():
        times, outputs = {}, {}
        for label, k in backends.items():
            outputs[label] = fn(k)
            times[label] = min(timeit.repeat(lambda: fn(k), number=1, repeat=args.repeat))
        for label in backends:
            speedup = times["python"] / times[label]
            print(f"{name:28s} {label:9s} {1e3 * times[label]:9.2f} {speedup:7.1f}x")
        if len(outputs) == 2:
            diff = float(np.max(np.abs(outputs["python"] - outputs["compiled"])))
            print(f"{'':28s} max |python - compiled| = {diff:.2e}")


if __name__ == "__main__":
    main()
