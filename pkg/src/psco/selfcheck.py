"""Quick invariant and oracle checks over every module, for ``psco selfcheck``.

Each check returns a short detail string and raises AssertionError on
failure. The full suites live in the test directory; these are small seeded
versions that run in a few seconds.
"""
from __future__ import annotations

import os
import sys
import tempfile

import numpy as np

from . import _backend
from .assignment import assignment_objective, brute_force_assignment, select_top_k, sinkhorn
from .data import SyntheticSpec, generate_synthetic, load_dataset, make_synthetic
from .encoder import GradientTape, backward, build_encoder, ema_update, encode_query, l2_normalize
from .errors import IntegrityError
from .evaluation import confidence_interval95
from .losses import contrast_loss, moco_loss, prototype_decomposition, psco_loss_cross_entropy, total_loss
from .snapshot import load_model, save_model, snapshot_bytes, Snapshot
from .task_queue import build_task, enqueue, queue_init, shot_overlap_ratio

CHECKS = []


def check(fn):
    CHECKS.append(fn)
    return fn


def _unit(rng, n, d):
    return l2_normalize(rng.standard_normal((n, d)))


@check
def sinkhorn_marginals():
    rng = np.random.default_rng(0)
    worst = 0.0
    for t in range(30):
        n, m = rng.integers(1, 33, size=2)
        eps = (0.01, 0.05, 0.25)[t % 3]
        soft = sinkhorn(rng.uniform(-1, 1, (n, m)), eps, max_iters=200_000, tol=1e-9)
        P = soft.A_tilde
        worst = max(worst, np.abs(P.sum(1) - 1 / n).max(), np.abs(P.sum(0) - 1 / m).max())
    assert worst < 1e-6, f"max marginal violation {worst:.2e}"
    return f"max violation {worst:.1e}"


@check
def kernel_equivalence():
    if _backend.BACKEND != "cython":
        return "compiled kernel not built; skipped"
    rng = np.random.default_rng(1)
    S = rng.uniform(-1, 1, (16, 64))
    a = sinkhorn(S, 0.05, 500, kernel=_backend.get_kernel("python")).A_tilde
    b = sinkhorn(S, 0.05, 500, kernel=_backend.get_kernel("cython")).A_tilde
    diff = np.abs(a - b).max()
    assert diff < 1e-12, f"kernels differ by {diff:.2e}"
    return f"max difference {diff:.1e}"


@check
def top_k_ties_lowest_index():
    hard = select_top_k(np.array([[0.5, 0.5, 0.5, 0.1]]), 2)
    assert hard.support_indices.tolist() == [[0, 1]], hard.support_indices
    return "[0.5, 0.5, 0.5, 0.1], K=2 -> [0, 1]"


@check
def oracle_agreement_partial_marginals():
    rng = np.random.default_rng(2)
    agree, total = 0, 60
    for _ in range(total):
        n, k = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        m = int(rng.integers(n * k, 9))
        S = rng.uniform(-1, 1, (n, m))
        exact = brute_force_assignment(S, k)
        soft = sinkhorn(S, 0.01, 100_000, 1e-9, marginals="partial", K=k)
        got = select_top_k(soft, k)
        agree += np.isclose(assignment_objective(S, got), assignment_objective(S, exact), atol=1e-12)
    assert agree / total >= 0.9, f"agreement {agree}/{total}"
    return f"agreement {agree}/{total}"


@check
def loss_identities():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(20):
        n, k, d = 4, 3, 8
        Q, Zs = _unit(rng, n, d), _unit(rng, n * k, d)
        A = np.kron(np.eye(n), np.ones((1, k)))
        v = contrast_loss(Q, Zs, A, 0.5).value
        worst = max(worst, abs(v - psco_loss_cross_entropy(Q, Zs, A, 0.5)),
                    abs(v - prototype_decomposition(Q, Zs, A, 0.5)))
    assert worst < 1e-9, f"forms differ by {worst:.2e}"
    return f"max difference {worst:.1e}"


@check
def gradient_matches_finite_differences():
    rng = np.random.default_rng(4)
    st = build_encoder({"f": [5, 6], "g": [6, 6, 4], "h": [4, 5, 4]}, "tanh", seed=4)
    x, Z, queue = rng.standard_normal((2, 5)), _unit(rng, 2, 4), _unit(rng, 6, 4)
    supports, A = _unit(rng, 4, 4), np.kron(np.eye(2), np.ones((1, 2)))

    def loss(grad=False):
        tape = GradientTape()
        Q = encode_query(x, st, tape)
        tot = total_loss(contrast_loss(Q, supports, A, 1.0), moco_loss(Q, Z, queue, 0.2))
        return (tot, backward(tape, tot.grad_q)) if grad else tot.value

    _, grads = loss(True)
    worst, h = 0.0, 1e-5
    for name, p in st.theta.items():
        for j in range(p.size):
            old = p.flat[j]
            p.flat[j] = old + h
            up = loss()
            p.flat[j] = old - h
            down = loss()
            p.flat[j] = old
            fd, an = (up - down) / (2 * h), grads[name].flat[j]
            worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    assert worst < 1e-4, f"max relative error {worst:.2e}"
    return f"max relative error {worst:.1e}"


@check
def ema_limits():
    st = build_encoder({"f": [3, 4], "g": [4, 3], "h": [3, 3]}, seed=5)
    for p in st.theta.values():
        p += 1.0
    frozen = {k: v.copy() for k, v in st.phi.items()}
    ema_update(st, 1.0)
    assert all(np.array_equal(frozen[k], st.phi[k]) for k in frozen), "m=1 moved phi"
    ema_update(st, 0.0)
    assert all(np.array_equal(st.theta[k], st.phi[k]) for k in st.phi), "m=0 did not copy theta"
    return "m=1 keeps phi, m=0 copies theta"


@check
def queue_fifo_and_overlap():
    q = queue_init(6, 3, seed=6)
    rng = np.random.default_rng(6)
    batches = [_unit(rng, 2, 3) for _ in range(4)]
    for b in batches:
        enqueue(q, b)
    assert np.array_equal(q.ordered(), np.vstack(batches[1:])), "queue order is not FIFO"
    task = build_task(_unit(rng, 2, 3), q, 2)
    r = shot_overlap_ratio(task)
    assert 0.0 <= r <= 0.75, r
    return f"FIFO ok, overlap {r:.2f}"


@check
def ci95_arithmetic():
    acc = [0.2, 0.4, 0.6, 0.8]
    want = 1.96 * 0.2581988897471611 / 2.0
    got = confidence_interval95(acc)
    assert abs(got - want) < 1e-12, (got, want)
    return f"ci95 {got:.6f}"


@check
def snapshot_round_trip():
    st = build_encoder({"f": [3, 4], "g": [4, 3], "h": [3, 3]}, seed=7)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "m.psco")
        save_model(path, st)
        again = snapshot_bytes(Snapshot(load_model(path).state))
        with open(path, "rb") as fh:
            assert fh.read() == again, "save -> load -> save changed bytes"
    return "bytes identical"


@check
def manifest_detects_corruption():
    spec = SyntheticSpec(n_classes=2, dim=4, samples_per_class=8, seed=8)
    with tempfile.TemporaryDirectory() as tmp:
        manifest = generate_synthetic(spec, tmp)
        ds = load_dataset(manifest)
        assert np.array_equal(ds.x, make_synthetic(spec).x), "round trip changed data"
        data_file = next(f for f in os.listdir(tmp) if f.endswith(".f32"))
        with open(os.path.join(tmp, data_file), "r+b") as fh:
            b = fh.read(1)
            fh.seek(0)
            fh.write(bytes([b[0] ^ 1]))
        try:
            load_dataset(manifest)
        except IntegrityError:
            return "bit flip rejected"
    raise AssertionError("bit flip went undetected")


def run_selfcheck(out=sys.stdout) -> bool:
    ok = True
    for fn in CHECKS:
        try:
            detail = fn()
            status = "PASS"
        except Exception as exc:  # report every failure, keep going
            detail, status, ok = f"{type(exc).__name__}: {exc}", "FAIL", False
        print(f"{status} {fn.__name__}: {detail}", file=out)
    print(f"backend: {_backend.BACKEND}", file=out)
    return ok
