"""Acceptance gate: criteria 1-9, each at its stated tolerance.

Every test prints one ``CRITERION n PASS|FAIL: detail`` line (collected and
repeated in the terminal summary). The desk-scale runs are shared through a
module-level cache; the whole file takes roughly half an hour on one core.

    pytest tests/test_acceptance.py -v
"""
import time
from functools import lru_cache

import numpy as np
import pytest
from scipy.special import log_softmax, logsumexp

from psco.assignment import assignment_objective, brute_force_assignment, select_top_k, sinkhorn
from psco.config import SinkhornConfig, TrainConfig, preset
from psco.data import SyntheticSpec, make_synthetic
from psco.encoder import GradientTape, backward, build_encoder, encode_key, encode_query, l2_normalize
from psco.evaluation import EvalReport, adapt, confidence_interval95, evaluate, sample_episode
from psco.losses import contrast_loss, moco_loss, psco_loss, psco_loss_cross_entropy, total_loss
from psco.snapshot import load_trainer, save_trainer
from psco.task_queue import PseudoTask, build_task, queue_init
from psco.trainer import Trainer

from conftest import ACCEPTANCE_LINES

SEEDS = (0, 1, 2)


def report(n, ok, detail):
    line = f"CRITERION {n} {'PASS' if ok else 'FAIL'}: {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


def random_similarity(rng, n, m):
    d = int(rng.integers(2, 33))
    return l2_normalize(rng.standard_normal((n, d))) @ l2_normalize(rng.standard_normal((m, d))).T


# ---------------------------------------------------------------- criterion 1

def test_criterion_1_sinkhorn_marginals():
    rng = np.random.default_rng(1001)
    worst, t0 = 0.0, time.perf_counter()
    for t in range(200):
        n, m = (int(v) for v in rng.integers(1, 65, size=2))
        eps = (0.01, 0.05, 0.25)[t % 3]
        P = sinkhorn(random_similarity(rng, n, m), eps, max_iters=1_000_000, tol=1e-7).A_tilde
        worst = max(worst, np.abs(P.sum(1) - 1 / n).max(), np.abs(P.sum(0) - 1 / m).max())
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-6 and elapsed < 5.0
    assert report(1, ok, f"max marginal violation {worst:.2e} (< 1e-6), {elapsed:.2f} s (< 5 s)")


# ---------------------------------------------------------------- criterion 2

def test_criterion_2_assignment_oracle():
    rng = np.random.default_rng(2002)
    ratios, exact = [], 0
    for _ in range(200):
        n, k = int(rng.integers(1, 4)), int(rng.integers(1, 3))
        m = int(rng.integers(n * k, 9))
        S = rng.uniform(-1, 1, (n, m))
        best = assignment_objective(S, brute_force_assignment(S, k))
        soft = sinkhorn(S, 0.01, max_iters=1_000_000, tol=1e-9)
        got = assignment_objective(S, select_top_k(soft, k))
        # objectives can be negative; compare by the gap to the optimum
        ratios.append(got / best if best > 0 else (1.0 if got >= best - 1e-12 else 0.0))
        exact += bool(abs(got - best) <= 1e-12)
    within = np.mean(np.array(ratios) >= 0.95)
    ok = within == 1.0 and exact / 200 >= 0.9
    assert report(2, ok, f">=95% of optimum in {within:.1%} of instances (need 100%), "
                         f"exact agreement {exact / 200:.1%} (need >= 90%)")


# ---------------------------------------------------------------- criterion 3

def _random_task(rng, n, k, d):
    Q = l2_normalize(rng.standard_normal((n, d)))
    supports = l2_normalize(rng.standard_normal((n * k, d)))
    A = np.kron(np.eye(n), np.ones((1, k)))
    return Q, supports, A


def _positive_mean_form(Q, supports, A, tau):
    """Per query: mean over positives of -log(exp(q.z+/tau) / sum_j exp(q.z_j/tau))."""
    total = 0.0
    for i in range(Q.shape[0]):
        logp = log_softmax(supports @ Q[i] / tau)
        pos = np.flatnonzero(A[i])
        total += -logp[pos].mean()
    return total / Q.shape[0]


def _soft_target_form(Q, supports, A, tau):
    """Cross entropy between softmax(logits) and the row-normalized assignment."""
    logits = Q @ supports.T / tau
    targets = A / A.sum(1, keepdims=True)
    return float(-(targets * log_softmax(logits, axis=1)).sum(1).mean())


def _prototype_form(Q, supports, A, tau):
    n, k = A.shape[0], int(A[0].sum())
    protos = (A @ supports) / k
    return float(-np.sum(Q * protos) / (n * tau) + logsumexp(Q @ supports.T / tau, axis=1).mean())


def test_criterion_3_loss_identities():
    rng = np.random.default_rng(3003)
    gap_a = gap_b = gap_c = 0.0
    for _ in range(100):
        n, k, d = int(rng.integers(1, 9)), int(rng.integers(1, 5)), int(rng.integers(2, 17))
        tau = float(rng.uniform(0.1, 1.5))
        Q, supports, A = _random_task(rng, n, k, d)
        task = PseudoTask(np.arange(n), Q, supports, A, np.arange(n * k).reshape(n, k))
        impl = psco_loss(Q, task, tau).value
        gap_a = max(gap_a, abs(impl - _soft_target_form(Q, supports, A, tau)), abs(_positive_mean_form(Q, supports, A, tau) - impl),
                    abs(psco_loss_cross_entropy(Q, supports, A, tau) - impl))
        gap_b = max(gap_b, abs(impl - _prototype_form(Q, supports, A, tau)))
        # single positive: InfoNCE with the query's own key against the rest
        Q1, keys, A1 = _random_task(rng, n, 1, d)
        task1 = PseudoTask(np.arange(n), Q1, keys, A1, np.arange(n)[:, None])
        infonce = np.mean([-(Q1[i] @ keys[i]) / tau + logsumexp(keys @ Q1[i] / tau) for i in range(n)])
        gap_c = max(gap_c, abs(psco_loss(Q1, task1, tau).value - infonce))
    ok = max(gap_a, gap_b, gap_c) < 1e-9
    assert report(3, ok, f"(a) multi-positive vs soft-target form {gap_a:.1e}, (b) prototype identity "
                         f"{gap_b:.1e}, (c) InfoNCE reduction {gap_c:.1e} (all < 1e-9)")


# ---------------------------------------------------------------- criterion 4

def _loss_and_grads(state, x, supports, A, Z, queue, want_grads):
    tape = GradientTape()
    Q = encode_query(x, state, tape)
    tot = total_loss(contrast_loss(Q, supports, A, 1.0), moco_loss(Q, Z, queue, 0.2))
    return tot.value, (backward(tape, tot.grad_q) if want_grads else None)


def test_criterion_4_gradients():
    worst, sizes = 0.0, []
    for cfg_seed in range(20):
        rng = np.random.default_rng(4000 + cfg_seed)
        din, hid, d = int(rng.integers(3, 7)), int(rng.integers(10, 17)), int(rng.integers(3, 6))
        act = ("tanh", "relu")[cfg_seed % 2]
        state = build_encoder({"f": [din, hid, hid], "g": [hid, hid, d], "h": [d, hid, d]}, act, seed=cfg_seed)
        sizes.append(state.n_parameters())
        assert state.n_parameters() <= 1000
        x = rng.standard_normal((2, din))
        queue = queue_init(16, d, seed=cfg_seed)
        Z = encode_key(x + 0.05 * rng.standard_normal(x.shape), state)
        task = build_task(Z, queue, 2, SinkhornConfig())
        _, grads = _loss_and_grads(state, x, task.supports, task.A, Z, queue.slots, True)
        # step balancing round-off (~1e-16 * loss / h) against truncation (~h^2)
        h = 1e-5
        for name, p in state.theta.items():
            for j in range(p.size):
                old = p.flat[j]
                p.flat[j] = old + h
                up = _loss_and_grads(state, x, task.supports, task.A, Z, queue.slots, False)[0]
                p.flat[j] = old - h
                down = _loss_and_grads(state, x, task.supports, task.A, Z, queue.slots, False)[0]
                p.flat[j] = old
                fd, an = (up - down) / (2 * h), grads[name].flat[j]
                # relative error with a floor for entries that are zero up to FD noise
                worst = max(worst, abs(fd - an) / max(abs(fd), abs(an), 1e-6))
    ok = worst < 1e-4
    assert report(4, ok, f"max relative error {worst:.1e} (< 1e-4) over 20 networks "
                         f"of {min(sizes)}-{max(sizes)} parameters")


# ------------------------------------------------------------- desk-scale runs

TRAIN_SPEC = SyntheticSpec(n_classes=8, dim=32, samples_per_class=512, class_mean_scale=6.0,
                           within_class_sigma=1.0, seed=0)
# same class means, fresh samples
EVAL_SPEC = SyntheticSpec(n_classes=8, dim=32, samples_per_class=512, class_mean_scale=6.0,
                          within_class_sigma=1.0, seed=0, sample_seed=1)


@lru_cache(maxsize=None)
def datasets():
    return make_synthetic(TRAIN_SPEC), make_synthetic(EVAL_SPEC)


def desk_config(seed=0, variant="full") -> TrainConfig:
    cfg = preset("desk")
    cfg.seed = seed
    if variant == "no-sinkhorn":
        cfg.sinkhorn.enabled = False
    elif variant == "no-momentum":
        cfg.use_momentum = False
    return cfg.validate()


@lru_cache(maxsize=None)
def desk_run(seed=0, variant="full"):
    train_ds, eval_ds = datasets()
    t0 = time.perf_counter()
    trainer = Trainer(desk_config(seed, variant), train_ds)
    trainer.fit()
    elapsed = time.perf_counter() - t0
    rep = evaluate(eval_ds, trainer.state, 5, 5, 15, 600, seed=0)
    return trainer, rep, elapsed


@pytest.mark.slow
def test_criterion_5_desk_learning_run():
    train_ds, eval_ds = datasets()
    # the untrained baseline is measured first
    untrained = Trainer(desk_config(0), train_ds).state
    base = evaluate(eval_ds, untrained, 5, 5, 15, 600, seed=0).mean_accuracy
    trainer, rep, elapsed = desk_run(0, "full")
    log = trainer.log
    acc = rep.mean_accuracy
    q1, qT = log[0]["pseudo_label_quality"], log[-1]["pseudo_label_quality"]
    overlap = log[-1]["shot_overlap_ratio"]
    checks = {
        "a": acc - base >= 0.15,
        "b": acc >= 0.90,
        "c": qT > q1,
        "d": overlap < 0.05,
        "time": elapsed < 600,
    }
    detail = (f"(a) trained {acc:.4f} vs untrained {base:.4f} (+{100 * (acc - base):.1f} pts, need 15); "
              f"(b) {acc:.4f} >= 0.90; (c) quality {q1:.3f} -> {qT:.3f}; (d) final overlap {overlap:.4f} < 0.05; "
              f"train time {elapsed:.0f} s < 600 s")
    assert report(5, all(checks.values()), detail), checks


@pytest.mark.slow
def test_desk_run_loss_and_quality():
    # measured on the same run: late-epoch loss below the start, most supports share the query class
    trainer, _, _ = desk_run(0, "full")
    steps = trainer.steps_per_epoch
    first10 = np.mean(trainer.step_losses[:10])
    late10 = np.mean(trainer.step_losses[30 * steps - 10:30 * steps])
    assert late10 < first10
    assert trainer.log[-1]["pseudo_label_quality"] >= 0.8


@pytest.mark.slow
def test_criterion_6_ablation_direction():
    acc, overlap = {}, {}
    for variant in ("full", "no-sinkhorn", "no-momentum"):
        runs = [desk_run(s, variant) for s in SEEDS]
        acc[variant] = np.mean([r[1].mean_accuracy for r in runs])
        overlap[variant] = np.mean([r[0].log[-1]["shot_overlap_ratio"] for r in runs])
    ok_sink = overlap["no-sinkhorn"] > overlap["full"]
    ok_mom = acc["no-momentum"] < acc["full"]
    detail = (f"final-epoch overlap full {overlap['full']:.4f} vs no-sinkhorn {overlap['no-sinkhorn']:.4f}; "
              f"accuracy full {acc['full']:.4f} vs no-momentum {acc['no-momentum']:.4f} "
              f"(no-sinkhorn accuracy {acc['no-sinkhorn']:.4f}); means over seeds {SEEDS}")
    assert report(6, ok_sink and ok_mom, detail)


SHIFT_SPEC = SyntheticSpec(n_classes=8, dim=32, samples_per_class=100, class_mean_scale=6.0,
                           within_class_sigma=1.0, seed=0, sample_seed=2,
                           domain_shift={"rotation_seed": 11, "offset_scale": 3.0})


@pytest.mark.slow
def test_criterion_7_adaptation():
    from psco.evaluation import AdaptConfig

    trainer, _, _ = desk_run(0, "full")
    state = trainer.state
    shifted = make_synthetic(SHIFT_SPEC)
    plain = evaluate(shifted, state, 5, 5, 15, 600, seed=7).mean_accuracy
    adapted = evaluate(shifted, state, 5, 5, 15, 600, AdaptConfig(iters=50), seed=7).mean_accuracy

    first, last, frozen = [], [], True
    f_before = {k: v.copy() for k, v in state.theta.items() if k.startswith("f.")}
    for e in range(20):
        episode = sample_episode(shifted, 5, 5, 15, np.random.default_rng([7, e]))
        trace = []
        new = adapt(episode, state, iters=50, lr=0.01, trace=trace)
        first.append(trace[0])
        last.append(trace[49])
        frozen &= all(np.array_equal(new.theta[k], f_before[k]) for k in f_before)
    frozen &= all(np.array_equal(state.theta[k], f_before[k]) for k in f_before)
    ok = adapted >= plain - 0.005 and np.mean(last) <= np.mean(first) and frozen
    assert report(7, ok, f"accuracy adapted {adapted:.4f} vs plain {plain:.4f} (tolerance 0.5 pts); "
                         f"loss iter 1 {np.mean(first):.4f} -> iter 50 {np.mean(last):.4f}; "
                         f"backbone bit-unchanged: {frozen}")


@pytest.mark.slow
def test_criterion_8_determinism_and_resume(tmp_path):
    reference, _, _ = desk_run(0, "full")
    train_ds, _ = datasets()
    again = Trainer(desk_config(0), train_ds)
    again.fit()
    same_log = again.log == reference.log

    half = Trainer(desk_config(0), train_ds)
    half.fit(until_epoch=25)
    save_trainer(tmp_path / "half.psco", half)
    resumed = load_trainer(tmp_path / "half.psco", train_ds, expected_config=desk_config(0))
    resumed.fit()
    resume_log = resumed.log == reference.log
    resume_state = all(np.array_equal(resumed.state.theta[k], reference.state.theta[k])
                       for k in reference.state.theta)
    resume_state &= all(np.array_equal(resumed.state.phi[k], reference.state.phi[k])
                        for k in reference.state.phi)
    resume_state &= np.array_equal(resumed.queue.slots, reference.queue.slots)
    ok = same_log and resume_log and resume_state
    assert report(8, ok, f"re-run log identical: {same_log}; resumed 25+25 epochs log identical: {resume_log}, "
                         f"parameters and queue identical: {resume_state}")


# ---------------------------------------------------------------- criterion 9

# hand-computed: sample std (n - 1 denominator), then 1.96 * std / sqrt(n)
CI_CASES = [
    # mean 0.5, squared deviations 0.09+0.01+0.01+0.09=0.2, std=sqrt(0.2/3)=0.2581988897471611
    ([0.2, 0.4, 0.6, 0.8], 0.2530349119522179),
    # std = sqrt(0.5) = 0.7071067811865476, /sqrt(2) -> 0.5
    ([1.0, 0.0], 0.98),
    # std = 0.1, sqrt(3) = 1.7320508075688772
    ([0.9, 0.8, 1.0], 0.11316065276116665),
    ([0.5] * 10, 0.0),
    ([0.7], 0.0),
]


def test_criterion_9_ci_arithmetic():
    worst = 0.0
    for acc, want in CI_CASES:
        rep = EvalReport(5, 5, len(acc), float(np.mean(acc)), confidence_interval95(acc), acc)
        worst = max(worst, abs(rep.ci95 - want))
    ok = worst < 1e-12
    assert report(9, ok, f"max |ci95 - hand value| {worst:.1e} (< 1e-12) over {len(CI_CASES)} lists")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v"]))
