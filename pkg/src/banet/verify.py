"""Self-contained verification suites: gradient checks against central
differences, module identities, the metric counting oracle, and the
optimizer/schedule closed forms. Used by the `verify` CLI command and
by the acceptance tests."""

from __future__ import annotations

import math
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .backbone import BackboneConfig
from .gradcheck import grad_check
from .heads import (AblationFlags, ModelConfig, PeeConfig, banet_forward,
                    cff_forward, init_params, interactive_attention,
                    pee_difference_maps)
from .losses import total_loss
from .metrics import confusion, metrics
from .optim import OptimizerState, poly_lr, sgd_step
from .params import ParameterStore, save_checkpoint
from .tensor import Tensor


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str


def _rand(rng, shape, lo=-2.0, hi=2.0):
    return Tensor(rng.uniform(lo, hi, shape), dtype=np.float64)


def tiny_model_config() -> ModelConfig:
    """Smallest end-to-end model: 2 channels everywhere, 8x8 inputs."""
    backbone = BackboneConfig(stem_channels=2, stage_channels=(2, 2, 2, 2),
                              blocks_per_stage=(1, 1, 1, 1), aspp_rates=(1, 2, 4, 6),
                              aspp_out_channels=2, reduce_channels=2)
    pee = PeeConfig(pool_sizes_per_stage=((3,), (3,), (3,), (3,)))
    return ModelConfig(backbone=backbone, pee=pee, flags=AblationFlags(),
                       decoder_channels=2)


# ---------------------------------------------------------------------------
# gradient suite


def check_op_gradients(n_instances: int = 20, tol: float = 1e-5,
                       seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    def run(name, instance_fn):
        worst = 0.0
        for i in range(n_instances):
            f, x = instance_fn(i)
            worst = max(worst, grad_check(f, x, seed=seed + i))
        results.append(CheckResult(f"grad.{name}", worst <= tol,
                                   f"max rel err {worst:.3e} (tol {tol:.0e})"))

    def conv_instance(i):
        k = (1, 3, 5)[i % 3]
        stride = 1 + (i // 3) % 2
        dilation = 1 + (i // 6) % 2
        pad = i % 3
        n, cin, cout = 1 + i % 2, 1 + i % 3, 1 + (i + 1) % 3
        h = w = max(6, k * dilation)
        x = _rand(rng, (n, cin, h, w))
        wt = _rand(rng, (cout, cin, k, k), -0.8, 0.8)
        b = _rand(rng, (1, cout, 1, 1))
        target = i % 3
        if target == 0:
            return (lambda t: T.conv2d(t, wt, b, stride, pad, dilation)), x
        if target == 1:
            return (lambda t: T.conv2d(x, t, b, stride, pad, dilation)), wt
        return (lambda t: T.conv2d(x, wt, t, stride, pad, dilation)), b

    run("conv2d", conv_instance)

    def pool_instance(i):
        k = (1, 2, 3)[i % 3]
        stride = 1 + i % 2
        pad = (i // 2) % 2 if k > 1 else 0
        x = _rand(rng, (1 + i % 2, 1 + i % 3, 5, 6))
        return (lambda t: T.avg_pool2d(t, k, stride, pad)), x

    run("avg_pool2d", pool_instance)
    run("global_avg_pool", lambda i: (T.global_avg_pool, _rand(rng, (1 + i % 2, 2, 4, 5))))

    def resize_instance(i):
        oh, ow = 2 + i % 7, 2 + (i * 3) % 7
        x = _rand(rng, (1, 1 + i % 3, 4, 5))
        return (lambda t: T.bilinear_resize(t, oh, ow)), x

    run("bilinear_resize", resize_instance)
    run("sigmoid", lambda i: (T.sigmoid, _rand(rng, (1, 2, 4, 4), -3.0, 3.0)))
    run("relu", lambda i: (T.relu, _rand(rng, (1, 2, 4, 4))))

    def binary_instance(op):
        def make(i):
            shape = (1 + i % 2, 2, 3, 4)
            a, b = _rand(rng, shape), _rand(rng, shape)
            if i % 2 == 0:
                return (lambda t: op(t, b)), a
            return (lambda t: op(a, t)), b
        return make

    run("add", binary_instance(T.add))
    run("sub", binary_instance(T.sub))
    run("mul", binary_instance(T.mul))
    run("scalar_rsub", lambda i: ((lambda t: T.scalar_rsub(1.0, t)), _rand(rng, (1, 2, 3, 4))))

    def concat_instance(i):
        a = _rand(rng, (1, 1 + i % 2, 3, 4))
        b = _rand(rng, (1, 2, 3, 4))
        which = i % 2
        if which == 0:
            return (lambda t: T.concat_channels([t, b])), a
        return (lambda t: T.concat_channels([a, t])), b

    run("concat_channels", concat_instance)

    def bce_instance(i):
        shape = (1 + i % 2, 1, 4, 4)
        logits = _rand(rng, shape, -3.0, 3.0)
        target = Tensor((rng.random(shape) < 0.5).astype(np.float64), dtype=np.float64)
        return (lambda t: T.bce_loss(t, target)), logits

    run("bce_loss", bce_instance)
    return results


def check_e2e_gradient(n_instances: int = 20, tol: float = 1e-4,
                       seed: int = 0) -> CheckResult:
    """Gradient of the full-pipeline loss w.r.t. the input image and a
    sample of parameter tensors, against central differences."""
    cfg = tiny_model_config()
    rng = np.random.default_rng(seed)
    worst = 0.0
    alive = 0
    for i in range(n_instances):
        store = init_params(cfg, seed=seed + 100 + i, dtype=np.float64)
        # probe at randomized parameters; positive-leaning biases keep the
        # 2-channel net's ReLU paths alive so the check is not vacuous
        for name, p in store.items():
            if name.endswith(".b"):
                p.data = rng.uniform(0.0, 0.3, p.data.shape)
            else:
                p.data = rng.uniform(-0.4, 0.4, p.data.shape)
        g_s = Tensor((rng.random((1, 1, 8, 8)) < 0.5).astype(np.float64), dtype=np.float64)
        g_e = Tensor((rng.random((1, 1, 8, 8)) < 0.5).astype(np.float64), dtype=np.float64)
        image_data = rng.uniform(0.0, 1.0, (1, 3, 8, 8))

        def loss_from_image(img):
            out = banet_forward(img, cfg, store)
            return total_loss(out, g_s, g_e).total

        probe = Tensor(image_data.copy(), requires_grad=True, dtype=np.float64)
        loss = loss_from_image(probe)
        loss.backward()
        if probe.grad is not None and np.abs(probe.grad).max() > 0:
            alive += 1
        worst = max(worst, grad_check(loss_from_image, Tensor(image_data, dtype=np.float64),
                                      seed=seed + i))

        # spot-check parameter gradients through the same graph
        for pname in ("backbone.stem.w", "decoder.head.w", "stage2.edge.conv1.b"):
            saved = store[pname]

            def loss_from_param(p, pname=pname, saved=saved):
                store.replace(pname, p)
                try:
                    out = banet_forward(Tensor(image_data, dtype=np.float64), cfg, store)
                    return total_loss(out, g_s, g_e).total
                finally:
                    store.replace(pname, saved)

            worst = max(worst, grad_check(loss_from_param, saved, seed=seed + i))
    ok = worst <= tol and alive == n_instances
    return CheckResult("grad.end_to_end", ok,
                       f"max rel err {worst:.3e} (tol {tol:.0e}), "
                       f"{alive}/{n_instances} instances with live image gradient")


# ---------------------------------------------------------------------------
# module identities


def check_module_identities(n_instances: int = 100, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []

    worst = 0.0
    for i in range(n_instances):
        k = (3, 5)[i % 2]
        h = w = k + 2 + i % 3
        value = rng.uniform(-3.0, 3.0)
        const = Tensor(np.full((1, 2, h, w), value), dtype=np.float64)
        (diff,) = pee_difference_maps(const, (k,))
        r = (k - 1) // 2
        interior = np.abs(diff.data[:, :, r:h - r, r:w - r])
        if interior.size:
            worst = max(worst, float(interior.max()))
    results.append(CheckResult("identity.pee_zero_on_constant", worst <= 1e-7,
                               f"max interior residual {worst:.3e}"))

    ok_zero = ok_half = ok_sym = True
    for i in range(n_instances):
        shape = (1, 1 + i % 3, 3 + i % 3, 4)
        x = _rand(rng, shape, -4.0, 4.0)
        zero = Tensor(np.zeros(shape), dtype=np.float64)
        e_out, s_out = interactive_attention(x, zero)
        ok_zero &= np.array_equal(e_out.data, x.data)
        ok_half &= bool(np.max(np.abs(s_out.data - 0.5 * x.data)) <= 1e-7)
        a, b = _rand(rng, shape), _rand(rng, shape)
        u, v = interactive_attention(a, b)
        v2, u2 = interactive_attention(b, a)
        ok_sym &= np.array_equal(u.data, u2.data) and np.array_equal(v.data, v2.data)
    results.append(CheckResult("identity.ia_zero", ok_zero and ok_half,
                               "IA(x,0) == (x, 0.5x)"))
    results.append(CheckResult("identity.ia_symmetry", ok_sym,
                               "IA(a,b) == swap(IA(b,a))"))

    ok_cff = ok_single = True
    for i in range(n_instances):
        shape = (1, 2, 4, 4)
        x = _rand(rng, shape, -4.0, 4.0)
        zeros = [Tensor(np.zeros(shape), dtype=np.float64) for _ in range(3)]
        idx = i % 4
        feats = zeros[:idx] + [x] + zeros[idx:]
        ok_cff &= np.array_equal(cff_forward(feats, idx).data, x.data)
        ok_single &= np.array_equal(cff_forward([x], 0).data, x.data)
    results.append(CheckResult("identity.cff_zero_complement", ok_cff,
                               "CFF(x | zeros) == x"))
    results.append(CheckResult("identity.cff_single_stage", ok_single,
                               "CFF over empty complement set is identity"))
    return results


# ---------------------------------------------------------------------------
# metric oracle


def loop_confusion(pred_prob: np.ndarray, gt: np.ndarray,
                   threshold: float = 0.5) -> tuple[int, int, int, int]:
    """Reference implementation: an explicit per-pixel python loop."""
    tp = tn = fp = fn = 0
    for p, g in zip(pred_prob.ravel().tolist(), gt.ravel().tolist()):
        predicted = p >= threshold
        if predicted and g == 1:
            tp += 1
        elif predicted and g == 0:
            fp += 1
        elif not predicted and g == 1:
            fn += 1
        else:
            tn += 1
    return tp, tn, fp, fn


def check_metric_oracle(n_pairs: int = 1000, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    results = []
    counts_ok = identity_ok = swap_ok = True
    worst_identity = 0.0
    for _ in range(n_pairs):
        prob = rng.random((1, 1, 16, 16))
        gt = (rng.random((1, 1, 16, 16)) < rng.uniform(0.1, 0.9)).astype(np.float64)
        counts = confusion(prob, gt)
        counts_ok &= counts == loop_confusion(prob, gt)
        m = metrics(*counts)
        if m.ja + 1.0 > 0 and (2 * m.tp + m.fn + m.fp) > 0:
            worst_identity = max(worst_identity, abs(m.di - 2 * m.ja / (1 + m.ja)))
        inv = metrics(*confusion(1.0 - prob, 1.0 - gt, threshold=0.5 + 1e-12))
        swap_ok &= (inv.tp, inv.tn, inv.fp, inv.fn) == (m.tn, m.tp, m.fn, m.fp)
        swap_ok &= abs(inv.se - m.sp) <= 1e-12 and abs(inv.sp - m.se) <= 1e-12
        swap_ok &= abs(inv.ac - m.ac) <= 1e-12
    results.append(CheckResult("metrics.loop_oracle", counts_ok,
                               f"{n_pairs} random pairs, exact count match"))
    results.append(CheckResult("metrics.dice_jaccard_identity",
                               worst_identity <= 1e-12,
                               f"max |DI - 2JA/(1+JA)| = {worst_identity:.2e}"))
    results.append(CheckResult("metrics.inversion_symmetry", swap_ok,
                               "label inversion swaps SE/SP, AC invariant"))

    m = metrics(tp=2, fn=1, fp=1, tn=4)
    worked_ok = (abs(m.di - 2 / 3) <= 1e-12 and abs(m.ja - 0.5) <= 1e-12
                 and abs(m.ac - 0.75) <= 1e-12 and abs(m.se - 2 / 3) <= 1e-12
                 and abs(m.sp - 0.8) <= 1e-12)
    results.append(CheckResult("metrics.worked_example", worked_ok,
                               "tp=2 fn=1 fp=1 tn=4 -> DI=2/3 JA=1/2 AC=3/4 SE=2/3 SP=4/5"))
    return results


# ---------------------------------------------------------------------------
# schedule / optimizer / checkpoint


def check_schedule_and_optimizer(work_dir=None) -> list[CheckResult]:
    results = []
    state = OptimizerState(total_iters=1500)
    lr0 = poly_lr(0, state)
    lr_end = poly_lr(state.total_iters, state)
    lr_half = poly_lr(state.total_iters // 2, state)
    ok = (lr0 == 1e-4 and lr_end == 0.0 and abs(lr_half - 5.3589e-5) <= 1e-9)
    strictly_decreasing = all(
        poly_lr(i, state) > poly_lr(i + 1, state) for i in range(0, 1500, 97))
    results.append(CheckResult("optimizer.poly_schedule", ok and strictly_decreasing,
                               f"lr(0)={lr0:.6g} lr(T/2)={lr_half:.6g} lr(T)={lr_end:.6g}"))

    store = ParameterStore()
    p = store.add("p", Tensor(np.zeros((1, 1, 1, 1), dtype=np.float64),
                              requires_grad=True, dtype=np.float64))
    grad = 0.37
    lr = 0.01
    st = OptimizerState(total_iters=10, momentum=0.9)
    for _ in range(2):
        p.grad = np.full_like(p.data, grad)
        sgd_step(store, st, lr)
    displacement = -float(p.data.reshape(())[()])
    expect = lr * grad * (1.0 + 1.9)
    results.append(CheckResult("optimizer.momentum_unroll",
                               abs(displacement - expect) <= 1e-12,
                               f"two-step displacement {displacement:.12g} vs {expect:.12g}"))

    with tempfile.TemporaryDirectory(dir=work_dir) as td:
        rng = np.random.default_rng(3)
        st2 = ParameterStore()
        st2.create_conv_weight("a.w", 3, 2, 3, rng)
        st2.create_zeros("a.b", (1, 3, 1, 1))
        p1 = Path(td) / "one.banc"
        p2 = Path(td) / "two.banc"
        save_checkpoint(p1, st2)
        st3 = ParameterStore()
        st3.create_conv_weight("a.w", 3, 2, 3, np.random.default_rng(99))
        st3.create_zeros("a.b", (1, 3, 1, 1))
        from .params import restore_checkpoint
        restore_checkpoint(p1, st3)
        save_checkpoint(p2, st3)
        roundtrip_ok = p1.read_bytes() == p2.read_bytes()
    results.append(CheckResult("optimizer.checkpoint_roundtrip", roundtrip_ok,
                               "save -> load -> save is byte identical"))
    return results


def run_all(quick: bool = False, work_dir=None) -> list[CheckResult]:
    n_grad = 3 if quick else 20
    n_ident = 10 if quick else 100
    n_pairs = 50 if quick else 1000
    results = check_op_gradients(n_instances=n_grad)
    results.append(check_e2e_gradient(n_instances=max(1, n_grad // 4)))
    results += check_module_identities(n_instances=n_ident)
    results += check_metric_oracle(n_pairs=n_pairs)
    results += check_schedule_and_optimizer(work_dir=work_dir)
    return results
