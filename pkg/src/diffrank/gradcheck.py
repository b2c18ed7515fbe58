"""Finite-difference gradient verification.

The numeric side never touches the reverse-mode engine: it re-evaluates
the forward function at perturbed inputs, so agreement between the two
routes is a real check rather than a tautology.
"""

from __future__ import annotations

from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

FD_STEP = 1e-5
GRAD_TOL = 1e-4


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """max over coordinates of |analytic - numeric| / max(1, |numeric|)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1.0, np.abs(numeric))
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / denom))


def fd_gradients(
    f: Callable[[Sequence[np.ndarray]], float],
    arrays: Sequence[np.ndarray],
    h: float = FD_STEP,
) -> list[np.ndarray]:
    """Central finite-difference gradient of f w.r.t. every array entry."""
    grads = []
    work = [np.array(a, dtype=np.float64) for a in arrays]
    for ai, a in enumerate(work):
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = f(work)
            flat[i] = orig - h
            down = f(work)
            flat[i] = orig
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads


def fd_directional(
    f: Callable[[Sequence[np.ndarray]], float],
    arrays: Sequence[np.ndarray],
    directions: Sequence[np.ndarray],
    h: float = FD_STEP,
) -> float:
    """Central finite difference of f along a joint direction vector."""
    work_up = [np.array(a, dtype=np.float64) for a in arrays]
    work_down = [np.array(a, dtype=np.float64) for a in arrays]
    for a_up, a_down, d in zip(work_up, work_down, directions):
        a_up += h * d
        a_down -= h * d
    return (f(work_up) - f(work_down)) / (2.0 * h)


def check_gradients(
    f: Callable[[Sequence[np.ndarray]], float],
    arrays: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    h: float = FD_STEP,
) -> float:
    """Worst relative error between analytic grads and coordinatewise FD."""
    numeric = fd_gradients(f, arrays, h=h)
    return max(relative_error(a, n) for a, n in zip(analytic, numeric))


def check_directional(
    f: Callable[[Sequence[np.ndarray]], float],
    arrays: Sequence[np.ndarray],
    analytic: Sequence[np.ndarray],
    rng: np.random.Generator,
    n_directions: int = 4,
    h: float = FD_STEP,
) -> float:
    """Worst relative error over random directions.

    Cheap enough for whole-model checks where coordinatewise FD would
    need two forward passes per parameter.
    """
    worst = 0.0
    for _ in range(n_directions):
        dirs = [rng.standard_normal(a.shape) for a in arrays]
        norm = np.sqrt(sum(float((d * d).sum()) for d in dirs))
        dirs = [d / norm for d in dirs]
        numeric = fd_directional(f, arrays, dirs, h=h)
        dot = sum(float((g * d).sum()) for g, d in zip(analytic, dirs))
        worst = max(worst, relative_error(np.asarray(dot), np.asarray(numeric)))
    return worst


# ---------------------------------------------------------------------------
# runnable self-check suite (the `gradcheck` command and the integrity
# acceptance test both drive it)


@dataclass(frozen=True)
class CheckResult:
    name: str
    worst: float
    tol: float

    @property
    def passed(self) -> bool:
        return np.isfinite(self.worst) and self.worst <= self.tol


def _run_op_case(build, rng, trials: int) -> float:
    """Worst FD error for one op case over several random instances.

    build(rng) returns (input arrays, forward) where forward maps a list
    of tensors to a scalar tensor. Ops are resolved through the engine
    module at call time, and every case folds its output through a fixed
    random weight so each op's backward sees a generic cotangent.
    """
    worst = 0.0
    for _ in range(trials):
        arrays, forward = build(rng)

        def f(arrs):
            return forward([ad.Tensor(np.array(a)) for a in arrs]).item()

        leaves = [ad.Tensor(np.array(a), requires_grad=True) for a in arrays]
        ad.backward(forward(leaves))
        worst = max(worst, check_gradients(f, arrays, [leaf.grad for leaf in leaves]))
    return worst


def _weighted(out, weight: np.ndarray):
    return ad.tensor_sum(ad.mul(out, ad.Tensor(weight)))


def _op_cases() -> list:
    """(name, build) pairs covering every differentiable engine op."""

    def with_weight(shape, rng, make_inputs, apply_op):
        arrays = make_inputs(rng)
        w = rng.standard_normal(shape)
        return arrays, lambda ts: _weighted(apply_op(ts), w)

    cases = [
        (
            "matmul",
            lambda rng: with_weight(
                (3, 2),
                rng,
                lambda r: [r.standard_normal((3, 4)), r.standard_normal((4, 2))],
                lambda ts: ad.matmul(ts[0], ts[1]),
            ),
        ),
        (
            "add",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 4))],
                lambda ts: ad.add(ts[0], ts[1]),
            ),
        ),
        (
            "add_scalar",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [r.standard_normal((3, 4)), r.standard_normal((1, 1))],
                lambda ts: ad.add(ts[0], ts[1]),
            ),
        ),
        (
            "sub",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 4))],
                lambda ts: ad.sub(ts[0], ts[1]),
            ),
        ),
        (
            "mul",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [r.standard_normal((3, 4)), r.standard_normal((3, 4))],
                lambda ts: ad.mul(ts[0], ts[1]),
            ),
        ),
        (
            "mul_scalar",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [r.standard_normal((3, 4)), r.standard_normal((1, 1))],
                lambda ts: ad.mul(ts[0], ts[1]),
            ),
        ),
        (
            "scale",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [r.standard_normal((3, 4))],
                lambda ts: ad.scale(ts[0], -1.7),
            ),
        ),
        (
            "concat",
            lambda rng: with_weight(
                (3, 5),
                rng,
                lambda r: [r.standard_normal((3, 2)), r.standard_normal((3, 3))],
                lambda ts: ad.concat(ts),
            ),
        ),
        (
            "slice_cols",
            lambda rng: with_weight(
                (3, 3),
                rng,
                lambda r: [r.standard_normal((3, 5))],
                lambda ts: ad.slice_cols(ts[0], 1, 4),
            ),
        ),
        (
            "transpose",
            lambda rng: with_weight(
                (4, 3),
                rng,
                lambda r: [r.standard_normal((3, 4))],
                lambda ts: ad.transpose(ts[0]),
            ),
        ),
        (
            "reshape",
            lambda rng: with_weight(
                (2, 6),
                rng,
                lambda r: [r.standard_normal((3, 4))],
                lambda ts: ad.reshape(ts[0], (2, 6)),
            ),
        ),
        (
            "broadcast_rows",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [r.standard_normal((1, 4))],
                lambda ts: ad.broadcast_rows(ts[0], 3),
            ),
        ),
        (
            "embedding_lookup",
            lambda rng: with_weight(
                (4, 4),
                rng,
                lambda r: [r.standard_normal((6, 4))],
                lambda ts: ad.embedding_lookup(ts[0], np.array([0, 2, 2, 5])),
            ),
        ),
        (
            "softplus",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [r.standard_normal((3, 4))],
                lambda ts: ad.softplus(ts[0]),
            ),
        ),
        (
            "sigmoid",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [r.standard_normal((3, 4))],
                lambda ts: ad.sigmoid(ts[0]),
            ),
        ),
        (
            "log",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [0.5 + np.abs(r.standard_normal((3, 4)))],
                lambda ts: ad.log(ts[0]),
            ),
        ),
        (
            "exp",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [0.5 * r.standard_normal((3, 4))],
                lambda ts: ad.exp(ts[0]),
            ),
        ),
        (
            "sqrt",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [0.5 + np.abs(r.standard_normal((3, 4)))],
                lambda ts: ad.sqrt(ts[0]),
            ),
        ),
        (
            "reciprocal",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [np.sign(r.standard_normal((3, 4))) * (1.0 + np.abs(r.standard_normal((3, 4))))],
                lambda ts: ad.reciprocal(ts[0]),
            ),
        ),
        (
            "softmax",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [2.0 * r.standard_normal((3, 4))],
                lambda ts: ad.softmax(ts[0]),
            ),
        ),
        (
            "tensor_sum",
            lambda rng: with_weight(
                (),
                rng,
                lambda r: [r.standard_normal((3, 4))],
                lambda ts: ad.tensor_sum(ts[0]),
            ),
        ),
        (
            "tensor_sum_axis0",
            lambda rng: with_weight(
                (1, 4),
                rng,
                lambda r: [r.standard_normal((3, 4))],
                lambda ts: ad.tensor_sum(ts[0], axis=0),
            ),
        ),
        (
            "tensor_mean",
            lambda rng: with_weight(
                (),
                rng,
                lambda r: [r.standard_normal((3, 4))],
                lambda ts: ad.tensor_mean(ts[0]),
            ),
        ),
        (
            "tensor_mean_axis1",
            lambda rng: with_weight(
                (3, 1),
                rng,
                lambda r: [r.standard_normal((3, 4))],
                lambda ts: ad.tensor_mean(ts[0], axis=1),
            ),
        ),
        (
            "layer_norm",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [
                    r.standard_normal((3, 4)),
                    1.0 + 0.1 * r.standard_normal((1, 4)),
                    0.1 * r.standard_normal((1, 4)),
                ],
                lambda ts: ad.layer_norm(ts[0], ts[1], ts[2]),
            ),
        ),
        (
            "dropout",
            lambda rng: with_weight(
                (3, 4),
                rng,
                lambda r: [r.standard_normal((3, 4))],
                # a fresh identically seeded generator per call keeps the
                # mask constant across the FD stencil
                lambda ts: ad.dropout(
                    ts[0], 0.3, training=True, rng=np.random.default_rng(1234)
                ),
            ),
        ),
        (
            "linear",
            lambda rng: with_weight(
                (3, 2),
                rng,
                lambda r: [
                    r.standard_normal((3, 4)),
                    r.standard_normal((4, 2)),
                    r.standard_normal((1, 2)),
                ],
                lambda ts: ad.linear(ts[0], ts[1], ts[2]),
            ),
        ),
    ]
    return cases


def op_gradient_checks(seed: int = 0, trials: int = 5) -> list[CheckResult]:
    """Coordinatewise FD check for every engine op, several instances each."""
    results = []
    for index, (name, build) in enumerate(_op_cases()):
        rng = np.random.default_rng([seed, index])
        try:
            worst = _run_op_case(build, rng, trials)
        except Exception:
            worst = float("inf")
        results.append(CheckResult(name=f"op.{name}", worst=worst, tol=GRAD_TOL))
    return results


def loss_gradient_checks(seed: int = 0, trials: int = 20) -> list[CheckResult]:
    """FD check for every ranking loss on random score/label instances."""
    from .losses import LOSS_NAMES, LossSpec, loss_gradient_check

    results = []
    for name in LOSS_NAMES:
        try:
            worst = loss_gradient_check(LossSpec(name=name), trials=trials, seed=seed)
        except Exception:
            worst = float("inf")
        results.append(CheckResult(name=f"loss.{name}", worst=worst, tol=GRAD_TOL))
    return results


def model_gradient_checks(seed: int = 0, n_directions: int = 8) -> list[CheckResult]:
    """Directional FD check through the full network, both encoder modes."""
    from .network import DenoiseModel, ModelConfig
    from .schedule import ScheduleSpec

    spec = ScheduleSpec(kind="linear", timesteps=8)
    results = []
    for use_attention in (True, False):
        rng = np.random.default_rng([seed, int(use_attention)])
        config = ModelConfig(
            k=4, d_model=16, heads=2, blocks=1, denoise_layers=2,
            dropout_p=0.0, use_attention=use_attention,
        )
        model = DenoiseModel(config, spec, dtype="float64", seed=seed + 3)
        feats = rng.normal(size=(3, 4))
        y_t = rng.normal(size=3)
        target = rng.normal(size=(3, 1))
        names = sorted(model.params)

        def f(arrays, names=names, config=config, feats=feats, y_t=y_t, target=target):
            params = {
                name: ad.Tensor(np.array(arr), requires_grad=True)
                for name, arr in zip(names, arrays)
            }
            rebuilt = DenoiseModel(config, spec, dtype="float64", params=params)
            diff = ad.sub(rebuilt.predict_y0(feats, y_t, t=5), ad.Tensor(target))
            return ad.tensor_mean(ad.mul(diff, diff)).item()

        try:
            pred = model.predict_y0(feats, y_t, t=5)
            diff = ad.sub(pred, ad.Tensor(target))
            ad.backward(ad.tensor_mean(ad.mul(diff, diff)))
            arrays = [np.array(model.params[n].data) for n in names]
            analytic = [model.params[n].grad for n in names]
            worst = check_directional(f, arrays, analytic, rng, n_directions=n_directions)
        except Exception:
            worst = float("inf")
        label = "attention" if use_attention else "feedforward"
        results.append(CheckResult(name=f"model.{label}", worst=worst, tol=GRAD_TOL))
    return results


def schedule_invariant_checks() -> list[CheckResult]:
    """Structural residuals for every schedule family at production sizes."""
    from .schedule import SCHEDULE_KINDS, ScheduleSpec, build_schedule

    results = []
    for kind in SCHEDULE_KINDS:
        for timesteps in (200, 600, 1000):
            name = f"schedule.{kind}.T{timesteps}"
            try:
                table = build_schedule(ScheduleSpec(kind=kind, timesteps=timesteps))
                table.validate()
                residual = float(
                    np.max(np.abs(np.cumprod(1.0 - table.beta) - table.alpha_bar))
                )
            except Exception:
                residual = float("inf")
            results.append(CheckResult(name=name, worst=residual, tol=1e-12))
    return results


def run_all_checks(
    seed: int = 0,
    op_trials: int = 5,
    loss_trials: int = 20,
    model_directions: int = 8,
) -> list[CheckResult]:
    """Every integrity check the `gradcheck` command reports."""
    results = []
    results.extend(op_gradient_checks(seed=seed, trials=op_trials))
    results.extend(loss_gradient_checks(seed=seed, trials=loss_trials))
    results.extend(model_gradient_checks(seed=seed, n_directions=model_directions))
    results.extend(schedule_invariant_checks())
    return results
