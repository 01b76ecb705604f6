"""Central-difference check of the analytic Siamese gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .autodiff import DTYPE, Architecture, ParamStore, forward
from .siamese import LabeledPair, SiameseModel, pair_batch_loss

# Analytic gradients smaller than this are compared by absolute error.
ABS_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    passed: bool
    max_error: float
    worst: str
    checked: int
    tolerance: float

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{status} max error {self.max_error:.3e} at {self.worst} over {self.checked} entries (tol {self.tolerance:g})"


def gradient_error(analytic: float, numeric: float) -> float:
    diff = abs(analytic - numeric)
    if abs(analytic) < ABS_FLOOR:
        return diff
    return diff / max(abs(analytic), abs(numeric))


def finite_diff_check(
    arch: Architecture,
    store: ParamStore,
    pair,
    label: int,
    margin: float,
    step: float = 1e-6,
    tolerance: float = 1e-4,
    check_inputs: bool = True,
) -> GradCheckReport:
    """Compare backprop gradients of the pair loss against central differences.

    ``pair`` is ``(image_a, image_b)``. Every parameter entry is perturbed and,
    with ``check_inputs``, every pixel of both images. Failures are reported,
    not raised. ``store`` is left exactly as it was, gradients included.
    """
    if not step > 0:
        raise ValueError("finite-difference step must be positive")
    model = SiameseModel(arch, store)
    a = np.array(pair[0], dtype=DTYPE)
    b = np.array(pair[1], dtype=DTYPE)
    batch = [LabeledPair(a, b, label)]

    saved_grads = {(i, n): g.copy() for i, n, _, g in store.items()}
    store.zero_grad()
    _, grad_a, grad_b = pair_batch_loss(model, batch, margin, record=True, input_grad=True)
    analytic = {(i, n): g.copy() for i, n, _, g in store.items()}
    for i, n, _, g in store.items():
        g[...] = saved_grads[(i, n)]

    def loss():
        return pair_batch_loss(model, batch, margin)

    targets = [(f"layer{i}.{n}", p, analytic[(i, n)]) for i, n, p, _ in store.items()]
    if check_inputs:
        targets += [("input_a", a, grad_a[0]), ("input_b", b, grad_b[0])]

    worst, worst_err, checked = "-", 0.0, 0
    for name, values, grad in targets:
        flat, gflat = values.reshape(-1), grad.reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = loss()
            flat[k] = orig - step
            down = loss()
            flat[k] = orig
            err = gradient_error(gflat[k], (up - down) / (2 * step))
            checked += 1
            if err > worst_err or worst == "-":
                worst_err, worst = err, f"{name}[{k}]"
    return GradCheckReport(worst_err < tolerance, worst_err, worst, checked, tolerance)


def kink_gap(arch: Architecture, store: ParamStore, pair, label: int, margin: float) -> float:
    """Smallest distance of a pair evaluation from a non-differentiable point.

    Covers ReLU inputs near 0, pooling windows whose top two values nearly tie,
    and (for negative pairs) a pair distance near the margin or near 0. Gradient
    checks are only meaningful when this is well above the finite-difference step.
    """
    x = np.stack([np.asarray(pair[0], dtype=DTYPE), np.asarray(pair[1], dtype=DTYPE)])
    gap = np.inf
    h = x
    for i, layer in enumerate(arch.layers):
        if layer.kind == "relu":
            gap = min(gap, float(np.min(np.abs(h))))
        elif layer.kind == "maxpool2d":
            win = sliding_window_view(h, (layer.window, layer.window), axis=(2, 3))
            win = win[:, :, :: layer.stride, :: layer.stride]
            top2 = np.sort(win.reshape(win.shape[:4] + (-1,)), axis=-1)[..., -2:]
            if top2.shape[-1] == 2:
                spread = top2[..., 1] - top2[..., 0]
                if i > 0 and arch.layers[i - 1].kind == "relu":
                    # windows clamped to zero stay zero under small perturbations
                    spread = spread[top2[..., 1] > 0]
                if spread.size:
                    gap = min(gap, float(np.min(spread)))
        h = forward(Architecture(arch.input_shape, arch.layers[: i + 1]), store, x)
    if label == 0:
        d = float(np.linalg.norm(h[0] - h[1]))
        gap = min(gap, abs(d - margin), d)
    return gap
