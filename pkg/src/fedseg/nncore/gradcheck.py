"""Central finite-difference gradient checks at 64-bit."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..core import RngStream


@dataclass
class GradCheckReport:
    max_param_error: float
    max_input_error: float
    n_checked: int
    tolerance: float
    worst: str = ""
    errors: dict = field(default_factory=dict, repr=False)
    # coordinates whose +-h probe switched a ReLU or max-pool branch
    n_skipped: int = 0

    @property
    def passed(self) -> bool:
        return self.max_param_error <= self.tolerance and self.max_input_error <= self.tolerance


def rel_error(a, b) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-8)


class _QuadraticLoss:
    def __init__(self, target):
        self.target = target

    def __call__(self, out):
        diff = out - self.target
        return 0.5 * float(np.sum(diff * diff)), diff

    def difference(self, out_a, out_b) -> float:
        # loss(a) - loss(b) without cancelling two large sums
        return 0.5 * float(np.sum((out_a - out_b) * (out_a + out_b - 2 * self.target)))


def _loss_difference(loss, out_a, out_b) -> float:
    if isinstance(loss, _QuadraticLoss):
        return loss.difference(out_a, out_b)
    return loss(out_a)[0] - loss(out_b)[0]


def _central_differences(net, x, values, loss, h):
    """Numeric gradient w.r.t. each entry of ``values`` (a view into the
    parameters or the input), plus a mask of entries where a probe crossed a
    kink and the difference quotient is meaningless."""
    base = net.activation_pattern()
    flat = values.reshape(-1)
    numeric = np.zeros(flat.size)
    kink = np.zeros(flat.size, dtype=bool)
    for i in range(flat.size):
        old = flat[i]
        outs = []
        for step in (h, -h):
            flat[i] = old + step
            outs.append(net.forward(x))
            kink[i] |= not np.array_equal(net.activation_pattern(), base)
        flat[i] = old
        numeric[i] = _loss_difference(loss, *outs) / (2 * h)
    return numeric, kink


def gradient_check(net, x, tolerance: float = 1e-4, loss=None, h: float = 1e-4,
                   check_input: bool = True, rng: RngStream | None = None) -> GradCheckReport:
    """Compare analytic gradients of a scalar loss with central differences.

    The default loss is ``0.5 * ||out - t||^2`` for a seeded random target
    ``t``. Every parameter (and every input entry if ``check_input``) is
    perturbed. Coordinates whose probes flip a ReLU or max-pool decision are
    excluded and counted in ``n_skipped``.
    """
    net64 = net.to(np.float64)
    x = np.array(x, dtype=np.float64)
    if loss is None:
        out = net64.forward(x, cache=False)
        gen = (rng or RngStream(1234, 0)).generator()
        loss = _QuadraticLoss(gen.standard_normal(out.shape))

    _, dout = loss(net64.forward(x))
    dx = net64.backward(dout)
    analytic = net64.grads.copy()
    fault = net64.grad_fault
    net64.grad_fault = None
    net64.forward(x)

    numeric, kink = _central_differences(net64, x, net64.params, loss, h)
    net64.grad_fault = fault

    perr = np.where(kink, 0.0, rel_error(analytic, numeric))
    errors = {}
    worst, worst_err = "", 0.0
    for seg in net64.layout:
        e = float(perr[seg.offset:seg.offset + seg.length].max())
        errors[seg.name] = e
        if e > worst_err:
            worst, worst_err = seg.name, e
    n_skipped = int(kink.sum())

    ierr_max = 0.0
    if check_input:
        net64.forward(x)
        nx, ikink = _central_differences(net64, x, x, loss, h)
        ierr = np.where(ikink, 0.0, rel_error(dx.reshape(-1), nx))
        ierr_max = float(ierr.max()) if ierr.size else 0.0
        errors["input"] = ierr_max
        n_skipped += int(ikink.sum())

    return GradCheckReport(
        max_param_error=float(perr.max()) if perr.size else 0.0,
        max_input_error=ierr_max,
        n_checked=int(net64.n_params),
        tolerance=tolerance,
        worst=worst,
        errors=errors,
        n_skipped=n_skipped,
    )
