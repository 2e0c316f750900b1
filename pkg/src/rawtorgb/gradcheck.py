"""Central finite-difference gradient verification.

Every differentiable op (and every loss) is exercised by a named check
on small seeded tensors.  Analytic gradients from the tape are compared
against (f(x+eps) - f(x-eps)) / (2 eps) elementwise.

For non-scalar ops the checked function is mean(out * r) with a fixed
random projection r; the numeric side reduces that projection in
float64 so the comparison measures the op's gradient, not the
harness's own rounding.

The composite losses are treated differently: their mean-normalized
gradients are O(1/N), which a float32 forward pass buries in rounding
noise at small steps, while large steps cross relu/maxpool kinks deep
inside the feature stack.  For those checks the difference quotient is
evaluated on a float64 twin of the graph holding bit-identical
parameter values, so the float32 analytic gradients under test are
compared against a trustworthy estimate of the same function's true
derivative.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor, rng_from


def dtype_eps(dtype) -> float:
    return 1e-3 if np.dtype(dtype) == np.dtype(np.float32) else 1e-6


def dtype_tolerance(dtype) -> float:
    return 1e-3 if np.dtype(dtype) == np.dtype(np.float32) else 1e-6


def relative_error(analytic, numeric) -> float:
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-8)
    return float(np.abs(analytic - numeric).max(initial=0.0) / scale)


def check_gradients(build_out, wrt, eps: float, projection=None, numeric=None) -> float:
    """Worst relative error between tape and finite-difference gradients.

    build_out rebuilds the op output from the current contents of the
    tensors in wrt (perturbed in place).  projection, when given, turns
    a non-scalar output into the scalar mean(out * projection).

    numeric, when given, is a (build, wrt) twin of the graph used only
    for the finite differences; the twin's tensors are perturbed
    instead, letting a float64 copy estimate the derivative of the same
    function the float32 tape differentiated.
    """
    for p in wrt:
        p.zero_grad()
    out = build_out()
    if projection is None:
        if out.ndim != 0:
            raise ValueError("non-scalar output needs a projection")
        loss = out
    else:
        loss = T.mean_all(T.mul(out, Tensor(projection)))
    loss.backward()
    analytic = [np.array(p.grad if p.grad is not None else np.zeros_like(p.data)) for p in wrt]

    num_build, num_wrt = numeric if numeric is not None else (build_out, wrt)
    if len(num_wrt) != len(wrt):
        raise ValueError("numeric twin must mirror the checked tensors")
    proj64 = None if projection is None else np.asarray(projection, dtype=np.float64)

    def scalar() -> float:
        with T.no_grad():
            o = num_build()
        if proj64 is None:
            return float(o.data)
        return float((o.data.astype(np.float64) * proj64).sum() / o.data.size)

    worst = 0.0
    for p, a in zip(num_wrt, analytic):
        flat = p.data.reshape(-1)
        numeric_grad = np.zeros(flat.size, dtype=np.float64)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = scalar()
            # the realized step can be quantized by the tensor's dtype;
            # divide by what was actually applied
            span = float(flat[i])
            flat[i] = keep - eps
            dn = scalar()
            span -= float(flat[i])
            flat[i] = keep
            numeric_grad[i] = (up - dn) / span
        worst = max(worst, relative_error(a, numeric_grad.reshape(a.shape)))
    return worst


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.error < self.tolerance


def _away_from_zero(rng, shape, margin=0.25):
    # keep values clear of relu/prelu/abs kinks so central differences
    # stay valid under the perturbation step
    mag = rng.uniform(margin, 1.0, size=shape)
    sign = rng.choice([-1.0, 1.0], size=shape)
    return mag * sign


def _param(rng, shape, scale=0.5, name=""):
    return Tensor(rng.uniform(-scale, scale, size=shape), requires_grad=True, name=name)


def run_suite(seed: int = 0, dtype=np.float32) -> list[CheckResult]:
    """Run every gradient check at the given dtype; one result per op."""
    with T.using_dtype(dtype):
        eps = dtype_eps(dtype)
        tol = dtype_tolerance(dtype)
        # the losses are differenced on float64 twins, so the step only
        # has to balance curvature against kink crossings
        loss_eps = 1e-4 if np.dtype(dtype) == np.dtype(np.float32) else 1e-6
        results: list[CheckResult] = []

        def run(name, build, wrt, projection=None, step=None, numeric=None):
            err = check_gradients(build, wrt, step if step is not None else eps,
                                  projection, numeric=numeric)
            results.append(CheckResult(name, err, tol))

        rng = rng_from(seed, "gradcheck")

        def proj(shape):
            return rng.uniform(0.25, 1.0, size=shape)

        # conv2d: gradients w.r.t. input, weight and bias
        x = _param(rng, (2, 3, 5, 5), name="x")
        w = _param(rng, (4, 3, 3, 3), name="w")
        b = _param(rng, (4,), name="b")
        run("conv2d_3x3", lambda: T.conv2d(x, w, b, stride=1, padding=1), [x, w, b],
            projection=proj((2, 4, 5, 5)))

        x = _param(rng, (1, 2, 4, 4))
        w = _param(rng, (3, 2, 1, 1))
        b = _param(rng, (3,))
        run("conv2d_1x1", lambda: T.conv2d(x, w, b), [x, w, b], projection=proj((1, 3, 4, 4)))

        x = _param(rng, (1, 2, 6, 6))
        w = _param(rng, (2, 2, 3, 3))
        b = _param(rng, (2,))
        run("conv2d_stride2", lambda: T.conv2d(x, w, b, stride=2, padding=1), [x, w, b],
            projection=proj((1, 2, 3, 3)))

        # maxpool: distinct window values so eps cannot flip an argmax
        vals = rng.permutation(np.arange(1 * 2 * 6 * 6, dtype=np.float64)).reshape(1, 2, 6, 6)
        x = Tensor(vals / 36.0, requires_grad=True)
        run("maxpool2x2", lambda: T.maxpool2x2(x), [x], projection=proj((1, 2, 3, 3)))

        x = _param(rng, (1, 2, 6, 6))
        run("avgpool2x2", lambda: T.avgpool2x2(x), [x], projection=proj((1, 2, 3, 3)))

        x = _param(rng, (1, 2, 3, 3))
        run("bilinear_upsample2x", lambda: T.bilinear_upsample2x(x), [x],
            projection=proj((1, 2, 6, 6)))

        x = _param(rng, (2, 3, 4, 4))
        run("global_avg_pool", lambda: T.global_avg_pool(x), [x], projection=proj((2, 3, 1, 1)))

        x = _param(rng, (2, 5, 1, 1))
        w = _param(rng, (3, 5))
        b = _param(rng, (3,))
        run("fully_connected", lambda: T.fully_connected(x, w, b), [x, w, b],
            projection=proj((2, 3, 1, 1)))

        x = Tensor(_away_from_zero(rng, (2, 3, 4, 4)), requires_grad=True)
        a = Tensor([0.2], requires_grad=True)
        run("prelu", lambda: T.prelu(x, a), [x, a], projection=proj((2, 3, 4, 4)))

        x = Tensor(_away_from_zero(rng, (2, 3, 4, 4)), requires_grad=True)
        run("relu", lambda: T.relu(x), [x], projection=proj((2, 3, 4, 4)))

        x = _param(rng, (2, 3, 4, 4), scale=2.0)
        run("sigmoid", lambda: T.sigmoid(x), [x], projection=proj((2, 3, 4, 4)))

        xa = _param(rng, (1, 2, 3, 3))
        xb = _param(rng, (1, 2, 3, 3))
        run("add", lambda: T.add(xa, xb), [xa, xb], projection=proj((1, 2, 3, 3)))
        run("sub", lambda: T.sub(xa, xb), [xa, xb], projection=proj((1, 2, 3, 3)))
        run("mul", lambda: T.mul(xa, xb), [xa, xb], projection=proj((1, 2, 3, 3)))

        xa = _param(rng, (1, 3, 4, 4))
        xw = _param(rng, (1, 3, 1, 1))
        run("mul_broadcast", lambda: T.mul(xa, xw), [xa, xw], projection=proj((1, 3, 4, 4)))

        xa = _param(rng, (1, 2, 3, 3))
        xb = Tensor(_away_from_zero(rng, (1, 2, 3, 3), margin=0.5), requires_grad=True)
        run("div", lambda: T.div(xa, xb), [xa, xb], projection=proj((1, 2, 3, 3)))

        xa = _param(rng, (1, 2, 4, 4))
        xb = _param(rng, (1, 3, 4, 4))
        run("concat_channels", lambda: T.concat_channels(xa, xb), [xa, xb],
            projection=proj((1, 5, 4, 4)))

        x = Tensor(_away_from_zero(rng, (1, 2, 4, 4)), requires_grad=True)
        run("absolute", lambda: T.absolute(x), [x], projection=proj((1, 2, 4, 4)))

        x = Tensor(rng.uniform(0.5, 2.0, size=(1, 2, 4, 4)), requires_grad=True)
        run("sqrt", lambda: T.sqrt(x), [x], projection=proj((1, 2, 4, 4)))

        # clamp checked strictly inside the interval; the boundary kink
        # is not differentiable
        x = Tensor(rng.uniform(0.2, 0.8, size=(1, 3, 4, 4)), requires_grad=True)
        run("clamp_interior", lambda: T.clamp(x, 0.0, 1.0), [x], projection=proj((1, 3, 4, 4)))

        x = _param(rng, (1, 3, 4, 4))
        run("sum_channels", lambda: T.sum_channels(x), [x], projection=proj((1, 1, 4, 4)))

        x = _param(rng, (2, 3, 4, 4))
        run("mean_all", lambda: T.mean_all(x), [x])

        x = _param(rng, (1, 3, 4, 4))
        sc = rng.uniform(0.5, 2.0, size=3)
        sh = rng.uniform(-0.5, 0.5, size=3)
        run("channel_affine", lambda: T.channel_affine(x, sc, sh), [x],
            projection=proj((1, 3, 4, 4)))

        # loss functions (imported here to avoid a circular import).
        # Each builds a float64 twin holding the same parameter values;
        # finite differences run on the twin (see module docstring).
        from . import losses

        def twin(*tensors):
            with T.using_dtype(np.float64):
                return [Tensor(t.data, name=t.name) for t in tensors]

        pred = _param(rng, (1, 3, 4, 4), scale=0.4, name="pred")
        target = Tensor(pred.data + _away_from_zero(rng, (1, 3, 4, 4), margin=0.3) * 0.5)
        pred64, target64 = twin(pred, target)
        run("pixel_loss", lambda: losses.pixel_loss(pred, target), [pred], step=loss_eps,
            numeric=(lambda: losses.pixel_loss(pred64, target64), [pred64]))

        pred = Tensor(rng.uniform(0.2, 0.9, size=(1, 3, 6, 6)), requires_grad=True)
        target = Tensor(rng.uniform(0.2, 0.9, size=(1, 3, 6, 6)))
        pred64, target64 = twin(pred, target)
        run("color_loss", lambda: losses.color_loss(pred, target), [pred], step=loss_eps,
            numeric=(lambda: losses.color_loss(pred64, target64), [pred64]))

        fx = losses.random_feature_extractor(seed=7, width_scale=0.0625)
        with T.using_dtype(np.float64):
            fx64 = losses.FeatureExtractor(
                fx.state_arrays(), fx.input_mean, fx.input_std, tap=fx.tap)
        pred = Tensor(rng.uniform(0.15, 0.85, size=(1, 3, 8, 8)), requires_grad=True)
        target = Tensor(rng.uniform(0.15, 0.85, size=(1, 3, 8, 8)))
        pred64, target64 = twin(pred, target)
        run("feature_loss", lambda: losses.feature_loss(pred, target, fx), [pred],
            step=loss_eps,
            numeric=(lambda: losses.feature_loss(pred64, target64, fx64), [pred64]))

        return results


def format_table(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = []
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  {status}  rel_err={r.error:.3e}  tol={r.tolerance:.0e}")
    return "\n".join(lines)
