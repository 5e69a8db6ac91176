import numpy as np
import pytest

from fusenet.tensor import Tensor


def numeric_grad(fn, arrays, index, eps=1e-4):
    """Central finite-difference gradient of scalar ``fn(*arrays)`` w.r.t. ``arrays[index]``."""
    x = arrays[index]
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + eps
        hi = fn(*arrays)
        x[i] = old - eps
        lo = fn(*arrays)
        x[i] = old
        g[i] = (hi - lo) / (2 * eps)
    return g


def rel_error(a, b):
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def gradcheck(op, arrays, eps=1e-4):
    """Max relative error between autodiff and finite differences over all inputs.

    ``op`` maps Tensors to a scalar Tensor; ``arrays`` are float64 inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    op(*tensors).backward()

    def value(*xs):
        return float(op(*[Tensor(x) for x in xs]).data)

    errs = []
    for i, t in enumerate(tensors):
        analytic = t.grad if t.grad is not None else np.zeros_like(arrays[i])
        errs.append(rel_error(analytic, numeric_grad(value, arrays, i, eps)))
    return max(errs)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def composite_gradcheck(seed, n_directions=3, eps=1e-6):
    """Finite-difference check of extractor + reconstructor + total loss on an 8x8 input.

    Checks the full input gradient entry by entry, and the parameter gradient
    along ``n_directions`` random directions spanning every parameter.
    Returns the worst relative error. The step is small because the deep
    relu/maxpool stack has many kinks close to any input: at 1e-4 a few units
    flip and the difference quotient stops approximating the derivative.
    """
    from fusenet.losses import LossConfig, PerceptualFeatureNet, total_loss
    from fusenet.network import FusionNet
    from fusenet.tensor import no_grad

    rng = np.random.default_rng(seed)
    model = FusionNet(seed=seed).astype(np.float64)
    net = PerceptualFeatureNet(blocks=3, seed=seed).astype(np.float64)
    cfg = LossConfig()
    x = rng.random((1, 8, 8))
    ref = rng.random((1, 8, 8))

    def value(inp):
        with no_grad():
            return float(total_loss(model(Tensor(inp)), [ref], cfg, net).data)

    xt = Tensor(x.copy(), requires_grad=True)
    model.zero_grad()
    total_loss(model(xt), [ref], cfg, net).backward()
    errs = [rel_error(xt.grad, numeric_grad(value, [x], 0, eps))]

    params = model.parameters()
    grads = {k: p.grad for k, p in params.items()}
    for _ in range(n_directions):
        v = {k: rng.standard_normal(p.shape) for k, p in params.items()}
        norm = np.sqrt(sum(float(np.sum(d * d)) for d in v.values()))
        v = {k: d / norm for k, d in v.items()}  # unit direction, so eps is the actual step
        analytic = sum(float(np.sum(grads[k] * v[k])) for k in params)
        base = {k: p.data.copy() for k, p in params.items()}
        vals = []
        for sign in (1, -1):
            for k, p in params.items():
                p.data = base[k] + sign * eps * v[k]
            vals.append(value(x))
        for k, p in params.items():
            p.data = base[k]
        errs.append(rel_error([analytic], [(vals[0] - vals[1]) / (2 * eps)]))
    return max(errs)


# -- acceptance summary ---------------------------------------------------------
# Acceptance tests call ``record`` once per criterion; the lines are printed
# at the end of the run so they show up in plain ``pytest -v`` output.

ACCEPTANCE_LINES: list[str] = []


def record(criterion: str, passed: bool, detail: str) -> str:
    line = f"{'PASS' if passed else 'FAIL'}  {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
