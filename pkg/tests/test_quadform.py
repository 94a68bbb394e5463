"""Quadratic-function core: oracles, Schur elimination, invariants.

Independent oracles used here:
    - term-by-term double-loop evaluation,
    - KKT solve (least squares on the gradient) plus substitution,
    - dense grid search over the eliminated block.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nervemp.errors import (
    DimensionMismatch,
    MissingVariable,
    UnboundedBelow,
    UnknownVariable,
)
from nervemp.quadform import QuadFunc, subspace_distance_quad


def random_psd(n, rng, ridge=0.1):
    G = rng.standard_normal((n, n))
    A = G @ G.T / n + ridge * np.eye(n)
    return (A + A.T) / 2.0


def random_quad(n, rng, ridge=0.1, b_scale=0.2):
    A = random_psd(n, rng, ridge)
    b = b_scale * rng.standard_normal(n)
    return QuadFunc(tuple(range(n)), A, b, float(rng.standard_normal()))


def eval_double_loop(q, x):
    total = q.c
    for i in range(len(q.vars)):
        total += q.b[i] * x[i]
        for j in range(len(q.vars)):
            total += x[i] * q.A[i, j] * x[j]
    return total


class TestEvaluate:
    def test_square_at_three(self):
        q = QuadFunc(("x",), [[1.0]], [0.0], 0.0)
        assert q.evaluate([3.0]) == 9.0

    def test_zero_quadratic(self):
        q = QuadFunc.zero((0, 1, 2))
        assert q.evaluate([4.0, -1.0, 7.0]) == 0.0

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = random_quad(5, rng)
            x = rng.standard_normal(5)
            expect = eval_double_loop(q, x)
            assert abs(q.evaluate(x) - expect) <= 1e-12 * max(1.0, abs(expect))

    def test_dimension_mismatch(self):
        q = QuadFunc((0, 1), np.eye(2), np.zeros(2), 0.0)
        with pytest.raises(DimensionMismatch):
            q.evaluate([1.0])

    def test_batch_agrees_with_scalar(self):
        rng = np.random.default_rng(1)
        q = random_quad(4, rng)
        X = rng.standard_normal((10, 4))
        batch = q.evaluate_batch(X)
        for row, val in zip(X, batch):
            assert abs(q.evaluate(row) - val) < 1e-12


class TestEmbed:
    def test_square_into_two_vars(self):
        q = QuadFunc(("x",), [[1.0]], [0.0], 0.0)
        q2 = q.embed(("x", "y"))
        assert q2.evaluate([3.0, 7.0]) == 9.0

    def test_identity_embedding(self):
        rng = np.random.default_rng(2)
        q = random_quad(3, rng)
        q2 = q.embed(q.vars)
        assert np.array_equal(q.A, q2.A) and np.array_equal(q.b, q2.b)

    def test_marginal_evaluation_oracle(self):
        rng = np.random.default_rng(3)
        q = random_quad(4, rng)
        sup = (0, 1, 2, 3, 9, 11)
        q2 = q.embed(sup)
        for _ in range(1000):
            x = rng.standard_normal(6)
            expect = q.evaluate(x[:4])
            assert abs(q2.evaluate(x) - expect) <= 1e-12 * max(1.0, abs(expect))

    def test_missing_variable(self):
        q = QuadFunc((0, 5), np.eye(2), np.zeros(2), 0.0)
        with pytest.raises(MissingVariable):
            q.embed((0, 1, 2))


class TestAdd:
    def test_two_squares(self):
        qx = QuadFunc(("x",), [[1.0]], [0.0], 0.0)
        qy = QuadFunc(("y",), [[1.0]], [0.0], 0.0)
        q = qx + qy
        assert q.vars == ("x", "y")
        assert np.array_equal(q.A, np.eye(2))

    def test_add_zero(self):
        rng = np.random.default_rng(4)
        q = random_quad(3, rng)
        z = QuadFunc.zero(q.vars)
        s = q + z
        assert np.array_equal(s.A, q.A) and s.c == q.c

    def test_pointwise_sum_oracle(self):
        rng = np.random.default_rng(5)
        q1 = QuadFunc((0, 2, 4), random_psd(3, rng), rng.standard_normal(3), 1.5)
        q2 = QuadFunc((1, 2, 3), random_psd(3, rng), rng.standard_normal(3), -0.5)
        s = q1 + q2
        assert s.vars == (0, 1, 2, 3, 4)
        pos = {v: i for i, v in enumerate(s.vars)}
        for _ in range(1000):
            x = rng.standard_normal(5)
            expect = q1.evaluate([x[pos[v]] for v in q1.vars]) + q2.evaluate(
                [x[pos[v]] for v in q2.vars]
            )
            assert abs(s.evaluate(x) - expect) <= 1e-12 * max(1.0, abs(expect))


class TestFixVars:
    def test_shift_square(self):
        # (x - y)^2 with y = 2 becomes (x - 2)^2
        q = QuadFunc(("x", "y"), [[1.0, -1.0], [-1.0, 1.0]], [0.0, 0.0], 0.0)
        fixed = q.fix_vars({"y": 2.0})
        assert fixed.vars == ("x",)
        for x in (-1.0, 0.0, 3.5):
            assert abs(fixed.evaluate([x]) - (x - 2.0) ** 2) < 1e-12

    def test_fix_all(self):
        rng = np.random.default_rng(6)
        q = random_quad(3, rng)
        x = rng.standard_normal(3)
        const = q.fix_vars(dict(zip(q.vars, x)))
        assert const.vars == ()
        assert abs(const.c - q.evaluate(x)) < 1e-12

    def test_partial_fix_oracle(self):
        rng = np.random.default_rng(7)
        q = random_quad(5, rng)
        fixed_vals = {1: 0.7, 3: -1.1}
        f = q.fix_vars(fixed_vals)
        assert f.vars == (0, 2, 4)
        for _ in range(1000):
            x = rng.standard_normal(3)
            full = np.empty(5)
            full[[0, 2, 4]] = x
            full[1], full[3] = 0.7, -1.1
            expect = q.evaluate(full)
            assert abs(f.evaluate(x) - expect) <= 1e-12 * max(1.0, abs(expect))

    def test_unknown_variable(self):
        q = QuadFunc((0,), [[1.0]], [0.0], 0.0)
        with pytest.raises(UnknownVariable):
            q.fix_vars({3: 1.0})


def kkt_oracle(q, elim, x):
    """Solve grad_y = 0 by least squares and substitute; independent of Schur."""
    keep = [v for v in q.vars if v not in elim]
    ys = [v for v in q.vars if v in elim]
    ki = [q.vars.index(v) for v in keep]
    yi = [q.vars.index(v) for v in ys]
    A_yy = q.A[np.ix_(yi, yi)]
    A_yx = q.A[np.ix_(yi, ki)]
    rhs = -(A_yx @ x + 0.5 * q.b[yi])
    y, *_ = np.linalg.lstsq(A_yy, rhs, rcond=None)
    full = np.empty(len(q.vars))
    full[ki] = x
    full[yi] = y
    return q.evaluate(full), y


class TestPartialMinimize:
    def test_complete_the_square(self):
        # min_y (x - y)^2 + y^2 = x^2 / 2 at y = x / 2
        q = QuadFunc(("x", "y"), [[1.0, -1.0], [-1.0, 2.0]], [0.0, 0.0], 0.0)
        msg, amap = q.partial_minimize(["y"])
        assert msg.vars == ("x",)
        assert abs(msg.A[0, 0] - 0.5) < 1e-12
        assert abs(amap.M[0, 0] - 0.5) < 1e-12

    def test_zero_message_from_deficient_projector(self):
        # distance to a span whose restriction to the kept variable is onto
        w = np.array([1.0, 0.0, -1.0, -1.0]) / np.sqrt(3.0)
        A = np.outer(w, w)
        q = QuadFunc((0, 1, 2, 3), A, np.zeros(4), 0.0)
        fixed = q.fix_vars({0: 1.3, 1: -0.4})
        msg, _ = fixed.partial_minimize([2])
        assert abs(msg.A[0, 0]) < 1e-10
        assert abs(msg.b[0]) < 1e-10
        assert abs(msg.c) < 1e-10

    def test_kkt_and_grid_oracles(self):
        rng = np.random.default_rng(8)
        ys = np.arange(-5.0, 5.0 + 0.005, 0.01)
        for trial in range(25):
            n = int(rng.integers(3, 6))
            q = random_quad(n, rng)
            n_elim = 1 + trial % 2
            elim = list(rng.choice(n, size=n_elim, replace=False))
            msg, amap = q.partial_minimize(elim)
            for _ in range(2):
                x = 0.3 * rng.standard_normal(n - n_elim)
                kkt_val, y_star = kkt_oracle(q, set(elim), x)
                assert np.max(np.abs(y_star)) < 4.5  # grid must contain the argmin
                got = msg.evaluate(x)
                assert abs(got - kkt_val) <= 1e-9 * max(1.0, abs(kkt_val))
                keep = [v for v in q.vars if v not in set(elim)]
                sub = q.fix_vars(dict(zip(keep, x)))
                if n_elim == 1:
                    vals = sub.A[0, 0] * ys**2 + sub.b[0] * ys + sub.c
                else:
                    Y1, Y2 = np.meshgrid(ys, ys, indexing="ij")
                    vals = (
                        sub.A[0, 0] * Y1**2
                        + 2.0 * sub.A[0, 1] * Y1 * Y2
                        + sub.A[1, 1] * Y2**2
                        + sub.b[0] * Y1
                        + sub.b[1] * Y2
                        + sub.c
                    )
                assert abs(vals.min() - got) <= 1e-3

    def test_argmin_map_gradient_condition(self):
        rng = np.random.default_rng(9)
        q = random_quad(5, rng)
        msg, amap = q.partial_minimize([1, 4])
        x = rng.standard_normal(3)
        y = amap.apply(dict(zip(amap.inputs, x)))
        full = {**dict(zip(amap.inputs, x)), **y}
        vec = np.array([full[v] for v in q.vars])
        grad = 2.0 * q.A @ vec + q.b
        yi = [q.vars.index(v) for v in amap.eliminated]
        assert np.max(np.abs(grad[yi])) < 1e-9

    def test_unbounded_below(self):
        q = QuadFunc((0, 1), [[1.0, 0.0], [0.0, 0.0]], [0.0, 1.0], 0.0)
        with pytest.raises(UnboundedBelow):
            q.partial_minimize([1])

    def test_empty_elimination_is_identity(self):
        rng = np.random.default_rng(10)
        q = random_quad(3, rng)
        msg, amap = q.partial_minimize([])
        assert msg is q and amap.eliminated == ()


class TestSubspaceDistance:
    def test_full_span_gives_zero(self):
        basis = [np.array([1.0, 0.0]), np.array([0.0, 1.0])]
        q = subspace_distance_quad(basis, (0, 1))
        assert np.max(np.abs(q.A)) < 1e-12

    def test_empty_basis_gives_identity(self):
        q = subspace_distance_quad([], (0, 1, 2))
        assert np.array_equal(q.A, np.eye(3))

    def test_zero_exactly_on_span(self):
        rng = np.random.default_rng(11)
        basis = [rng.standard_normal(5) for _ in range(3)]
        q = subspace_distance_quad(basis, tuple(range(5)))
        combo = 1.7 * basis[0] - 0.3 * basis[1] + 2.2 * basis[2]
        assert abs(q.evaluate(combo)) < 1e-10
        off = combo + np.linalg.svd(np.stack(basis, 1), full_matrices=True)[0][:, -1]
        assert q.evaluate(off) > 1e-2

    def test_projector_idempotent(self):
        rng = np.random.default_rng(12)
        basis = [rng.standard_normal(6) for _ in range(2)]
        q = subspace_distance_quad(basis, tuple(range(6)))
        assert np.max(np.abs(q.A @ q.A - q.A)) < 1e-10


class TestGlobalMinimize:
    def test_shifted_square(self):
        q = QuadFunc(("x",), [[1.0]], [2.0], 1.0)
        value, minimizer, kernel = q.global_minimize()
        assert abs(value) < 1e-12
        assert abs(minimizer[0] + 1.0) < 1e-12
        assert kernel.shape[1] == 0

    def test_zero_quadratic_full_kernel(self):
        q = QuadFunc.zero((0, 1, 2))
        value, minimizer, kernel = q.global_minimize()
        assert value == 0.0
        assert np.array_equal(minimizer, np.zeros(3))
        assert kernel.shape == (3, 3)

    def test_gradient_and_grid_oracles(self):
        rng = np.random.default_rng(13)
        ys = np.arange(-5.0, 5.0 + 0.005, 0.01)
        for _ in range(10):
            q = random_quad(2, rng)
            value, minimizer, kernel = q.global_minimize()
            grad = 2.0 * q.A @ minimizer + q.b
            assert np.linalg.norm(grad) <= 1e-9
            Y1, Y2 = np.meshgrid(ys, ys, indexing="ij")
            vals = (
                q.A[0, 0] * Y1**2
                + 2.0 * q.A[0, 1] * Y1 * Y2
                + q.A[1, 1] * Y2**2
                + q.b[0] * Y1
                + q.b[1] * Y2
                + q.c
            )
            assert np.max(np.abs(minimizer)) < 5.0
            assert abs(vals.min() - value) <= 1e-3

    def test_unbounded(self):
        q = QuadFunc((0,), [[0.0]], [1.0], 0.0)
        with pytest.raises(UnboundedBelow):
            q.global_minimize()


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_elimination_order_independence(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 7))
    q = random_quad(n, rng)
    vs = list(rng.choice(n, size=3, replace=False))
    one_shot, _ = q.partial_minimize(vs)
    staged, _ = q.partial_minimize(vs[:1])
    staged, _ = staged.partial_minimize(vs[1:])
    assert staged.vars == one_shot.vars
    scale = max(1.0, float(np.max(np.abs(one_shot.A))))
    assert np.max(np.abs(staged.A - one_shot.A)) <= 1e-9 * scale
    assert np.max(np.abs(staged.b - one_shot.b)) <= 1e-9 * max(1.0, float(np.max(np.abs(one_shot.b))))
    assert abs(staged.c - one_shot.c) <= 1e-9 * max(1.0, abs(one_shot.c))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_min_fubini(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 7))
    q = random_quad(n, rng)
    elim = list(rng.choice(n, size=int(rng.integers(1, n)), replace=False))
    direct, _, _ = q.global_minimize()
    partial, _ = q.partial_minimize(elim)
    via, _, _ = partial.global_minimize()
    assert abs(direct - via) <= 1e-9 * max(1.0, abs(direct))


@settings(max_examples=25, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_psd_closure_of_schur(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(3, 8))
    G = rng.standard_normal((n, max(1, n - 2)))
    A = G @ G.T / n
    q = QuadFunc(tuple(range(n)), (A + A.T) / 2.0, A @ rng.standard_normal(n), 0.0)
    elim = list(rng.choice(n, size=int(rng.integers(1, n)), replace=False))
    msg, _ = q.partial_minimize(elim)  # constructor asserts PSD
    assert isinstance(msg, QuadFunc)


@settings(max_examples=15, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_diagonal_shift_prevents_unbounded(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 6))
    G = rng.standard_normal((n, 1))
    A = G @ G.T / n
    q = QuadFunc(tuple(range(n)), (A + A.T) / 2.0, rng.standard_normal(n), 0.0)
    shifted = QuadFunc(q.vars, q.A + 1e-3 * np.eye(n), q.b, q.c)
    for r in range(1, n):
        elim = list(rng.choice(n, size=r, replace=False))
        msg, _ = shifted.partial_minimize(elim)
        if len(msg.vars):
            assert np.linalg.eigvalsh(msg.A)[0] > -1e-12


class TestConstructionInvariants:
    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            QuadFunc((0, 1), [[1.0, 0.5], [0.0, 1.0]], [0.0, 0.0], 0.0)

    def test_rejects_indefinite(self):
        with pytest.raises(ValueError):
            QuadFunc((0,), [[-1.0]], [0.0], 0.0)

    def test_rejects_duplicate_vars(self):
        with pytest.raises(ValueError):
            QuadFunc((0, 0), np.eye(2), np.zeros(2), 0.0)

    def test_immutable(self):
        q = QuadFunc((0,), [[1.0]], [0.0], 0.0)
        with pytest.raises(AttributeError):
            q.c = 5.0
