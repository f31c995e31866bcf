import numpy as np
import pytest

from hbvm.errors import SingularSystemError
from hbvm.structured_linalg import (BlockSystem, assemble_dense,
                                    dense_oracle_solve, lstsq_bordered,
                                    solve_abd, solve_babd)


def random_blocks(rng, n, d, s, scale=0.25):
    sd = s * d
    return (scale * rng.standard_normal((n, sd, d)),
            np.tile(np.eye(sd), (n, 1, 1)) + scale * rng.standard_normal((n, sd, sd)),
            -np.tile(np.eye(d), (n, 1, 1)) + scale * rng.standard_normal((n, d, d)),
            scale * rng.standard_normal((n, d, sd)))


def separated_system(rng, n, d, s, r):
    V, K, L, UT = random_blocks(rng, n, d, s)
    return BlockSystem(n=n, d=d, s=s, V=V, K=K, L=L, UT=UT,
                       rhs_stage=rng.standard_normal((n, s * d)),
                       rhs_node=rng.standard_normal((n, d)),
                       kind="separated",
                       Ba=rng.standard_normal((r, d)),
                       rhs_a=rng.standard_normal(r),
                       Bb=rng.standard_normal((d - r, d)),
                       rhs_b=rng.standard_normal(d - r))


def coupled_system(rng, n, d, s):
    V, K, L, UT = random_blocks(rng, n, d, s)
    return BlockSystem(n=n, d=d, s=s, V=V, K=K, L=L, UT=UT,
                       rhs_stage=rng.standard_normal((n, s * d)),
                       rhs_node=rng.standard_normal((n, d)),
                       kind="coupled",
                       Ba=rng.standard_normal((d, d)),
                       rhs_a=rng.standard_normal(d),
                       Bb=rng.standard_normal((d, d)))


def periodic_system(rng, n, d, s, r, with_h):
    V, K, L, UT = random_blocks(rng, n, d, s)
    return BlockSystem(n=n, d=d, s=s, V=V, K=K, L=L, UT=UT,
                       rhs_stage=rng.standard_normal((n, s * d)),
                       rhs_node=rng.standard_normal((n, d)),
                       kind="periodic",
                       Ba=rng.standard_normal((r, d)) if r else None,
                       rhs_a=rng.standard_normal(r) if r else None,
                       BH=rng.standard_normal(d) if with_h else None,
                       rhs_H=float(rng.standard_normal()) if with_h else None,
                       w=rng.standard_normal((n, s * d)) if with_h else None,
                       v=rng.standard_normal((n, d)) if with_h else None)


class TestAbd:
    def test_identity_system(self):
        n, d, s = 4, 2, 1
        sys_ = BlockSystem(
            n=n, d=d, s=s,
            V=np.zeros((n, s * d, d)),
            K=np.tile(np.eye(s * d), (n, 1, 1)),
            L=np.zeros((n, d, d)),
            UT=np.zeros((n, d, s * d)),
            rhs_stage=np.arange(n * s * d, dtype=float).reshape(n, s * d),
            rhs_node=np.ones((n, d)),
            kind="separated",
            Ba=np.eye(d), rhs_a=np.array([2.0, 3.0]),
            Bb=np.zeros((0, d)), rhs_b=np.zeros(0))
        # rows: Ba delta_0 = rhs_a; K Delta_i = c_i; I delta_{i+1} = b_i
        x = solve_abd(sys_)
        A, rhs = assemble_dense(sys_)
        assert np.max(np.abs(A @ x - rhs)) < 1e-14

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(seed)
        m = int(rng.integers(1, 3))
        s = int(rng.integers(1, 4))
        n = int(rng.integers(3, 21))
        d = 2 * m
        r = int(rng.integers(1, d + 1))
        sys_ = separated_system(rng, n, d, s, r)
        x = solve_abd(sys_)
        xo = dense_oracle_solve(sys_)
        assert np.linalg.norm(x - xo) / np.linalg.norm(xo) < 1e-11

    def test_residual_small(self):
        rng = np.random.default_rng(77)
        sys_ = separated_system(rng, 12, 4, 2, 2)
        x = solve_abd(sys_)
        A, rhs = assemble_dense(sys_)
        assert np.linalg.norm(A @ x - rhs) / np.linalg.norm(rhs) < 1e-12

    def test_condition_info(self):
        rng = np.random.default_rng(1)
        sys_ = separated_system(rng, 5, 2, 2, 1)
        info = {}
        solve_abd(sys_, info=info)
        assert info["cond_estimate"] > 1.0
        assert np.isfinite(info["norm1"])

    def test_singular_reports_interval(self):
        rng = np.random.default_rng(2)
        sys_ = separated_system(rng, 5, 2, 1, 1)
        sys_.V[3] = 0.0
        sys_.K[3] = 0.0
        with pytest.raises(SingularSystemError, match="interval 3"):
            solve_abd(sys_)

    def test_linear_memory_growth(self):
        import tracemalloc
        rng = np.random.default_rng(10)
        peaks = []
        for n in (100, 200):
            sys_ = separated_system(rng, n, 2, 2, 1)
            tracemalloc.start()
            solve_abd(sys_)
            _, peak = tracemalloc.get_traced_memory()
            tracemalloc.stop()
            peaks.append(peak)
        assert peaks[1] < 2.5 * peaks[0] + 65536


class TestBabd:
    @pytest.mark.parametrize("seed", range(8))
    def test_matches_dense_oracle(self, seed):
        rng = np.random.default_rng(100 + seed)
        m = int(rng.integers(1, 3))
        s = int(rng.integers(1, 4))
        n = int(rng.integers(3, 21))
        sys_ = coupled_system(rng, n, 2 * m, s)
        x = solve_babd(sys_)
        xo = dense_oracle_solve(sys_)
        assert np.linalg.norm(x - xo) / np.linalg.norm(xo) < 1e-11

    def test_zero_bb_reduces_to_separated(self):
        rng = np.random.default_rng(200)
        n, d, s = 6, 2, 1
        V, K, L, UT = random_blocks(rng, n, d, s)
        c = rng.standard_normal((n, s * d))
        b = rng.standard_normal((n, d))
        Ba = rng.standard_normal((d, d))
        ra = rng.standard_normal(d)
        coupled = BlockSystem(n=n, d=d, s=s, V=V, K=K, L=L, UT=UT, rhs_stage=c,
                              rhs_node=b, kind="coupled", Ba=Ba, rhs_a=ra,
                              Bb=np.zeros((d, d)))
        separated = BlockSystem(n=n, d=d, s=s, V=V, K=K, L=L, UT=UT, rhs_stage=c,
                                rhs_node=b, kind="separated", Ba=Ba, rhs_a=ra,
                                Bb=np.zeros((0, d)), rhs_b=np.zeros(0))
        assert np.max(np.abs(solve_babd(coupled) - solve_abd(separated))) < 1e-12

    def test_periodic_structure_rows(self):
        # B_a = I, B_b = -I encodes delta_0 - delta_n = rhs
        rng = np.random.default_rng(300)
        n, d, s = 6, 2, 2
        sys_ = coupled_system(rng, n, d, s)
        sys_.Ba = np.eye(d)
        sys_.Bb = -np.eye(d)
        x = solve_babd(sys_)
        A, rhs = assemble_dense(sys_)
        assert np.linalg.norm(A @ x - rhs) / np.linalg.norm(rhs) < 1e-12


class TestLstsqBordered:
    def test_square_consistent_system(self):
        # no anchors, no energy row: square periodic layout, zero residual
        rng = np.random.default_rng(400)
        sys_ = periodic_system(rng, 6, 2, 2, r=0, with_h=False)
        x, res = lstsq_bordered(sys_)
        xo = dense_oracle_solve(sys_)
        assert res < 1e-12
        assert np.linalg.norm(x - xo) / np.linalg.norm(xo) < 1e-10

    @pytest.mark.parametrize("seed", range(8))
    def test_matches_qr_oracle(self, seed):
        rng = np.random.default_rng(500 + seed)
        m = int(rng.integers(1, 3))
        s = int(rng.integers(1, 4))
        n = int(rng.integers(3, 15))
        r = int(rng.integers(0, 2 * m + 1))
        with_h = bool(rng.integers(0, 2))
        sys_ = periodic_system(rng, n, 2 * m, s, r, with_h)
        x, res = lstsq_bordered(sys_)
        A, rhs = assemble_dense(sys_)
        xo = np.linalg.lstsq(A, rhs, rcond=None)[0]
        assert np.linalg.norm(x - xo) / max(1e-300, np.linalg.norm(xo)) < 1e-10
        assert res == pytest.approx(np.linalg.norm(A @ x - rhs), abs=1e-11)

    @pytest.mark.parametrize("seed", range(4))
    def test_normal_equations(self, seed):
        rng = np.random.default_rng(600 + seed)
        sys_ = periodic_system(rng, 8, 4, 2, r=2, with_h=True)
        x, _ = lstsq_bordered(sys_)
        A, rhs = assemble_dense(sys_)
        assert np.linalg.norm(A.T @ (A @ x - rhs)) < 1e-9 * np.linalg.norm(rhs)

    def test_rank_deficient_named(self):
        rng = np.random.default_rng(700)
        sys_ = periodic_system(rng, 5, 2, 1, r=1, with_h=False)
        sys_.K[2] = 0.0
        sys_.V[2] = 0.0
        sys_.UT[2] = 0.0
        sys_.L[2][:, :] = 0.0
        with pytest.raises(SingularSystemError, match="smallest diagonal"):
            lstsq_bordered(sys_)


class TestDenseOracle:
    def test_identity(self):
        n, d, s = 3, 2, 1
        sys_ = BlockSystem(
            n=n, d=d, s=s,
            V=np.zeros((n, s * d, d)),
            K=np.tile(np.eye(s * d), (n, 1, 1)),
            L=np.zeros((n, d, d)),
            UT=np.zeros((n, d, s * d)),
            rhs_stage=np.ones((n, s * d)),
            rhs_node=np.ones((n, d)),
            kind="separated",
            Ba=np.eye(d), rhs_a=np.ones(d),
            Bb=np.zeros((0, d)), rhs_b=np.zeros(0))
        x = dense_oracle_solve(sys_)
        A, rhs = assemble_dense(sys_)
        assert np.max(np.abs(A @ x - rhs)) < 1e-14

    def test_scalar_system(self):
        sys_ = BlockSystem(
            n=1, d=1, s=1,
            V=np.zeros((1, 1, 1)),
            K=np.array([[[2.0]]]),
            L=np.zeros((1, 1, 1)),
            UT=np.zeros((1, 1, 1)),
            rhs_stage=np.array([[4.0]]),
            rhs_node=np.array([[1.0]]),
            kind="separated",
            Ba=np.array([[1.0]]), rhs_a=np.array([3.0]),
            Bb=np.zeros((0, 1)), rhs_b=np.zeros(0))
        x = dense_oracle_solve(sys_)
        # K Delta_0 = 4 -> Delta_0 = 2; Ba delta_0 = 3; delta_1 = 1
        assert x == pytest.approx([3.0, 2.0, 1.0])


def test_sweep_against_oracle_full_grid():
    # the spec-level randomized battery lives in the acceptance suite; this
    # covers the dimension corners cheaply
    rng = np.random.default_rng(900)
    for m in (1, 2):
        for s in (1, 3):
            for n in (3, 7):
                sys_ = separated_system(rng, n, 2 * m, s, m)
                x = solve_abd(sys_)
                xo = dense_oracle_solve(sys_)
                assert np.linalg.norm(x - xo) / np.linalg.norm(xo) < 1e-10
