import numpy as np
import pytest

from btucker import decomp
from btucker.errors import FileFormatError
from btucker.tensor import (
    Tensor3,
    data_kind,
    fold,
    frobenius_norm,
    read_matrix,
    read_tensor,
    reconstruct,
    unfold,
    write_matrix,
    write_tensor,
)


def random_tensor(dims, seed=0):
    rng = np.random.default_rng(seed)
    return Tensor3(rng.normal(size=dims))


class TestConstruction:
    def test_rejects_nan(self):
        bad = np.zeros((2, 2, 2))
        bad[0, 1, 1] = np.nan
        with pytest.raises(ValueError):
            Tensor3(bad)

    def test_rejects_inf(self):
        bad = np.zeros((2, 2, 2))
        bad[1, 0, 0] = np.inf
        with pytest.raises(ValueError):
            Tensor3(bad)

    def test_rejects_wrong_ndim(self):
        with pytest.raises(ValueError):
            Tensor3(np.zeros((2, 2)))

    def test_immutable(self):
        t = random_tensor((2, 3, 4))
        with pytest.raises(ValueError):
            t.values[0, 0, 0] = 1.0


class TestUnfold:
    def test_degenerate_1x1x1(self):
        t = Tensor3(np.array([[[5.0]]]))
        m = unfold(t, 1)
        assert m.shape == (1, 1)
        assert m[0, 0] == 5.0

    def test_element_mapping_by_index_loop(self):
        # x[i,j,k] = (i+1) + 10(j+1) + 100(k+1); brute-force index oracle
        n, m, k = 2, 2, 2
        x = np.zeros((n, m, k))
        for i in range(n):
            for j in range(m):
                for kk in range(k):
                    x[i, j, kk] = (i + 1) + 10 * (j + 1) + 100 * (kk + 1)
        t = Tensor3(x)
        u1, u2, u3 = unfold(t, 1), unfold(t, 2), unfold(t, 3)
        for i in range(n):
            for j in range(m):
                for kk in range(k):
                    assert u1[i, j + m * kk] == x[i, j, kk]
                    assert u2[j, i + n * kk] == x[i, j, kk]
                    assert u3[kk, i + n * j] == x[i, j, kk]

    def test_invalid_mode(self):
        t = random_tensor((2, 2, 2))
        with pytest.raises(ValueError):
            unfold(t, 0)
        with pytest.raises(ValueError):
            unfold(t, 4)

    @pytest.mark.parametrize("mode", [1, 2, 3])
    def test_round_trip_exact(self, mode):
        t = random_tensor((3, 4, 5), seed=mode)
        back = fold(unfold(t, mode), mode, t.dims)
        assert np.array_equal(back.values, t.values)  # bitwise


class TestFold:
    def test_degenerate(self):
        t = fold(np.array([[7.0]]), 3, (1, 1, 1))
        assert t.dims == (1, 1, 1)
        assert t.values[0, 0, 0] == 7.0

    def test_element_check_2x3x4(self):
        t = random_tensor((2, 3, 4), seed=9)
        m = unfold(t, 2)
        back = fold(m, 2, (2, 3, 4))
        for i in range(2):
            for j in range(3):
                for k in range(4):
                    assert back.values[i, j, k] == t.values[i, j, k]

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            fold(np.zeros((3, 5)), 1, (3, 2, 2))


class TestReconstruct:
    def test_rank1_constant_factors(self):
        n, m, k = 4, 3, 2
        model = decomp.TuckerModel(
            core=np.array([[[2.0]]]),
            u1=np.full((1, n), 1 / np.sqrt(n)),
            u2=np.full((1, m), 1 / np.sqrt(m)),
            u3=np.full((1, k), 1 / np.sqrt(k)),
        )
        t = reconstruct(model)
        assert np.allclose(t.values, 2.0 / np.sqrt(n * m * k), atol=1e-14)

    def test_full_rank_hosvd_identity(self):
        t = random_tensor((3, 3, 3), seed=2)
        model = decomp.hosvd_init(t, (3, 3, 3))
        err = frobenius_norm(Tensor3(t.values - reconstruct(model).values))
        assert err / frobenius_norm(t) < 1e-10

    def test_naive_triple_loop_oracle(self):
        rng = np.random.default_rng(3)
        n, m, k = 4, 3, 2
        l1, l2, l3 = 2, 2, 1
        model = decomp.hosvd_init(random_tensor((n, m, k), seed=4), (l1, l2, l3))
        expected = np.zeros((n, m, k))
        for i in range(n):
            for j in range(m):
                for kk in range(k):
                    s = 0.0
                    for a in range(l1):
                        for b in range(l2):
                            for c in range(l3):
                                s += model.core[a, b, c] * model.u1[a, i] * model.u2[b, j] * model.u3[c, kk]
                    expected[i, j, kk] = s
        got = reconstruct(model).values
        assert np.max(np.abs(got - expected)) / np.max(np.abs(expected)) < 1e-12

    def test_rank_mismatch(self):
        with pytest.raises(ValueError):
            decomp.TuckerModel(
                core=np.zeros((2, 1, 1)),
                u1=np.eye(1, 3),
                u2=np.eye(1, 3),
                u3=np.eye(1, 3),
            )


class TestFrobeniusNorm:
    def test_zero(self):
        assert frobenius_norm(Tensor3(np.zeros((2, 2, 2)))) == 0.0

    def test_single_negative(self):
        assert frobenius_norm(Tensor3(np.array([[[-3.0]]]))) == 3.0

    def test_matches_unfolded_vector_norm(self):
        t = random_tensor((4, 5, 6), seed=11)
        assert np.isclose(frobenius_norm(t), np.linalg.norm(unfold(t, 1).ravel()), rtol=1e-12)

    def test_squared_equals_sum_of_squares(self):
        t = random_tensor((3, 3, 3), seed=12)
        assert np.isclose(frobenius_norm(t) ** 2, np.sum(t.values**2), rtol=1e-12)


class TestTextFormat:
    def test_tensor_round_trip_exact(self, tmp_path):
        t = random_tensor((3, 4, 2), seed=21)
        path = tmp_path / "t.txt"
        write_tensor(t, path)
        assert open(path).readline() == "T3 3 4 2\n"
        back = read_tensor(path)
        assert np.array_equal(back.values, t.values)

    def test_matrix_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(22)
        a = rng.normal(size=(5, 3)) * 1e-7
        path = tmp_path / "m.txt"
        write_matrix(a, path)
        back = read_matrix(path)
        assert np.array_equal(back, a)

    def test_canonical_order_first_index_fastest(self, tmp_path):
        x = np.arange(8, dtype=float).reshape((2, 2, 2))
        path = tmp_path / "t.txt"
        write_tensor(Tensor3(x), path)
        values = np.loadtxt(open(path).readlines()[1:]).ravel()
        # first value pair differs in i (fastest), i.e. x[0,0,0], x[1,0,0]
        assert values[0] == x[0, 0, 0]
        assert values[1] == x[1, 0, 0]
        assert values[2] == x[0, 1, 0]

    def test_data_kind(self, tmp_path):
        t = random_tensor((2, 2, 2))
        write_tensor(t, tmp_path / "t.txt")
        write_matrix(np.zeros((2, 2)), tmp_path / "m.txt")
        assert data_kind(tmp_path / "t.txt") == "tensor"
        assert data_kind(tmp_path / "m.txt") == "matrix"
        (tmp_path / "junk.txt").write_text("BLAH 1 2\n")
        with pytest.raises(FileFormatError):
            data_kind(tmp_path / "junk.txt")

    def test_corrupt_tensor_file(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("T3 2 2 2\n1 2 3\n")
        with pytest.raises(FileFormatError):
            read_tensor(path)
