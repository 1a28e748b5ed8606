import numpy as np
import pytest
from scipy import stats

from conftest import rel
from ttkalman.krp import krp_to_tt
from ttkalman.tt import contract_full, tt_norm, zeros
from ttkalman.volterra import (
    InputStream,
    VolterraModel,
    build_ut,
    build_Ut,
    generate_outputs,
    kernel_train,
    noiseless_outputs,
    synthesize_kernels,
    write_dataset,
)


def kron_power(v, d):
    out = np.ones(1)
    for _ in range(d):
        out = np.kron(out, v)
    return out


# -- regressors ----------------------------------------------------------------


def test_build_ut_definition():
    s = InputStream(np.array([0.5, -1.0]))
    assert np.array_equal(build_ut(s, 2, 1, 2), [1, -1, 0.5])


def test_build_ut_zero_prehistory():
    s = InputStream(np.array([0.7, 1.0, 2.0]))
    assert np.array_equal(build_ut(s, 1, 1, 3), [1, 0.7, 0, 0])


def test_build_ut_two_inputs_by_hand():
    samples = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]])
    s = InputStream(samples)
    # newest time first, inputs of one instant contiguous
    assert np.array_equal(build_ut(s, 3, 2, 2), [1, 5, 6, 3, 4])
    assert np.array_equal(build_ut(s, 3, 2, 4), [1, 5, 6, 3, 4, 1, 2, 0, 0])


def test_build_ut_errors():
    s = InputStream(np.ones(3))
    with pytest.raises(ValueError):
        build_ut(s, 0, 1, 2)
    with pytest.raises(IndexError):
        build_ut(s, 4, 1, 2)
    with pytest.raises(ValueError):
        build_ut(s, 1, 2, 2)


def test_build_Ut_rows():
    s = InputStream.gaussian(20, 2, seed=3)
    assert np.array_equal(build_Ut(s, 4, 1, 2, 3), build_ut(s, 4, 2, 3)[None, :])
    U = build_Ut(s, 5, 4, 2, 3)
    for j in range(4):
        assert np.array_equal(U[j], build_ut(s, 5 + j, 2, 3))
    with pytest.raises(ValueError):
        build_Ut(s, 1, 0, 2, 3)


def test_build_Ut_constant_input():
    s = InputStream(np.ones(10))
    assert np.array_equal(build_Ut(s, 4, 3, 1, 3), np.ones((3, 4)))


# -- kernels --------------------------------------------------------------------


def test_kernel_basis_vector():
    k = kernel_train(np.array([1.0, 0.0]), 2)
    assert np.array_equal(contract_full(k)[0, :, 0], [1, 0, 0, 0])


def test_kernel_norm_identity():
    k = synthesize_kernels(4, 3, 1, seed=1)
    h = np.random.default_rng(1).standard_normal((1, 4))[0]
    assert tt_norm(k)[0] == pytest.approx(np.linalg.norm(h) ** 3, rel=1e-14)


def test_kernel_dense_power():
    k = synthesize_kernels(6, 4, 1, seed=2)
    assert k.ranks == [1, 1, 1, 1, 1]
    h = np.random.default_rng(2).standard_normal((1, 6))[0]
    assert rel(contract_full(k)[0, :, 0], kron_power(h, 4)) <= 1e-13


def test_kernel_multiple_outputs():
    h = np.random.default_rng(0).standard_normal((3, 2))
    k = kernel_train(h, 3)
    assert k.batch == 3
    dense = contract_full(k)
    for j in range(3):
        assert rel(dense[j, :, 0], kron_power(h[j], 3)) <= 1e-14
    assert kernel_train(h, 1).ranks == [3, 1]


def test_synthesize_validation():
    with pytest.raises(ValueError):
        synthesize_kernels(0, 2)


def test_model_validation():
    with pytest.raises(ValueError):
        VolterraModel(1, 1, 2, 2, synthesize_kernels(4, 2))
    with pytest.raises(ValueError):
        VolterraModel(1, 1, 2, 2, synthesize_kernels(3, 2), meas_var=-1)
    model = VolterraModel.random(2, 2, 3, 2, seed=0)
    assert model.n == 7 and model.kernels.batch == 2


# -- outputs ---------------------------------------------------------------------


def test_outputs_zero_kernels_are_noise():
    n, d, m = 3, 2, 4000
    model = VolterraModel(1, 1, 2, d, zeros([n] * d, [1] * d, 1, "vector-train"), meas_var=0.25)
    s = InputStream.gaussian(m, 1, seed=0)
    Y = generate_outputs(model, s, 1, m, seed=1)
    # chi-square bound on the sample variance
    dof = Y.size
    lo, hi = stats.chi2.ppf([0.0015, 0.9985], dof) / dof * 0.25
    assert lo <= np.mean(Y ** 2) <= hi


def test_outputs_basis_kernel_select_constant():
    n, d = 4, 3
    e1 = np.zeros(n)
    e1[0] = 1.0
    model = VolterraModel(1, 1, 3, d, kernel_train(e1, d), meas_var=0.0)
    s = InputStream.gaussian(30, 1, seed=5)
    assert np.allclose(generate_outputs(model, s, 7, 5), np.ones((5, 1)), rtol=0, atol=1e-13)


def test_outputs_match_dense_regressors():
    model = VolterraModel.random(2, 2, 2, 3, meas_var=0.0, seed=4)
    s = InputStream.gaussian(40, 2, seed=4)
    Y = generate_outputs(model, s, 10, 3)
    X = contract_full(model.kernels)[:, :, 0].T
    for j in range(3):
        row = kron_power(build_ut(s, 10 + j, 2, 2), 3)
        assert rel(Y[j], row @ X) <= 1e-12


def test_time_shift_consistency():
    model = VolterraModel.random(1, 1, 4, 3, meas_var=0.0, seed=9)
    s = InputStream.gaussian(50, 1, seed=9)
    a = generate_outputs(model, s, 5, 4)
    b = generate_outputs(model, s, 6, 4)
    assert np.allclose(a[1:], b[:-1], rtol=1e-12, atol=1e-12)


def test_outputs_seeded_noise():
    model = VolterraModel.random(1, 1, 2, 2, meas_var=1e-2, seed=1)
    s = InputStream.gaussian(10, 1, seed=1)
    a = generate_outputs(model, s, 1, 5, seed=3)
    b = generate_outputs(model, s, 1, 5, seed=3)
    assert np.array_equal(a, b)
    C = krp_to_tt(build_Ut(s, 1, 5, 1, 2), 2)
    clean = noiseless_outputs(C, model.kernels)
    assert not np.array_equal(a, clean)
    assert np.array_equal(generate_outputs(model, s, 1, 5, seed=3, C_train=C), a)


# -- files -------------------------------------------------------------------------


def test_stream_csv_round_trip(tmp_path):
    s = InputStream.gaussian(7, 3, seed=0)
    path = tmp_path / "u.csv"
    s.to_csv(path)
    back = InputStream.from_csv(path)
    assert back.source == "file"
    assert np.array_equal(back.samples, s.samples)
    path.write_text("u1,u2\n1.5,2\n-3,4e-2\n")
    assert np.array_equal(InputStream.from_csv(path).samples, [[1.5, 2], [-3, 0.04]])


def test_stream_shape_validation():
    assert InputStream(np.arange(3.0)).p == 1
    with pytest.raises(ValueError):
        InputStream(np.zeros((2, 2, 2)))


def test_write_dataset(tmp_path):
    s = InputStream.gaussian(6, 2, seed=0)
    Y = np.arange(6.0).reshape(3, 2)
    path = tmp_path / "data.csv"
    write_dataset(path, s, Y, t0=2)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,u1,u2,y1,y2"
    first = lines[1].split(",")
    assert first[0] == "2"
    assert float(first[1]) == s.samples[1, 0] and float(first[3]) == 0.0
