import logging

import numpy as np
import pytest

from irsrsma.numerics import db_to_linear, dbm_to_watt, hermitize, herm_inner, min_eig, watt_to_dbm


def test_unit_conversions():
    assert db_to_linear(3.0) == pytest.approx(1.9952623149688795)
    assert dbm_to_watt(-80.0) == pytest.approx(1e-11)
    assert dbm_to_watt(20.0) == pytest.approx(0.1)
    assert watt_to_dbm(dbm_to_watt(25.0)) == pytest.approx(25.0)


def test_hermitize_symmetrizes_and_warns(caplog):
    X = np.array([[1.0, 2.0], [0.0, 1.0]], dtype=complex)
    with caplog.at_level(logging.WARNING):
        H = hermitize(X, "X")
    np.testing.assert_allclose(H, [[1, 1], [1, 1]])
    assert "asymmetric" in caplog.text


def test_hermitize_quiet_on_roundoff(caplog):
    X = np.eye(2, dtype=complex)
    X[0, 1] = 1e-12
    with caplog.at_level(logging.WARNING):
        hermitize(X)
    assert caplog.text == ""


def test_inner_and_min_eig():
    A = np.array([[2, 1j], [-1j, 2]])
    assert herm_inner(A, np.eye(2)) == pytest.approx(4.0)
    assert min_eig(A) == pytest.approx(1.0)
    assert min_eig(np.zeros((0, 0))) == 0.0
