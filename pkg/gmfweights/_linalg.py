import logging

import numpy as np
import numpy.typing as npt
import scipy.linalg

from gmfweights.exceptions import NonFiniteInputError, SingularCovarianceError

logger = logging.getLogger(__name__)

_JITTER_SCALE = 1e-12


def _symmetrize(matrix: npt.ArrayLike) -> npt.NDArray[np.float64]:
    matrix = np.asarray(matrix, dtype=np.float64)
    return 0.5 * (matrix + matrix.T)


def _cholesky(cov: npt.ArrayLike, what: str = "covariance") -> npt.NDArray[np.float64]:
    """
    Lower-triangular Cholesky factor of a symmetrized covariance.

    A failed factorization is retried once with ``1e-12 * trace(P) / n * I``
    added to the diagonal; a second failure raises SingularCovarianceError.
    """
    cov = _symmetrize(np.atleast_2d(cov))
    if not np.all(np.isfinite(cov)):
        raise NonFiniteInputError(what)

    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass

    n = cov.shape[0]
    jitter = _JITTER_SCALE * np.trace(cov) / n
    if not jitter > 0.0:
        raise SingularCovarianceError(what)

    logger.warning("Cholesky of %s failed, retrying with jitter %.3e", what, jitter)
    try:
        return np.linalg.cholesky(cov + jitter * np.eye(n))
    except np.linalg.LinAlgError as e:
        raise SingularCovarianceError(what) from e


def _solve_spd(
    cov: npt.ArrayLike, rhs: npt.ArrayLike, what: str = "covariance"
) -> npt.NDArray[np.float64]:
    """Solve ``cov @ x = rhs`` through the jittered Cholesky factor."""
    chol = _cholesky(cov, what)
    return scipy.linalg.cho_solve((chol, True), np.asarray(rhs, dtype=np.float64))


def _min_eigenvalue_ratio(cov: npt.ArrayLike) -> float:
    eigenvalues = np.linalg.eigvalsh(_symmetrize(cov))
    largest = float(np.max(np.abs(eigenvalues)))
    if largest == 0.0:
        return 0.0
    return float(eigenvalues.min() / largest)


def is_symmetric_psd(cov: npt.ArrayLike, tol: float = 1e-10) -> bool:
    """
    Check whether a matrix is symmetric positive-semidefinite.

    Args:
        cov: Square matrix
        tol: Allowed negative eigenvalue relative to the largest one

    Returns:
        True if the matrix is symmetric within 1e-12 (relative) and its
        smallest eigenvalue is at least ``-tol`` times the largest.
    """
    cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
    scale = max(float(np.max(np.abs(cov))), np.finfo(np.float64).tiny)
    if np.max(np.abs(cov - cov.T)) > 1e-12 * scale:
        return False
    return _min_eigenvalue_ratio(cov) >= -tol
