import numpy as np

MACHINE_EPS = 2.0 ** -52

def symmetrize(M: np.ndarray) -> np.ndarray:
    return (M + M.T) / 2.0

def psd_sqrt(M: np.ndarray) -> np.ndarray:
    """
    対称半正定値行列の主平方根（固有値分解による）
    """
    w, U = np.linalg.eigh(symmetrize(M))
    w = np.clip(w, 0.0, None)
    return symmetrize((U * np.sqrt(w)) @ U.T)

def numerical_rank(M: np.ndarray, size: int) -> int:
    """
    特異値のしきい値 size·ε·σ_max による数値ランク
    """
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > size * MACHINE_EPS * sv[0]))

def spectral_radius(M: np.ndarray) -> float:
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))

def min_eigenvalue(M: np.ndarray) -> float:
    return float(np.min(np.linalg.eigvalsh(symmetrize(M))))

def frozen(a, ndim: int | None = None) -> np.ndarray:
    """
    float64の読み取り専用配列に変換する
    """
    arr = np.array(a, dtype=float, copy=True)
    if ndim is not None and arr.ndim != ndim:
        raise ValueError(f"expected a {ndim}-dimensional array, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr
