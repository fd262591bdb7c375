"""Algebraic curvature tensors, Kulkarni-Nomizu products and product-sphere Weyl tensors.

Components are stored densely as (n, n, n, n) arrays in an orthonormal frame at
the base point, so the metric there is the identity.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

MAX_DENSE_DIM = 8


class CurvatureError(ValueError):
    pass


@dataclass(frozen=True)
class AlgebraicCurvatureTensor:
    components: np.ndarray
    note: str = ""

    def __post_init__(self):
        c = np.asarray(self.components, dtype=float)
        if c.ndim != 4 or len(set(c.shape)) != 1:
            raise CurvatureError(f"expected an (n,n,n,n) array, got shape {c.shape}")
        object.__setattr__(self, "components", c)

    @property
    def n(self) -> int:
        return self.components.shape[0]

    def __getitem__(self, idx):
        return self.components[idx]

    def symmetry_defects(self) -> dict:
        """Max absolute violation of each curvature symmetry (exhaustive sweep)."""
        W = self.components
        bianchi = W + np.einsum("jkil->ijkl", W) + np.einsum("kijl->ijkl", W)
        return {
            "antisym_12": float(np.max(np.abs(W + np.swapaxes(W, 0, 1)))),
            "antisym_34": float(np.max(np.abs(W + np.swapaxes(W, 2, 3)))),
            "pair_exchange": float(np.max(np.abs(W - np.transpose(W, (2, 3, 0, 1))))),
            "bianchi": float(np.max(np.abs(bianchi))),
        }

    def trace_defect(self) -> float:
        """max_{j,l} |sum_i W_{ijil}|; zero for Weyl tensors."""
        return float(np.max(np.abs(np.einsum("ijil->jl", self.components))))

    def is_curvature_symmetric(self, tol: float = 1e-12) -> bool:
        return all(v <= tol for v in self.symmetry_defects().values())

    def nonzero_components(self, tol: float = 0.0):
        W = self.components
        for idx in itertools.product(range(self.n), repeat=4):
            v = W[idx]
            if abs(v) > tol:
                yield idx, float(v)

    def to_document(self) -> dict:
        return {
            "schema_version": 1,
            "type": "curvature-tensor",
            "n": self.n,
            "note": self.note,
            "components": [{"index": list(i), "value": v} for i, v in self.nonzero_components()],
        }

    @classmethod
    def from_document(cls, doc: dict) -> "AlgebraicCurvatureTensor":
        n = int(doc["n"])
        W = np.zeros((n, n, n, n))
        for c in doc["components"]:
            W[tuple(c["index"])] = c["value"]
        return cls(W, doc.get("note", ""))


def _check_sym2(T, name):
    T = np.asarray(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise CurvatureError(f"{name} must be a square matrix")
    if not np.allclose(T, T.T, atol=1e-12 * max(1.0, float(np.max(np.abs(T)))), rtol=0):
        raise CurvatureError(f"{name} must be symmetric")
    return T


def kulkarni_nomizu(T, S) -> AlgebraicCurvatureTensor:
    """(T o S)_{ijkl} = T_ik S_jl - T_il S_jk + T_jl S_ik - T_jk S_il."""
    T = _check_sym2(T, "T")
    S = _check_sym2(S, "S")
    if T.shape != S.shape:
        raise CurvatureError(f"dimension mismatch: {T.shape} vs {S.shape}")
    K = (np.einsum("ik,jl->ijkl", T, S) - np.einsum("il,jk->ijkl", T, S)
         + np.einsum("jl,ik->ijkl", T, S) - np.einsum("jk,il->ijkl", T, S))
    return AlgebraicCurvatureTensor(K)


@dataclass(frozen=True)
class ProductSphereWeyl:
    """Weyl tensor of the round product S^p x S^q at any point (frame: first p, then q)."""
    p: int
    q: int

    def __post_init__(self):
        if self.p < 2 or self.q < 2:
            raise CurvatureError("product-sphere Weyl requires p, q >= 2")

    @property
    def n(self) -> int:
        return self.p + self.q

    @property
    def _den(self) -> float:
        n = self.n
        return (n - 1) * (n - 2)

    @property
    def C1(self) -> float:
        return 2.0 * self.q * (self.q - 1) / self._den

    @property
    def C2(self) -> float:
        return 2.0 * self.p * (self.p - 1) / self._den

    @property
    def C3(self) -> float:
        return 2.0 * (self.p - 1) * (self.q - 1) / self._den

    def materialize(self) -> AlgebraicCurvatureTensor:
        p, n = self.p, self.n
        W = np.zeros((n, n, n, n))
        P = np.zeros(n)
        P[:p] = 1.0
        Q = 1.0 - P
        gp, gq = np.diag(P), np.diag(Q)
        blk = lambda g: np.einsum("ik,jl->ijkl", g, g) - np.einsum("il,jk->ijkl", g, g)
        W += self.C1 * blk(gp) + self.C2 * blk(gq)
        # mixed block W_{i a j b} = -C3 delta_ij delta_ab, completed by the symmetries
        m = np.einsum("ij,ab->iajb", gp, gq)
        W += -self.C3 * (m + np.transpose(m, (1, 0, 3, 2)))
        # orderings (i a b j) and (a i j b) carry +C3
        W += self.C3 * (np.transpose(m, (0, 1, 3, 2)) + np.transpose(m, (1, 0, 2, 3)))
        return AlgebraicCurvatureTensor(W, note=f"product sphere S^{self.p} x S^{self.q}")

    def to_document(self) -> dict:
        doc = self.materialize().to_document()
        doc.update({"p": self.p, "q": self.q, "C1": self.C1, "C2": self.C2, "C3": self.C3})
        return doc


def product_sphere_weyl(p: int, q: int) -> ProductSphereWeyl:
    return ProductSphereWeyl(p, q)


def weyl_from_decomposition(Rm, Ric, S: float, n: int) -> AlgebraicCurvatureTensor:
    """Weyl = Rm - Ric o g / (n-2) + S g o g / (2(n-1)(n-2)), with g = identity."""
    Rm = np.asarray(Rm.components if isinstance(Rm, AlgebraicCurvatureTensor) else Rm, dtype=float)
    Ric = np.asarray(Ric, dtype=float)
    if Rm.shape != (n,) * 4 or Ric.shape != (n, n):
        raise CurvatureError("inconsistent dimensions for Rm / Ric")
    if n <= 3:
        return AlgebraicCurvatureTensor(np.zeros((n,) * 4),
                                        note=f"Weyl tensor vanishes identically in dimension {n}")
    g = np.eye(n)
    W = (Rm - kulkarni_nomizu(Ric, g).components / (n - 2)
         + S * kulkarni_nomizu(g, g).components / (2.0 * (n - 1) * (n - 2)))
    return AlgebraicCurvatureTensor(W)


def product_sphere_curvature(p: int, q: int):
    """(Rm, Ric, S) of S^p x S^q in the product orthonormal frame."""
    n = p + q
    gp = np.diag([1.0] * p + [0.0] * q)
    gq = np.diag([0.0] * p + [1.0] * q)
    Rm = 0.5 * kulkarni_nomizu(gp, gp).components + 0.5 * kulkarni_nomizu(gq, gq).components
    Ric = (p - 1) * gp + (q - 1) * gq
    S = float(p * (p - 1) + q * (q - 1))
    return AlgebraicCurvatureTensor(Rm), Ric, S


def round_sphere_curvature(n: int):
    g = np.eye(n)
    return AlgebraicCurvatureTensor(0.5 * kulkarni_nomizu(g, g).components), (n - 1) * g, float(n * (n - 1))


def is_block_invariant(W: AlgebraicCurvatureTensor, p: int, q: int, tol: float = 1e-10,
                       trials: int = 3) -> bool:
    """Check invariance of W under O(p) x O(q) acting blockwise on the frame."""
    if W.n != p + q:
        return False
    rng = np.random.default_rng(12345)
    A = W.components
    for _ in range(trials):
        Rp, _r = np.linalg.qr(rng.standard_normal((p, p)))
        Rq, _r = np.linalg.qr(rng.standard_normal((q, q)))
        R = np.zeros((p + q, p + q))
        R[:p, :p], R[p:, p:] = Rp, Rq
        B = np.einsum("ai,bj,ck,dl,ijkl->abcd", R, R, R, R, A, optimize=True)
        if np.max(np.abs(B - A)) > tol * max(1.0, np.max(np.abs(A))):
            return False
    return True


def random_weyl(n: int, seed: int = 0) -> AlgebraicCurvatureTensor:
    """A generic Weyl tensor: Weyl part of a random algebraic curvature tensor."""
    rng = np.random.default_rng(seed)
    R = np.zeros((n,) * 4)
    for _ in range(n):
        a = rng.standard_normal((n, n))
        b = rng.standard_normal((n, n))
        R += kulkarni_nomizu(a + a.T, b + b.T).components
    Ric = np.einsum("ijil->jl", R)
    Ric = 0.5 * (Ric + Ric.T)
    S = float(np.trace(Ric))
    return weyl_from_decomposition(R, Ric, S, n)


def parse_tensor_spec(spec: str):
    """Tensor from a short description.

    'product:PxQ' -> ProductSphereWeyl, 'zero:N' -> zero tensor, 'round:N' -> Weyl of
    the round sphere (zero), 'random:N[:SEED]' -> generic Weyl tensor.
    """
    kind, _, rest = spec.partition(":")
    try:
        if kind == "product":
            p, q = (int(s) for s in rest.lower().split("x"))
            return ProductSphereWeyl(p, q)
        if kind == "zero":
            n = int(rest)
            return AlgebraicCurvatureTensor(np.zeros((n,) * 4), note="zero tensor")
        if kind == "round":
            n = int(rest)
            Rm, Ric, S = round_sphere_curvature(n)
            W = weyl_from_decomposition(Rm, Ric, S, n)
            return AlgebraicCurvatureTensor(np.where(np.abs(W.components) < 1e-14, 0.0, W.components),
                                            note=f"Weyl tensor of the round S^{n}")
        if kind == "random":
            parts = rest.split(":")
            return random_weyl(int(parts[0]), int(parts[1]) if len(parts) > 1 else 0)
    except ValueError as exc:
        raise CurvatureError(f"malformed tensor spec {spec!r}: {exc}") from exc
    raise CurvatureError(f"unknown tensor spec {spec!r}")
