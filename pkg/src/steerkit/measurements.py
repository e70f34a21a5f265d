"""Measurement-set families for the steering test.

Two families are compared: the phase-encoding set (sigma_z plus equatorial
directions uniformly spaced over a half-turn, the telecom-compatible choice)
and Platonic-solid sets (antipodal vertex pairs of an inscribed solid).
Platonic orientations are fixed deterministically -- octahedron on the
coordinate axes, icosahedron/dodecahedron from golden-ratio coordinates with
the first vertex pair rotated onto +z -- so outputs are reproducible
bit-for-bit; critical bounds for isotropic states are invariant under any
global rotation of the set.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .quantum import ID2, bloch_observable

PLATONIC_SUPPORTED = (2, 3, 4, 6, 10)

TIME_BASIS = "time_basis"
PHASE_BASIS = "phase_basis"
GENERIC = "generic"


@dataclass(frozen=True)
class Measurement:
    """One projective qubit measurement: a unit Bloch direction.

    kind records how the direction is realised: the time basis (+z), an
    equatorial phase setting with its interferometer phase theta, or a
    generic direction (Platonic/custom sets).
    """

    bloch: tuple
    label: str
    kind: str = GENERIC
    theta: float | None = None

    def __post_init__(self):
        v = np.asarray(self.bloch, dtype=float)
        if v.shape != (3,) or abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise ValueError(f"bloch must be a unit 3-vector, got {self.bloch}")
        object.__setattr__(self, "bloch", tuple(float(x) for x in v))
        if self.kind == TIME_BASIS and not np.allclose(v, (0, 0, 1), atol=1e-12):
            raise ValueError("time_basis measurement must point along +z")
        if self.kind == PHASE_BASIS:
            if self.theta is None:
                raise ValueError("phase_basis measurement needs theta")
            expect = (np.cos(self.theta), np.sin(self.theta), 0.0)
            if not np.allclose(v, expect, atol=1e-12):
                raise ValueError("phase_basis bloch vector must be (cos t, sin t, 0)")

    def observable(self):
        return bloch_observable(self.bloch)

    def projectors(self):
        obs = self.observable()
        return (ID2 + obs) / 2.0, (ID2 - obs) / 2.0


@dataclass(frozen=True)
class MeasurementSet:
    """Ordered list of measurements; each entry represents an antipodal pair."""

    family: str
    measurements: tuple

    def __post_init__(self):
        if len(self.measurements) < 1:
            raise ValueError("measurement set must be non-empty")
        b = self.bloch_matrix()
        dots = b @ b.T
        for i in range(len(self.measurements)):
            for j in range(i + 1, len(self.measurements)):
                if abs(dots[i, j]) > 1.0 - 1e-9:
                    raise ValueError(
                        f"measurements {i} and {j} are equal or antipodal")

    @property
    def n(self):
        return len(self.measurements)

    def bloch_matrix(self):
        return np.array([m.bloch for m in self.measurements], dtype=float)

    def to_doc(self):
        return [
            {"label": m.label, "bloch": list(m.bloch), "kind": m.kind,
             **({"theta": m.theta} if m.theta is not None else {})}
            for m in self.measurements
        ]

    def to_json(self):
        return json.dumps({"family": self.family, "measurements": self.to_doc()},
                          indent=2, sort_keys=True)

    @classmethod
    def from_doc(cls, family, doc):
        ms = []
        for i, item in enumerate(doc):
            v = np.asarray(item["bloch"], dtype=float)
            norm = np.linalg.norm(v)
            if norm == 0:
                raise ValueError(f"measurement {i} has zero bloch vector")
            ms.append(Measurement(bloch=tuple(v / norm),
                                  label=item.get("label", f"M{i}"),
                                  kind=item.get("kind", GENERIC),
                                  theta=item.get("theta")))
        return cls(family=family, measurements=tuple(ms))

    @classmethod
    def from_json(cls, text):
        data = json.loads(text)
        return cls.from_doc(data.get("family", "custom"), data["measurements"])


def phase_encoding_set(n):
    """n measurements: M_0 = sigma_z, M_j equatorial at theta_j = (j-1) pi/(n-1).

    The equatorial directions are uniformly spaced over a half-turn, so each
    antipodal pair is distinct.  Requires n >= 2.
    """
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise ValueError(f"phase_encoding_set requires integer n >= 2, got {n}")
    ms = [Measurement(bloch=(0.0, 0.0, 1.0), label="M0", kind=TIME_BASIS)]
    for j in range(1, n):
        theta = (j - 1) * np.pi / (n - 1)
        ms.append(Measurement(bloch=(np.cos(theta), np.sin(theta), 0.0),
                              label=f"M{j}", kind=PHASE_BASIS, theta=float(theta)))
    return MeasurementSet(family="phase_encoding", measurements=tuple(ms))


def _normalize_rows(v):
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _rotate_first_to_z(vecs):
    """Rotate the whole set so vecs[0] lands on +z (Rodrigues formula)."""
    v = vecs[0]
    z = np.array([0.0, 0.0, 1.0])
    if np.allclose(v, z, atol=1e-14):
        return vecs
    axis = np.cross(v, z)
    s = np.linalg.norm(axis)
    c = float(v @ z)
    if s < 1e-14:  # antipodal: rotate pi about x
        r = np.diag([1.0, -1.0, -1.0])
        return vecs @ r.T
    axis = axis / s
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    r = np.eye(3) + s * k + (1 - c) * (k @ k)
    out = vecs @ r.T
    out[0] = z  # pin exactly
    return out


def _golden_vertices(n):
    phi = (1 + np.sqrt(5)) / 2
    if n == 6:  # icosahedron: one vertex per antipodal pair
        verts = []
        for s in (1, -1):
            verts.append([0.0, s, phi])
            verts.append([s, phi, 0.0])
            verts.append([phi, 0.0, s])
        return np.array(verts)
    if n == 10:  # dodecahedron
        inv = 1 / phi
        verts = [[1, 1, 1], [1, 1, -1], [1, -1, 1], [1, -1, -1]]
        for s in (1, -1):
            verts.append([0.0, s * inv, phi])
            verts.append([s * inv, phi, 0.0])
            verts.append([phi, 0.0, s * inv])
        return np.array(verts, dtype=float)
    raise ValueError(n)


def platonic_set(n):
    """Measurement directions from antipodal vertex pairs of a Platonic solid.

    n=3 is the octahedron (the three coordinate axes, identical to the
    phase-encoding set), n=4 the cube diagonals, n=6 the icosahedron, n=10
    the dodecahedron.  n=2 returns {z, x}, matching the phase-encoding set,
    which the solid-based construction degenerates to at two settings.
    """
    if n not in PLATONIC_SUPPORTED:
        raise ValueError(
            f"platonic_set supports n in {PLATONIC_SUPPORTED}, got {n}")
    if n == 2:
        vecs = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]])
    elif n == 3:
        vecs = np.array([[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
    elif n == 4:
        vecs = _normalize_rows(np.array(
            [[1.0, 1, 1], [1, 1, -1], [1, -1, 1], [1, -1, -1]]))
        vecs = _rotate_first_to_z(vecs)
    else:
        vecs = _rotate_first_to_z(_normalize_rows(_golden_vertices(n)))
    ms = []
    for i, v in enumerate(vecs):
        if np.allclose(v, (0, 0, 1), atol=1e-12):
            ms.append(Measurement(bloch=(0.0, 0.0, 1.0), label=f"P{i}",
                                  kind=TIME_BASIS))
        else:
            ms.append(Measurement(bloch=tuple(v), label=f"P{i}", kind=GENERIC))
    return MeasurementSet(family="platonic", measurements=tuple(ms))


def custom_set(vectors, labels=None):
    """Measurement set from explicit Bloch vectors (normalized on input)."""
    vectors = np.asarray(vectors, dtype=float)
    if vectors.ndim != 2 or vectors.shape[1] != 3:
        raise ValueError("vectors must have shape (n, 3)")
    labels = labels or [f"C{i}" for i in range(vectors.shape[0])]
    doc = [{"label": lab, "bloch": list(v)} for lab, v in zip(labels, vectors)]
    return MeasurementSet.from_doc("custom", doc)


def complementary_settings(settings):
    """Alice's matched settings: theta -> -theta, time basis unchanged.

    On the isotropic state at alpha = 0 the correlator of every matched pair
    equals p, since the two-party phase correlator depends only on the phase
    sum.  Generic (non-equatorial) directions map to their transpose-mirrored
    direction (y component negated), which plays the same role.
    """
    ms = []
    for m in settings.measurements:
        if m.kind == TIME_BASIS:
            ms.append(m)
        elif m.kind == PHASE_BASIS:
            theta = -m.theta
            ms.append(Measurement(bloch=(np.cos(theta), np.sin(theta), 0.0),
                                  label=m.label + "'", kind=PHASE_BASIS,
                                  theta=float(theta)))
        else:
            v = m.bloch
            ms.append(Measurement(bloch=(v[0], -v[1], v[2]),
                                  label=m.label + "'", kind=GENERIC))
    return MeasurementSet(family=settings.family, measurements=tuple(ms))
