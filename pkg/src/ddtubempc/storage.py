"""Versioned on-disk formats for datasets and synthesized controllers.

Everything is JSON with matrices stored row-major next to their explicit
shapes.  Python's shortest-repr float serialization makes the files
round-trip exactly: loading a file and saving it again reproduces the
bytes, so file hashes are stable and fit for reports.

The controller file intentionally excludes the scenario disturbance bank:
the frozen controller no longer needs the samples, only their effect
(the tightened sets and offsets).
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from .behavior import BehaviorRep, TrajectoryData
from .polytope import HPolytope
from .synthesis import ControllerSpec

logger = logging.getLogger(__name__)

__all__ = [
    "StorageError",
    "save_data",
    "load_data",
    "save_controller",
    "load_controller",
    "DATA_FORMAT",
    "CONTROLLER_FORMAT",
    "SCHEMA_VERSION",
]

DATA_FORMAT = "ddtubempc-dataset"
CONTROLLER_FORMAT = "ddtubempc-controller"
SCHEMA_VERSION = 1


class StorageError(Exception):
    """Unreadable file, wrong format marker, or schema-version mismatch."""


def _encode_array(arr: np.ndarray) -> dict:
    arr = np.asarray(arr, dtype=float)
    return {"shape": list(arr.shape), "data": arr.ravel(order="C").tolist()}


def _decode_array(obj, what: str) -> np.ndarray:
    try:
        shape = tuple(int(s) for s in obj["shape"])
        data = np.asarray(obj["data"], dtype=float)
    except (KeyError, TypeError) as exc:
        raise StorageError(f"malformed matrix entry for {what}") from exc
    if data.size != int(np.prod(shape)):
        raise StorageError(
            f"{what}: {data.size} values do not fill shape {shape}"
        )
    return data.reshape(shape, order="C")


def _encode_polytope(P: HPolytope) -> dict:
    return {"G": _encode_array(P.G), "g": _encode_array(P.g)}


def _decode_polytope(obj, what: str) -> HPolytope:
    return HPolytope(
        _decode_array(obj["G"], f"{what}.G"),
        _decode_array(obj["g"], f"{what}.g"),
    )


def _dump(payload: dict, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _load(path, expected_format: str) -> dict:
    path = Path(path)
    if not path.exists():
        raise StorageError(f"no such file: {path}")
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise StorageError(f"{path} is not valid JSON: {exc}") from exc
    if payload.get("format") != expected_format:
        raise StorageError(
            f"{path}: expected format {expected_format!r}, "
            f"got {payload.get('format')!r}"
        )
    if payload.get("version") != SCHEMA_VERSION:
        raise StorageError(
            f"{path}: schema version {payload.get('version')} unsupported "
            f"(this build reads version {SCHEMA_VERSION})"
        )
    return payload


def save_data(data: TrajectoryData, path) -> None:
    """Write a recorded trajectory (and bank, when present) to JSON."""
    payload = {
        "format": DATA_FORMAT,
        "version": SCHEMA_VERSION,
        "u": _encode_array(data.u),
        "d": _encode_array(data.d),
        "x": _encode_array(data.x),
    }
    if data.disturbance_bank is not None:
        payload["disturbance_bank"] = _encode_array(data.disturbance_bank)
    _dump(payload, path)
    logger.info("wrote dataset (%d samples) to %s", data.N, path)


def load_data(path) -> TrajectoryData:
    """Read a dataset written by :func:`save_data`."""
    payload = _load(path, DATA_FORMAT)
    bank = payload.get("disturbance_bank")
    return TrajectoryData(
        u=_decode_array(payload["u"], "u"),
        d=_decode_array(payload["d"], "d"),
        x=_decode_array(payload["x"], "x"),
        disturbance_bank=(
            _decode_array(bank, "disturbance_bank") if bank is not None else None
        ),
    )


def save_controller(spec: ControllerSpec, path) -> None:
    """Write a synthesized controller to JSON.

    The behavioral representation is stored as its raw recorded
    trajectory plus horizon and gain; the stacked Hankel blocks are
    rebuilt deterministically on load.
    """
    rep = spec.rep
    payload = {
        "format": CONTROLLER_FORMAT,
        "version": SCHEMA_VERSION,
        "rep": {
            "u": _encode_array(rep.H_u[: rep.n_u].T),
            "d": _encode_array(rep.H_d[: rep.n_d].T),
            "x": _encode_array(rep.H_x[: rep.n_x].T),
            "tail_u": _encode_array(rep.H_u[rep.n_u :, -1].reshape(-1, rep.n_u)),
            "tail_d": _encode_array(rep.H_d[rep.n_d :, -1].reshape(-1, rep.n_d)),
            "tail_x": _encode_array(rep.H_x[rep.n_x :, -1].reshape(-1, rep.n_x)),
            "horizon": rep.L,
            "strict": rep.strict,
        },
        "K": _encode_array(spec.K),
        "P": _encode_array(spec.P),
        "Q": _encode_array(spec.Q),
        "R": _encode_array(spec.R),
        "X_hat": [_encode_polytope(S) for S in spec.X_hat],
        "U_hat": [_encode_polytope(S) for S in spec.U_hat],
        "X_f_hat": _encode_polytope(spec.X_f_hat),
        "F_first": _encode_polytope(spec.F_first),
        "W_ext": _encode_polytope(spec.W_ext),
        "kit": {
            "Pi": _encode_array(spec.kit.Pi),
            "lambda_alpha": spec.kit.lambda_alpha,
        },
        "L": spec.L,
        "X": _encode_polytope(spec.X) if spec.X is not None else None,
        "U": _encode_polytope(spec.U) if spec.U is not None else None,
        "X_f": _encode_polytope(spec.X_f) if spec.X_f is not None else None,
        "C_L": _encode_polytope(spec.C_L) if spec.C_L is not None else None,
        "C_L_inf": (
            _encode_polytope(spec.C_L_inf) if spec.C_L_inf is not None else None
        ),
        "etas": (
            [_encode_array(e) for e in spec.etas]
            if spec.etas is not None
            else None
        ),
        "sigmas": (
            [_encode_array(s) for s in spec.sigmas]
            if spec.sigmas is not None
            else None
        ),
        "cumulative_tubes": spec.cumulative_tubes,
    }
    _dump(payload, path)
    logger.info("wrote controller (horizon %d) to %s", spec.L, path)


def load_controller(path) -> ControllerSpec:
    """Read a controller written by :func:`save_controller`."""
    payload = _load(path, CONTROLLER_FORMAT)
    rep_obj = payload["rep"]
    u = _decode_array(rep_obj["u"], "rep.u")
    d = _decode_array(rep_obj["d"], "rep.d")
    x = _decode_array(rep_obj["x"], "rep.x")
    # recorded samples = leading window columns + the tail of the last one
    data = TrajectoryData(
        u=np.vstack([u, _decode_array(rep_obj["tail_u"], "rep.tail_u")]),
        d=np.vstack([d, _decode_array(rep_obj["tail_d"], "rep.tail_d")]),
        x=np.vstack([x, _decode_array(rep_obj["tail_x"], "rep.tail_x")]),
    )
    K = _decode_array(payload["K"], "K")
    rep = BehaviorRep(
        data, int(rep_obj["horizon"]), K, strict=bool(rep_obj["strict"])
    )

    def poly(key):
        obj = payload.get(key)
        return _decode_polytope(obj, key) if obj is not None else None

    from .behavior import RegularizationKit

    spec = ControllerSpec(
        rep=rep,
        K=K,
        P=_decode_array(payload["P"], "P"),
        Q=_decode_array(payload["Q"], "Q"),
        R=_decode_array(payload["R"], "R"),
        X_hat=[
            _decode_polytope(o, f"X_hat[{i}]")
            for i, o in enumerate(payload["X_hat"])
        ],
        U_hat=[
            _decode_polytope(o, f"U_hat[{i}]")
            for i, o in enumerate(payload["U_hat"])
        ],
        X_f_hat=_decode_polytope(payload["X_f_hat"], "X_f_hat"),
        F_first=_decode_polytope(payload["F_first"], "F_first"),
        W_ext=_decode_polytope(payload["W_ext"], "W_ext"),
        kit=RegularizationKit(
            Pi=_decode_array(payload["kit"]["Pi"], "kit.Pi"),
            lambda_alpha=float(payload["kit"]["lambda_alpha"]),
        ),
        L=int(payload["L"]),
        X=poly("X"),
        U=poly("U"),
        X_f=poly("X_f"),
        C_L=poly("C_L"),
        C_L_inf=poly("C_L_inf"),
        etas=(
            [_decode_array(e, "etas") for e in payload["etas"]]
            if payload.get("etas") is not None
            else None
        ),
        sigmas=(
            [_decode_array(s, "sigmas") for s in payload["sigmas"]]
            if payload.get("sigmas") is not None
            else None
        ),
        cumulative_tubes=bool(payload["cumulative_tubes"]),
    )
    return spec
