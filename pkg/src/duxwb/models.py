"""Bundle a trained estimator with the feature/exposure configuration it was
trained under, and move the bundle through the shared checkpoint format."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .checkpoint import load_checkpoint, save_checkpoint
from .core import DualExposurePair, Illuminant
from .def_feature import DefConfig, compute_def
from .eccc import EcccParams, eccc_forward_from_hists, hists_for_pair, prepare_predictor
from .errors import DataError
from .mlp import MlpParams, emlp_forward
from .training import ensemble


@dataclass
class ModelBundle:
    kind: str  # "emlp" | "eccc"
    def_cfg: DefConfig
    e: int
    emlp: Optional[MlpParams] = None
    eccc: Optional[EcccParams] = None
    _prepared: Optional[dict] = None

    def predict_pair(self, pair: DualExposurePair) -> Illuminant:
        feature = None
        if self.kind == "emlp" or self.eccc.use_def:
            feature = compute_def(pair, self.def_cfg)
        if self.kind == "emlp":
            return emlp_forward(self.emlp, feature.values)
        if self._prepared is None:
            self._prepared = prepare_predictor(self.eccc)
        hists = hists_for_pair(pair, self.eccc.variant, self.eccc.bins)
        ill, _ = eccc_forward_from_hists(self.eccc, hists, feature, prepared=self._prepared)
        return ill


def _def_meta(cfg: DefConfig) -> dict:
    return {
        "def_color_repr": cfg.color_repr,
        "def_mapping": cfg.mapping,
        "def_eps_ratio": cfg.eps_ratio,
        "def_eps_chroma": cfg.eps_chroma,
        "def_include_covariance": cfg.include_covariance,
        "def_map_direction": cfg.map_direction,
        "def_tm_extended": cfg.tm_extended,
    }


def _def_from_meta(meta: dict) -> DefConfig:
    return DefConfig(
        color_repr=meta.get("def_color_repr", "rgb_chroma"),
        mapping=meta.get("def_mapping", "linear3x3"),
        eps_ratio=meta.get("def_eps_ratio", 1e-6),
        eps_chroma=meta.get("def_eps_chroma", 1e-6),
        include_covariance=meta.get("def_include_covariance", True),
        map_direction=meta.get("def_map_direction", "short_to_long"),
        tm_extended=meta.get("def_tm_extended", False),
    )


def save_model(path: str, bundle: ModelBundle) -> None:
    meta = {"e": bundle.e}
    meta.update(_def_meta(bundle.def_cfg))
    if bundle.kind == "emlp":
        meta["leaky_slope"] = bundle.emlp.leaky_slope
        save_checkpoint(path, "emlp", bundle.emlp.tensors(), meta)
        return
    p = bundle.eccc
    meta.update(
        {
            "bins": p.bins,
            "n_biases": p.n_biases,
            "variant": p.variant,
            "use_def": p.use_def,
        }
    )
    if p.use_def:
        meta["leaky_slope"] = p.mlp.leaky_slope
    save_checkpoint(path, "eccc", p.tensors(), meta)


def load_model(path: str) -> ModelBundle:
    kind, tensors, meta = load_checkpoint(path)
    def_cfg = _def_from_meta(meta)
    e = int(meta.get("e", 8))
    if kind == "emlp":
        params = MlpParams.from_tensors(tensors, leaky_slope=meta.get("leaky_slope", 0.01))
        return ModelBundle(kind="emlp", def_cfg=def_cfg, e=e, emlp=params)
    if kind == "eccc":
        use_def = bool(meta.get("use_def", True))
        mlp = None
        biases = None
        full_bias = None
        if use_def:
            mlp_tensors = {k[len("mlp_"):]: v for k, v in tensors.items() if k.startswith("mlp_")}
            mlp = MlpParams.from_tensors(mlp_tensors, leaky_slope=meta.get("leaky_slope", 0.01))
            biases = tensors["biases"]
        else:
            full_bias = tensors["full_bias"]
        params = EcccParams(
            filters=tensors["filters"],
            biases=biases,
            full_bias=full_bias,
            mlp=mlp,
            bins=int(meta.get("bins", 64)),
            variant=meta.get("variant", "both"),
            use_def=use_def,
        )
        return ModelBundle(kind="eccc", def_cfg=def_cfg, e=e, eccc=params)
    raise DataError(f"unknown checkpoint kind {kind!r}")


def ensemble_predict(a: ModelBundle, b: ModelBundle, pair: DualExposurePair) -> Illuminant:
    return ensemble(a.predict_pair(pair), b.predict_pair(pair))
