"""Loading and dumping the cluster / model / coefficient configuration document.

The document is a mapping with three sections::

    cluster:
      num_gpus: 8
      pp_degree: 4
      sp_degree: 2
      mem_capacity: 40.0e9            # bytes per device
      all2all_bandwidth: {2: 1.5e11}  # sp degree -> bytes/s
      all2all_latency: {2: 2.0e-5}    # sp degree -> s
    model:
      layers: 32
      hidden_dim: 4096
      elem_size: 2
      m_token: 4.46e6                 # activation bytes per token, whole model
      m_model_states: [1.4e10, ...]   # bytes per stage, one entry per stage
    params:
      alpha1_f: ...                   # plus alpha2_f, beta1_f, *_b and optional f_hat

JSON or YAML; the format is picked from the file extension.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any, Dict, Union

from .cost_model import ClusterConfig, ConfigError, CostParams, ModelConfig


@dataclass(frozen=True)
class Configs:
    cluster: ClusterConfig
    model: ModelConfig
    params: CostParams

    def __post_init__(self):
        self.model.check_against(self.cluster)

    def to_dict(self) -> Dict[str, Any]:
        cluster = asdict(self.cluster)
        for key in ("all2all_bandwidth", "all2all_latency"):
            cluster[key] = {str(k): v for k, v in sorted(cluster[key].items())}
        model = asdict(self.model)
        model["m_model_states"] = list(model["m_model_states"])
        return {"cluster": cluster, "model": model, "params": asdict(self.params)}

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> "Configs":
        try:
            c = dict(doc["cluster"])
            for key in ("all2all_bandwidth", "all2all_latency"):
                c[key] = {int(k): float(v) for k, v in (c.get(key) or {}).items()}
            cluster = ClusterConfig(
                num_gpus=int(c["num_gpus"]), pp_degree=int(c["pp_degree"]),
                sp_degree=int(c["sp_degree"]), mem_capacity=float(c["mem_capacity"]),
                all2all_bandwidth=c["all2all_bandwidth"], all2all_latency=c["all2all_latency"],
            )
            m = doc["model"]
            model = ModelConfig(
                layers=int(m["layers"]), hidden_dim=int(m["hidden_dim"]),
                elem_size=int(m["elem_size"]), m_token=float(m["m_token"]),
                m_model_states=tuple(float(x) for x in m["m_model_states"]),
            )
            p = doc["params"]
            f_hat = p.get("f_hat")
            params = CostParams(
                alpha1_f=float(p["alpha1_f"]), alpha2_f=float(p["alpha2_f"]),
                beta1_f=float(p["beta1_f"]), alpha1_b=float(p["alpha1_b"]),
                alpha2_b=float(p["alpha2_b"]), beta1_b=float(p["beta1_b"]),
                f_hat=None if f_hat is None else float(f_hat),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed configuration document: {exc!r}") from None
        return cls(cluster, model, params)


def load_config(path: Union[str, Path]) -> Configs:
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yaml", ".yml"):
        import yaml

        doc = yaml.safe_load(text)
    else:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return Configs.from_dict(doc)
