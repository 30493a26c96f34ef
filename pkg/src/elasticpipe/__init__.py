"""Elastic pipeline planning: workload-balanced chunking, 1F1B simulation and
stage-aware checkpointing for long-context training."""

from .config import Configs, load_config
from .cost_model import ChunkKind, ClusterConfig, CostParams, ModelConfig
from .planner import PlanningError, SchedulePlan, plan, plan_ablation, simulate_plan
from .workload import Workload, generate

__all__ = ["ChunkKind", "ClusterConfig", "Configs", "CostParams", "ModelConfig", "PlanningError",
           "SchedulePlan", "Workload", "generate", "load_config", "plan", "plan_ablation",
           "simulate_plan"]
__version__ = "0.1.0"
