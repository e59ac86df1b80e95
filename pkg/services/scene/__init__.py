"""
Scene generation: factor grid, planar finger kinematics, feasibility,
rasterizer, samplers and the dataset file format.
"""

from services.scene.factors import FactorDef, FactorSpec, FactorTuple, SCENE_FACTORS, HUE_FACTOR
from services.scene.kinematics import forward_kinematics
from services.scene.feasibility import (
    enumerate_feasible,
    feasibility_density,
    feasible_mask,
    is_feasible,
)
from services.scene.renderer import domain_shift_render, render_scene
from services.scene.sampler import (
    GeneratedDataset,
    generate_records,
    sample_factors,
    sample_weak_pair,
)
from services.scene.dataset_io import load_dataset, write_dataset

__all__ = [
    "FactorDef",
    "FactorSpec",
    "FactorTuple",
    "SCENE_FACTORS",
    "HUE_FACTOR",
    "forward_kinematics",
    "enumerate_feasible",
    "feasibility_density",
    "feasible_mask",
    "is_feasible",
    "domain_shift_render",
    "render_scene",
    "GeneratedDataset",
    "generate_records",
    "sample_factors",
    "sample_weak_pair",
    "load_dataset",
    "write_dataset",
]
