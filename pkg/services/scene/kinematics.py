"""
Planar Finger Kinematics
Version: 1.0

Three-link planar chain hanging from its base. Angles are cumulative and
counterclockwise-positive; with all angles 0 the chain points straight
down. Link i runs along (-sin(theta_i), -cos(theta_i)) where theta_i is
the sum of the first i joint angles.
"""

from typing import Sequence

import numpy as np

from schemas import SceneConfig


def chain_points(angles: np.ndarray, link_lengths: Sequence[float], base: Sequence[float]) -> np.ndarray:
    """
    Batched forward kinematics.

    Args:
        angles: (..., 3) joint angles in radians
        link_lengths: three link lengths
        base: (x, y) of the chain root

    Returns:
        (..., 4, 2) array: base, the two inner joints, fingertip
    """
    angles = np.asarray(angles, dtype=np.float64)
    cumulative = np.cumsum(angles, axis=-1)
    lengths = np.asarray(link_lengths, dtype=np.float64)
    steps = np.stack([-np.sin(cumulative), -np.cos(cumulative)], axis=-1) * lengths[:, None]
    origin = np.broadcast_to(np.asarray(base, dtype=np.float64), angles.shape[:-1] + (1, 2))
    return np.concatenate([origin, origin + np.cumsum(steps, axis=-2)], axis=-2)


def forward_kinematics(joints: Sequence[float], config: SceneConfig) -> np.ndarray:
    """The 4 chain points (base, joint 2, joint 3, fingertip) of one pose, shape (4, 2)."""
    return chain_points(np.asarray(joints, dtype=np.float64), config.link_lengths, config.base)


def fingertip(joints: Sequence[float], config: SceneConfig) -> np.ndarray:
    return forward_kinematics(joints, config)[-1]
