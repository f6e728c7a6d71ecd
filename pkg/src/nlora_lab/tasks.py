"""Synthetic k-class Gaussian-blob tasks.

Every task shares one set of class centers (orthonormal directions from a
seeded QR, scaled by ``CENTER_SCALE``); a task then applies its own random
rotation of feature space and its own label permutation.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

CENTER_SCALE = 3.0
NOISE_SIGMA = 1.0


@dataclass(eq=False)
class TaskData:
    task_id: int
    train_x: np.ndarray
    train_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    generator_spec: dict

    @property
    def dim(self) -> int:
        return self.train_x.shape[1]


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def _sample(centers, rotation, perm, per_class, sigma, rng):
    k, d = centers.shape
    labels = np.repeat(np.arange(k), per_class)
    x = centers[labels] + sigma * rng.standard_normal((labels.size, d))
    return x @ rotation, perm[labels]


def make_task(
    task_id: int,
    d: int,
    k: int,
    samples_per_class: int,
    seed: int,
    center_scale: float = CENTER_SCALE,
    noise_sigma: float = NOISE_SIGMA,
) -> TaskData:
    if d < k:
        raise ValueError(f"need d >= k, got d={d}, k={k}")
    if samples_per_class < 1:
        raise ValueError("samples_per_class must be >= 1")
    q, _ = np.linalg.qr(np.random.default_rng([seed, 0xC3]).standard_normal((d, k)))
    centers = center_scale * q.T
    rotation_seed = seed * 7919 + task_id
    rotation = _orthogonal(np.random.default_rng([rotation_seed, 0x52]), d)
    perm = np.random.default_rng([rotation_seed, 0x9E]).permutation(k)
    train_rng = np.random.default_rng([seed, task_id, 1])
    test_rng = np.random.default_rng([seed, task_id, 2])
    train_x, train_y = _sample(centers, rotation, perm, samples_per_class, noise_sigma, train_rng)
    test_x, test_y = _sample(centers, rotation, perm, samples_per_class, noise_sigma, test_rng)
    spec = {
        "seed": seed,
        "rotation_seed": rotation_seed,
        "label_permutation": perm.tolist(),
        "center_scale": center_scale,
        "noise_sigma": noise_sigma,
    }
    return TaskData(task_id, train_x, train_y, test_x, test_y, k, spec)


def generate_task_suite(num_tasks: int, d: int, k: int, samples_per_class: int, seed: int) -> list[TaskData]:
    if num_tasks < 1:
        raise ValueError("num_tasks must be >= 1")
    return [make_task(t, d, k, samples_per_class, seed) for t in range(num_tasks)]


def pretraining_task(num_tasks: int, d: int, k: int, samples_per_class: int, seed: int) -> TaskData:
    """The held-out blob configuration used to build the frozen base."""
    return make_task(num_tasks, d, k, samples_per_class, seed)
