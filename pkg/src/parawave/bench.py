"""Throughput of sequential teacher sampling against the parallel student."""
from __future__ import annotations

import time
from typing import Dict, Optional, Tuple

import numpy as np

from .rng import standard_normal
from .student import FlowStack, iaf_sample
from .teacher import TeacherParams, ar_sample
from .wavenet import WaveNetConfig

REPORT_FIELDS = (
    "T", "teacher_layers", "student_layers", "student_flows",
    "teacher_seconds", "student_seconds",
    "teacher_samples_per_sec", "student_samples_per_sec", "speedup",
)


def _cond(bands: int, T: int, seed: int) -> Optional[np.ndarray]:
    if bands == 0:
        return None
    return np.random.default_rng(seed).uniform(0.0, 1.0, size=(bands, T))


def _best_time(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def run_bench(teacher: TeacherParams, stack: FlowStack, T: int, *, seed: int = 0,
              repeats: int = 1, student_repeats: int = 3) -> Dict[str, float]:
    """Time one ``T``-sample draw from each model (best of ``repeats``); no gradients are recorded."""
    cond = _cond(teacher.conditioner.bands, T, seed)
    z0 = standard_normal(seed, T)
    t_teacher = _best_time(lambda: ar_sample(teacher, cond, T, seed), repeats)
    t_student = _best_time(lambda: iaf_sample(z0, stack, cond), student_repeats)
    return {
        "T": T,
        "teacher_layers": teacher.config.layers,
        "student_layers": stack.total_layers(),
        "student_flows": len(stack),
        "teacher_seconds": t_teacher,
        "student_seconds": t_student,
        "teacher_samples_per_sec": T / t_teacher,
        "student_samples_per_sec": T / t_student,
        "speedup": t_teacher / t_student,
    }


def matched_pair(total_layers: int = 24, flows: int = 4, *, bands: int = 16, seed: int = 0) -> Tuple[TeacherParams, FlowStack]:
    """Desk-scale teacher and student with the same total layer count.

    Teacher: residual/skip 32, filter size 2. Student: ``flows`` equal flows,
    residual/skip 16, filter size 3, sharing the teacher's conditioner.
    """
    if total_layers % flows:
        raise ValueError("total_layers must be divisible by flows")
    per_flow = total_layers // flows
    cfg = WaveNetConfig(layers=total_layers, cycle=6, residual_channels=32, skip_channels=32,
                        cond_channels=8, kernel_size=2)
    teacher = TeacherParams(cfg, bands=bands, seed=seed)
    stack = FlowStack.for_teacher(teacher, [per_flow] * flows, residual_channels=16, skip_channels=16,
                                  kernel_size=3, cycle=6, reverse_time=[i % 2 == 1 for i in range(flows)],
                                  seed=seed + 1)
    return teacher, stack
