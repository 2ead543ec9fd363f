"""Schematic skeleton drawings as standalone SVG."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .annotations import COCO_SKELETON, JointAnnotation2D


@dataclass
class SkeletonStyle:
    background: str = "#ffffff"
    bone: str = "#1f4e79"
    joint: str = "#c0392b"
    bone_width: float = 2.0
    joint_radius: float = 4.0


def render_skeleton_svg(annotation: JointAnnotation2D, image_size: tuple[int, int],
                        style: SkeletonStyle | None = None,
                        skeleton: Sequence[tuple[int, int]] = COCO_SKELETON) -> str:
    """Draw the 2D skeleton on an empty canvas of the camera's size.

    Visible joints (v=2) are filled dots, occluded ones (v=1) hollow, and
    unlabelled ones (v=0) are left out along with their bones.
    """
    st = style or SkeletonStyle()
    w, h = int(image_size[0]), int(image_size[1])
    kp = np.asarray(annotation.keypoints, dtype=float)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<rect x="0" y="0" width="{w}" height="{h}" fill="{st.background}"/>',
        f'<g stroke="{st.bone}" stroke-width="{st.bone_width:.2f}" stroke-linecap="round">',
    ]
    for a, b in skeleton:
        i, j = a - 1, b - 1
        if i < len(kp) and j < len(kp) and kp[i, 2] > 0 and kp[j, 2] > 0:
            lines.append(f'<line x1="{kp[i, 0]:.2f}" y1="{kp[i, 1]:.2f}" x2="{kp[j, 0]:.2f}" y2="{kp[j, 1]:.2f}"/>')
    lines.append("</g>")
    lines.append(f'<g stroke="{st.joint}" stroke-width="1.50">')
    for x, y, v in kp:
        if v >= 2:
            lines.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{st.joint_radius:.2f}" fill="{st.joint}"/>')
        elif v >= 1:
            lines.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{st.joint_radius:.2f}" fill="none"/>')
    lines.append("</g>")
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def write_skeleton_svg(path: str | Path, annotation: JointAnnotation2D, image_size: tuple[int, int],
                       style: SkeletonStyle | None = None) -> Path:
    path = Path(path)
    path.write_text(render_skeleton_svg(annotation, image_size, style))
    return path
