"""Procedural face-like images with exact 68-point landmarks.

Each face draws its eyes, nose and mouth from small banks of styles with
fine texture (lashes, iris stripes, teeth, nostril shapes), on top of a
random skin tone, lighting gradient and background. Component textures
repeat across identities, which is what a component dictionary exploits.
"""

from __future__ import annotations

import numpy as np

N_STYLES = 6
SUPERSAMPLE = 4


def _ellipse_points(cx, cy, ax, ay, angles):
    return np.stack([cx + ax * np.cos(angles), cy + ay * np.sin(angles)], axis=1)


def _landmarks(g: dict) -> np.ndarray:
    cx, cy, fa, fb = g["cx"], g["cy"], g["fa"], g["fb"]
    pts = np.zeros((68, 2))
    # jaw 0-16: lower half of the face outline, left to right
    pts[0:17] = _ellipse_points(cx, cy, fa, fb, np.linspace(np.pi * 1.0, 0.0, 17))
    for side, (lo, eye_lo) in enumerate(((17, 36), (22, 42))):
        ex, ey, ew, eh = g["eyes"][side]
        # brow 5 points
        bx = np.linspace(ex - 1.1 * ew, ex + 1.1 * ew, 5)
        by = ey - 2.4 * eh - 0.6 * eh * np.sin(np.linspace(0, np.pi, 5))
        pts[lo:lo + 5] = np.stack([bx, by], 1)
        # eye contour: outer corner, two upper, inner corner, two lower
        ang = np.array([np.pi, 4 * np.pi / 3, 5 * np.pi / 3, 0.0, np.pi / 3, 2 * np.pi / 3])
        pts[eye_lo:eye_lo + 6] = _ellipse_points(ex, ey, ew, eh, ang)
    nx, ny_top, ny_tip, nw = g["nose"]
    pts[27:31] = np.stack([np.full(4, nx), np.linspace(ny_top, ny_tip, 4)], 1)
    pts[31:36] = np.stack([np.linspace(nx - nw, nx + nw, 5),
                           ny_tip + 0.35 * nw * np.sin(np.linspace(0.2, np.pi - 0.2, 5))], 1)
    mx, my, mw, mh = g["mouth"]
    outer = np.pi + np.linspace(0, 2 * np.pi, 12, endpoint=False)
    pts[48:60] = _ellipse_points(mx, my, mw, mh, outer)
    inner = np.pi + np.linspace(0, 2 * np.pi, 8, endpoint=False)
    pts[60:68] = _ellipse_points(mx, my, 0.75 * mw, 0.45 * mh, inner)
    return pts


def _paint(img, mask, color, alpha=1.0):
    m = mask[..., None] * alpha
    img *= 1 - m
    img += m * np.asarray(color)[None, None, :]


def _draw_eye(img, X, Y, eye, style, rng):
    ex, ey, ew, eh = eye
    # per-style constants; every style reads differently at low resolution too
    iris_r = (0.55, 0.7, 0.85, 0.6, 0.75, 0.9)[style] * eh
    open_ = (1.0, 0.8, 1.15, 0.9, 1.05, 0.7)[style]
    n_stripes = (0, 6, 10, 14, 4, 8)[style]
    n_lashes = (3, 0, 5, 7, 9, 4)[style]
    iris_col = np.array([(0.25, 0.15, 0.05), (0.15, 0.35, 0.6), (0.2, 0.45, 0.2),
                         (0.45, 0.3, 0.1), (0.35, 0.35, 0.4), (0.1, 0.1, 0.1)][style])
    dx, dy = (X - ex) / ew, (Y - ey) / (eh * open_)
    eye_mask = (dx ** 2 + dy ** 2) <= 1.0
    _paint(img, eye_mask.astype(float), (0.93, 0.92, 0.9))
    r = np.hypot(X - ex, Y - ey)
    theta = np.arctan2(Y - ey, X - ex)
    iris = (r <= iris_r) & eye_mask
    col = iris_col * (0.75 + 0.25 * np.cos(n_stripes * theta)[..., None]) if n_stripes else iris_col
    m = iris.astype(float)[..., None]
    img *= 1 - m
    img += m * (col if np.ndim(col) == 3 else col[None, None, :])
    _paint(img, ((r <= 0.4 * iris_r) & eye_mask).astype(float), (0.02, 0.02, 0.02))
    _paint(img, (np.hypot(X - ex - 0.3 * iris_r, Y - ey + 0.3 * iris_r) <= 0.15 * iris_r).astype(float),
           (1.0, 1.0, 1.0))
    # upper lid line
    lid = np.abs(np.sqrt(dx ** 2 + dy ** 2) - 1.0) <= 0.12
    _paint(img, (lid & (dy < 0.2)).astype(float), (0.08, 0.05, 0.05))
    for k in range(n_lashes):
        a = np.pi + (k + 1) / (n_lashes + 1) * np.pi
        bx, by = ex + ew * np.cos(a), ey + eh * open_ * np.sin(a)
        tx, ty = bx + 0.35 * eh * np.cos(a), by + 0.6 * eh * np.sin(a) - 0.2 * eh
        seg = _segment_dist(X, Y, bx, by, tx, ty)
        _paint(img, (seg <= 0.06 * eh).astype(float), (0.05, 0.03, 0.03))


def _segment_dist(X, Y, x0, y0, x1, y1):
    vx, vy = x1 - x0, y1 - y0
    t = np.clip(((X - x0) * vx + (Y - y0) * vy) / (vx * vx + vy * vy + 1e-12), 0, 1)
    return np.hypot(X - (x0 + t * vx), Y - (y0 + t * vy))


def _draw_brow(img, X, Y, pts, thickness, color):
    for a, b in zip(pts[:-1], pts[1:]):
        _paint(img, (_segment_dist(X, Y, *a, *b) <= thickness).astype(float), color)


def _draw_nose(img, X, Y, nose, style, skin):
    nx, ny_top, ny_tip, nw = nose
    nostril_sep = (0.45, 0.6, 0.5, 0.7, 0.4, 0.55)[style] * nw
    nostril_r = (0.18, 0.22, 0.28, 0.15, 0.25, 0.2)[style] * nw
    ridge = (0.06, 0.1, 0.0, 0.08, 0.12, 0.04)[style] * nw
    shade = skin * 0.7
    if ridge > 0:
        seg = _segment_dist(X, Y, nx + 0.25 * nw, ny_top, nx + 0.3 * nw, ny_tip - 0.2 * nw)
        _paint(img, (seg <= ridge).astype(float), shade, 0.8)
    for sgn in (-1, 1):
        d = np.hypot((X - nx - sgn * nostril_sep) / 1.4, Y - ny_tip - 0.15 * nw)
        _paint(img, (d <= nostril_r).astype(float), (0.15, 0.08, 0.06))
    tip = np.hypot(X - nx, Y - ny_tip + 0.25 * nw) <= 0.25 * nw
    _paint(img, tip.astype(float), np.minimum(skin * 1.2, 1.0), 0.6)


def _draw_mouth(img, X, Y, mouth, style, rng):
    mx, my, mw, mh = mouth
    lip_col = np.array([(0.7, 0.3, 0.3), (0.6, 0.2, 0.25), (0.75, 0.4, 0.4),
                        (0.55, 0.25, 0.2), (0.8, 0.35, 0.45), (0.65, 0.3, 0.35)][style])
    open_h = (0.0, 0.35, 0.55, 0.0, 0.45, 0.25)[style]
    n_teeth = (0, 6, 8, 0, 10, 4)[style]
    n_ridges = (5, 0, 3, 9, 0, 7)[style]
    dx, dy = (X - mx) / mw, (Y - my) / mh
    lips = dx ** 2 + dy ** 2 <= 1.0
    col = lip_col * (0.85 + 0.15 * np.cos(n_ridges * np.pi * dx)[..., None]) if n_ridges else lip_col
    m = lips.astype(float)[..., None]
    img *= 1 - m
    img += m * (col if np.ndim(col) == 3 else col[None, None, :])
    if open_h > 0:
        inner = (dx / 0.75) ** 2 + (dy / open_h) ** 2 <= 1.0
        _paint(img, inner.astype(float), (0.15, 0.05, 0.05))
        if n_teeth:
            teeth = inner & (dy < 0.05) & (np.cos(n_teeth * np.pi * dx / 0.75) > -0.6)
            _paint(img, teeth.astype(float), (0.95, 0.95, 0.9))
    else:
        line = np.abs(dy) <= 0.08
        _paint(img, (line & lips).astype(float), (0.25, 0.08, 0.08))


def render_face(rng: np.random.Generator, resolution: int = 64, styles: dict | None = None):
    """Render one face. Returns ``(image, landmarks, styles)``.

    ``image`` is ``R x R x 3`` in ``[0, 1]``; landmarks are pixel coordinates.
    """
    R = resolution
    S = R * SUPERSAMPLE
    g = {}
    g["cx"] = R * (0.5 + rng.uniform(-0.03, 0.03))
    g["cy"] = R * (0.53 + rng.uniform(-0.03, 0.03))
    g["fa"] = R * rng.uniform(0.31, 0.35)
    g["fb"] = R * rng.uniform(0.40, 0.44)
    eye_dx = R * rng.uniform(0.13, 0.15)
    eye_y = g["cy"] - R * rng.uniform(0.09, 0.11)
    ew, eh = R * rng.uniform(0.06, 0.07), R * rng.uniform(0.028, 0.034)
    g["eyes"] = [(g["cx"] - eye_dx, eye_y, ew, eh), (g["cx"] + eye_dx, eye_y, ew, eh)]
    g["nose"] = (g["cx"], eye_y + R * 0.02, g["cy"] + R * rng.uniform(0.06, 0.08), R * rng.uniform(0.045, 0.055))
    g["mouth"] = (g["cx"], g["cy"] + R * rng.uniform(0.18, 0.21), R * rng.uniform(0.1, 0.12),
                  R * rng.uniform(0.035, 0.045))
    if styles is None:
        styles = {c: int(rng.integers(N_STYLES)) for c in ("eye", "nose", "mouth")}

    coords = (np.arange(S) + 0.5) / SUPERSAMPLE
    X, Y = np.meshgrid(coords, coords)
    bg_a, bg_b = rng.uniform(0.1, 0.9, 3), rng.uniform(0.1, 0.9, 3)
    t = (X / R)[..., None]
    img = bg_a * (1 - t) + bg_b * t
    skin = np.array([0.85, 0.65, 0.5]) * rng.uniform(0.55, 1.1) + rng.uniform(-0.05, 0.05, 3)
    skin = np.clip(skin, 0.1, 0.95)
    face = ((X - g["cx"]) / g["fa"]) ** 2 + ((Y - g["cy"]) / g["fb"]) ** 2 <= 1.0
    _paint(img, face.astype(float), skin)
    lm = _landmarks(g)
    brow_col = rng.uniform(0.05, 0.35) * np.ones(3)
    for lo in (17, 22):
        _draw_brow(img, X, Y, lm[lo:lo + 5], R * rng.uniform(0.008, 0.014), brow_col)
    for eye in g["eyes"]:
        _draw_eye(img, X, Y, eye, styles["eye"], rng)
    _draw_nose(img, X, Y, g["nose"], styles["nose"], skin)
    _draw_mouth(img, X, Y, g["mouth"], styles["mouth"], rng)

    # lighting: smooth multiplicative gradient
    angle = rng.uniform(0, 2 * np.pi)
    light = 1.0 + rng.uniform(0.0, 0.25) * (np.cos(angle) * (X / R - 0.5) + np.sin(angle) * (Y / R - 0.5)) * 2
    img = np.clip(img * light[..., None], 0.0, 1.0)
    img = img.reshape(R, SUPERSAMPLE, R, SUPERSAMPLE, 3).mean(axis=(1, 3))
    return img, lm, styles


def synthetic_faces(n: int, seed: int = 0, resolution: int = 64):
    """``n`` faces as ``(image_id, image, landmarks)`` tuples."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        img, lm, _ = render_face(rng, resolution)
        out.append((f"face{i:05d}", img, lm))
    return out
