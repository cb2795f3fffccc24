"""Deterministic fixed-timestep rigid-body world.

Segments are rigid bodies integrated with semi-implicit Euler at 1/120 s
(four substeps).  Joints, ground contact and segment/segment contact are all
penalty springs; contact friction is regularised Coulomb.  Muscles are
damped springs whose stiffness is ``activation * max_strength``.

Penalty stiffness and damping are expressed per kilogram of the reduced mass
of the pair involved (10^4 N/m and 10^2 N s/m per kg), which keeps a single
step size stable across the three decades of segment mass a genome may
produce.

The whole evaluation loop (sensing, brain step, physics, recording) runs in
one compiled function; :func:`step_world` exposes a single physics step.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .brain import BrainGraph, _brain_step
from .genome import Creature, shape_mass_inertia

GRAVITY = 9.81
DT = 1.0 / 120.0
SUBSTEPS = 4
K_CONTACT = 1.0e4   # N/m per kg
C_CONTACT = 1.0e2   # N s/m per kg
FRICTION = 0.8
K_JOINT = 1.0e4
C_JOINT = 1.0e2
V_MAX = 50.0
W_MAX = 50.0
ANGULAR_DRAG = 0.2  # 1/s
SLIDE_LIMIT = 0.1   # m, prismatic/cylindrical travel each way
MUSCLE_DAMPING = 0.1
DANGER_RADIUS = 0.5
DEFAULT_STEPS = 1200

SHAPE_CODE = {"box": 0, "sphere": 1, "capsule": 2}
JOINT_CODE = {"fixed": 0, "revolute": 1, "spherical": 2, "prismatic": 3, "cylindrical": 4}
LIGHT_KINDS = ("vulnerable", "dangerous")


class NumericalBlowup(FloatingPointError):
    pass


# --------------------------------------------------------------------------
# small vector helpers (compiled; 3-vectors are tuples to avoid allocation)


@njit(cache=True, inline="always")
def _v(a, i):
    return (a[i, 0], a[i, 1], a[i, 2])


@njit(cache=True, inline="always")
def _add(a, b):
    return (a[0] + b[0], a[1] + b[1], a[2] + b[2])


@njit(cache=True, inline="always")
def _sub(a, b):
    return (a[0] - b[0], a[1] - b[1], a[2] - b[2])


@njit(cache=True, inline="always")
def _mul(a, s):
    return (a[0] * s, a[1] * s, a[2] * s)


@njit(cache=True, inline="always")
def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


@njit(cache=True, inline="always")
def _cross(a, b):
    return (a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0])


@njit(cache=True, inline="always")
def _q(a, i):
    return (a[i, 0], a[i, 1], a[i, 2], a[i, 3])


@njit(cache=True)
def _qrot(q, v):
    w, x, y, z = q[0], q[1], q[2], q[3]
    tx = 2.0 * (y * v[2] - z * v[1])
    ty = 2.0 * (z * v[0] - x * v[2])
    tz = 2.0 * (x * v[1] - y * v[0])
    return (
        v[0] + w * tx + (y * tz - z * ty),
        v[1] + w * ty + (z * tx - x * tz),
        v[2] + w * tz + (x * ty - y * tx),
    )


@njit(cache=True)
def _qrot_inv(q, v):
    return _qrot((q[0], -q[1], -q[2], -q[3]), v)


@njit(cache=True)
def _qmul(a, b):
    return (
        a[0] * b[0] - a[1] * b[1] - a[2] * b[2] - a[3] * b[3],
        a[0] * b[1] + a[1] * b[0] + a[2] * b[3] - a[3] * b[2],
        a[0] * b[2] - a[1] * b[3] + a[2] * b[0] + a[3] * b[1],
        a[0] * b[3] + a[1] * b[2] - a[2] * b[1] + a[3] * b[0],
    )


@njit(cache=True)
def _inertia_apply(q, idiag, v, inverse):
    """World-frame inertia (or its inverse) applied to ``v``."""
    l = _qrot_inv(q, v)
    if inverse:
        l = (l[0] / idiag[0], l[1] / idiag[1], l[2] / idiag[2])
    else:
        l = (l[0] * idiag[0], l[1] * idiag[1], l[2] * idiag[2])
    return _qrot(q, l)


@njit(cache=True)
def _sdf(shape, spx, spy, spz, p):
    """Signed distance of local point ``p`` and the outward normal there."""
    if shape == 0:
        qx = abs(p[0]) - spx
        qy = abs(p[1]) - spy
        qz = abs(p[2]) - spz
        ox = max(qx, 0.0)
        oy = max(qy, 0.0)
        oz = max(qz, 0.0)
        outside = math.sqrt(ox * ox + oy * oy + oz * oz)
        if outside > 0.0:
            return outside, (math.copysign(ox, p[0]) / outside, math.copysign(oy, p[1]) / outside,
                             math.copysign(oz, p[2]) / outside)
        if qx >= qy and qx >= qz:
            return qx, (1.0 if p[0] >= 0 else -1.0, 0.0, 0.0)
        if qy >= qz:
            return qy, (0.0, 1.0 if p[1] >= 0 else -1.0, 0.0)
        return qz, (0.0, 0.0, 1.0 if p[2] >= 0 else -1.0)
    if shape == 1:
        d = math.sqrt(p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
        if d > 1e-12:
            return d - spx, (p[0] / d, p[1] / d, p[2] / d)
        return d - spx, (0.0, 0.0, 1.0)
    cx = min(max(p[0], -spy), spy)
    dx = p[0] - cx
    d = math.sqrt(dx * dx + p[1] * p[1] + p[2] * p[2])
    if d > 1e-12:
        return d - spx, (dx / d, p[1] / d, p[2] / d)
    return d - spx, (0.0, 0.0, 1.0)


@njit(cache=True, inline="always")
def _apply(force, torque, pos, b, point, f):
    force[b, 0] += f[0]
    force[b, 1] += f[1]
    force[b, 2] += f[2]
    r = (point[0] - pos[b, 0], point[1] - pos[b, 1], point[2] - pos[b, 2])
    t = _cross(r, f)
    torque[b, 0] += t[0]
    torque[b, 1] += t[1]
    torque[b, 2] += t[2]


@njit(cache=True, inline="always")
def _point_vel(pos, vel, angvel, b, point):
    r = (point[0] - pos[b, 0], point[1] - pos[b, 1], point[2] - pos[b, 2])
    c = _cross(_v(angvel, b), r)
    return (vel[b, 0] + c[0], vel[b, 1] + c[1], vel[b, 2] + c[2])


@njit(cache=True, inline="always")
def _inv_mass_along(mass, idiag, quat, pos, b, point, n):
    """Inverse effective mass of body ``b`` for a push at ``point`` along ``n``."""
    r = (point[0] - pos[b, 0], point[1] - pos[b, 1], point[2] - pos[b, 2])
    rn = _cross(r, n)
    return 1.0 / mass[b] + _dot(rn, _inertia_apply(_q(quat, b), idiag[b], rn, True))


@njit(cache=True, inline="always")
def _inv_mass_iso(mass, idiag, pos, b, point):
    """Direction-free upper bound of the inverse effective mass at ``point``."""
    r = (point[0] - pos[b, 0], point[1] - pos[b, 1], point[2] - pos[b, 2])
    imin = min(idiag[b, 0], min(idiag[b, 1], idiag[b, 2]))
    return 1.0 / mass[b] + _dot(r, r) / imin


@njit(cache=True, inline="always")
def _pair_inv_mass(mass, idiag, quat, pos, a, b, point, n):
    inv = _inv_mass_along(mass, idiag, quat, pos, a, point, n)
    if b >= 0:
        inv += _inv_mass_along(mass, idiag, quat, pos, b, point, n)
    return inv


@njit(cache=True)
def _contact_force(mass, idiag, quat, pos, a, b, point, n, depth, vrel, h):
    """Penalty normal force plus regularised Coulomb friction on body ``a``.

    ``b`` is the other body, or -1 for the ground.  Both the normal spring and
    the friction regulariser scale with the effective mass along their own
    direction, so stacked contacts stay within the explicit stability limit.
    """
    vn = _dot(vrel, n)
    mn = 1.0 / _pair_inv_mass(mass, idiag, quat, pos, a, b, point, n)
    fn = mn * (K_CONTACT * depth - C_CONTACT * vn)
    if fn <= 0.0:
        return (0.0, 0.0, 0.0), 0.0
    f = _mul(n, fn)
    vt = _sub(vrel, _mul(n, vn))
    speed = math.sqrt(_dot(vt, vt))
    if speed > 1e-9:
        tdir = _mul(vt, 1.0 / speed)
        mt = 1.0 / _pair_inv_mass(mass, idiag, quat, pos, a, b, point, tdir)
        ft = min(FRICTION * fn, 0.25 * mt * speed / h)
        f = _sub(f, _mul(tdir, ft))
    return f, fn


@njit(cache=True)
def _ground_force(mass, idiag, quat, pos, b, k, cp, depth, v, anchor):
    """Penalty normal force plus stick-slip Coulomb friction for ground probe ``k``.

    While a probe stays in contact, friction is a damped spring towards the
    point where contact began; when that spring would exceed the Coulomb
    limit the anchor slides along so the force sits exactly on the limit.
    A steady sideways load therefore holds still instead of creeping.
    """
    mn = 1.0 / _inv_mass_along(mass, idiag, quat, pos, b, cp, (0.0, 0.0, 1.0))
    fn = mn * (K_CONTACT * depth - C_CONTACT * v[2])
    if fn <= 0.0:
        anchor[k, 2] = 0.0
        return (0.0, 0.0, 0.0), 0.0
    if anchor[k, 2] == 0.0:
        anchor[k, 0] = cp[0]
        anchor[k, 1] = cp[1]
        anchor[k, 2] = 1.0
    mt = 1.0 / _inv_mass_iso(mass, idiag, pos, b, cp)
    ex = cp[0] - anchor[k, 0]
    ey = cp[1] - anchor[k, 1]
    fx = -mt * (K_CONTACT * ex + C_CONTACT * v[0])
    fy = -mt * (K_CONTACT * ey + C_CONTACT * v[1])
    ft = math.sqrt(fx * fx + fy * fy)
    limit = FRICTION * fn
    if ft > limit:
        s = limit / ft
        fx *= s
        fy *= s
        anchor[k, 0] = cp[0] + fx / (mt * K_CONTACT)
        anchor[k, 1] = cp[1] + fy / (mt * K_CONTACT)
    return (fx, fy, fn), fn


@njit(cache=True)
def _substep(h, gravity, shape, sp, mass, idiag, brad, pos, quat, vel, angvel,
             probe_body, probe_local, probe_rad, probe_ptr, probe_anchor,
             jt_a, jt_b, jt_type, jt_la, jt_lb, jt_axa, jt_axb, jt_q0,
             mu_a, mu_b, mu_la, mu_lb, mu_l0, mu_max, acts, mu_len, stats, force, torque):
    nb = pos.shape[0]
    for b in range(nb):
        force[b, 0] = 0.0
        force[b, 1] = 0.0
        force[b, 2] = -mass[b] * gravity
        torque[b, 0] = 0.0
        torque[b, 1] = 0.0
        torque[b, 2] = 0.0

    # muscles
    for m in range(mu_a.shape[0]):
        a = mu_a[m]
        b = mu_b[m]
        pa = _add(_v(pos, a), _qrot(_q(quat, a), _v(mu_la, m)))
        pb = _add(_v(pos, b), _qrot(_q(quat, b), _v(mu_lb, m)))
        d = _sub(pb, pa)
        length = math.sqrt(_dot(d, d))
        mu_len[m] = length
        if length < 1e-9:
            continue
        u = _mul(d, 1.0 / length)
        ldot = _dot(_sub(_point_vel(pos, vel, angvel, b, pb), _point_vel(pos, vel, angvel, a, pa)), u)
        mred = 1.0 / (_inv_mass_iso(mass, idiag, pos, a, pa) + _inv_mass_iso(mass, idiag, pos, b, pb))
        k = acts[m] * mu_max[m]
        c = MUSCLE_DAMPING * mu_max[m]
        # stability ceilings for very light segments
        k = min(k, 0.25 * mred / (h * h))
        c = min(c, 0.5 * mred / h)
        fs = k * (length - mu_l0[m])
        f = _mul(u, fs + c * ldot)
        _apply(force, torque, pos, a, pa, f)
        _apply(force, torque, pos, b, pb, _mul(f, -1.0))
        stats[1] += abs(fs * ldot) * h

    # joints
    for j in range(jt_a.shape[0]):
        a = jt_a[j]
        b = jt_b[j]
        qa = _q(quat, a)
        qb = _q(quat, b)
        pa = _add(_v(pos, a), _qrot(qa, _v(jt_la, j)))
        pb = _add(_v(pos, b), _qrot(qb, _v(jt_lb, j)))
        mred = 1.0 / (_inv_mass_iso(mass, idiag, pos, a, pa) + _inv_mass_iso(mass, idiag, pos, b, pb))
        ia = min(idiag[a, 0], min(idiag[a, 1], idiag[a, 2]))
        ib = min(idiag[b, 0], min(idiag[b, 1], idiag[b, 2]))
        ired = ia * ib / (ia + ib)
        err = _sub(pb, pa)
        dv = _sub(_point_vel(pos, vel, angvel, b, pb), _point_vel(pos, vel, angvel, a, pa))
        t = jt_type[j]
        if t == 3 or t == 4:
            ax = _qrot(qa, _v(jt_axa, j))
            along = _dot(err, ax)
            vel_along = _dot(dv, ax)
            err = _sub(err, _mul(ax, along))
            dv = _sub(dv, _mul(ax, vel_along))
            excess = 0.0
            if along > SLIDE_LIMIT:
                excess = along - SLIDE_LIMIT
            elif along < -SLIDE_LIMIT:
                excess = along + SLIDE_LIMIT
            if excess != 0.0:
                err = _add(err, _mul(ax, excess))
                dv = _add(dv, _mul(ax, vel_along))
        f = _mul(_add(_mul(err, K_JOINT), _mul(dv, C_JOINT)), mred)
        _apply(force, torque, pos, a, pa, f)
        _apply(force, torque, pos, b, pb, _mul(f, -1.0))
        dw = _sub(_v(angvel, b), _v(angvel, a))
        tq = (0.0, 0.0, 0.0)
        if t == 0 or t == 3:
            target = _qmul(qa, _q(jt_q0, j))
            qe = _qmul(target, (qb[0], -qb[1], -qb[2], -qb[3]))
            s = 2.0 if qe[0] >= 0 else -2.0
            rv = (s * qe[1], s * qe[2], s * qe[3])
            tq = _mul(_sub(_mul(rv, K_JOINT), _mul(dw, C_JOINT)), ired)
        elif t == 1 or t == 4:
            wa = _qrot(qa, _v(jt_axa, j))
            wb = _qrot(qb, _v(jt_axb, j))
            e = _cross(wb, wa)
            dwp = _sub(dw, _mul(wa, _dot(dw, wa)))
            tq = _mul(_sub(_mul(e, K_JOINT), _mul(dwp, C_JOINT)), ired)
        for i in range(3):
            torque[b, i] += tq[i]
            torque[a, i] -= tq[i]

    # ground contact
    for b in range(nb):
        qb = _q(quat, b)
        for k in range(probe_ptr[b], probe_ptr[b + 1]):
            pw = _add(_v(pos, b), _qrot(qb, _v(probe_local, k)))
            depth = probe_rad[k] - pw[2]
            if depth <= 0.0:
                probe_anchor[k, 2] = 0.0
                continue
            cp = (pw[0], pw[1], pw[2] - probe_rad[k])
            v = _point_vel(pos, vel, angvel, b, cp)
            f, fn = _ground_force(mass, idiag, quat, pos, b, k, cp, depth, v, probe_anchor)
            _apply(force, torque, pos, b, cp, f)
            stats[0] += fn * h

    # segment / segment contact
    for a in range(nb):
        qa = _q(quat, a)
        for b in range(nb):
            if a == b:
                continue
            d = _sub(_v(pos, a), _v(pos, b))
            if _dot(d, d) > (brad[a] + brad[b]) ** 2:
                continue
            qb = _q(quat, b)
            pb0 = _v(pos, b)
            # probes of a against the surface of b
            for k in range(probe_ptr[a], probe_ptr[a + 1]):
                pw = _add(_v(pos, a), _qrot(qa, _v(probe_local, k)))
                local = _qrot_inv(qb, _sub(pw, pb0))
                dist, nrm = _sdf(shape[b], sp[b, 0], sp[b, 1], sp[b, 2], local)
                depth = probe_rad[k] - dist
                if depth <= 0.0:
                    continue
                nw = _qrot(qb, nrm)
                cp = _sub(pw, _mul(nw, probe_rad[k]))
                vrel = _sub(_point_vel(pos, vel, angvel, a, cp), _point_vel(pos, vel, angvel, b, cp))
                f, fn = _contact_force(mass, idiag, quat, pos, a, b, cp, nw, depth, vrel, h)
                _apply(force, torque, pos, a, cp, f)
                _apply(force, torque, pos, b, cp, _mul(f, -1.0))
                if depth > stats[2]:
                    stats[2] = depth

    # integrate
    for b in range(nb):
        for i in range(3):
            vel[b, i] += h * force[b, i] / mass[b]
        speed = math.sqrt(vel[b, 0] ** 2 + vel[b, 1] ** 2 + vel[b, 2] ** 2)
        if speed > V_MAX:
            for i in range(3):
                vel[b, i] *= V_MAX / speed
        q = _q(quat, b)
        mom = _inertia_apply(q, idiag[b], _v(angvel, b), False)
        drag = 1.0 - ANGULAR_DRAG * h
        mom = _mul(_add(mom, _mul(_v(torque, b), h)), drag)
        for i in range(3):
            pos[b, i] += h * vel[b, i]
        dq = _qmul((0.0, angvel[b, 0], angvel[b, 1], angvel[b, 2]), q)
        q = (q[0] + 0.5 * h * dq[0], q[1] + 0.5 * h * dq[1], q[2] + 0.5 * h * dq[2], q[3] + 0.5 * h * dq[3])
        norm = math.sqrt(q[0] ** 2 + q[1] ** 2 + q[2] ** 2 + q[3] ** 2)
        q = (q[0] / norm, q[1] / norm, q[2] / norm, q[3] / norm)
        for i in range(4):
            quat[b, i] = q[i]
        w = _inertia_apply(q, idiag[b], mom, True)
        spin = math.sqrt(_dot(w, w))
        if spin > W_MAX:
            w = _mul(w, W_MAX / spin)
        for i in range(3):
            angvel[b, i] = w[i]


@njit(cache=True)
def _physics_step(gravity, shape, sp, mass, idiag, brad, pos, quat, vel, angvel,
                  probe_body, probe_local, probe_rad, probe_ptr, probe_anchor,
                  jt_a, jt_b, jt_type, jt_la, jt_lb, jt_axa, jt_axb, jt_q0,
                  mu_a, mu_b, mu_la, mu_lb, mu_l0, mu_max, acts, mu_len, stats, force, torque):
    """One 1/120 s step.  ``stats``: [ground impulse, muscle work, max body penetration]."""
    h = DT / SUBSTEPS
    for _ in range(SUBSTEPS):
        _substep(h, gravity, shape, sp, mass, idiag, brad, pos, quat, vel, angvel,
                 probe_body, probe_local, probe_rad, probe_ptr, probe_anchor,
                 jt_a, jt_b, jt_type, jt_la, jt_lb, jt_axa, jt_axb, jt_q0,
                 mu_a, mu_b, mu_la, mu_lb, mu_l0, mu_max, acts, mu_len, stats, force, torque)
    for b in range(pos.shape[0]):
        for i in range(3):
            if not (math.isfinite(pos[b, i]) and math.isfinite(vel[b, i])):
                return False
    return True


@njit(cache=True)
def _seg_seg_dist2(p1, q1, p2, q2):
    """Squared distance between segments p1-q1 and p2-q2."""
    d1 = _sub(q1, p1)
    d2 = _sub(q2, p2)
    r = _sub(p1, p2)
    a = _dot(d1, d1)
    e = _dot(d2, d2)
    f = _dot(d2, r)
    if a <= 1e-18 and e <= 1e-18:
        return _dot(r, r)
    if a <= 1e-18:
        s = 0.0
        t = min(max(f / e, 0.0), 1.0)
    else:
        c = _dot(d1, r)
        if e <= 1e-18:
            t = 0.0
            s = min(max(-c / a, 0.0), 1.0)
        else:
            b = _dot(d1, d2)
            denom = a * e - b * b
            s = min(max((b * f - c * e) / denom, 0.0), 1.0) if denom > 1e-18 else 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(max(-c / a, 0.0), 1.0)
            elif t > 1.0:
                t = 1.0
                s = min(max((b - c) / a, 0.0), 1.0)
    c1 = _add(p1, _mul(d1, s))
    c2 = _add(p2, _mul(d2, t))
    dd = _sub(c1, c2)
    return _dot(dd, dd)


@njit(cache=True)
def _segment_hits(shape, sp, pos, quat, b, p0, p1):
    """Whether the segment p0->p1 intersects body ``b``."""
    q = _q(quat, b)
    c0 = _v(pos, b)
    a = _qrot_inv(q, _sub(p0, c0))
    c = _qrot_inv(q, _sub(p1, c0))
    d = _sub(c, a)
    if shape[b] == 0:
        tmin = 0.0
        tmax = 1.0
        for i in range(3):
            if abs(d[i]) < 1e-12:
                if abs(a[i]) > sp[b, i]:
                    return False
            else:
                t1 = (-sp[b, i] - a[i]) / d[i]
                t2 = (sp[b, i] - a[i]) / d[i]
                if t1 > t2:
                    t1, t2 = t2, t1
                tmin = max(tmin, t1)
                tmax = min(tmax, t2)
                if tmin > tmax:
                    return False
        return True
    r = sp[b, 0]
    hl = sp[b, 1] if shape[b] == 2 else 0.0
    return _seg_seg_dist2(a, c, (-hl, 0.0, 0.0), (hl, 0.0, 0.0)) < r * r


@njit(cache=True)
def _sense(shape, sp, pos, quat, rc_body, rc_lp, rc_ld, li_pos, li_str, out, visible):
    for r in range(rc_body.shape[0]):
        b = rc_body[r]
        qb = _q(quat, b)
        p = _add(_v(pos, b), _qrot(qb, _v(rc_lp, r)))
        o = _qrot(qb, _v(rc_ld, r))
        total = 0.0
        for l in range(li_pos.shape[0]):
            lpos = _v(li_pos, l)
            to = _sub(lpos, p)
            dist = math.sqrt(_dot(to, to))
            if dist < 1e-9:
                continue
            cos = _dot(o, to) / dist
            if cos <= 0.0:
                continue
            blocked = False
            for k in range(pos.shape[0]):
                if k != b and _segment_hits(shape, sp, pos, quat, k, p, lpos):
                    blocked = True
                    break
            if blocked:
                continue
            visible[l] = True
            total += li_str[l] * cos / (1.0 + dist * dist)
        out[r] = min(max(total, 0.0), 1.0)


@njit(cache=True)
def _simulate(steps, gravity, shape, sp, mass, idiag, brad, pos, quat, vel, angvel,
              probe_body, probe_local, probe_rad, probe_ptr, probe_anchor,
              jt_a, jt_b, jt_type, jt_la, jt_lb, jt_axa, jt_axb, jt_q0,
              mu_a, mu_b, mu_la, mu_lb, mu_l0, mu_max,
              rc_body, rc_lp, rc_ld, li_pos, li_str, li_kind,
              bk, bp, btr, bin_ptr, bin_src, bsync, bunit_ptr, bunit_nodes, bforce, bmute,
              brecv, bprop, bmout, bout, bmem, bring, bt, bxin, bdone,
              rec_pos, rec_quat, rec_act, rec_work, rec_impulse, rec_top, rec_visible, rec_sensor,
              status):
    """Lockstep brain + physics loop.  ``status``: [valid steps, blew up, died]."""
    nm = mu_a.shape[0]
    nr = rc_body.shape[0]
    nl = li_pos.shape[0]
    acts = np.zeros(nm)
    mu_len = mu_l0.copy()
    sensors = np.zeros(nr)
    proprio = np.zeros(nm)
    visible = np.zeros(nl, dtype=np.bool_)
    stats = np.zeros(3)
    force = np.zeros((pos.shape[0], 3))
    torque = np.zeros((pos.shape[0], 3))
    has_brain = bk.shape[0] > 0
    for t in range(steps):
        for l in range(nl):
            visible[l] = False
        _sense(shape, sp, pos, quat, rc_body, rc_lp, rc_ld, li_pos, li_str, sensors, visible)
        for m in range(nm):
            proprio[m] = min(max(mu_len[m] / (2.0 * mu_l0[m]), 0.0), 1.0)
        if has_brain:
            _brain_step(bk, bp, btr, bin_ptr, bin_src, bsync, bunit_ptr, bunit_nodes, bforce, bmute,
                        brecv, bprop, bmout, sensors, proprio, bout, bmem, bring, bt, bxin, bdone, acts)
        stats[0] = 0.0
        ok = _physics_step(gravity, shape, sp, mass, idiag, brad, pos, quat, vel, angvel,
                           probe_body, probe_local, probe_rad, probe_ptr, probe_anchor,
                           jt_a, jt_b, jt_type, jt_la, jt_lb, jt_axa, jt_axb, jt_q0,
                           mu_a, mu_b, mu_la, mu_lb, mu_l0, mu_max, acts, mu_len, stats, force, torque)
        if not ok:
            status[1] = 1
            status[0] = t
            return
        top = -1e30
        for b in range(pos.shape[0]):
            rec_pos[t, b] = pos[b]
            rec_quat[t, b] = quat[b]
            z = pos[b, 2] + brad[b]
            if z > top:
                top = z
        for m in range(nm):
            rec_act[t, m] = acts[m]
        for r in range(nr):
            rec_sensor[t, r] = sensors[r]
        for l in range(nl):
            rec_visible[t, l] = visible[l]
        rec_work[t] = stats[1]
        rec_impulse[t] = stats[0]
        rec_top[t] = top
        status[0] = t + 1
        for l in range(nl):
            if li_kind[l] == 1:
                for b in range(pos.shape[0]):
                    d = pos[b] - li_pos[l]
                    if math.sqrt(d[0] ** 2 + d[1] ** 2 + d[2] ** 2) - brad[b] < DANGER_RADIUS:
                        status[2] = 1
        if status[2] == 1:
            return


# --------------------------------------------------------------------------
# Python-side world


@dataclass
class Light:
    position: tuple[float, float, float]
    strength: float = 1.0
    kind: str = "vulnerable"

    def __post_init__(self):
        if self.strength <= 0:
            raise ValueError("light strength must be positive")
        if self.kind not in LIGHT_KINDS:
            raise ValueError(f"unknown light kind {self.kind!r}")


def _probes(shape: str, sp: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if shape == "box":
        pts = [np.array([sx, sy, sz]) * sp for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)]
        for i in range(3):
            for s in (-1, 1):
                v = np.zeros(3)
                v[i] = s * sp[i]
                pts.append(v)
        return np.array(pts), np.zeros(len(pts))
    if shape == "sphere":
        return np.zeros((1, 3)), np.array([sp[0]])
    hl = sp[1]
    return np.array([[-hl, 0, 0], [0, 0, 0], [hl, 0, 0]], dtype=float), np.full(3, sp[0])


def _bound_radius(shape: str, sp: np.ndarray) -> float:
    if shape == "box":
        return float(np.linalg.norm(sp))
    if shape == "sphere":
        return float(sp[0])
    return float(sp[0] + sp[1])


@dataclass
class World:
    """Flat-array state of one simulated scene."""

    shape: np.ndarray
    sp: np.ndarray
    mass: np.ndarray
    idiag: np.ndarray
    brad: np.ndarray
    pos: np.ndarray
    quat: np.ndarray
    vel: np.ndarray
    angvel: np.ndarray
    probe_body: np.ndarray
    probe_local: np.ndarray
    probe_rad: np.ndarray
    probe_ptr: np.ndarray
    probe_anchor: np.ndarray  # ground friction anchor x, y and an in-contact flag
    joints: dict
    muscles: dict
    receptors: dict
    lights: list = field(default_factory=list)
    gravity: float = GRAVITY
    dt: float = DT
    step_counter: int = 0
    activations: np.ndarray | None = None
    last_stats: np.ndarray = field(default_factory=lambda: np.zeros(3))

    @property
    def total_mass(self) -> float:
        return float(self.mass.sum())

    def kinetic_energy(self) -> float:
        ke = 0.5 * float(np.sum(self.mass[:, None] * self.vel**2))
        for b in range(len(self.mass)):
            mom = _inertia_apply(tuple(self.quat[b]), self.idiag[b], tuple(self.angvel[b]), False)
            ke += 0.5 * float(self.angvel[b] @ np.array(mom))
        return ke

    def muscle_lengths(self) -> np.ndarray:
        m = self.muscles
        out = np.zeros(len(m["a"]))
        for i in range(len(out)):
            pa = self.pos[m["a"][i]] + np.array(_qrot(tuple(self.quat[m["a"][i]]), tuple(m["la"][i])))
            pb = self.pos[m["b"][i]] + np.array(_qrot(tuple(self.quat[m["b"][i]]), tuple(m["lb"][i])))
            out[i] = np.linalg.norm(pb - pa)
        return out


def _empty(shape, dtype=float):
    return np.zeros(shape, dtype=dtype)


def build_world(creature: Creature, lights=(), *, gravity: float = GRAVITY, lift: float = 0.0) -> World:
    """World for a creature at its expression pose, lowest point resting on the ground."""
    segs = creature.segments
    nb = len(segs)
    shape = np.array([SHAPE_CODE[s.shape] for s in segs], dtype=np.int64)
    sp = np.array([s.params for s in segs], dtype=float).reshape(nb, 3)
    mass = np.zeros(nb)
    idiag = np.zeros((nb, 3))
    for i, s in enumerate(segs):
        mass[i], idiag[i] = shape_mass_inertia(s.shape, s.dimensions, s.density)
    brad = np.array([_bound_radius(s.shape, s.params) for s in segs])
    pos = np.array([s.position for s in segs], dtype=float).reshape(nb, 3)
    plist, rlist, owner, ptr = [], [], [], [0]
    for i, s in enumerate(segs):
        pts, rad = _probes(s.shape, s.params)
        plist.append(pts)
        rlist.append(rad)
        owner += [i] * len(rad)
        ptr.append(ptr[-1] + len(rad))
    probe_local = np.vstack(plist)
    probe_rad = np.concatenate(rlist)
    lowest = min(float(pos[owner[k], 2] + probe_local[k, 2] - probe_rad[k]) for k in range(len(probe_rad)))
    pos[:, 2] += -lowest + lift
    centre = pos[0].copy()
    centre[2] = 0.0
    pos[:, :2] -= centre[:2]
    quat = np.zeros((nb, 4))
    quat[:, 0] = 1.0
    offset = pos[0] - np.array(segs[0].position)

    nj = len(creature.joints)
    joints = dict(a=_empty(nj, np.int64), b=_empty(nj, np.int64), type=_empty(nj, np.int64),
                  la=_empty((nj, 3)), lb=_empty((nj, 3)), axa=_empty((nj, 3)), axb=_empty((nj, 3)),
                  q0=np.tile([1.0, 0.0, 0.0, 0.0], (nj, 1)).reshape(nj, 4))
    for j, jt in enumerate(creature.joints):
        pivot = jt.pivot + offset
        joints["a"][j], joints["b"][j] = jt.parent, jt.child
        joints["type"][j] = JOINT_CODE[jt.joint_type]
        joints["la"][j] = pivot - pos[jt.parent]
        joints["lb"][j] = pivot - pos[jt.child]
        joints["axa"][j] = jt.axis
        joints["axb"][j] = jt.axis
    nm = len(creature.muscles)
    muscles = dict(a=_empty(nm, np.int64), b=_empty(nm, np.int64), la=_empty((nm, 3)),
                   lb=_empty((nm, 3)), l0=_empty(nm), max=_empty(nm), ids=[m.gene_id for m in creature.muscles])
    for k, m in enumerate(creature.muscles):
        muscles["a"][k], muscles["b"][k] = m.parent, m.child
        muscles["la"][k] = m.point_parent + offset - pos[m.parent]
        muscles["lb"][k] = m.point_child + offset - pos[m.child]
        muscles["l0"][k] = max(m.rest_length, 1e-3)
        muscles["max"][k] = m.max_strength
    nr = len(creature.receptors)
    receptors = dict(body=_empty(nr, np.int64), lp=_empty((nr, 3)), ld=_empty((nr, 3)),
                     ids=[r.gene_id for r in creature.receptors])
    for k, r in enumerate(creature.receptors):
        receptors["body"][k] = r.segment
        receptors["lp"][k] = r.point + offset - pos[r.segment]
        receptors["ld"][k] = r.direction
    return World(shape, sp, mass, idiag, brad, pos, quat, np.zeros((nb, 3)), np.zeros((nb, 3)),
                 np.array(owner, dtype=np.int64), probe_local, probe_rad, np.array(ptr, dtype=np.int64),
                 np.zeros((len(probe_rad), 3)), joints, muscles, receptors, list(lights), gravity)


def _light_arrays(lights):
    nl = len(lights)
    pos = np.array([l.position for l in lights], dtype=float).reshape(nl, 3)
    strength = np.array([l.strength for l in lights], dtype=float)
    kind = np.array([LIGHT_KINDS.index(l.kind) for l in lights], dtype=np.int64)
    return pos, strength, kind


def _phys_args(w: World):
    j, m = w.joints, w.muscles
    return (w.gravity, w.shape, w.sp, w.mass, w.idiag, w.brad, w.pos, w.quat, w.vel, w.angvel,
            w.probe_body, w.probe_local, w.probe_rad, w.probe_ptr, w.probe_anchor,
            j["a"], j["b"], j["type"], j["la"], j["lb"], j["axa"], j["axb"], j["q0"],
            m["a"], m["b"], m["la"], m["lb"], m["l0"], m["max"])


def step_world(world: World) -> World:
    """Advance the world by one fixed step in place (and return it)."""
    nm = len(world.muscles["a"])
    acts = world.activations if world.activations is not None else np.zeros(nm)
    acts = np.clip(np.asarray(acts, dtype=float), 0.0, 1.0)
    stats = np.zeros(3)
    mu_len = world.muscles["l0"].copy()
    nb = len(world.mass)
    ok = _physics_step(*_phys_args(world), acts, mu_len, stats, np.zeros((nb, 3)), np.zeros((nb, 3)))
    world.last_stats = stats
    world.step_counter += 1
    if not ok:
        raise NumericalBlowup(f"non-finite state at step {world.step_counter}")
    return world


# --------------------------------------------------------------------------
# muscle and receptor formulas (reference forms of what the kernel computes)


def muscle_force(activation: float, max_strength: float, length: float, rest_length: float,
                 length_rate: float = 0.0) -> float:
    """Contractile force magnitude along the attachment line (negative pushes apart)."""
    if not 0.0 <= activation <= 1.0:
        raise ValueError("activation must lie in [0, 1]")
    k = activation * max_strength
    return k * (length - rest_length) + MUSCLE_DAMPING * max_strength * length_rate


def proprioception(length: float, rest_length: float) -> float:
    return min(max(length / (2.0 * rest_length), 0.0), 1.0)


def sense_photoreceptor(world: World, receptor: int) -> float:
    """Signal of one receptor in the current world state."""
    lp, ls, _ = _light_arrays(world.lights)
    out = np.zeros(len(world.receptors["body"]))
    vis = np.zeros(len(world.lights), dtype=np.bool_)
    r = world.receptors
    _sense(world.shape, world.sp, world.pos, world.quat, r["body"], r["lp"], r["ld"], lp, ls, out, vis)
    return float(out[receptor])


# --------------------------------------------------------------------------
# evaluation


@dataclass
class Trajectory:
    """Per-step record of one evaluation."""

    positions: np.ndarray      # (steps, segments, 3)
    orientations: np.ndarray   # (steps, segments, 4) quaternions w, x, y, z
    activations: np.ndarray    # (steps, muscles)
    work: np.ndarray           # cumulative muscle work (J)
    ground_impulse: np.ndarray # ground normal impulse per step (N s)
    top_height: np.ndarray     # highest bounding point per step (m)
    visible: np.ndarray        # (steps, lights) any receptor sees the light
    sensors: np.ndarray        # (steps, receptors)
    lights: list
    total_mass: float
    start_position: np.ndarray
    start_heading: float
    steps: int
    valid_steps: int
    blew_up: bool = False
    died: bool = False
    dt: float = DT

    def __len__(self) -> int:
        return self.steps

    @property
    def root_positions(self) -> np.ndarray:
        return self.positions[:, 0, :]

    @property
    def headings(self) -> np.ndarray:
        """Yaw of the root's local +x axis, per step (radians)."""
        q = self.orientations[:, 0, :]
        w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
        fx = 1 - 2 * (y * y + z * z)
        fy = 2 * (x * y + w * z)
        return np.arctan2(fy, fx)

    @property
    def weight_impulse(self) -> float:
        return self.total_mass * GRAVITY * self.dt


def evaluate(creature: Creature, lights=(), steps: int = DEFAULT_STEPS, seed: int = 0, *,
             brain: BrainGraph | None = None, force: dict | None = None, mute=(),
             gravity: float = GRAVITY, world: World | None = None) -> Trajectory:
    """Run brain and physics in lockstep for ``steps`` steps.

    Evaluation is deterministic; ``seed`` is recorded for provenance only,
    since the simulation has no stochastic terms.
    """
    del seed
    w = world if world is not None else build_world(creature, lights, gravity=gravity)
    lights = list(w.lights) if world is not None else list(lights)
    brain = brain if brain is not None else creature.brain
    nb = len(w.mass)
    nm = len(w.muscles["a"])
    nr = len(w.receptors["body"])
    lp, ls, lk = _light_arrays(lights)
    rec_pos = np.zeros((steps, nb, 3))
    rec_quat = np.zeros((steps, nb, 4))
    rec_act = np.zeros((steps, nm))
    rec_work = np.zeros(steps)
    rec_imp = np.zeros(steps)
    rec_top = np.zeros(steps)
    rec_vis = np.zeros((steps, len(lights)), dtype=np.bool_)
    rec_sens = np.zeros((steps, nr))
    status = np.zeros(3, dtype=np.int64)
    start = w.pos[0].copy()
    if brain is not None and brain.nodes:
        if list(brain.muscle_ids) != list(w.muscles["ids"]) or list(brain.receptor_ids) != list(w.receptors["ids"]):
            brain.sync_io(w.muscles["ids"], w.receptors["ids"])
        c = brain.compile()
        f, mu = brain.control_arrays(force, mute)
        n = len(c["ids"])
        bargs = (c["kind"], c["p"], c["transparent"], c["in_ptr"], c["in_src"], c["sync_order"],
                 c["unit_ptr"], c["unit_nodes"], f, mu, c["recv_idx"], c["prop_idx"], c["mout_idx"],
                 np.zeros(n), np.zeros((n, 1)), np.zeros((n, 30)), np.zeros(1, dtype=np.int64),
                 np.zeros(c["max_in"]), np.zeros(n, dtype=np.bool_))
    else:
        e = np.zeros(0, dtype=np.int64)
        bargs = (e, np.zeros((0, 3)), np.zeros(0, dtype=np.bool_), np.zeros(1, dtype=np.int64), e, e,
                 np.zeros(1, dtype=np.int64), e, np.zeros(0), np.zeros(0, dtype=np.bool_),
                 np.full(nr, -1, dtype=np.int64), np.full(nm, -1, dtype=np.int64),
                 np.full(nm, -1, dtype=np.int64), np.zeros(0), np.zeros((0, 1)), np.zeros((0, 30)),
                 np.zeros(1, dtype=np.int64), np.zeros(3), np.zeros(0, dtype=np.bool_))
    if steps > 0:
        _simulate(steps, *_phys_args(w), w.receptors["body"], w.receptors["lp"], w.receptors["ld"],
                  lp, ls, lk, *bargs, rec_pos, rec_quat, rec_act, rec_work, rec_imp, rec_top, rec_vis,
                  rec_sens, status)
    valid = int(status[0])
    if valid < steps:
        # hold the last valid state so the record keeps its full length
        for arr in (rec_pos, rec_quat, rec_act, rec_work, rec_top, rec_sens):
            if valid > 0:
                arr[valid:] = arr[valid - 1]
            elif arr is rec_pos:
                arr[:] = w.pos if not status[1] else 0.0
            elif arr is rec_quat:
                arr[:] = np.array([1.0, 0, 0, 0])
    w.step_counter += valid
    return Trajectory(rec_pos, rec_quat, rec_act, rec_work, rec_imp, rec_top, rec_vis, rec_sens,
                      lights, w.total_mass, start, 0.0, steps, valid, bool(status[1]), bool(status[2]))


def export_trajectory(traj: Trajectory, path) -> None:
    """Line-delimited JSON: one record per step."""
    with open(path, "w") as fh:
        for t in range(traj.steps):
            rec = {
                "step": t,
                "root_position": traj.positions[t, 0].tolist(),
                "root_orientation": traj.orientations[t, 0].tolist(),
                "segment_positions": traj.positions[t].tolist(),
                "segment_orientations": traj.orientations[t].tolist(),
                "muscle_activations": traj.activations[t].tolist(),
            }
            fh.write(json.dumps(rec) + "\n")
