#!/usr/bin/env python3
"""Reference trajectory-error computation, independent of the C++ code.

Loads an estimated trajectory (TUM text: `t x y z qx qy qz qw`) and a
ground-truth file (same TUM layout, or the simulator's gt_trajectory.csv
with header `t,x,y,z,qw,qx,qy,qz,vx,vy,vz`), associates poses by nearest
timestamp, and prints APE/RPE statistics on one line:

    ape_rmse=... rpe_trans_rmse=... rpe_rot_deg_rmse=... length=... n=...

Conventions (the C++ implementation must agree within 1e-6):
  * association: walk the estimate in time order; each pose pairs with its
    nearest ground-truth timestamp if |dt| <= max_dt, ties to the earlier
    sample; ground-truth indices must be strictly increasing (one-to-one).
  * --align rigid: closed-form least-squares rotation+translation (no
    scale) on the associated positions, applied to the estimate for APE.
    Relative errors are invariant to it, so RPE uses the raw poses.
  * --planar: z is zeroed on both position sets before alignment and APE;
    rotations and the reported path length stay three-dimensional.
  * RPE: for consecutive associated pairs, the discrepancy between the
    estimated and true relative pose; translation in meters, rotation
    angle in degrees; both reported as RMSE.
  * length: ground-truth path length over the associated span.
"""

import argparse
import sys

import numpy as np


def quat_to_mat(q):
    """Row-vector quaternions [x, y, z, w] -> (N,3,3) rotation matrices."""
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    x, y, z, w = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def load_trajectory(path):
    """Returns (t, pos (N,3), quat xyzw (N,4))."""
    ts, ps, qs = [], [], []
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "," in line:  # csv ground truth: t,x,y,z,qw,qx,qy,qz,...
                parts = line.split(",")
                if parts[0] in ("t", "timestamp"):
                    continue
                v = [float(x) for x in parts]
                ts.append(v[0])
                ps.append(v[1:4])
                qs.append([v[5], v[6], v[7], v[4]])  # wxyz -> xyzw
            else:  # TUM: t x y z qx qy qz qw
                v = [float(x) for x in line.split()]
                ts.append(v[0])
                ps.append(v[1:4])
                qs.append(v[4:8])
    if not ts:
        raise ValueError(f"no poses in {path}")
    return np.asarray(ts), np.asarray(ps), np.asarray(qs)


def associate(t_est, t_gt, max_dt):
    """Nearest-timestamp pairs with strictly increasing gt indices."""
    pairs = []
    last_j = -1
    for i, t in enumerate(t_est):
        j = int(np.searchsorted(t_gt, t))
        best, best_dt = -1, max_dt
        for cand in (j - 1, j):
            if 0 <= cand < len(t_gt):
                dt = abs(t_gt[cand] - t)
                if dt <= best_dt and (best < 0 or dt < best_dt):
                    best, best_dt = cand, dt
        if best > last_j:
            pairs.append((i, best))
            last_j = best
    return pairs


def rigid_align(src, dst):
    """R, t minimizing sum ||R p + t - q||^2 (no scale)."""
    mu_s, mu_d = src.mean(axis=0), dst.mean(axis=0)
    cov = (dst - mu_d).T @ (src - mu_s) / len(src)
    u, _, vt = np.linalg.svd(cov)
    s = np.eye(3)
    if np.linalg.det(u) * np.linalg.det(vt) < 0:
        s[2, 2] = -1
    rot = u @ s @ vt
    return rot, mu_d - rot @ mu_s


def rotation_angle_deg(m):
    c = np.clip((np.trace(m) - 1) / 2, -1.0, 1.0)
    return np.degrees(np.arccos(c))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("traj")
    ap.add_argument("gt")
    ap.add_argument("--align", choices=["none", "rigid"], default="none")
    ap.add_argument("--planar", action="store_true")
    ap.add_argument("--max-dt", type=float, default=0.01)
    args = ap.parse_args()

    t_e, p_e, q_e = load_trajectory(args.traj)
    t_g, p_g, q_g = load_trajectory(args.gt)
    pairs = associate(t_e, t_g, args.max_dt)
    if len(pairs) < 2:
        print(f"error: only {len(pairs)} associated poses", file=sys.stderr)
        return 1

    ie = np.array([p[0] for p in pairs])
    ig = np.array([p[1] for p in pairs])
    pe, pg = p_e[ie].copy(), p_g[ig].copy()
    re_mats, rg_mats = quat_to_mat(q_e[ie]), quat_to_mat(q_g[ig])

    length = float(np.sum(np.linalg.norm(np.diff(p_g[ig], axis=0), axis=1)))

    if args.planar:
        pe[:, 2] = 0.0
        pg[:, 2] = 0.0
    if args.align == "rigid":
        rot, trans = rigid_align(pe, pg)
        pe = pe @ rot.T + trans
    ape = float(np.sqrt(np.mean(np.sum((pe - pg) ** 2, axis=1))))

    dtr, drot = [], []
    for k in range(len(pairs) - 1):
        d_est_r = re_mats[k].T @ re_mats[k + 1]
        d_est_t = re_mats[k].T @ (p_e[ie[k + 1]] - p_e[ie[k]])
        d_gt_r = rg_mats[k].T @ rg_mats[k + 1]
        d_gt_t = rg_mats[k].T @ (p_g[ig[k + 1]] - p_g[ig[k]])
        err_r = d_gt_r.T @ d_est_r
        err_t = d_gt_r.T @ (d_est_t - d_gt_t)
        dtr.append(np.dot(err_t, err_t))
        drot.append(rotation_angle_deg(err_r) ** 2)
    rpe_t = float(np.sqrt(np.mean(dtr)))
    rpe_r = float(np.sqrt(np.mean(drot)))

    print(f"ape_rmse={ape:.12g} rpe_trans_rmse={rpe_t:.12g} "
          f"rpe_rot_deg_rmse={rpe_r:.12g} length={length:.12g} n={len(pairs)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
