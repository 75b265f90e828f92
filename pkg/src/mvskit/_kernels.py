"""Numba kernels for the hot paths: matching cost, propagation, fusion.

Every kernel is deterministic (no fastmath, no thread-order-dependent
reductions). Randomness enters only through precomputed arrays indexed by
pixel, so same-color pixel updates commute regardless of execution order.

Python-facing modules wrap these kernels; the math lives here exactly once.
"""

import math

import numpy as np
from numba import njit

INVALID = np.inf

# Ray-plane denominators below this are treated as parallel (see geometry).
_DEGEN = 1e-12
_MIN_Z = 1e-9


@njit(cache=True, nogil=True)
def bilinear(img, x, y):
    """Bilinear sample of a 2D array at (x, y); caller guarantees bounds."""
    h, w = img.shape
    x0 = int(math.floor(x))
    y0 = int(math.floor(y))
    if x0 > w - 2:
        x0 = w - 2
    if y0 > h - 2:
        y0 = h - 2
    if x0 < 0:
        x0 = 0
    if y0 < 0:
        y0 = 0
    fx = x - x0
    fy = y - y0
    v00 = img[y0, x0]
    v01 = img[y0, x0 + 1]
    v10 = img[y0 + 1, x0]
    v11 = img[y0 + 1, x0 + 1]
    return (
        v00 * (1.0 - fx) * (1.0 - fy)
        + v01 * fx * (1.0 - fy)
        + v10 * (1.0 - fx) * fy
        + v11 * fx * fy
    )


@njit(cache=True, nogil=True)
def face_camera(n, ray):
    """Force n to satisfy n . ray < 0 (camera-facing); modifies n in place."""
    rn = math.sqrt(ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2])
    dx = ray[0] / rn
    dy = ray[1] / rn
    dz = ray[2] / rn
    nd = n[0] * dx + n[1] * dy + n[2] * dz
    if nd > 0.0:
        n[0] -= 2.0 * nd * dx
        n[1] -= 2.0 * nd * dy
        n[2] -= 2.0 * nd * dz
        nd = -nd
    if nd > -1e-6:
        # grazing normal: nudge toward the camera and renormalize
        n[0] -= 0.01 * dx
        n[1] -= 0.01 * dy
        n[2] -= 0.01 * dz
        norm = math.sqrt(n[0] * n[0] + n[1] * n[1] + n[2] * n[2])
        n[0] /= norm
        n[1] /= norm
        n[2] /= norm


@njit(cache=True, nogil=True)
def hemisphere_normal(u1, u2, ray, out):
    """Uniform unit normal on the hemisphere facing the camera along `ray`."""
    z = 2.0 * u1 - 1.0
    phi = 2.0 * math.pi * u2
    s = math.sqrt(max(0.0, 1.0 - z * z))
    out[0] = s * math.cos(phi)
    out[1] = s * math.sin(phi)
    out[2] = z
    rn = math.sqrt(ray[0] * ray[0] + ray[1] * ray[1] + ray[2] * ray[2])
    nd = (out[0] * ray[0] + out[1] * ray[1] + out[2] * ray[2]) / rn
    if nd > 0.0:
        out[0] = -out[0]
        out[1] = -out[1]
        out[2] = -out[2]
    face_camera(out, ray)


@njit(cache=True, nogil=True)
def rotate_axis_angle(n, axis, angle, out):
    """Rodrigues rotation of n about a unit axis; result renormalized."""
    c = math.cos(angle)
    s = math.sin(angle)
    kdn = axis[0] * n[0] + axis[1] * n[1] + axis[2] * n[2]
    cx = axis[1] * n[2] - axis[2] * n[1]
    cy = axis[2] * n[0] - axis[0] * n[2]
    cz = axis[0] * n[1] - axis[1] * n[0]
    out[0] = n[0] * c + cx * s + axis[0] * kdn * (1.0 - c)
    out[1] = n[1] * c + cy * s + axis[1] * kdn * (1.0 - c)
    out[2] = n[2] * c + cz * s + axis[2] * kdn * (1.0 - c)
    norm = math.sqrt(out[0] * out[0] + out[1] * out[1] + out[2] * out[2])
    out[0] /= norm
    out[1] /= norm
    out[2] /= norm


@njit(cache=True, nogil=True)
def perturb_candidates(z, n, ray, eps, zmin, zmax, rand, out_z, out_n):
    """Fill the 8 perturbation candidates for one pixel.

    Depth/normal pools are {current, perturbed, random}; the cross product
    minus the (current, current) pair gives 8 candidates, in row-major pool
    order. `rand` holds 7 uniforms in [0, 1).
    """
    z_pert = z * (1.0 + (2.0 * rand[0] - 1.0) * eps)
    if z_pert < zmin:
        z_pert = zmin
    if z_pert > zmax:
        z_pert = zmax

    axis = np.empty(3)
    az = 2.0 * rand[1] - 1.0
    aphi = 2.0 * math.pi * rand[2]
    s = math.sqrt(max(0.0, 1.0 - az * az))
    axis[0] = s * math.cos(aphi)
    axis[1] = s * math.sin(aphi)
    axis[2] = az
    n_pert = np.empty(3)
    rotate_axis_angle(n, axis, rand[3] * eps * 0.5 * math.pi, n_pert)
    face_camera(n_pert, ray)

    z_rand = zmin + rand[4] * (zmax - zmin)
    n_rand = np.empty(3)
    hemisphere_normal(rand[5], rand[6], ray, n_rand)

    depths = (z, z_pert, z_rand)
    idx = 0
    for di in range(3):
        for ni in range(3):
            if di == 0 and ni == 0:
                continue
            out_z[idx] = depths[di]
            if ni == 0:
                out_n[idx, 0] = n[0]
                out_n[idx, 1] = n[1]
                out_n[idx, 2] = n[2]
            elif ni == 1:
                out_n[idx, 0] = n_pert[0]
                out_n[idx, 1] = n_pert[1]
                out_n[idx, 2] = n_pert[2]
            else:
                out_n[idx, 0] = n_rand[0]
                out_n[idx, 1] = n_rand[1]
                out_n[idx, 2] = n_rand[2]
            idx += 1
    return idx


@njit(cache=True, nogil=True)
def ncc_cost(
    x,
    y,
    z,
    nx,
    ny,
    nz,
    ref_gray,
    ref_rgb,
    weights,
    use_weights,
    rfx,
    rfy,
    rcx,
    rcy,
    src_gray,
    sfx,
    sfy,
    scx,
    scy,
    M,
    tv,
    offsets,
    spatial_w,
    inv_two_sigma_c2,
):
    """Bilateral-weighted NCC matching cost for one pixel and one source.

    Returns 1 - NCC in [0, 2], or INVALID when more than half of the patch
    cannot be matched or either patch is (weighted-)textureless.
    """
    h, w = ref_gray.shape
    sh, sw = src_gray.shape
    dcx = (x - rcx) / rfx
    dcy = (y - rcy) / rfy
    ndc = nx * dcx + ny * dcy + nz
    if abs(ndc) < _DEGEN:
        return INVALID
    rho = ndc * z

    # H = K_src (M + t n^T / rho) K_ref^-1, fully unrolled
    a00 = M[0, 0] + tv[0] * nx / rho
    a01 = M[0, 1] + tv[0] * ny / rho
    a02 = M[0, 2] + tv[0] * nz / rho
    a10 = M[1, 0] + tv[1] * nx / rho
    a11 = M[1, 1] + tv[1] * ny / rho
    a12 = M[1, 2] + tv[1] * nz / rho
    a20 = M[2, 0] + tv[2] * nx / rho
    a21 = M[2, 1] + tv[2] * ny / rho
    a22 = M[2, 2] + tv[2] * nz / rho

    b00 = a00 / rfx
    b01 = a01 / rfy
    b02 = -a00 * rcx / rfx - a01 * rcy / rfy + a02
    b10 = a10 / rfx
    b11 = a11 / rfy
    b12 = -a10 * rcx / rfx - a11 * rcy / rfy + a12
    b20 = a20 / rfx
    b21 = a21 / rfy
    b22 = -a20 * rcx / rfx - a21 * rcy / rfy + a22

    h00 = sfx * b00 + scx * b20
    h01 = sfx * b01 + scx * b21
    h02 = sfx * b02 + scx * b22
    h10 = sfy * b10 + scy * b20
    h11 = sfy * b11 + scy * b21
    h12 = sfy * b12 + scy * b22

    n_patch = offsets.shape[0]
    r0 = ref_rgb[y, x, 0]
    r1 = ref_rgb[y, x, 1]
    r2 = ref_rgb[y, x, 2]

    sw_sum = 0.0
    swf = 0.0
    swg = 0.0
    swff = 0.0
    swgg = 0.0
    swfg = 0.0
    n_valid = 0

    for p in range(n_patch):
        qx = x + offsets[p, 0]
        qy = y + offsets[p, 1]
        if qx < 0 or qx >= w or qy < 0 or qy >= h:
            continue
        denom = nx * (qx - rcx) / rfx + ny * (qy - rcy) / rfy + nz
        if abs(denom) < _DEGEN:
            continue
        zq = rho / denom
        if zq <= 0.0:
            continue
        hw = b20 * qx + b21 * qy + b22
        zs = zq * hw
        if zs <= _MIN_Z:
            continue
        sx = (h00 * qx + h01 * qy + h02) / hw
        sy = (h10 * qx + h11 * qy + h12) / hw
        if sx < 0.0 or sx > sw - 1.0 or sy < 0.0 or sy > sh - 1.0:
            continue
        f = ref_gray[qy, qx]
        g = bilinear(src_gray, sx, sy)
        if use_weights:
            wgt = weights[y, x, p]
        else:
            d0 = ref_rgb[qy, qx, 0] - r0
            d1 = ref_rgb[qy, qx, 1] - r1
            d2 = ref_rgb[qy, qx, 2] - r2
            dc2 = (d0 * d0 + d1 * d1 + d2 * d2) / 3.0
            wgt = math.exp(-dc2 * inv_two_sigma_c2) * spatial_w[p]
        n_valid += 1
        sw_sum += wgt
        swf += wgt * f
        swg += wgt * g
        swff += wgt * f * f
        swgg += wgt * g * g
        swfg += wgt * f * g

    if 2 * n_valid < n_patch:
        return INVALID
    if sw_sum <= 0.0:
        return INVALID
    mf = swf / sw_sum
    mg = swg / sw_sum
    var_f = swff / sw_sum - mf * mf
    var_g = swgg / sw_sum - mg * mg
    if var_f < 1e-10 or var_g < 1e-10:
        return INVALID
    cov = swfg / sw_sum - mf * mg
    ncc = cov / math.sqrt(var_f * var_g)
    if ncc > 1.0:
        ncc = 1.0
    if ncc < -1.0:
        ncc = -1.0
    return 1.0 - ncc


@njit(cache=True, nogil=True)
def geometric_error(
    x,
    y,
    z,
    rfx,
    rfy,
    rcx,
    rcy,
    sfx,
    sfy,
    scx,
    scy,
    M,
    tv,
    prior,
    prior_valid,
    cap,
):
    """Forward-backward reprojection distance against a source prior depth map.

    Returns min(distance, cap); lookup failures (out of view, behind the
    camera, invalid prior) count as cap.
    """
    sh, sw = prior.shape
    px = (x - rcx) / rfx * z
    py = (y - rcy) / rfy * z
    pz = z
    xs0 = M[0, 0] * px + M[0, 1] * py + M[0, 2] * pz + tv[0]
    xs1 = M[1, 0] * px + M[1, 1] * py + M[1, 2] * pz + tv[1]
    xs2 = M[2, 0] * px + M[2, 1] * py + M[2, 2] * pz + tv[2]
    if xs2 <= _MIN_Z:
        return cap
    qx = sfx * xs0 / xs2 + scx
    qy = sfy * xs1 / xs2 + scy
    if qx < 0.0 or qx > sw - 1.0 or qy < 0.0 or qy > sh - 1.0:
        return cap
    x0 = int(math.floor(qx))
    y0 = int(math.floor(qy))
    if x0 > sw - 2:
        x0 = sw - 2
    if y0 > sh - 2:
        y0 = sh - 2
    if (
        prior_valid[y0, x0] == 0
        or prior_valid[y0, x0 + 1] == 0
        or prior_valid[y0 + 1, x0] == 0
        or prior_valid[y0 + 1, x0 + 1] == 0
    ):
        return cap
    z_prior = bilinear(prior, qx, qy)
    if z_prior <= 0.0:
        return cap
    bx = (qx - scx) / sfx * z_prior
    by = (qy - scy) / sfy * z_prior
    bz = z_prior
    # back to the reference frame: M is a rotation, inverse = transpose
    dx0 = bx - tv[0]
    dx1 = by - tv[1]
    dx2 = bz - tv[2]
    rx = M[0, 0] * dx0 + M[1, 0] * dx1 + M[2, 0] * dx2
    ry = M[0, 1] * dx0 + M[1, 1] * dx1 + M[2, 1] * dx2
    rz = M[0, 2] * dx0 + M[1, 2] * dx1 + M[2, 2] * dx2
    if rz <= _MIN_Z:
        return cap
    ux = rfx * rx / rz + rcx
    uy = rfy * ry / rz + rcy
    err = math.sqrt((ux - x) * (ux - x) + (uy - y) * (uy - y))
    if err > cap:
        return cap
    return err


@njit(cache=True, nogil=True)
def aggregate_costs(costs, k):
    """Mean of the k smallest finite entries; INVALID when none are finite."""
    s = costs.shape[0]
    used = np.zeros(s, dtype=np.uint8)
    total = 0.0
    cnt = 0
    limit = k if k < s else s
    for _ in range(limit):
        best = INVALID
        bi = -1
        for i in range(s):
            if used[i] == 0 and costs[i] < best:
                best = costs[i]
                bi = i
        if bi < 0:
            break
        used[bi] = 1
        total += best
        cnt += 1
    if cnt == 0:
        return INVALID
    return total / cnt


@njit(cache=True, nogil=True)
def multi_view_cost(
    x,
    y,
    z,
    nx,
    ny,
    nz,
    ref_gray,
    ref_rgb,
    weights,
    use_weights,
    ref_k,
    src_grays,
    src_k,
    M_all,
    t_all,
    offsets,
    spatial_w,
    inv_two_sigma_c2,
    k_select,
    use_geom,
    priors,
    priors_valid,
    geom_weight,
    geom_cap,
):
    """Aggregate matching cost over source views for one hypothesis.

    Mean of the k_select best per-source photometric costs, plus (when source
    priors are given) geom_weight times the mean capped forward-backward
    reprojection error over the same selected sources. INVALID when no source
    yields a valid photometric cost.
    """
    n_src = len(src_grays)
    costs = np.empty(n_src)
    for s in range(n_src):
        costs[s] = ncc_cost(
            x,
            y,
            z,
            nx,
            ny,
            nz,
            ref_gray,
            ref_rgb,
            weights,
            use_weights,
            ref_k[0],
            ref_k[1],
            ref_k[2],
            ref_k[3],
            src_grays[s],
            src_k[s, 0],
            src_k[s, 1],
            src_k[s, 2],
            src_k[s, 3],
            M_all[s],
            t_all[s],
            offsets,
            spatial_w,
            inv_two_sigma_c2,
        )

    used = np.zeros(n_src, dtype=np.uint8)
    total = 0.0
    geo_total = 0.0
    cnt = 0
    limit = k_select if k_select < n_src else n_src
    for _ in range(limit):
        best = INVALID
        bi = -1
        for s in range(n_src):
            if used[s] == 0 and costs[s] < best:
                best = costs[s]
                bi = s
        if bi < 0:
            break
        used[bi] = 1
        total += best
        cnt += 1
        if use_geom:
            geo_total += geometric_error(
                x,
                y,
                z,
                ref_k[0],
                ref_k[1],
                ref_k[2],
                ref_k[3],
                src_k[bi, 0],
                src_k[bi, 1],
                src_k[bi, 2],
                src_k[bi, 3],
                M_all[bi],
                t_all[bi],
                priors[bi],
                priors_valid[bi],
                geom_cap,
            )
    if cnt == 0:
        return INVALID
    result = total / cnt
    if use_geom:
        result += geom_weight * geo_total / cnt
    return result


@njit(cache=True, nogil=True)
def compute_costs(
    depth,
    normal,
    cost_out,
    ref_gray,
    ref_rgb,
    weights,
    use_weights,
    ref_k,
    src_grays,
    src_k,
    M_all,
    t_all,
    offsets,
    spatial_w,
    inv_two_sigma_c2,
    k_select,
    use_geom,
    priors,
    priors_valid,
    geom_weight,
    geom_cap,
):
    """Evaluate the multi-view cost of every pixel's current hypothesis."""
    h, w = depth.shape
    for y in range(h):
        for x in range(w):
            cost_out[y, x] = multi_view_cost(
                x,
                y,
                depth[y, x],
                normal[y, x, 0],
                normal[y, x, 1],
                normal[y, x, 2],
                ref_gray,
                ref_rgb,
                weights,
                use_weights,
                ref_k,
                src_grays,
                src_k,
                M_all,
                t_all,
                offsets,
                spatial_w,
                inv_two_sigma_c2,
                k_select,
                use_geom,
                priors,
                priors_valid,
                geom_weight,
                geom_cap,
            )


@njit(cache=True, nogil=True)
def update_pixel(
    x,
    y,
    eps,
    depth,
    normal,
    cost,
    rand,
    cb_offsets,
    zmin,
    zmax,
    k_select,
    k_update,
    ref_gray,
    ref_rgb,
    weights,
    use_weights,
    ref_k,
    src_grays,
    src_k,
    M_all,
    t_all,
    offsets,
    spatial_w,
    inv_two_sigma_c2,
    use_geom,
    priors,
    priors_valid,
    geom_weight,
    geom_cap,
):
    """One PatchMatch pixel update; reads only frozen opposite-color samples.

    Returns (new_depth, nx, ny, nz, new_cost) without writing the state, so
    callers control in-place vs. out-of-place commits.
    """
    h, w = depth.shape
    ray = np.empty(3)
    ray[0] = (x - ref_k[2]) / ref_k[0]
    ray[1] = (y - ref_k[3]) / ref_k[1]
    ray[2] = 1.0
    ndc_x = ray[0]
    ndc_y = ray[1]

    max_cand = k_update
    cand_z = np.empty(max_cand)
    cand_n = np.empty((max_cand, 3))
    n_cand = 0

    # plane-propagated samples, ranked by their stored costs (best k_select)
    n_samples = cb_offsets.shape[0]
    samp_cost = np.empty(n_samples)
    samp_z = np.empty(n_samples)
    samp_n = np.empty((n_samples, 3))
    n_ok = 0
    for s in range(n_samples):
        sx = x + cb_offsets[s, 0]
        sy = y + cb_offsets[s, 1]
        if sx < 0 or sx >= w or sy < 0 or sy >= h:
            continue
        nzx = normal[sy, sx, 0]
        nzy = normal[sy, sx, 1]
        nzz = normal[sy, sx, 2]
        # plane at the sample location intersected with this pixel's ray
        dsx = (sx - ref_k[2]) / ref_k[0]
        dsy = (sy - ref_k[3]) / ref_k[1]
        rho = (nzx * dsx + nzy * dsy + nzz) * depth[sy, sx]
        denom = nzx * ndc_x + nzy * ndc_y + nzz
        if abs(denom) < _DEGEN:
            continue
        zp = rho / denom
        if zp <= 0.0:
            continue
        samp_cost[n_ok] = cost[sy, sx]
        samp_z[n_ok] = zp
        samp_n[n_ok, 0] = nzx
        samp_n[n_ok, 1] = nzy
        samp_n[n_ok, 2] = nzz
        n_ok += 1

    used = np.zeros(n_ok, dtype=np.uint8)
    keep = k_select if k_select < n_ok else n_ok
    for _ in range(keep):
        best = INVALID
        bi = -1
        for s in range(n_ok):
            if used[s] == 0 and samp_cost[s] < best:
                best = samp_cost[s]
                bi = s
        if bi < 0:
            break
        used[bi] = 1
        cand_z[n_cand] = samp_z[bi]
        cand_n[n_cand, 0] = samp_n[bi, 0]
        cand_n[n_cand, 1] = samp_n[bi, 1]
        cand_n[n_cand, 2] = samp_n[bi, 2]
        n_cand += 1

    # perturbation candidates fill the remaining slots
    pert_z = np.empty(8)
    pert_n = np.empty((8, 3))
    cur_n = np.empty(3)
    cur_n[0] = normal[y, x, 0]
    cur_n[1] = normal[y, x, 1]
    cur_n[2] = normal[y, x, 2]
    n_pert = perturb_candidates(
        depth[y, x], cur_n, ray, eps, zmin, zmax, rand[y, x], pert_z, pert_n
    )
    for p in range(n_pert):
        if n_cand >= k_update:
            break
        cand_z[n_cand] = pert_z[p]
        cand_n[n_cand, 0] = pert_n[p, 0]
        cand_n[n_cand, 1] = pert_n[p, 1]
        cand_n[n_cand, 2] = pert_n[p, 2]
        n_cand += 1

    best_z = depth[y, x]
    best_nx = cur_n[0]
    best_ny = cur_n[1]
    best_nz = cur_n[2]
    best_cost = cost[y, x]

    for cidx in range(n_cand):
        cz = cand_z[cidx]
        cnx = cand_n[cidx, 0]
        cny = cand_n[cidx, 1]
        cnz = cand_n[cidx, 2]
        # skip exact duplicates of the incumbent or of earlier candidates
        if cz == depth[y, x] and cnx == cur_n[0] and cny == cur_n[1] and cnz == cur_n[2]:
            continue
        dup = False
        for j in range(cidx):
            if (
                cz == cand_z[j]
                and cnx == cand_n[j, 0]
                and cny == cand_n[j, 1]
                and cnz == cand_n[j, 2]
            ):
                dup = True
                break
        if dup:
            continue
        c = multi_view_cost(
            x,
            y,
            cz,
            cnx,
            cny,
            cnz,
            ref_gray,
            ref_rgb,
            weights,
            use_weights,
            ref_k,
            src_grays,
            src_k,
            M_all,
            t_all,
            offsets,
            spatial_w,
            inv_two_sigma_c2,
            k_select,
            use_geom,
            priors,
            priors_valid,
            geom_weight,
            geom_cap,
        )
        if c < best_cost:
            best_cost = c
            best_z = cz
            best_nx = cnx
            best_ny = cny
            best_nz = cnz

    return best_z, best_nx, best_ny, best_nz, best_cost


@njit(cache=True, nogil=True)
def run_color(
    color,
    eps,
    depth,
    normal,
    cost,
    rand,
    cb_offsets,
    zmin,
    zmax,
    k_select,
    k_update,
    ref_gray,
    ref_rgb,
    weights,
    use_weights,
    ref_k,
    src_grays,
    src_k,
    M_all,
    t_all,
    offsets,
    spatial_w,
    inv_two_sigma_c2,
    use_geom,
    priors,
    priors_valid,
    geom_weight,
    geom_cap,
):
    """Update all pixels with (x + y) % 2 == color, in place.

    Samples come exclusively from the opposite color, so in-place commits are
    observationally identical to a two-buffer update.
    """
    h, w = depth.shape
    for y in range(h):
        x0 = (color - (y % 2)) % 2
        for x in range(x0, w, 2):
            z, nx, ny, nz, c = update_pixel(
                x,
                y,
                eps,
                depth,
                normal,
                cost,
                rand,
                cb_offsets,
                zmin,
                zmax,
                k_select,
                k_update,
                ref_gray,
                ref_rgb,
                weights,
                use_weights,
                ref_k,
                src_grays,
                src_k,
                M_all,
                t_all,
                offsets,
                spatial_w,
                inv_two_sigma_c2,
                use_geom,
                priors,
                priors_valid,
                geom_weight,
                geom_cap,
            )
            depth[y, x] = z
            normal[y, x, 0] = nx
            normal[y, x, 1] = ny
            normal[y, x, 2] = nz
            cost[y, x] = c


@njit(cache=True, nogil=True)
def fuse_views(
    depths,
    valids,
    normals,
    images,
    K_all,
    R_all,
    t_all,
    max_reproj,
    rel_depth_tol,
    cos_max_angle,
    min_support,
    out_pos,
    out_normal,
    out_color,
    out_support,
):
    """Greedy multi-view fusion in fixed (view, row-major) traversal order.

    Emits averaged points for pixel groups passing the consistency checks;
    every pixel joins at most one point. Returns the emitted count.
    """
    n_views = len(depths)
    consumed = []
    for v in range(n_views):
        consumed.append(np.zeros(depths[v].shape, dtype=np.uint8))

    sup_view = np.empty(n_views, dtype=np.int64)
    sup_x = np.empty(n_views, dtype=np.int64)
    sup_y = np.empty(n_views, dtype=np.int64)
    count = 0

    for v in range(n_views):
        dv = depths[v]
        h, w = dv.shape
        fx = K_all[v, 0]
        fy = K_all[v, 1]
        cx = K_all[v, 2]
        cy = K_all[v, 3]
        for y in range(h):
            for x in range(w):
                if valids[v][y, x] == 0 or consumed[v][y, x] == 1:
                    continue
                z = dv[y, x]
                # world point and world normal of the reference pixel
                pcx = (x - cx) / fx * z
                pcy = (y - cy) / fy * z
                pcz = z
                wx = (
                    R_all[v, 0, 0] * (pcx - t_all[v, 0])
                    + R_all[v, 1, 0] * (pcy - t_all[v, 1])
                    + R_all[v, 2, 0] * (pcz - t_all[v, 2])
                )
                wy = (
                    R_all[v, 0, 1] * (pcx - t_all[v, 0])
                    + R_all[v, 1, 1] * (pcy - t_all[v, 1])
                    + R_all[v, 2, 1] * (pcz - t_all[v, 2])
                )
                wz = (
                    R_all[v, 0, 2] * (pcx - t_all[v, 0])
                    + R_all[v, 1, 2] * (pcy - t_all[v, 1])
                    + R_all[v, 2, 2] * (pcz - t_all[v, 2])
                )
                nwx = (
                    R_all[v, 0, 0] * normals[v][y, x, 0]
                    + R_all[v, 1, 0] * normals[v][y, x, 1]
                    + R_all[v, 2, 0] * normals[v][y, x, 2]
                )
                nwy = (
                    R_all[v, 0, 1] * normals[v][y, x, 0]
                    + R_all[v, 1, 1] * normals[v][y, x, 1]
                    + R_all[v, 2, 1] * normals[v][y, x, 2]
                )
                nwz = (
                    R_all[v, 0, 2] * normals[v][y, x, 0]
                    + R_all[v, 1, 2] * normals[v][y, x, 1]
                    + R_all[v, 2, 2] * normals[v][y, x, 2]
                )

                n_sup = 0
                sum_px = wx
                sum_py = wy
                sum_pz = wz
                sum_nx = nwx
                sum_ny = nwy
                sum_nz = nwz
                sum_r = images[v][y, x, 0]
                sum_g = images[v][y, x, 1]
                sum_b = images[v][y, x, 2]

                for s in range(n_views):
                    if s == v:
                        continue
                    ds = depths[s]
                    sh2, sw2 = ds.shape
                    sfx = K_all[s, 0]
                    sfy = K_all[s, 1]
                    scx = K_all[s, 2]
                    scy = K_all[s, 3]
                    # project the world point into the source view
                    sx_c = (
                        R_all[s, 0, 0] * wx + R_all[s, 0, 1] * wy + R_all[s, 0, 2] * wz + t_all[s, 0]
                    )
                    sy_c = (
                        R_all[s, 1, 0] * wx + R_all[s, 1, 1] * wy + R_all[s, 1, 2] * wz + t_all[s, 1]
                    )
                    sz_c = (
                        R_all[s, 2, 0] * wx + R_all[s, 2, 1] * wy + R_all[s, 2, 2] * wz + t_all[s, 2]
                    )
                    if sz_c <= _MIN_Z:
                        continue
                    qx = sfx * sx_c / sz_c + scx
                    qy = sfy * sy_c / sz_c + scy
                    qxi = int(math.floor(qx + 0.5))
                    qyi = int(math.floor(qy + 0.5))
                    if qxi < 0 or qxi >= sw2 or qyi < 0 or qyi >= sh2:
                        continue
                    if valids[s][qyi, qxi] == 0 or consumed[s][qyi, qxi] == 1:
                        continue
                    z_look = ds[qyi, qxi]
                    if abs(z_look - sz_c) / sz_c > rel_depth_tol:
                        continue
                    # forward-backward reprojection check
                    bx = (qxi - scx) / sfx * z_look
                    by = (qyi - scy) / sfy * z_look
                    bz = z_look
                    bwx = (
                        R_all[s, 0, 0] * (bx - t_all[s, 0])
                        + R_all[s, 1, 0] * (by - t_all[s, 1])
                        + R_all[s, 2, 0] * (bz - t_all[s, 2])
                    )
                    bwy = (
                        R_all[s, 0, 1] * (bx - t_all[s, 0])
                        + R_all[s, 1, 1] * (by - t_all[s, 1])
                        + R_all[s, 2, 1] * (bz - t_all[s, 2])
                    )
                    bwz = (
                        R_all[s, 0, 2] * (bx - t_all[s, 0])
                        + R_all[s, 1, 2] * (by - t_all[s, 1])
                        + R_all[s, 2, 2] * (bz - t_all[s, 2])
                    )
                    rx_c = (
                        R_all[v, 0, 0] * bwx + R_all[v, 0, 1] * bwy + R_all[v, 0, 2] * bwz + t_all[v, 0]
                    )
                    ry_c = (
                        R_all[v, 1, 0] * bwx + R_all[v, 1, 1] * bwy + R_all[v, 1, 2] * bwz + t_all[v, 1]
                    )
                    rz_c = (
                        R_all[v, 2, 0] * bwx + R_all[v, 2, 1] * bwy + R_all[v, 2, 2] * bwz + t_all[v, 2]
                    )
                    if rz_c <= _MIN_Z:
                        continue
                    ux = fx * rx_c / rz_c + cx
                    uy = fy * ry_c / rz_c + cy
                    if math.sqrt((ux - x) ** 2 + (uy - y) ** 2) > max_reproj:
                        continue
                    # normal consistency in the world frame
                    snx = (
                        R_all[s, 0, 0] * normals[s][qyi, qxi, 0]
                        + R_all[s, 1, 0] * normals[s][qyi, qxi, 1]
                        + R_all[s, 2, 0] * normals[s][qyi, qxi, 2]
                    )
                    sny = (
                        R_all[s, 0, 1] * normals[s][qyi, qxi, 0]
                        + R_all[s, 1, 1] * normals[s][qyi, qxi, 1]
                        + R_all[s, 2, 1] * normals[s][qyi, qxi, 2]
                    )
                    snz = (
                        R_all[s, 0, 2] * normals[s][qyi, qxi, 0]
                        + R_all[s, 1, 2] * normals[s][qyi, qxi, 1]
                        + R_all[s, 2, 2] * normals[s][qyi, qxi, 2]
                    )
                    if nwx * snx + nwy * sny + nwz * snz < cos_max_angle:
                        continue
                    sup_view[n_sup] = s
                    sup_x[n_sup] = qxi
                    sup_y[n_sup] = qyi
                    n_sup += 1
                    sum_px += bwx
                    sum_py += bwy
                    sum_pz += bwz
                    sum_nx += snx
                    sum_ny += sny
                    sum_nz += snz
                    sum_r += images[s][qyi, qxi, 0]
                    sum_g += images[s][qyi, qxi, 1]
                    sum_b += images[s][qyi, qxi, 2]

                if n_sup + 1 < min_support:
                    continue
                m = float(n_sup + 1)
                out_pos[count, 0] = sum_px / m
                out_pos[count, 1] = sum_py / m
                out_pos[count, 2] = sum_pz / m
                nn = math.sqrt(sum_nx * sum_nx + sum_ny * sum_ny + sum_nz * sum_nz)
                if nn < 1e-12:
                    out_normal[count, 0] = nwx
                    out_normal[count, 1] = nwy
                    out_normal[count, 2] = nwz
                else:
                    out_normal[count, 0] = sum_nx / nn
                    out_normal[count, 1] = sum_ny / nn
                    out_normal[count, 2] = sum_nz / nn
                out_color[count, 0] = sum_r / m
                out_color[count, 1] = sum_g / m
                out_color[count, 2] = sum_b / m
                out_support[count] = n_sup + 1
                consumed[v][y, x] = 1
                for k in range(n_sup):
                    consumed[sup_view[k]][sup_y[k], sup_x[k]] = 1
                count += 1
    return count
