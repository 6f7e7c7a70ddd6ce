"""Shared instance generators and finite-difference oracles for the tests."""
import numpy as np

from contactforge.qp import QpProblem, differentiate, solve, solve_batch

PARAMS = ("Q", "q", "A", "b", "G", "h")


def random_strict_qp(rng, n=4, me=1, mi=5, margin=0.1):
    """QP built backwards from a chosen primal-dual point with strict complementarity."""
    M = rng.normal(size=(n, n))
    Q = M @ M.T + 0.5 * np.eye(n)
    A = rng.normal(size=(me, n))
    G = rng.normal(size=(mi, n))
    z = rng.normal(size=n)
    n_act = rng.integers(0, min(mi, n - me) + 1)
    active = rng.permutation(mi)[:n_act]
    lam = np.zeros(mi)
    slack = rng.uniform(margin, 1.0, mi)
    lam[active] = rng.uniform(margin, 1.0, n_act)
    slack[active] = 0.0
    nu = rng.normal(size=me)
    h = G @ z + slack
    b = A @ z
    q = -(Q @ z + A.T @ nu + G.T @ lam)
    return QpProblem(Q, q, A, b, G, h)


def perturbed(problem, name, idx, delta):
    arrays = {k: getattr(problem, k).copy() for k in PARAMS}
    arrays[name][idx] += delta
    return QpProblem(**arrays)


def fd_gradients(problem, c, step=1e-6):
    """Central differences of c . z*(params) w.r.t. every parameter entry."""
    entries = []
    probs = []
    for name in PARAMS:
        arr = getattr(problem, name)
        for idx in np.ndindex(arr.shape):
            entries.append((name, idx))
            probs.append(perturbed(problem, name, idx, step))
            probs.append(perturbed(problem, name, idx, -step))
    sols = solve_batch(probs)
    out = {k: np.zeros_like(getattr(problem, k)) for k in PARAMS}
    for i, (name, idx) in enumerate(entries):
        zp, zm = sols[2 * i].z, sols[2 * i + 1].z
        out[name][idx] = c @ (zp - zm) / (2 * step)
    return out


def analytic_gradients(problem, c):
    sol = solve(problem)
    sens = differentiate(problem, sol, c)
    g = {k: getattr(sens, k) for k in PARAMS}
    # Q is symmetrized on construction, so a perturbation of entry (i, j) acts
    # as half of E_ij + E_ji; the symmetric gradient already accounts for it
    return g


def block_rel_errors(fd, an):
    """Per-parameter-block relative error.

    Blocks whose gradient is negligible (below 1e-6 of the whole gradient, e.g.
    Q and q when the active set pins z) are measured against the overall norm,
    since central differences only resolve them down to round-off.
    """
    total = np.sqrt(sum(np.sum(np.asarray(an[k]) ** 2) for k in PARAMS))
    errs = {}
    for k in PARAMS:
        a, f = np.ravel(an[k]), np.ravel(fd[k])
        scale = max(np.linalg.norm(a), np.linalg.norm(f))
        if scale < 1e-6 * total:
            scale = max(total, 1e-12)
        errs[k] = float(np.linalg.norm(a - f) / scale)
    return errs


# random contact scenes

def _scene_module():
    from contactforge import contact, geometry, scene
    return contact, geometry, scene


def place_grasped_on_edge(rng, go_shape, eo_shape, x_eo, edge, s_frac, ground_y=0.0, tries=200):
    """Put a grasped-object vertex on an extrinsic edge with clearance elsewhere."""
    contact, geometry, _ = _scene_module()
    a, b = eo_shape.edge(edge)
    p_body = a + s_frac * (b - a)
    p = x_eo.transform_point(p_body)
    for _ in range(tries):
        v = int(rng.integers(len(go_shape)))
        th = rng.uniform(-np.pi, np.pi)
        pose = geometry.Pose2(*(p - geometry.rot(th) @ go_shape.vertices[v]), th)
        if go_shape.world_vertices(pose)[:, 1].min() < ground_y + 2e-3:
            continue
        gap = geometry.signed_gap(go_shape, pose, eo_shape, x_eo, exclude=[("a", v)])
        if gap > -2e-3:
            continue
        try:
            cp = geometry.detect_object_contact(go_shape, pose, eo_shape, x_eo)
        except Exception:
            continue
        if cp is not None and cp.vertex_owner == "a" and cp.vertex == v:
            return pose, cp
    return None


def random_force(rng, mode, mu, scale=4.0):
    fn = rng.uniform(0.2, 1.0) * scale
    if mode == "stick":
        return np.array([rng.uniform(-0.95, 0.95) * mu * fn, fn])
    if mode == "slide+":
        return np.array([-mu * fn, fn])
    if mode == "slide-":
        return np.array([mu * fn, fn])
    return np.zeros(2)


def random_p1_instance(rng):
    """(state, contacts, modes, w_ext, bodies) for a resting extrinsic object touched by the tool."""
    contact, geometry, scene = _scene_module()
    eo_name = rng.choice(["hbox", "pentagon", "heptagon", "triangle", "tall_box", "z"])
    eo_shape = scene.load_shape(eo_name)
    go_shape = scene.load_shape("tall_box")
    eo = contact.RigidBody(eo_shape, geometry.BodyParams(rng.uniform(0.1, 1.0), tuple(eo_shape.centroid())))
    go = contact.RigidBody(go_shape, geometry.BodyParams(rng.uniform(0.05, 0.3)))
    x_eo = geometry.Pose2(rng.uniform(-0.1, 0.1), -eo_shape.vertices[:, 1].min(), 0.0)
    while True:
        edge = int(rng.integers(len(eo_shape)))
        if eo_shape.edge_normal(edge)[1] > -0.5 and eo_shape.edge_length(edge) > 0.01:
            placed = place_grasped_on_edge(rng, go_shape, eo_shape, x_eo, edge, rng.uniform(0.15, 0.85))
            if placed is not None:
                break
    x_go, cp = placed
    mu_g, mu_o = rng.uniform(0.2, 0.9, 2)
    ground = geometry.detect_ground_contacts(eo_shape, x_eo)
    contacts = [contact.Contact(c, "eo", "ground", mu_g) for c in ground]
    contacts.append(contact.Contact(cp, "go", "eo", mu_o, role="object"))
    modes = [str(rng.choice(["stick", "stick", "slide+", "slide-", "sep"], p=[.35, .35, .1, .1, .1]))
             for _ in ground]
    modes.append(str(rng.choice(["stick", "slide+", "slide-", "sep"], p=[.5, .2, .2, .1])))
    f_obj = random_force(rng, modes[-1], mu_o)
    J = geometry.contact_jacobian(x_go, go.params, cp)
    g = np.array([0.0, -go.params.mass * go.params.gravity, 0.0])
    w_world = -(g + J.T @ f_obj)
    w_ext = contact.grasp_wrench_local(w_world, x_go, go.params)
    state = contact.SceneState(x_go, x_go, x_eo)
    return state, contacts, modes, geometry.Wrench2.from_array(w_ext), {"go": go, "eo": eo}


def feasible_p1_instances(seed, count):
    from contactforge.contact import solve_contact_forces
    rng = np.random.default_rng(seed)
    out = []
    while len(out) < count:
        inst = random_p1_instance(rng)
        forces, sol, prog = solve_contact_forces(*inst)
        if forces is not None:
            out.append((inst, forces, sol, prog))
    return out


def random_grasped_only_instance(rng):
    """Tool touching a fixed extrinsic object and possibly the ground."""
    contact, geometry, scene = _scene_module()
    eo_shape = scene.load_shape(rng.choice(["hbox", "pentagon", "heptagon"]))
    go_shape = scene.load_shape("tall_box")
    go = contact.RigidBody(go_shape, geometry.BodyParams(rng.uniform(0.05, 0.3)))
    eo = contact.RigidBody(eo_shape, geometry.BodyParams(0.5, tuple(eo_shape.centroid())))
    x_eo = geometry.Pose2(0.0, -eo_shape.vertices[:, 1].min(), 0.0)
    while True:
        edge = int(rng.integers(len(eo_shape)))
        if eo_shape.edge_normal(edge)[1] > -0.5:
            placed = place_grasped_on_edge(rng, go_shape, eo_shape, x_eo, edge, rng.uniform(0.15, 0.85))
            if placed is not None:
                break
    x_go, cp = placed
    contacts = [contact.Contact(cp, "go", "eo", rng.uniform(0.2, 0.9), role="object")]
    modes = [str(rng.choice(["stick", "slide+", "slide-"]))]
    fs = [random_force(rng, modes[0], contacts[0].mu)]
    if rng.uniform() < 0.5:
        # second contact: a tool vertex on the ground at some other location
        v = int(rng.integers(len(go_shape)))
        p = x_go.transform_point(go_shape.vertices[v])
        gcp = geometry.ContactPoint(np.array([p[0], p[1]]), np.array([0.0, 1.0]), go_shape.vertices[v].copy(),
                                    np.array([p[0], p[1]]), "a", v)
        contacts.append(contact.Contact(gcp, "go", "ground", rng.uniform(0.2, 0.9)))
        modes.append(str(rng.choice(["stick", "slide+", "slide-"])))
        fs.append(random_force(rng, modes[1], contacts[1].mu))
    g = np.array([0.0, -go.params.mass * go.params.gravity, 0.0])
    w_world = -g
    for c, f in zip(contacts, fs):
        w_world = w_world - geometry.contact_jacobian(x_go, go.params, c.cp).T @ f
    w_ext = contact.grasp_wrench_local(w_world, x_go, go.params)
    return contact.SceneState(x_go, x_go, x_eo), contacts, modes, geometry.Wrench2.from_array(w_ext), \
        {"go": go, "eo": eo}
