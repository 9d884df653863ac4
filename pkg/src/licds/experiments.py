"""Randomized verification suites and model-selection protocols."""

import numpy as np

from . import jets
from .core import (
    LicdsParams,
    check_l2_bound,
    check_l2_bound_two_path,
    check_l1_distances,
    rank_models,
)
from .integrate import BlowUpError
from .learn import fit_gp, l2_distance, make_dataset, train_mlp
from .systems import DynamicsFn, get_system

SMOOTH_TEST_SYSTEMS = ("tanh", "tanh_lin", "rational", "tanh_sin", "tanh_sin5", "pendulum")
L2_BOUND_SYSTEMS = ("tanh",)


def random_polynomial_field(dim, rng, degree=3, scale=1.0, name="poly") -> DynamicsFn:
    """Polynomial vector field with iid uniform(-scale, scale) coefficients."""
    exps = jets.graded_lex(dim, degree)
    E = np.array(exps, dtype=float)
    C = rng.uniform(-scale, scale, size=(dim, len(exps)))

    def fn(x):
        if isinstance(x, jets.Jet):
            terms = []
            for e in exps:
                t = 1.0
                for j, p in enumerate(e):
                    if p:
                        t = x[j] ** p * t
                terms.append(t)
            return C @ jets.stack(terms, x.space)
        return C @ np.prod(np.asarray(x, dtype=float) ** E, axis=1)

    return DynamicsFn(dim, fn, name, jet_ok=True)


def l2_bound_suite(n=100, seed=0, dt=0.01, eps_max=0.2, systems=L2_BOUND_SYSTEMS,
                   max_redraws=1000):
    """``n`` random instances (f, f + eps*g, x0, T); rows of the check results.

    Instances whose rollouts diverge are redrawn (the check needs finite
    trajectories); the number of redraws is reported in each row.
    """
    rng = np.random.default_rng(seed)
    rows, redraws = [], 0
    while len(rows) < n:
        name = systems[rng.integers(len(systems))]
        system = get_system(name)
        g = random_polynomial_field(system.dim, rng)
        eps = rng.uniform(0.0, eps_max)
        f_hat = system.dynamics + g.scaled(eps)
        x0 = rng.uniform(-2.0, 2.0, size=system.dim)
        T = float(rng.choice([1.0, 2.0]))
        try:
            lhs, rhs, holds = check_l2_bound(system.dynamics, f_hat, x0, T, dt)
            _, rhs2, holds2 = check_l2_bound_two_path(system.dynamics, f_hat, x0, T, dt)
        except BlowUpError:
            redraws += 1
            if redraws > max_redraws:
                raise
            continue
        rows.append({"system": name, "eps": eps, "T": T, "x0": x0.tolist(),
                     "lhs": lhs, "rhs": rhs, "holds": holds,
                     "rhs_two_sided": rhs2, "holds_two_sided": holds2, "redraws": redraws})
    return rows


def l1_distance_family(system="tanh", x0=None, T=2.0, dt=0.01, seed=0,
                    eps_values=(0.2, 0.1, 0.05, 0.025)):
    """Rows (eps, dyn_l1, state_l1, ratio) for f_hat = f + eps*g with one random g.

    ``ratio`` is None when the state distance is zero.
    """
    spec = get_system(system)
    x0 = spec.default_x0 if x0 is None else x0
    g = random_polynomial_field(spec.dim, np.random.default_rng(seed))
    rows = []
    for eps in eps_values:
        dyn, state = check_l1_distances(spec.dynamics, spec.dynamics + g.scaled(eps), x0, T, dt)
        rows.append({"eps": eps, "dyn_l1": dyn, "state_l1": state,
                     "ratio": dyn / state if state > 0 else None})
    return rows


def _data_box(data):
    return np.stack([data.inputs.min(axis=0), data.inputs.max(axis=0)], axis=1)


def model_selection_trial(seed, system="tanh", archs=([1], [10], [40]), use_gp=True,
                          n_traj=10, n_samples=100, dt=0.01, x0_box=(-3.0, 3.0), epochs=5000,
                          lr=1e-2, n_init=5, T=4.0, lam="balance", k_max=8, m_max=5):
    """Learn several models from one noisy dataset; score and measure each.

    Initial points for scoring are uniform in the box spanned by the
    training inputs, which is also where the reference distance to the true
    field is measured.
    """
    spec = get_system(system)
    data = make_dataset(spec, n_traj, n_samples, dt, seed, [list(x0_box)] * spec.dim)
    cands = []
    for arch in archs:
        model = train_mlp(data, arch, epochs=epochs, lr=lr, seed=seed)
        cands.append((f"nn{list(arch)}", model.as_dynamics(f"nn{list(arch)}")))
    if use_gp:
        cands.append(("gp", fit_gp(data).as_dynamics("gp")))
    box = _data_box(data)
    rng = np.random.default_rng([seed, 1])
    points = list(rng.uniform(box[:, 0], box[:, 1], size=(n_init, spec.dim)))
    ranking = rank_models(cands, points, LicdsParams(T, dt, lam, k_max, m_max))
    fields = dict(cands)
    distance = {n: l2_distance(spec.dynamics, fields[n], box) for n, _ in cands}
    best_score = ranking[0][0]
    best_distance = min(sorted(distance), key=distance.get)
    return {"seed": seed, "ranking": ranking, "distance": distance,
            "best_score": best_score, "best_distance": best_distance,
            "agree": best_score == best_distance}


def validation_trial(seed, system="lorenz", archs=([50], [10, 10]), n_traj=12, n_val=3,
                     n_samples=100, dt=0.01, x0_box=(-10.0, 10.0), epochs=5000, lr=1e-2,
                     n_init=3, T=1.0, lam="balance", k_max=4, m_max=5):
    """Train each architecture on all but ``n_val`` trajectories; compare the
    held-out mean squared error with the encoding score."""
    spec = get_system(system)
    data = make_dataset(spec, n_traj, n_samples, dt, seed, [list(x0_box)] * spec.dim)
    n = data.source_trajectories
    train, val = data.subset(range(n - n_val)), data.subset(range(n - n_val, n))
    cands, val_err = [], {}
    for arch in archs:
        name = f"nn{list(arch)}"
        model = train_mlp(train, arch, epochs=epochs, lr=lr, seed=seed)
        val_err[name] = float(np.mean((model.forward(val.inputs) - val.targets) ** 2))
        cands.append((name, model.as_dynamics(name)))
    box = _data_box(train)
    rng = np.random.default_rng([seed, 1])
    points = list(rng.uniform(box[:, 0], box[:, 1], size=(n_init, spec.dim)))
    ranking = rank_models(cands, points, LicdsParams(T, dt, lam, k_max, m_max))
    best_score = ranking[0][0]
    best_val = min(sorted(val_err), key=val_err.get)
    return {"seed": seed, "ranking": ranking, "validation_error": val_err,
            "best_score": best_score, "best_validation": best_val,
            "agree": best_score == best_val}
