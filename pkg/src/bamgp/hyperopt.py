"""Type-II maximum likelihood for the additive model, and ARD relevance."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import optimize as sopt

from .data import Dataset
from .ep import EPConfig, Hyperparams, fit
from .kernels import LinearKernelParams, SeArdParams

logger = logging.getLogger(__name__)


class HyperoptError(RuntimeError):
    """Every evidence evaluation failed."""

    def __init__(self, message, failures):
        super().__init__(message)
        self.failures = failures


@dataclass(frozen=True)
class OptConfig:
    n_restarts: int = 2
    max_evals: int = 150
    inner_max_iters: int = 60
    damping: float = 0.5
    tol: float = 1e-4
    quad_nodes: int = 20
    penalty: float = 10.0
    restart_scale: float = 0.5
    seed: int = 0

    def to_dict(self):
        return asdict(self)


@dataclass
class OptResult:
    hyperparams: Hyperparams
    log_evidence: float
    init_log_evidence: float
    n_evals: int
    history: list = field(default_factory=list)

    def __iter__(self):
        # unpacks as (hyperparams, log_evidence)
        return iter((self.hyperparams, self.log_evidence))

    def to_dict(self):
        return {"hyperparams": self.hyperparams.to_dict(), "log_evidence": self.log_evidence,
                "init_log_evidence": self.init_log_evidence, "n_evals": self.n_evals}


def _kernel_logs(k):
    if isinstance(k, SeArdParams):
        return [np.log(k.signal_variance)] + list(np.log(k.length_scales))
    if isinstance(k, LinearKernelParams):
        return [np.log(k.weight_variance)] + ([np.log(k.bias_variance)] if k.bias_variance > 0 else [])
    raise TypeError(f"unsupported kernel {type(k).__name__}")


def _kernel_from_logs(template, t):
    t = np.exp(t)
    if isinstance(template, SeArdParams):
        return SeArdParams(t[0], tuple(t[1:]))
    return LinearKernelParams(t[0], t[1] if len(t) > 1 else 0.0)


def pack(hp: Hyperparams) -> np.ndarray:
    """Log-space parameter vector: routine kernel, event kernel, [beta_r, beta_e], v.

    The betas only enter truncated-Gaussian components and are left out of
    the vector for the Poisson likelihood.
    """
    betas = [np.log(hp.beta_r), np.log(hp.beta_e)] if hp.component_likelihood != "poisson" else []
    return np.array(_kernel_logs(hp.routine_kernel) + _kernel_logs(hp.event_kernel)
                    + betas + [np.log(hp.noise_v)])


def unpack(theta, template: Hyperparams) -> Hyperparams:
    nr = len(_kernel_logs(template.routine_kernel))
    ne = len(_kernel_logs(template.event_kernel))
    theta = np.asarray(theta, dtype=float)
    kr = _kernel_from_logs(template.routine_kernel, theta[:nr])
    ke = _kernel_from_logs(template.event_kernel, theta[nr:nr + ne])
    rest = np.exp(theta[nr + ne:])
    if template.component_likelihood == "poisson":
        br, be, v = template.beta_r, template.beta_e, rest[0]
    else:
        br, be, v = rest
    return Hyperparams(kr, ke, br, be, v, template.component_likelihood)


def penalized_evidence(ds: Dataset, hp: Hyperparams, cfg: OptConfig) -> tuple[float, bool]:
    ep_cfg = EPConfig(cfg.damping, cfg.inner_max_iters, cfg.tol, cfg.quad_nodes)
    model = fit(ds, hp, ep_cfg)
    val = model.log_evidence
    if not np.isfinite(val):
        raise FloatingPointError("non-finite evidence")
    return (val if model.converged else val - cfg.penalty), model.converged


def optimize(ds: Dataset, init: Hyperparams, cfg: OptConfig | None = None) -> OptResult:
    """Maximize the (penalized) EP evidence by Nelder-Mead in log space.

    Restart 0 starts at ``init``; later restarts start from seeded Gaussian
    perturbations of it.  A candidate only replaces the incumbent if its
    evidence is strictly higher, so the result is never worse than ``init``.
    """
    cfg = cfg or OptConfig()
    theta0 = pack(init)
    rng = np.random.default_rng(cfg.seed)
    history, failures = [], []

    def objective(theta):
        try:
            hp = unpack(theta, init)
            val, conv = penalized_evidence(ds, hp, cfg)
        except (ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            failures.append((theta.tolist(), repr(exc)))
            return 1e300
        history.append((theta.copy(), val, conv))
        return -val

    f0 = objective(theta0)
    if f0 >= 1e300:
        raise HyperoptError("evidence at the initial hyperparameters could not be evaluated", failures)
    best_theta, best_val = theta0.copy(), -f0
    init_val = best_val

    for r in range(cfg.n_restarts):
        start = theta0 if r == 0 else theta0 + cfg.restart_scale * rng.standard_normal(theta0.size)
        simplex = np.vstack([start] + [start + 0.5 * e for e in np.eye(start.size)])
        res = sopt.minimize(objective, start, method="Nelder-Mead",
                            options={"maxfev": cfg.max_evals, "xatol": 1e-3, "fatol": 1e-3,
                                     "initial_simplex": simplex})
        logger.info("restart %d: %d evaluations, best %.4f", r, res.nfev, -res.fun)
        if np.isfinite(res.fun) and -res.fun > best_val:
            best_theta, best_val = res.x.copy(), -res.fun

    if not history:
        raise HyperoptError("all evidence evaluations failed", failures)
    hp = init if best_val == init_val and np.array_equal(best_theta, theta0) else unpack(best_theta, init)
    return OptResult(hp, float(best_val), float(init_val), len(history) + len(failures), history)


def ard_relevance(hp, feature_names, which: str = "routine") -> list[tuple[str, float]]:
    """Features ranked by length-scale, most relevant (shortest) first.

    ``hp`` may be a :class:`Hyperparams`, an :class:`SeArdParams` or a plain
    sequence of length-scales.  Ties keep the input order.
    """
    if isinstance(hp, Hyperparams):
        hp = hp.routine_kernel if which == "routine" else hp.event_kernel
    ls = hp.length_scales if isinstance(hp, SeArdParams) else tuple(hp)
    names = list(feature_names)
    if len(names) != len(ls):
        raise ValueError(f"{len(names)} names for {len(ls)} length-scales")
    order = sorted(range(len(ls)), key=lambda i: ls[i])
    return [(names[i], float(ls[i])) for i in order]


def relevance_tsv(ranking) -> str:
    lines = ["rank\tfeature\tlength_scale"]
    lines += [f"{i + 1}\t{name}\t{ell:.6g}" for i, (name, ell) in enumerate(ranking)]
    return "\n".join(lines) + "\n"
