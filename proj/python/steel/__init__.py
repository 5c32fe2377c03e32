"""Pessimistic batch policy learning (STEEL) with kernel Bellman-residual
uncertainty sets.

Thin wrappers over the C++ core. Structured results come back as dicts.
"""

import json as _json

from . import _core
from ._core import (
    SteelError,
    default_radii,
    gram,
    krr_predict,
    median_heuristic,
    mmd2,
    rkhs_norm_sq,
    summarize,
)

__all__ = [
    "SteelError",
    "bandit_spec",
    "bandit_steel",
    "config_hash",
    "default_radii",
    "generate_bandit",
    "gram",
    "krr_predict",
    "median_heuristic",
    "mmd2",
    "policy_act",
    "policy_value",
    "rkhs_norm_sq",
    "run_experiment",
    "sample_bandit_states",
    "summarize",
]


def _text(obj):
    return obj if isinstance(obj, str) else _json.dumps(obj)


def bandit_spec(mode="deterministic_target"):
    """Synthetic bandit spec as a dict; edit and pass back to the generators."""
    return _json.loads(_core.standard_bandit_spec(mode))


def generate_bandit(spec, n, seed):
    """Returns (states, actions, rewards) arrays."""
    return _core.generate_bandit(_text(spec), n, seed)


def sample_bandit_states(spec, n, seed):
    return _core.sample_bandit_states(_text(spec), n, seed)


def bandit_steel(states, actions, rewards, init_states, action_lo, action_hi, **options):
    """Fits the pessimistic policy. Options: q_degree, policy_degree, q_clip,
    zeta, eps1, eps2, max_outer_iters, seed."""
    return _json.loads(
        _core.bandit_steel(states, actions, rewards, init_states, action_lo, action_hi, **options)
    )


def policy_act(policy, states):
    return _core.policy_act(_text(policy), states)


def policy_value(spec, policy, states):
    """True mean reward of a policy over the given states: (value, stderr)."""
    return _core.policy_value(_text(spec), _text(policy), states)


def run_experiment(config, workers=1, overwrite=False, quiet=True):
    """Runs a sweep config (dict or JSON text). Returns counts of new,
    skipped and failed cells."""
    added, skipped, failed = _core.run_experiment(_text(config), workers, overwrite, quiet)
    return {"added": added, "skipped": skipped, "failed": failed}


def config_hash(config):
    return _core.config_hash(_text(config))
