from .noah import AllocationTable, NoahScheduler
from .noncoop import NoncoopScheduler, best_reply, equilibrium
from .ow import OwScheduler, build_generators, select_host


def build_scheduler(cfg, cluster, classes, streams, estimates):
    """Instantiate the controller named by ``cfg.name`` and install its invoker policy."""
    if cfg.name == "ow":
        return OwScheduler(cluster, classes, streams, cfg.busy_threshold, cfg.max_multiplier)
    if cfg.name == "noncoop":
        return NoncoopScheduler(cluster, classes, streams, estimates, cfg.epsilon, cfg.max_rounds,
                                cfg.recompute_period, cfg.change_trigger)
    if cfg.name == "noah":
        return NoahScheduler(cluster, classes, streams, estimates, cfg.alpha, cfg.control_period,
                             cfg.c_min, cfg.spawn_slack, cfg.site_cap, cfg.max_active, cfg.placement)
    raise ValueError(f"unknown scheduler {cfg.name!r}")


__all__ = [
    "AllocationTable", "NoahScheduler", "NoncoopScheduler", "OwScheduler",
    "best_reply", "build_generators", "build_scheduler", "equilibrium", "select_host",
]
