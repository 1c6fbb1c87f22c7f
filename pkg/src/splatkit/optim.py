"""Adam over the scene's parameter groups, learning-rate schedules, and lazy SH updates."""
import numpy as np

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-15

GROUPS = ("mu", "sh_dc", "sh_rest", "opacity_logit", "log_scale", "rot")


def expon_lr(step, lr_init, lr_final, max_steps):
    """Log-linear interpolation from ``lr_init`` to ``lr_final`` over ``max_steps``."""
    if max_steps <= 0:
        return lr_init
    t = np.clip(step / max_steps, 0.0, 1.0)
    return float(np.exp(np.log(lr_init) * (1 - t) + np.log(lr_final) * t))


def adam_step(param, grad, state, lr):
    """One in-place Adam update of ``param``; ``state`` holds ``m``, ``v`` and step ``t``."""
    state["t"] += 1
    t = state["t"]
    m, v = state["m"], state["v"]
    m *= BETA1
    m += (1 - BETA1) * grad
    v *= BETA2
    v += (1 - BETA2) * grad * grad
    m_hat = m / (1 - BETA1 ** t)
    v_hat = v / (1 - BETA2 ** t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + EPS)).astype(param.dtype)


def _group_view(arrays, group):
    if group == "sh_dc":
        return arrays["sh"][:, :1, :]
    if group == "sh_rest":
        return arrays["sh"][:, 1:, :]
    return arrays[group]


class Adam:
    """Per-group Adam state bound to a :class:`~splatkit.scene.Scene`.

    ``lazy_interval`` (a callable iteration -> int or None) throttles the SH-rest group:
    when it returns N, gradients for that group accumulate and are applied every N steps.
    """

    def __init__(self, scene, lazy_interval=None):
        self.state = {}
        self.lazy_interval = lazy_interval
        self._pending = None
        self.reset(scene)

    def reset(self, scene):
        params = scene.params()
        for g in GROUPS:
            p = _group_view(params, g)
            self.state[g] = {"m": np.zeros(p.shape, dtype=np.float64),
                             "v": np.zeros(p.shape, dtype=np.float64), "t": 0}
        self._pending = None

    def step(self, scene, grads, lrs, iteration):
        params = scene.params()
        for g in GROUPS:
            p = _group_view(params, g)
            if p.size == 0:
                continue
            grad = _group_view(grads, g)
            if g == "sh_rest" and self.lazy_interval is not None:
                every = self.lazy_interval(iteration)
                if every:
                    self._pending = grad.copy() if self._pending is None else self._pending + grad
                    if iteration % every != 0:
                        continue
                    grad, self._pending = self._pending, None
            adam_step(p, grad, self.state[g], lrs[g])

    def remap(self, origin, keep_mask=None):
        """Follow a densify (``origin`` = source row per new row, -1 for fresh) or a prune."""
        for st in self.state.values():
            for key in ("m", "v"):
                arr = st[key]
                if keep_mask is not None:
                    st[key] = arr[keep_mask]
                else:
                    new = np.zeros((origin.shape[0],) + arr.shape[1:], dtype=arr.dtype)
                    src = origin >= 0
                    new[src] = arr[origin[src]]
                    st[key] = new
        self._pending = None

    def zero_rows(self, group, rows):
        for key in ("m", "v"):
            self.state[group][key][rows] = 0.0
