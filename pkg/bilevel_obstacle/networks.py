from __future__ import annotations

import dataclasses
import logging
from typing import TYPE_CHECKING, Any, List, Optional, Tuple, Union

import numpy as np

from .autodiff import SpatialJet, Tensor, as_tensor
from .errors import ContractError, InputError

if TYPE_CHECKING:
    from typing_extensions import TypeAlias

    from ._types import FloatArray


__all__ = (
    'ACTIVATIONS',
    'STATE_EMBEDDINGS',
    'CONTROL_EMBEDDINGS',
    'NetworkSpec',
    'init_xavier',
    'check_params',
    'forward_jet',
    'eval_with_spatial_jet',
    'raw_forward',
    'state_square',
    'state_relu',
    'state_below_obstacle',
    'control_clamp',
    'obstacle_raw',
    'apply_state_embedding',
    'apply_control_embedding',
    'embed_state',
    'embed_control',
    'embed_obstacle_control',
)

_log = logging.getLogger(__name__)

Field: TypeAlias = Union[SpatialJet, Tensor]

ACTIVATIONS = ('swish', 'tanh', 'softplus', 'relu')
STATE_EMBEDDINGS = ('state_square', 'state_relu', 'state_below_obstacle')
CONTROL_EMBEDDINGS = ('control_raw', 'control_clamp', 'obstacle_raw')


@dataclasses.dataclass(frozen=True)
class NetworkSpec:
    """
    Architecture of a residual network ``R^d -> R``.

    The input is lifted to ``width`` features by an affine map, passed through ``blocks``
    residual blocks ``h + act(act(h W1 + b1) W2 + b2)`` and read out by an affine map to one
    output. Parameters are stored in one flat vector, layer by layer, each layer as its
    row-major ``(fan_in, fan_out)`` weight followed by its bias.

    Attributes
    ----------
    input_dim: :class:`int`
        Spatial dimension ``d``.
    blocks: :class:`int`
        Number of residual blocks.
    width: :class:`int`
        Hidden width.
    activation: :class:`str`
        One of ``swish``, ``tanh``, ``softplus``, ``relu``.
    embedding: :class:`str`
        How the raw output becomes a state or control, see :func:`apply_state_embedding`
        and :func:`apply_control_embedding`.
    seed: :class:`int`
        Seed of the Xavier initialisation.
    """

    input_dim: int = 2
    blocks: int = 3
    width: int = 16
    activation: str = 'swish'
    embedding: str = 'control_raw'
    seed: int = 0

    def __post_init__(self) -> None:
        if self.input_dim < 1 or self.width < 1 or self.blocks < 0:
            raise InputError(
                f'Invalid network size: input_dim={self.input_dim}, width={self.width}, blocks={self.blocks}'
            )
        if self.activation not in ACTIVATIONS:
            raise InputError(f'Unknown activation {self.activation!r}, expected one of {ACTIVATIONS}')
        if self.embedding not in STATE_EMBEDDINGS + CONTROL_EMBEDDINGS:
            raise InputError(f'Unknown embedding {self.embedding!r}')

    @property
    def layers(self) -> List[Tuple[int, int]]:
        hidden = [(self.width, self.width)] * (2 * self.blocks)
        return [(self.input_dim, self.width), *hidden, (self.width, 1)]

    @property
    def num_params(self) -> int:
        return sum(fan_in * fan_out + fan_out for fan_in, fan_out in self.layers)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> NetworkSpec:
        return cls(**data)


def init_xavier(spec: NetworkSpec) -> FloatArray:
    """
    Xavier-uniform weights and zero biases, drawn from ``spec.seed``.

    Each weight is uniform on ``[-b, b]`` with ``b = sqrt(6 / (fan_in + fan_out))``.
    """
    rng = np.random.default_rng(spec.seed)
    chunks = []
    for fan_in, fan_out in spec.layers:
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
        chunks.append(np.zeros(fan_out))
    theta = np.concatenate(chunks)
    _log.debug('initialised %d parameters from seed %d', theta.size, spec.seed)
    return theta


def check_params(spec: NetworkSpec, theta: Any) -> None:
    size = theta.shape[0] if theta.ndim == 1 else -1
    if size != spec.num_params:
        raise InputError(
            f'Expected a flat parameter vector of length {spec.num_params}, got shape {theta.shape}'
        )


def _unpack(spec: NetworkSpec, theta: Tensor) -> List[Tuple[Tensor, Tensor]]:
    params = []
    offset = 0
    for fan_in, fan_out in spec.layers:
        weight = theta[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = theta[offset : offset + fan_out]
        offset += fan_out
        params.append((weight, bias))
    return params


def _activate(spec: NetworkSpec, jet: SpatialJet) -> SpatialJet:
    return getattr(jet, spec.activation)()


def forward_jet(spec: NetworkSpec, theta: Tensor, inputs: SpatialJet) -> SpatialJet:
    """Push an input jet of shape ``(m, d)`` through the network; returns a scalar field jet ``(m,)``."""
    check_params(spec, theta.data)
    params = _unpack(spec, theta)

    weight, bias = params[0]
    hidden = inputs.affine(weight, bias)
    for block in range(spec.blocks):
        (w1, b1), (w2, b2) = params[1 + 2 * block], params[2 + 2 * block]
        hidden = hidden + _activate(spec, _activate(spec, hidden.affine(w1, b1)).affine(w2, b2))

    weight, bias = params[-1]
    return hidden.affine(weight, bias)[..., 0]


def eval_with_spatial_jet(spec: NetworkSpec, theta: Any, x: Any, order: int = 1) -> SpatialJet:
    """
    Evaluate the network and its spatial derivatives up to ``order`` at ``x``.

    Parameters
    ----------
    spec: :class:`NetworkSpec`
        The architecture.
    theta: Union[:class:`numpy.ndarray`, :class:`Tensor`]
        Flat parameters. Pass a :class:`Tensor` leaf to differentiate through the jet.
    x: :class:`numpy.ndarray`
        A point ``(d,)`` or a batch ``(m, d)``.
    order: :class:`int`
        0, 1 or 2.

    Raises
    ------
    InputError
        ``x`` does not have ``spec.input_dim`` coordinates or ``theta`` has the wrong length.
    """
    points = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if points.shape[-1] != spec.input_dim:
        raise InputError(f'Expected points with {spec.input_dim} coordinates, got shape {np.shape(x)}')
    return forward_jet(spec, as_tensor(theta), SpatialJet.inputs(points, order))


def raw_forward(spec: NetworkSpec, theta: Any, x: Any) -> FloatArray:
    """Raw network output at ``x`` without embedding."""
    return eval_with_spatial_jet(spec, theta, x, order=0).value.data


# embeddings, valid for both jets and plain tensors


def _lift(value: Any) -> Field:
    return value if isinstance(value, SpatialJet) else as_tensor(value)


def state_square(raw: Any, psi: Any, mask: Any) -> Field:
    """``m * N^2 + psi``: at least ``psi`` everywhere, equal to it where ``m`` vanishes."""
    raw = _lift(raw)
    return mask * raw.square() + psi


def state_relu(raw: Any, psi: Any, mask: Any) -> Field:
    """``ReLU(N * m - psi) + psi``."""
    raw = _lift(raw)
    return (raw * mask - psi).relu() + psi


def state_below_obstacle(raw: Any, psi_hat: Any, mask: Any) -> Field:
    """``-ReLU(psi_hat - m * N) + psi_hat``: at most the obstacle ``psi_hat``."""
    raw = _lift(raw)
    return -((psi_hat - raw * mask).relu()) + psi_hat


def control_clamp(raw: Any, lower: float, upper: float) -> Field:
    """``-ReLU(u_b - (ReLU(N - u_a) + u_a)) + u_b``: the raw output clamped to ``[u_a, u_b]``."""
    if lower > upper:
        raise InputError(f'Empty control box: lower bound {lower} exceeds upper bound {upper}')
    raw = _lift(raw)
    inner = (raw - lower).relu() + lower
    return -((upper - inner).relu()) + upper


def obstacle_raw(raw: Any, mask: Any) -> Field:
    """``m * N``: an obstacle vanishing on the boundary."""
    return _lift(raw) * mask


def apply_state_embedding(kind: str, raw: Field, psi: Any, mask: Any) -> Field:
    if kind == 'state_square':
        return state_square(raw, psi, mask)
    if kind == 'state_relu':
        return state_relu(raw, psi, mask)
    if kind == 'state_below_obstacle':
        return state_below_obstacle(raw, psi, mask)
    raise InputError(f'{kind!r} is not a state embedding')


def apply_control_embedding(
    kind: str, raw: Field, *, bounds: Optional[Tuple[float, float]] = None, mask: Any = None
) -> Field:
    if kind == 'control_raw':
        return raw
    if kind == 'control_clamp':
        if bounds is None:
            raise ContractError('control_clamp needs control bounds')
        return control_clamp(raw, *bounds)
    if kind == 'obstacle_raw':
        if mask is None:
            raise ContractError('obstacle_raw needs a boundary mask')
        return obstacle_raw(raw, mask)
    raise InputError(f'{kind!r} is not a control embedding')


def embed_state(spec: NetworkSpec, theta_y: Any, x: Any, psi: Any, mask: Any) -> FloatArray:
    """Embedded state values at ``x`` given obstacle and mask values there."""
    raw = eval_with_spatial_jet(spec, theta_y, x, order=0).value
    return apply_state_embedding(spec.embedding, raw, as_tensor(psi), as_tensor(mask)).data


def embed_control(
    spec: NetworkSpec, theta_u: Any, x: Any, lower: Optional[float] = None, upper: Optional[float] = None
) -> FloatArray:
    """Embedded control values at ``x``. The bounds are only read by ``control_clamp``."""
    raw = eval_with_spatial_jet(spec, theta_u, x, order=0).value
    bounds = None if lower is None or upper is None else (lower, upper)
    return apply_control_embedding(spec.embedding, raw, bounds=bounds).data


def embed_obstacle_control(
    spec_psi: NetworkSpec, theta_psi: Any, spec_y: NetworkSpec, theta_y: Any, x: Any, mask: Any
) -> Tuple[FloatArray, FloatArray]:
    """
    Obstacle and state values when the obstacle itself is the control.

    Returns ``(psi_hat, y_hat)`` with ``psi_hat = m * N_psi`` and
    ``y_hat = -ReLU(psi_hat - m * N_y) + psi_hat``, so ``y_hat <= psi_hat`` and both
    vanish where ``m`` does.
    """
    mask = as_tensor(mask)
    psi_hat = obstacle_raw(eval_with_spatial_jet(spec_psi, theta_psi, x, order=0).value, mask)
    y_hat = state_below_obstacle(eval_with_spatial_jet(spec_y, theta_y, x, order=0).value, psi_hat, mask)
    return psi_hat.data, y_hat.data
