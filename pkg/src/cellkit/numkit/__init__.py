from . import tensor
from .checkpoint import load_params, save_params
from .gradcheck import check_gradients, resolution_floor, numeric_grad, relative_error
from .nn import MlpSpec, ParamStore, backward, init_mlp, mlp_forward
from .optim import AdamState, adam_step
from .rng import RngStream, rng_stream
from .tensor import Tensor
