from .checkpoint import checkpoint_hash, load_model, save_model  # noqa: F401
from .optim import DEFAULT_LR, OptimizerState, adam_step  # noqa: F401
from .unet import NULL_TOKEN, ArchDescriptor, Denoiser, UNet  # noqa: F401
