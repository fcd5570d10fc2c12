import numpy as np

from config.settings import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, LEARNING_RATE


class Adam:
    """Adam over one flat parameter vector, updated in place.

    A single state covers every parameter of the model, so all experts of a mixture
    share the step counter and are updated together.
    """

    def __init__(self, lr: float = LEARNING_RATE, beta1: float = ADAM_BETA1,
                 beta2: float = ADAM_BETA2, eps: float = ADAM_EPS):
        if lr < 0:
            raise ValueError(f"learning rate must be >= 0, got {lr}")
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m: np.ndarray | None = None
        self.v: np.ndarray | None = None
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> None:
        if params.shape != grad.shape:
            raise ValueError(f"gradient shape {grad.shape} does not match parameters {params.shape}")
        if self.m is None:
            self.m = np.zeros_like(params)
            self.v = np.zeros_like(params)
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t

        self.m *= self.beta1
        self.m += (1.0 - self.beta1) * grad
        self.v *= self.beta2
        self.v += (1.0 - self.beta2) * (grad * grad)

        if self.lr == 0.0:
            return
        params -= (self.lr / bc1) * self.m / (np.sqrt(self.v / bc2) + self.eps)
