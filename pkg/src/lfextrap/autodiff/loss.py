"""Training loss: mean absolute error plus weighted image-gradient error."""

from .tensor import as_tensor

DEFAULT_GRADIENT_WEIGHT = 2.0


def loss_l1_grad(pred, gt, gamma=DEFAULT_GRADIENT_WEIGHT):
    """``mean|gt - pred| + gamma * mean|grad(gt) - grad(pred)|``.

    Axes 1 and 2 are image rows (y) and columns (x); any trailing axes
    (e.g. several predicted views) are averaged over as well. The gradient
    is a forward difference, and its term is the average of the x and y
    component means.
    """
    pred = as_tensor(pred)
    gt = as_tensor(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"loss: prediction {pred.shape} and target {gt.shape} differ")
    if pred.ndim < 3:
        raise ValueError("loss expects [N, H, W, ...] inputs")
    diff = pred - gt
    data_term = diff.abs().mean()
    if gamma == 0:
        return data_term
    gx = diff[:, :, 1:] - diff[:, :, :-1]
    gy = diff[:, 1:] - diff[:, :-1]
    grad_term = (gx.abs().mean() + gy.abs().mean()) * 0.5
    return data_term + grad_term * float(gamma)



